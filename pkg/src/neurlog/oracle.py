"""Brute-force reference implementation: enumerate all possible worlds of a
ground program, close each one under the rules, and sum world weights.

This is deliberately independent of the circuit pipeline: truth values come
from a stratified fixpoint over the ground rules (evaluated in dependency
order), not from SLD proofs or circuit evaluation, so agreement between the
two paths is a meaningful cross-check.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

from .grounder import (
    CyclicGroundProgram,
    GroundProgram,
    NeuralFactLabel,
    NeuralHeadLabel,
    canonical_key,
)
from .terms import Atom, Fixed, Learnable, NeurlogError, Term, print_atom

NONE = -1


class TooManyWorlds(NeurlogError):
    pass


def _label_value(label, param_fn, neural_fn) -> float:
    if isinstance(label, Fixed):
        return label.p
    if isinstance(label, Learnable):
        return param_fn(label.slot) if param_fn else label.init
    if isinstance(label, NeuralFactLabel):
        return float(neural_fn(label.model, label.inputs)[0])
    if isinstance(label, NeuralHeadLabel):
        return float(neural_fn(label.model, label.inputs)[label.index])
    raise NeurlogError(f"unknown label {label!r}")


def _choice_alts(gp: GroundProgram, param_fn, neural_fn, overrides) -> list[list[tuple[int, float]]]:
    """Weighted alternatives per choice: [(value, p), ...] per fact and AD;
    the AD none-branch carries whatever mass the (overridden) heads leave."""
    alts: list[list[tuple[int, float]]] = []
    for i, fact in enumerate(gp.facts):
        p = _label_value(fact.label, param_fn, neural_fn)
        if overrides and ("fact", i, 0) in overrides:
            p = overrides[("fact", i, 0)]
        alts.append([(1, p), (0, 1.0 - p)])
    for i, ad in enumerate(gp.ads):
        row = []
        total = 0.0
        for pos, head in enumerate(ad.heads):
            p = _label_value(head.label, param_fn, neural_fn)
            if overrides and ("ad", i, pos) in overrides:
                p = overrides[("ad", i, pos)]
            row.append((pos, p))
            total += p
        row.append((NONE, 1.0 - total))
        alts.append(row)
    return alts


class _WorldModel:
    """Static structure shared by all worlds of one ground program."""

    def __init__(self, gp: GroundProgram, param_fn, neural_fn, overrides):
        self.gp = gp
        # Choice list: one entry per fact (two alternatives) and per AD
        # instance (one alternative per head plus the implicit none).
        all_alts = _choice_alts(gp, param_fn, neural_fn, overrides)
        self.choices: list[dict] = []
        for i, fact in enumerate(gp.facts):
            self.choices.append(
                {
                    "alts": all_alts[i],
                    "head_keys": {1: canonical_key(fact.atom)},
                    "guarded": False,
                }
            )
        for i, ad in enumerate(gp.ads):
            head_keys = {pos: canonical_key(head.atom) for pos, head in enumerate(ad.heads)}
            guarded = ad.bodies != ((),)
            self.choices.append(
                {
                    "alts": all_alts[len(gp.facts) + i],
                    "head_keys": head_keys,
                    "guarded": guarded,
                    "bodies": ad.bodies,
                }
            )

        self.rules: dict[tuple, list] = {}
        atom_of: dict[tuple, Atom] = {}
        for head, body in gp.rules:
            key = canonical_key(head)
            self.rules.setdefault(key, []).append(body)
            atom_of[key] = head
        # Guarded AD heads participate in the dependency order like rules.
        self.guards: dict[tuple, list] = {}
        for c in self.choices:
            if c.get("guarded"):
                for pos, key in c["head_keys"].items():
                    self.guards.setdefault(key, []).append(c["bodies"])
                    atom_of.setdefault(key, self.gp.ads[0].heads[0].atom)

        self.order = self._dependency_order(atom_of)
        # Literal keys precomputed once; world closure only does set lookups.
        self.keyed_rules: dict[tuple, list[list[tuple[tuple, bool]]]] = {
            key: [[(canonical_key(l.atom), l.positive) for l in body] for body in bodies]
            for key, bodies in self.rules.items()
        }
        self.keyed_guards: dict[tuple, list] = {
            key: [
                [[(canonical_key(l.atom), l.positive) for l in body] for body in bodies]
                for bodies in guard_list
            ]
            for key, guard_list in self.guards.items()
        }
        for c in self.choices:
            if c.get("guarded"):
                c["keyed_bodies"] = [
                    [(canonical_key(l.atom), l.positive) for l in body] for body in c["bodies"]
                ]

    def _dependency_order(self, atom_of: dict[tuple, Atom]) -> list[tuple]:
        order: list[tuple] = []
        state: dict[tuple, int] = {}
        defined = set(self.rules) | set(self.guards)

        def visit(key: tuple) -> None:
            if state.get(key) == 2:
                return
            if state.get(key) == 1:
                raise CyclicGroundProgram(f"cycle through {print_atom(atom_of[key])}")
            state[key] = 1
            for body in self.rules.get(key, ()):
                for lit in body:
                    lkey = canonical_key(lit.atom)
                    if lkey in defined:
                        visit(lkey)
            for bodies in self.guards.get(key, ()):
                for body in bodies:
                    for lit in body:
                        lkey = canonical_key(lit.atom)
                        if lkey in defined:
                            visit(lkey)
            state[key] = 2
            order.append(key)

        for key in list(defined):
            visit(key)
        return order

    def world_count(self) -> int:
        total = 1
        for c in self.choices:
            total *= len(c["alts"])
        return total

    def close(self, assignment: tuple) -> tuple[frozenset, float]:
        weight = 1.0
        base: set[tuple] = set()
        guarded_selected: dict[tuple, list] = {}
        for c, (value, p) in zip(self.choices, assignment):
            weight *= p
            if value == NONE:
                continue
            key = c["head_keys"].get(value)
            if key is None:  # boolean fact chosen false
                continue
            if c.get("guarded"):
                guarded_selected.setdefault(key, []).append(c["keyed_bodies"])
            else:
                base.add(key)
        truth = set(base)
        for key in self.order:
            if key in truth:
                continue
            val = False
            for bodies in guarded_selected.get(key, ()):
                if any(all((k in truth) == pos for k, pos in body) for body in bodies):
                    val = True
                    break
            if not val:
                for body in self.keyed_rules.get(key, ()):
                    if all((k in truth) == pos for k, pos in body):
                        val = True
                        break
            if val:
                truth.add(key)
        return frozenset(truth), weight


def enumerate_worlds(
    gp: GroundProgram,
    param_fn: Optional[Callable[[int], float]] = None,
    neural_fn: Optional[Callable[[str, tuple[Term, ...]], Sequence[float]]] = None,
    limit: int = 2**20,
    overrides: Optional[dict[tuple[str, int, int], float]] = None,
):
    """Yield (true_atom_keys, weight) for every possible world."""
    model = _WorldModel(gp, param_fn, neural_fn, overrides)
    if model.world_count() > limit:
        raise TooManyWorlds(f"{model.world_count()} worlds exceed the enumeration limit {limit}")
    for assignment in itertools.product(*(c["alts"] for c in model.choices)):
        yield model.close(assignment)


class WorldTable:
    """Worlds closed once, reweighable under label overrides.

    The truth of each world does not depend on the label values, so finite
    differences over many parameter slots can share one enumeration pass and
    recompute only the world weights.
    """

    def __init__(
        self,
        gp: GroundProgram,
        queries: Sequence[Atom],
        param_fn: Optional[Callable[[int], float]] = None,
        neural_fn: Optional[Callable[[str, tuple[Term, ...]], Sequence[float]]] = None,
        limit: int = 2**20,
    ):
        self.gp = gp
        self.param_fn = param_fn
        self.neural_fn = neural_fn
        self.model = _WorldModel(gp, param_fn, neural_fn, None)
        if self.model.world_count() > limit:
            raise TooManyWorlds(
                f"{self.model.world_count()} worlds exceed the enumeration limit {limit}"
            )
        qkeys = [canonical_key(q) for q in queries]
        self.rows: list[tuple[tuple[int, ...], tuple[bool, ...]]] = []
        ranges = [range(len(c["alts"])) for c in self.model.choices]
        for index in itertools.product(*ranges):
            assignment = tuple(c["alts"][i] for c, i in zip(self.model.choices, index))
            truth, _ = self.model.close(assignment)
            self.rows.append((index, tuple(k in truth for k in qkeys)))

    def probability(
        self, query_index: int = 0, overrides: Optional[dict[tuple[str, int, int], float]] = None
    ) -> float:
        alts = _choice_alts(self.gp, self.param_fn, self.neural_fn, overrides)
        total = 0.0
        for index, flags in self.rows:
            if not flags[query_index]:
                continue
            weight = 1.0
            for row, i in zip(alts, index):
                weight *= row[i][1]
            total += weight
        return total

    def gradient(self, query_index: int, slot_key: tuple, h: float = 1e-6) -> float:
        points = slot_override_points(self.gp, slot_key)
        if not points:
            return 0.0
        current: dict[tuple[str, int, int], float] = {}
        for kind, i, pos in points:
            if kind == "fact":
                current[(kind, i, pos)] = _label_value(
                    self.gp.facts[i].label, self.param_fn, self.neural_fn
                )
            else:
                current[(kind, i, pos)] = _label_value(
                    self.gp.ads[i].heads[pos].label, self.param_fn, self.neural_fn
                )
        plus = self.probability(query_index, {k: v + h for k, v in current.items()})
        minus = self.probability(query_index, {k: v - h for k, v in current.items()})
        return (plus - minus) / (2.0 * h)


def enumerate_probability(
    gp: GroundProgram,
    query: Atom,
    param_fn: Optional[Callable[[int], float]] = None,
    neural_fn: Optional[Callable[[str, tuple[Term, ...]], Sequence[float]]] = None,
    limit: int = 2**20,
    negated: bool = False,
    overrides: Optional[dict[tuple[str, int, int], float]] = None,
) -> float:
    """Exact P(query) by world enumeration."""
    qkey = canonical_key(query)
    total = 0.0
    for truth, weight in enumerate_worlds(gp, param_fn, neural_fn, limit, overrides):
        if (qkey in truth) != negated:
            total += weight
    return total


def slot_override_points(gp: GroundProgram, slot_key: tuple) -> list[tuple[str, int, int]]:
    """All (kind, index, position) label cells fed by one parameter slot."""
    points = []
    for i, fact in enumerate(gp.facts):
        if _slot_of_label(fact.label) == slot_key:
            points.append(("fact", i, 0))
    for i, ad in enumerate(gp.ads):
        for pos, head in enumerate(ad.heads):
            if _slot_of_label(head.label) == slot_key:
                points.append(("ad", i, pos))
    return points


def _slot_of_label(label) -> Optional[tuple]:
    if isinstance(label, Learnable):
        return ("p", label.slot)
    if isinstance(label, NeuralHeadLabel):
        return ("nn", label.model, tuple(canonical_key(t) for t in label.inputs), label.index)
    if isinstance(label, NeuralFactLabel):
        return ("nn", label.model, tuple(canonical_key(t) for t in label.inputs), 0)
    return None


def enumerate_gradient(
    gp: GroundProgram,
    query: Atom,
    slot_key: tuple,
    param_fn: Optional[Callable[[int], float]] = None,
    neural_fn: Optional[Callable[[str, tuple[Term, ...]], Sequence[float]]] = None,
    h: float = 1e-6,
    limit: int = 2**20,
    negated: bool = False,
) -> float:
    """Central finite difference of the enumeration probability in one slot."""
    points = slot_override_points(gp, slot_key)
    if not points:
        return 0.0
    current: dict[tuple[str, int, int], float] = {}
    for kind, i, pos in points:
        if kind == "fact":
            current[(kind, i, pos)] = _label_value(gp.facts[i].label, param_fn, neural_fn)
        else:
            current[(kind, i, pos)] = _label_value(gp.ads[i].heads[pos].label, param_fn, neural_fn)
    plus = {k: v + h for k, v in current.items()}
    minus = {k: v - h for k, v in current.items()}
    p_plus = enumerate_probability(gp, query, param_fn, neural_fn, limit, negated, plus)
    p_minus = enumerate_probability(gp, query, param_fn, neural_fn, limit, negated, minus)
    return (p_plus - p_minus) / (2.0 * h)
