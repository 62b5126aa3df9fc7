"""Completion and knowledge compilation.

The ground program is first rewritten into a propositional definition of the
query: every derived atom becomes an iff-disjunction of its rule bodies, with
probabilistic facts, neural facts and AD heads as the underlying choice
variables (an AD instance is one multi-valued variable; the implicit "none"
value carries whatever probability mass the recorded heads leave over).

The definition is then compiled top-down by multi-valued Shannon expansion
over the choice variables, most-occurring variable first, with a unique table
keyed by the residual formula.  Decision nodes branch on one variable each,
so the result is deterministic and decomposable by construction and can be
evaluated in a single bottom-up pass under any commutative semiring.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Optional, Union

from .grounder import (
    CyclicGroundProgram,
    GroundAD,
    GroundFact,
    GroundOptions,
    GroundProgram,
    canonical_key,
    ground_query,
)
from .terms import Atom, Literal, NeurlogError, Program, print_atom

sys.setrecursionlimit(max(sys.getrecursionlimit(), 20_000))

TRUE = 0
FALSE = 1

NONE_VALUE = -1  # the implicit "none of the heads" branch of an AD variable


class CompileError(NeurlogError):
    pass


class BlowupLimit(CompileError):
    pass


@dataclass(frozen=True)
class CircuitVar:
    """One random choice: a boolean fact or a multi-valued AD instance."""

    index: int
    kind: str  # 'bool' | 'multi'
    payload: Union[GroundFact, GroundAD]

    @property
    def values(self) -> list[int]:
        if self.kind == "bool":
            return [0, 1]  # false, true
        return list(range(len(self.payload.heads))) + [NONE_VALUE]

    def describe(self, value: int) -> str:
        if self.kind == "bool":
            name = print_atom(self.payload.atom)
            return name if value == 1 else f"\\+{name}"
        if value == NONE_VALUE:
            return f"none({print_atom(self.payload.heads[0].atom)},...)"
        return print_atom(self.payload.heads[value].atom)


class Formula:
    """Hash-consed boolean expressions over choice-variable literals."""

    def __init__(self) -> None:
        self.kinds: list[str] = ["true", "false"]
        self.data: list[tuple] = [(), ()]
        self.support: list[frozenset[int]] = [frozenset(), frozenset()]
        self._intern: dict[tuple, int] = {}
        self.vars: list[CircuitVar] = []
        self.definitions: dict[Atom, int] = {}
        self.lit_count: dict[int, int] = {}

    def _mk(self, kind: str, data: tuple, support: frozenset[int]) -> int:
        key = (kind, data)
        found = self._intern.get(key)
        if found is not None:
            return found
        idx = len(self.kinds)
        self.kinds.append(kind)
        self.data.append(data)
        self.support.append(support)
        self._intern[key] = idx
        return idx

    def lit(self, var: int, value: int) -> int:
        node = self._mk("lit", (var, value), frozenset((var,)))
        self.lit_count[var] = self.lit_count.get(var, 0) + 1
        return node

    def neg(self, e: int) -> int:
        if e == TRUE:
            return FALSE
        if e == FALSE:
            return TRUE
        if self.kinds[e] == "not":
            return self.data[e][0]
        return self._mk("not", (e,), self.support[e])

    def conj(self, children: list[int]) -> int:
        flat: list[int] = []
        for c in children:
            if c == FALSE:
                return FALSE
            if c == TRUE:
                continue
            if self.kinds[c] == "and":
                flat.extend(self.data[c])
            else:
                flat.append(c)
        flat = sorted(set(flat))
        if not flat:
            return TRUE
        if len(flat) == 1:
            return flat[0]
        if self._contradictory(flat):
            return FALSE
        support = frozenset().union(*(self.support[c] for c in flat))
        return self._mk("and", tuple(flat), support)

    def disj(self, children: list[int]) -> int:
        flat: list[int] = []
        for c in children:
            if c == TRUE:
                return TRUE
            if c == FALSE:
                continue
            if self.kinds[c] == "or":
                flat.extend(self.data[c])
            else:
                flat.append(c)
        flat = sorted(set(flat))
        if not flat:
            return FALSE
        if len(flat) == 1:
            return flat[0]
        if self._complementary(flat):
            return TRUE
        support = frozenset().union(*(self.support[c] for c in flat))
        return self._mk("or", tuple(flat), support)

    def _contradictory(self, children: list[int]) -> bool:
        seen: dict[int, int] = {}
        ids = set(children)
        for c in children:
            if self.kinds[c] == "not" and self.data[c][0] in ids:
                return True
            if self.kinds[c] == "lit":
                var, value = self.data[c]
                if var in seen and seen[var] != value:
                    return True
                seen[var] = value
        return False

    def _complementary(self, children: list[int]) -> bool:
        ids = set(children)
        return any(self.kinds[c] == "not" and self.data[c][0] in ids for c in children)


def complete(gp: GroundProgram) -> Formula:
    """Clark-style completion of an acyclic ground program.

    Returns a Formula whose ``definitions`` map each requested atom (and every
    derived atom reachable from it) to its defining expression.
    """
    f = Formula()

    # Choice variables and per-atom choice contributions.
    contribs: dict[tuple, list] = {}
    for fact in gp.facts:
        var = CircuitVar(len(f.vars), "bool", fact)
        f.vars.append(var)
        contribs.setdefault(canonical_key(fact.atom), []).append(("bool", var.index))
    for ad in gp.ads:
        var = CircuitVar(len(f.vars), "multi", ad)
        f.vars.append(var)
        for pos, head in enumerate(ad.heads):
            contribs.setdefault(canonical_key(head.atom), []).append(
                ("multi", var.index, pos, ad.bodies)
            )

    rules_by_head: dict[tuple, list] = {}
    atom_by_key: dict[tuple, Atom] = {}
    for head, body in gp.rules:
        rules_by_head.setdefault(canonical_key(head), []).append(body)
        atom_by_key[canonical_key(head), True] = head

    memo: dict[tuple, int] = {}
    visiting: list[tuple] = []
    on_stack: set[tuple] = set()

    def define(atom: Atom) -> int:
        key = canonical_key(atom)
        if key in memo:
            return memo[key]
        if key in on_stack:
            raise CyclicGroundProgram(
                f"cyclic completion through {print_atom(atom)}"
            )
        on_stack.add(key)
        visiting.append(key)
        parts: list[int] = []
        for c in contribs.get(key, ()):
            if c[0] == "bool":
                parts.append(f.lit(c[1], 1))
            else:
                _, var, pos, bodies = c
                sel = f.lit(var, pos)
                for body in bodies:
                    if body:
                        parts.append(f.conj([sel] + [body_lit(l) for l in body]))
                    else:
                        parts.append(sel)
        for body in rules_by_head.get(key, ()):
            parts.append(f.conj([body_lit(l) for l in body]))
        node = f.disj(parts)
        on_stack.discard(key)
        visiting.pop()
        memo[key] = node
        return node

    def body_lit(lit) -> int:
        node = define(lit.atom)
        return node if lit.positive else f.neg(node)

    for q in gp.queries:
        f.definitions[q] = define(q)
    return f


# --- circuits -------------------------------------------------------------------


class Circuit:
    """Decision circuit with shared nodes; ids 0/1 are the true/false leaves."""

    def __init__(self, variables: list[CircuitVar]):
        self.kinds: list[str] = ["T", "F"]
        self.payload: list[tuple] = [(), ()]
        self.vars = variables
        self.root = FALSE
        self._unique: dict[tuple, int] = {}

    def __len__(self) -> int:
        return len(self.kinds)

    def _mk(self, kind: str, payload: tuple) -> int:
        key = (kind, payload)
        found = self._unique.get(key)
        if found is not None:
            return found
        idx = len(self.kinds)
        self.kinds.append(kind)
        self.payload.append(payload)
        self._unique[key] = idx
        return idx

    def decision(self, var: int, children: tuple[int, ...]) -> int:
        first = children[0]
        if all(c == first for c in children):
            return first  # branch labels sum to one, so the split is redundant
        return self._mk("dec", (var, children))

    def sum(self, children: tuple[int, ...]) -> int:
        return self._mk("sum", (children,))

    def product(self, children: tuple[int, ...]) -> int:
        return self._mk("prod", (children,))

    def leaf(self, var: int, value: int) -> int:
        return self._mk("leaf", (var, value))

    def var_support(self, node: int, memo: Optional[dict[int, frozenset]] = None) -> frozenset[int]:
        if memo is None:
            memo = {}
        if node in memo:
            return memo[node]
        kind = self.kinds[node]
        if kind in ("T", "F"):
            out: frozenset[int] = frozenset()
        elif kind == "leaf":
            out = frozenset((self.payload[node][0],))
        elif kind == "dec":
            var, children = self.payload[node]
            out = frozenset((var,)).union(*(self.var_support(c, memo) for c in children))
        else:
            (children,) = self.payload[node]
            out = frozenset().union(*(self.var_support(c, memo) for c in children))
        memo[node] = out
        return out

    def check_structure(self) -> None:
        """Debug validation: decisions never repeat a variable on a path and
        products are decomposable (disjoint variable supports)."""
        memo: dict[int, frozenset] = {}
        for node in range(len(self.kinds)):
            kind = self.kinds[node]
            if kind == "dec":
                var, children = self.payload[node]
                for c in children:
                    if var in self.var_support(c, memo):
                        raise CompileError(f"variable {var} repeated below its decision node")
            elif kind == "prod":
                (children,) = self.payload[node]
                seen: set[int] = set()
                for c in children:
                    sup = self.var_support(c, memo)
                    if seen & sup:
                        raise CompileError("product children share variables")
                    seen |= sup

    def dump(self) -> str:
        lines = []
        for i in range(len(self.kinds)):
            kind = self.kinds[i]
            if kind == "T":
                lines.append(f"n{i}: true")
            elif kind == "F":
                lines.append(f"n{i}: false")
            elif kind == "leaf":
                var, value = self.payload[i]
                lines.append(f"n{i}: leaf {self.vars[var].describe(value)}")
            elif kind == "dec":
                var, children = self.payload[i]
                branches = ", ".join(
                    f"{self.vars[var].describe(v)}->n{c}"
                    for v, c in zip(self.vars[var].values, children)
                )
                lines.append(f"n{i}: decision [{branches}]")
            else:
                (children,) = self.payload[i]
                op = "+" if kind == "sum" else "*"
                lines.append(f"n{i}: {op}({', '.join('n%d' % c for c in children)})")
        lines.append(f"root: n{self.root}")
        return "\n".join(lines)

    def dot(self) -> str:
        lines = ["digraph circuit {", "  node [shape=box];"]
        for i in range(len(self.kinds)):
            kind = self.kinds[i]
            if kind == "T":
                lines.append(f'  n{i} [label="1" shape=circle];')
            elif kind == "F":
                lines.append(f'  n{i} [label="0" shape=circle];')
            elif kind == "leaf":
                var, value = self.payload[i]
                lines.append(f'  n{i} [label="{self.vars[var].describe(value)}"];')
            elif kind == "dec":
                var, children = self.payload[i]
                lines.append(f'  n{i} [label="?{var}" shape=diamond];')
                for v, c in zip(self.vars[var].values, children):
                    label = self.vars[var].describe(v).replace('"', "'")
                    lines.append(f'  n{i} -> n{c} [label="{label}"];')
            else:
                op = "+" if kind == "sum" else "*"
                lines.append(f'  n{i} [label="{op}"];')
                for c in self.payload[i][0]:
                    lines.append(f"  n{i} -> n{c};")
        lines.append("}")
        return "\n".join(lines)


def compile_formula(
    formula: Formula,
    root_expr: int,
    node_budget: int = 10_000_000,
    debug_checks: bool = False,
) -> Circuit:
    """Shannon-expand ``root_expr`` into a decision circuit."""
    circuit = Circuit(formula.vars)
    order = sorted(
        range(len(formula.vars)),
        key=lambda v: (-formula.lit_count.get(v, 0), v),
    )
    position = {v: i for i, v in enumerate(order)}

    cond_memo: dict[tuple[int, int, int], int] = {}

    def cond(e: int, var: int, value: int) -> int:
        if var not in formula.support[e]:
            return e
        key = (e, var, value)
        found = cond_memo.get(key)
        if found is not None:
            return found
        kind = formula.kinds[e]
        if kind == "lit":
            lvar, lvalue = formula.data[e]
            out = TRUE if lvalue == value else FALSE
        elif kind == "not":
            out = formula.neg(cond(formula.data[e][0], var, value))
        elif kind == "and":
            out = formula.conj([cond(c, var, value) for c in formula.data[e]])
        else:
            out = formula.disj([cond(c, var, value) for c in formula.data[e]])
        cond_memo[key] = out
        return out

    comp_memo: dict[int, int] = {}

    def comp(e: int) -> int:
        if e == TRUE:
            return TRUE
        if e == FALSE:
            return FALSE
        found = comp_memo.get(e)
        if found is not None:
            return found
        var = min(formula.support[e], key=position.__getitem__)
        cvar = formula.vars[var]
        if cvar.kind == "bool":
            children = (comp(cond(e, var, 0)), comp(cond(e, var, 1)))
        else:
            branches = [comp(cond(e, var, pos)) for pos in range(len(cvar.payload.heads))]
            branches.append(comp(cond(e, var, NONE_VALUE)))
            children = tuple(branches)
        node = circuit.decision(var, children)
        if len(circuit) > node_budget:
            raise BlowupLimit(f"circuit exceeded the {node_budget}-node budget")
        comp_memo[e] = node
        return node

    circuit.root = comp(root_expr)
    if debug_checks:
        circuit.check_structure()
    return circuit


# --- compiled queries and the circuit cache --------------------------------------


@dataclass
class CompiledQuery:
    query: Literal
    ground_program: GroundProgram
    formula: Formula
    circuit: Circuit
    key: Optional[tuple] = None

    @property
    def node_count(self) -> int:
        return len(self.circuit)


def compile_query(
    program: Program,
    query: Union[Atom, Literal],
    options: Optional[GroundOptions] = None,
    node_budget: int = 10_000_000,
    debug_checks: bool = False,
) -> CompiledQuery:
    """Ground, complete and compile one query literal."""
    lit = query if isinstance(query, Literal) else Literal(query)
    gp = ground_query(program, lit.atom, options)
    formula = complete(gp)
    if gp.queries:
        root = formula.disj([formula.definitions[q] for q in gp.queries])
    else:
        root = FALSE
    if not lit.positive:
        root = formula.neg(root)
    circuit = compile_formula(formula, root, node_budget=node_budget, debug_checks=debug_checks)
    return CompiledQuery(lit, gp, formula, circuit)


def skeleton_key(program: Program, query: Union[Atom, Literal]) -> tuple:
    """Cache key: program version hash plus the canonical query skeleton.

    Queries that differ only in their placeholder constants produce identical
    circuits, so callers abstract dataset keys into placeholders before asking
    for the key (see learning.abstract_query).
    """
    lit = query if isinstance(query, Literal) else Literal(query)
    return (program.source_hash, lit.positive, canonical_key(lit.atom))


class CircuitCache:
    """Compiled-circuit cache with hit/miss/compile counters.

    Entries are immutable once stored; concurrent readers are safe and the
    single-writer-per-key discipline is provided by the interpreter's atomic
    dict operations.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.store: dict[tuple, CompiledQuery] = {}
        self.hits = 0
        self.misses = 0
        self.compilations = 0

    def lookup(self, key: tuple) -> Optional[CompiledQuery]:
        if self.enabled and key in self.store:
            self.hits += 1
            return self.store[key]
        self.misses += 1
        return None

    def get(
        self,
        program: Program,
        query: Union[Atom, Literal],
        options: Optional[GroundOptions] = None,
        node_budget: int = 10_000_000,
    ) -> CompiledQuery:
        key = skeleton_key(program, query)
        cached = self.lookup(key)
        if cached is not None:
            return cached
        compiled = compile_query(program, query, options, node_budget=node_budget)
        compiled.key = key
        self.compilations += 1
        if self.enabled:
            self.store[key] = compiled
        return compiled

    def counters(self) -> dict[str, int]:
        return {"hits": self.hits, "misses": self.misses, "compilations": self.compilations}
