"""Term, literal and program representations shared across the engine.

Terms follow the usual logic-programming convention: constants and functors
start lowercase (or are numbers), variables start uppercase or with '_'.
Lists are sugar for the './2' functor with '[]' as the empty list.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Union


class NeurlogError(Exception):
    """Base class for all engine errors."""


EMPTY_LIST = "[]"
LIST_FUNCTOR = "."

# Infix operators recognised by the printer, Prolog-style priorities
# (smaller binds tighter).
_INFIX_PRIORITY = {"+": 500, "-": 500, "*": 400, "/": 400, "//": 400, "mod": 400}


@dataclass(frozen=True)
class Constant:
    value: Union[str, int, float]


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Compound:
    functor: str
    args: tuple["Term", ...]


Term = Union[Constant, Variable, Compound]


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple[Term, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def indicator(self) -> tuple[str, int]:
        return (self.pred, len(self.args))


@dataclass(frozen=True)
class Literal:
    atom: Atom
    positive: bool = True

    def negated(self) -> "Literal":
        return Literal(self.atom, not self.positive)


# --- probability labels -----------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    """A constant probability label p::f."""

    p: float


@dataclass(frozen=True)
class Learnable:
    """A learnable probability label t(p)::f, tied to a parameter slot."""

    slot: int
    init: float


ProbLabel = Union[Fixed, Learnable]


@dataclass(frozen=True)
class ProbabilisticFact:
    label: ProbLabel
    atom: Atom
    line: int = 0


@dataclass(frozen=True)
class AnnotatedDisjunction:
    heads: tuple[tuple[ProbLabel, Atom], ...]
    body: tuple[Literal, ...] = ()
    line: int = 0


@dataclass(frozen=True)
class NeuralAnnotation:
    """nn(model, inputs[, output_var, domain]) :: head.

    ``domain`` is None for neural facts (sigmoid-backed, boolean) and a
    tuple of ground terms for neural ADs (softmax-backed, one value per
    domain element).
    """

    model: str
    inputs: tuple[Term, ...]
    output_var: Optional[Term]
    domain: Optional[tuple[Term, ...]]
    head: Atom
    line: int = 0

    @property
    def is_fact(self) -> bool:
        return self.domain is None


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple[Literal, ...] = ()
    line: int = 0


@dataclass(frozen=True)
class ParamInfo:
    """Static description of one learnable probabilistic parameter slot."""

    slot: int
    init: float
    kind: str  # 'fact' or 'ad_head'
    group: Optional[int]  # AD group id for ad_head slots
    name: str


@dataclass
class Program:
    """A validated program: immutable by convention once loaded."""

    rules: tuple[Rule, ...] = ()
    facts: tuple[ProbabilisticFact, ...] = ()
    ads: tuple[AnnotatedDisjunction, ...] = ()
    neurals: tuple[NeuralAnnotation, ...] = ()
    queries: tuple[Atom, ...] = ()
    evidence: tuple[tuple[Atom, bool], ...] = ()
    params: tuple[ParamInfo, ...] = ()

    def __post_init__(self) -> None:
        self.rules_by_pred: dict[tuple[str, int], list[Rule]] = {}
        for r in self.rules:
            self.rules_by_pred.setdefault(r.head.indicator, []).append(r)
        self.facts_by_pred: dict[tuple[str, int], list[tuple[int, ProbabilisticFact]]] = {}
        for i, f in enumerate(self.facts):
            self.facts_by_pred.setdefault(f.atom.indicator, []).append((i, f))
        self.ads_by_pred: dict[tuple[str, int], list[tuple[int, int, AnnotatedDisjunction]]] = {}
        for i, ad in enumerate(self.ads):
            for j, (_, h) in enumerate(ad.heads):
                self.ads_by_pred.setdefault(h.indicator, []).append((i, j, ad))
        self.neurals_by_pred: dict[tuple[str, int], list[tuple[int, NeuralAnnotation]]] = {}
        for i, n in enumerate(self.neurals):
            self.neurals_by_pred.setdefault(n.head.indicator, []).append((i, n))

    @property
    def source_hash(self) -> str:
        return hashlib.sha256(print_program(self).encode("utf-8")).hexdigest()[:16]

    def defined_indicators(self) -> set[tuple[str, int]]:
        out = set(self.rules_by_pred)
        out.update(self.facts_by_pred)
        out.update(self.ads_by_pred)
        out.update(self.neurals_by_pred)
        return out


# --- list helpers ------------------------------------------------------------


def make_list(items: list[Term], tail: Term = Constant(EMPTY_LIST)) -> Term:
    out = tail
    for item in reversed(items):
        out = Compound(LIST_FUNCTOR, (item, out))
    return out


def list_items(t: Term) -> tuple[list[Term], Term]:
    """Decompose a list term into (items, tail)."""
    items: list[Term] = []
    while isinstance(t, Compound) and t.functor == LIST_FUNCTOR and len(t.args) == 2:
        items.append(t.args[0])
        t = t.args[1]
    return items, t


def is_ground(t: Union[Term, Atom]) -> bool:
    stack: list[Union[Term, Atom]] = [t]
    while stack:
        x = stack.pop()
        if isinstance(x, Variable):
            return False
        if isinstance(x, (Compound, Atom)):
            stack.extend(x.args)
    return True


def term_variables(t: Union[Term, Atom, Literal]) -> list[Variable]:
    """Variables in first-occurrence order."""
    out: list[Variable] = []
    seen: set[str] = set()

    def visit(x: Union[Term, Atom, Literal]) -> None:
        if isinstance(x, Literal):
            visit(x.atom)
        elif isinstance(x, Variable):
            if x.name not in seen:
                seen.add(x.name)
                out.append(x)
        elif isinstance(x, (Compound, Atom)):
            for a in x.args:
                visit(a)

    visit(t)
    return out


# --- canonical printing -------------------------------------------------------


def _print_constant(value: Union[str, int, float]) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def print_term(t: Term, priority: int = 1200) -> str:
    if isinstance(t, Constant):
        return _print_constant(t.value)
    if isinstance(t, Variable):
        return t.name
    if t.functor == LIST_FUNCTOR and len(t.args) == 2:
        items, tail = list_items(t)
        body = ",".join(print_term(i) for i in items)
        if isinstance(tail, Constant) and tail.value == EMPTY_LIST:
            return f"[{body}]"
        return f"[{body}|{print_term(tail)}]"
    if t.functor in _INFIX_PRIORITY and len(t.args) == 2:
        prio = _INFIX_PRIORITY[t.functor]
        left = print_term(t.args[0], prio)
        right = print_term(t.args[1], prio - 1)
        op = f" {t.functor} " if t.functor.isalpha() else t.functor
        text = f"{left}{op}{right}"
        return f"({text})" if prio > priority else text
    if t.functor == "-" and len(t.args) == 1:
        return f"-{print_term(t.args[0], 0)}"
    args = ",".join(print_term(a) for a in t.args)
    return f"{t.functor}({args})"


def print_atom(a: Atom) -> str:
    if a.pred in ("is",) and len(a.args) == 2:
        return f"{print_term(a.args[0])} is {print_term(a.args[1])}"
    if a.pred in ("<", ">", "=:=") and len(a.args) == 2:
        return f"{print_term(a.args[0])}{a.pred}{print_term(a.args[1])}"
    if not a.args:
        return a.pred
    return f"{a.pred}({','.join(print_term(t) for t in a.args)})"


def print_literal(lit: Literal) -> str:
    text = print_atom(lit.atom)
    return text if lit.positive else f"\\+{text}"


def print_label(label: ProbLabel) -> str:
    if isinstance(label, Fixed):
        return _print_constant(label.p)
    return f"t({_print_constant(label.init)})"


def print_rule(r: Rule) -> str:
    if not r.body:
        return f"{print_atom(r.head)}."
    body = ", ".join(print_literal(l) for l in r.body)
    return f"{print_atom(r.head)} :- {body}."


def print_program(p: Program) -> str:
    lines: list[str] = []
    for f in p.facts:
        lines.append(f"{print_label(f.label)}::{print_atom(f.atom)}.")
    for ad in p.ads:
        heads = "; ".join(f"{print_label(l)}::{print_atom(a)}" for l, a in ad.heads)
        if ad.body:
            body = ", ".join(print_literal(l) for l in ad.body)
            lines.append(f"{heads} :- {body}.")
        else:
            lines.append(f"{heads}.")
    for n in p.neurals:
        ins = ",".join(print_term(t) for t in n.inputs)
        if n.is_fact:
            lines.append(f"nn({n.model},[{ins}])::{print_atom(n.head)}.")
        else:
            dom = ",".join(print_term(d) for d in n.domain)
            lines.append(
                f"nn({n.model},[{ins}],{print_term(n.output_var)},[{dom}])::{print_atom(n.head)}."
            )
    for r in p.rules:
        lines.append(print_rule(r))
    for q in p.queries:
        lines.append(f"query({print_atom(q)}).")
    for a, truth in p.evidence:
        lines.append(f"evidence({print_atom(a)},{'true' if truth else 'false'}).")
    return "\n".join(lines) + ("\n" if lines else "")
