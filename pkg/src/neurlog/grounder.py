"""Query-directed grounding via tabled SLD resolution.

Grounding walks backwards from the query and records, per successful
derivation, the ground rule instances and the probabilistic / neural choices
they rest on.  Choices and rules touched only by failing branches never make
it into the result, so the output is the relevant ground program.

Calls are tabled by variant: each distinct call pattern is solved once and
its answers are reused, which keeps recursive programs (multi-digit numbers,
bubble sort) polynomial where plain SLD would be exponential.  Re-entering a
call that is still being solved means the positive dependency graph is
cyclic, which this engine rejects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

from .terms import (
    Atom,
    Compound,
    Constant,
    Fixed,
    Learnable,
    Literal,
    NeurlogError,
    Program,
    Term,
    Variable,
    is_ground,
    print_atom,
    print_label,
    print_term,
)


class GroundingError(NeurlogError):
    pass


class UnboundArithmetic(GroundingError):
    pass


class DepthLimitExceeded(GroundingError):
    pass


class CyclicGroundProgram(GroundingError):
    pass


class NonGroundChoice(GroundingError):
    pass


class UnboundNegation(GroundingError):
    pass


# --- substitutions and unification -------------------------------------------


def walk(t: Term, bindings: dict[str, Term]) -> Term:
    while isinstance(t, Variable):
        bound = bindings.get(t.name)
        if bound is None:
            return t
        t = bound
    return t


def resolve(t: Union[Term, Atom], bindings: dict[str, Term]) -> Union[Term, Atom]:
    if isinstance(t, Atom):
        return Atom(t.pred, tuple(resolve(a, bindings) for a in t.args))
    t = walk(t, bindings)
    if isinstance(t, Compound):
        return Compound(t.functor, tuple(resolve(a, bindings) for a in t.args))
    return t


def _occurs(name: str, t: Term, bindings: dict[str, Term]) -> bool:
    stack = [t]
    while stack:
        x = walk(stack.pop(), bindings)
        if isinstance(x, Variable):
            if x.name == name:
                return True
        elif isinstance(x, Compound):
            stack.extend(x.args)
    return False


def _unify(a: Union[Term, Atom], b: Union[Term, Atom], bindings: dict[str, Term], trail: list[str]) -> bool:
    if isinstance(a, Atom) or isinstance(b, Atom):
        if not (isinstance(a, Atom) and isinstance(b, Atom)):
            return False
        if a.pred != b.pred or len(a.args) != len(b.args):
            return False
        return all(_unify(x, y, bindings, trail) for x, y in zip(a.args, b.args))
    a = walk(a, bindings)
    b = walk(b, bindings)
    if isinstance(a, Variable) and isinstance(b, Variable) and a.name == b.name:
        return True
    if isinstance(a, Variable):
        if _occurs(a.name, b, bindings):
            return False
        bindings[a.name] = b
        trail.append(a.name)
        return True
    if isinstance(b, Variable):
        if _occurs(b.name, a, bindings):
            return False
        bindings[b.name] = a
        trail.append(b.name)
        return True
    if isinstance(a, Constant) and isinstance(b, Constant):
        return type(a.value) is type(b.value) and a.value == b.value
    if isinstance(a, Compound) and isinstance(b, Compound):
        if a.functor != b.functor or len(a.args) != len(b.args):
            return False
        return all(_unify(x, y, bindings, trail) for x, y in zip(a.args, b.args))
    return False


def _undo(bindings: dict[str, Term], trail: list[str], mark: int) -> None:
    while len(trail) > mark:
        del bindings[trail.pop()]


def unify(a: Union[Term, Atom], b: Union[Term, Atom], subst: Optional[dict[str, Term]] = None) -> Optional[dict[str, Term]]:
    """Most general unifier extending ``subst`` (occurs-check on); None on failure.

    The result is idempotent: no binding contains a variable that is itself
    bound."""
    bindings = dict(subst) if subst else {}
    trail: list[str] = []
    if _unify(a, b, bindings, trail):
        return {name: resolve(t, bindings) for name, t in bindings.items()}
    return None


def canonical_key(t: Union[Term, Atom], mapping: Optional[dict[str, int]] = None) -> tuple:
    """Hashable variant key: variables numbered in first-occurrence order."""
    if mapping is None:
        mapping = {}
    if isinstance(t, Atom):
        return ("a", t.pred, tuple(canonical_key(x, mapping) for x in t.args))
    if isinstance(t, Variable):
        if t.name not in mapping:
            mapping[t.name] = len(mapping)
        return ("v", mapping[t.name])
    if isinstance(t, Constant):
        return ("c", type(t.value).__name__, t.value)
    return ("f", t.functor, tuple(canonical_key(x, mapping) for x in t.args))


# --- arithmetic builtins ------------------------------------------------------


class _BranchFail(Exception):
    """Internal: arithmetic guard failure (e.g. division by zero)."""


def _arith(t: Term, bindings: dict[str, Term]) -> Union[int, float]:
    t = walk(t, bindings)
    if isinstance(t, Constant) and isinstance(t.value, (int, float)):
        return t.value
    if isinstance(t, Variable):
        raise UnboundArithmetic(f"unbound variable {t.name} in arithmetic expression")
    if isinstance(t, Compound):
        if t.functor == "-" and len(t.args) == 1:
            return -_arith(t.args[0], bindings)
        if len(t.args) == 2:
            a = _arith(t.args[0], bindings)
            b = _arith(t.args[1], bindings)
            try:
                if t.functor == "+":
                    return a + b
                if t.functor == "-":
                    return a - b
                if t.functor == "*":
                    return a * b
                if t.functor == "//":
                    return a // b
                if t.functor == "/":
                    return a / b
                if t.functor == "mod":
                    return a % b
            except ZeroDivisionError:
                raise _BranchFail()
    raise UnboundArithmetic(f"cannot evaluate arithmetic term {print_term(t)}")


def eval_builtin(lit: Literal, subst: Optional[dict[str, Term]] = None) -> Optional[dict[str, Term]]:
    """Evaluate an 'is'/comparison literal under ``subst``; None on failure."""
    bindings = dict(subst) if subst else {}
    trail: list[str] = []
    try:
        if _eval_builtin_atom(lit.atom, bindings, trail) == lit.positive:
            return bindings
    except _BranchFail:
        if not lit.positive:
            return bindings
    return None


def _eval_builtin_atom(atom: Atom, bindings: dict[str, Term], trail: list[str]) -> bool:
    if atom.pred == "is":
        value = _arith(atom.args[1], bindings)
        if isinstance(value, float) and value.is_integer() and isinstance(walk(atom.args[1], bindings), Compound):
            pass  # keep float results as floats; integer ops stay ints
        return _unify(atom.args[0], Constant(value), bindings, trail)
    a = _arith(atom.args[0], bindings)
    b = _arith(atom.args[1], bindings)
    if atom.pred == "<":
        return a < b
    if atom.pred == ">":
        return a > b
    if atom.pred == "=:=":
        return a == b
    raise GroundingError(f"unknown builtin {atom.pred}/{len(atom.args)}")


def is_builtin(atom: Atom) -> bool:
    return (atom.pred, len(atom.args)) in {("is", 2), ("<", 2), (">", 2), ("=:=", 2)}


# --- ground program data ------------------------------------------------------


@dataclass(frozen=True)
class GroundLiteral:
    atom: Atom
    positive: bool = True


@dataclass(frozen=True)
class NeuralFactLabel:
    model: str
    inputs: tuple[Term, ...]


@dataclass(frozen=True)
class NeuralHeadLabel:
    model: str
    inputs: tuple[Term, ...]
    index: int  # position in the annotation's domain
    value: Term


GroundLabel = Union[Fixed, Learnable, NeuralFactLabel, NeuralHeadLabel]


@dataclass(frozen=True)
class GroundFact:
    source: int  # index into Program.facts / Program.neurals
    atom: Atom
    label: GroundLabel


@dataclass(frozen=True)
class GroundADHead:
    index: int  # head index within the source AD / domain index for nADs
    atom: Atom
    label: GroundLabel


@dataclass(frozen=True)
class GroundAD:
    source: int  # index into Program.ads (or Program.neurals for nADs)
    neural: bool
    key: tuple
    heads: tuple[GroundADHead, ...]  # only the heads used by the query
    bodies: tuple[tuple[GroundLiteral, ...], ...] = ((),)


@dataclass
class GroundProgram:
    facts: tuple[GroundFact, ...] = ()
    ads: tuple[GroundAD, ...] = ()
    rules: tuple[tuple[Atom, tuple[GroundLiteral, ...]], ...] = ()
    queries: tuple[Atom, ...] = ()
    requested: tuple[Literal, ...] = ()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroundProgram):
            return NotImplemented
        return (
            self.facts == other.facts
            and self.ads == other.ads
            and self.rules == other.rules
            and self.queries == other.queries
        )

    def pretty(self) -> str:
        lines: list[str] = []
        for f in self.facts:
            lines.append(f"{_label_text(f.label)}::{print_atom(f.atom)}.")
        for ad in self.ads:
            heads = "; ".join(f"{_label_text(h.label)}::{print_atom(h.atom)}" for h in ad.heads)
            for body in ad.bodies:
                if body:
                    cond = ", ".join(_glit_text(l) for l in body)
                    lines.append(f"{heads} :- {cond}.")
                else:
                    lines.append(f"{heads}.")
        for head, body in self.rules:
            if body:
                lines.append(f"{print_atom(head)} :- {', '.join(_glit_text(l) for l in body)}.")
            else:
                lines.append(f"{print_atom(head)}.")
        for q in self.queries:
            lines.append(f"query({print_atom(q)}).")
        return "\n".join(lines) + ("\n" if lines else "")


def _label_text(label: GroundLabel) -> str:
    if isinstance(label, (Fixed, Learnable)):
        return print_label(label)
    if isinstance(label, NeuralFactLabel):
        return f"nn({label.model},[{','.join(print_term(t) for t in label.inputs)}])"
    return f"nn({label.model},[{','.join(print_term(t) for t in label.inputs)}],{print_term(label.value)})"


def _glit_text(lit: GroundLiteral) -> str:
    text = print_atom(lit.atom)
    return text if lit.positive else f"\\+{text}"


# --- derivation records -------------------------------------------------------


@dataclass
class _Answer:
    atom: Atom
    certain: bool = False
    derivs: list["_Rec"] = field(default_factory=list)


@dataclass(frozen=True)
class _Rec:
    items: tuple
    children: tuple[_Answer, ...] = ()


@dataclass
class _Entry:
    status: str  # 'active' | 'done'
    answers: dict[tuple, _Answer] = field(default_factory=dict)


@dataclass
class GroundOptions:
    step_limit: int = 100_000
    readout: bool = False
    # readout hooks: neural_fn(model, inputs) -> probability vector,
    # param_fn(slot) -> current probability
    neural_fn: Optional[Callable[[str, tuple[Term, ...]], Sequence[float]]] = None
    param_fn: Optional[Callable[[int], float]] = None


class _Grounder:
    def __init__(self, program: Program, options: GroundOptions):
        self.program = program
        self.options = options
        self.table: dict[tuple, _Entry] = {}
        self.bindings: dict[str, Term] = {}
        self.trail: list[str] = []
        self.steps = 0
        self._fresh = itertools.count(1)

    # --- plumbing ---

    def _step(self, what: Atom) -> None:
        self.steps += 1
        if self.steps > self.options.step_limit:
            raise DepthLimitExceeded(
                f"resolution exceeded {self.options.step_limit} steps at {print_atom(what)}"
            )

    def _rename(self, t, mapping: dict[str, Term]):
        if isinstance(t, Atom):
            return Atom(t.pred, tuple(self._rename(a, mapping) for a in t.args))
        if isinstance(t, Variable):
            if t.name not in mapping:
                mapping[t.name] = Variable(f"_R{next(self._fresh)}")
            return mapping[t.name]
        if isinstance(t, Compound):
            return Compound(t.functor, tuple(self._rename(a, mapping) for a in t.args))
        return t

    def _param_value(self, label: Learnable) -> float:
        if self.options.param_fn is not None:
            return self.options.param_fn(label.slot)
        return label.init

    # --- tabled call resolution ---

    def solve_call(self, call: Atom) -> list[_Answer]:
        call = resolve(call, self.bindings)
        key = canonical_key(call)
        entry = self.table.get(key)
        if entry is not None:
            if entry.status == "active":
                raise CyclicGroundProgram(
                    f"cyclic positive dependency through {print_atom(call)}"
                )
            return list(entry.answers.values())
        entry = _Entry("active")
        self.table[key] = entry
        ind = call.indicator
        self._solve_facts(call, ind, entry)
        self._solve_neurals(call, ind, entry)
        self._solve_ads(call, ind, entry)
        self._solve_rules(call, ind, entry)
        entry.status = "done"
        return list(entry.answers.values())

    def _add_answer(self, entry: _Entry, atom: Atom, certain: bool, rec: Optional[_Rec]) -> None:
        akey = canonical_key(atom)
        ans = entry.answers.get(akey)
        if ans is None:
            ans = _Answer(atom)
            entry.answers[akey] = ans
        if certain:
            # A certain derivation makes the atom true in every world; its
            # probabilistic derivations become irrelevant.
            ans.certain = True
            ans.derivs = []
        elif not ans.certain and rec is not None:
            ans.derivs.append(rec)

    def _solve_facts(self, call: Atom, ind: tuple[str, int], entry: _Entry) -> None:
        for idx, fact in self.program.facts_by_pred.get(ind, ()):
            self._step(call)
            mark = len(self.trail)
            renamed = self._rename(fact.atom, {})
            if _unify(call, renamed, self.bindings, self.trail):
                inst = resolve(renamed, self.bindings)
                if not is_ground(inst):
                    _undo(self.bindings, self.trail, mark)
                    raise NonGroundChoice(f"probabilistic fact instance {print_atom(inst)} is not ground")
                if self.options.readout:
                    label = fact.label
                    p = label.p if isinstance(label, Fixed) else self._param_value(label)
                    if p >= 0.5:
                        self._add_answer(entry, inst, True, None)
                else:
                    rec = _Rec(items=(("fact", idx, inst),))
                    self._add_answer(entry, inst, False, rec)
            _undo(self.bindings, self.trail, mark)

    def _solve_neurals(self, call: Atom, ind: tuple[str, int], entry: _Entry) -> None:
        for idx, ann in self.program.neurals_by_pred.get(ind, ()):
            mapping: dict[str, Term] = {}
            head = self._rename(ann.head, mapping)
            inputs = tuple(self._rename(t, mapping) for t in ann.inputs)
            if ann.is_fact:
                self._step(call)
                mark = len(self.trail)
                if _unify(call, head, self.bindings, self.trail):
                    inst, ins = self._ground_neural(head, inputs)
                    if self.options.readout:
                        out = self.options.neural_fn(ann.model, ins)
                        if float(out[0]) >= 0.5:
                            self._add_answer(entry, inst, True, None)
                    else:
                        rec = _Rec(items=(("nfact", idx, ins, inst),))
                        self._add_answer(entry, inst, False, rec)
                _undo(self.bindings, self.trail, mark)
                continue
            out_var = self._rename(ann.output_var, mapping)
            argmax: Optional[int] = None
            for j, dval in enumerate(ann.domain):
                self._step(call)
                mark = len(self.trail)
                if _unify(out_var, dval, self.bindings, self.trail) and _unify(
                    call, head, self.bindings, self.trail
                ):
                    inst, ins = self._ground_neural(head, inputs)
                    if self.options.readout:
                        if argmax is None:
                            out = self.options.neural_fn(ann.model, ins)
                            argmax = int(max(range(len(out)), key=lambda k: (out[k], -k)))
                        if j == argmax:
                            self._add_answer(entry, inst, True, None)
                    else:
                        rec = _Rec(items=(("nad", idx, ins, j, inst),))
                        self._add_answer(entry, inst, False, rec)
                _undo(self.bindings, self.trail, mark)

    def _ground_neural(self, head: Atom, inputs: tuple[Term, ...]) -> tuple[Atom, tuple[Term, ...]]:
        inst = resolve(head, self.bindings)
        ins = tuple(resolve(t, self.bindings) for t in inputs)
        if any(not is_ground(t) for t in ins):
            raise NonGroundChoice(
                f"network inputs for {print_atom(inst)} did not become ground during resolution"
            )
        if not is_ground(inst):
            raise NonGroundChoice(f"neural atom instance {print_atom(inst)} is not ground")
        return inst, ins

    def _solve_ads(self, call: Atom, ind: tuple[str, int], entry: _Entry) -> None:
        for ad_idx, head_idx, ad in self.program.ads_by_pred.get(ind, ()):
            self._step(call)
            mapping: dict[str, Term] = {}
            heads = tuple((lab, self._rename(a, mapping)) for lab, a in ad.heads)
            body = tuple(Literal(self._rename(l.atom, mapping), l.positive) for l in ad.body)
            mark = len(self.trail)
            if _unify(call, heads[head_idx][1], self.bindings, self.trail):
                for consumed in self._solve_body(body, 0, []):
                    head_insts = tuple(resolve(a, self.bindings) for _, a in heads)
                    if any(not is_ground(a) for a in head_insts):
                        raise NonGroundChoice(
                            f"annotated disjunction instance for {print_atom(call)} is not ground"
                        )
                    inst = head_insts[head_idx]
                    if self.options.readout:
                        values = [
                            l.p if isinstance(l, Fixed) else self._param_value(l) for l, _ in heads
                        ]
                        best = max(range(len(values)), key=lambda k: (values[k], -k))
                        if head_idx == best:
                            self._add_answer(entry, inst, True, None)
                        continue
                    key = (ad_idx, tuple(canonical_key(a) for a in head_insts))
                    body_lits = self._record_literals(consumed)
                    rec = _Rec(
                        items=(("ad", ad_idx, key, head_idx, head_insts, body_lits),),
                        children=tuple(ans for _, ans in consumed),
                    )
                    self._add_answer(entry, inst, False, rec)
            _undo(self.bindings, self.trail, mark)

    def _solve_rules(self, call: Atom, ind: tuple[str, int], entry: _Entry) -> None:
        for rule in self.program.rules_by_pred.get(ind, ()):
            self._step(call)
            mapping: dict[str, Term] = {}
            head = self._rename(rule.head, mapping)
            body = tuple(Literal(self._rename(l.atom, mapping), l.positive) for l in rule.body)
            mark = len(self.trail)
            if _unify(call, head, self.bindings, self.trail):
                for consumed in self._solve_body(body, 0, []):
                    inst = resolve(head, self.bindings)
                    if not is_ground(inst):
                        raise NonGroundChoice(
                            f"rule head {print_atom(inst)} has unbound variables at ground time"
                        )
                    if not consumed:
                        self._add_answer(entry, inst, True, None)
                        continue
                    body_lits = self._record_literals(consumed)
                    rec = _Rec(
                        items=(("rule", inst, body_lits),),
                        children=tuple(ans for _, ans in consumed),
                    )
                    self._add_answer(entry, inst, False, rec)
            _undo(self.bindings, self.trail, mark)

    def _record_literals(self, consumed: list[tuple[Literal, _Answer]]) -> tuple[GroundLiteral, ...]:
        out = []
        for lit, _ in consumed:
            inst = resolve(lit.atom, self.bindings)
            if not is_ground(inst):
                raise NonGroundChoice(
                    f"body literal {print_atom(inst)} has unbound variables at ground time"
                )
            out.append(GroundLiteral(inst, lit.positive))
        return tuple(out)

    def _solve_body(
        self, body: tuple[Literal, ...], i: int, consumed: list[tuple[Literal, _Answer]]
    ) -> Iterator[list[tuple[Literal, _Answer]]]:
        if i == len(body):
            yield consumed
            return
        lit = body[i]
        if is_builtin(lit.atom):
            self._step(lit.atom)
            mark = len(self.trail)
            try:
                ok = _eval_builtin_atom(lit.atom, self.bindings, self.trail)
            except _BranchFail:
                ok = False
            if ok == lit.positive:
                yield from self._solve_body(body, i + 1, consumed)
            _undo(self.bindings, self.trail, mark)
            return
        if not lit.positive:
            target = resolve(lit.atom, self.bindings)
            if not is_ground(target):
                raise UnboundNegation(
                    f"negated literal \\+{print_atom(target)} is not ground at call time"
                )
            answers = self.solve_call(target)
            self._step(target)
            if not answers:
                yield from self._solve_body(body, i + 1, consumed)
                return
            ans = answers[0]
            if ans.certain:
                return  # deterministically true, the negation fails
            consumed.append((lit, ans))
            yield from self._solve_body(body, i + 1, consumed)
            consumed.pop()
            return
        target = resolve(lit.atom, self.bindings)
        for ans in self.solve_call(target):
            self._step(target)
            mark = len(self.trail)
            renamed = self._rename(ans.atom, {})
            if _unify(lit.atom, renamed, self.bindings, self.trail):
                if ans.certain:
                    yield from self._solve_body(body, i + 1, consumed)
                else:
                    consumed.append((lit, ans))
                    yield from self._solve_body(body, i + 1, consumed)
                    consumed.pop()
            _undo(self.bindings, self.trail, mark)


# --- record flattening ---------------------------------------------------------


class _Builder:
    def __init__(self, program: Program):
        self.program = program
        self.facts: dict[tuple, GroundFact] = {}
        self.ads: dict[tuple, dict] = {}
        self.rules: dict[tuple, tuple[Atom, tuple[GroundLiteral, ...]]] = {}
        self.seen: set[int] = set()

    def add_answer(self, ans: _Answer) -> None:
        stack: list[_Answer] = [ans]
        while stack:
            a = stack.pop()
            if id(a) in self.seen:
                continue
            self.seen.add(id(a))
            for rec in a.derivs:
                for item in rec.items:
                    self._add_item(item)
                stack.extend(rec.children)

    def _add_item(self, item: tuple) -> None:
        kind = item[0]
        if kind == "fact":
            _, idx, atom = item
            key = ("f", idx, canonical_key(atom))
            if key not in self.facts:
                self.facts[key] = GroundFact(idx, atom, self.program.facts[idx].label)
        elif kind == "nfact":
            _, idx, inputs, atom = item
            key = ("nf", idx, tuple(canonical_key(t) for t in inputs))
            if key not in self.facts:
                ann = self.program.neurals[idx]
                self.facts[key] = GroundFact(idx, atom, NeuralFactLabel(ann.model, inputs))
        elif kind == "nad":
            _, idx, inputs, j, atom = item
            ann = self.program.neurals[idx]
            key = ("na", idx, tuple(canonical_key(t) for t in inputs))
            slot = self.ads.setdefault(
                key, {"source": idx, "neural": True, "inputs": inputs, "heads": {}, "bodies": {(): None}}
            )
            slot["heads"].setdefault(
                j, GroundADHead(j, atom, NeuralHeadLabel(ann.model, inputs, j, ann.domain[j]))
            )
        elif kind == "ad":
            _, idx, key_part, head_idx, head_insts, body_lits = item
            ad = self.program.ads[idx]
            key = ("ad", idx, key_part)
            slot = self.ads.setdefault(
                key, {"source": idx, "neural": False, "inputs": None, "heads": {}, "bodies": {}}
            )
            slot["bodies"].setdefault(body_lits, None)
            label = ad.heads[head_idx][0]
            slot["heads"].setdefault(head_idx, GroundADHead(head_idx, head_insts[head_idx], label))
        elif kind == "rule":
            _, head, body = item
            key = (canonical_key(head), tuple((canonical_key(l.atom), l.positive) for l in body))
            if key not in self.rules:
                self.rules[key] = (head, body)
        else:  # pragma: no cover
            raise GroundingError(f"unknown record item {kind}")

    def build(self, queries: list[Atom], requested: list[Literal], extra_true: list[Atom]) -> GroundProgram:
        ads = []
        for slot in self.ads.values():
            heads = tuple(slot["heads"][j] for j in sorted(slot["heads"]))
            bodies = tuple(slot["bodies"]) or ((),)
            ads.append(
                GroundAD(slot["source"], slot["neural"], key=(), heads=heads, bodies=bodies)
            )
        rules = list(self.rules.values())
        for atom in extra_true:
            rules.append((atom, ()))
        return GroundProgram(
            facts=tuple(self.facts.values()),
            ads=tuple(ads),
            rules=tuple(rules),
            queries=tuple(queries),
            requested=tuple(requested),
        )


# --- public API -----------------------------------------------------------------


def ground_query(
    program: Program,
    query: Union[Atom, Literal, Sequence[Union[Atom, Literal]]],
    options: Optional[GroundOptions] = None,
) -> GroundProgram:
    """Compute the relevant ground program for one or more queries."""
    options = options or GroundOptions()
    if isinstance(query, (Atom, Literal)):
        query = [query]
    requested = [q if isinstance(q, Literal) else Literal(q) for q in query]
    grounder = _Grounder(program, options)
    builder = _Builder(program)
    out_queries: list[Atom] = []
    extra_true: list[Atom] = []
    for lit in requested:
        answers = grounder.solve_call(lit.atom)
        if not answers and is_ground(lit.atom):
            out_queries.append(resolve(lit.atom, {}))
            continue
        for ans in answers:
            if not is_ground(ans.atom):
                raise NonGroundChoice(
                    f"query answer {print_atom(ans.atom)} has unbound variables"
                )
            out_queries.append(ans.atom)
            if ans.certain:
                extra_true.append(ans.atom)
            else:
                builder.add_answer(ans)
    return builder.build(out_queries, requested, extra_true)


def readout_answers(
    program: Program,
    query: Atom,
    neural_fn: Callable[[str, tuple[Term, ...]], Sequence[float]],
    param_fn: Optional[Callable[[int], float]] = None,
    step_limit: int = 1_000_000,
) -> list[Atom]:
    """Run the query deterministically, taking every random choice's most
    probable branch (network argmax, probability >= 0.5).  Used for accuracy
    readout on tasks whose answer space is too large to enumerate."""
    options = GroundOptions(
        step_limit=step_limit, readout=True, neural_fn=neural_fn, param_fn=param_fn
    )
    grounder = _Grounder(program, options)
    return [a.atom for a in grounder.solve_call(query)]
