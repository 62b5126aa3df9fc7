"""Parser for the surface syntax: probabilistic facts, annotated disjunctions,
neural annotations, rules with '\\+' / 'is' / comparison builtins, and the
range sugar [lo,...,hi] / [lo .. hi] used in network output domains.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .terms import (
    AnnotatedDisjunction,
    Atom,
    Compound,
    Constant,
    EMPTY_LIST,
    Fixed,
    Learnable,
    Literal,
    NeuralAnnotation,
    NeurlogError,
    ParamInfo,
    ProbabilisticFact,
    Program,
    Rule,
    Term,
    Variable,
    make_list,
    print_atom,
    term_variables,
)

BUILTIN_PREDS = {("is", 2), ("<", 2), (">", 2), ("=:=", 2)}

_SYMBOLS = ["=:=", ":-", "::", "\\+", "...", "..", "//", "(", ")", "[", "]",
            ",", ";", "|", "<", ">", "+", "-", "*", "/", "."]

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|%[^\n]*)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<sym>""" + "|".join(re.escape(s) for s in _SYMBOLS) + r""")
    """,
    re.VERBOSE,
)


class Diagnostic(NeurlogError):
    """A parse or load error with a source location."""

    def __init__(self, message: str, filename: str = "<string>", line: int = 0, col: int = 0):
        self.message = message
        self.filename = filename
        self.line = line
        self.col = col
        super().__init__(f"{filename}:{line}:{col}: {message}")


@dataclass(frozen=True)
class Token:
    kind: str  # 'num' | 'name' | 'var' | 'sym' | 'end' | 'eof'
    text: str
    value: object
    line: int
    col: int


def _tokenize(source: str, filename: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, col = 0, 1, 1
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise Diagnostic(f"unexpected character {source[pos]!r}", filename, line, col)
        text = m.group(0)
        kind = m.lastgroup
        if kind == "ws":
            pass
        elif kind == "num":
            value: object = float(text) if ("." in text or "e" in text or "E" in text) else int(text)
            tokens.append(Token("num", text, value, line, col))
        elif kind == "sym" and text == ".":
            # A clause terminator only when not followed by more token material
            # that would make it part of a number (numbers are matched first).
            tokens.append(Token("end", ".", ".", line, col))
        else:
            tokens.append(Token(kind, text, text, line, col))
        for ch in text:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        pos = m.end()
    tokens.append(Token("eof", "", None, line, col))
    return tokens


class _Ellipsis:
    """Marker for '...' inside lists and AD head sequences."""


_ELLIPSIS = _Ellipsis()


class _NegConj:
    """Marker literal for '\\+(' conj ')' pending the auxiliary-atom rewrite."""

    def __init__(self, literals: list[Literal]):
        self.literals = literals


class _Parser:
    def __init__(self, source: str, filename: str):
        self.filename = filename
        self.tokens = _tokenize(source, filename)
        self.pos = 0
        self.fresh = 0

    # --- token plumbing ---

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.text == text and t.kind in ("sym", "name", "end")

    def expect(self, text: str) -> Token:
        t = self.next()
        if t.text != text:
            raise self.error(f"expected {text!r}, found {t.text!r}", t)
        return t

    def error(self, message: str, tok: Optional[Token] = None) -> Diagnostic:
        tok = tok or self.peek()
        return Diagnostic(message, self.filename, tok.line, tok.col)

    def fresh_var(self) -> Variable:
        self.fresh += 1
        return Variable(f"_G{self.fresh}")

    # --- terms ---

    def parse_term(self) -> Term:
        return self.parse_additive()

    def parse_additive(self) -> Term:
        t = self.parse_multiplicative()
        while self.peek().kind == "sym" and self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.parse_multiplicative()
            t = Compound(op, (t, rhs))
        return t

    def parse_multiplicative(self) -> Term:
        t = self.parse_primary()
        while (self.peek().kind == "sym" and self.peek().text in ("*", "//", "/")) or (
            self.peek().kind == "name" and self.peek().text == "mod"
        ):
            op = self.next().text
            rhs = self.parse_primary()
            t = Compound(op, (t, rhs))
        return t

    def parse_primary(self) -> Term:
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Constant(t.value)
        if t.kind == "sym" and t.text == "-":
            self.next()
            inner = self.parse_primary()
            if isinstance(inner, Constant) and isinstance(inner.value, (int, float)):
                return Constant(-inner.value)
            return Compound("-", (inner,))
        if t.kind == "var":
            self.next()
            if t.text == "_":
                return self.fresh_var()
            return Variable(t.text)
        if t.kind == "name":
            self.next()
            if self.at("("):
                self.next()
                args = [self.parse_term()]
                while self.at(","):
                    self.next()
                    args.append(self.parse_term())
                self.expect(")")
                return Compound(t.text, tuple(args))
            return Constant(t.text)
        if t.kind == "sym" and t.text == "[":
            return self.parse_list()
        if t.kind == "sym" and t.text == "(":
            self.next()
            inner = self.parse_term()
            self.expect(")")
            return inner
        raise self.error(f"expected a term, found {t.text!r}", t)

    def parse_list(self) -> Term:
        start = self.expect("[")
        if self.at("]"):
            self.next()
            return Constant(EMPTY_LIST)
        items: list[Union[Term, _Ellipsis]] = [self._list_element()]
        # [lo .. hi] range form
        if self.at(".."):
            self.next()
            hi = self.parse_term()
            self.expect("]")
            return make_list(self._expand_range(items[0], hi, start))
        while self.at(","):
            self.next()
            items.append(self._list_element())
        tail: Term = Constant(EMPTY_LIST)
        if self.at("|"):
            self.next()
            tail = self.parse_term()
        self.expect("]")
        return make_list(self._expand_ellipses(items, start), tail)

    def _list_element(self) -> Union[Term, _Ellipsis]:
        if self.at("..."):
            self.next()
            return _ELLIPSIS
        return self.parse_term()

    def _expand_range(self, lo: Term, hi: Term, tok: Token) -> list[Term]:
        if (
            isinstance(lo, Constant)
            and isinstance(hi, Constant)
            and isinstance(lo.value, int)
            and isinstance(hi.value, int)
            and lo.value <= hi.value
        ):
            return [Constant(v) for v in range(lo.value, hi.value + 1)]
        raise Diagnostic("range bounds must be integers with lo <= hi", self.filename, tok.line, tok.col)

    def _expand_ellipses(self, items: list, tok: Token) -> list[Term]:
        out: list[Term] = []
        for i, item in enumerate(items):
            if isinstance(item, _Ellipsis):
                if not out or i + 1 >= len(items):
                    raise Diagnostic("'...' needs an integer on both sides", self.filename, tok.line, tok.col)
                lo, hi = out[-1], items[i + 1]
                if not (
                    isinstance(lo, Constant)
                    and isinstance(hi, Constant)
                    and isinstance(lo.value, int)
                    and isinstance(hi.value, int)
                    and lo.value < hi.value
                ):
                    raise Diagnostic("'...' needs an integer on both sides", self.filename, tok.line, tok.col)
                out.extend(Constant(v) for v in range(lo.value + 1, hi.value))
            else:
                out.append(item)
        return out

    # --- atoms, literals, bodies ---

    def _term_to_atom(self, t: Term, tok: Token) -> Atom:
        if isinstance(t, Constant) and isinstance(t.value, str) and t.value != EMPTY_LIST:
            return Atom(t.value)
        if isinstance(t, Compound):
            return Atom(t.functor, t.args)
        raise Diagnostic(f"expected an atom, found term {t!r}", self.filename, tok.line, tok.col)

    def parse_goal(self) -> Union[Literal, _NegConj]:
        tok = self.peek()
        if self.at("\\+"):
            self.next()
            if self.at("("):
                self.next()
                inner = [self._positive_goal()]
                while self.at(","):
                    self.next()
                    inner.append(self._positive_goal())
                self.expect(")")
                if len(inner) == 1:
                    return inner[0].negated()
                return _NegConj(inner)
            lit = self._positive_goal()
            return lit.negated()
        return self._positive_goal()

    def _positive_goal(self) -> Literal:
        tok = self.peek()
        lhs = self.parse_term()
        nxt = self.peek()
        if nxt.kind == "name" and nxt.text == "is":
            self.next()
            rhs = self.parse_term()
            return Literal(Atom("is", (lhs, rhs)))
        if nxt.kind == "sym" and nxt.text in ("<", ">", "=:="):
            self.next()
            rhs = self.parse_term()
            return Literal(Atom(nxt.text, (lhs, rhs)))
        return Literal(self._term_to_atom(lhs, tok))

    def parse_body(self) -> list[Union[Literal, _NegConj]]:
        body = [self.parse_goal()]
        while self.at(","):
            self.next()
            body.append(self.parse_goal())
        return body

    # --- labels ---

    def _parse_number_label(self) -> float:
        tok = self.next()
        if tok.kind != "num":
            raise self.error("expected a probability", tok)
        value = float(tok.value)
        if self.at("/"):
            self.next()
            denom = self.next()
            if denom.kind != "num":
                raise self.error("expected a denominator", denom)
            value = value / float(denom.value)
        return value

    def try_parse_label(self):
        """Return Fixed/Learnable/raw nn tuple if a '<label> ::' prefix is present."""
        save = self.pos
        tok = self.peek()
        try:
            if tok.kind == "num":
                p = self._parse_number_label()
                self.expect("::")
                return Fixed(p)
            if tok.kind == "name" and tok.text == "t" and self.peek(1).text == "(":
                self.next()
                self.next()
                p = self._parse_number_label()
                self.expect(")")
                self.expect("::")
                return Learnable(-1, p)
            if tok.kind == "name" and tok.text == "nn" and self.peek(1).text == "(":
                self.next()
                self.next()
                model_tok = self.next()
                if model_tok.kind != "name":
                    raise self.error("expected a model name", model_tok)
                self.expect(",")
                inputs_term = self.parse_list()
                from .terms import list_items

                inputs, tail = list_items(inputs_term)
                if not (isinstance(tail, Constant) and tail.value == EMPTY_LIST):
                    raise self.error("network inputs must be a proper list", model_tok)
                output_var = None
                domain = None
                if self.at(","):
                    self.next()
                    output_var = self.parse_term()
                    self.expect(",")
                    domain_term = self.parse_list()
                    dom_items, dtail = list_items(domain_term)
                    if not (isinstance(dtail, Constant) and dtail.value == EMPTY_LIST):
                        raise self.error("network domain must be a proper list", model_tok)
                    domain = tuple(dom_items)
                self.expect(")")
                self.expect("::")
                return ("nn", model_tok.text, tuple(inputs), output_var, domain, model_tok)
        except Diagnostic:
            self.pos = save
            return None
        return None

    # --- clauses ---

    def parse_clause(self):
        tok = self.peek()
        label = self.try_parse_label()
        if isinstance(label, tuple) and label[0] == "nn":
            _, model, inputs, output_var, domain, mtok = label
            head_tok = self.peek()
            head = self._term_to_atom(self.parse_term(), head_tok)
            if self.at(":-"):
                raise self.error("neural annotations cannot have a body", head_tok)
            self.expect(".")
            return NeuralAnnotation(model, inputs, output_var, domain, head, line=tok.line)
        if label is not None:
            heads: list = [(label, self._term_to_atom(self.parse_term(), tok))]
            while self.at(";"):
                self.next()
                if self.at("..."):
                    self.next()
                    heads.append(_ELLIPSIS)
                    continue
                lab2 = self.try_parse_label()
                if lab2 is None or isinstance(lab2, tuple):
                    raise self.error("expected 'probability :: atom' after ';'")
                heads.append((lab2, self._term_to_atom(self.parse_term(), self.peek())))
            body: list = []
            if self.at(":-"):
                self.next()
                body = self.parse_body()
            self.expect(".")
            heads = self._expand_head_ellipses(heads, tok)
            if len(heads) == 1 and not body:
                return ProbabilisticFact(heads[0][0], heads[0][1], line=tok.line)
            return AnnotatedDisjunction(tuple(heads), tuple(body), line=tok.line)
        head = self._term_to_atom(self.parse_term(), tok)
        body = []
        if self.at(":-"):
            self.next()
            body = self.parse_body()
        self.expect(".")
        return Rule(head, tuple(body), line=tok.line)

    def _expand_head_ellipses(self, heads: list, tok: Token) -> list:
        """Expand 'p::h(..,k) ; ... ; p::h(..,m)' by interpolating the single
        integer argument that differs between the neighbouring heads."""
        out: list = []
        for i, h in enumerate(heads):
            if h is not _ELLIPSIS:
                out.append(h)
                continue
            if not out or i + 1 >= len(heads) or heads[i + 1] is _ELLIPSIS:
                raise Diagnostic("'...' must sit between two annotated heads", self.filename, tok.line, tok.col)
            (lab_lo, lo), (lab_hi, hi) = out[-1], heads[i + 1]
            if lo.indicator != hi.indicator:
                raise Diagnostic("'...' heads must share predicate and arity", self.filename, tok.line, tok.col)
            diff = [
                k
                for k, (a, b) in enumerate(zip(lo.args, hi.args))
                if a != b
            ]
            ok = (
                len(diff) == 1
                and isinstance(lo.args[diff[0]], Constant)
                and isinstance(hi.args[diff[0]], Constant)
                and isinstance(lo.args[diff[0]].value, int)
                and isinstance(hi.args[diff[0]].value, int)
                and lo.args[diff[0]].value < hi.args[diff[0]].value
            )
            if not ok:
                raise Diagnostic(
                    "'...' heads must differ in one integer argument", self.filename, tok.line, tok.col
                )
            k = diff[0]
            for v in range(lo.args[k].value + 1, hi.args[k].value):
                args = lo.args[:k] + (Constant(v),) + lo.args[k + 1 :]
                out.append((lab_lo, Atom(lo.pred, args)))
        return out

    def parse_all(self) -> list:
        clauses = []
        while self.peek().kind != "eof":
            clauses.append(self.parse_clause())
        return clauses


# --- the lists library, injected when member/2 or select/3 are used but not defined ---

_LISTS_LIBRARY = """
member(X,[X|_]).
member(X,[_|T]) :- member(X,T).
select(X,[X|T],T).
select(X,[H|T],[H|T2]) :- select(X,T,T2).
"""


def _library_clauses() -> list[Rule]:
    parser = _Parser(_LISTS_LIBRARY, "<lists>")
    out = []
    for c in parser.parse_all():
        out.append(Rule(c.head, tuple(c.body), line=0))
    return out


def parse_program(source: str, filename: str = "<string>") -> Program:
    """Parse and validate program text; raises Diagnostic on the first error."""
    clauses = _Parser(source, filename).parse_all()
    return _load(clauses, filename)


def parse_query(text: str, filename: str = "<query>") -> Literal:
    """Parse a single query literal such as 'calls(mary)' or '\\+alarm'."""
    parser = _Parser(text, filename)
    goal = parser.parse_goal()
    if parser.peek().kind == "end":
        parser.next()
    if parser.peek().kind != "eof":
        raise parser.error("unexpected trailing input")
    if isinstance(goal, _NegConj):
        raise Diagnostic("a query must be a single literal", filename, 1, 1)
    return goal


def parse_term_text(text: str) -> Term:
    parser = _Parser(text, "<term>")
    t = parser.parse_term()
    if parser.peek().kind != "eof":
        raise parser.error("unexpected trailing input")
    return t


def _check_label_range(label, line: int, filename: str) -> None:
    p = label.p if isinstance(label, Fixed) else label.init
    if not (0.0 <= p <= 1.0):
        raise Diagnostic(f"probability {p} outside [0,1]", filename, line, 0)


def _load(clauses: list, filename: str) -> Program:
    rules: list[Rule] = []
    facts: list[ProbabilisticFact] = []
    ads: list[AnnotatedDisjunction] = []
    neurals: list[NeuralAnnotation] = []
    queries: list[Atom] = []
    evidence: list[tuple[Atom, bool]] = []
    aux_counter = 0

    def rewrite_body(head_atom: Optional[Atom], body: tuple, line: int) -> tuple[Literal, ...]:
        """Replace negated conjunctions with fresh auxiliary predicates.

        The auxiliary head carries only the variables shared with the rest of
        the clause; variables local to the conjunction stay existentially
        quantified inside the auxiliary rule."""
        nonlocal aux_counter
        outer: list = []
        if head_atom is not None:
            outer.extend(term_variables(head_atom))
        for item in body:
            if not isinstance(item, _NegConj):
                outer.extend(term_variables(item))
        outer_names = {v.name for v in outer}
        out: list[Literal] = []
        for item in body:
            if isinstance(item, _NegConj):
                aux_counter += 1
                shared = []
                for lit in item.literals:
                    for v in term_variables(lit):
                        if v.name in outer_names and v not in shared:
                            shared.append(v)
                head = Atom(f"$neg{aux_counter}", tuple(shared))
                rules.append(Rule(head, tuple(item.literals), line=line))
                out.append(Literal(head, positive=False))
            else:
                out.append(item)
        return tuple(out)

    for c in clauses:
        if isinstance(c, Rule):
            if c.head.pred == "query" and len(c.head.args) == 1 and not c.body:
                queries.append(_directive_atom(c.head.args[0], filename, c.line))
            elif c.head.pred == "evidence" and len(c.head.args) in (1, 2) and not c.body:
                atom = _directive_atom(c.head.args[0], filename, c.line)
                truth = True
                if len(c.head.args) == 2:
                    arg = c.head.args[1]
                    truth = not (isinstance(arg, Constant) and arg.value == "false")
                evidence.append((atom, truth))
            else:
                rules.append(Rule(c.head, rewrite_body(c.head, c.body, c.line), line=c.line))
        elif isinstance(c, ProbabilisticFact):
            _check_label_range(c.label, c.line, filename)
            facts.append(c)
        elif isinstance(c, AnnotatedDisjunction):
            for lab, _ in c.heads:
                _check_label_range(lab, c.line, filename)
            fixed_sum = sum(l.p for l, _ in c.heads if isinstance(l, Fixed))
            if fixed_sum > 1.0 + 1e-9:
                raise Diagnostic(f"AD probabilities sum to {fixed_sum} > 1", filename, c.line, 0)
            heads_ctx = Atom("$heads", tuple(Compound("$h", a.args) for _, a in c.heads))
            ads.append(AnnotatedDisjunction(c.heads, rewrite_body(heads_ctx, c.body, c.line), line=c.line))
        elif isinstance(c, NeuralAnnotation):
            if c.domain is not None:
                if not c.domain:
                    raise Diagnostic("empty network domain", filename, c.line, 0)
                for d in c.domain:
                    if term_variables(d):
                        raise Diagnostic("network domain must be ground", filename, c.line, 0)
                if len(set(c.domain)) != len(c.domain):
                    raise Diagnostic("duplicate values in network domain", filename, c.line, 0)
            neurals.append(c)
        else:  # pragma: no cover - parser only produces the four kinds above
            raise Diagnostic(f"unsupported clause {c!r}", filename, 0, 0)

    # Learnable slots: one per source label; heads of an all-learnable AD form
    # a group whose initial values are renormalized to sum to one.
    params: list[ParamInfo] = []
    facts2: list[ProbabilisticFact] = []
    for f in facts:
        if isinstance(f.label, Learnable):
            slot = len(params)
            params.append(ParamInfo(slot, f.label.init, "fact", None, print_atom(f.atom)))
            f = ProbabilisticFact(Learnable(slot, f.label.init), f.atom, f.line)
        facts2.append(f)
    ads2: list[AnnotatedDisjunction] = []
    for gi, ad in enumerate(ads):
        labels = [l for l, _ in ad.heads]
        if all(isinstance(l, Learnable) for l in labels) and labels:
            total = sum(l.init for l in labels)
            norm = [l.init / total if total > 0 else 1.0 / len(labels) for l in labels]
        else:
            norm = [l.init if isinstance(l, Learnable) else None for l in labels]
        heads2 = []
        for j, (lab, atom) in enumerate(ad.heads):
            if isinstance(lab, Learnable):
                slot = len(params)
                params.append(ParamInfo(slot, norm[j], "ad_head", gi, f"{print_atom(atom)}"))
                lab = Learnable(slot, norm[j])
            heads2.append((lab, atom))
        ads2.append(AnnotatedDisjunction(tuple(heads2), ad.body, ad.line))

    program = Program(
        rules=tuple(rules),
        facts=tuple(facts2),
        ads=tuple(ads2),
        neurals=tuple(neurals),
        queries=tuple(queries),
        evidence=tuple(evidence),
        params=tuple(params),
    )
    _inject_lists_library(program)
    _validate(program, filename)
    return program


def _directive_atom(t: Term, filename: str, line: int) -> Atom:
    if isinstance(t, Constant) and isinstance(t.value, str):
        return Atom(t.value)
    if isinstance(t, Compound):
        return Atom(t.functor, t.args)
    raise Diagnostic("directive argument must be an atom", filename, line, 0)


def _inject_lists_library(program: Program) -> None:
    used = _referenced_indicators(program)
    defined = program.defined_indicators()
    missing = {("member", 2), ("select", 3)} & used - defined
    if not missing:
        return
    extra = [r for r in _library_clauses() if r.head.indicator in missing]
    program.rules = program.rules + tuple(extra)
    Program.__post_init__(program)


def _referenced_indicators(program: Program) -> set[tuple[str, int]]:
    used: set[tuple[str, int]] = set()
    for r in program.rules:
        for lit in r.body:
            used.add(lit.atom.indicator)
    for ad in program.ads:
        for lit in ad.body:
            used.add(lit.atom.indicator)
    for q in program.queries:
        used.add(q.indicator)
    return used


def _validate(program: Program, filename: str) -> None:
    # A predicate may not be both neural and defined by rules/facts/ADs.
    defined_logic = set(program.rules_by_pred) | set(program.facts_by_pred) | set(program.ads_by_pred)
    for ind, anns in program.neurals_by_pred.items():
        if ind in defined_logic:
            line = anns[0][1].line
            raise Diagnostic(
                f"predicate {ind[0]}/{ind[1]} has both a neural annotation and a logic definition",
                filename,
                line,
                0,
            )
        if len(anns) > 1:
            raise Diagnostic(
                f"predicate {ind[0]}/{ind[1]} has multiple neural annotations", filename, anns[1][1].line, 0
            )
    # Arity sanity: a referenced predicate that is undefined at that arity but
    # defined at another one is almost certainly an arity bug.
    defined = program.defined_indicators()
    names = {}
    for name, arity in defined:
        names.setdefault(name, set()).add(arity)
    for name, arity in _referenced_indicators(program):
        if (name, arity) in BUILTIN_PREDS or (name, arity) in defined:
            continue
        if name in names:
            others = ",".join(str(a) for a in sorted(names[name]))
            raise Diagnostic(
                f"{name}/{arity} is used but {name} is only defined with arity {others}",
                filename,
                0,
                0,
            )
