"""Parser and printer: round trips, surface sugar, diagnostics, corpus counts."""

import pytest
from hypothesis import given, settings, strategies as st

from neurlog.parser import Diagnostic, parse_program, parse_query, parse_term_text
from neurlog.terms import (
    Atom,
    Compound,
    Constant,
    Fixed,
    Variable,
    make_list,
    print_program,
    print_term,
)

from conftest import corpus_program


# --- term round trips -------------------------------------------------------

constants = st.one_of(
    st.sampled_from(["a", "b", "foo", "mnist_3", "x1"]).map(Constant),
    st.integers(-50, 50).map(Constant),
)
variables = st.sampled_from(["X", "Y", "Zed", "_G9", "Input"]).map(Variable)


def compounds(children):
    plain = st.builds(
        Compound,
        st.sampled_from(["f", "g", "digit", "card"]),
        st.lists(children, min_size=1, max_size=3).map(tuple),
    )
    ops = st.builds(
        Compound,
        st.sampled_from(["+", "-", "*", "//", "mod"]),
        st.lists(children, min_size=2, max_size=2).map(tuple),
    )
    lists_ = st.lists(children, min_size=0, max_size=3).map(make_list)
    return st.one_of(plain, ops, lists_)


terms = st.recursive(st.one_of(constants, variables), compounds, max_leaves=25)


@given(terms)
@settings(max_examples=300, deadline=None)
def test_parse_print_roundtrip(t):
    assert parse_term_text(print_term(t)) == t


def test_roundtrip_examples():
    assert print_term(Compound("addition", (Constant("a"), Constant("b"), Constant(1)))) == "addition(a,b,1)"
    assert print_term(make_list([Constant(4)])) == "[4]"
    assert print_term(Variable("X")) == "X"
    nested = parse_term_text("[[2,4],[1,3]|T]")
    assert parse_term_text(print_term(nested)) == nested


def test_arith_precedence_roundtrip():
    t = parse_term_text("1+2*3")
    assert t == Compound("+", (Constant(1), Compound("*", (Constant(2), Constant(3)))))
    t2 = parse_term_text("(1+2)*3")
    assert parse_term_text(print_term(t2)) == t2
    assert print_term(t2) == "(1+2)*3"


# --- program parsing --------------------------------------------------------


def test_probabilistic_fact():
    p = parse_program("0.1::burglary.")
    assert len(p.facts) == 1
    assert p.facts[0].label == Fixed(0.1)
    assert p.facts[0].atom == Atom("burglary")


def test_neural_annotation_with_range():
    p = parse_program("nn(m_digit,[X],Y,[0,...,9]) :: digit(X,Y).")
    ann = p.neurals[0]
    assert ann.model == "m_digit"
    assert ann.domain == tuple(Constant(i) for i in range(10))
    assert not ann.is_fact


def test_neural_fact_form():
    p = parse_program("nn(m_swap, [X,Y]) :: swap(X,Y).")
    assert p.neurals[0].is_fact
    assert p.neurals[0].inputs == (Variable("X"), Variable("Y"))


def test_empty_program():
    p = parse_program("")
    assert not p.rules and not p.facts and not p.ads and not p.neurals


def test_ad_ellipsis_expansion():
    p = parse_program("1/19 :: uniform(X,Y,0) ; ... ; 1/19 :: uniform(X,Y,18).")
    assert len(p.ads[0].heads) == 19
    labels = {l.p for l, _ in p.ads[0].heads}
    assert labels == {1.0 / 19.0}
    assert p.ads[0].heads[7][1].args[2] == Constant(7)


def test_fraction_label():
    p = parse_program("1/4::coin.")
    assert p.facts[0].label == Fixed(0.25)


def test_learnable_ad_renormalized_at_load():
    p = parse_program("t(0.3)::a; t(0.3)::b.")
    inits = [l.init for l, _ in p.ads[0].heads]
    assert inits == [0.5, 0.5]
    assert [pi.init for pi in p.params] == [0.5, 0.5]


def test_queries_and_evidence_directives():
    p = parse_program("0.5::f.\nquery(f).\nevidence(f,false).")
    assert p.queries == (Atom("f"),)
    assert p.evidence == ((Atom("f"), False),)


def test_program_roundtrip_through_printer():
    src = "0.2::earthquake.\nt(0.5)::noisy.\nalarm :- earthquake.\ncalls(X) :- alarm, \\+noisy.\n"
    p = parse_program(src)
    p2 = parse_program(print_program(p))
    assert print_program(p2) == print_program(p)


# --- diagnostics ------------------------------------------------------------


def test_syntax_error_has_location():
    with pytest.raises(Diagnostic) as err:
        parse_program("alarm :- .")
    assert err.value.line == 1
    assert err.value.col >= 9


def test_probability_out_of_range():
    with pytest.raises(Diagnostic, match="outside"):
        parse_program("1.5::f.")


def test_ad_sum_above_one_rejected():
    with pytest.raises(Diagnostic, match="sum"):
        parse_program("0.7::a; 0.6::b.")


def test_neural_and_rule_dual_definition_rejected():
    with pytest.raises(Diagnostic, match="neural"):
        parse_program("nn(m,[X],Y,[0,1])::digit(X,Y).\ndigit(a,0).")


def test_arity_clash_detected():
    with pytest.raises(Diagnostic, match="arity"):
        parse_program("p(a).\nq :- p(a,b).")


def test_variable_in_ad_probability_rejected():
    with pytest.raises(Diagnostic):
        parse_program("P::f :- g.")


# --- corpus listings ----------------------------------------------------------

CORPUS_COUNTS = {
    # file: (rules incl. injected library/aux, facts, ads, neural annotations)
    "alarm.pl": (3, 4, 0, 0),
    "t1_addition.pl": (1, 0, 0, 1),
    "t2_multi_addition.pl": (4, 0, 0, 1),
    "t3_all_digits.pl": (1, 0, 0, 1),
    "t4_noisy_addition.pl": (2, 1, 1, 1),
    "t5_forth_addition.pl": (4, 0, 0, 2),
    "t6_forth_sort.pl": (7, 0, 0, 1),
    "t7_wap.pl": (13, 0, 0, 4),
    "t8_coins.pl": (3, 0, 0, 2),
    "t9_poker.pl": (31, 0, 1, 1),
}


@pytest.mark.parametrize("name,counts", sorted(CORPUS_COUNTS.items()))
def test_corpus_listing_parses(name, counts):
    p = corpus_program(name)
    assert (len(p.rules), len(p.facts), len(p.ads), len(p.neurals)) == counts


def test_t4_uniform_ad_has_19_heads():
    p = corpus_program("t4_noisy_addition.pl")
    assert len(p.ads[0].heads) == 19


def test_t9_lists_library_injected():
    p = corpus_program("t9_poker.pl")
    assert ("member", 2) in p.rules_by_pred
    assert ("select", 3) in p.rules_by_pred


def test_query_literal_parsing():
    lit = parse_query("\\+calls(mary)")
    assert not lit.positive
    assert lit.atom == Atom("calls", (Constant("mary"),))


def test_variable_ad_head_probability_rejected():
    with pytest.raises(Diagnostic):
        parse_program("0.5::a ; Q::b.")
