"""World enumeration golden values and circuit/oracle equivalence.

The equivalence corpus drives the same ground program down two independent
paths: completion + Shannon compilation + semiring evaluation on one side,
possible-world enumeration with stratified fixpoint closure on the other.
"""

import zlib

import numpy as np
import pytest

from neurlog.compiler import compile_query
from neurlog.grounder import GroundOptions, canonical_key, ground_query
from neurlog.neural import NeuralBatch
from neurlog.oracle import (
    TooManyWorlds,
    WorldTable,
    enumerate_gradient,
    enumerate_probability,
    enumerate_worlds,
)
from neurlog.parser import parse_program, parse_query
from neurlog.semiring import evaluate, label_leaves

from conftest import batch_neural_fn, corpus_program, stub_registry


def atom(text):
    return parse_query(text).atom


# --- golden values ------------------------------------------------------------


def test_world_weight_burglary_hears_mary(alarm):
    # the world {burglary, hears_alarm(mary)} over all four facts
    gp = ground_query(alarm, [atom("calls(mary)"), atom("calls(john)")])
    want = {canonical_key(atom("burglary")), canonical_key(atom("hears_alarm(mary)"))}
    fact_keys = {canonical_key(f.atom) for f in gp.facts}
    weights = [
        w
        for truth, w in enumerate_worlds(gp)
        if truth & fact_keys == want
    ]
    assert len(weights) == 1
    assert abs(weights[0] - 0.024) < 1e-12


def test_alarm_probability(alarm):
    gp = ground_query(alarm, atom("calls(mary)"))
    assert abs(enumerate_probability(gp, atom("calls(mary)")) - 0.14) < 1e-12


def test_query_true_in_no_world(alarm):
    gp = ground_query(alarm, atom("ghost"))
    assert enumerate_probability(gp, atom("ghost")) == 0.0


def test_world_weights_sum_to_one(alarm):
    gp = ground_query(alarm, [atom("calls(mary)"), atom("calls(john)")])
    total = sum(w for _, w in enumerate_worlds(gp))
    assert abs(total - 1.0) < 1e-12


def test_gradients_match_paper(alarm_learnable):
    gp = ground_query(alarm_learnable, atom("calls(mary)"))
    slots = {alarm_learnable.params[i].name: ("p", i) for i in range(2)}
    g_e = enumerate_gradient(gp, atom("calls(mary)"), slots["earthquake"])
    g_b = enumerate_gradient(gp, atom("calls(mary)"), slots["burglary"])
    assert abs(g_e - 0.45) < 1e-4
    assert abs(g_b - 0.40) < 1e-4


def test_absent_slot_gradient_is_zero(alarm_learnable):
    gp = ground_query(alarm_learnable, atom("calls(mary)"))
    assert enumerate_gradient(gp, atom("calls(mary)"), ("p", 99)) == 0.0


def test_too_many_worlds():
    lines = "\n".join(f"0.5::f{i}." for i in range(25))
    body = ", ".join(f"f{i}" for i in range(25))
    p = parse_program(f"{lines}\nbig :- {body}.")
    gp = ground_query(p, atom("big"))
    with pytest.raises(TooManyWorlds):
        enumerate_probability(gp, atom("big"), limit=2**20)


# --- the equivalence corpus ------------------------------------------------------

LISTING_QUERIES = [
    ("alarm.pl", "calls(mary)"),
    ("alarm.pl", "calls(john)"),
    ("alarm_learnable.pl", "calls(mary)"),
    ("t1_addition.pl", "addition(a,b,0)"),
    ("t1_addition.pl", "addition(a,b,8)"),
    ("t1_addition.pl", "addition(a,b,18)"),
    ("t2_multi_addition.pl", "multi_addition([a,b],[c],38)"),
    ("t3_all_digits.pl", "addition(a,b,c)"),
    ("t4_noisy_addition.pl", "addition(a,b,1)"),
    ("t4_noisy_addition.pl", "addition(a,b,9)"),
    ("t5_forth_addition.pl", "forth_addition([4],[8],1,[1,3])"),
    ("t5_forth_addition.pl", "forth_addition([2,4],[3,8],1,[0,6,3])"),
    ("t6_forth_sort.pl", "forth_sort([2,1],[1,2])"),
    ("t6_forth_sort.pl", "forth_sort([8,2,4],[2,4,8])"),
    ("t7_wap.pl", "wap(txt,3,5,2,16)"),
    ("t8_coins.pl", "coins(img,same)"),
    ("t8_coins.pl", "coins(img,different)"),
    ("t9_poker.pl", "game([c1,c2,c3,c4],loss)"),
    ("t9_poker.pl", "game([c1,c2,c3,c4],win)"),
    ("t9_poker.pl", "game([c1,c2,c3,c4],ace,win)"),
]


def _check_program_against_oracle(program, query, registry, tol_p=1e-9, tol_g=1e-4):
    batch = NeuralBatch(registry)
    neural_fn = batch_neural_fn(batch)
    compiled = compile_query(program, query, GroundOptions(step_limit=500_000), debug_checks=True)
    labels = label_leaves(compiled, registry, batch)
    result = evaluate(compiled, labels)
    gp = compiled.ground_program
    table = WorldTable(gp, gp.queries, param_fn=registry.param_value, neural_fn=neural_fn)
    oracle_p = sum(table.probability(i) for i in range(len(gp.queries)))
    assert abs(result.p - oracle_p) < tol_p, f"P mismatch: {result.p} vs {oracle_p}"
    for slot in sorted(result.grad, key=str):
        grad = result.grad[slot]
        if slot[0] == "p":
            key = slot
        else:
            eval_id, index = slot[1], slot[2]
            info = batch.evals[eval_id]
            key = (
                "nn",
                info["model"],
                tuple(canonical_key(t) for t in info["terms"]),
                index,
            )
        fd = sum(table.gradient(i, key) for i in range(len(gp.queries)))
        assert abs(fd - grad) < tol_g * max(1.0, abs(grad)), f"grad mismatch at {slot}"


@pytest.mark.parametrize("name,query", LISTING_QUERIES)
def test_listing_against_oracle(name, query):
    program = corpus_program(name)
    registry = stub_registry(program, seed=zlib.crc32((name + query).encode()) % 1000)
    _check_program_against_oracle(program, parse_query(query).atom, registry)


def random_program(rng):
    """A random propositional program with <= 12 choices, rules and negation."""
    lines = []
    n_facts = int(rng.integers(3, 7))
    for i in range(n_facts):
        p = round(float(rng.uniform(0.05, 0.95)), 3)
        if rng.random() < 0.4:
            lines.append(f"t({p})::f{i}.")
        else:
            lines.append(f"{p}::f{i}.")
    n_ad = int(rng.integers(0, 3))
    for a in range(n_ad):
        k = int(rng.integers(2, 4))
        ps = rng.dirichlet(np.ones(k)) * rng.uniform(0.6, 1.0)
        heads = "; ".join(f"{round(float(ps[j]), 3)}::h{a}_{j}" for j in range(k))
        if rng.random() < 0.3:
            lines.append(f"{heads} :- f0.")
        else:
            lines.append(f"{heads}.")
    atoms = [f"f{i}" for i in range(n_facts)] + [
        f"h{a}_{j}" for a in range(n_ad) for j in range(2)
    ]
    n_derived = int(rng.integers(2, 5))
    for d in range(n_derived):
        for _ in range(int(rng.integers(1, 3))):
            size = int(rng.integers(1, 4))
            body = []
            for _ in range(size):
                target = atoms[int(rng.integers(0, len(atoms)))]
                body.append(f"\\+{target}" if rng.random() < 0.3 else target)
            lines.append(f"d{d} :- {', '.join(body)}.")
        atoms.append(f"d{d}")
    return "\n".join(lines), f"d{n_derived - 1}"


@pytest.mark.parametrize("seed", range(15))
def test_random_program_against_oracle(seed):
    rng = np.random.default_rng(seed + 400)
    source, query = random_program(rng)
    program = parse_program(source)
    registry = stub_registry(program, seed)
    _check_program_against_oracle(program, atom(query), registry)


def test_guarded_ad_heads_fire_only_with_their_body():
    source = "0.4::h(a); 0.5::h(b) :- c.\n0.7::c.\nq :- h(a).\nnq :- \\+h(a).\n"
    program = parse_program(source)
    for query, expected in (("q", 0.28), ("nq", 0.72)):
        compiled = compile_query(program, atom(query), debug_checks=True)
        labels = label_leaves(compiled, None)
        got = evaluate(compiled, labels).p
        oracle = enumerate_probability(compiled.ground_program, atom(query))
        assert abs(got - expected) < 1e-12
        assert abs(oracle - expected) < 1e-12
