import numpy as np
import pytest

from neurlog.experiments import load_corpus_program
from neurlog.neural import ModelRegistry, NeuralBatch, TableModel
from neurlog.parser import parse_program

ALARM = """
0.2::earthquake.
0.1::burglary.
0.5::hears_alarm(mary).
0.4::hears_alarm(john).
alarm :- earthquake.
alarm :- burglary.
calls(X) :- alarm, hears_alarm(X).
"""

ALARM_LEARNABLE = ALARM.replace("0.2::earthquake", "t(0.2)::earthquake").replace(
    "0.1::burglary", "t(0.1)::burglary"
)


@pytest.fixture
def alarm():
    return parse_program(ALARM)


@pytest.fixture
def alarm_learnable():
    return parse_program(ALARM_LEARNABLE)


def corpus_program(name: str):
    return load_corpus_program(name)


def stub_registry(program, seed=0):
    """Registry whose networks are deterministic pseudo-random lookup tables."""
    rng = np.random.default_rng(seed)
    registry = ModelRegistry(seed=seed)
    registry.register_program_params(program)
    for ann in program.neurals:
        n = len(ann.domain) if ann.domain is not None else 1
        memo = {}
        if ann.domain is not None:

            def fn(terms, n=n, rng=rng, memo=memo):
                key = tuple(str(t) for t in terms)
                if key not in memo:
                    v = rng.random(n) + 0.1
                    memo[key] = v / v.sum()
                return memo[key]

        else:

            def fn(terms, rng=rng, memo=memo):
                key = tuple(str(t) for t in terms)
                if key not in memo:
                    memo[key] = [float(0.1 + 0.8 * rng.random())]
                return memo[key]

        registry.register_model(ann.model, TableModel(fn, n))
    return registry


def batch_neural_fn(batch: NeuralBatch):
    def fn(model, inputs):
        _, probs = batch.forward(model, inputs)
        return probs

    return fn
