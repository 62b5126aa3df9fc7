"""Losses, infoloss, gradient routing, the trainer loop and accuracy modes."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurlog.compiler import compile_query
from neurlog.learning import (
    EmptyDataset,
    EvalSpec,
    LearningError,
    MetricsWriter,
    TrainExample,
    Trainer,
    TrainerConfig,
    abstract_query,
    infoloss,
    loss_and_grad,
)
from neurlog.neural import (
    Adam,
    LayerSpec,
    ModelRegistry,
    NeuralBatch,
    TableModel,
    VectorEncoder,
)
from neurlog.parser import parse_program, parse_query
from neurlog.semiring import evaluate, label_leaves
from neurlog.terms import Atom, Constant

from conftest import corpus_program


def atom(text):
    return parse_query(text).atom


# --- losses -----------------------------------------------------------------------


def test_nll_of_one_is_zero():
    value, grad = loss_and_grad("nll", 1.0, 1.0)
    assert value == 0.0
    assert grad == -1.0


def test_mse_at_target():
    value, grad = loss_and_grad("mse", 0.8, 0.8)
    assert value == 0.0 and grad == 0.0


def test_cross_entropy_at_half():
    value, _ = loss_and_grad("cross_entropy", 0.5, 1.0)
    assert abs(value - math.log(2.0)) < 1e-12


def test_loss_floor_avoids_log_zero():
    value, grad = loss_and_grad("nll", 0.0, 1.0)
    assert math.isfinite(value) and math.isfinite(grad)


# --- infoloss ----------------------------------------------------------------------


def test_infoloss_uniform_is_zero():
    value, _ = infoloss(np.full(10, 0.1))
    assert abs(value) < 1e-12


def test_infoloss_onehot_is_one():
    one_hot = np.zeros(10)
    one_hot[3] = 1.0
    value, _ = infoloss(one_hot)
    assert abs(value - 1.0) < 1e-12


def test_infoloss_binary_value():
    # independent evaluation of 1 - H2([0.75, 0.25])
    expected = 1.0 - (-(0.75 * math.log2(0.75) + 0.25 * math.log2(0.25)))
    value, _ = infoloss(np.array([0.75, 0.25]))
    assert abs(value - expected) < 1e-12
    assert abs(value - 0.18872187554086717) < 1e-12


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8))
@settings(max_examples=100, deadline=None)
def test_infoloss_bounded(raw):
    mean = np.array(raw) / sum(raw)
    value, _ = infoloss(mean)
    assert -1e-12 <= value <= 1.0 + 1e-12


def test_infoloss_gradient_matches_finite_difference():
    mean = np.array([0.6, 0.3, 0.1])
    _, grad = infoloss(mean)
    h = 1e-7
    for i in range(3):
        up, down = mean.copy(), mean.copy()
        up[i] += h
        down[i] -= h
        fd = (infoloss(up)[0] - infoloss(down)[0]) / (2 * h)
        assert abs(fd - grad[i]) < 1e-5


# --- probabilistic parameter training ---------------------------------------------------


def single_fact_trainer(init=0.3, lr=0.1, loss="nll"):
    program = parse_program(f"t({init})::f.")
    registry = ModelRegistry()
    registry.register_program_params(program)
    config = TrainerConfig(batch_size=1, epochs=1, prob_lr=lr, loss=loss, seed=0)
    return program, registry, Trainer(program, registry, config)


def test_single_learnable_fact_nll_step():
    # d(-log p)/dp = -1/p at p=0.3 -> p + lr/p = 0.3 + 0.1/0.3
    _, registry, trainer = single_fact_trainer()
    trainer.train_step([TrainExample(atom("f"), target=1.0)])
    assert abs(registry.param_value(0) - (0.3 + 0.1 / 0.3)) < 1e-12


def test_saturated_example_changes_nothing():
    program = parse_program("t(0.4)::f.\nq.")
    registry = ModelRegistry()
    registry.register_program_params(program)
    trainer = Trainer(program, registry, TrainerConfig(batch_size=1, loss="nll"))
    trainer.train_step([TrainExample(atom("q"), target=1.0)])  # P(q)=1 already
    assert registry.param_value(0) == 0.4


@pytest.mark.parametrize("loss", ["nll", "cross_entropy", "mse"])
def test_one_step_loss_decrease(loss):
    program, registry, trainer = single_fact_trainer(init=0.5, lr=0.01, loss=loss)
    example = TrainExample(atom("f"), target=1.0)
    before, _ = loss_and_grad(loss, trainer.example_probability(example), 1.0)
    trainer.train_step([example])
    after, _ = loss_and_grad(loss, trainer.example_probability(example), 1.0)
    assert after < before


def test_gradient_routing_completeness():
    """Every slot in the circuit root gradient reaches a parameter or a seed."""
    program = corpus_program("t4_noisy_addition.pl")
    registry = ModelRegistry()
    registry.register_program_params(program)
    registry.register_model("classifier", TableModel(lambda t: [0.1] * 10, 10))
    batch = NeuralBatch(registry)
    compiled = compile_query(program, atom("addition(a,b,3)"))
    value = evaluate(compiled, label_leaves(compiled, registry, batch))
    routed_prob, routed_seeds = {}, {}
    for slot, g in value.grad.items():
        if slot[0] == "p":
            routed_prob[slot[1]] = g
        else:
            routed_seeds[(slot[1], slot[2])] = g
    assert set(routed_prob) == {0}  # the noisy parameter
    assert len(routed_seeds) == len([s for s in value.grad if s[0] == "n"])
    assert len(routed_prob) + len(routed_seeds) == len(value.grad)


def test_batch_failure_reports_example():
    program = parse_program("t(0.5)::f.\nloop :- loop2.\nloop2 :- loop.")
    registry = ModelRegistry()
    registry.register_program_params(program)
    trainer = Trainer(program, registry, TrainerConfig(batch_size=1))
    with pytest.raises(LearningError, match="loop"):
        trainer.train_step([TrainExample(atom("loop"))])


def test_empty_dataset_errors():
    _, _, trainer = single_fact_trainer()
    with pytest.raises(EmptyDataset):
        trainer.train([])
    with pytest.raises(EmptyDataset):
        trainer.evaluate_accuracy([], EvalSpec("candidates", 0, (Constant(0),)))


# --- end-to-end gradient checks -----------------------------------------------------------


def test_alarm_learnable_full_gradient_check(alarm_learnable):
    registry = ModelRegistry()
    registry.register_program_params(alarm_learnable)
    compiled = compile_query(alarm_learnable, atom("calls(mary)"))

    def loss_at(values):
        class P:
            def param_value(self, slot):
                return values[slot]

        p = evaluate(compiled, label_leaves(compiled, P(), with_grad=False)).p
        return loss_and_grad("nll", p, 1.0)[0]

    value = evaluate(compiled, label_leaves(compiled, registry))
    _, dloss_dp = loss_and_grad("nll", value.p, 1.0)
    base = {i: registry.param_value(i) for i in range(2)}
    h = 1e-6
    for slot, partial in value.grad.items():
        grad_loss = dloss_dp * partial
        up = dict(base)
        up[slot[1]] += h
        down = dict(base)
        down[slot[1]] -= h
        fd = (loss_at(up) - loss_at(down)) / (2 * h)
        assert abs(fd - grad_loss) / max(abs(grad_loss), 1e-9) < 1e-3


def addition_pipeline_registry(hidden=(8, 6), seed=11):
    program = corpus_program("t1_addition.pl")
    items = {
        "d0": np.array([1.0, 0.2, 0.1, 0.5]),
        "d1": np.array([0.1, 0.9, 0.3, 0.2]),
    }
    registry = ModelRegistry(seed=seed)
    registry.register_program_params(program)
    registry.register_mlp(
        "m_digit",
        4,
        [LayerSpec(h, "relu" if i == 0 else "tanh") for i, h in enumerate(hidden)],
        "softmax",
        10,
        VectorEncoder(items),
        Adam(1e-3),
    )
    return program, registry


def pipeline_loss(program, registry, query, loss="nll"):
    batch = NeuralBatch(registry)
    compiled = compile_query(program, query)
    value = evaluate(compiled, label_leaves(compiled, registry, batch))
    return loss_and_grad(loss, value.p, 1.0), value, batch, compiled


def test_addition_pipeline_neural_gradient_check():
    """Finite differences over every network weight match backprop through
    the circuit within relative error 1e-3."""
    program, registry = addition_pipeline_registry()
    model = registry.model("m_digit")
    query = atom("addition(d0,d1,1)")
    (loss, dloss_dp), value, batch, compiled = pipeline_loss(program, registry, query)
    model.zero_grad()
    for slot, partial in value.grad.items():
        assert slot[0] == "n"
        batch.add_seed(slot[1], slot[2], dloss_dp * partial)
    batch.backward()

    def loss_now():
        (l, _), _, _, _ = pipeline_loss(program, registry, query)
        return l

    h = 1e-5
    checked = 0
    for w, g in zip(model.weights + model.biases, model.grad_w + model.grad_b):
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = w[idx]
            w[idx] = old + h
            up = loss_now()
            w[idx] = old - h
            down = loss_now()
            w[idx] = old
            fd = (up - down) / (2 * h)
            got = g[idx]
            if abs(fd) > 1e-7 or abs(got) > 1e-7:
                assert abs(fd - got) / max(abs(fd), abs(got), 1e-6) < 1e-3
                checked += 1
    assert checked > 50


# --- trainer loop, metrics, reproducibility -------------------------------------------------


def tiny_addition_setup(seed=0):
    program = corpus_program("t1_addition.pl")
    rng = np.random.default_rng(42)
    items = {f"k{i}": rng.random(6) for i in range(8)}
    labels = {f"k{i}": i % 3 for i in range(8)}
    registry = ModelRegistry(seed=seed)
    registry.register_program_params(program)
    registry.register_mlp(
        "m_digit", 6, [LayerSpec(8)], "softmax", 10, VectorEncoder(items), Adam(0.01)
    )
    examples = []
    keys = list(items)
    for i in range(0, 8, 2):
        a, b = keys[i], keys[i + 1]
        total = labels[a] + labels[b]
        q = Atom("addition", (Constant(a), Constant(b), Constant(total)))
        t = abstract_query(q, set(items))
        examples.append(TrainExample(t.query, 1.0, t.bindings, {"sum": total}))
    return program, registry, examples, items


def test_train_writes_metrics_and_csv(tmp_path):
    program, registry, examples, _ = tiny_addition_setup()
    config = TrainerConfig(batch_size=2, epochs=2, loss="nll", seed=3)
    trainer = Trainer(program, registry, config)
    metrics = MetricsWriter(tmp_path / "metrics.jsonl")
    spec = EvalSpec("candidates", 2, tuple(Constant(i) for i in range(19)))
    summary = trainer.train(examples, examples, spec, metrics)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == len(metrics.rows)
    parsed = [json.loads(l) for l in lines]
    assert all("loss" in row and "iteration" in row for row in parsed)
    assert "accuracy" in parsed[-1]
    metrics.write_summary_csv(tmp_path / "summary.csv")
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert header.startswith("iteration,loss,accuracy")
    assert summary["iterations"] == 4


def test_reproducibility_same_seed_identical_metrics(tmp_path):
    rows = []
    for run in range(2):
        program, registry, examples, _ = tiny_addition_setup(seed=9)
        config = TrainerConfig(batch_size=2, epochs=2, loss="nll", seed=5)
        trainer = Trainer(program, registry, config)
        metrics = MetricsWriter(tmp_path / f"m{run}.jsonl")
        trainer.train(examples, metrics=metrics)
        rows.append((tmp_path / f"m{run}.jsonl").read_text())
    assert rows[0] == rows[1]


def test_accuracy_candidates_tie_breaks_lowest():
    program = corpus_program("t1_addition.pl")
    registry = ModelRegistry()
    registry.register_program_params(program)
    registry.register_model("m_digit", TableModel(lambda t: [0.1] * 10, 10))
    trainer = Trainer(program, registry, TrainerConfig(batch_size=1))
    # uniform digits: P(sum=9) maximal and unique; ties elsewhere go lowest
    example = TrainExample(atom("addition(a,b,9)"))
    spec = EvalSpec("candidates", 2, tuple(Constant(i) for i in range(19)))
    assert trainer.evaluate_accuracy([example], spec) == 1.0
    example2 = TrainExample(atom("addition(a,b,0)"))
    assert trainer.evaluate_accuracy([example2], spec) == 0.0


def test_accuracy_readout_forth_addition():
    program = corpus_program("t5_forth_addition.pl")
    registry = ModelRegistry()

    def result_fn(terms):
        d1, d2, c = (t.value for t in terms)
        out = [0.0] * 10
        out[(d1 + d2 + c) % 10] = 1.0
        return out

    def carry_fn(terms):
        d1, d2, c = (t.value for t in terms)
        return [0.0, 1.0] if d1 + d2 + c >= 10 else [1.0, 0.0]

    registry.register_model("m_result", TableModel(result_fn, 10))
    registry.register_model("m_carry", TableModel(carry_fn, 2))
    trainer = Trainer(program, registry, TrainerConfig(batch_size=1))
    examples = [
        TrainExample(atom("forth_addition([4],[8],1,[1,3])")),
        TrainExample(atom("forth_addition([2,4],[3,8],0,[0,6,2])")),
        TrainExample(atom("forth_addition([9,9],[9,9],1,[1,9,9])")),
    ]
    spec = EvalSpec("readout", 3)
    assert trainer.evaluate_accuracy(examples, spec) == 1.0
    wrong = [TrainExample(atom("forth_addition([4],[8],1,[0,3])"))]
    assert trainer.evaluate_accuracy(wrong, spec) == 0.0


def test_untrained_uniform_net_gives_chance_accuracy():
    """A zero-weight (uniform) digit network predicts the modal sum for every
    pair, so accuracy sits at the modal frequency: 0.1 within 3 binomial sigma."""
    from neurlog.datasets import digit_items, make_pair_dataset, synthetic_digits
    from neurlog.neural import VectorEncoder

    program = corpus_program("t1_addition.pl")
    vectors, labels = synthetic_digits(800, seed=21)
    items = digit_items(vectors)
    examples = make_pair_dataset(items, labels, 400, seed=2)
    registry = ModelRegistry(seed=0)
    registry.register_program_params(program)
    model = registry.register_mlp(
        "m_digit", 784, [], "softmax", 10, VectorEncoder(items)
    )
    for w in model.weights:
        w.fill(0.0)
    trainer = Trainer(program, registry, TrainerConfig(batch_size=1))
    spec = EvalSpec("candidates", 2, tuple(Constant(i) for i in range(19)))
    accuracy = trainer.evaluate_accuracy(examples, spec)
    chance = 0.1  # P(sum == 9) for uniform digit pairs
    sigma = math.sqrt(chance * (1 - chance) / len(examples))
    assert abs(accuracy - chance) <= 3 * sigma


def test_infoloss_regularizer_reaches_network():
    """With a collapsed batch mean, the infoloss term must push gradients into
    the network even when the task loss is flat."""
    program, registry, examples, items = tiny_addition_setup(seed=4)
    model = registry.model("m_digit")
    config_plain = TrainerConfig(batch_size=4, epochs=1, loss="nll", seed=1)
    config_reg = TrainerConfig(
        batch_size=4, epochs=1, loss="nll", seed=1, infoloss=(("m_digit", 8.0),)
    )
    start = [w.copy() for w in model.weights]
    Trainer(program, registry, config_plain).train_step(examples)
    plain = [w.copy() for w in model.weights]
    for w, s in zip(model.weights, start):
        w[...] = s
    Trainer(program, registry, config_reg).train_step(examples)
    regularized = [w.copy() for w in model.weights]
    assert any(not np.allclose(a, b) for a, b in zip(plain, regularized))


def test_zero_target_pushes_probability_down():
    program = parse_program("t(0.7)::f.")
    registry = ModelRegistry()
    registry.register_program_params(program)
    trainer = Trainer(program, registry, TrainerConfig(batch_size=1, prob_lr=0.05, loss="cross_entropy"))
    for _ in range(20):
        trainer.train_step([TrainExample(atom("f"), target=0.0)])
    assert registry.param_value(0) < 0.15


def test_fractional_target_converges_to_target():
    program = parse_program("t(0.5)::f.")
    registry = ModelRegistry()
    registry.register_program_params(program)
    trainer = Trainer(program, registry, TrainerConfig(batch_size=1, prob_lr=0.2, loss="mse"))
    for _ in range(200):
        trainer.train_step([TrainExample(atom("f"), target=0.8)])
    assert abs(registry.param_value(0) - 0.8) < 1e-3
