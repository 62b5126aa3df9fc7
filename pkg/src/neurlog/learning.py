"""Learning from entailment: each training example is a query with a target
success probability.  A training step grounds (or cache-hits) the example's
abstract query, runs the relevant network forward passes, evaluates the
circuit under the gradient semiring, scales the per-slot partials by
dLoss/dP(q), and routes them to the probabilistic parameters (SGD) and to the
network gradient seeds (backprop + Adam).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .compiler import CircuitCache, CompiledQuery
from .grounder import GroundOptions, readout_answers
from .neural import ModelRegistry, NeuralBatch
from .semiring import evaluate, label_leaves, substitute_bindings
from .terms import Atom, Constant, NeurlogError, Program, Term, print_atom

PROB_FLOOR = 1e-12


class LearningError(NeurlogError):
    pass


class EmptyDataset(LearningError):
    pass


# --- losses ---------------------------------------------------------------------


def loss_and_grad(kind: str, p: float, target: float) -> tuple[float, float]:
    """Loss value and dLoss/dP for one example."""
    p_floor = max(p, PROB_FLOOR)
    if kind == "nll":
        return -math.log(p_floor), -1.0 / p_floor
    if kind == "cross_entropy":
        q_floor = max(1.0 - p, PROB_FLOOR)
        value = -target * math.log(p_floor) - (1.0 - target) * math.log(q_floor)
        grad = -target / p_floor + (1.0 - target) / q_floor
        return value, grad
    if kind == "mse":
        return (p - target) ** 2, 2.0 * (p - target)
    raise LearningError(f"unknown loss {kind}")


def infoloss(mean_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - H_n(mean batch output), with H_n the base-n entropy.

    Returns the value and its gradient with respect to the mean distribution;
    0 for a uniform mean, 1 for a one-hot mean.
    """
    n = len(mean_probs)
    if n < 2:
        raise LearningError("infoloss needs a softmax head with at least 2 classes")
    log_n = math.log(n)
    clipped = np.clip(mean_probs, PROB_FLOOR, 1.0)
    entropy = -float(np.sum(mean_probs * np.log(clipped))) / log_n
    value = 1.0 - entropy
    grad = (1.0 + np.log(clipped)) / log_n
    return value, grad


# --- examples ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainExample:
    """A query template with placeholder bindings and a target probability.

    ``query`` may contain placeholder constants that ``bindings`` maps to
    dataset keys; queries that share a template reuse one compiled circuit.
    """

    query: Atom
    target: float = 1.0
    bindings: dict[str, str] = field(default_factory=dict, hash=False, compare=False)
    meta: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self) -> None:
        if not (0.0 <= self.target <= 1.0):
            raise LearningError(f"target probability {self.target} outside [0,1]")


def abstract_query(query: Atom, keys: set[str], prefix: str = "$ph") -> TrainExample:
    """Replace dataset-key constants in a ground query with placeholders."""
    bindings: dict[str, str] = {}
    reverse: dict[str, str] = {}

    def rewrite(t: Term) -> Term:
        from .terms import Compound

        if isinstance(t, Constant) and isinstance(t.value, str) and t.value in keys:
            if t.value not in reverse:
                name = f"{prefix}{len(bindings)}"
                reverse[t.value] = name
                bindings[name] = t.value
            return Constant(reverse[t.value])
        if isinstance(t, Compound):
            return Compound(t.functor, tuple(rewrite(a) for a in t.args))
        return t

    new_args = tuple(rewrite(a) for a in query.args)
    return TrainExample(Atom(query.pred, new_args), bindings=bindings)


# --- trainer ---------------------------------------------------------------------


@dataclass
class TrainerConfig:
    batch_size: int = 2
    epochs: int = 1
    neural_lr: float = 1e-3
    prob_lr: float = 1e-3
    loss: str = "cross_entropy"
    infoloss: tuple[tuple[str, float], ...] = ()  # (model name, lambda)
    seed: int = 0
    eval_every: int = 0  # 0: evaluate once per epoch
    cache_enabled: bool = True
    step_limit: int = 1_000_000
    node_budget: int = 10_000_000

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise LearningError("batch size must be >= 1")
        for model, lam in self.infoloss:
            if lam < 0.0:
                raise LearningError(f"infoloss weight for {model} must be >= 0")


@dataclass
class EvalSpec:
    """How to measure accuracy.

    mode 'candidates': the query template has one argument position filled by
    each candidate value; the prediction is the argmax of P(query), lowest
    candidate winning ties.  mode 'readout': run the program deterministically
    under the most probable network decisions and compare the answer's output
    argument to the example's.
    """

    mode: str
    candidate_position: int = -1
    candidates: tuple = ()


class MetricsWriter:
    def __init__(self, path: Optional[Union[str, Path]]):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.rows.append(record)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")

    def write_summary_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        param_names: list[str] = []
        for row in self.rows:
            for name in row.get("params", {}):
                if name not in param_names:
                    param_names.append(name)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss", "accuracy"] + param_names)
            for row in self.rows:
                writer.writerow(
                    [row["iteration"], row["loss"], row.get("accuracy", "")]
                    + [row.get("params", {}).get(n, "") for n in param_names]
                )


class Trainer:
    def __init__(
        self,
        program: Program,
        registry: ModelRegistry,
        config: TrainerConfig,
        cache: Optional[CircuitCache] = None,
    ):
        self.program = program
        self.registry = registry
        self.config = config
        self.cache = cache if cache is not None else CircuitCache(enabled=config.cache_enabled)
        self.cache.enabled = config.cache_enabled
        self.ground_options = GroundOptions(step_limit=config.step_limit)
        self.iteration = 0

    # --- single-example evaluation ---

    def compiled_for(self, example: TrainExample) -> CompiledQuery:
        return self.cache.get(
            self.program, example.query, self.ground_options, node_budget=self.config.node_budget
        )

    def example_probability(self, example: TrainExample, batch: Optional[NeuralBatch] = None) -> float:
        batch = batch or NeuralBatch(self.registry)
        compiled = self.compiled_for(example)
        labels = label_leaves(compiled, self.registry, batch, example.bindings, with_grad=False)
        return evaluate(compiled, labels).p

    # --- training ---

    def train_step(self, batch_examples: Sequence[TrainExample]) -> dict:
        """One optimizer step over a minibatch; returns step metrics."""
        if not batch_examples:
            raise EmptyDataset("empty batch")
        batch = NeuralBatch(self.registry)
        scale = 1.0 / len(batch_examples)
        total_loss = 0.0
        prob_grads: dict[int, float] = {}
        probabilities: list[float] = []
        for example in batch_examples:
            try:
                compiled = self.compiled_for(example)
                labels = label_leaves(compiled, self.registry, batch, example.bindings, with_grad=True)
                value = evaluate(compiled, labels)
            except NeurlogError as err:
                raise LearningError(
                    f"example {print_atom(example.query)} failed: {err}"
                ) from err
            probabilities.append(value.p)
            loss, dloss_dp = loss_and_grad(self.config.loss, value.p, example.target)
            total_loss += loss * scale
            for slot, partial in value.grad.items():
                g = dloss_dp * partial * scale
                if slot[0] == "p":
                    prob_grads[slot[1]] = prob_grads.get(slot[1], 0.0) + g
                else:
                    _, eval_id, index = slot
                    batch.add_seed(eval_id, index, g)
        # Infoloss regularizers: per model, on the mean output over the batch.
        for model_name, lam in self.config.infoloss:
            outputs = batch.outputs_of(model_name)
            if not outputs or lam == 0.0:
                continue
            mean = np.mean([probs for _, probs in outputs], axis=0)
            value, grad_mean = infoloss(mean)
            total_loss += lam * value
            per_eval = lam * grad_mean / len(outputs)
            for eval_id, _ in outputs:
                batch.add_seed_vector(eval_id, per_eval)
        batch.backward()
        self.registry.step_models()
        if prob_grads:
            self.registry.sgd_prob_step(prob_grads, self.config.prob_lr)
        self.iteration += 1
        return {
            "iteration": self.iteration,
            "loss": total_loss,
            "p_mean": float(np.mean(probabilities)),
            "p_min": float(min(probabilities)),
            "cache": self.cache.counters(),
        }

    def train(
        self,
        examples: Sequence[TrainExample],
        eval_examples: Optional[Sequence[TrainExample]] = None,
        eval_spec: Optional[EvalSpec] = None,
        metrics: Optional[MetricsWriter] = None,
        log_every: int = 0,
    ) -> dict:
        if not examples:
            raise EmptyDataset("no training examples")
        metrics = metrics or MetricsWriter(None)
        rng = np.random.default_rng(self.config.seed)
        order = np.arange(len(examples))
        last: dict = {}
        initial = self._metrics_row(0.0, eval_examples, eval_spec)
        metrics.write(initial)
        for epoch in range(self.config.epochs):
            rng.shuffle(order)
            for start in range(0, len(order), self.config.batch_size):
                chunk = [examples[i] for i in order[start : start + self.config.batch_size]]
                last = self.train_step(chunk)
                if self.config.eval_every and self.iteration % self.config.eval_every == 0:
                    metrics.write(self._metrics_row(last["loss"], eval_examples, eval_spec))
                elif log_every and self.iteration % log_every == 0:
                    metrics.write(self._metrics_row(last["loss"], None, None))
            if not self.config.eval_every:
                metrics.write(self._metrics_row(last.get("loss", 0.0), eval_examples, eval_spec))
        return {
            "iterations": self.iteration,
            "final_loss": last.get("loss"),
            "params": self.registry.param_values(),
            "cache": self.cache.counters(),
        }

    def _metrics_row(self, loss: float, eval_examples, eval_spec) -> dict:
        row = {
            "iteration": self.iteration,
            "loss": loss,
            "params": self.registry.param_values(),
            "cache": self.cache.counters(),
        }
        if eval_examples and eval_spec:
            row["accuracy"] = self.evaluate_accuracy(eval_examples, eval_spec)
        return row

    # --- accuracy ---

    def evaluate_accuracy(self, examples: Sequence[TrainExample], spec: EvalSpec) -> float:
        if not examples:
            raise EmptyDataset("no evaluation examples")
        if spec.mode == "candidates":
            return self._accuracy_candidates(examples, spec)
        if spec.mode == "readout":
            return self._accuracy_readout(examples, spec)
        raise LearningError(f"unknown evaluation mode {spec.mode}")

    def _accuracy_candidates(self, examples: Sequence[TrainExample], spec: EvalSpec) -> float:
        correct = 0
        for example in examples:
            batch = NeuralBatch(self.registry)
            best_value, best_candidate = -1.0, None
            for candidate in spec.candidates:
                args = list(example.query.args)
                args[spec.candidate_position] = candidate
                variant = TrainExample(
                    Atom(example.query.pred, tuple(args)), bindings=example.bindings
                )
                p = self.example_probability(variant, batch)
                if p > best_value:
                    best_value, best_candidate = p, candidate
            if best_candidate == example.query.args[spec.candidate_position]:
                correct += 1
        return correct / len(examples)

    def _accuracy_readout(self, examples: Sequence[TrainExample], spec: EvalSpec) -> float:
        def neural_fn(model: str, terms: tuple[Term, ...]):
            batch = self._readout_batch
            _, probs = batch.forward(model, terms)
            return probs

        correct = 0
        for example in examples:
            self._readout_batch = NeuralBatch(self.registry)
            query = substitute_query(example.query, example.bindings)
            expected = query.args[spec.candidate_position]
            from .terms import Variable

            args = list(query.args)
            args[spec.candidate_position] = Variable("_Readout")
            free_query = Atom(query.pred, tuple(args))
            answers = readout_answers(
                self.program,
                free_query,
                neural_fn,
                self.registry.param_value,
                step_limit=self.config.step_limit,
            )
            if len(answers) == 1 and answers[0].args[spec.candidate_position] == expected:
                correct += 1
        return correct / len(examples)


def substitute_query(query: Atom, bindings: dict[str, str]) -> Atom:
    return Atom(query.pred, tuple(substitute_bindings(a, bindings) for a in query.args))
