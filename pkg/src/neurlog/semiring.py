"""Evaluation of compiled circuits under the probability and gradient semirings.

A gradient-semiring element is a pair (p, dp): the probability together with
a sparse vector of partial derivatives.  Addition is componentwise, while
multiplication applies the product rule:

    (a, da) + (b, db) = (a + b, da + db)
    (a, da) * (b, db) = (a * b, b * da + a * db)

Sparse vectors are keyed by parameter slots: ('p', slot) for probabilistic
parameters and ('n', eval_id, output_index) for the abstract neural outputs
of one network evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .compiler import CompiledQuery, NONE_VALUE
from .grounder import NeuralFactLabel, NeuralHeadLabel
from .terms import Compound, Constant, Fixed, Learnable, NeurlogError, Term

SlotKey = tuple


class EvaluationError(NeurlogError):
    pass


class MissingNeuralOutput(EvaluationError):
    pass


class UnregisteredParameter(EvaluationError):
    pass


@dataclass(frozen=True)
class DualValue:
    p: float
    grad: dict[SlotKey, float]

    def __iter__(self):
        yield self.p
        yield self.grad


DUAL_ZERO = DualValue(0.0, {})
DUAL_ONE = DualValue(1.0, {})


def semiring_add(a: DualValue, b: DualValue) -> DualValue:
    if not b.grad:
        return DualValue(a.p + b.p, a.grad)
    if not a.grad:
        return DualValue(a.p + b.p, b.grad)
    grad = dict(a.grad)
    for k, v in b.grad.items():
        grad[k] = grad.get(k, 0.0) + v
    return DualValue(a.p + b.p, grad)


def semiring_mul(a: DualValue, b: DualValue) -> DualValue:
    p = a.p * b.p
    if not a.grad and not b.grad:
        return DualValue(p, {})
    grad: dict[SlotKey, float] = {}
    if a.grad and b.p != 0.0:
        for k, v in a.grad.items():
            grad[k] = v * b.p
    if b.grad and a.p != 0.0:
        for k, v in b.grad.items():
            grad[k] = grad.get(k, 0.0) + v * a.p
    return DualValue(p, grad)


def _scale(grad: dict[SlotKey, float], s: float) -> dict[SlotKey, float]:
    return {k: v * s for k, v in grad.items()}


def _neg(grad: dict[SlotKey, float]) -> dict[SlotKey, float]:
    return {k: -v for k, v in grad.items()}


def _clamp01(p: float) -> float:
    return 0.0 if p < 0.0 else (1.0 if p > 1.0 else p)


def substitute_bindings(t: Term, bindings: dict[str, str]) -> Term:
    """Replace placeholder constants with actual dataset keys."""
    if isinstance(t, Constant) and isinstance(t.value, str) and t.value in bindings:
        return Constant(bindings[t.value])
    if isinstance(t, Compound):
        return Compound(t.functor, tuple(substitute_bindings(a, bindings) for a in t.args))
    return t


class LabelTable:
    """Per-variable leaf labels for one evaluation of a circuit.

    labels[var] is a list of DualValue entries indexed by the variable's
    value: [false, true] for boolean variables, one entry per recorded head
    plus the trailing "none" branch for multi-valued variables.
    """

    def __init__(self, labels: list[list[DualValue]]):
        self.labels = labels

    def label(self, var: int, value: int) -> DualValue:
        row = self.labels[var]
        return row[value] if value != NONE_VALUE else row[-1]


def label_leaves(
    compiled: CompiledQuery,
    params=None,
    batch=None,
    bindings: Optional[dict[str, str]] = None,
    with_grad: bool = True,
    overrides: Optional[dict[tuple[int, int], float]] = None,
) -> LabelTable:
    """Assign (p, grad) leaf labels to every choice variable of a circuit.

    ``params`` resolves learnable probabilistic parameters (anything with a
    ``param_value(slot)`` method); ``batch`` performs memoized network forward
    passes (``forward(model, input_terms) -> (eval_id, probs)``).  ``overrides``
    maps (var, value_index) to a replacement probability and exists for
    finite-difference checks; the "none" branch is always recomputed from the
    (possibly overridden) head values.
    """
    bindings = bindings or {}
    labels: list[list[DualValue]] = []
    for var in compiled.circuit.vars:
        if var.kind == "bool":
            fact = var.payload
            if isinstance(fact.label, Fixed):
                p, grad = fact.label.p, {}
            elif isinstance(fact.label, Learnable):
                if params is None:
                    raise UnregisteredParameter(f"no parameter store for slot {fact.label.slot}")
                p = params.param_value(fact.label.slot)
                grad = {("p", fact.label.slot): 1.0} if with_grad else {}
            else:
                p, grad = _neural_scalar(fact.label, batch, bindings, with_grad)
            if overrides and (var.index, 1) in overrides:
                p = overrides[(var.index, 1)]
            p = _clamp01(p)
            labels.append([DualValue(1.0 - p, _neg(grad)), DualValue(p, grad)])
        else:
            rows: list[DualValue] = []
            total_p = 0.0
            total_grad: dict[SlotKey, float] = {}
            for pos, head in enumerate(var.payload.heads):
                if isinstance(head.label, Fixed):
                    p, grad = head.label.p, {}
                elif isinstance(head.label, Learnable):
                    if params is None:
                        raise UnregisteredParameter(f"no parameter store for slot {head.label.slot}")
                    p = params.param_value(head.label.slot)
                    grad = {("p", head.label.slot): 1.0} if with_grad else {}
                else:
                    p, grad = _neural_head(head.label, batch, bindings, with_grad)
                if overrides and (var.index, pos) in overrides:
                    p = overrides[(var.index, pos)]
                p = _clamp01(p)
                rows.append(DualValue(p, grad))
                total_p += p
                for k, v in grad.items():
                    total_grad[k] = total_grad.get(k, 0.0) + v
            none_p = _clamp01(1.0 - total_p)
            rows.append(DualValue(none_p, _neg(total_grad)))
            labels.append(rows)
    return LabelTable(labels)


def _neural_scalar(label: NeuralFactLabel, batch, bindings, with_grad) -> tuple[float, dict]:
    if batch is None:
        raise MissingNeuralOutput(f"no batch context for model {label.model}")
    terms = tuple(substitute_bindings(t, bindings) for t in label.inputs)
    eval_id, probs = batch.forward(label.model, terms)
    p = float(probs[0])
    grad = {("n", eval_id, 0): 1.0} if with_grad else {}
    return p, grad


def _neural_head(label: NeuralHeadLabel, batch, bindings, with_grad) -> tuple[float, dict]:
    if batch is None:
        raise MissingNeuralOutput(f"no batch context for model {label.model}")
    terms = tuple(substitute_bindings(t, bindings) for t in label.inputs)
    eval_id, probs = batch.forward(label.model, terms)
    if label.index >= len(probs):
        raise MissingNeuralOutput(
            f"model {label.model} produced {len(probs)} outputs, index {label.index} requested"
        )
    p = float(probs[label.index])
    grad = {("n", eval_id, label.index): 1.0} if with_grad else {}
    return p, grad


def evaluate(compiled: CompiledQuery, labels: LabelTable) -> DualValue:
    """Single bottom-up pass: sums become semiring addition, products semiring
    multiplication, and a decision node sums branch-label times child over its
    variable's values."""
    circuit = compiled.circuit
    values: list[Optional[DualValue]] = [None] * len(circuit)
    values[0] = DUAL_ONE
    values[1] = DUAL_ZERO
    for node in range(2, len(circuit)):
        kind = circuit.kinds[node]
        if kind == "leaf":
            var, value = circuit.payload[node]
            values[node] = labels.label(var, value)
        elif kind == "dec":
            var, children = circuit.payload[node]
            acc = DUAL_ZERO
            for value, child in zip(circuit.vars[var].values, children):
                acc = semiring_add(acc, semiring_mul(labels.label(var, value), values[child]))
            values[node] = acc
        elif kind == "sum":
            acc = DUAL_ZERO
            for child in circuit.payload[node][0]:
                acc = semiring_add(acc, values[child])
            values[node] = acc
        elif kind == "prod":
            acc = DUAL_ONE
            for child in circuit.payload[node][0]:
                acc = semiring_mul(acc, values[child])
            values[node] = acc
        else:  # pragma: no cover
            raise EvaluationError(f"unknown node kind {kind}")
    result = values[circuit.root]
    if not (-1e-9 <= result.p <= 1.0 + 1e-9):
        raise EvaluationError(f"probability {result.p} outside [0,1]")
    return result


def query_probability(
    compiled: CompiledQuery,
    params=None,
    batch=None,
    bindings: Optional[dict[str, str]] = None,
) -> float:
    labels = label_leaves(compiled, params, batch, bindings, with_grad=False)
    return evaluate(compiled, labels).p


def query_gradient(
    compiled: CompiledQuery,
    params=None,
    batch=None,
    bindings: Optional[dict[str, str]] = None,
) -> DualValue:
    labels = label_leaves(compiled, params, batch, bindings, with_grad=True)
    return evaluate(compiled, labels)
