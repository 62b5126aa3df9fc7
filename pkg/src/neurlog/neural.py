"""Minimal neural backend: dense networks with softmax or sigmoid heads,
input encoders that map ground terms to vectors, per-batch forward
memoization, backpropagation seeded by circuit gradients, and SGD/Adam
optimizers.  Probabilistic logic parameters also live here, updated by SGD
with clipping to [0,1] and per-AD renormalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .terms import Constant, NeurlogError, ParamInfo, Program, Term, print_term


class NeuralError(NeurlogError):
    pass


class UnknownModel(NeuralError):
    pass


class EncoderMiss(NeuralError):
    pass


class StaleEvaluation(NeuralError):
    pass


# --- encoders -------------------------------------------------------------------


class VectorEncoder:
    """Looks ground terms up in a key -> vector table (image datasets)."""

    def __init__(self, items: dict[str, np.ndarray]):
        self.items = items

    def encode(self, terms: tuple[Term, ...]) -> np.ndarray:
        parts = []
        for t in terms:
            if not (isinstance(t, Constant) and isinstance(t.value, str) and t.value in self.items):
                raise EncoderMiss(f"no vector for term {print_term(t)}")
            parts.append(np.asarray(self.items[t.value], dtype=np.float64))
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


class OneHotEncoder:
    """Encodes integer terms as concatenated one-hot blocks.

    ``widths`` gives the block width per input position; integers outside
    [0, width) are an encoder miss.
    """

    def __init__(self, widths: Sequence[int]):
        self.widths = list(widths)

    def encode(self, terms: tuple[Term, ...]) -> np.ndarray:
        if len(terms) != len(self.widths):
            raise EncoderMiss(f"expected {len(self.widths)} input terms, got {len(terms)}")
        out = np.zeros(sum(self.widths), dtype=np.float64)
        offset = 0
        for t, width in zip(terms, self.widths):
            if not (isinstance(t, Constant) and isinstance(t.value, int) and 0 <= t.value < width):
                raise EncoderMiss(f"term {print_term(t)} not encodable in width {width}")
            out[offset + t.value] = 1.0
            offset += width
        return out


Encoder = Union[VectorEncoder, OneHotEncoder]


# --- models ---------------------------------------------------------------------


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    if name == "linear":
        return z
    raise NeuralError(f"unknown activation {name}")


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "linear":
        return np.ones_like(z)
    raise NeuralError(f"unknown activation {name}")


@dataclass
class LayerSpec:
    units: int
    activation: str = "relu"


class MLPModel:
    """Dense layers with a softmax (n-class) or sigmoid (scalar) head."""

    def __init__(
        self,
        input_width: int,
        layers: Sequence[LayerSpec],
        head: str,
        outputs: int,
        rng: np.random.Generator,
    ):
        if head not in ("softmax", "sigmoid"):
            raise NeuralError(f"unknown head {head}")
        if head == "sigmoid" and outputs != 1:
            raise NeuralError("a sigmoid head produces a single output")
        self.head = head
        self.outputs = outputs
        self.activations = [spec.activation for spec in layers] + ["linear"]
        widths = [input_width] + [spec.units for spec in layers] + [outputs]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths, widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]

    @property
    def trainable(self) -> bool:
        return True

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        pre: list[np.ndarray] = []
        post: list[np.ndarray] = [x]
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = w @ h + b
            h = _activate(act, z)
            pre.append(z)
            post.append(h)
        if self.head == "softmax":
            shifted = h - np.max(h)
            e = np.exp(shifted)
            probs = e / np.sum(e)
            assert abs(float(np.sum(probs)) - 1.0) < 1e-9
        else:
            probs = np.clip(_activate("sigmoid", h), 1e-12, 1.0 - 1e-12)
        return probs, {"pre": pre, "post": post, "probs": probs}

    def backward(self, cache: dict, seed: np.ndarray) -> None:
        """Accumulate parameter gradients for seed = dLoss/dprobs."""
        probs = cache["probs"]
        if self.head == "softmax":
            delta = probs * (seed - float(np.dot(probs, seed)))
        else:
            delta = seed * probs * (1.0 - probs)
        for i in reversed(range(len(self.weights))):
            dz = delta * _activate_grad(self.activations[i], cache["pre"][i], cache["post"][i + 1])
            self.grad_w[i] += np.outer(dz, cache["post"][i])
            self.grad_b[i] += dz
            delta = self.weights[i].T @ dz

    def zero_grad(self) -> None:
        for g in self.grad_w:
            g.fill(0.0)
        for g in self.grad_b:
            g.fill(0.0)

    def flatten(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{i}/W", w))
            out.append((f"layer{i}/b", b))
        return out


class TableModel:
    """A fixed mapping from input term keys to output distributions.

    Stands in for a trained network in tests and pure-logic checks (for
    example a perfect adder oracle); it has no trainable parameters.
    """

    def __init__(self, mapping: Union[dict, Callable[[tuple[Term, ...]], Sequence[float]]], outputs: int):
        self.mapping = mapping
        self.outputs = outputs
        self.head = "table"

    @property
    def trainable(self) -> bool:
        return False

    def parameter_count(self) -> int:
        return 0

    def lookup(self, terms: tuple[Term, ...]) -> np.ndarray:
        if callable(self.mapping):
            return np.asarray(self.mapping(terms), dtype=np.float64)
        key = tuple(print_term(t) for t in terms)
        if key not in self.mapping:
            raise EncoderMiss(f"no table entry for {key}")
        return np.asarray(self.mapping[key], dtype=np.float64)


# --- optimizers -------------------------------------------------------------------


@dataclass
class SGD:
    lr: float = 1e-3

    def make_state(self, model: MLPModel) -> dict:
        return {}

    def step(self, model: MLPModel, state: dict) -> None:
        for w, g in zip(model.weights, model.grad_w):
            w -= self.lr * g
        for b, g in zip(model.biases, model.grad_b):
            b -= self.lr * g


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def make_state(self, model: MLPModel) -> dict:
        zeros = lambda arrs: [np.zeros_like(a) for a in arrs]
        return {
            "t": 0,
            "mw": zeros(model.weights),
            "vw": zeros(model.weights),
            "mb": zeros(model.biases),
            "vb": zeros(model.biases),
        }

    def step(self, model: MLPModel, state: dict) -> None:
        state["t"] += 1
        t = state["t"]
        for params, grads, ms, vs in (
            (model.weights, model.grad_w, state["mw"], state["vw"]),
            (model.biases, model.grad_b, state["mb"], state["vb"]),
        ):
            for p, g, m, v in zip(params, grads, ms, vs):
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * (g * g)
                m_hat = m / (1 - self.beta1**t)
                v_hat = v / (1 - self.beta2**t)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- the registry -------------------------------------------------------------------


class ModelRegistry:
    """Named neural models plus the learnable probabilistic parameters."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.models: dict[str, object] = {}
        self.encoders: dict[str, Encoder] = {}
        self.optimizer_state: dict[str, dict] = {}
        self.optimizers: dict[str, object] = {}
        self.prob_params: dict[int, float] = {}
        self.param_info: dict[int, ParamInfo] = {}
        self.ad_groups: dict[int, list[int]] = {}

    # --- probabilistic parameters ---

    def register_program_params(self, program: Program, init_overrides: Optional[dict[str, float]] = None) -> None:
        overrides = init_overrides or {}
        for info in program.params:
            value = overrides.get(info.name, info.init)
            self.prob_params[info.slot] = float(value)
            self.param_info[info.slot] = info
            if info.group is not None:
                self.ad_groups.setdefault(info.group, [])
                if info.slot not in self.ad_groups[info.group]:
                    self.ad_groups[info.group].append(info.slot)
        self._renormalize_groups()

    def param_value(self, slot: int) -> float:
        if slot not in self.prob_params:
            raise NeuralError(f"parameter slot {slot} is not registered")
        return self.prob_params[slot]

    def param_values(self) -> dict[str, float]:
        return {self.param_info[s].name: v for s, v in self.prob_params.items()}

    def sgd_prob_step(self, grads: dict[int, float], lr: float) -> None:
        """SGD on the logic parameters, then clip to [0,1] and renormalize ADs."""
        for slot, g in grads.items():
            self.prob_params[slot] = self.prob_params[slot] - lr * g
        for slot in self.prob_params:
            self.prob_params[slot] = min(1.0, max(0.0, self.prob_params[slot]))
        self._renormalize_groups()

    def _renormalize_groups(self) -> None:
        for slots in self.ad_groups.values():
            total = sum(self.prob_params[s] for s in slots)
            if total <= 0.0:
                for s in slots:
                    self.prob_params[s] = 1.0 / len(slots)
            else:
                for s in slots:
                    self.prob_params[s] = self.prob_params[s] / total

    # --- neural models ---

    def register_model(
        self,
        name: str,
        model: Union[MLPModel, TableModel],
        encoder: Optional[Encoder] = None,
        optimizer: Optional[object] = None,
    ) -> None:
        self.models[name] = model
        if encoder is not None:
            self.encoders[name] = encoder
        if isinstance(model, MLPModel):
            opt = optimizer or Adam()
            self.optimizers[name] = opt
            self.optimizer_state[name] = opt.make_state(model)

    def register_mlp(
        self,
        name: str,
        input_width: int,
        layers: Sequence[LayerSpec],
        head: str,
        outputs: int,
        encoder: Encoder,
        optimizer: Optional[object] = None,
    ) -> MLPModel:
        model = MLPModel(input_width, layers, head, outputs, self.rng)
        self.register_model(name, model, encoder, optimizer)
        return model

    def register_uniform_stubs(self, program: Program) -> None:
        """Stub every annotated network with a uniform output (CLI inspection)."""
        for ann in program.neurals:
            if ann.model in self.models:
                continue
            n = len(ann.domain) if ann.domain is not None else 1
            value = [1.0 / n] * n if ann.domain is not None else [0.5]
            self.register_model(ann.model, TableModel(lambda terms, v=value: v, n))

    def model(self, name: str):
        if name not in self.models:
            raise UnknownModel(f"model {name} is not registered")
        return self.models[name]

    def step_models(self) -> None:
        for name, model in self.models.items():
            if isinstance(model, MLPModel):
                self.optimizers[name].step(model, self.optimizer_state[name])
                model.zero_grad()

    def zero_grads(self) -> None:
        for model in self.models.values():
            if isinstance(model, MLPModel):
                model.zero_grad()

    # --- checkpoints ---

    def save_checkpoint(self, path: Union[str, Path]) -> None:
        """Flat float64 binary plus a JSON manifest of names/shapes/offsets."""
        path = Path(path)
        chunks: list[np.ndarray] = []
        entries = []
        offset = 0
        for name in self.models:
            model = self.models[name]
            if not isinstance(model, MLPModel):
                continue
            for suffix, arr in model.flatten():
                entries.append({"name": f"{name}/{suffix}", "shape": list(arr.shape), "offset": offset})
                chunks.append(arr.ravel())
                offset += arr.size
        slots = sorted(self.prob_params)
        if slots:
            values = np.array([self.prob_params[s] for s in slots], dtype=np.float64)
            entries.append({"name": "prob_params", "shape": [len(slots)], "offset": offset, "slots": slots})
            chunks.append(values)
            offset += values.size
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        data.astype(np.float64).tofile(path.with_suffix(".bin"))
        manifest = {"version": 1, "dtype": "float64", "entries": entries}
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    def load_checkpoint(self, path: Union[str, Path]) -> None:
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text())
        if manifest.get("version") != 1:
            raise NeuralError(f"unsupported checkpoint version {manifest.get('version')}")
        data = np.fromfile(path.with_suffix(".bin"), dtype=np.float64)
        for entry in manifest["entries"]:
            size = int(np.prod(entry["shape"]))
            chunk = data[entry["offset"] : entry["offset"] + size]
            if chunk.size != size:
                raise NeuralError(f"checkpoint truncated at {entry['name']}")
            if entry["name"] == "prob_params":
                for slot, value in zip(entry["slots"], chunk):
                    self.prob_params[slot] = float(value)
                continue
            model_name, _, suffix = entry["name"].partition("/")
            model = self.model(model_name)
            for name2, arr in model.flatten():
                if name2 == suffix:
                    arr[...] = chunk.reshape(entry["shape"])
                    break
            else:
                raise NeuralError(f"checkpoint entry {entry['name']} has no matching parameter")
        self._renormalize_groups()


# --- per-batch evaluation context -----------------------------------------------------


class NeuralBatch:
    """Memoizes forward passes within one batch and routes gradient seeds back.

    Each distinct (model, input terms) pair is evaluated once and assigned an
    evaluation id; circuit leaves reference outputs as abstract parameters
    ('n', eval_id, index).  Seeds accumulate dLoss/d(output) per evaluation and
    ``backward`` runs backpropagation for all of them.
    """

    def __init__(self, registry: ModelRegistry):
        self.registry = registry
        self.evals: list[dict] = []
        self.index: dict[tuple, int] = {}
        self.seeds: dict[int, np.ndarray] = {}
        self.forward_calls = 0

    def forward(self, model_name: str, terms: tuple[Term, ...]) -> tuple[int, np.ndarray]:
        key = (model_name, tuple(print_term(t) for t in terms))
        if key in self.index:
            eid = self.index[key]
            return eid, self.evals[eid]["probs"]
        model = self.registry.model(model_name)
        self.forward_calls += 1
        if isinstance(model, TableModel):
            probs = model.lookup(terms)
            cache = None
        else:
            encoder = self.registry.encoders.get(model_name)
            if encoder is None:
                raise EncoderMiss(f"model {model_name} has no registered encoder")
            x = encoder.encode(terms)
            probs, cache = model.forward(x)
        eid = len(self.evals)
        self.evals.append({"model": model_name, "terms": terms, "probs": probs, "cache": cache})
        self.index[key] = eid
        return eid, probs

    def outputs_of(self, model_name: str) -> list[tuple[int, np.ndarray]]:
        return [(i, e["probs"]) for i, e in enumerate(self.evals) if e["model"] == model_name]

    def add_seed(self, eval_id: int, index: int, value: float) -> None:
        if eval_id >= len(self.evals):
            raise StaleEvaluation(f"evaluation {eval_id} is not part of this batch")
        seed = self.seeds.get(eval_id)
        if seed is None:
            seed = np.zeros(len(self.evals[eval_id]["probs"]))
            self.seeds[eval_id] = seed
        seed[index] += value

    def add_seed_vector(self, eval_id: int, vector: np.ndarray) -> None:
        if eval_id >= len(self.evals):
            raise StaleEvaluation(f"evaluation {eval_id} is not part of this batch")
        seed = self.seeds.get(eval_id)
        if seed is None:
            self.seeds[eval_id] = np.array(vector, dtype=np.float64)
        else:
            seed += vector

    def backward(self) -> None:
        """Backpropagate all seeds into model gradient buffers."""
        for eid in sorted(self.seeds):
            info = self.evals[eid]
            model = self.registry.model(info["model"])
            if isinstance(model, MLPModel):
                model.backward(info["cache"], self.seeds[eid])
