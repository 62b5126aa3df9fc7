"""Experiment harness: JSON-configured desk-scale reproductions.

Each experiment wires a corpus program to models, encoders and a generated
dataset, trains with the shared Trainer and writes a JSON-lines metrics
stream, a CSV summary, learning-curve figures and a final summary JSON.
"""

from __future__ import annotations

import importlib.resources
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import report
from .datasets import (
    CARD_PROTOTYPES,
    HOUSE_DISTRIBUTION,
    RANKS,
    Dataset,
    digit_items,
    find_mnist,
    load_mnist_idx,
    make_forth_addition_examples,
    make_forth_sort_examples,
    make_pair_dataset,
    make_synthetic_cards,
    synthetic_digits,
)
from .learning import EvalSpec, MetricsWriter, Trainer, TrainerConfig, TrainExample
from .neural import Adam, LayerSpec, ModelRegistry, OneHotEncoder, SGD, VectorEncoder
from .parser import parse_program
from .terms import Constant, NeurlogError, Program


class ExperimentError(NeurlogError):
    pass


def programs_dir() -> Path:
    return Path(importlib.resources.files("neurlog") / "programs")


def configs_dir() -> Path:
    return Path(importlib.resources.files("neurlog") / "configs")


def load_corpus_program(name: str) -> Program:
    path = programs_dir() / name
    return parse_program(path.read_text(), str(path))


@dataclass
class ExperimentConfig:
    name: str
    program: str
    models: list[dict]
    encoders: dict[str, dict]
    data: dict
    trainer: dict
    eval: dict
    param_init: dict[str, float] = field(default_factory=dict)

    @staticmethod
    def from_json(path_or_text: Union[str, Path, dict]) -> "ExperimentConfig":
        if isinstance(path_or_text, dict):
            raw = path_or_text
        else:
            path = Path(path_or_text)
            if path.exists():
                raw = json.loads(path.read_text())
            else:
                candidate = configs_dir() / f"{path_or_text}.json"
                if not candidate.exists():
                    raise ExperimentError(f"no such config: {path_or_text}")
                raw = json.loads(candidate.read_text())
        return ExperimentConfig(
            name=raw["name"],
            program=raw["program"],
            models=raw.get("models", []),
            encoders=raw.get("encoders", {}),
            data=raw.get("data", {}),
            trainer=raw.get("trainer", {}),
            eval=raw.get("eval", {}),
            param_init={k: float(v) for k, v in raw.get("param_init", {}).items()},
        )


def build_registry(
    config: ExperimentConfig, program: Program, items: dict[str, np.ndarray], seed: int
) -> ModelRegistry:
    registry = ModelRegistry(seed=seed)
    registry.register_program_params(program, config.param_init)
    encoders = {}
    for name, spec in config.encoders.items():
        if spec["type"] == "dataset":
            encoders[name] = VectorEncoder(items)
        elif spec["type"] == "onehot":
            encoders[name] = OneHotEncoder(spec["widths"])
        else:
            raise ExperimentError(f"unknown encoder type {spec['type']}")
    for spec in config.models:
        optimizer_kind = spec.get("optimizer", "adam")
        lr = float(spec.get("lr", 1e-3))
        optimizer = Adam(lr) if optimizer_kind == "adam" else SGD(lr)
        registry.register_mlp(
            spec["name"],
            spec["input_width"],
            [LayerSpec(l["units"], l.get("activation", "relu")) for l in spec.get("layers", [])],
            spec.get("head", "softmax"),
            spec["outputs"],
            encoders[spec["encoder"]],
            optimizer,
        )
    return registry


def _term_of(value) -> Constant:
    return Constant(value if isinstance(value, (int, str)) else str(value))


def build_eval_spec(config: ExperimentConfig) -> Optional[EvalSpec]:
    spec = config.eval
    if not spec:
        return None
    if spec["mode"] == "candidates":
        return EvalSpec(
            mode="candidates",
            candidate_position=spec["position"],
            candidates=tuple(_term_of(v) for v in spec["values"]),
        )
    return EvalSpec(mode="readout", candidate_position=spec["position"])


def build_data(config: ExperimentConfig, seed: int) -> Dataset:
    data = dict(config.data)
    generator = data.pop("generator")
    data_seed = int(data.pop("seed", seed))
    if generator == "digit_pairs":
        return _digit_pairs(data, data_seed)
    if generator == "forth_addition":
        train = make_forth_addition_examples(data.get("train", 512), data.get("train_length", 2), data_seed)
        test: list[TrainExample] = []
        for i, length in enumerate(data.get("test_lengths", [8, 64])):
            test.extend(
                make_forth_addition_examples(data.get("test", 32), length, data_seed + 101 + i)
            )
        return Dataset(items={}, train=train, test=test)
    if generator == "forth_sort":
        train = make_forth_sort_examples(data.get("train", 256), data.get("train_length", 3), data_seed)
        test = []
        for i, length in enumerate(data.get("test_lengths", [8])):
            test.extend(make_forth_sort_examples(data.get("test", 32), length, data_seed + 101 + i))
        return Dataset(items={}, train=train, test=test)
    if generator == "poker":
        train = make_synthetic_cards(
            data.get("train", 500),
            data_seed,
            distribution=tuple(data.get("distribution", (0.25, 0.25, 0.25, 0.25))),
            house_distribution=tuple(data.get("house_distribution", HOUSE_DISTRIBUTION)),
            sigma=float(data.get("sigma", 0.1)),
            labeled_fraction=float(data.get("labeled_fraction", 0.1)),
        )
        test = make_synthetic_cards(
            data.get("test", 25),
            data_seed + 977,
            distribution=tuple(data.get("distribution", (0.25, 0.25, 0.25, 0.25))),
            house_distribution=tuple(data.get("house_distribution", HOUSE_DISTRIBUTION)),
            sigma=float(data.get("sigma", 0.1)),
            labeled_fraction=0.0,
        )
        items = dict(train.items)
        items.update(test.items)
        return Dataset(items=items, train=train.train, test=test.train, meta=train.meta)
    raise ExperimentError(f"unknown data generator {generator}")


def _digit_pairs(data: dict, seed: int) -> Dataset:
    n_train = int(data.get("train", 3000))
    n_test = int(data.get("test", 500))
    noise = float(data.get("noise", 0.0))
    found = find_mnist("train")
    needed = 2 * (n_train + n_test)
    if found:
        vectors, labels = load_mnist_idx(*found)
        source = "mnist"
    else:
        vectors, labels = synthetic_digits(needed, seed=seed + 7)
        source = "synthetic"
    if needed > len(vectors):
        raise ExperimentError(f"need {needed} digit images, have {len(vectors)}")
    items = digit_items(vectors[:needed])
    all_labels = labels[:needed]
    train_keys = {f"img{i}": items[f"img{i}"] for i in range(2 * n_train)}
    test_keys = {f"img{i}": items[f"img{i}"] for i in range(2 * n_train, needed)}
    predicate = data.get("predicate", "addition")
    train = make_pair_dataset(train_keys, all_labels[: 2 * n_train], n_train, seed, noise, predicate)
    test = make_pair_dataset(test_keys, all_labels[2 * n_train :], n_test, seed + 1, 0.0, predicate)
    dataset = Dataset(items=items, train=train, test=test)
    dataset.meta["source"] = source
    return dataset


@dataclass
class ExperimentResult:
    name: str
    summary: dict
    metrics_path: Optional[Path]
    figures: list[Path]


def run_experiment(
    config: Union[ExperimentConfig, str, Path, dict],
    out_dir: Union[str, Path],
    seed: Optional[int] = None,
    checkpoint: Optional[Union[str, Path]] = None,
    make_figures: bool = True,
) -> ExperimentResult:
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_json(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(config.trainer.get("seed", 0)) if seed is None else int(seed)

    program = load_corpus_program(config.program)
    dataset = build_data(config, seed)
    registry = build_registry(config, program, dataset.items, seed)
    trainer_cfg = TrainerConfig(
        batch_size=int(config.trainer.get("batch_size", 2)),
        epochs=int(config.trainer.get("epochs", 1)),
        prob_lr=float(config.trainer.get("prob_lr", 1e-3)),
        loss=config.trainer.get("loss", "cross_entropy"),
        infoloss=tuple((m, float(l)) for m, l in config.trainer.get("infoloss", [])),
        seed=seed,
        eval_every=int(config.trainer.get("eval_every", 0)),
        cache_enabled=bool(config.trainer.get("cache", True)),
        step_limit=int(config.trainer.get("step_limit", 1_000_000)),
    )
    trainer = Trainer(program, registry, trainer_cfg)
    eval_spec = build_eval_spec(config)
    metrics = MetricsWriter(out_dir / "metrics.jsonl")
    eval_subset = dataset.test[: int(config.eval.get("subset", len(dataset.test)))] if dataset.test else None

    started = time.monotonic()
    try:
        summary = trainer.train(dataset.train, eval_subset, eval_spec, metrics)
    except NeurlogError as err:
        raise ExperimentError(
            f"experiment {config.name} failed at iteration {trainer.iteration}: {err}"
        ) from err
    elapsed = time.monotonic() - started

    summary["name"] = config.name
    summary["seed"] = seed
    summary["train_seconds"] = round(elapsed, 3)
    summary["dataset"] = {k: v for k, v in dataset.meta.items()}
    if eval_subset and eval_spec:
        summary["test_accuracy"] = trainer.evaluate_accuracy(eval_subset, eval_spec)
    if config.name.startswith("t9"):
        summary.update(_poker_extras(registry, dataset))
    if config.name.startswith("t5") or config.name.startswith("t6"):
        summary["test_accuracy_by_length"] = _accuracy_by_length(trainer, dataset.test, eval_spec)

    metrics.write_summary_csv(out_dir / "summary.csv")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    figures: list[Path] = []
    if make_figures:
        figures = report.render_metrics(metrics.rows, out_dir / "figures", title=config.name)
    if checkpoint:
        registry.save_checkpoint(Path(checkpoint))
    return ExperimentResult(config.name, summary, metrics.path, figures)


def _accuracy_by_length(trainer: Trainer, test: Sequence[TrainExample], eval_spec: EvalSpec) -> dict:
    by_length: dict[int, list[TrainExample]] = {}
    for ex in test:
        by_length.setdefault(ex.meta.get("length", 0), []).append(ex)
    return {
        str(length): trainer.evaluate_accuracy(examples, eval_spec)
        for length, examples in sorted(by_length.items())
    }


def _poker_extras(registry: ModelRegistry, dataset: Dataset) -> dict:
    """Learned house distribution plus rank-classifier convergence check."""
    learned = registry.param_values()
    house = {r: learned.get(f"house_rank({r})", None) for r in RANKS}
    mapping = {}
    model = registry.model("net1")
    from .neural import NeuralBatch

    batch = NeuralBatch(registry)
    for rank in RANKS:
        key = f"proto_{rank}"
        registry.encoders["net1"].items[key] = CARD_PROTOTYPES[rank]
        _, probs = batch.forward("net1", (Constant(key),))
        mapping[rank] = RANKS[int(np.argmax(probs))]
    converged = all(mapping[r] == r for r in RANKS)
    return {
        "learned_house_distribution": house,
        "prototype_mapping": mapping,
        "converged": converged,
        "actual_house_distribution": dict(zip(RANKS, dataset.meta.get("house_distribution", HOUSE_DISTRIBUTION))),
    }
