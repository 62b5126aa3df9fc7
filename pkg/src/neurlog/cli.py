"""Command-line front end: ground, compile, infer, oracle, learn, experiment."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .compiler import compile_query
from .grounder import GroundOptions, ground_query
from .learning import MetricsWriter, Trainer, TrainerConfig, TrainExample
from .neural import ModelRegistry, NeuralBatch
from .oracle import enumerate_probability
from .parser import Diagnostic, parse_program, parse_query
from .semiring import evaluate, label_leaves
from .terms import NeurlogError, print_atom


def _load_program(path: str):
    source = Path(path).read_text()
    return parse_program(source, path)


def _registry_for(program, uniform_neural: bool, seed: int = 0) -> ModelRegistry:
    registry = ModelRegistry(seed=seed)
    registry.register_program_params(program)
    if uniform_neural:
        registry.register_uniform_stubs(program)
    elif program.neurals:
        raise NeurlogError(
            "this program declares neural predicates; run it through an experiment "
            "config or pass --uniform-neural to stub the networks"
        )
    return registry


def cmd_ground(args) -> int:
    program = _load_program(args.program)
    query = parse_query(args.query)
    gp = ground_query(program, query.atom, GroundOptions(step_limit=args.step_limit))
    sys.stdout.write(gp.pretty())
    return 0


def cmd_compile(args) -> int:
    program = _load_program(args.program)
    query = parse_query(args.query)
    compiled = compile_query(
        program, query, GroundOptions(step_limit=args.step_limit), debug_checks=args.check
    )
    print(f"query: {print_atom(compiled.query.atom)}")
    print(f"circuit nodes: {compiled.node_count}")
    print(f"choice variables: {len(compiled.circuit.vars)}")
    if args.dump == "text":
        print(compiled.circuit.dump())
    elif args.dump == "dot":
        print(compiled.circuit.dot())
    return 0


def cmd_infer(args) -> int:
    program = _load_program(args.program)
    query = parse_query(args.query)
    registry = _registry_for(program, args.uniform_neural, args.seed)
    batch = NeuralBatch(registry)
    compiled = compile_query(program, query, GroundOptions(step_limit=args.step_limit))
    labels = label_leaves(compiled, registry, batch, with_grad=args.grad)
    result = evaluate(compiled, labels)
    print(f"P({print_atom(query.atom) if query.positive else '~' + print_atom(query.atom)}) = {result.p:.12g}")
    if args.grad:
        for slot in sorted(result.grad, key=str):
            name = slot
            if slot[0] == "p":
                name = registry.param_info[slot[1]].name
            print(f"  d/d{name} = {result.grad[slot]:.12g}")
    if args.oracle:
        p = _oracle_probability(compiled, registry, batch, query)
        print(f"oracle = {p:.12g}")
    return 0


def cmd_oracle(args) -> int:
    program = _load_program(args.program)
    query = parse_query(args.query)
    registry = _registry_for(program, args.uniform_neural, args.seed)
    batch = NeuralBatch(registry)
    compiled = compile_query(program, query, GroundOptions(step_limit=args.step_limit))
    p = _oracle_probability(compiled, registry, batch, query)
    print(f"P({print_atom(query.atom)}) = {p:.12g}  (world enumeration)")
    return 0


def _oracle_probability(compiled, registry, batch, query) -> float:
    def neural_fn(model, inputs):
        _, probs = batch.forward(model, inputs)
        return probs

    total = 0.0
    for q in compiled.ground_program.queries:
        total += enumerate_probability(
            compiled.ground_program, q, param_fn=registry.param_value, neural_fn=neural_fn
        )
    return 1.0 - total if not query.positive else total


def cmd_learn(args) -> int:
    program = _load_program(args.program)
    if program.neurals:
        raise NeurlogError("'learn' trains probabilistic parameters only; use 'experiment' for neural programs")
    registry = ModelRegistry(seed=args.seed)
    registry.register_program_params(program)
    examples = []
    for line in Path(args.examples).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        examples.append(TrainExample(parse_query(record["query"]).atom, float(record.get("target", 1.0))))
    config = TrainerConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        prob_lr=args.lr,
        loss=args.loss,
        seed=args.seed,
    )
    trainer = Trainer(program, registry, config)
    metrics = MetricsWriter(args.metrics_out)
    summary = trainer.train(examples, metrics=metrics)
    if args.metrics_out:
        out_dir = Path(args.metrics_out).parent
        metrics.write_summary_csv(out_dir / "summary.csv")
        from . import report

        report.render_metrics(metrics.rows, out_dir / "figures", title=Path(args.program).stem)
    for name, value in summary["params"].items():
        print(f"{name} = {value:.6f}")
    return 0


def cmd_experiment(args) -> int:
    import shutil

    from .experiments import run_experiment

    result = run_experiment(
        args.config,
        args.out,
        seed=args.seed,
        checkpoint=args.checkpoint,
        make_figures=not args.no_figures,
    )
    if args.metrics_out and result.metrics_path:
        Path(args.metrics_out).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(result.metrics_path, args.metrics_out)
    print(json.dumps(result.summary, indent=2, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neurlog", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, query=True):
        p.add_argument("program", help="path to a .pl program")
        if query:
            p.add_argument("query", help="query literal, e.g. 'calls(mary)'")
        p.add_argument("--step-limit", type=int, default=100_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--uniform-neural", action="store_true",
                       help="stub neural predicates with uniform outputs")

    p = sub.add_parser("ground", help="print the relevant ground program")
    common(p)
    p.set_defaults(fn=cmd_ground)

    p = sub.add_parser("compile", help="compile a query to a circuit")
    common(p)
    p.add_argument("--dump", choices=["text", "dot"], default=None)
    p.add_argument("--check", action="store_true", help="run structural circuit checks")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("infer", help="compute the query probability")
    common(p)
    p.add_argument("--grad", action="store_true", help="also print per-parameter partials")
    p.add_argument("--oracle", action="store_true", help="cross-check by world enumeration")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("oracle", help="query probability by brute-force enumeration")
    common(p)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("learn", help="gradient-descent on probabilistic parameters")
    p.add_argument("program")
    p.add_argument("examples", help="JSON-lines file of {query, target} records")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--loss", default="nll", choices=["nll", "cross_entropy", "mse"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics-out", default=None)
    p.set_defaults(fn=cmd_learn)

    p = sub.add_parser("experiment", help="run a configured experiment")
    p.add_argument("config", help="config name (t1, t4, t5, t6, t9) or a JSON path")
    p.add_argument("--out", default="runs/latest", help="run directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--metrics-out", default=None, help="also copy metrics.jsonl to this path")
    p.add_argument("--checkpoint", default=None, help="write a parameter checkpoint here")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Diagnostic as diag:
        print(str(diag), file=sys.stderr)
        return 1
    except NeurlogError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
