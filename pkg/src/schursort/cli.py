"""Command-line interface: generate | extract | prune | bench | verify.

Exit codes: 0 success, 1 run failure (including any failed bench seed or
verification check), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import CLI_CRITERIA, CLI_MODES, ExperimentConfig, make_provider, run_experiment
from .dag import TopoOrder, WeightedDag
from .exceptions import ParameterError, SchurSortError
from .mechanisms import MechanismSpec, SampleMatrix, sample
from .metrics import edge_violations, shd, tpr
from .prune import PruneConfig, prune, save_edge_list
from .sjim import build_sjim
from .sort import run_sort
from .verify import run_all


def _add_common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=["oracle", "linear-pop", "linear-emp", "neural"],
                   default="neural")
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--ridge", type=float, default=1e-4)
    p.add_argument("--lambda-sparse", type=float, default=None)
    p.add_argument("--mode", choices=list(CLI_MODES), default="expected")
    p.add_argument("--criterion", choices=list(CLI_CRITERIA), default="diag")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--micro-batch", type=int, default=128)
    p.add_argument("--empirical-ridge", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schursort",
        description="Causal order extraction by Schur elimination on score-information matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic graph + dataset")
    g.add_argument("--d", type=int, default=20)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--graph-kind", choices=["er", "sf", "chain"], default="er")
    g.add_argument("--edges", type=float, default=None, help="expected ER edge count (default d)")
    g.add_argument("--attach-m", type=int, default=2)
    g.add_argument("--mechanism", choices=["linear", "tanh-anm", "mnm", "pnl"],
                   default="tanh-anm")
    g.add_argument("--noise", choices=["gaussian", "exponential", "gumbel"],
                   default="gaussian")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-data", required=True)
    g.add_argument("--out-graph", required=True)

    e = sub.add_parser("extract", help="extract a topological order from a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--graph", default=None, help="truth graph (oracle/linear-pop providers, EV report)")
    e.add_argument("--mechanism", choices=["linear", "tanh-anm", "mnm", "pnl"],
                   default="tanh-anm", help="mechanism kind for the oracle provider")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    _add_common_model_flags(e)

    p = sub.add_parser("prune", help="resolve edges from an extracted order")
    p.add_argument("--data", required=True)
    p.add_argument("--trace", required=True, help="trace JSON written by extract")
    p.add_argument("--graph", default=None, help="truth graph for SHD/TPR reporting")
    p.add_argument("--penalty", type=float, default=None)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--feature-map", choices=["raw", "raw+tanh"], default="raw+tanh")
    p.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="run a seeded experiment grid")
    b.add_argument("--config", default=None, help="JSON experiment config")
    b.add_argument("--seed-list", default=None, help="comma-separated seeds")
    b.add_argument("--d", type=int, default=None)
    b.add_argument("--n", type=int, default=None)
    b.add_argument("--gamma", type=float, default=None)
    b.add_argument("--ridge", type=float, default=None)
    b.add_argument("--lambda-sparse", type=float, default=None)
    b.add_argument("--provider", choices=["oracle", "linear-pop", "linear-emp", "neural"],
                   default=None)
    b.add_argument("--mode", choices=list(CLI_MODES), default=None)
    b.add_argument("--criterion", choices=list(CLI_CRITERIA), default=None)
    b.add_argument("--mechanism", default=None)
    b.add_argument("--out", default=None)
    b.add_argument("--format", choices=["csv", "json-lines"], default=None)

    v = sub.add_parser("verify", help="run the numerical identity checks")
    v.add_argument("--seed", type=int, default=0)

    return parser


def cmd_generate(args) -> int:
    config = ExperimentConfig(
        graph_kind=args.graph_kind, d=args.d, expected_edges=args.edges,
        attach_m=args.attach_m, mechanism=args.mechanism, noise=args.noise,
        n=args.n, seeds=[args.seed],
    )
    rng = np.random.default_rng(args.seed)
    g = config.make_graph(rng)
    data = sample(g, config.make_mechanism(), args.n, rng)
    g.save(args.out_graph)
    data.to_csv(args.out_data)
    print(f"graph: {args.out_graph}  data: {args.out_data}")
    print(f"provenance: {config.digest()} seed={args.seed} ({data.provenance})")
    return 0


def cmd_extract(args) -> int:
    data = SampleMatrix.from_csv(args.data)
    graph = WeightedDag.load(args.graph) if args.graph else None
    if args.provider in ("oracle", "linear-pop") and graph is None:
        raise ParameterError(f"provider {args.provider!r} requires --graph")
    config = ExperimentConfig(
        d=data.d, n=data.n, provider=args.provider, gamma=args.gamma,
        ridge=args.ridge, mode=CLI_MODES[args.mode],
        criterion=CLI_CRITERIA[args.criterion], epochs=args.epochs,
        lambda_sparse=args.lambda_sparse, micro_batch=args.micro_batch,
        empirical_ridge=args.empirical_ridge, mechanism=args.mechanism,
        seeds=[args.seed],
    )
    provider, t_rep = make_provider(config, graph, data, args.seed)
    state = None
    if config.mode != "exact_samplewise":
        state = build_sjim(provider, data, ridge=config.ridge)
    trace = run_sort(provider, data, config.sort_config(), state=state)
    trace.t_rep = t_rep
    with open(args.out, "w") as fh:
        json.dump(trace.to_dict(), fh, indent=2)
    line = f"blocks={trace.block_iters} t_rep={t_rep:.3f}s t_disc={trace.t_disc:.3f}s"
    if graph is not None:
        line += f" EV={edge_violations(graph, trace.order)}"
    print(line)
    return 0


def cmd_prune(args) -> int:
    data = SampleMatrix.from_csv(args.data)
    with open(args.trace) as fh:
        order = TopoOrder(blocks=[[int(i) for i in b] for b in json.load(fh)["order"]])
    cfg = PruneConfig(
        penalty_weight=args.penalty, coef_threshold=args.threshold,
        feature_map=args.feature_map,
    )
    estimate = prune(order, data, cfg)
    save_edge_list(estimate, args.out)
    line = f"kept_edges={len(estimate.edges)}"
    if args.graph:
        truth = WeightedDag.load(args.graph)
        line += f" SHD={shd(truth, estimate)}"
        if truth.edges:
            line += f" TPR={tpr(truth, estimate):.3f}"
    print(line)
    return 0


def cmd_bench(args) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {
        "d": args.d, "n": args.n, "gamma": args.gamma, "ridge": args.ridge,
        "lambda_sparse": args.lambda_sparse, "provider": args.provider,
        "mechanism": args.mechanism, "out": args.out, "format": args.format,
    }
    if args.mode is not None:
        overrides["mode"] = CLI_MODES[args.mode]
    if args.criterion is not None:
        overrides["criterion"] = CLI_CRITERIA[args.criterion]
    if args.seed_list is not None:
        overrides["seeds"] = [int(s) for s in args.seed_list.split(",")]
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    report = run_experiment(config)
    for row in report.rows:
        print(json.dumps(row, sort_keys=True))
    print(json.dumps({"aggregate": report.aggregate}))
    if args.out:
        print(f"report written to {args.out}")
    return 1 if report.n_failed else 0


def cmd_verify(args) -> int:
    results = run_all(seed=args.seed)
    for result in results:
        print(result.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "extract": cmd_extract,
        "prune": cmd_prune,
        "bench": cmd_bench,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except (ParameterError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SchurSortError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
