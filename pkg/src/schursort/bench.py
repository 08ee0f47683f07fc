"""Experiment configuration, seeded multi-run orchestration, and reports.

A run is fully determined by (config, seed): the seed drives graph
generation, sampling, and score-model initialization. Reports carry one row
per seed plus a mean/std aggregate recomputable from the rows; failed seeds
are recorded with their error string and excluded from the aggregate.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dag import TopoOrder, WeightedDag, chain_graph, generate_er, generate_sf
from .estimator import check_data
from .exceptions import ParameterError, SchurSortError
from .hessian import (
    LinearEmpiricalProvider,
    LinearPopulationProvider,
    OracleProvider,
)
from .mechanisms import MechanismSpec, SampleMatrix, sample
from .memory import estimate_pipeline_memory
from .metrics import MetricsReport, edge_violations, fdr, shd, tpr
from .prune import PruneConfig, prune
from .scorenet import ScoreNetConfig, ScoreNetProvider, train_score_net
from .sjim import build_sjim
from .sort import SortConfig, run_sort

CLI_MODES = {"expected": "expected", "exact": "exact_samplewise", "patched": "expected_with_patch"}
CLI_CRITERIA = {"diag": "diag_energy", "cv2": "relative_variance"}


@dataclass
class ExperimentConfig:
    graph_kind: str = "er"
    d: int = 20
    expected_edges: float | None = None  # None -> d for ER
    attach_m: int = 2
    mechanism: str = "tanh-anm"
    noise: str = "gaussian"
    sigma: list | None = None
    n: int = 5000
    provider: str = "neural"
    gamma: float = 0.05
    ridge: float = 1e-4
    mode: str = "expected"
    criterion: str = "diag_energy"
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    noise_level: float = 0.1
    lambda_sparse: float | None = None
    hidden_sizes: list | None = None
    objective: str = "denoising"
    micro_batch: int = 128
    empirical_ridge: float = 0.0
    prune_penalty: float | None = None
    coef_threshold: float = 0.05
    feature_map: str = "raw+tanh"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: str | None = None
    format: str = "json-lines"

    def __post_init__(self):
        if not self.seeds:
            raise ParameterError("seeds must be nonempty")
        if self.format not in ("csv", "json-lines"):
            raise ParameterError(f"unknown report format {self.format!r}")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def make_graph(self, rng) -> WeightedDag:
        if self.graph_kind == "er":
            edges = self.expected_edges if self.expected_edges is not None else self.d
            g = generate_er(self.d, edges, rng)
        elif self.graph_kind == "sf":
            g = generate_sf(self.d, self.attach_m, rng)
        elif self.graph_kind == "chain":
            g = chain_graph(self.d)
        else:
            raise ParameterError(f"unknown graph kind {self.graph_kind!r}")
        if self.sigma is not None:
            sig = np.asarray(self.sigma, dtype=float)
            g = WeightedDag(g.d, g.edges, g.weights, sig)
        return g

    def make_mechanism(self) -> MechanismSpec:
        return MechanismSpec(kind=self.mechanism, noise=self.noise)

    def score_net_config(self) -> ScoreNetConfig:
        return ScoreNetConfig(
            hidden_sizes=tuple(self.hidden_sizes) if self.hidden_sizes else None,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            noise_level=self.noise_level,
            lambda_sparse=self.lambda_sparse,
            objective=self.objective,
        )

    def sort_config(self) -> SortConfig:
        return SortConfig(
            gamma=self.gamma, ridge=self.ridge,
            criterion=self.criterion, mode=self.mode,
        )

    def prune_config(self) -> PruneConfig:
        return PruneConfig(
            penalty_weight=self.prune_penalty,
            coef_threshold=self.coef_threshold,
            feature_map=self.feature_map,
        )


def make_provider(config: ExperimentConfig, g: WeightedDag, data: SampleMatrix, seed: int):
    """(provider, t_rep); training time is the representation-learning cost."""
    t0 = time.perf_counter()
    if config.provider == "neural":
        model = train_score_net(data, config.score_net_config(), np.random.default_rng(seed))
        provider = ScoreNetProvider(model, micro_batch=config.micro_batch)
    elif config.provider == "oracle":
        provider = OracleProvider(g, config.make_mechanism())
    elif config.provider == "linear-pop":
        provider = LinearPopulationProvider(g)
    elif config.provider == "linear-emp":
        provider = LinearEmpiricalProvider(data.d, ridge=config.empirical_ridge)
    else:
        raise ParameterError(f"unknown provider {config.provider!r}")
    return provider, time.perf_counter() - t0


def run_seed(config: ExperimentConfig, seed: int) -> dict:
    """One fully deterministic pipeline run; returns a flat report row."""
    rng = np.random.default_rng(seed)
    g = config.make_graph(rng)
    spec = config.make_mechanism()
    data = sample(g, spec, config.n, rng)
    provider, t_rep = make_provider(config, g, data, seed)
    state = None
    t_build = 0.0
    if config.mode != "exact_samplewise":
        t0 = time.perf_counter()
        state = build_sjim(provider, data, ridge=config.ridge)
        t_build = time.perf_counter() - t0
    trace = run_sort(provider, data, config.sort_config(), state=state)
    t0 = time.perf_counter()
    estimate = prune(trace.order, data, config.prune_config())
    t_prune = time.perf_counter() - t0
    mem = estimate_pipeline_memory(
        config.d, config.n, provider=config.provider, micro_batch=config.micro_batch,
        hidden_sizes=tuple(config.hidden_sizes) if config.hidden_sizes else None,
    )
    report = MetricsReport(
        ev=edge_violations(g, trace.order),
        shd=shd(g, estimate),
        tpr=tpr(g, estimate) if g.edges else 0.0,
        extras={
            "fdr": fdr(g, estimate),
            "kept_edges": len(estimate.edges),
            "true_edges": len(g.edges),
            "block_iters": trace.block_iters,
        },
    )
    return {
        "seed": seed,
        "ev": report.ev,
        "shd": report.shd,
        "tpr": report.tpr,
        **report.extras,
        "t_rep": t_rep,
        "t_build": t_build,
        "t_disc": trace.t_disc,
        "t_prune": t_prune,
        "t_total": t_rep + t_build + trace.t_disc + t_prune,
        "peak_mem_bytes": mem.peak_bytes,
    }


AGGREGATE_FIELDS = ("ev", "shd", "tpr", "block_iters", "t_rep", "t_disc", "t_prune", "t_total")


@dataclass
class RunReport:
    config_digest: str
    rows: list[dict]
    aggregate: dict
    n_failed: int

    def to_json_lines(self) -> str:
        buf = io.StringIO()
        for row in self.rows:
            buf.write(json.dumps(row, sort_keys=True) + "\n")
        buf.write(json.dumps({"aggregate": self.aggregate, "config": self.config_digest}) + "\n")
        return buf.getvalue()

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = sorted({k for row in self.rows for k in row})
        writer = csv.DictWriter(buf, fieldnames=cols)
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        for stat in ("mean", "std"):
            writer.writerow(
                {"seed": stat, **{
                    k: v[stat] for k, v in self.aggregate.items() if k in cols
                }}
            )
        return buf.getvalue()


def aggregate_rows(rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    agg = {}
    for key in AGGREGATE_FIELDS:
        vals = np.asarray([r[key] for r in ok if key in r], dtype=float)
        if len(vals):
            agg[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=0))}
    return agg


def run_experiment(config: ExperimentConfig) -> RunReport:
    """All seeds, aggregated; rows are ordered by seed value regardless of
    execution order. Failed seeds are kept as error rows."""
    rows = []
    for seed in sorted(config.seeds):
        try:
            rows.append(run_seed(config, seed))
        except (SchurSortError, np.linalg.LinAlgError) as exc:
            rows.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    report = RunReport(
        config_digest=config.digest(),
        rows=rows,
        aggregate=aggregate_rows(rows),
        n_failed=sum(1 for r in rows if "error" in r),
    )
    if config.out:
        with open(config.out, "w") as fh:
            fh.write(report.to_csv() if config.format == "csv" else report.to_json_lines())
    return report
