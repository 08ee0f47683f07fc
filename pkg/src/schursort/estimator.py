"""Scikit-learn style estimator wrapping the full order-then-prune pipeline."""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator

from .dag import WeightedDag
from .exceptions import InputError, ParameterError
from .hessian import (
    HessianProvider,
    LinearEmpiricalProvider,
    LinearPopulationProvider,
    OracleProvider,
)
from .mechanisms import MechanismSpec, SampleMatrix
from .prune import PruneConfig, prune
from .scorenet import ScoreNetConfig, ScoreNetProvider, train_score_net
from .sort import SortConfig, run_sort

PROVIDERS = ("neural", "oracle", "linear-pop", "linear-emp")


def check_data(X) -> np.ndarray:
    """Validate a 2-D finite sample matrix (light check_array equivalent)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError(f"expected a 2-D sample matrix, got ndim={X.ndim}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise InputError("sample matrix must have at least one row and column")
    if not np.all(np.isfinite(X)):
        raise InputError("sample matrix contains non-finite entries")
    return X


class ScoreSchurSort(BaseEstimator):
    """Extract a causal topological order and DAG from observational data.

    ``fit`` trains (or constructs) a Hessian provider, accumulates the
    symmetric information matrix, peels leaf blocks by Schur elimination and
    resolves edges by order-constrained penalized regression.

    Attributes after ``fit``: ``order_`` (TopoOrder), ``blocks_``,
    ``graph_`` (pruned WeightedDag), ``adjacency_`` (parent -> child boolean
    matrix), ``trace_`` (SortTrace with per-step diagnostics), ``sjim_``
    (the symmetrized matrix, expected modes only), ``timings_``.

    Parameters mirror the pipeline stages; ``provider`` selects between the
    trained neural score model, the analytic oracle (requires ``graph`` and
    ``mechanism``), and the linear population/empirical precision matrices.
    """

    def __init__(
        self,
        provider: str = "neural",
        gamma: float = 0.05,
        ridge: float = 1e-4,
        criterion: str = "diag_energy",
        mode: str = "expected",
        hidden_sizes=None,
        epochs: int = 200,
        batch_size: int = 128,
        learning_rate: float = 1e-3,
        noise_level: float = 0.1,
        lambda_sparse=None,
        objective: str = "denoising",
        micro_batch: int = 128,
        prune_penalty=None,
        coef_threshold: float = 0.05,
        feature_map: str = "raw+tanh",
        empirical_ridge: float = 0.0,
        random_state: int = 0,
        graph: WeightedDag | None = None,
        mechanism: MechanismSpec | None = None,
    ):
        self.provider = provider
        self.gamma = gamma
        self.ridge = ridge
        self.criterion = criterion
        self.mode = mode
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.noise_level = noise_level
        self.lambda_sparse = lambda_sparse
        self.objective = objective
        self.micro_batch = micro_batch
        self.prune_penalty = prune_penalty
        self.coef_threshold = coef_threshold
        self.feature_map = feature_map
        self.empirical_ridge = empirical_ridge
        self.random_state = random_state
        self.graph = graph
        self.mechanism = mechanism

    def _score_net_config(self) -> ScoreNetConfig:
        return ScoreNetConfig(
            hidden_sizes=self.hidden_sizes,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            noise_level=self.noise_level,
            lambda_sparse=self.lambda_sparse,
            objective=self.objective,
        )

    def _sort_config(self) -> SortConfig:
        return SortConfig(
            gamma=self.gamma,
            ridge=self.ridge,
            criterion=self.criterion,
            mode=self.mode,
        )

    def _prune_config(self) -> PruneConfig:
        return PruneConfig(
            penalty_weight=self.prune_penalty,
            coef_threshold=self.coef_threshold,
            feature_map=self.feature_map,
        )

    def _make_provider(self, data: SampleMatrix) -> tuple[HessianProvider, float]:
        t0 = time.perf_counter()
        if self.provider == "neural":
            model = train_score_net(
                data, self._score_net_config(), np.random.default_rng(self.random_state)
            )
            prov = ScoreNetProvider(model, micro_batch=self.micro_batch)
            self.score_model_ = model
        elif self.provider == "oracle":
            if self.graph is None or self.mechanism is None:
                raise ParameterError(
                    "the oracle provider needs the graph and mechanism parameters"
                )
            prov = OracleProvider(self.graph, self.mechanism)
        elif self.provider == "linear-pop":
            if self.graph is None:
                raise ParameterError("the linear-pop provider needs the graph parameter")
            prov = LinearPopulationProvider(self.graph)
        elif self.provider == "linear-emp":
            prov = LinearEmpiricalProvider(data.d, ridge=self.empirical_ridge)
        else:
            raise ParameterError(
                f"provider must be one of {PROVIDERS}, got {self.provider!r}"
            )
        return prov, time.perf_counter() - t0

    def fit(self, X, y=None):
        X = check_data(X)
        data = SampleMatrix(X, provenance="fit")
        provider, t_rep = self._make_provider(data)
        if provider.d != data.d:
            raise InputError("provider dimension does not match the data")
        state = None
        t_build = 0.0
        if self.mode != "exact_samplewise":
            from .sjim import build_sjim

            t0 = time.perf_counter()
            state = build_sjim(provider, data, ridge=self.ridge)
            t_build = time.perf_counter() - t0
            self.sjim_ = state.matrix.copy()
        trace = run_sort(provider, data, self._sort_config(), state=state)
        trace.t_rep = t_rep
        t0 = time.perf_counter()
        graph = prune(trace.order, data, self._prune_config())
        t_prune = time.perf_counter() - t0
        self.n_features_in_ = data.d
        self.provider_ = provider
        self.order_ = trace.order
        self.blocks_ = trace.order.blocks
        self.trace_ = trace
        self.graph_ = graph
        self.adjacency_ = graph.adjacency()
        self.timings_ = {
            "t_rep": t_rep,
            "t_build": t_build,
            "t_disc": trace.t_disc,
            "t_prune": t_prune,
            "t_total": t_rep + t_build + trace.t_disc + t_prune,
        }
        return self

    def fit_order(self, X) -> list[list[int]]:
        """Convenience: fit and return the extracted blocks."""
        return self.fit(X).blocks_
