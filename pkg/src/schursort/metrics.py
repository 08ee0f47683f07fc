"""Structural evaluation: edge violations, SHD, TPR, and rank-correlation decay.

Edge violations count true edges whose parent lands after its child in the
flattened order; the count is invariant to reordering topologically parallel
nodes, which is why it is the primary order-level metric. Rank correlation
between two equally valid sorts of a graph with a W-wide parallel stratum
decays as 1 - W(W-1)/(d(d-1)) in expectation, so it is reported only through
the closed form and its Monte Carlo verifier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kendalltau

from .dag import TopoOrder, WeightedDag
from .exceptions import ParameterError, UndefinedMetricError


@dataclass
class MetricsReport:
    ev: int
    shd: int
    tpr: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.tpr <= 1.0:
            raise ParameterError(f"tpr must be in [0, 1], got {self.tpr}")

    def to_json(self) -> str:
        return json.dumps(
            {"ev": self.ev, "shd": self.shd, "tpr": self.tpr, **self.extras}
        )


def _as_edge_set(estimate) -> set[tuple[int, int]]:
    if isinstance(estimate, WeightedDag):
        return set(estimate.edges)
    return {(int(j), int(i)) for j, i in estimate}


def edge_violations(truth: WeightedDag, order: TopoOrder) -> int:
    """Number of true edges inverted by the flattened order."""
    order.validate_cover(truth.d)
    pos = order.positions()
    return sum(1 for (j, i) in truth.edges if pos[j] > pos[i])


def shd(truth: WeightedDag, estimate) -> int:
    """Missing + extra edges, counting a reversed edge once (a flip)."""
    t = set(truth.edges)
    e = _as_edge_set(estimate)
    flips = {(j, i) for (j, i) in t if (j, i) not in e and (i, j) in e}
    missing = {(j, i) for (j, i) in t if (j, i) not in e and (i, j) not in e}
    extra = {(j, i) for (j, i) in e if (j, i) not in t and (i, j) not in t}
    return len(flips) + len(missing) + len(extra)


def tpr(truth: WeightedDag, estimate) -> float:
    """Fraction of true edges recovered with the correct orientation."""
    t = set(truth.edges)
    if not t:
        raise UndefinedMetricError("TPR is undefined for an empty true edge set")
    e = _as_edge_set(estimate)
    return len(t & e) / len(t)


def fdr(truth: WeightedDag, estimate) -> float:
    """Fraction of estimated edges that are not correctly oriented truths."""
    e = _as_edge_set(estimate)
    if not e:
        return 0.0
    t = set(truth.edges)
    return len(e - t) / len(e)


def expected_kendall(d: int, w: int) -> float:
    """Closed-form expected rank correlation between two valid sorts of a
    graph whose only ambiguity is a stratum of w parallel leaves."""
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    if not 1 <= w <= d:
        raise ParameterError(f"w must be in [1, d], got {w}")
    return 1.0 - w * (w - 1) / (d * (d - 1))


def parallel_leaf_graph(d: int, w: int) -> WeightedDag:
    """Canonical ancestor chain of d-w nodes feeding w parallel leaves."""
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    if not 1 <= w <= d:
        raise ParameterError(f"w must be in [1, d], got {w}")
    edges = set()
    n_chain = d - w
    for i in range(n_chain - 1):
        edges.add((i, i + 1))
    if n_chain >= 1:
        for leaf in range(n_chain, d):
            edges.add((n_chain - 1, leaf))
    weights = {e: 1.0 for e in edges}
    return WeightedDag(d, edges, weights, np.ones(d))


def _sample_valid_sort(d: int, w: int, rng: np.random.Generator) -> np.ndarray:
    if w == d:
        return rng.permutation(d)
    head = np.arange(d - w)
    tail = d - w + rng.permutation(w)
    return np.concatenate([head, tail])


def kendall_mc(d: int, w: int, trials: int, rng) -> float:
    """Monte Carlo mean Kendall tau between pairs of uniformly sampled valid
    sorts of the canonical chain-plus-parallel-leaves graph."""
    expected_kendall(d, w)  # validates (d, w)
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    total = 0.0
    for _ in range(trials):
        a = _sample_valid_sort(d, w, rng)
        b = _sample_valid_sort(d, w, rng)
        pos_a = np.empty(d, dtype=int)
        pos_b = np.empty(d, dtype=int)
        pos_a[a] = np.arange(d)
        pos_b[b] = np.arange(d)
        total += kendalltau(pos_a, pos_b).statistic
    return total / trials
