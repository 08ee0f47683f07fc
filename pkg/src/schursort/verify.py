"""Executable numerical checks of the structural identities the sorter relies on.

Each check compares two independently computed quantities (analytic formula
vs Monte Carlo, or two estimator routes) at an explicit tolerance and returns
a CheckResult; the CLI ``verify`` subcommand prints one line per check and
exits nonzero if any fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dag import WeightedDag, chain_graph, collider_graph, generate_er
from .hessian import (
    OracleProvider,
    linear_population_precision,
    oracle_hessian_batch,
)
from .mechanisms import MechanismSpec, sample
from .metrics import expected_kendall, kendall_mc
from .sjim import SjimState, schur_eliminate
from .sort import leaf_criterion_cv2, samplewise_schur_mean


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    expected: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: measured={self.measured:.6g} "
            f"expected={self.expected:.6g} tol={self.tolerance:.3g} {self.detail}"
        )


def check_leaf_diagonal_margin(
    d: int = 10, n: int = 20000, expected_edges: float | None = None, seed: int = 0
) -> CheckResult:
    """Leaves sit at 1/sigma^2, non-leaves exceed it by > 3 MC standard errors."""
    rng = np.random.default_rng(seed)
    g = generate_er(d, expected_edges if expected_edges is not None else 2 * d, rng)
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, n, rng)
    provider = OracleProvider(g, spec)
    diag = provider.hessian_diag_batch(data.data)
    mean = diag.mean(axis=0)
    se = diag.std(axis=0, ddof=1) / np.sqrt(n)
    inv_s2 = 1.0 / g.noise_scales**2
    leaves = g.leaves()
    leaf_dev = max(
        (abs(mean[i] - inv_s2[i]) - 3 * se[i] for i in leaves), default=0.0
    )
    nonleaf_margin = min(
        (mean[i] - inv_s2[i] - 3 * se[i] for i in range(d) if i not in leaves),
        default=np.inf,
    )
    passed = leaf_dev <= 1e-9 and nonleaf_margin > 0
    return CheckResult(
        name="leaf-diagonal margin",
        passed=bool(passed),
        measured=float(leaf_dev),
        expected=0.0,
        tolerance=1e-9,
        detail=f"min non-leaf margin over 3SE: {nonleaf_margin:.4g}",
    )


def check_linear_exact_marginalization(d: int = 50, seed: int = 0) -> CheckResult:
    """Peeling true leaves off the population precision reproduces the reduced
    model's precision entrywise (relative 1e-10)."""
    rng = np.random.default_rng(seed)
    g = generate_er(d, 2 * d, rng)
    state = SjimState(linear_population_precision(g), active=list(range(d)), ridge=0.0)
    reduced = g
    # map current reduced-graph indices to original node ids
    ids = list(range(d))
    worst = 0.0
    order = reduced.topological_sort()
    for node in reversed(order):
        local = ids.index(node)
        state = schur_eliminate(state, [node])
        reduced = reduced.delete_node(local)
        ids.pop(local)
        if ids:
            expect = linear_population_precision(reduced)
            got = state.active_matrix()
            scale = max(np.abs(expect).max(), 1.0)
            worst = max(worst, float(np.abs(got - expect).max() / scale))
    passed = worst <= 1e-10
    return CheckResult(
        name="linear exact marginalization",
        passed=bool(passed),
        measured=worst,
        expected=0.0,
        tolerance=1e-10,
        detail=f"full peel of d={d}",
    )


def _mean_and_se(stack: np.ndarray):
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    return mean, se


def check_marginal_equivalence(n: int = 100000, seed: int = 0) -> CheckResult:
    """E[Schur(H)] over joint samples equals the mean Hessian of the
    leaf-deleted model (fresh samples), entrywise within 5 combined SEs."""
    rng = np.random.default_rng(seed)
    g = WeightedDag(
        4,
        {(0, 1), (0, 2), (1, 3), (2, 3)},
        {(0, 1): 1.2, (0, 2): -0.8, (1, 3): 1.0, (2, 3): 0.7},
        np.ones(4),
    )
    spec = MechanismSpec(kind="tanh-anm")
    leaf = 3
    X = sample(g, spec, n, rng).data
    H = oracle_hessian_batch(g, spec, X)
    # per-sample Schur stack for SE estimation
    denom = H[:, leaf, leaf]
    S = np.asarray([i for i in range(4) if i != leaf])
    v = H[:, S, leaf]
    schur_stack = H[:, S[:, None], S[None, :]] - v[:, :, None] * v[:, None, :] / denom[:, None, None]
    m1, se1 = _mean_and_se(schur_stack)
    g2 = g.delete_node(leaf)
    X2 = sample(g2, spec, n, np.random.default_rng(seed + 1)).data
    H2 = oracle_hessian_batch(g2, spec, X2)
    m2, se2 = _mean_and_se(H2)
    tol = 5.0 * np.sqrt(se1**2 + se2**2) + 1e-12
    ratio = float(np.max(np.abs(m1 - m2) / tol))
    return CheckResult(
        name="marginal-equivalence (expected Schur)",
        passed=bool(ratio <= 1.0),
        measured=ratio,
        expected=0.0,
        tolerance=1.0,
        detail="max |dev| / (5 SE) over entries",
    )


def check_expectation_gap(n: int = 100000, seed: int = 0) -> CheckResult:
    """E[Schur(H)] - Schur(E[H]) equals -Cov(grad f_leaf)/sigma^2; entries
    outside the parent block are statistically zero (chain case)."""
    from .mechanisms import grad_batch

    spec = MechanismSpec(kind="tanh-anm")
    worst = 0.0
    details = []
    for g, leaf, pa in (
        (collider_graph(weights=(1.3, -0.9)), 2, (0, 1)),
        (chain_graph(3, weights=(1.1, 0.8)), 2, (1,)),
    ):
        rng = np.random.default_rng(seed)
        X = sample(g, spec, n, rng).data
        H = oracle_hessian_batch(g, spec, X)
        S = np.asarray([i for i in range(g.d) if i != leaf])
        denom = H[:, leaf, leaf]
        v = H[:, S, leaf]
        schur_stack = (
            H[:, S[:, None], S[None, :]] - v[:, :, None] * v[:, None, :] / denom[:, None, None]
        )
        m_schur, se_schur = _mean_and_se(schur_stack)
        gap = m_schur - (
            H.mean(axis=0)[np.ix_(S, S)]
            - np.outer(H.mean(axis=0)[S, leaf], H.mean(axis=0)[leaf, S])
            / H.mean(axis=0)[leaf, leaf]
        )
        # independent estimate of -Cov(grad f_leaf)/sigma^2
        X2 = sample(g, spec, n, np.random.default_rng(seed + 7)).data
        grads = grad_batch(spec, g, leaf, X2)[:, S]
        centered = grads - grads.mean(axis=0)
        cov = centered.T @ centered / n
        prod = centered[:, :, None] * centered[:, None, :]
        se_cov = prod.std(axis=0, ddof=1) / np.sqrt(n)
        formula = -cov / g.noise_scales[leaf] ** 2
        tol = 5.0 * np.sqrt(se_schur**2 + se_cov**2) + 1e-12
        ratio = float(np.max(np.abs(gap - formula) / tol))
        worst = max(worst, ratio)
        # localization: rows/cols outside pa(leaf) are zero within noise
        outside = [i for i, node in enumerate(S) if node not in pa]
        if outside:
            loc = float(
                max(
                    np.max(np.abs(gap[outside, :]) / tol[outside, :]),
                    np.max(np.abs(gap[:, outside]) / tol[:, outside]),
                )
            )
            worst = max(worst, loc)
            details.append(f"localization ratio {loc:.3g}")
    return CheckResult(
        name="expectation-gap formula",
        passed=bool(worst <= 1.0),
        measured=worst,
        expected=0.0,
        tolerance=1.0,
        detail="; ".join(details),
    )


def check_kendall_formula(trials: int = 100000, seed: int = 0) -> CheckResult:
    """Closed form vs Monte Carlo on a (d, w) grid; 4/sqrt(trials) tolerance."""
    grid = [(10, 2), (10, 10), (50, 25)]
    tol = 4.0 / np.sqrt(trials)
    worst = 0.0
    for d, w in grid:
        mc = kendall_mc(d, w, trials, np.random.default_rng(seed))
        worst = max(worst, abs(mc - expected_kendall(d, w)))
    return CheckResult(
        name="rank-correlation degradation",
        passed=bool(worst <= tol),
        measured=worst,
        expected=0.0,
        tolerance=float(tol),
        detail=f"grid {grid}",
    )


def heteroscedastic_chain(d: int = 5, sigma_root: float = 5.0, sigma_leaf: float = 0.2):
    """Nonlinear chain with geometrically interpolated noise scales."""
    sig = np.geomspace(sigma_root, sigma_leaf, d)
    return chain_graph(d, sigmas=sig)


def check_cv2_criterion(n: int = 10000, seed: int = 0) -> CheckResult:
    """Relative diagonal variance selects the true leaf where raw diagonal
    energy picks the large-noise root."""
    g = heteroscedastic_chain()
    spec = MechanismSpec(kind="tanh-anm")
    rng = np.random.default_rng(seed)
    data = sample(g, spec, n, rng)
    provider = OracleProvider(g, spec)
    ids, cv2 = leaf_criterion_cv2(provider, data)
    diag = provider.hessian_diag_batch(data.data).mean(axis=0)
    cv2_pick = int(ids[np.argmin(cv2)])
    diag_pick = int(np.argmin(diag))
    passed = cv2_pick == g.d - 1 and diag_pick != g.d - 1
    return CheckResult(
        name="relative-variance leaf criterion",
        passed=bool(passed),
        measured=float(cv2_pick),
        expected=float(g.d - 1),
        tolerance=0.0,
        detail=f"diag-energy picked node {diag_pick} (documented failure)",
    )


ALL_CHECKS = (
    check_leaf_diagonal_margin,
    check_linear_exact_marginalization,
    check_marginal_equivalence,
    check_expectation_gap,
    check_kendall_formula,
    check_cv2_criterion,
)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check(seed=seed) for check in ALL_CHECKS]
