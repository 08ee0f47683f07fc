"""Per-sample Hessians of the data log-density and their streamed means.

The central object is H(x) = -grad^2 log p(x). For an additive-noise model
with Gaussian noise the chain rule gives the closed form

    H(x) = (I - A(x))^T D^{-1} (I - A(x)) - sum_k (eps_k(x)/sigma_k^2) T_k(x)

where A(x)[k, i] = df_k/dx_i, T_k(x) is the curvature block of f_k, D is
diag(sigma^2) and eps_k = x_k - f_k. The second term has zero mean, so the
expected H is the information matrix of the joint density; a leaf's diagonal
entry is the constant 1/sigma_leaf^2 in every sample.

Three provider families implement a common interface: the analytic oracle,
linear-Gaussian precision matrices (population and empirical), and the neural
score model (see scorenet.py).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dag import WeightedDag
from .exceptions import (
    BuildError,
    CapabilityError,
    EliminationError,
    UnsupportedMechanismError,
)
from .mechanisms import (
    ANM_KINDS,
    MechanismSpec,
    SampleMatrix,
    f_all,
    grad_batch,
    hess_block_batch,
)

PER_SAMPLE = "per_sample"
STREAMING_MEAN = "streaming_mean"
OFFDIAG_SAMPLES = "offdiag_samples"

DEFAULT_CHUNK = 1024
CHUNK_BUDGET_BYTES = 64 << 20  # cap on one chunk's (rows, d, d) stack


def auto_chunk(d: int, requested: int = DEFAULT_CHUNK) -> int:
    """Rows per chunk so a (rows, d, d) float64 stack stays under budget."""
    return max(1, min(requested, CHUNK_BUDGET_BYTES // max(d * d * 8, 1)))


class HessianProvider(ABC):
    """Source of per-sample Hessians and/or their streaming mean."""

    capabilities: frozenset = frozenset()

    def __init__(self, d: int):
        self.d = d

    def has(self, capability: str) -> bool:
        return capability in self.capabilities

    def require(self, capability: str) -> None:
        if not self.has(capability):
            raise CapabilityError(
                f"{type(self).__name__} lacks the {capability!r} capability"
            )

    @abstractmethod
    def mean_hessian(self, data: SampleMatrix) -> np.ndarray:
        """(d, d) mean of per-sample Hessians (or a direct estimate)."""

    def hessian_batch(self, X: np.ndarray) -> np.ndarray:
        """(B, d, d) per-sample Hessians; requires the per_sample capability."""
        self.require(PER_SAMPLE)
        raise NotImplementedError

    def hessian_diag_batch(self, X: np.ndarray) -> np.ndarray:
        """(B, d) per-sample Hessian diagonals."""
        self.require(PER_SAMPLE)
        return np.einsum("bii->bi", self.hessian_batch(X))


def _check_chunk_finite(H: np.ndarray, offset: int) -> None:
    bad = ~np.isfinite(H.reshape(H.shape[0], -1)).all(axis=1)
    if bad.any():
        first = offset + int(np.argmax(bad))
        raise BuildError(
            f"non-finite Hessian contribution at sample {first}", sample_index=first
        )


def streamed_mean_hessian(
    provider: HessianProvider, data: SampleMatrix, chunk: int = DEFAULT_CHUNK
) -> np.ndarray:
    """Chunked mean of per-sample Hessians with a running float64 accumulator."""
    provider.require(PER_SAMPLE)
    chunk = auto_chunk(provider.d, chunk)
    acc = np.zeros((provider.d, provider.d))
    for start in range(0, data.n, chunk):
        H = provider.hessian_batch(data.data[start : start + chunk])
        _check_chunk_finite(H, start)
        acc += H.sum(axis=0)
    return acc / data.n


# -- analytic oracle ----------------------------------------------------------


def _require_oracle_support(spec: MechanismSpec) -> None:
    if spec.kind not in ANM_KINDS:
        raise UnsupportedMechanismError(
            f"analytic Hessians require an additive-noise kind, got {spec.kind!r}"
        )
    if spec.noise != "gaussian":
        raise UnsupportedMechanismError(
            "analytic Hessians assume Gaussian noise; "
            f"got noise family {spec.noise!r}"
        )


def oracle_hessian_batch(
    g: WeightedDag, spec: MechanismSpec, X: np.ndarray
) -> np.ndarray:
    """(B, d, d) exact sample-wise Hessians assembled from mechanism derivatives."""
    _require_oracle_support(spec)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    inv_s2 = 1.0 / spec.sigmas(g) ** 2
    A = np.zeros((n, d, d))
    for k in range(d):
        A[:, k, :] = grad_batch(spec, g, k, X)
    IA = np.eye(d)[None, :, :] - A
    H = np.einsum("bki,k,bkm->bim", IA, inv_s2, IA, optimize=True)
    eps = X - f_all(spec, g, X)
    for k in range(d):
        pa, block = hess_block_batch(spec, g, k, X)
        if len(pa) == 0:
            continue
        coef = eps[:, k] * inv_s2[k]
        H[:, pa[:, None], pa[None, :]] -= coef[:, None, None] * block
    return H


def oracle_hessian(g: WeightedDag, spec: MechanismSpec, x: np.ndarray) -> np.ndarray:
    """Exact d x d Hessian of -log p at a single point."""
    return oracle_hessian_batch(g, spec, np.asarray(x, dtype=float)[None, :])[0]


def oracle_log_density(g: WeightedDag, spec: MechanismSpec, X: np.ndarray) -> np.ndarray:
    """log p(x) per row for Gaussian additive-noise mechanisms."""
    _require_oracle_support(spec)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sigma = spec.sigmas(g)
    eps = X - f_all(spec, g, X)
    return (-0.5 * (eps / sigma) ** 2 - 0.5 * np.log(2 * np.pi * sigma**2)).sum(axis=1)


class OracleProvider(HessianProvider):
    """Analytic per-sample Hessians from the true graph and mechanism."""

    capabilities = frozenset({PER_SAMPLE, STREAMING_MEAN, OFFDIAG_SAMPLES})

    def __init__(self, g: WeightedDag, spec: MechanismSpec, chunk: int = DEFAULT_CHUNK):
        super().__init__(g.d)
        _require_oracle_support(spec)
        self.g = g
        self.spec = spec
        self.chunk = chunk

    def hessian_batch(self, X: np.ndarray) -> np.ndarray:
        return oracle_hessian_batch(self.g, self.spec, X)

    def hessian_diag_batch(self, X: np.ndarray) -> np.ndarray:
        # Diagonal only: sum_k inv_s2[k] * (I-A)[k,i]^2 + curvature diagonal.
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, d = X.shape
        inv_s2 = 1.0 / self.spec.sigmas(self.g) ** 2
        diag = np.full((n, d), 0.0)
        eps = X - f_all(self.spec, self.g, X)
        diag += inv_s2[None, :]
        for k in range(d):
            Gk = grad_batch(self.spec, self.g, k, X)
            diag += inv_s2[k] * Gk**2
            pa, block = hess_block_batch(self.spec, self.g, k, X)
            if len(pa):
                diag[:, pa] -= (eps[:, k] * inv_s2[k])[:, None] * np.einsum(
                    "bpp->bp", block
                )
        return diag

    def mean_hessian(self, data: SampleMatrix) -> np.ndarray:
        return streamed_mean_hessian(self, data, self.chunk)


# -- linear-Gaussian precision -------------------------------------------------


def linear_population_precision(g: WeightedDag) -> np.ndarray:
    """Exact (I-B)^T D^{-1} (I-B) with D = diag(sigma_i^2)."""
    IB = np.eye(g.d) - g.weight_matrix()
    inv_s2 = 1.0 / g.noise_scales**2
    return (IB.T * inv_s2) @ IB


def linear_empirical_precision(data: SampleMatrix, ridge: float = 0.0) -> np.ndarray:
    """Inverse of (sample covariance + ridge * I); columns centered internally."""
    X = data.data - data.data.mean(axis=0)
    ddof = 1 if data.n > 1 else 0
    cov = X.T @ X / max(data.n - ddof, 1)
    cov[np.diag_indices_from(cov)] += ridge
    try:
        if np.linalg.cond(cov) > 1e12:
            raise scipy.linalg.LinAlgError("ill-conditioned covariance")
        factor = scipy.linalg.cho_factor(cov)
        prec = scipy.linalg.cho_solve(factor, np.eye(data.d))
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise EliminationError(
            "sample covariance is numerically singular; pass a positive ridge"
        ) from exc
    return 0.5 * (prec + prec.T)


class LinearPopulationProvider(HessianProvider):
    """Constant Hessian equal to the analytic precision of a linear model."""

    capabilities = frozenset({PER_SAMPLE, STREAMING_MEAN, OFFDIAG_SAMPLES})

    def __init__(self, g: WeightedDag):
        super().__init__(g.d)
        self.matrix = linear_population_precision(g)

    def mean_hessian(self, data: SampleMatrix) -> np.ndarray:
        return self.matrix.copy()

    def hessian_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.broadcast_to(self.matrix, (X.shape[0], self.d, self.d)).copy()

    def hessian_diag_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.broadcast_to(self.matrix.diagonal(), (X.shape[0], self.d)).copy()


class LinearEmpiricalProvider(HessianProvider):
    """Empirical precision matrix inverted from the observed covariance."""

    capabilities = frozenset({STREAMING_MEAN})

    def __init__(self, d: int, ridge: float = 0.0):
        super().__init__(d)
        self.ridge = ridge

    def mean_hessian(self, data: SampleMatrix) -> np.ndarray:
        return linear_empirical_precision(data, self.ridge)


# -- per-sample off-diagonal blocks --------------------------------------------


@dataclass
class OffdiagBlocks:
    """Streaming accumulators for H[rest, leaf_set](x) across samples.

    ``mean`` is the (|rest|, |leaf|) running mean; ``second_moment[l]`` holds
    E[v v^T] for column l, so ``cov(l)`` is the biased sample covariance used
    by the covariance patch.
    """

    rest: np.ndarray
    leaf: np.ndarray
    count: int = 0
    mean: np.ndarray = None
    second_moment: list = field(default_factory=list)
    blocks: np.ndarray | None = None

    def cov(self, leaf_pos: int) -> np.ndarray:
        m = self.mean[:, leaf_pos]
        return self.second_moment[leaf_pos] / self.count - np.outer(m, m)


def offdiag_block_samples(
    provider: HessianProvider,
    data: SampleMatrix,
    leaf_set,
    keep_blocks: bool = False,
    chunk: int = DEFAULT_CHUNK,
) -> OffdiagBlocks:
    """Stream per-sample H[rest, leaf_set] blocks with mean/second-moment sums."""
    provider.require(PER_SAMPLE)
    chunk = auto_chunk(provider.d, chunk)
    leaf = np.asarray(sorted(leaf_set), dtype=int)
    rest = np.asarray([i for i in range(provider.d) if i not in set(leaf.tolist())], dtype=int)
    sums = np.zeros((len(rest), len(leaf)))
    sq = [np.zeros((len(rest), len(rest))) for _ in leaf]
    kept = [] if keep_blocks else None
    n = data.n
    for start in range(0, n, chunk):
        H = provider.hessian_batch(data.data[start : start + chunk])
        _check_chunk_finite(H, start)
        V = H[:, rest[:, None], leaf[None, :]]  # (B, |rest|, |leaf|)
        sums += V.sum(axis=0)
        for pos in range(len(leaf)):
            sq[pos] += np.einsum("bi,bj->ij", V[:, :, pos], V[:, :, pos])
        if keep_blocks:
            kept.append(V)
    out = OffdiagBlocks(rest=rest, leaf=leaf, count=n)
    out.mean = sums / n
    out.second_moment = sq
    if keep_blocks:
        out.blocks = np.concatenate(kept, axis=0) if kept else np.zeros((0, len(rest), len(leaf)))
    return out
