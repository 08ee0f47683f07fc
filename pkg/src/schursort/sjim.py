"""Symmetric empirical information matrix and block Schur elimination.

The state keeps the full d x d matrix resident and tracks the active (not yet
eliminated) index set, so eliminating a block never physically deletes rows:
the working matrix is always ``matrix[ix_(active, active)]``.

Eliminating block B maps the active submatrix S' = S \\ B to

    M[S', S'] <- M[S', S'] - M[S', B] (M[B, B] + ridge I)^{-1} M[B, S']

which is the Tikhonov-regularized Schur complement. For the population
precision of a linear model this is exact leaf marginalization: the result
equals the precision of the model with the leaf deleted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import BuildError, EliminationError, InputError
from .hessian import HessianProvider
from .mechanisms import SampleMatrix


@dataclass
class SjimState:
    """Symmetric d x d matrix plus active-set bookkeeping during elimination."""

    matrix: np.ndarray
    active: list[int]
    eliminated_blocks: list[list[int]] = field(default_factory=list)
    ridge: float = 0.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=self.matrix.dtype)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise InputError("matrix must be square")

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def copy(self) -> "SjimState":
        return SjimState(
            self.matrix.copy(),
            list(self.active),
            [list(b) for b in self.eliminated_blocks],
            self.ridge,
        )

    def active_matrix(self) -> np.ndarray:
        idx = np.asarray(self.active, dtype=int)
        return self.matrix[np.ix_(idx, idx)]


def build_sjim(
    provider: HessianProvider,
    data: SampleMatrix,
    ridge: float = 0.0,
    dtype=np.float64,
) -> SjimState:
    """Mean Hessian from the provider, symmetrized to (J + J^T)/2."""
    if provider.d != data.d:
        raise InputError(
            f"provider dimension {provider.d} does not match data dimension {data.d}"
        )
    J = np.asarray(provider.mean_hessian(data), dtype=dtype)
    if not np.all(np.isfinite(J)):
        raise BuildError("mean Hessian contains non-finite entries")
    M = 0.5 * (J + J.T)
    return SjimState(matrix=M, active=list(range(data.d)), ridge=ridge)


def _ldl_solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Pivoted LDL^T solve; fallback for blocks Cholesky rejects."""
    L, D, perm = scipy.linalg.ldl(A)
    try:
        y = scipy.linalg.solve_triangular(
            L[perm], rhs[perm], lower=True, unit_diagonal=True
        )
        z = np.linalg.solve(D, y)
        x = scipy.linalg.solve_triangular(
            L[perm].T, z, lower=False, unit_diagonal=True
        )
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EliminationError(
            "block is numerically singular; increase the ridge penalty"
        ) from exc
    if not np.all(np.isfinite(x)):
        raise EliminationError(
            "block inversion overflowed; increase the ridge penalty"
        )
    out = np.empty_like(x)
    out[perm] = x
    return out


def _schur_update(A_bb: np.ndarray, A_sb: np.ndarray, ridge: float) -> np.ndarray:
    """A_sb (A_bb + ridge I)^{-1} A_sb^T, exactly symmetric on the fast path.

    Cholesky factorization lets the update be formed as W W^T with
    W = A_sb L^{-T}, which is bitwise symmetric; the pivoted-LDL^T fallback
    handles non-positive-definite blocks and resymmetrizes explicitly.
    """
    A = A_bb.copy()
    A[np.diag_indices_from(A)] += ridge
    try:
        L = scipy.linalg.cholesky(A, lower=True)
        W = scipy.linalg.solve_triangular(L, A_sb.T, lower=True).T
        return W @ W.T
    except scipy.linalg.LinAlgError:
        update = A_sb @ _ldl_solve(A, A_sb.T)
        return 0.5 * (update + update.T)


_ROW_CHUNK = 128  # bounds fancy-indexing transients to O(chunk * |S|)


def _eliminate_inplace(state: SjimState, block: list[int]) -> None:
    block = [int(b) for b in block]
    if not block:
        raise InputError("elimination block must be nonempty")
    if not set(block) <= set(state.active):
        raise InputError(f"block {block} is not a subset of the active set")
    remaining = [i for i in state.active if i not in set(block)]
    if remaining:
        B = np.asarray(block, dtype=int)
        S = np.asarray(remaining, dtype=int)
        update = _schur_update(
            state.matrix[np.ix_(B, B)], state.matrix[np.ix_(S, B)], state.ridge
        )
        for start in range(0, len(S), _ROW_CHUNK):
            rows = S[start : start + _ROW_CHUNK]
            state.matrix[np.ix_(rows, S)] = (
                state.matrix[np.ix_(rows, S)] - update[start : start + _ROW_CHUNK]
            )
    state.active = remaining
    state.eliminated_blocks.append(block)


def schur_eliminate(state: SjimState, block) -> SjimState:
    """Value-semantics Schur elimination of ``block`` from the active set."""
    out = state.copy()
    _eliminate_inplace(out, list(block))
    return out


def diag_energy(state: SjimState) -> tuple[np.ndarray, np.ndarray]:
    """(node ids, diagonal entries) restricted to the active set."""
    if not state.active:
        raise InputError("active set is empty")
    idx = np.asarray(state.active, dtype=int)
    return idx, state.matrix.diagonal()[idx].copy()
