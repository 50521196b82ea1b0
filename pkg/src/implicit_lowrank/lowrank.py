"""Factored low-rank matrices, truncated SVD and truncated sums.

A matrix is stored as ``left @ core @ right.T`` with orthonormal ``left`` and
``right``.  The core is a small dense block and is not required to be
diagonal; after :func:`truncate_svd` or :func:`low_rank_sum` it is, and the
result is flagged ``canonical``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la

# eps = 0 still drops singular values below this fraction of sigma_1
RELATIVE_FLOOR = 1e-14
ABSOLUTE_FLOOR = 1e-30
# orthonormal_union drops pivots with |R_ii| <= UNION_DROP * |R_11|
UNION_DROP = 1e-12


@dataclass(frozen=True, eq=False)
class LowRankMatrix:
    """``X = left @ core @ right.T`` with orthonormal factor columns."""

    left: np.ndarray
    core: np.ndarray
    right: np.ndarray
    canonical: bool = False
    shape: tuple = field(init=False)

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        core = np.atleast_2d(np.asarray(self.core, dtype=float))
        right = np.asarray(self.right, dtype=float)
        if left.ndim != 2 or right.ndim != 2:
            raise ValueError("factors must be 2-d arrays")
        if core.size == 0:
            core = np.zeros((left.shape[1], right.shape[1]))
        if core.shape != (left.shape[1], right.shape[1]):
            raise ValueError(
                f"core shape {core.shape} incompatible with factors "
                f"{left.shape} and {right.shape}"
            )
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "shape", (left.shape[0], right.shape[0]))

    @classmethod
    def zeros(cls, m1: int, m2: int) -> "LowRankMatrix":
        return cls(np.zeros((m1, 0)), np.zeros((0, 0)), np.zeros((m2, 0)), canonical=True)

    @classmethod
    def from_dense(cls, A: np.ndarray, eps: float = 0.0) -> "LowRankMatrix":
        """Canonical form of a dense matrix, truncated at Frobenius tolerance ``eps``."""
        A = np.asarray(A, dtype=float)
        u, s, vt = la.svd(A, full_matrices=False)
        k = _truncation_rank(s, eps)
        return cls(u[:, :k], np.diag(s[:k]), vt[:k].T, canonical=True)

    @classmethod
    def from_factors(cls, left, core, right) -> "LowRankMatrix":
        """Build from arbitrary (not necessarily orthonormal) factors."""
        ql, rl = la.qr(np.asarray(left, dtype=float), mode="economic")
        qr_, rr = la.qr(np.asarray(right, dtype=float), mode="economic")
        return cls(ql, rl @ np.atleast_2d(core) @ rr.T, qr_)

    @property
    def rank(self) -> int:
        """Number of stored columns; the numerical rank for canonical values."""
        return min(self.left.shape[1], self.right.shape[1])

    @property
    def singular_values(self) -> np.ndarray:
        if self.canonical:
            return np.diag(self.core).copy()
        return la.svdvals(self.core) if self.core.size else np.zeros(0)

    def dense(self) -> np.ndarray:
        return dense(self)

    def norm(self) -> float:
        """Frobenius norm, read off the core."""
        return float(np.linalg.norm(self.core))

    def scale(self, alpha: float) -> "LowRankMatrix":
        if alpha >= 0:
            return LowRankMatrix(self.left, alpha * self.core, self.right, self.canonical)
        return LowRankMatrix(self.left, alpha * self.core, self.right)

    def __neg__(self):
        return self.scale(-1.0)

    @property
    def T(self) -> "LowRankMatrix":
        return LowRankMatrix(self.right, self.core.T, self.left, self.canonical)


def dense(X: LowRankMatrix) -> np.ndarray:
    if X.core.size == 0:
        return np.zeros(X.shape)
    return (X.left @ X.core) @ X.right.T


def _truncation_rank(s: np.ndarray, eps: float, max_rank: int | None = None,
                     scale: float = 0.0) -> int:
    """Smallest k with sqrt(sum_{j>=k} s_j^2) <= eps, then the numerical floor.

    The floor is relative to ``max(s_1, scale)``; ``scale`` lets a sum pass
    the size of its inputs so that cancellation noise is removed.
    """
    if s.size == 0 or s[0] <= ABSOLUTE_FLOOR:
        return 0
    # tail[k] = energy discarded when keeping k values
    tail = np.sqrt(np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]]))
    k = int(np.argmax(tail <= eps))
    floor = max(RELATIVE_FLOOR * max(s[0], scale), ABSOLUTE_FLOOR)
    k = min(k, int(np.count_nonzero(s > floor)))
    if max_rank is not None:
        k = min(k, max_rank)
    return k


def truncate_svd(X: LowRankMatrix, eps: float = 0.0, max_rank: int | None = None,
                 _scale: float = 0.0) -> LowRankMatrix:
    """Truncated SVD of ``X`` with Frobenius error at most ``eps``.

    The retained rank is the smallest one whose discarded tail energy is
    ``<= eps``.  Singular values below ``1e-14 * sigma_1`` are always dropped.
    ``max_rank`` forces further truncation (and then the error bound is lost).
    """
    if eps < 0:
        raise ValueError("tolerance must be nonnegative")
    m1, m2 = X.shape
    if X.core.size == 0:
        return LowRankMatrix.zeros(m1, m2)
    u, s, vt = la.svd(X.core, full_matrices=False, lapack_driver="gesdd")
    k = _truncation_rank(s, eps, max_rank, _scale)
    if k == 0:
        return LowRankMatrix.zeros(m1, m2)
    return LowRankMatrix(X.left @ u[:, :k], np.diag(s[:k]), X.right @ vt[:k].T, canonical=True)


def _pivoted_qr(A: np.ndarray):
    """``A = Q @ R_unpermuted``; returns Q and R with the pivoting undone."""
    Q, R, piv = la.qr(A, mode="economic", pivoting=True)
    Rp = np.empty_like(R)
    Rp[:, piv] = R
    return Q, Rp


def sum_factors(lefts, cores, rights, eps: float = 0.0, shape=None,
                max_rank: int | None = None) -> LowRankMatrix:
    """Truncated sum of ``lefts[j] @ cores[j] @ rights[j].T``.

    The factors need not be orthonormal.  Stacked factors are reduced by
    column-pivoted QR and only the small core product is decomposed.
    """
    lefts = [np.asarray(a, dtype=float) for a in lefts]
    rights = [np.asarray(b, dtype=float) for b in rights]
    if shape is None:
        if not lefts:
            raise ValueError("shape is required for an empty sum")
        shape = (lefts[0].shape[0], rights[0].shape[0])
    m1, m2 = shape
    keep = []
    for a, c, b in zip(lefts, cores, rights):
        if a.shape[0] != m1 or b.shape[0] != m2:
            raise ValueError(f"term of shape {(a.shape[0], b.shape[0])} does not match {shape}")
        if a.shape[1] and b.shape[1]:
            keep.append((a, np.atleast_2d(c), b))
    if not keep:
        return LowRankMatrix.zeros(m1, m2)
    U = np.hstack([a for a, _, _ in keep])
    V = np.hstack([b for _, _, b in keep])
    S = la.block_diag(*[c for _, c, _ in keep])
    Q1, R1 = _pivoted_qr(U)
    Q2, R2 = _pivoted_qr(V)
    M = R1 @ S @ R2.T
    # size of the largest summand; anything 1e-14 below it is cancellation noise
    scale = max(np.linalg.norm(a, 2) * np.linalg.norm(c, 2) * np.linalg.norm(b, 2) for a, c, b in keep)
    # rotations by Q1, Q2 leave the Frobenius tail criterion unchanged
    return truncate_svd(LowRankMatrix(Q1, M, Q2), eps, max_rank, _scale=scale)


def low_rank_sum(terms: Sequence[LowRankMatrix], eps: float = 0.0, shape=None,
                 max_rank: int | None = None) -> LowRankMatrix:
    """Canonical truncated sum of low-rank matrices, ``||sum - result||_F <= eps``."""
    terms = list(terms)
    if terms:
        shapes = {X.shape for X in terms}
        if len(shapes) != 1:
            raise ValueError(f"mismatched term shapes {sorted(shapes)}")
        if shape is not None and tuple(shape) not in shapes:
            raise ValueError(f"terms have shape {shapes.pop()}, expected {shape}")
        shape = terms[0].shape
    return sum_factors(
        [X.left for X in terms], [X.core for X in terms], [X.right for X in terms],
        eps, shape, max_rank,
    )


def orthonormal_union(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Orthonormal basis for the joint column span of ``blocks``.

    Columns are normalized before a column-pivoted QR; trailing pivots with
    ``|R_ii| <= 1e-12 |R_11|`` are treated as dependent and dropped.
    """
    blocks = [np.asarray(b, dtype=float).reshape(b.shape[0], -1) for b in blocks]
    m = {b.shape[0] for b in blocks}
    if len(m) != 1:
        raise ValueError(f"blocks have differing row counts {sorted(m)}")
    m = m.pop()
    A = np.hstack(blocks)
    norms = np.linalg.norm(A, axis=0)
    nz = norms > 0
    if not nz.any():
        return np.zeros((m, 0))
    A = A[:, nz] / norms[nz]
    Q, R, _ = la.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    k = int(np.count_nonzero(d > UNION_DROP * d[0]))
    return Q[:, :k]


def frobenius_inner(X: LowRankMatrix, Y: LowRankMatrix) -> float:
    """<X, Y> = trace(X^T Y) evaluated on the factors."""
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    if X.core.size == 0 or Y.core.size == 0:
        return 0.0
    # <U1 S1 V1^T, A> = <S1, U1^T A V1> with A = U2 S2 V2^T
    M = (X.left.T @ Y.left) @ Y.core @ (Y.right.T @ X.right)
    return float(np.sum(M * X.core))
