"""Right-hand sides of the form ``F(X, t) = sum_j A_j X B_j^T + G(t)``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .lowrank import LowRankMatrix, sum_factors

SourceFn = Callable[[float], LowRankMatrix]


def as_sparse(A) -> sp.csr_matrix:
    """CSR copy of ``A`` with duplicate entries summed."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    return A


@dataclass(frozen=True, eq=False)
class MatrixOperator:
    """Separable linear operator with an optional low-rank source.

    ``terms`` holds pairs ``(A_j, B_j)`` of sparse matrices acting on the
    left (``m1 x m1``) and right (``m2 x m2``) of ``X``.  ``stiff_pair``
    optionally names the term indices carrying the stiff operator in the
    first and second direction; only the fixed-point Galerkin solver uses it.
    """

    terms: tuple
    shape: tuple
    source: Optional[SourceFn] = None
    stiff_pair: Optional[tuple] = None
    name: str = ""

    def __init__(self, terms, shape=None, source=None, stiff_pair=None, name=""):
        terms = tuple((as_sparse(A), as_sparse(B)) for A, B in terms)
        if shape is None:
            if not terms:
                raise ValueError("shape is required for an operator without terms")
            shape = (terms[0][0].shape[0], terms[0][1].shape[0])
        m1, m2 = shape
        for j, (A, B) in enumerate(terms):
            if A.shape != (m1, m1) or B.shape != (m2, m2):
                raise ValueError(f"term {j} has shapes {A.shape}, {B.shape}; expected {shape}")
        if stiff_pair is not None:
            p, q = stiff_pair
            if not (0 <= p < len(terms) and 0 <= q < len(terms)):
                raise ValueError(f"stiff_pair {stiff_pair} out of range for {len(terms)} terms")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "shape", (int(m1), int(m2)))
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "stiff_pair", None if stiff_pair is None else tuple(stiff_pair))
        object.__setattr__(self, "name", name)

    @property
    def separation_rank(self) -> int:
        return len(self.terms)

    def source_at(self, t: float) -> Optional[LowRankMatrix]:
        if self.source is None:
            return None
        G = self.source(t)
        if G.shape != self.shape:
            raise ValueError(f"source has shape {G.shape}, expected {self.shape}")
        return G if G.rank > 0 else None

    def dense_apply(self, X: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Reference action on a dense ``m1 x m2`` array."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(self.shape)
        for A, B in self.terms:
            out += A @ (B @ X.T).T
        G = self.source_at(t)
        if G is not None:
            out += G.dense()
        return out

    def kron_matrix(self) -> sp.csc_matrix:
        """Sparse matrix of the linear part acting on column-major ``vec(X)``."""
        n = self.shape[0] * self.shape[1]
        M = sp.csc_matrix((n, n))
        for A, B in self.terms:
            M = M + sp.kron(B, A, format="csc")
        return M

    def transpose(self) -> "MatrixOperator":
        """Operator with ``F^T(Y) = F(Y^T)^T``, i.e. the pairs swapped."""
        src = None
        if self.source is not None:
            src = lambda t, f=self.source: f(t).T
        pair = None if self.stiff_pair is None else self.stiff_pair[::-1]
        return MatrixOperator([(B, A) for A, B in self.terms], self.shape[::-1], src, pair, self.name)

    def shifted(self, alpha: float) -> "MatrixOperator":
        """``F + alpha * I``."""
        m1, m2 = self.shape
        extra = (alpha * sp.identity(m1), sp.identity(m2))
        return MatrixOperator(list(self.terms) + [extra], self.shape, self.source, self.stiff_pair, self.name)


def _check(op: MatrixOperator, X: LowRankMatrix):
    if X.shape != op.shape:
        raise ValueError(f"argument has shape {X.shape}, operator expects {op.shape}")


def _factored_terms(op: MatrixOperator, X: LowRankMatrix, t: float):
    lefts, cores, rights = [], [], []
    if X.rank > 0:
        for A, B in op.terms:
            lefts.append(A @ X.left)
            cores.append(X.core)
            rights.append(B @ X.right)
    G = op.source_at(t)
    if G is not None:
        lefts.append(G.left)
        cores.append(G.core)
        rights.append(G.right)
    return lefts, cores, rights


def apply(op: MatrixOperator, X: LowRankMatrix, t: float = 0.0) -> list:
    """Terms ``(A_j U) S (B_j V)^T`` (re-orthonormalized) plus the source."""
    _check(op, X)
    lefts, cores, rights = _factored_terms(op, X, t)
    return [LowRankMatrix.from_factors(a, c, b) for a, c, b in zip(lefts, cores, rights)]


def apply_truncated(op: MatrixOperator, X: LowRankMatrix, t: float = 0.0,
                    eps1: float = 0.0) -> LowRankMatrix:
    """Canonical ``T_eps1(F(X, t))``."""
    _check(op, X)
    lefts, cores, rights = _factored_terms(op, X, t)
    return sum_factors(lefts, cores, rights, eps1, op.shape)


class ProjectedOperator:
    """Galerkin restriction of an operator to ``span(U) x span(V)``.

    Holds the small matrices ``U^T A_j U`` and ``V^T B_j^T V`` so that
    :meth:`apply` never touches an ``m``-sized array.
    """

    def __init__(self, op: MatrixOperator, U: np.ndarray, V: np.ndarray):
        m1, m2 = op.shape
        if U.shape[0] != m1 or V.shape[0] != m2:
            raise ValueError(f"bases of shape {U.shape}, {V.shape} do not fit operator {op.shape}")
        self.op = op
        self.U = U
        self.V = V
        self.lefts = [U.T @ (A @ U) for A, _ in op.terms]
        self.rights = [(V.T @ (B @ V)).T for _, B in op.terms]
        self.stiff_pair = op.stiff_pair

    @property
    def core_shape(self) -> tuple:
        return (self.U.shape[1], self.V.shape[1])

    def apply_linear(self, S: np.ndarray) -> np.ndarray:
        """``sum_j (U^T A_j U) S (V^T B_j^T V)``."""
        out = np.zeros(self.core_shape)
        for Al, Br in zip(self.lefts, self.rights):
            out += Al @ S @ Br
        return out

    def source(self, t: float) -> np.ndarray:
        """``U^T G(t) V`` (zeros if there is no source)."""
        G = self.op.source_at(t)
        if G is None:
            return np.zeros(self.core_shape)
        return (self.U.T @ G.left) @ G.core @ (G.right.T @ self.V)

    def apply(self, S: np.ndarray, t: float = 0.0) -> np.ndarray:
        return self.apply_linear(S) + self.source(t)


def precompute_projected(op: MatrixOperator, U: np.ndarray, V: np.ndarray) -> ProjectedOperator:
    return ProjectedOperator(op, U, V)


def projected_apply(op: MatrixOperator, U: np.ndarray, V: np.ndarray, S: np.ndarray,
                    t: float = 0.0) -> np.ndarray:
    """``U^T F(U S V^T, t) V`` from the factors, without forming ``m1 x m2`` arrays."""
    S = np.asarray(S, dtype=float)
    if S.shape != (U.shape[1], V.shape[1]):
        raise ValueError(f"core shape {S.shape} does not match bases {U.shape}, {V.shape}")
    m1, m2 = op.shape
    if U.shape[0] != m1 or V.shape[0] != m2:
        raise ValueError(f"bases of shape {U.shape}, {V.shape} do not fit operator {op.shape}")
    out = np.zeros(S.shape)
    for A, B in op.terms:
        out += (U.T @ (A @ U)) @ S @ (V.T @ (B @ V)).T
    G = op.source_at(t)
    if G is not None:
        out += (U.T @ G.left) @ G.core @ (G.right.T @ V)
    return out


def low_rank_source(left: np.ndarray, right: np.ndarray,
                    amplitude: Callable[[float], float] = lambda t: 1.0) -> SourceFn:
    """``G(t) = amplitude(t) * left @ right.T`` as a source factory."""
    base = LowRankMatrix.from_factors(left, np.eye(np.shape(left)[1]), right)

    def G(t):
        return base.scale(amplitude(t))

    return G


def identity_operator(m1: int, m2: int, lam: float = 1.0) -> MatrixOperator:
    """``F(X) = lam * X``."""
    return MatrixOperator([(lam * sp.identity(m1), sp.identity(m2))], (m1, m2))


def zero_operator(m1: int, m2: int) -> MatrixOperator:
    return MatrixOperator([], (m1, m2))


def random_operator(rng: np.random.Generator, m1: int, m2: int, s: int = 2,
                    density: float = 0.3, scale: float = 1.0,
                    source_rank: int = 0) -> MatrixOperator:
    """Random sparse operator for tests; entries ~ N(0, scale^2 / m)."""
    terms = []
    for _ in range(s):
        A = sp.random(m1, m1, density=density, random_state=rng, data_rvs=rng.standard_normal)
        B = sp.random(m2, m2, density=density, random_state=rng, data_rvs=rng.standard_normal)
        terms.append((scale * A / np.sqrt(density * m1), B / np.sqrt(density * m2)))
    source = None
    if source_rank:
        gl = rng.standard_normal((m1, source_rank))
        gr = rng.standard_normal((m2, source_rank))
        source = low_rank_source(gl, gr, lambda t: np.cos(t))
    return MatrixOperator(terms, (m1, m2), source)
