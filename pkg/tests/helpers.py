"""Shared builders for the test suite."""

import numpy as np
import scipy.sparse as sp

from implicit_lowrank.lowrank import LowRankMatrix
from implicit_lowrank.operators import MatrixOperator


def random_lowrank(rng, m1, m2, r):
    U = np.linalg.qr(rng.standard_normal((m1, r)))[0]
    V = np.linalg.qr(rng.standard_normal((m2, r)))[0]
    return LowRankMatrix(U, rng.standard_normal((r, r)), V)


def canonical_random(rng, m1, m2, r):
    A = rng.standard_normal((m1, r)) @ rng.standard_normal((r, m2))
    return LowRankMatrix.from_dense(A)


def laplacian(m, h=None):
    h = 2.0 / (m + 1) if h is None else h
    return sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format="csr") / h**2


def heat_operator(m, nu=1.0):
    """``nu (L X + X L)`` with the stiff pair designated."""
    L = nu * laplacian(m)
    I = sp.identity(m)
    return MatrixOperator([(L, I), (I, L)], (m, m), stiff_pair=(0, 1))


def dense_ie(op, X, t, dt):
    """Assembled Kronecker direct solve; independent of ImplicitEulerSolver."""
    m1, m2 = op.shape
    K = sum(np.kron(B.toarray(), A.toarray()) for A, B in op.terms) if op.terms else np.zeros((m1 * m2,) * 2)
    b = X.ravel(order="F").copy()
    G = op.source_at(t + dt)
    if G is not None:
        b += dt * G.dense().ravel(order="F")
    return np.linalg.solve(np.eye(m1 * m2) - dt * K, b).reshape((m1, m2), order="F")


def dense_F(op, X, t=0.0):
    out = sum(A.toarray() @ X @ B.toarray().T for A, B in op.terms) if op.terms else np.zeros(op.shape)
    G = op.source_at(t)
    return out + (0 if G is None else G.dense())
