"""Desk-scale invariant checks, one group per module.

Used by ``lowrank-bench --selftest``. Everything here runs in a few seconds.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .integrators import StepControls, evolve, implicit_euler_dense, merge_adapt_step, merge_step
from .linsolve import SolveControls, galerkin_solve_fixed_point, galerkin_solve_gmres, gmres, sylvester_dense, LinearMap
from .lowrank import LowRankMatrix, low_rank_sum, truncate_svd
from .operators import ProjectedOperator, apply, random_operator
from .pde import catalog, d_zero, discretize, flux_operator, grid


def _lowrank(rng):
    A = rng.standard_normal((30, 4)) @ rng.standard_normal((4, 25))
    B = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 25))
    X, Y = LowRankMatrix.from_dense(A), LowRankMatrix.from_dense(B)
    Z = low_rank_sum([X, Y])
    ok = np.linalg.norm(Z.dense() - A - B) <= 1e-10 * np.linalg.norm(A + B)
    T = truncate_svd(X, eps=0.0)
    ok &= T.rank == 4 and np.allclose(T.left.T @ T.left, np.eye(4), atol=1e-12)
    return ok and np.all(np.diff(T.singular_values) <= 0)


def _operators(rng):
    op = random_operator(rng, 12, 9, 3)
    X = LowRankMatrix.from_dense(rng.standard_normal((12, 2)) @ rng.standard_normal((2, 9)))
    full = sum(T.dense() for T in apply(op, X, 0.3))
    ok = np.allclose(full, op.dense_apply(X.dense(), 0.3), atol=1e-12)
    vec = op.kron_matrix() @ X.dense().ravel(order="F")
    return ok and np.allclose(vec, op.dense_apply(X.dense()).ravel(order="F") - _src(op, 0.0), atol=1e-12)


def _src(op, t):
    G = op.source_at(t)
    return 0.0 if G is None else G.dense().ravel(order="F")


def _linsolve(rng):
    n = 40
    A = np.eye(n) * 3 + 0.3 * rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    res = gmres(LinearMap(n, lambda v: A @ v), b, ctl=SolveControls(rel_tol=1e-12))
    ok = np.linalg.norm(A @ res.x - b) <= 1e-10 * np.linalg.norm(b)
    P = np.diag(np.arange(1.0, 6.0)) + 0.1 * rng.standard_normal((5, 5))
    Q = np.diag(np.arange(2.0, 6.0)) + 0.1 * rng.standard_normal((4, 4))
    C = rng.standard_normal((5, 4))
    W = sylvester_dense(P, Q, C)
    ok &= np.allclose(P @ W + W @ Q, C, atol=1e-10)
    op = random_operator(rng, 15, 12, 2, scale=0.5)
    op = op.__class__(op.terms, op.shape, stiff_pair=(0, 1))
    U = np.linalg.qr(rng.standard_normal((15, 3)))[0]
    V = np.linalg.qr(rng.standard_normal((12, 3)))[0]
    pop = ProjectedOperator(op, U, V)
    rhs = rng.standard_normal((3, 3))
    ctl = SolveControls(rel_tol=1e-13)
    S1 = galerkin_solve_gmres(pop, rhs, 0.1, ctl).S
    S2 = galerkin_solve_fixed_point(pop, rhs, 0.1, ctl).S
    return ok and np.allclose(S1, S2, atol=1e-8)


def _integrators(rng):
    m = 12
    L = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) * (m + 1) ** 2
    from .operators import MatrixOperator
    op = MatrixOperator([(L, sp.identity(m)), (sp.identity(m), L)], (m, m), stiff_pair=(0, 1))
    X = LowRankMatrix.from_dense(rng.standard_normal((m, 3)) @ rng.standard_normal((3, m)))
    ok = True
    for dt in (1e-3, 1e-1, 10.0):
        ctl = StepControls(dt)
        for stepper in (merge_step, merge_adapt_step):
            Y = stepper(op, X, 0.0, ctl)[0]
            ok &= Y.norm() <= X.norm() * (1 + 1e-10)
    # eigenvector data: the merged space holds the dense implicit Euler solution
    w = np.linalg.eigh(L.toarray())[1]
    E = LowRankMatrix.from_dense(np.outer(w[:, 1], w[:, 2]))
    Y = merge_step(op, E, 0.0, StepControls(0.05, eps2=0.0))[0]
    ok &= np.allclose(Y.dense(), implicit_euler_dense(op, E.dense(), 0.0, 0.05), atol=1e-9)
    trace = evolve("MA", op, X, 0.0, 0.2, 4)
    return ok and trace.fallback_count == sum(r.factor_solves for r in trace.reports if r.fallback_used) // 2


def _pde(rng):
    x = grid(9)
    ok = np.allclose(x, -x[::-1], atol=0)
    D0 = d_zero(9, 0.2).toarray()
    ok &= np.allclose(D0, -D0.T)
    F = flux_operator(1 + rng.random(11), 0.2).toarray()
    ok &= np.allclose(F, F.T) and np.all(np.linalg.eigvalsh(F) < 0)
    op = discretize(catalog("rotation_anisotropic", 11))
    return ok and op.separation_rank == 6 and op.stiff_pair == (0, 3)


CHECKS = {
    "lowrank_core": _lowrank,
    "operators": _operators,
    "linsolve": _linsolve,
    "integrators": _integrators,
    "pde_lab": _pde,
}


def run_selftest(seed: int = 0, verbose: bool = True) -> bool:
    all_ok = True
    for name, check in CHECKS.items():
        try:
            ok = bool(check(np.random.default_rng(seed)))
        except Exception as err:  # report and keep going
            ok = False
            if verbose:
                print(f"{name}: error {err!r}")
        all_ok &= ok
        if verbose:
            print(f"{name:14s} {'ok' if ok else 'FAIL'}")
    return all_ok
