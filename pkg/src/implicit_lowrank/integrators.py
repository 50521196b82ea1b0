"""Rank-adaptive low-rank time steppers.

All steppers map ``(X^n, t^n)`` to ``(X^{n+1}, StepReport)`` for a
:class:`~implicit_lowrank.operators.MatrixOperator`; implicit substeps
evaluate ``F`` at ``t^{n+1}``.

==============  ===========================================================
``ST``          step-truncation forward Euler
``BUG``         rank-adaptive basis-update & Galerkin, implicit Euler substeps
``M``           Merge: BUG bases merged with the explicit step bases
``MA``          Merge-adapt: explicit bases first, BUG bases on demand
``IE``          dense implicit Euler (reference / comparison)
==============  ===========================================================
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linsolve import (
    ConvergenceError,
    SolveControls,
    galerkin_solve_fixed_point,
    galerkin_solve_gmres,
    gmres,
    implicit_factor_solve,
    LinearMap,
)
from .lowrank import LowRankMatrix, low_rank_sum, orthonormal_union, sum_factors, truncate_svd
from .operators import MatrixOperator, ProjectedOperator, apply_truncated

log = logging.getLogger(__name__)

GALERKIN_STRATEGIES = ("gmres", "fixed_point_with_gmres_fallback")
METHODS = ("ST", "BUG", "M", "MA", "IE")
DENSE_SIZE_LIMIT = 1_000_000


@dataclass(frozen=True)
class StepControls:
    """Step size, truncation tolerances and solver settings.

    ``eps2=None`` means ``dt**2``.  ``residual_relative`` switches the
    Merge-adapt residual check to ``||R|| < eps2 * ||X^{n+1}||``.
    ``warm_start`` seeds the merged Galerkin solve with the cheap-path core.
    """

    dt: float
    eps1: float = 0.0
    eps2: Optional[float] = None
    solver: SolveControls = SolveControls()
    galerkin_strategy: str = "gmres"
    rank_cap: Optional[int] = None
    residual_relative: bool = False
    warm_start: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.eps1 < 0 or (self.eps2 is not None and self.eps2 < 0):
            raise ValueError("truncation tolerances must be nonnegative")
        if self.galerkin_strategy not in GALERKIN_STRATEGIES:
            raise ValueError(f"unknown galerkin_strategy {self.galerkin_strategy!r}")

    @property
    def tol2(self) -> float:
        return self.dt**2 if self.eps2 is None else self.eps2


@dataclass
class StepReport:
    rank_out: int
    prediction_dims: tuple = (0, 0)
    residual_norm: Optional[float] = None
    fallback_used: Optional[bool] = None
    solver_iterations: int = 0
    factor_solves: int = 0
    wall_time: float = 0.0


@dataclass
class RunTrace:
    method: str
    times: list
    ranks: list
    reports: list
    final: Optional[LowRankMatrix]
    final_dense: Optional[np.ndarray] = None
    wall_time: float = 0.0

    @property
    def fallback_count(self) -> int:
        return sum(1 for r in self.reports if r.fallback_used)

    def final_array(self) -> np.ndarray:
        return self.final_dense if self.final_dense is not None else self.final.dense()


class StepFailure(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


# ---------------------------------------------------------------------------
# building blocks


def _finish(ctl: StepControls, U, S, V) -> LowRankMatrix:
    """``U T_eps2(S) V^T`` in canonical form."""
    return truncate_svd(LowRankMatrix(U, S, V), ctl.tol2, ctl.rank_cap)


def galerkin_core(op: MatrixOperator, X: LowRankMatrix, U: np.ndarray, V: np.ndarray,
                  t_new: float, ctl: StepControls, x0=None):
    """Core of ``X^{n+1,pre}`` in ``span(U) x span(V)``.

    Solves ``S - dt U^T F_lin(U S V^T) V = U^T X^n V + dt U^T G(t_new) V``.
    Returns ``(S, iterations, projected_operator)``.
    """
    pop = ProjectedOperator(op, U, V)
    rhs = (U.T @ X.left) @ X.core @ (X.right.T @ V) if X.rank else np.zeros(pop.core_shape)
    rhs = rhs + ctl.dt * pop.source(t_new)
    if ctl.galerkin_strategy == "fixed_point_with_gmres_fallback" and op.stiff_pair is not None:
        try:
            sol = galerkin_solve_fixed_point(pop, rhs, ctl.dt, ctl.solver)
            return sol.S, sol.iterations, pop
        except ConvergenceError as err:
            log.debug("fixed point fell back to GMRES: %s", err)
            x0 = err.x if err.x is not None and np.all(np.isfinite(err.x)) else x0
    sol = galerkin_solve_gmres(pop, rhs, ctl.dt, ctl.solver, x0=x0)
    return sol.S, sol.iterations, pop


def bug_prediction(op: MatrixOperator, X: LowRankMatrix, t: float, ctl: StepControls):
    """Implicit Euler K- and L-steps.

    ``K - U S = dt F(K V^T, t+dt) V`` and ``L - V S^T = dt F(U L^T, t+dt)^T U``.
    Returns ``(K, L, iterations)``.
    """
    if X.rank == 0:
        m1, m2 = op.shape
        return np.zeros((m1, 0)), np.zeros((m2, 0)), 0
    U, S, V = X.left, X.core, X.right
    t_new = t + ctl.dt
    G = op.source_at(t_new)

    rhs_k = U @ S
    rhs_l = V @ S.T
    if G is not None:
        rhs_k = rhs_k + ctl.dt * (G.left @ (G.core @ (G.right.T @ V)))
        rhs_l = rhs_l + ctl.dt * (G.right @ (G.core.T @ (G.left.T @ U)))

    # K-step: W - dt sum_j A_j W (V^T B_j^T V)
    smalls_k = [(V.T @ (B @ V)).T for _, B in op.terms]
    K, itk, _ = implicit_factor_solve([A for A, _ in op.terms], smalls_k, rhs_k, ctl.dt, ctl.solver)
    # L-step: W - dt sum_j B_j W (U^T A_j^T U)
    smalls_l = [(U.T @ (A @ U)).T for A, _ in op.terms]
    L, itl, _ = implicit_factor_solve([B for _, B in op.terms], smalls_l, rhs_l, ctl.dt, ctl.solver)
    return K, L, itk + itl


def residual_norm(op: MatrixOperator, Xn: LowRankMatrix, Xnew: LowRankMatrix,
                  t_new: float, dt: float) -> float:
    """``||X^{n+1} - X^n - dt F(X^{n+1}, t_new)||_F`` in factored form."""
    lefts = [Xnew.left, Xn.left]
    cores = [Xnew.core, -Xn.core]
    rights = [Xnew.right, Xn.right]
    if Xnew.rank:
        for A, B in op.terms:
            lefts.append(A @ Xnew.left)
            cores.append(-dt * Xnew.core)
            rights.append(B @ Xnew.right)
    G = op.source_at(t_new)
    if G is not None:
        lefts.append(G.left)
        cores.append(-dt * G.core)
        rights.append(G.right)
    return sum_factors(lefts, cores, rights, 0.0, op.shape).norm()


# ---------------------------------------------------------------------------
# steppers


def step_truncation_euler(op: MatrixOperator, X: LowRankMatrix, t: float, ctl: StepControls):
    """Forward Euler in an enlarged rank, then truncation to ``eps2``."""
    t0 = time.perf_counter()
    Fx = apply_truncated(op, X, t, ctl.eps1)
    Xnew = low_rank_sum([X, Fx.scale(ctl.dt)], ctl.tol2, max_rank=ctl.rank_cap)
    return Xnew, StepReport(Xnew.rank, (Xnew.rank, Xnew.rank), wall_time=time.perf_counter() - t0)


def bug_step(op: MatrixOperator, X: LowRankMatrix, t: float, ctl: StepControls):
    """Rank-adaptive BUG step with implicit Euler K, L and S substeps."""
    t0 = time.perf_counter()
    K, L, its = bug_prediction(op, X, t, ctl)
    U = orthonormal_union([X.left, K])
    V = orthonormal_union([X.right, L])
    S, itg, _ = galerkin_core(op, X, U, V, t + ctl.dt, ctl)
    Xnew = _finish(ctl, U, S, V)
    return Xnew, StepReport(
        Xnew.rank, (U.shape[1], V.shape[1]), solver_iterations=its + itg,
        factor_solves=2 if X.rank else 0, wall_time=time.perf_counter() - t0,
    )


def _merged(op, X, t, ctl, Fx, warm=None):
    """Merge prediction + Galerkin + truncation, given ``Fx = T_eps1(F(X, t))``.

    ``warm = (S, U, V)`` from a cheap step seeds the core solve.
    """
    K, L, its = bug_prediction(op, X, t, ctl)
    U = orthonormal_union([X.left, Fx.left, K])
    V = orthonormal_union([X.right, Fx.right, L])
    x0 = None
    if warm is not None:
        Sc, Uc, Vc = warm
        x0 = (U.T @ Uc) @ Sc @ (Vc.T @ V)
    S, itg, _ = galerkin_core(op, X, U, V, t + ctl.dt, ctl, x0=x0)
    return _finish(ctl, U, S, V), (U.shape[1], V.shape[1]), its + itg


def merge_step(op: MatrixOperator, X: LowRankMatrix, t: float, ctl: StepControls):
    """Merge step: bases from ``[X^n, T_eps1(F(X^n)), K L^T]``."""
    t0 = time.perf_counter()
    Fx = apply_truncated(op, X, t, ctl.eps1)
    Xnew, dims, its = _merged(op, X, t, ctl, Fx)
    return Xnew, StepReport(
        Xnew.rank, dims, solver_iterations=its, factor_solves=2 if X.rank else 0,
        wall_time=time.perf_counter() - t0,
    )


def cheap_prediction_step(op: MatrixOperator, X: LowRankMatrix, t: float, ctl: StepControls,
                          Fx: LowRankMatrix | None = None):
    """Galerkin step on the explicit bases ``[X^n, T_eps1(F(X^n))]`` only.

    Returns ``(X_new, dims, iterations, core, (U, V))``.
    """
    if Fx is None:
        Fx = apply_truncated(op, X, t, ctl.eps1)
    U = orthonormal_union([X.left, Fx.left])
    V = orthonormal_union([X.right, Fx.right])
    S, itg, _ = galerkin_core(op, X, U, V, t + ctl.dt, ctl)
    return _finish(ctl, U, S, V), (U.shape[1], V.shape[1]), itg, S, (U, V)


def merge_adapt_step(op: MatrixOperator, X: LowRankMatrix, t: float, ctl: StepControls):
    """Merge-adapt: accept the cheap step if its implicit Euler residual is below eps2."""
    t0 = time.perf_counter()
    Fx = apply_truncated(op, X, t, ctl.eps1)
    Xc, dims, itc, Sc, (Uc, Vc) = cheap_prediction_step(op, X, t, ctl, Fx)
    res = residual_norm(op, X, Xc, t + ctl.dt, ctl.dt)
    limit = ctl.tol2 * (Xc.norm() if ctl.residual_relative else 1.0)
    if res < limit:
        return Xc, StepReport(
            Xc.rank, dims, residual_norm=res, fallback_used=False,
            solver_iterations=itc, wall_time=time.perf_counter() - t0,
        )
    warm = (Sc, Uc, Vc) if ctl.warm_start else None
    Xnew, dims, its = _merged(op, X, t, ctl, Fx, warm)
    return Xnew, StepReport(
        Xnew.rank, dims, residual_norm=res, fallback_used=True,
        solver_iterations=itc + its, factor_solves=2 if X.rank else 0,
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# dense implicit Euler


class ImplicitEulerSolver:
    """Factorized ``I - dt * sum_j B_j kron A_j`` for repeated dense steps.

    ``solver='direct'`` uses a sparse LU factorization; ``'gmres'`` runs the
    package GMRES on the Kronecker matrix.
    """

    def __init__(self, op: MatrixOperator, dt: float, solver: str = "direct",
                 ctl: SolveControls = SolveControls()):
        m1, m2 = op.shape
        n = m1 * m2
        if n > DENSE_SIZE_LIMIT:
            raise ValueError(f"dense implicit Euler limited to m1*m2 <= {DENSE_SIZE_LIMIT}, got {n}")
        self.op, self.dt, self.solver, self.ctl = op, dt, solver, ctl
        self.M = (sp.identity(n, format="csc") - dt * op.kron_matrix()).tocsc()
        self.lu = spla.splu(self.M) if solver == "direct" else None
        self.last_iterations = 0

    def step(self, X: np.ndarray, t: float) -> np.ndarray:
        """``X^{n+1}`` from ``X^n`` at time ``t = t^n``."""
        op = self.op
        b = np.asarray(X, dtype=float).ravel(order="F")
        G = op.source_at(t + self.dt)
        if G is not None:
            b = b + self.dt * G.dense().ravel(order="F")
        if self.lu is not None:
            x = self.lu.solve(b)
            self.last_iterations = 0
        else:
            res = gmres(LinearMap(b.size, lambda v: self.M @ v), b, b, self.ctl)
            x, self.last_iterations = res.x, res.iterations
        return x.reshape(op.shape, order="F")


def implicit_euler_dense(op: MatrixOperator, Xn: np.ndarray, t: float, dt: float,
                         solver: str = "direct", ctl: SolveControls = SolveControls()) -> np.ndarray:
    return ImplicitEulerSolver(op, dt, solver, ctl).step(Xn, t)


# ---------------------------------------------------------------------------
# driver

STEPPERS = {
    "ST": step_truncation_euler,
    "BUG": bug_step,
    "M": merge_step,
    "MA": merge_adapt_step,
}


def evolve(method: str, op: MatrixOperator, X0, t0: float, t_end: float, n_steps: int,
           ctl: StepControls | None = None, ie_solver: str = "direct",
           callback=None) -> RunTrace:
    """Uniform-step integration with one of ``ST, BUG, M, MA, IE``.

    ``ctl.dt`` is overwritten by ``(t_end - t0) / n_steps``.  For ``IE`` the
    reported rank is that of the ``eps2``-truncated SVD of the dense state.
    ``callback(step, t, state)`` is called after every step.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    dt = (t_end - t0) / n_steps
    ctl = StepControls(dt) if ctl is None else replace(ctl, dt=dt)
    times = [t0 + k * dt for k in range(n_steps + 1)]
    times[-1] = t_end
    reports = []

    if method == "IE":
        X = X0.dense() if isinstance(X0, LowRankMatrix) else np.asarray(X0, dtype=float)
        ranks = [_dense_rank(X, ctl.tol2)]
        start = time.perf_counter()
        solver = ImplicitEulerSolver(op, dt, ie_solver, ctl.solver)
        setup = time.perf_counter() - start  # the factorization is part of the cost
        for n in range(n_steps):
            s0 = time.perf_counter()
            X = solver.step(X, times[n])
            rank = _dense_rank(X, ctl.tol2)
            ranks.append(rank)
            reports.append(StepReport(rank, solver_iterations=solver.last_iterations,
                                      wall_time=time.perf_counter() - s0))
            if callback is not None:
                callback(n + 1, times[n + 1], X)
        # the diagnostic SVD for the rank history is not timed
        wall = setup + sum(r.wall_time for r in reports)
        return RunTrace(method, times, ranks, reports, None, X, wall)

    if not isinstance(X0, LowRankMatrix):
        X0 = LowRankMatrix.from_dense(X0)
    if not X0.canonical:
        X0 = truncate_svd(X0, 0.0)
    stepper = STEPPERS[method]
    X = X0
    ranks = [X.rank]
    for n in range(n_steps):
        try:
            X, rep = stepper(op, X, times[n], ctl)
        except (ConvergenceError, np.linalg.LinAlgError, ValueError) as err:
            raise StepFailure(n, err) from err
        reports.append(rep)
        ranks.append(X.rank)
        if callback is not None:
            callback(n + 1, times[n + 1], X)
    wall = sum(r.wall_time for r in reports)
    return RunTrace(method, times, ranks, reports, X, None, wall)


def _dense_rank(X: np.ndarray, eps: float) -> int:
    from .lowrank import _truncation_rank
    s = np.linalg.svd(X, compute_uv=False)
    return _truncation_rank(s, eps)
