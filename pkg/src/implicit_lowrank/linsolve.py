"""Linear solvers for the implicit substeps.

* restarted GMRES on matrix-free maps (vectorized matrix equations),
* a Schur-based dense Sylvester solver,
* the two Galerkin core solvers (GMRES and a Sylvester fixed point),
* the K/L factor solves of the basis-update step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg as la
from scipy.linalg import lapack


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without reaching its tolerance.

    ``x`` is the best iterate available and ``residual`` its residual norm.
    """

    def __init__(self, message, x=None, residual=np.inf, iterations=0):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class SingularPencilError(ValueError):
    """Sylvester equation with (numerically) overlapping spectra of P and -Q."""


@dataclass(frozen=True)
class SolveControls:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iters: int = 2000
    restart: int = 50

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.restart < 1:
            raise ValueError("max_iters and restart must be >= 1")

    def target(self, rhs_norm: float) -> float:
        return max(self.rel_tol * rhs_norm, self.abs_tol)


@dataclass(frozen=True)
class LinearMap:
    dim: int
    action: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.action(x)


class GMRESResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float
    history: list


def gmres(A: LinearMap | Callable, rhs: np.ndarray, x0: np.ndarray | None = None,
          ctl: SolveControls = SolveControls()) -> GMRESResult:
    """Restarted GMRES(k) with Givens rotations.

    Stops once the true residual ``||A x - rhs||_2`` is below
    ``max(rel_tol * ||rhs||, abs_tol)``; the reported residual is recomputed
    from the returned iterate.  ``history`` lists the least-squares residual
    estimates of every inner iteration, one list per restart cycle.

    Raises ConvergenceError after ``max_iters`` inner iterations.
    """
    rhs = np.asarray(rhs, dtype=float).ravel()
    n = rhs.size
    dim = getattr(A, "dim", n)
    if dim != n:
        raise ValueError(f"map dimension {dim} does not match rhs of size {n}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).ravel()
    target = ctl.target(float(np.linalg.norm(rhs)))
    k = min(ctl.restart, n)

    r = rhs - A(x)
    beta = float(np.linalg.norm(r))
    history = []
    total = 0
    while True:
        if beta <= target:
            return GMRESResult(x, total, beta, history)
        if total >= ctl.max_iters:
            raise ConvergenceError(
                f"GMRES did not converge in {total} iterations (residual {beta:.3e} > {target:.3e})",
                x=x, residual=beta, iterations=total,
            )
        Q = np.empty((k + 1, n))
        H = np.zeros((k + 1, k))
        cs = np.zeros(k)
        sn = np.zeros(k)
        g = np.zeros(k + 1)
        g[0] = beta
        Q[0] = r / beta
        cycle = []
        j = 0
        while j < k and total < ctl.max_iters:
            w = A(Q[j])
            # classical Gram-Schmidt, applied twice
            h = Q[: j + 1] @ w
            w = w - Q[: j + 1].T @ h
            h2 = Q[: j + 1] @ w
            w = w - Q[: j + 1].T @ h2
            h += h2
            hn = float(np.linalg.norm(w))
            H[: j + 1, j] = h
            H[j + 1, j] = hn
            for i in range(j):
                a, b = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * a + sn[i] * b
                H[i + 1, j] = -sn[i] * a + cs[i] * b
            d = np.hypot(H[j, j], H[j + 1, j])
            if d == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / d, H[j + 1, j] / d
            H[j, j] = d
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j += 1
            total += 1
            cycle.append(abs(g[j]))
            if abs(g[j]) <= target or hn <= 1e-14 * max(d, 1.0):
                break
            Q[j] = w / hn
        history.append(cycle)
        y = la.solve_triangular(H[:j, :j], g[:j])
        x = x + Q[:j].T @ y
        r = rhs - A(x)
        beta = float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# dense Sylvester


class SylvesterSolver:
    """Bartels-Stewart solver for ``P X + X Q = C`` with reusable Schur forms."""

    def __init__(self, P: np.ndarray, Q: np.ndarray, collision_tol: float = 1e-12):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R, self.Zp = la.schur(P, output="real")
        self.S, self.Zq = la.schur(Q, output="real")
        lp = la.eigvals(self.R) if P.size else np.zeros(0)
        lq = la.eigvals(self.S) if Q.size else np.zeros(0)
        if lp.size and lq.size:
            gap = np.min(np.abs(lp[:, None] + lq[None, :]))
            scale = max(np.max(np.abs(lp)), np.max(np.abs(lq)), 1.0)
            if gap <= collision_tol * scale:
                raise SingularPencilError(
                    f"spectra of P and -Q collide (min |lambda_i + mu_j| = {gap:.2e})"
                )
        self.P, self.Q = P, Q

    def solve(self, C: np.ndarray) -> np.ndarray:
        C = np.asarray(C, dtype=float)
        if C.size == 0:
            return np.zeros_like(C)
        F = self.Zp.T @ C @ self.Zq
        Y, scale, info = lapack.dtrsyl(self.R, self.S, F)
        if info < 0:
            raise ValueError(f"dtrsyl: illegal argument {-info}")
        return self.Zp @ (Y / scale) @ self.Zq.T


def sylvester_dense(P: np.ndarray, Q: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Solve ``P X + X Q = C``; the residual is verified before returning."""
    X = SylvesterSolver(P, Q).solve(C)
    res = np.linalg.norm(P @ X + X @ Q - C)
    cn = np.linalg.norm(C)
    if res > 1e-10 * max(cn, 1e-300) and res > 0:
        raise SingularPencilError(f"Sylvester residual {res:.2e} exceeds 1e-10 * ||C|| = {1e-10 * cn:.2e}")
    return X


# ---------------------------------------------------------------------------
# Galerkin core equation  S - dt * sum_j At_j S Bt_j = C


class CoreSolve(NamedTuple):
    S: np.ndarray
    iterations: int
    residual: float
    method: str


def galerkin_residual(pop, S, rhs, dt) -> float:
    return float(np.linalg.norm(S - dt * pop.apply_linear(S) - rhs))


def galerkin_solve_gmres(pop, rhs_core: np.ndarray, dt: float,
                         ctl: SolveControls = SolveControls(),
                         x0: np.ndarray | None = None) -> CoreSolve:
    """Solve ``S - dt * P(S) = rhs_core`` for the projected linear part ``P``.

    GMRES runs on ``vec(S)``; each product costs ``O(s * k^3)`` with the
    cached projected matrices.
    """
    rhs_core = np.asarray(rhs_core, dtype=float)
    shp = rhs_core.shape
    if shp != pop.core_shape:
        raise ValueError(f"rhs shape {shp} does not match projected operator {pop.core_shape}")
    if dt == 0 or rhs_core.size == 0:
        return CoreSolve(rhs_core.copy(), 0, 0.0, "gmres")

    def action(v):
        S = v.reshape(shp)
        return (S - dt * pop.apply_linear(S)).ravel()

    guess = rhs_core if x0 is None else x0
    res = gmres(LinearMap(rhs_core.size, action), rhs_core.ravel(), guess.ravel(), ctl)
    return CoreSolve(res.x.reshape(shp), res.iterations, res.residual, "gmres")


FIXED_POINT_MAX_ITERS = 50
FIXED_POINT_UPDATE_TOL = 1e-12


def galerkin_solve_fixed_point(pop, rhs_core: np.ndarray, dt: float,
                               ctl: SolveControls = SolveControls(),
                               stiff_pair: tuple | None = None,
                               max_iters: int = FIXED_POINT_MAX_ITERS) -> CoreSolve:
    """Sylvester fixed-point iteration for the Galerkin core equation.

    Term ``p`` supplies the stiff left factor and term ``q`` the stiff right
    factor.  With ``beta = mean eig(Bt_p)`` and ``alpha = mean eig(At_q)``
    every iteration solves

        (I/2 - dt beta At_p) S + S (I/2 - dt alpha Bt_q) = rhs + dt * rest(S_prev)

    where ``rest`` collects all remaining parts of the operator.  Raises
    ConvergenceError if neither the update nor the residual test is met
    within ``max_iters``.
    """
    rhs_core = np.asarray(rhs_core, dtype=float)
    shp = rhs_core.shape
    if shp != pop.core_shape:
        raise ValueError(f"rhs shape {shp} does not match projected operator {pop.core_shape}")
    stiff_pair = stiff_pair if stiff_pair is not None else pop.stiff_pair
    if stiff_pair is None:
        raise ValueError("fixed-point solve needs a designated stiff term pair")
    p, q = stiff_pair
    k1, k2 = shp
    if rhs_core.size == 0:
        return CoreSolve(rhs_core.copy(), 0, 0.0, "fixed_point")

    Ap, Bp = pop.lefts[p], pop.rights[p]
    beta = np.trace(Bp) / k2
    P = 0.5 * np.eye(k1) - dt * beta * Ap
    if q != p:
        Aq, Bq = pop.lefts[q], pop.rights[q]
        alpha = np.trace(Aq) / k1
        Qm = 0.5 * np.eye(k2) - dt * alpha * Bq
    else:
        alpha = None
        Qm = 0.5 * np.eye(k2)

    def rest(S):
        out = np.zeros(shp)
        for j, (Al, Br) in enumerate(zip(pop.lefts, pop.rights)):
            if j == p:
                out += Al @ S @ (Br - beta * np.eye(k2))
            elif j == q:
                out += (Al - alpha * np.eye(k1)) @ S @ Br
            else:
                out += Al @ S @ Br
        return out

    solver = SylvesterSolver(P, Qm)
    rhs_norm = float(np.linalg.norm(rhs_core))
    target = ctl.target(rhs_norm)
    S = rhs_core.copy()
    best, best_res = S, np.inf
    for it in range(1, max_iters + 1):
        S_new = solver.solve(rhs_core + dt * rest(S))
        upd = np.linalg.norm(S_new - S) / max(np.linalg.norm(S_new), 1e-300)
        S = S_new
        res = galerkin_residual(pop, S, rhs_core, dt)
        if res < best_res:
            best, best_res = S, res
        if res <= target or upd <= FIXED_POINT_UPDATE_TOL:
            return CoreSolve(S, it, res, "fixed_point")
        if not np.isfinite(res) or res > 1e8 * max(rhs_norm, 1e-300):
            break
    raise ConvergenceError(
        f"fixed-point iteration stalled (residual {best_res:.3e}, target {target:.3e})",
        x=best, residual=best_res, iterations=it,
    )


# ---------------------------------------------------------------------------
# K / L factor solves:  W - dt * sum_j M_j W C_j = rhs


def implicit_factor_solve(mats: Sequence, smalls: Sequence[np.ndarray], rhs: np.ndarray,
                          dt: float, ctl: SolveControls = SolveControls()) -> tuple:
    """Solve ``W - dt * sum_j mats[j] @ W @ smalls[j] = rhs`` by GMRES on vec(W).

    ``mats`` are sparse ``m x m`` and ``smalls`` dense ``r x r``.  Returns
    ``(W, iterations, residual)`` with the residual in Frobenius norm.
    """
    rhs = np.asarray(rhs, dtype=float)
    if dt == 0 or rhs.size == 0:
        return rhs.copy(), 0, 0.0
    shp = rhs.shape

    def action(v):
        W = v.reshape(shp)
        out = W.copy()
        for M, C in zip(mats, smalls):
            out -= dt * ((M @ W) @ C)
        return out.ravel()

    res = gmres(LinearMap(rhs.size, action), rhs.ravel(), rhs.ravel(), ctl)
    return res.x.reshape(shp), res.iterations, res.residual
