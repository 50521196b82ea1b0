"""Finite-difference advection-diffusion problems on [-1, 1]^2.

The PDE

    rho_t + r1(x1) rho_x2 + r2(x2) rho_x1
        = b1(x2) (a1(x1) rho_x1)_x1 + b2(x2) (a2(x1) rho)_x1x2
        + a3(x1) (b3(x2) rho)_x1x2 + a4(x1) (b4(x2) rho_x2)_x2

with homogeneous Dirichlet data is discretized with second-order
differences on ``m1 x m2`` interior nodes; row index ``i`` of the grid
matrix is ``x1`` and column index ``j`` is ``x2``.
"""

from __future__ import annotations

import math
import os
import re
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .lowrank import LowRankMatrix, sum_factors
from .operators import MatrixOperator

Coef = Optional[Callable[[np.ndarray], np.ndarray]]

REFERENCE_MAX_M = 399
REFERENCE_MAX_SIZE = 160_000


@dataclass(frozen=True)
class ProblemSpec:
    """One test case of the advection-diffusion family.

    Coefficients are vectorized callables or ``None`` (identically zero).
    ``initial`` is a list of separable pieces ``(f(x1), g(x2))`` whose sum is
    the initial data.  ``mu`` is the diffusion scale used for CFL reporting.
    """

    name: str
    m1: int
    m2: int
    t_end: float
    initial: tuple
    r1: Coef = None
    r2: Coef = None
    a: tuple = (None, None, None, None)
    b: tuple = (None, None, None, None)
    mu: float = 0.0

    @property
    def h1(self) -> float:
        return 2.0 / (self.m1 + 1)

    @property
    def h2(self) -> float:
        return 2.0 / (self.m2 + 1)

    def grid(self):
        return grid(self.m1), grid(self.m2)

    def with_grid(self, m1: int, m2: int | None = None) -> "ProblemSpec":
        return replace(self, m1=m1, m2=m1 if m2 is None else m2)


def grid(m: int, with_boundary: bool = False) -> np.ndarray:
    """Nodes ``-1 + i h``, ``h = 2/(m+1)``, mirrored exactly about 0."""
    h = 2.0 / (m + 1)
    i = np.arange(0, m + 2) if with_boundary else np.arange(1, m + 1)
    x = -1.0 + i * h
    return 0.5 * (x - x[::-1])


# ---------------------------------------------------------------------------
# one-dimensional stencils on interior nodes, Dirichlet closure


def d_plus(m: int, h: float) -> sp.csr_matrix:
    """``(w_{i+1} - w_i) / h``."""
    return sp.diags([-np.ones(m), np.ones(m - 1)], [0, 1], format="csr") / h


def d_minus(m: int, h: float) -> sp.csr_matrix:
    """``(w_i - w_{i-1}) / h``."""
    return sp.diags([np.ones(m), -np.ones(m - 1)], [0, -1], format="csr") / h


def d_zero(m: int, h: float) -> sp.csr_matrix:
    """``(w_{i+1} - w_{i-1}) / (2h)``; skew-symmetric."""
    return sp.diags([np.ones(m - 1), -np.ones(m - 1)], [1, -1], format="csr") / (2 * h)


def flux_operator(a_nodes: np.ndarray, h: float) -> sp.csr_matrix:
    """``D_+ [(a_i + a_{i-1})/2] D_-`` on the interior nodes.

    ``a_nodes`` holds the coefficient on all ``m + 2`` nodes including the
    boundary.  The result is symmetric and, for ``a > 0``, negative definite.
    """
    a_nodes = np.asarray(a_nodes, dtype=float)
    m = a_nodes.size - 2
    a_face = 0.5 * (a_nodes[1:] + a_nodes[:-1])  # faces i - 1/2, i = 1..m+1
    lo, hi = a_face[:-1], a_face[1:]
    return sp.diags([-(lo + hi), hi[:-1], lo[1:]], [0, 1, -1], format="csr") / h**2


def _vals(f: Coef, x: np.ndarray) -> Optional[np.ndarray]:
    if f is None:
        return None
    v = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape).copy()
    return None if not np.any(v) else v


def discretize(spec: ProblemSpec) -> MatrixOperator:
    """Separable operator ``F(X) = sum_j A_j X B_j^T`` for ``spec``.

    Term order (identically zero terms are skipped):
    x1-diffusion, two mixed terms, x2-diffusion, r1- and r2-advection.
    The two diffusion terms are recorded as ``stiff_pair``.
    """
    m1, m2 = spec.m1, spec.m2
    if m1 < 3 or m2 < 3:
        raise ValueError("need at least 3 interior nodes per direction")
    h1, h2 = spec.h1, spec.h2
    x1, x2 = grid(m1), grid(m2)
    x1b, x2b = grid(m1, True), grid(m2, True)
    D1, D2 = d_zero(m1, h1), d_zero(m2, h2)
    diag = sp.diags
    a1, a2, a3, a4 = spec.a
    b1, b2, b3, b4 = spec.b

    terms = []
    stiff = [None, None]

    vb1 = _vals(b1, x2)
    if a1 is not None and vb1 is not None:
        a1b = np.broadcast_to(np.asarray(a1(x1b), dtype=float), x1b.shape)
        if np.any(a1b <= 0):
            raise ValueError("a1 must be positive on the grid")
        stiff[0] = len(terms)
        terms.append((flux_operator(a1b, h1), diag(vb1)))

    va2, vb2 = _vals(a2, x1), _vals(b2, x2)
    if va2 is not None and vb2 is not None:
        terms.append((D1 @ diag(va2), diag(vb2) @ D2))

    va3, vb3 = _vals(a3, x1), _vals(b3, x2)
    if va3 is not None and vb3 is not None:
        terms.append((diag(va3) @ D1, D2 @ diag(vb3)))

    va4 = _vals(a4, x1)
    if b4 is not None and va4 is not None:
        b4b = np.broadcast_to(np.asarray(b4(x2b), dtype=float), x2b.shape)
        if np.any(b4b <= 0):
            raise ValueError("b4 must be positive on the grid")
        stiff[1] = len(terms)
        terms.append((diag(va4), flux_operator(b4b, h2)))

    # advection moved to the right-hand side: -r1 rho_x2 - r2 rho_x1
    vr1 = _vals(spec.r1, x1)
    if vr1 is not None:
        terms.append((diag(-vr1), D2))
    vr2 = _vals(spec.r2, x2)
    if vr2 is not None:
        terms.append((D1, diag(-vr2)))

    pair = tuple(stiff) if None not in stiff else None
    return MatrixOperator(terms, (m1, m2), None, pair, spec.name)


def initial_low_rank(spec: ProblemSpec) -> LowRankMatrix:
    """Canonical grid sampling of the separable initial data."""
    x1, x2 = spec.grid()
    lefts = [np.asarray(f(x1), dtype=float).reshape(-1, 1) for f, _ in spec.initial]
    rights = [np.asarray(g(x2), dtype=float).reshape(-1, 1) for _, g in spec.initial]
    cores = [np.ones((1, 1))] * len(lefts)
    return sum_factors(lefts, cores, rights, 0.0, (spec.m1, spec.m2))


def initial_dense(spec: ProblemSpec) -> np.ndarray:
    """Pointwise evaluation of the initial data on the grid."""
    x1, x2 = spec.grid()
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    out = np.zeros((spec.m1, spec.m2))
    for f, g in spec.initial:
        out += f(X1) * g(X2)
    return out


def cfl_numbers(spec: ProblemSpec, dt: float) -> tuple:
    """``(dt / h, mu dt / h^2)`` on the finer direction."""
    h = min(spec.h1, spec.h2)
    return dt / h, spec.mu * dt / h**2


# ---------------------------------------------------------------------------
# catalog

PROBLEMS = ("rotation_anisotropic", "anisotropic_diffusion", "rotation_isotropic", "solid_body_rotation")


def _gaussian_data():
    return ((lambda x: np.exp(-((x / 0.3) ** 2)), lambda y: np.exp(-((y / 0.1) ** 2))),)


def _const(c):
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


def catalog(name: str, m: int = 99, **options) -> ProblemSpec:
    """Named test problems.

    ``rotation_anisotropic``  solid body rotation + variable anisotropic
                              diffusion, option ``mu`` (default 1e-3), t = pi
    ``anisotropic_diffusion`` constant anisotropic diffusion, option
                              ``frequency`` (1 or 2) of the sine data, t = 0.5
    ``rotation_isotropic``    rotation + isotropic diffusion 1e-4, t = pi/4
    ``solid_body_rotation``   pure rotation, t = pi
    """
    pi = np.pi
    if name == "rotation_anisotropic":
        mu = options.pop("mu", 1e-3)
        sq = math.sqrt(mu)
        a1 = lambda x: sq * (1 + 0.1 * np.sin(pi * x))
        b1 = lambda y: sq * (1 + 0.1 * np.cos(pi * y))
        spec = ProblemSpec(
            name if mu == 1e-3 else f"{name}_mu{mu:g}", m, m, pi, _gaussian_data(),
            r1=lambda x: x, r2=lambda y: -y,
            a=(a1, lambda x: sq * (0.15 + 0.1 * np.sin(pi * x)),
               lambda x: sq * (0.15 + 0.1 * np.cos(pi * x)), a1),
            b=(b1, lambda y: sq * (0.15 + 0.1 * np.cos(pi * y)),
               lambda y: sq * (0.15 + 0.1 * np.sin(pi * y)), b1),
            mu=mu,
        )
    elif name == "anisotropic_diffusion":
        k = options.pop("frequency", 1)
        f = lambda x, k=k: np.sin(k * pi * x)
        one, mix = _const(1.0), _const(0.3)
        spec = ProblemSpec(
            name if k == 1 else f"{name}_k{k}", m, m, 0.5, ((f, f),),
            a=(one, mix, mix, one), b=(one, mix, mix, one), mu=1.0,
        )
    elif name == "rotation_isotropic":
        d = _const(1e-4)
        spec = ProblemSpec(
            name, m, m, 0.25 * pi, _gaussian_data(),
            r1=lambda x: x, r2=lambda y: -y,
            a=(d, None, None, d), b=(d, None, None, d), mu=1e-4,
        )
    elif name == "solid_body_rotation":
        spec = ProblemSpec(name, m, m, pi, _gaussian_data(), r1=lambda x: x, r2=lambda y: -y)
    else:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(PROBLEMS)}")
    if options:
        raise TypeError(f"unexpected options for {name}: {sorted(options)}")
    return spec


# ---------------------------------------------------------------------------
# high-accuracy reference: RK4 on the semi-discrete system

RK4_STABILITY = 2.7


def spectral_radius(M, n_iter: int = 60, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue modulus of ``M``."""
    n = M.shape[0]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(n_iter):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        # for complex pairs ||M v|| oscillates; keep the running maximum
        est = max(est, nw)
        v = w / nw
    return float(est)


def _rk4(M, src, x, t0, t1, n):
    dt = (t1 - t0) / n
    t = t0
    for k in range(n):
        t = t0 + k * dt
        k1 = M @ x + src(t)
        k2 = M @ (x + 0.5 * dt * k1) + src(t + 0.5 * dt)
        k3 = M @ (x + 0.5 * dt * k2) + src(t + 0.5 * dt)
        k4 = M @ (x + dt * k3) + src(t + dt)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def reference_solve(op: MatrixOperator, X0: np.ndarray, outputs: Sequence[float], t0: float = 0.0,
                    n_substeps: int | None = None, tol: float = 1e-9, safety: float = 0.5,
                    max_doublings: int = 12) -> list:
    """Classical RK4 on ``vec(X)`` for ``dX/dt = F(X, t)`` at the ``outputs`` times.

    The step is capped by the stability bound ``safety * 2.7 / rho(F)`` and
    halved until a Richardson estimate of the relative error at every
    output falls below ``tol``.
    """
    m1, m2 = op.shape
    if m1 * m2 > REFERENCE_MAX_SIZE:
        raise ValueError(f"reference solver limited to m1*m2 <= {REFERENCE_MAX_SIZE}")
    outputs = [float(t) for t in outputs]
    if any(b < a for a, b in zip([t0] + outputs, outputs)):
        raise ValueError("output times must be nondecreasing and >= t0")
    M = op.kron_matrix().tocsr()
    x0 = np.asarray(X0, dtype=float).ravel(order="F")
    if op.source is not None:
        src = lambda t: op.source(t).dense().ravel(order="F")
    else:
        zero = np.zeros_like(x0)
        src = lambda t: zero
    T = outputs[-1] - t0 if outputs else 0.0
    if T == 0:
        return [np.asarray(X0, dtype=float).copy() for _ in outputs]
    rho = spectral_radius(M) if M.nnz else 0.0
    dt = T if rho == 0 else safety * RK4_STABILITY / rho
    if n_substeps is not None:
        dt = min(dt, T / (n_substeps * max(len(outputs), 1)))
    x0n = max(np.linalg.norm(x0), 1e-300)

    def run(dt):
        xs, x, ta = [], x0, t0
        for tb in outputs:
            if tb > ta:
                x = _rk4(M, src, x, ta, tb, max(1, math.ceil((tb - ta) / dt - 1e-9)))
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e10 * x0n:
                raise FloatingPointError("reference integration became unstable")
            xs.append(x)
            ta = tb
        return xs

    coarse = run(dt)
    for _ in range(max_doublings):
        dt /= 2
        fine = run(dt)
        err = max(
            np.linalg.norm(f - c) / 15.0 / max(np.linalg.norm(f), 1e-300)
            for f, c in zip(fine, coarse)
        )
        if err <= tol:
            return [f.reshape((m1, m2), order="F") for f in fine]
        coarse = fine
    raise FloatingPointError(f"reference did not reach tolerance {tol:g} (estimate {err:.2e})")


def reference_solution(spec: ProblemSpec, outputs: Sequence[float], n_substeps_per_output: int | None = None,
                       tol: float = 1e-9, cache_dir: str | os.PathLike | None = None) -> list:
    """Dense reference grid functions of ``spec`` at ``outputs``.

    With ``cache_dir`` every output is looked up in / stored to the disk
    cache keyed by (problem, grid, time, tolerance).
    """
    if max(spec.m1, spec.m2) > REFERENCE_MAX_M:
        raise ValueError(f"reference restricted to m <= {REFERENCE_MAX_M}")
    outputs = list(outputs)
    paths = None
    if cache_dir is not None:
        paths = [Path(cache_dir) / reference_key(spec, t, tol) for t in outputs]
        if all(p.exists() for p in paths):
            return [read_reference(p)[0] for p in paths]
    sols = reference_solve(discretize(spec), initial_dense(spec), outputs,
                           n_substeps=n_substeps_per_output, tol=tol)
    if paths is not None:
        for p, X, t in zip(paths, sols, outputs):
            write_reference(p, X, t)
    return sols


# ---------------------------------------------------------------------------
# reference cache files: b"LRREF1" | m1 u64 | m2 u64 | time f64 | data f64 (C order), little endian

MAGIC = b"LRREF1"
_HEADER = struct.Struct("<6sQQd")


def reference_key(spec: ProblemSpec, t: float, tol: float) -> str:
    stem = re.sub(r"[^A-Za-z0-9_.-]", "_", f"{spec.name}_m{spec.m1}x{spec.m2}_t{t:.17g}_tol{tol:g}")
    return stem + ".lrref"


def write_reference(path, X: np.ndarray, t: float) -> None:
    """Atomically write one matrix (temp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    X = np.ascontiguousarray(X, dtype="<f8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".lrref")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, X.shape[0], X.shape[1], float(t)))
            fh.write(X.tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_reference(path) -> tuple:
    """Return ``(X, t)`` from a cache file."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, m1, m2, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 8 * m1 * m2:
        raise ValueError(f"{path}: expected {m1 * m2} values, found {len(body) // 8}")
    X = np.frombuffer(body, dtype="<f8").reshape(m1, m2).astype(float)
    return X, t
