"""
Kronecker-sum operators and the projected core solve
====================================================
"""

# %%
import numpy as np
import scipy.sparse as sp

from implicit_lowrank.linsolve import SolveControls, galerkin_solve_fixed_point, galerkin_solve_gmres
from implicit_lowrank.lowrank import LowRankMatrix
from implicit_lowrank.operators import MatrixOperator, ProjectedOperator, apply

rng = np.random.default_rng(1)
m = 60
L = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) * (m + 1) ** 2 / 4
I = sp.identity(m)

# %% F(X) = L X + X L^T plus a weak coupling term; the first and last terms form the stiff pair
C = sp.diags(np.linspace(-1, 1, m))
op = MatrixOperator([(L, I), (C, C), (I, L)], stiff_pair=(0, 2))
X = LowRankMatrix.from_dense(rng.standard_normal((m, 2)) @ rng.standard_normal((2, m)))
terms = apply(op, X)
print("factored terms:", len(terms), "ranks", [T.rank for T in terms])
print("matches the assembled Kronecker matrix:",
      np.allclose(op.kron_matrix() @ X.dense().ravel(order="F"),
                  sum(T.dense() for T in terms).ravel(order="F")))

# %% the Galerkin system S - dt P(S) = rhs on random 5-dimensional bases
U = np.linalg.qr(rng.standard_normal((m, 5)))[0]
V = np.linalg.qr(rng.standard_normal((m, 5)))[0]
pop = ProjectedOperator(op, U, V)
rhs = rng.standard_normal((5, 5))
ctl = SolveControls(rel_tol=1e-12)
g = galerkin_solve_gmres(pop, rhs, 0.01, ctl)
f = galerkin_solve_fixed_point(pop, rhs, 0.01, ctl)
print("GMRES iterations:", g.iterations, " fixed-point iterations:", f.iterations)
print("difference:", np.linalg.norm(g.S - f.S))
