"""
Factored matrices: sums, truncation and orthonormal unions
==========================================================
"""

# %%
import numpy as np

from implicit_lowrank.lowrank import LowRankMatrix, low_rank_sum, orthonormal_union, truncate_svd

rng = np.random.default_rng(0)

# %% two rank-3 matrices; their sum has rank at most 6
A = LowRankMatrix.from_dense(rng.standard_normal((200, 3)) @ rng.standard_normal((3, 150)))
B = LowRankMatrix.from_dense(rng.standard_normal((200, 3)) @ rng.standard_normal((3, 150)))
Z = low_rank_sum([A, B])
print("rank of A + B:", Z.rank)
print("error vs dense:", np.linalg.norm(Z.dense() - A.dense() - B.dense()))

# %% exact cancellation collapses to rank zero
print("rank of A - A:", low_rank_sum([A, -A]).rank)

# %% truncation keeps the smallest rank whose discarded tail is below eps
s = Z.singular_values
for eps in (0.0, s[-1] * 1.01, np.linalg.norm(s[-3:]) * 1.01):
    print(f"eps={eps:9.3g} -> rank {truncate_svd(Z, eps).rank}")

# %% unions drop directions that are already present
Q = orthonormal_union([A.left, A.left @ rng.standard_normal((3, 3)), B.left])
print("union width:", Q.shape[1])
