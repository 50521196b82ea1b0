"""
Convergence study on the rotating anisotropic problem
=====================================================

Same numbers as ``lowrank-bench --problem rotation_anisotropic``.
"""

# %%
from implicit_lowrank.bench import RunConfig, format_table, run_study

cfg = RunConfig("rotation_anisotropic", m=99, n_T=(40, 80, 160, 320), methods=("M", "MA", "IE"))
result = run_study(cfg)
print(format_table(result))

# %% rank of the Merge solution over the last run
times, ranks, _ = result.histories[("M", 320)]
for t, r in list(zip(times, ranks))[::32]:
    print(f"t={t:5.2f}  rank {r}")
