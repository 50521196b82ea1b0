"""
One step of each integrator on a stiff diffusion problem
========================================================

Implicit Euler on the full grid is the yardstick.  Merge and Merge-adapt
should sit close to it; the explicit step truncation blows up once the
step exceeds the stability limit.
"""

# %%
import numpy as np

from implicit_lowrank.integrators import (StepControls, bug_step, implicit_euler_dense, merge_adapt_step,
                                          merge_step, step_truncation_euler)
from implicit_lowrank.pde import catalog, discretize, initial_low_rank

spec = catalog("anisotropic_diffusion", 49)
op = discretize(spec)
X0 = initial_low_rank(spec)

# %%
for dt in (1e-4, 1e-2, 1.0):
    ref = implicit_euler_dense(op, X0.dense(), 0.0, dt)
    row = []
    for name, step in (("ST", step_truncation_euler), ("BUG", bug_step), ("M", merge_step), ("MA", merge_adapt_step)):
        Y = step(op, X0, 0.0, StepControls(dt))[0]
        row.append(f"{name} {np.linalg.norm(Y.dense() - ref) / np.linalg.norm(ref):8.1e} (r={Y.rank})")
    print(f"dt={dt:g}: " + "  ".join(row))
