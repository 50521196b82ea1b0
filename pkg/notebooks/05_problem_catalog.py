"""
The PDE catalog
===============

Each entry is a 2D advection-diffusion problem on [-1, 1]^2 with
homogeneous Dirichlet data, discretized by centered differences.
"""

# %%
import numpy as np

from implicit_lowrank.pde import catalog, cfl_numbers, discretize, initial_low_rank

for name in ("rotation_anisotropic", "anisotropic_diffusion", "solid_body_rotation"):
    spec = catalog(name, 99)
    op = discretize(spec)
    X0 = initial_low_rank(spec)
    adv, diff = cfl_numbers(spec, np.pi / 320)
    print(f"{name:22s} terms={op.separation_rank} stiff={op.stiff_pair} "
          f"initial rank={X0.rank} cfl(adv)={adv:.3g} cfl(diff)={diff:.3g}")
