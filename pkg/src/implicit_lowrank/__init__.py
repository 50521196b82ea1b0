"""Implicit rank-adaptive low-rank integrators for matrix ODEs.

``dX/dt = sum_j A_j X B_j^T + G(t)`` is advanced in factored form with the
Merge and Merge-adapt methods, the rank-adaptive BUG integrator, explicit
step truncation, and (for comparison) dense implicit Euler.
"""

from .lowrank import (
    LowRankMatrix,
    dense,
    frobenius_inner,
    low_rank_sum,
    orthonormal_union,
    sum_factors,
    truncate_svd,
)
from .operators import (
    MatrixOperator,
    ProjectedOperator,
    apply,
    apply_truncated,
    precompute_projected,
    projected_apply,
)
from .linsolve import (
    ConvergenceError,
    LinearMap,
    SingularPencilError,
    SolveControls,
    galerkin_solve_fixed_point,
    galerkin_solve_gmres,
    gmres,
    implicit_factor_solve,
    sylvester_dense,
)
from .integrators import (
    RunTrace,
    StepControls,
    StepReport,
    bug_prediction,
    bug_step,
    cheap_prediction_step,
    evolve,
    implicit_euler_dense,
    merge_adapt_step,
    merge_step,
    step_truncation_euler,
)
from .pde import ProblemSpec, catalog, discretize, initial_low_rank, reference_solution

__version__ = "0.1.0"
