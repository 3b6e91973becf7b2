"""Rough-path calculus, RDE flows and their decompositions along foliations."""

__version__ = "0.1.0"

from .rough_core import (  # noqa: E402
    RoughPathGrid,
    TimeGrid,
    chen_defect,
    geometricity_defect,
    holder_norms,
    lift_brownian,
    lift_linear,
    lift_smooth,
    refine_grid,
    second_level_lookup,
)
from .rough_integral import (  # noqa: E402
    ControlledPathGrid,
    integrate_against_controlled,
    integrate_against_rough,
    local_error_report,
)
from .rde_solver import (  # noqa: E402
    StepFailure,
    TrajectoryPath,
    VectorFieldSet,
    linear_vector_field,
    solve_rde,
    verify_change_of_coords,
    verify_composition,
    verify_ito_wentzel,
    verify_manifold_invariance,
)
from .linear_decomp import (  # noqa: E402
    BlockPartition,
    DecompositionPair,
    ExplosionReport,
    LinearFlowPath,
    decompose_blocks,
    recompose,
    rotation_oracle,
    solve_linear_flow,
)
from .jordan_cascade import (  # noqa: E402
    CascadeFactorization,
    RealBlockBasis,
    cascade_decompose,
    factor_matrix_with_real_log,
    real_block_form,
    recompose_cascade,
)
from .grid_decomp import (  # noqa: E402
    DiffeoGrid,
    evolve_decomposition,
    invert_horizontal_diffeo,
    split_vector_field,
    verify_planar_decomposition,
)
