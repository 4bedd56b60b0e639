"""Stochastic optimal control on compact embedded Riemannian manifolds."""

from .errors import (
    BeyondInjectivityRadius,
    ConfigError,
    ConjugatePoint,
    CutLocus,
    DegenerateStencil,
    EnumerationTooLarge,
    NonTangentField,
    OutsideTubularNeighborhood,
    RiemCtlError,
    StepTooLarge,
)
from .geometry import (
    ManifoldModel,
    ManifoldPoint,
    TangentVector,
    circle,
    distance,
    exp_map,
    get_model,
    grad_distance_squared,
    log_map,
    parallel_transport,
    project_point,
    sphere2,
    sphere3,
    tangent_project,
    torus2,
)
from .fields import ControlledDynamics, ControlSet, ExtensionConfig
from .controls import ControlSignal
from .sde import IntegratorConfig, PathEnsemble, SamplePath, simulate_batch, simulate_path
from .value import ValueEstimate, brute_force_value, dpp_gap, estimate_J
from .grid import ManifoldGrid, ValueField, circle_grid, icosahedral_grid
from .hjb import (
    LocalDerivatives,
    closed_loop_gap,
    feedback_control,
    hamiltonian,
    hjb_residual,
    local_derivatives,
    min_hamiltonian,
    semi_lagrangian_step,
    solve_backward,
)
from .problems import list_problems, make_problem

__version__ = "0.1.0"
