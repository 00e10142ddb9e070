"""Slab kinetic transport laboratory: diffusion limit, wall layers, and
remainder diagnostics for the scaled transport equation."""

from .phase import (
    LEFT,
    RIGHT,
    SIDES,
    InvalidArgumentError,
    PhaseField,
    Quadrature,
    ScalarField,
    SlabGeometry,
    SpatialGrid,
    boundary_half_range_average,
    build_quadrature,
    graded_grid,
    norms,
    refine_grid,
    uniform_grid,
    velocity_average,
)
from .transport import (
    BC_KINDS,
    DIFFUSE,
    INFLOW,
    SPECULAR,
    BoundaryCondition,
    ConvergenceError,
    Trajectory,
    TransportProblem,
    boundary_flux,
    solve,
    step,
    trace_norm,
)
from .milne import (
    CutoffLayer,
    MilneProblem,
    MilneSolution,
    SpecularExtensionLayer,
    TimeProfile,
    build_cutoff_layer,
    build_specular_extension,
    chi,
    chi_prime,
    chi_tilde,
    milne_limit_oracle,
    solve_milne,
)
from .initial_layer import (
    InitialLayerTerm,
    build_UI0,
    build_UI1,
    rk4_oracle,
    solve_initial_layer,
    ui1_closed_form,
)
from .hierarchy import (
    DIFFUSIVITY,
    ExpansionBundle,
    SeparableDatum,
    build_U0,
    build_U1,
    build_U2,
    build_bundle,
    solve_heat,
)
from .remainder import (
    RemainderData,
    RemainderObserver,
    RemainderReport,
    SolutionIdentityObserver,
    compute_remainder,
    estimate_check,
    fit_rate,
    measure_lemma_norms,
    poisson_solve,
    remainder_data,
    weak_identity_residuals,
)
from .presets import CompatibilityError, Preset, get_preset, preset_names, validate_preset
from .config import ConfigError, ExperimentConfig, parse_config
from .experiment import run_experiment, run_single, identity_study

__version__ = "0.1.0"
