"""Staggered-grid incompressible flow, discrete filtering, and LES closures."""

__version__ = "0.1.0"

from .grid import ScalarField, StaggeredGrid, VectorField, field_norm, inner_product, make_grid
from .operators import (
    BodyForceSpec,
    FlowParams,
    body_force,
    convection,
    diffusion,
    dissipation,
    divergence,
    poisson_solve,
    pressure_gradient,
    project,
    rhs,
)
from .timestepping import (
    BlowupError,
    RKTableau,
    StepControl,
    cfl_dt,
    integrate,
    rk4_tableau,
    rk_step,
    wray3_tableau,
)
from .filters import (
    CoarseningMap,
    apply_filter,
    commutator,
    div_commutator_cD,
    face_average,
    pressure_filter,
    tophat_same_grid,
    volume_average,
)
from .initial_conditions import SpectrumSpec, random_spectral_field, spectrum_profile

__all__ = [name for name in dir() if not name.startswith("_")]
