"""Gravity-stratified solid-liquid phase transition in a vertical column."""

from .core_model import (
    PRESETS,
    ColumnDomain,
    DimensionlessGroups,
    MaterialParams,
    ModelError,
    StateField,
    build_column,
    derive_dimensionless,
    preset,
    solid_fraction_above,
)
from .equilibrium import (
    EquilibriumSolution,
    classify,
    clausius_clapeyron_residual,
    collocated_equilibrium,
    equilibrium_fields,
    solve_equilibrium,
    solve_Z,
    zero_gravity_equilibrium_set,
)
from .evolution import (
    NumericalError,
    StepperConfig,
    StepRejected,
    picard_solve,
    run,
    step_coupled,
)

__version__ = "0.1.0"
