from .components import (
    OMEGA_BASE,
    Branch,
    ConfigError,
    DerUnit,
    FaultEvent,
    Load,
    NetworkGraph,
    NmsSystem,
    UncertaintySpec,
)
from .presets import build_case_system, default_fault, default_uncertainty
from .simulate import (
    BoundarySpec,
    SimulationDiverged,
    Trajectory,
    boundary_spec,
    draw_uncertainty_signal,
    generate_dataset,
    integrate,
    simulate,
    split_boundary,
    uncertainty_bounds,
)
from .system import (
    DaeSystem,
    OdePlant,
    assemble_dae,
    build_plant,
    find_equilibrium,
    reduce_dae_to_ode,
)

__all__ = [
    "OMEGA_BASE",
    "BoundarySpec",
    "Branch",
    "ConfigError",
    "DaeSystem",
    "DerUnit",
    "FaultEvent",
    "Load",
    "NetworkGraph",
    "NmsSystem",
    "OdePlant",
    "SimulationDiverged",
    "Trajectory",
    "UncertaintySpec",
    "assemble_dae",
    "boundary_spec",
    "build_case_system",
    "build_plant",
    "default_fault",
    "default_uncertainty",
    "draw_uncertainty_signal",
    "find_equilibrium",
    "generate_dataset",
    "integrate",
    "reduce_dae_to_ode",
    "simulate",
    "split_boundary",
    "uncertainty_bounds",
]
