"""Default 4-microgrid topology and the five study-case presets.

Line, load and controller parameters are artifact defaults chosen for the
desk-scale phenomenology (droop sharing, secondary restoration, inertia),
not values from any published controller table.
"""

from __future__ import annotations

from .components import (
    OMEGA_BASE,
    Branch,
    DerUnit,
    FaultEvent,
    Load,
    NetworkGraph,
    NmsSystem,
    UncertaintySpec,
)

# (id, bus, p_star): microgrid 3 hosts two units.
_DER_SITES = [
    ("der1", "bus1", 0.45),
    ("der2", "bus2", 0.40),
    ("der3a", "bus3", 0.35),
    ("der3b", "bus3", 0.35),
    ("der4", "bus4", 0.45),
]

_SECONDARY_GAINS = {"k_f": 8.0, "k_v": 8.0}


def _der(id, bus, p_star, kind, **kw):
    base = dict(
        id=id, bus=bus, kind=kind, p_star=p_star, q_star=0.1,
        m_p=1.5, n_q=0.04, omega_c=31.4, v_star=1.0, omega_star=OMEGA_BASE,
        r_c=0.03, x_c=0.15,
    )
    base.update(kw)
    return DerUnit(**base)


def default_network() -> NetworkGraph:
    buses = ["bus1", "bus2", "bus3", "bus4"]
    branches = [
        Branch("tie12", "bus1", "bus2", r=0.03, x=0.085),
        Branch("tie23", "bus2", "bus3", r=0.03, x=0.085),
        Branch("tie34", "bus3", "bus4", r=0.03, x=0.085),
        Branch("tie41", "bus4", "bus1", r=0.03, x=0.085),
    ]
    loads = [
        Load("load1", "bus1", r=1.5, x=0.8),
        Load("load2", "bus2", r=1.7, x=0.8),
        Load("load3", "bus3", r=1.3, x=0.7),
        Load("load4", "bus4", r=1.6, x=0.8),
    ]
    return NetworkGraph(buses, branches, loads)


def build_case_system(case: str) -> NmsSystem:
    """Cases 1..5: control mode, data-driven microgrid, source mix."""
    case = case.lower()
    if case not in {f"case{k}" for k in range(1, 6)}:
        raise ValueError(f"unknown preset {case!r}")
    secondary = case == "case2"
    kind = "secondary_inverter" if secondary else "droop_inverter"
    gains = _SECONDARY_GAINS if secondary else {}

    ders = [_der(i, b, p, kind, **gains) for (i, b, p) in _DER_SITES]
    if case == "case4":  # one unit of microgrid 3 becomes a synchronous machine
        ders[3] = _der("der3b", "bus3", 0.35, "synchronous_generator",
                       v_star=1.02, inertia_h=1.5, damping_d=2.0)
    elif case == "case5":  # ... or an energy-storage unit
        ders[3] = _der("der3b", "bus3", 0.0, "energy_storage",
                       omega_c=125.0, e_capacity=200.0, k_soc=0.5)

    external_mg = "mg4" if case in ("case1", "case2") else "mg3"
    partition = {f"mg{k}": "internal" for k in range(1, 5)}
    partition[external_mg] = "external"
    return NmsSystem(
        ders=ders,
        network=default_network(),
        microgrid_of_bus={f"bus{k}": f"mg{k}" for k in range(1, 5)},
        partition=partition,
        control_mode="secondary" if secondary else "droop",
    )


def default_uncertainty(rho: float = 0.2, seed: int = 0) -> UncertaintySpec:
    return UncertaintySpec(rho=rho, signal="piecewise_constant",
                           segment_range=(0.1, 0.5), seed=seed)


def default_fault() -> FaultEvent:
    return FaultEvent(kind="short_circuit", location="bus2",
                      t_start=0.3, t_clear=0.32, admittance=100.0)
