"""Component descriptions of a networked-microgrid system.

Per-unit throughout; time in seconds; angles in rad.  The global DQ frame
rotates with the first DER's frequency, so that droop-shifted operating
points are true equilibria.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OMEGA_BASE = 2.0 * np.pi * 60.0

DER_KINDS = ("droop_inverter", "secondary_inverter", "synchronous_generator",
             "energy_storage")


class ConfigError(ValueError):
    """Invalid system description."""


@dataclass
class DerUnit:
    id: str
    kind: str
    bus: str
    m_p: float = 1.5          # rad/s per pu-W droop gain
    n_q: float = 0.04         # pu-V per pu-var droop gain
    omega_c: float = 31.4     # power-filter cutoff, rad/s
    k_f: float = 0.0          # secondary frequency integral gain, 1/s
    k_v: float = 0.0          # secondary voltage integral gain, 1/s
    p_star: float = 0.0       # pu
    q_star: float = 0.0       # pu
    v_star: float = 1.0       # pu
    omega_star: float = OMEGA_BASE  # rad/s
    r_c: float = 0.03         # coupling resistance, pu
    x_c: float = 0.15         # coupling reactance, pu
    inertia_h: float = 1.5    # s (synchronous kind)
    damping_d: float = 2.0    # pu (synchronous kind)
    e_capacity: float = 200.0  # pu*s (storage kind)
    soc_init: float = 0.5
    soc_ref: float = 0.5
    soc_bounds: tuple = (0.1, 0.9)
    k_soc: float = 0.5        # pu power per unit SoC deviation (storage kind)

    def __post_init__(self):
        if self.kind not in DER_KINDS:
            raise ConfigError(f"{self.id}: unknown DER kind {self.kind!r}")
        for name in ("m_p", "n_q", "omega_c", "k_f", "k_v"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{self.id}: gain {name} must be >= 0")
        if self.r_c <= 0 or self.x_c <= 0:
            raise ConfigError(f"{self.id}: coupling impedance must be positive")
        if self.kind != "secondary_inverter" and (self.k_f or self.k_v):
            raise ConfigError(f"{self.id}: secondary gains on non-secondary unit")
        if self.kind == "secondary_inverter" and (self.k_f <= 0 or self.k_v <= 0):
            raise ConfigError(f"{self.id}: secondary unit needs k_f, k_v > 0")

    @property
    def has_secondary(self) -> bool:
        return self.kind == "secondary_inverter"

    def state_vars(self, is_anchor: bool) -> list:
        if self.kind == "synchronous_generator":
            return ["delta", "domega"]
        out = [] if is_anchor else ["delta"]
        out += ["p", "q"]
        if self.has_secondary:
            out += ["zf", "zv"]
        if self.kind == "energy_storage":
            out += ["soc"]
        return out


@dataclass
class Load:
    id: str
    bus: str
    r: float
    x: float

    def __post_init__(self):
        if self.r <= 0 or self.x <= 0:
            raise ConfigError(f"{self.id}: load impedance must be positive")


@dataclass
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float

    def __post_init__(self):
        if self.r <= 0 or self.x <= 0:
            raise ConfigError(f"{self.id}: branch impedance must be positive")
        if self.from_bus == self.to_bus:
            raise ConfigError(f"{self.id}: branch endpoints coincide")


@dataclass
class NetworkGraph:
    buses: list
    branches: list
    loads: list

    def __post_init__(self):
        seen = set()
        for b in self.buses:
            if b in seen:
                raise ConfigError(f"duplicate bus {b}")
            seen.add(b)
        for br in self.branches:
            if br.from_bus not in seen or br.to_bus not in seen:
                raise ConfigError(f"{br.id}: endpoint bus not declared")
        for ld in self.loads:
            if ld.bus not in seen:
                raise ConfigError(f"{ld.id}: bus not declared")


@dataclass
class UncertaintySpec:
    """Bounded power-setpoint fluctuation per DER: w_i in +-rho * p_star_i."""

    rho: float = 0.2
    signal: str = "piecewise_constant"  # or "bounded_random_walk"
    segment_range: tuple = (0.1, 0.5)   # s
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("uncertainty bound rho must be in [0, 1]")
        if self.signal not in ("piecewise_constant", "bounded_random_walk"):
            raise ConfigError(f"unknown uncertainty signal model {self.signal!r}")
        if self.segment_range[0] <= 0 or self.segment_range[1] < self.segment_range[0]:
            raise ConfigError("segment duration range must be positive and ordered")


@dataclass
class FaultEvent:
    kind: str = "none"        # none | short_circuit | open_circuit
    location: str = ""        # bus id (short) or branch id (open)
    t_start: float = 0.0
    t_clear: float = 0.0
    admittance: float = 100.0  # pu, short-circuit only

    def __post_init__(self):
        if self.kind not in ("none", "short_circuit", "open_circuit"):
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if self.kind != "none":
            if not self.t_start < self.t_clear:
                raise ConfigError("fault needs t_start < t_clear")
            if not self.location:
                raise ConfigError("fault needs a location")
            if self.kind == "short_circuit" and self.admittance <= 0:
                raise ConfigError("short-circuit admittance must be positive")

    @property
    def active(self) -> bool:
        return self.kind != "none"


@dataclass
class NmsSystem:
    """DERs + network + microgrid partition + control mode."""

    ders: list
    network: NetworkGraph
    microgrid_of_bus: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)  # {microgrid: internal|external}
    control_mode: str = "droop"  # droop | secondary

    def __post_init__(self):
        if not self.ders:
            raise ConfigError("system needs at least one DER")
        ids = [d.id for d in self.ders] + [l.id for l in self.network.loads] + [
            b.id for b in self.network.branches
        ]
        if len(set(ids)) != len(ids):
            raise ConfigError("component ids must be unique")
        for d in self.ders:
            if d.bus not in self.network.buses:
                raise ConfigError(f"{d.id}: bus {d.bus} not declared")
        if self.control_mode not in ("droop", "secondary"):
            raise ConfigError(f"unknown control mode {self.control_mode!r}")
        for mg, tag in self.partition.items():
            if tag not in ("internal", "external"):
                raise ConfigError(f"partition tag {tag!r} for {mg!r}")
        if self.partition and self.microgrid_of_bus:
            missing = set(self.microgrid_of_bus.values()) - set(self.partition)
            if missing:
                raise ConfigError(f"microgrids without partition tag: {sorted(missing)}")
        anchor = self.ders[0]
        if anchor.kind == "synchronous_generator":
            raise ConfigError("the first (frame-anchor) DER must be inverter-based")
        if self.is_external_bus(anchor.bus):
            raise ConfigError("the frame-anchor DER must be internal")

    def microgrid(self, bus: str) -> str:
        return self.microgrid_of_bus.get(bus, bus)

    def is_external_bus(self, bus: str) -> bool:
        return self.partition.get(self.microgrid(bus)) == "external"

    @property
    def has_partition(self) -> bool:
        return any(tag == "external" for tag in self.partition.values())

    def component_is_external(self, comp) -> bool:
        if isinstance(comp, Branch):
            return self.is_external_bus(comp.from_bus) and self.is_external_bus(
                comp.to_bus
            )
        return self.is_external_bus(comp.bus)
