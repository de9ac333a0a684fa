"""Fixed-step simulation, uncertainty signals, datasets, boundary splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .components import ConfigError, FaultEvent, NmsSystem, UncertaintySpec
from .system import OdePlant, build_plant

DIVERGENCE_LIMIT = 1e6


class SimulationDiverged(RuntimeError):
    def __init__(self, t_last: float, step: int):
        super().__init__(f"simulation diverged after t={t_last:.6f}s (step {step})")
        self.t_last = t_last
        self.step = step


@dataclass
class Trajectory:
    """Uniformly sampled states and inputs with layout labels."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    state_labels: list
    input_labels: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        n = self.times.shape[0]
        if self.states.shape[0] != n or self.inputs.shape[0] != n:
            raise ValueError("sample counts of times/states/inputs differ")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def column(self, label: str) -> np.ndarray:
        return self.states[:, self.state_labels.index(label)]

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write("t," + ",".join(self.state_labels + self.input_labels) + "\n")
            for k in range(self.times.shape[0]):
                row = [self.times[k], *self.states[k], *self.inputs[k]]
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def load_csv(cls, path, n_inputs: int) -> "Trajectory":
        with open(path) as f:
            header = f.readline().strip().split(",")
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        labels = header[1:]
        state_labels = labels[: len(labels) - n_inputs]
        input_labels = labels[len(labels) - n_inputs :]
        ns = len(state_labels)
        return cls(data[:, 0], data[:, 1 : 1 + ns], data[:, 1 + ns :],
                   state_labels, input_labels)


def _rk4_step(rhs, x, w, dt):
    k1 = rhs(x, w)
    k2 = rhs(x + 0.5 * dt * k1, w)
    k3 = rhs(x + 0.5 * dt * k2, w)
    k4 = rhs(x + dt * k3, w)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(plant: OdePlant, x0, w_steps, dt, fault: FaultEvent | None = None,
              fault_plant: OdePlant | None = None, fault_dt: float = 2e-4,
              t0: float = 0.0):
    """Batched RK4: x0 (B, n), w_steps (B, T, n_w) held constant per step.

    Returns states (B, T+1, n).  During [t_start, t_clear) the fault-variant
    plant is integrated with substeps of at most `fault_dt` (the vector field
    switches; the state stays continuous).
    """
    x0 = np.asarray(x0, dtype=float)
    w_steps = np.asarray(w_steps, dtype=float)
    B, T, _ = w_steps.shape
    out = np.empty((B, T + 1, x0.shape[-1]))
    out[:, 0] = x0
    x = x0
    faulted = fault is not None and fault.active
    if faulted and fault_plant is None:
        raise ValueError("fault window requires the fault-variant plant")
    n_sub = max(1, int(np.ceil(dt / fault_dt))) if faulted else 1
    for k in range(T):
        t = t0 + k * dt
        in_window = faulted and (fault.t_start - 1e-12 <= t < fault.t_clear - 1e-12)
        if in_window:
            for _ in range(n_sub):
                x = _rk4_step(fault_plant.rhs, x, w_steps[:, k], dt / n_sub)
        else:
            x = _rk4_step(plant.rhs, x, w_steps[:, k], dt)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise SimulationDiverged(t, k)
        out[:, k + 1] = x
    return out


def simulate(plant: OdePlant, x0, horizon: float, dt: float, w_signal=None,
             fault: FaultEvent | None = None, fault_plant: OdePlant | None = None,
             fault_dt: float = 2e-4) -> Trajectory:
    """Single-trajectory convenience wrapper around `integrate`."""
    n_steps = int(round(horizon / dt))
    if w_signal is None:
        w_signal = np.zeros((n_steps, plant.n_inputs))
    w_signal = np.asarray(w_signal, dtype=float)
    if w_signal.shape[0] < n_steps:
        raise ValueError("uncertainty signal shorter than the horizon")
    xs = integrate(plant, np.asarray(x0, float)[None, :],
                   w_signal[None, :n_steps], dt, fault, fault_plant, fault_dt)
    times = dt * np.arange(n_steps + 1)
    w_rec = np.vstack([w_signal[:n_steps], w_signal[n_steps - 1]])
    return Trajectory(times, xs[0], w_rec, plant.state_labels,
                      plant.input_labels)


def draw_uncertainty_signal(spec: UncertaintySpec, bounds, n_steps: int,
                            dt: float, rng: np.random.Generator) -> np.ndarray:
    """One realization (n_steps, n_w) with |w_i| <= bounds_i, ZOH per step."""
    bounds = np.asarray(bounds, dtype=float)
    n_w = bounds.shape[0]
    w = np.zeros((n_steps, n_w))
    if spec.rho == 0.0:
        return w
    if spec.signal == "piecewise_constant":
        for j in range(n_w):
            k = 0
            while k < n_steps:
                seg = max(1, int(round(rng.uniform(*spec.segment_range) / dt)))
                w[k : k + seg, j] = rng.uniform(-bounds[j], bounds[j])
                k += seg
    else:  # bounded_random_walk
        step = bounds * dt / 0.1  # reaches the bound in ~0.1 s
        cur = rng.uniform(-bounds, bounds)
        for k in range(n_steps):
            cur = np.clip(cur + rng.uniform(-step, step), -bounds, bounds)
            w[k] = cur
    return w


def uncertainty_bounds(sys: NmsSystem, rho: float) -> np.ndarray:
    """Per-DER setpoint deviation bounds: rho * |p_star| (floor 0.05 pu)."""
    return np.array([rho * max(abs(d.p_star), 0.05) for d in sys.ders])


def generate_dataset(sys: NmsSystem, spec: UncertaintySpec, n_traj: int,
                     horizon: float, dt: float, faults=(),
                     plant: OdePlant | None = None, x0=None,
                     fault_dt: float = 2e-4) -> list:
    """Randomized uncertainty realizations from the system equilibrium.

    Each trajectory records its child seed; when `faults` is nonempty the
    events cycle across trajectories.  Divergent realizations are resampled
    (at most 10 retries each).
    """
    from .system import find_equilibrium

    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    plant = plant or build_plant(sys)
    if x0 is None:
        x0 = find_equilibrium(plant)
    bounds = uncertainty_bounds(sys, spec.rho)
    n_steps = int(round(horizon / dt))
    times = dt * np.arange(n_steps + 1)
    visible = _exsys_visible_labels(plant) if sys.has_partition else []

    fault_plants = {}
    out = []
    root = np.random.SeedSequence(spec.seed)
    children = list(root.spawn(n_traj))
    for i in range(n_traj):
        fault = faults[i % len(faults)] if faults else None
        if fault is not None and fault.active and fault.kind not in fault_plants:
            fault_plants[fault.kind] = build_plant(sys, fault)
        fplant = fault_plants.get(fault.kind) if fault is not None and fault.active else None
        attempt = children[i]
        for retry in range(10):
            rng = np.random.default_rng(attempt)
            w = draw_uncertainty_signal(spec, bounds, n_steps, dt, rng)
            try:
                xs = integrate(plant, np.asarray(x0, float)[None, :], w[None],
                               dt, fault, fplant, fault_dt)
            except SimulationDiverged:
                attempt = attempt.spawn(1)[0]
                continue
            w_rec = np.vstack([w, w[-1]])
            out.append(Trajectory(
                times, xs[0], w_rec, plant.state_labels, plant.input_labels,
                meta={"seed": attempt.entropy, "index": i,
                      "fault": fault.kind if fault else "none",
                      "exsys_columns": visible, "retries": retry},
            ))
            break
        else:
            raise SimulationDiverged(0.0, 0)
    return out


# -- boundary splitting -------------------------------------------------------


@dataclass
class BoundarySpec:
    """Index bookkeeping for x = [s_ex; i_ex] and u = [i_in; s_in; w_in; w_ex]."""

    x_labels: list
    u_labels: list
    x_state_cols: np.ndarray       # x entries as plant-state columns
    u_cur_entries: np.ndarray      # dq entries of internal currents (into i_full)
    u_sin_cols: np.ndarray         # s_in as plant-state columns
    w_in_cols: np.ndarray
    w_ex_cols: np.ndarray

    @property
    def n_x(self) -> int:
        return len(self.x_labels)

    @property
    def n_u(self) -> int:
        return len(self.u_labels)


def boundary_spec(plant: OdePlant) -> BoundarySpec:
    """Derive the learned-subsystem interface from the plant partition."""
    sys, dae = plant.sys, plant.dae
    if not sys.has_partition:
        raise ConfigError("system has no external partition")

    secondary = sys.control_mode == "secondary"
    state_idx = {lab: k for k, lab in enumerate(plant.state_labels)}

    # s_ex: secondary corrections of the *internal* DERs (sent from the
    # external controller); droop mode has no shared control signals.
    x_labels, x_cols = [], []
    if secondary:
        for j, der in enumerate(sys.ders):
            if sys.is_external_bus(der.bus) or not der.has_secondary:
                continue
            for var in ("zf", "zv"):
                lab = f"{der.id}.{var}"
                x_labels.append(lab)
                x_cols.append(state_idx[lab])
    # i_ex: currents of external components (these are never eliminated).
    for k, comp in enumerate(dae.cur_comps):
        if not dae.cur_external[k]:
            continue
        for ax in ("id", "iq"):
            lab = f"{comp.id}.{ax}"
            if lab not in state_idx:
                raise ConfigError(f"external current {lab} was eliminated")
            x_labels.append(lab)
            x_cols.append(state_idx[lab])
    if not x_labels:
        raise ConfigError("partition leaves the external subsystem empty")

    u_labels = []
    u_cur = []
    for k, comp in enumerate(dae.cur_comps):
        if dae.cur_external[k]:
            continue
        u_labels += [f"{comp.id}.id", f"{comp.id}.iq"]
        u_cur += [2 * k, 2 * k + 1]
    u_sin_cols = []
    for j, der in enumerate(sys.ders):
        if sys.is_external_bus(der.bus):
            continue
        for var in der.state_vars(is_anchor=(j == 0)):
            if secondary and var in ("zf", "zv"):
                continue  # owned by the external controller
            lab = f"{der.id}.{var}"
            u_labels.append(lab)
            u_sin_cols.append(state_idx[lab])
    w_in, w_ex = [], []
    for j, der in enumerate(sys.ders):
        (w_ex if sys.is_external_bus(der.bus) else w_in).append(j)
    u_labels += [f"w.{sys.ders[j].id}" for j in w_in]
    u_labels += [f"w.{sys.ders[j].id}" for j in w_ex]

    return BoundarySpec(
        x_labels=x_labels,
        u_labels=u_labels,
        x_state_cols=np.array(x_cols, dtype=int),
        u_cur_entries=np.array(u_cur, dtype=int),
        u_sin_cols=np.array(u_sin_cols, dtype=int),
        w_in_cols=np.array(w_in, dtype=int),
        w_ex_cols=np.array(w_ex, dtype=int),
    )


def split_boundary(plant: OdePlant, traj: Trajectory):
    """Extract (x_hat, u_hat) per the partition; labels preserved.

    x columns are the external-subsystem states [s_ex; i_ex]; u columns are
    [i_in; s_in; w_in; w_ex], with eliminated currents reconstructed from
    the stored reduced state.
    """
    spec = boundary_spec(plant)
    if traj.state_labels != plant.state_labels:
        raise ValueError("trajectory layout does not match the plant")
    x_hat = traj.states[:, spec.x_state_cols]
    i_full = traj.states[:, plant.n_s :] @ plant.EMB2.T
    u_hat = np.concatenate(
        [
            i_full[:, spec.u_cur_entries],
            traj.states[:, spec.u_sin_cols],
            traj.inputs[:, spec.w_in_cols],
            traj.inputs[:, spec.w_ex_cols],
        ],
        axis=1,
    )
    return x_hat, u_hat, spec


def _exsys_visible_labels(plant: OdePlant) -> list:
    try:
        return list(boundary_spec(plant).x_labels)
    except ConfigError:
        return []
