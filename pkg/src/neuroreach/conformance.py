"""Model-error interval inference and conformance reachsets.

Calibration runs the one-step reachability recursion re-seeded at each
measured state (uncertainty as a recorded point signal), collects the
per-step nominal boxes D and input-propagation matrices E, and solves the
edge-length-minimizing LP so that every measurement is enclosed once the
interval correction |E| [e_lo, e_hi] is added.  Per-trace intervals union
into the deployed model error.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .lp import LpInfeasible, solve_covering_lp
from .matfun import ExpmCache
from .reach import ReachConfig, ReachTube, compute_tube, linearize, remainder_set
from .sets import IntervalVector, Zonotope, interval_hull


@dataclass
class ModelErrorInterval:
    """E_m = [lower, upper] in state-derivative units (pu/s); contains zero."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape:
            raise ValueError("bound shapes differ")
        if np.any(self.lower > 0) or np.any(self.upper < 0):
            raise ValueError("model-error interval must contain zero")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.lower == 0.0) and np.all(self.upper == 0.0))

    @classmethod
    def zero(cls, n: int) -> "ModelErrorInterval":
        return cls(np.zeros(n), np.zeros(n))

    def contains(self, other: "ModelErrorInterval", tol: float = 0.0) -> bool:
        return bool(np.all(self.lower <= other.lower + tol)
                    and np.all(self.upper >= other.upper - tol))

    def save(self, path, provenance=None, stats=None):
        doc = {
            "format": "model-error-v1",
            "dim": self.dim,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "provenance": provenance or [],
            "solver_stats": stats or {},
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path) -> "ModelErrorInterval":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != "model-error-v1":
            raise ValueError(f"{path}: not a model-error file")
        return cls(np.array(doc["lower"]), np.array(doc["upper"]))


@dataclass
class StepConstraint:
    """One calibration step: box(D), |E| and the measured target state."""

    box_lo: np.ndarray
    box_hi: np.ndarray
    abs_E: np.ndarray
    x_meas: np.ndarray

    @property
    def slack(self) -> np.ndarray:
        return np.minimum(self.x_meas - self.box_lo, self.box_hi - self.x_meas)


@dataclass
class ConformanceRecord:
    per_trace: list                   # ModelErrorInterval per calibrated trace
    union: ModelErrorInterval
    diagnostics: list                 # (trace, step, coord, slack) rows
    failures: list = field(default_factory=list)

    def save_diagnostics_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["trace", "step", "coord", "slack"])
            for row in self.diagnostics:
                wr.writerow([row[0], row[1], row[2], repr(float(row[3]))])


def nominal_tube_for_trace(sys, x_meas, w_meas, dt, kappa: float = 2.0,
                           n_interior: int = 100, seed: int = 0):
    """One-step nominal sets along a measured trace.

    x_meas: (T, n) measured states on a uniform grid with step `dt` (must
    equal the reachability step); w_meas: (T, n_w) recorded uncertainty
    (ZOH).  Returns a list of T-1 StepConstraint records.
    """
    x_meas = np.asarray(x_meas, dtype=float)
    w_meas = np.asarray(w_meas, dtype=float)
    rng = np.random.default_rng(seed)
    cache = ExpmCache()
    out = []
    for k in range(x_meas.shape[0] - 1):
        x0, w0 = x_meas[k], w_meas[k]
        op, J, J_w = linearize(sys, Zonotope.point(x0), Zonotope.point(w0))
        phi, E = cache.propagators(J, dt)
        center = x0 + E @ op.F_star
        enclosure = IntervalVector(np.minimum(x0, center), np.maximum(x0, center))
        enclosure = enclosure.inflate(1.1, 1e-9)
        w_box = IntervalVector(w0, w0)
        rem = remainder_set(sys, op, J, J_w, enclosure, w_box, kappa,
                            n_interior, rng)
        r_el = np.abs(E) @ rem.upper
        out.append(StepConstraint(
            box_lo=center - r_el,
            box_hi=center + r_el,
            abs_E=np.abs(E),
            x_meas=x_meas[k + 1],
        ))
    return out


def solve_em(constraints) -> tuple:
    """Edge-length-minimizing interval from per-step enclosure constraints.

    Returns (ModelErrorInterval, stats).  The upper and lower sides decouple
    into two covering LPs; rows already satisfied (nonpositive gap) are
    pruned before the dense simplex sees them.
    """
    if not constraints:
        raise ValueError("no constraints")
    n = constraints[0].abs_E.shape[0]
    cost = np.zeros(n)
    up_rows, up_rhs, lo_rows, lo_rhs = [], [], [], []
    for sc in constraints:
        if np.any(sc.abs_E < 0):
            raise ValueError("|E| must be entrywise nonnegative")
        cost += sc.abs_E.T @ np.ones(n)
        gap_up = sc.x_meas - sc.box_hi
        gap_lo = sc.box_lo - sc.x_meas
        for i in np.where(gap_up > 0)[0]:
            up_rows.append(sc.abs_E[i])
            up_rhs.append(gap_up[i])
        for i in np.where(gap_lo > 0)[0]:
            lo_rows.append(sc.abs_E[i])
            lo_rhs.append(gap_lo[i])

    def _side(rows, rhs):
        if not rows:
            return np.zeros(n), 0
        A = np.vstack(rows)
        b = np.asarray(rhs)
        zero_rows = np.where((np.abs(A).sum(axis=1) <= 1e-12) & (b > 1e-12))[0]
        if zero_rows.size:
            raise LpInfeasible(
                f"structurally infeasible: zero |E| rows {zero_rows.tolist()}"
            )
        v, _ = solve_covering_lp(A, b, cost)
        return v, len(rows)

    e_hi, m_up = _side(up_rows, up_rhs)
    q, m_lo = _side(lo_rows, lo_rhs)
    em = ModelErrorInterval(-q, e_hi)
    stats = {"active_upper_rows": m_up, "active_lower_rows": m_lo,
             "steps": len(constraints)}
    return em, stats


def union_em(members) -> ModelErrorInterval:
    """Interval hull of the union: entrywise min of lowers, max of uppers."""
    members = list(members)
    if not members:
        raise ValueError("union of no intervals")
    dim = members[0].dim
    if any(m.dim != dim for m in members):
        raise ValueError("member dimensions differ")
    lo = np.min([m.lower for m in members], axis=0)
    hi = np.max([m.upper for m in members], axis=0)
    return ModelErrorInterval(lo, hi)


def conformance_tube(sys, cfg: ReachConfig, em: ModelErrorInterval,
                     sys_fault=None) -> ReachTube:
    """compute_tube with the per-step input set enlarged by the model error.

    A zero-width interval reproduces compute_tube bitwise (the enlargement
    branch is skipped entirely).
    """
    if em is not None and em.dim != cfg.initial_set.dim:
        raise ValueError("model-error dimension does not match the state")
    if em is None or em.is_zero:
        return compute_tube(sys, cfg, sys_fault=sys_fault)
    return compute_tube(sys, cfg, sys_fault=sys_fault, model_error=em)


def calibrate(sys, traces, dt, kappa: float = 2.0, n_interior: int = 100,
              seed: int = 0) -> ConformanceRecord:
    """Per-trace E_m inference + union; per-trace failures are recorded and
    skipped (at least one trace must survive)."""
    per_trace = []
    diagnostics = []
    failures = []
    for idx, (x_meas, w_meas) in enumerate(traces):
        try:
            cons = nominal_tube_for_trace(sys, x_meas, w_meas, dt, kappa,
                                          n_interior, seed + idx)
            em, _ = solve_em(cons)
        except Exception as exc:  # noqa: BLE001 - per-trace isolation
            failures.append((idx, repr(exc)))
            continue
        per_trace.append(em)
        for k, sc in enumerate(cons):
            slack = sc.slack
            worst = int(np.argmin(slack))
            diagnostics.append((idx, k, worst, float(slack[worst])))
    if not per_trace:
        raise RuntimeError(f"all calibration traces failed: {failures}")
    return ConformanceRecord(per_trace, union_em(per_trace), diagnostics, failures)


def trace_to_system_coords(sys, traj):
    """Project a plant trajectory onto the composed system's state layout."""
    cols = [traj.state_labels.index(l) for l in sys.state_labels]
    return traj.states[:, cols], traj.inputs.copy()
