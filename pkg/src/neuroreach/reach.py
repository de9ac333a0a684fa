"""Zonotope reachability of the composed system.

Per step: linearize at the set centers, propagate the deviation set through
the exact linear-system recursion

    R(t) = e^{J dt} R(t-dt)  (+)  E * W_F  (+)  E * E_rem,
    W_F  = J_w (W - W*) + {F*},   E = int_0^dt e^{J tau} dtau,

and bound the Lagrange remainder empirically from sampled residuals over an
enclosure of the step (safety factor kappa).  Uncertainty signals are
constant per step by construction, so the E * W_F input term is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .matfun import ExpmCache
from .sets import IntervalVector, Zonotope, interval_hull, linear_map, minkowski_sum, reduce_order

HULL_RADIUS_LIMIT = 1e5


class SetExplosion(RuntimeError):
    def __init__(self, step: int, radius: float):
        super().__init__(f"reachset exploded at step {step} (hull radius {radius:.3e})")
        self.step = step


@dataclass
class ReachConfig:
    dt: float
    horizon: float
    initial_set: Zonotope
    uncertainty_set: Zonotope
    max_order: int = 10
    kappa: float = 2.0
    fault: object = None            # FaultEvent or None
    fault_dt: float = 2e-4
    remainder_interior_samples: int = 100
    remainder_seed: int = 0
    hull_radius_limit: float = HULL_RADIUS_LIMIT

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must cover at least one step")
        if self.kappa < 1.0:
            raise ValueError("remainder safety factor kappa must be >= 1")
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")


@dataclass
class ReachStep:
    t: float
    r_point: Zonotope
    r_interval: Zonotope
    x_star: np.ndarray
    remainder: IntervalVector


@dataclass
class ReachTube:
    steps: list
    state_labels: list
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps])

    def point_hulls(self):
        return [interval_hull(s.r_point) for s in self.steps]

    def interval_hulls(self):
        return [interval_hull(s.r_interval) for s in self.steps]

    def save(self, path):
        doc = {
            "format": "reachtube-v1",
            "state_labels": self.state_labels,
            "meta": self.meta,
            "steps": [
                {
                    "t": s.t,
                    "r_point": _zono_doc(s.r_point),
                    "r_interval": _zono_doc(s.r_interval),
                    "hull_lo": interval_hull(s.r_interval).lower.tolist(),
                    "hull_hi": interval_hull(s.r_interval).upper.tolist(),
                }
                for s in self.steps
            ],
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path) -> "ReachTube":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != "reachtube-v1":
            raise ValueError(f"{path}: not a reach tube file")
        steps = [
            ReachStep(
                t=sd["t"],
                r_point=_zono_from(sd["r_point"]),
                r_interval=_zono_from(sd["r_interval"]),
                x_star=np.array(sd["r_point"]["center"]),
                remainder=IntervalVector(
                    np.zeros(len(sd["r_point"]["center"])),
                    np.zeros(len(sd["r_point"]["center"])),
                ),
            )
            for sd in doc["steps"]
        ]
        return cls(steps, doc["state_labels"], doc.get("meta", {}))

    def save_hull_csv(self, path):
        """Compact projection t,<state>_lo,<state>_hi per step."""
        with open(path, "w") as f:
            cols = [f"{lab}_{side}" for lab in self.state_labels for side in ("lo", "hi")]
            f.write("t," + ",".join(cols) + "\n")
            for s in self.steps:
                h = interval_hull(s.r_interval)
                row = [s.t]
                for k in range(len(self.state_labels)):
                    row += [h.lower[k], h.upper[k]]
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _zono_doc(z: Zonotope) -> dict:
    return {"dim": z.dim, "center": z.center.tolist(),
            "generators": z.generators.tolist()}


def _zono_from(doc: dict) -> Zonotope:
    G = np.array(doc["generators"], dtype=float)
    if G.size == 0:
        G = np.zeros((doc["dim"], 0))
    return Zonotope(np.array(doc["center"]), G)


def linearize(sys, r_prev: Zonotope, w_set: Zonotope):
    """Expansion point at the set centers; Jacobians from the system."""
    op = sys.operating_point(r_prev.center, w_set.center)
    J, J_w = sys.jacobians(op)
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(J_w))):
        raise FloatingPointError("non-finite Jacobian entries at linearization")
    return op, J, J_w


def remainder_set(sys, op, J, J_w, enclosure: IntervalVector,
                  w_box: IntervalVector, kappa: float = 2.0,
                  n_interior: int = 100, rng=None) -> IntervalVector:
    """Symmetric box bounding the linearization residual over the enclosure.

    Residuals are sampled at up to 2^min(n,12) corners of the combined
    (state x uncertainty) box plus interior points and the center; the bound
    is kappa * 0.5 * max |residual| per coordinate.
    """
    rng = rng or np.random.default_rng(0)
    n = enclosure.dim + w_box.dim
    n_corners = 2 ** min(n, 12)
    if n <= 12:
        signs = np.array(
            np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")
        ).reshape(n, -1).T
    else:
        signs = rng.choice([-1.0, 1.0], size=(n_corners, n))
    interior = rng.uniform(-1.0, 1.0, size=(n_interior, n))
    coeffs = np.vstack([signs, interior, np.zeros((1, n))])

    c = np.concatenate([enclosure.center, w_box.center])
    r = np.concatenate([enclosure.radius, w_box.radius])
    pts = c[None, :] + coeffs * r[None, :]
    Xs = pts[:, : enclosure.dim]
    Ws = pts[:, enclosure.dim :]
    F = sys.eval_f(Xs, Ws)
    lin = (
        op.F_star[None, :]
        + (Xs - op.X_star[None, :]) @ J.T
        + (Ws - op.W_star[None, :]) @ J_w.T
    )
    bound = kappa * 0.5 * np.max(np.abs(F - lin), axis=0)
    return IntervalVector(-bound, bound)


def step(sys, r_prev: Zonotope, w_set: Zonotope, dt: float, *,
         max_order: int = 10, kappa: float = 2.0, cache: ExpmCache | None = None,
         n_interior: int = 100, rng=None, model_error=None):
    """One time-point/time-interval propagation step.

    `model_error` (an interval in derivative units) Minkowski-enlarges the
    input term; its state-space effect is the hull of E * zono(E_m) and the
    LP-side box [|E| e_lo, |E| e_hi], so calibration feasibility transfers
    exactly.  Returns (r_point, r_interval, op, remainder box).
    """
    cache = cache or ExpmCache()
    op, J, J_w = linearize(sys, r_prev, w_set)
    phi, E = cache.propagators(J, dt)

    # deviation coordinates: Y = X - X*
    r_dev = Zonotope(r_prev.center - op.X_star, r_prev.generators)
    wf = Zonotope(op.F_star + J_w @ (w_set.center - op.W_star),
                  J_w @ w_set.generators)
    base = minkowski_sum(linear_map(phi, r_dev), linear_map(E, wf))

    # enclosure of the step for the residual bound, inflated for the part
    # the remainder itself adds
    cand_hull = interval_hull(base.translate(op.X_star))
    enclosure = interval_hull(r_prev).hull_with(cand_hull).inflate(1.1, 1e-9)
    w_box = interval_hull(w_set)
    rem = remainder_set(sys, op, J, J_w, enclosure, w_box, kappa,
                        n_interior, rng)

    r_el = linear_map(E, rem.to_zonotope())
    extras = [r_el]
    if model_error is not None and not model_error.is_zero:
        extras.append(_model_error_zonotope(E, model_error))

    r_point = base
    for z in extras:
        r_point = minkowski_sum(r_point, z)
    r_point = reduce_order(r_point.translate(op.X_star), max_order)

    r_interval = _enclose(r_prev, r_point)
    for z in extras:
        r_interval = minkowski_sum(r_interval, z)
    r_interval = reduce_order(r_interval, max_order + 1)
    return r_point, r_interval, op, rem


def _model_error_zonotope(E: np.ndarray, em) -> Zonotope:
    """State-space effect of the derivative-error interval over one step."""
    absE = np.abs(E)
    lo1, hi1 = absE @ em.lower, absE @ em.upper
    c = 0.5 * (em.lower + em.upper)
    r = 0.5 * (em.upper - em.lower)
    mid = E @ c
    rad = absE @ r
    lo = np.minimum(lo1, mid - rad)
    hi = np.maximum(hi1, mid + rad)
    return Zonotope(0.5 * (lo + hi), np.diag(0.5 * (hi - lo)))


def _enclose(z1: Zonotope, z2: Zonotope) -> Zonotope:
    """Zonotope containing the convex hull of two zonotopes."""
    g1, g2 = z1.n_generators, z2.n_generators
    g = max(g1, g2)
    G1 = np.hstack([z1.generators, np.zeros((z1.dim, g - g1))])
    G2 = np.hstack([z2.generators, np.zeros((z2.dim, g - g2))])
    center = 0.5 * (z1.center + z2.center)
    gens = np.hstack([
        0.5 * (G1 + G2),
        0.5 * (z1.center - z2.center)[:, None],
        0.5 * (G1 - G2),
    ])
    return Zonotope(center, gens)


def _time_grid(cfg: ReachConfig):
    """(t, dt, faulted) per step; dt refines inside the fault window."""
    out = []
    t = 0.0
    fault = cfg.fault
    active = fault is not None and getattr(fault, "active", False)
    eps = 1e-12
    while t < cfg.horizon - eps:
        if active and fault.t_start - eps <= t < fault.t_clear - eps:
            dt = min(cfg.fault_dt, fault.t_clear - t)
            out.append((t, dt, True))
        else:
            dt = cfg.dt
            if active and t < fault.t_start < t + dt - eps:
                dt = fault.t_start - t
            out.append((t, dt, False))
        t += dt
    return out


def compute_tube(sys, cfg: ReachConfig, sys_fault=None, progress=None,
                 model_error=None) -> ReachTube:
    """Iterate `step` over the horizon, swapping physics across the fault window."""
    if cfg.fault is not None and getattr(cfg.fault, "active", False) and sys_fault is None:
        raise ValueError("fault schedule requires the fault-variant system")
    rng = np.random.default_rng(cfg.remainder_seed)
    cache = ExpmCache()
    r = cfg.initial_set
    steps = [ReachStep(0.0, r, r, np.array(r.center), _zero_box(r.dim))]
    for k, (t, dt, faulted) in enumerate(_time_grid(cfg)):
        active_sys = sys_fault if faulted else sys
        r_point, r_interval, op, rem = step(
            active_sys, r, cfg.uncertainty_set, dt, max_order=cfg.max_order,
            kappa=cfg.kappa, cache=cache, rng=rng,
            n_interior=cfg.remainder_interior_samples, model_error=model_error,
        )
        radius = float(np.max(interval_hull(r_point).radius))
        if not np.isfinite(radius) or radius > cfg.hull_radius_limit:
            raise SetExplosion(k, radius)
        steps.append(ReachStep(t + dt, r_point, r_interval, op.X_star, rem))
        r = r_point
        if progress is not None:
            progress(k, t + dt)
    labels = list(getattr(sys, "state_labels", [f"x{i}" for i in range(r.dim)]))
    return ReachTube(steps, labels, meta={"dt": cfg.dt, "horizon": cfg.horizon})


def _zero_box(n: int) -> IntervalVector:
    z = np.zeros(n)
    return IntervalVector(z, z)


def hull_series(tube: ReachTube, kind: str = "interval"):
    """(times, lows, highs) arrays across the tube."""
    hulls = tube.interval_hulls() if kind == "interval" else tube.point_hulls()
    lo = np.stack([h.lower for h in hulls])
    hi = np.stack([h.upper for h in hulls])
    return tube.times, lo, hi


def output_hull_series(tube: ReachTube, C, D, c0, w_box: IntervalVector):
    """Hulls of linear outputs y = C X + D w + c0 across the tube."""
    times = tube.times
    lo = np.empty((len(tube.steps), C.shape[0]))
    hi = np.empty_like(lo)
    wc, wr = w_box.center, w_box.radius
    for k, s in enumerate(tube.steps):
        z = s.r_interval
        yc = C @ z.center + D @ wc + c0
        yr = np.abs(C @ z.generators).sum(axis=1) + np.abs(D) @ wr
        lo[k] = yc - yr
        hi[k] = yc + yr
    return times, lo, hi
