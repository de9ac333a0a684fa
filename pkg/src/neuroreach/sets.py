"""Affine set representations used by the reachability engine.

A zonotope is written ``Z = { c + G @ beta : beta in [-1, 1]^g }`` with
center ``c`` (n,) and generator matrix ``G`` (n, g).  Zonotopes are closed
under linear maps and Minkowski sums, which is what the reachset recursion
needs; axis-aligned boxes (IntervalVector) serve as the hull currency.

All types are immutable value objects; operations return new instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionMismatch(ValueError):
    """Operands of a set operation do not share a state dimension."""


def _as_vector(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim != 1:
        a = a.reshape(-1)
    return a


@dataclass(frozen=True)
class IntervalVector:
    """Axis-aligned box [lower, upper], entrywise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower)
        hi = _as_vector(self.upper)
        if lo.shape != hi.shape:
            raise DimensionMismatch(f"bounds shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi + 1e-300):
            bad = int(np.argmax(lo - hi))
            raise ValueError(f"lower > upper at index {bad}: {lo[bad]} > {hi[bad]}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        lo.setflags(write=False)
        hi.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains_interval(self, other: "IntervalVector", tol: float = 0.0) -> bool:
        return bool(
            np.all(self.lower <= other.lower + tol)
            and np.all(self.upper >= other.upper - tol)
        )

    def hull_with(self, other: "IntervalVector") -> "IntervalVector":
        return IntervalVector(
            np.minimum(self.lower, other.lower), np.maximum(self.upper, other.upper)
        )

    def inflate(self, factor: float = 1.0, margin: float = 0.0) -> "IntervalVector":
        c, r = self.center, self.radius
        r = r * factor + margin
        return IntervalVector(c - r, c + r)

    def to_zonotope(self) -> "Zonotope":
        return Zonotope(self.center, np.diag(self.radius))

    def __add__(self, other: "IntervalVector") -> "IntervalVector":
        if self.dim != other.dim:
            raise DimensionMismatch("interval dimensions differ")
        return IntervalVector(self.lower + other.lower, self.upper + other.upper)


@dataclass(frozen=True)
class Zonotope:
    """Centrally symmetric convex set with center (n,) and generators (n, g)."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = _as_vector(self.center)
        G = np.asarray(self.generators, dtype=float)
        if G.size == 0:
            G = G.reshape(c.shape[0], 0)
        if G.ndim != 2 or G.shape[0] != c.shape[0]:
            raise DimensionMismatch(
                f"generator matrix {G.shape} incompatible with center dim {c.shape[0]}"
            )
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)
        c.setflags(write=False)
        G.setflags(write=False)

    @classmethod
    def point(cls, c) -> "Zonotope":
        c = _as_vector(c)
        return cls(c, np.zeros((c.shape[0], 0)))

    @classmethod
    def from_box(cls, lower, upper) -> "Zonotope":
        return IntervalVector(lower, upper).to_zonotope()

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def order(self) -> float:
        return self.generators.shape[1] / max(self.dim, 1)

    @property
    def n_generators(self) -> int:
        return self.generators.shape[1]

    def translate(self, v) -> "Zonotope":
        return Zonotope(self.center + _as_vector(v), self.generators)

    def scale_generators(self, factor: float) -> "Zonotope":
        return Zonotope(self.center, factor * self.generators)

    def sample(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Random member points, shape (n_samples, dim)."""
        beta = rng.uniform(-1.0, 1.0, size=(n_samples, self.n_generators))
        return self.center[None, :] + beta @ self.generators.T

    def sample_boundary(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Points with all coefficients at +-1 (vertices of the coefficient cube)."""
        beta = rng.choice([-1.0, 1.0], size=(n_samples, self.n_generators))
        return self.center[None, :] + beta @ self.generators.T


@dataclass(frozen=True)
class ZonotopeBundle:
    """Intersection of finitely many zonotopes of equal dimension."""

    members: tuple = field(default_factory=tuple)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("bundle needs at least one member")
        dim = members[0].dim
        for z in members[1:]:
            if z.dim != dim:
                raise DimensionMismatch("bundle members of different dimension")
        object.__setattr__(self, "members", members)

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def hull(self) -> IntervalVector:
        """Box intersection of the members' hulls (over-approximates the bundle)."""
        h = interval_hull(self.members[0])
        for z in self.members[1:]:
            hz = interval_hull(z)
            h = IntervalVector(
                np.maximum(h.lower, hz.lower), np.minimum(h.upper, hz.upper)
            )
        return h


def linear_map(M, Z: Zonotope) -> Zonotope:
    """Image of Z under the linear map M."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] != Z.dim:
        raise DimensionMismatch(f"matrix {M.shape} cannot act on dim {Z.dim}")
    return Zonotope(M @ Z.center, M @ Z.generators)


def minkowski_sum(A: Zonotope, B: Zonotope) -> Zonotope:
    """A (+) B: centers add, generator columns concatenate."""
    if A.dim != B.dim:
        raise DimensionMismatch(f"dims differ: {A.dim} vs {B.dim}")
    return Zonotope(A.center + B.center, np.hstack([A.generators, B.generators]))


def interval_hull(Z: Zonotope) -> IntervalVector:
    """Tightest axis-aligned box: c_i +- sum_j |G_ij|."""
    r = np.abs(Z.generators).sum(axis=1)
    return IntervalVector(Z.center - r, Z.center + r)


def reduce_order(Z: Zonotope, max_order: int) -> Zonotope:
    """Girard reduction: box the smallest generators so order <= max_order.

    The result always contains Z.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    n, g = Z.dim, Z.n_generators
    if g <= max_order * n:
        return Z
    # Girard's selection metric: ||g||_1 - ||g||_inf, smallest boxed first.
    G = Z.generators
    metric = np.abs(G).sum(axis=0) - np.abs(G).max(axis=0)
    order = np.argsort(metric, kind="stable")
    n_keep = max_order * n - n
    boxed = order[: g - n_keep]
    kept = order[g - n_keep :]
    rad = np.abs(G[:, boxed]).sum(axis=1)
    return Zonotope(Z.center, np.hstack([G[:, kept], np.diag(rad)]))


def bundle_intersect_box(B: ZonotopeBundle, box: IntervalVector) -> ZonotopeBundle:
    """Append the box (as a zonotope member) to the bundle."""
    if B.dim != box.dim:
        raise DimensionMismatch(f"dims differ: {B.dim} vs {box.dim}")
    return ZonotopeBundle(B.members + (box.to_zonotope(),))


def contains_point(Z: Zonotope, x, tol: float = 1e-9) -> bool:
    """Exact membership test via LP feasibility of the coefficient system.

    Solves min ||beta||_inf s.t. G beta = x - c and checks the optimum <= 1.
    Uses least squares for the (common) full-rank square-ish case and falls
    back to a feasibility LP otherwise.
    """
    x = _as_vector(x)
    if x.shape[0] != Z.dim:
        raise DimensionMismatch("point dimension differs from zonotope")
    d = x - Z.center
    G = Z.generators
    if G.shape[1] == 0:
        return bool(np.max(np.abs(d), initial=0.0) <= tol)
    # Quick accept: minimum-norm coefficients within the cube.
    beta, *_ = np.linalg.lstsq(G, d, rcond=None)
    if np.max(np.abs(G @ beta - d)) <= tol and np.max(np.abs(beta)) <= 1.0 + tol:
        return True
    from .lp import solve_min_infnorm_underdetermined

    beta = solve_min_infnorm_underdetermined(G, d)
    if beta is None:
        return False
    return bool(
        np.max(np.abs(G @ beta - d)) <= max(tol, 1e-7)
        and np.max(np.abs(beta)) <= 1.0 + max(tol, 1e-7)
    )
