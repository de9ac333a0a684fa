"""Continuous-depth network model: parameters, normalization, file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .backend import get_backend

MODEL_FORMAT_VERSION = 1


@dataclass
class OdeNetModel:
    """State-derivative network  xdot = N(x, u).

    The hidden block integrates dz/dk = tanh(W_h z + b_h) over a unit depth
    span with `k_steps` explicit Euler steps; input and output are affine
    maps.  Per-column normalization (shift, scale) is part of the model.
    """

    n_x: int
    n_u: int
    width: int = 64
    k_steps: int = 8
    depth_len: float = 1.0
    x_shift: np.ndarray = None
    x_scale: np.ndarray = None
    u_shift: np.ndarray = None
    u_scale: np.ndarray = None
    params: np.ndarray = None
    x_labels: list = field(default_factory=list)
    u_labels: list = field(default_factory=list)

    def __post_init__(self):
        if self.x_shift is None:
            self.x_shift = np.zeros(self.n_x)
        if self.x_scale is None:
            self.x_scale = np.ones(self.n_x)
        if self.u_shift is None:
            self.u_shift = np.zeros(self.n_u)
        if self.u_scale is None:
            self.u_scale = np.ones(self.n_u)
        for name in ("x_shift", "x_scale", "u_shift", "u_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.x_scale <= 0) or np.any(self.u_scale <= 0):
            raise ValueError("normalization scales must be positive")
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector has {self.params.shape}, expected ({self.n_params},)"
            )

    # -- parameter layout -------------------------------------------------

    @property
    def n_in(self) -> int:
        return self.n_x + self.n_u

    @property
    def n_params(self) -> int:
        w, ni, nx = self.width, self.n_in, self.n_x
        return w * ni + w + w * w + w + nx * w + nx

    def _offsets(self):
        w, ni, nx = self.width, self.n_in, self.n_x
        sizes = [w * ni, w, w * w, w, nx * w, nx]
        offs = np.cumsum([0] + sizes)
        return offs

    def param_views(self, flat=None) -> dict:
        """Backend-ready dict of parameter views into the flat vector."""
        flat = self.params if flat is None else flat
        w, ni, nx = self.width, self.n_in, self.n_x
        o = self._offsets()
        return {
            "W_in": flat[o[0] : o[1]].reshape(w, ni),
            "b_in": flat[o[1] : o[2]],
            "W_h": flat[o[2] : o[3]].reshape(w, w),
            "b_h": flat[o[3] : o[4]],
            "W_out": flat[o[4] : o[5]].reshape(nx, w),
            "b_out": flat[o[5] : o[6]],
            "x_shift": self.x_shift,
            "x_scale": self.x_scale,
            "u_shift": self.u_shift,
            "u_scale": self.u_scale,
            "k_steps": self.k_steps,
            "depth_len": self.depth_len,
        }

    def flatten_grads(self, grads: dict) -> np.ndarray:
        """Per-trajectory gradient dict (B, ...) -> flat array (B, n_params)."""
        B = grads["b_out"].shape[0]
        return np.concatenate(
            [grads[k].reshape(B, -1)
             for k in ("W_in", "b_in", "W_h", "b_h", "W_out", "b_out")],
            axis=1,
        )

    # -- construction ------------------------------------------------------

    @classmethod
    def initialized(cls, n_x, n_u, width=64, k_steps=8, seed=0, **kw) -> "OdeNetModel":
        """Random init with a small output map so initial rollouts stay tame."""
        model = cls(n_x=n_x, n_u=n_u, width=width, k_steps=k_steps, **kw)
        rng = np.random.default_rng(seed)
        p = model.param_views()
        p["W_in"][:] = rng.normal(0.0, 1.0 / np.sqrt(model.n_in), p["W_in"].shape)
        p["W_h"][:] = rng.normal(0.0, 1.0 / np.sqrt(width), p["W_h"].shape)
        p["W_out"][:] = rng.normal(0.0, 0.01 / np.sqrt(width), p["W_out"].shape)
        return model

    def with_normalization_from(self, xs, us) -> "OdeNetModel":
        """Set shift/scale from stacked samples xs (N, n_x), us (N, n_u)."""
        xs = np.asarray(xs, dtype=float)
        us = np.asarray(us, dtype=float)
        self.x_shift = xs.mean(axis=0)
        self.x_scale = np.maximum(xs.std(axis=0), 1e-3)
        self.u_shift = us.mean(axis=0)
        self.u_scale = np.maximum(us.std(axis=0), 1e-3)
        return self

    # -- evaluation --------------------------------------------------------

    def forward(self, x, u) -> np.ndarray:
        """Derivative estimate; broadcasts over leading batch axes."""
        out = get_backend().forward(self.param_views(), np.asarray(x, float),
                                    np.asarray(u, float))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("network output is not finite")
        return out

    def jacobians(self, x, u):
        """(dN/dx, dN/du) of the realized discrete scheme."""
        return get_backend().jac(self.param_views(), np.asarray(x, float),
                                 np.asarray(u, float))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "kind": "odenet",
            "n_x": self.n_x,
            "n_u": self.n_u,
            "width": self.width,
            "k_steps": self.k_steps,
            "depth_len": self.depth_len,
            "x_shift": self.x_shift.tolist(),
            "x_scale": self.x_scale.tolist(),
            "u_shift": self.u_shift.tolist(),
            "u_scale": self.u_scale.tolist(),
            "x_labels": list(self.x_labels),
            "u_labels": list(self.u_labels),
            "params": self.params.tolist(),
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path) -> "OdeNetModel":
        with open(path) as f:
            doc = json.load(f)
        if "version" not in doc:
            raise ValueError(f"model file {path} lacks the mandatory version field")
        if doc["version"] != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc['version']}")
        return cls(
            n_x=doc["n_x"],
            n_u=doc["n_u"],
            width=doc["width"],
            k_steps=doc["k_steps"],
            depth_len=doc["depth_len"],
            x_shift=np.array(doc["x_shift"]),
            x_scale=np.array(doc["x_scale"]),
            u_shift=np.array(doc["u_shift"]),
            u_scale=np.array(doc["u_scale"]),
            params=np.array(doc["params"]),
            x_labels=doc.get("x_labels", []),
            u_labels=doc.get("u_labels", []),
        )
