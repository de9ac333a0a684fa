"""Compiled-kernel backend: Cython rollout/adjoint, numpy for the rest.

Pointwise forward/Jacobian evaluations are batch-vectorized numpy either
way; the compiled win is the sequential time-stepping loop.
"""

from __future__ import annotations

import numpy as np

from . import _core
from .reference import forward, jac  # noqa: F401  (same implementations)

BACKEND_NAME = "compiled"


def _c_params(p: dict) -> dict:
    out = dict(p)
    for key in ("W_in", "b_in", "W_h", "b_h", "W_out", "b_out",
                "x_shift", "x_scale", "u_shift", "u_scale"):
        out[key] = np.ascontiguousarray(p[key], dtype=np.float64)
    return out


def rollout(p, x1, U, dt, newton_tol=1e-13, newton_maxit=30):
    return _core.rollout_batch(
        _c_params(p),
        np.ascontiguousarray(x1, dtype=np.float64),
        np.ascontiguousarray(U, dtype=np.float64),
        float(dt), float(newton_tol), int(newton_maxit),
    )


def loss_and_grad(p, xs_hat, U, dt, eta, newton_tol=1e-13, newton_maxit=30):
    return _core.loss_and_grad_batch(
        _c_params(p),
        np.ascontiguousarray(xs_hat, dtype=np.float64),
        np.ascontiguousarray(U, dtype=np.float64),
        float(dt),
        np.ascontiguousarray(eta, dtype=np.float64),
        float(newton_tol), int(newton_maxit),
    )
