"""Pure-numpy implementation of the continuous-depth network kernels.

This is the fallback backend (and the correctness reference for the
compiled one).  Everything is batched over a leading axis so that training
amortizes numpy call overhead across trajectories.

Network:  xi = [(x - xs)/xsc ; (u - us)/usc]
          z_0 = W_in xi + b_in
          z_{j+1} = z_j + delta * tanh(W_h z_j + b_h)      (k_steps times)
          xdot = xsc * (W_out z_K + b_out)

Time integration is the implicit trapezoidal rule with inputs held
zero-order; each step is solved by a damped-free Newton iteration and the
gradient is the exact discrete adjoint of the converged step.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "reference"


def _normalize_inputs(p, x, u):
    xi_x = (x - p["x_shift"]) / p["x_scale"]
    xi_u = (u - p["u_shift"]) / p["u_scale"]
    return np.concatenate([xi_x, xi_u], axis=-1)


def _depth_forward(p, xi, keep_internals=False):
    delta = p["depth_len"] / p["k_steps"]
    z = xi @ p["W_in"].T + p["b_in"]
    zs, ts = ([z], []) if keep_internals else (None, None)
    for _ in range(p["k_steps"]):
        t = np.tanh(z @ p["W_h"].T + p["b_h"])
        z = z + delta * t
        if keep_internals:
            zs.append(z)
            ts.append(t)
    return (z, zs, ts) if keep_internals else z


def forward(p, x, u):
    """Batched state-derivative estimate, shape (..., n_x)."""
    xi = _normalize_inputs(p, x, u)
    z = _depth_forward(p, xi)
    return (z @ p["W_out"].T + p["b_out"]) * p["x_scale"]


def jac(p, x, u):
    """Exact Jacobians of the discrete depth scheme: (dN/dx, dN/du)."""
    n_x = p["x_scale"].shape[0]
    xi = _normalize_inputs(p, x, u)
    delta = p["depth_len"] / p["k_steps"]
    z = xi @ p["W_in"].T + p["b_in"]
    # T = dz/dxi, shape (..., w, n_in); same start for every batch member.
    T = np.broadcast_to(p["W_in"], xi.shape[:-1] + p["W_in"].shape).copy()
    for _ in range(p["k_steps"]):
        t = np.tanh(z @ p["W_h"].T + p["b_h"])
        D = 1.0 - t * t
        T = T + delta * D[..., None] * (p["W_h"] @ T)
        z = z + delta * t
    S = p["x_scale"][:, None] * (p["W_out"] @ T)
    J_x = S[..., :n_x] / p["x_scale"]
    J_u = S[..., n_x:] / p["u_scale"]
    return J_x, J_u


def _jac_x_only(p, x, u):
    return jac(p, x, u)[0]


def _vjp_theta(p, x, u, mu, grads):
    """Accumulate mu^T dN/dtheta into the per-trajectory gradient dict."""
    delta = p["depth_len"] / p["k_steps"]
    xi = _normalize_inputs(p, x, u)
    _, zs, ts = _depth_forward(p, xi, keep_internals=True)
    g_y = mu * p["x_scale"]
    grads["b_out"] += g_y
    grads["W_out"] += np.einsum("...i,...w->...iw", g_y, zs[-1])
    g_z = g_y @ p["W_out"]
    for j in range(p["k_steps"] - 1, -1, -1):
        s = delta * g_z * (1.0 - ts[j] * ts[j])
        grads["b_h"] += s
        grads["W_h"] += np.einsum("...h,...w->...hw", s, zs[j])
        g_z = g_z + s @ p["W_h"]
    grads["b_in"] += g_z
    grads["W_in"] += np.einsum("...h,...i->...hi", g_z, xi)


def rollout(p, x1, U, dt, newton_tol=1e-13, newton_maxit=30):
    """Implicit-trapezoidal rollout.

    x1: (B, n_x) initial states; U: (B, T, n_u) sampled inputs (ZOH on each
    interval); returns xs (B, T, n_x).  Raises FloatingPointError with the
    step index on divergence.
    """
    B, T, _ = U.shape
    n = x1.shape[-1]
    eye = np.eye(n)
    xs = np.empty((B, T, n))
    xs[:, 0] = x1
    x = x1
    for i in range(T - 1):
        u = U[:, i]
        nl = forward(p, x, u)
        x_new = x + dt * nl
        M = None
        scale = 1.0 + np.max(np.abs(x))
        for it in range(newton_maxit):
            resid = x_new - x - 0.5 * dt * (nl + forward(p, x_new, u))
            if np.max(np.abs(resid)) <= newton_tol * scale:
                break
            if M is None or it >= 10:
                A = _jac_x_only(p, x_new, u)
                M = eye - 0.5 * dt * A
            x_new = x_new - np.linalg.solve(M, resid[..., None])[..., 0]
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError(f"rollout diverged at step {i + 1}")
        xs[:, i + 1] = x_new
        x = x_new
    return xs


def _loss_jumps(xs, xs_hat, eta):
    """Loss values (B,) and per-sample costate jumps dL/dx_i (B, T, n).

    L = sum_{i>=2} 0.5 * eta_i * ||x_i - xhat_i||_2 (unsquared norm; the
    first sample is the rollout anchor and contributes no term).
    """
    resid = xs - xs_hat
    norms = np.linalg.norm(resid, axis=-1)
    loss = 0.5 * (eta[None, 1:] * norms[:, 1:]).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        jumps = 0.5 * eta[None, :, None] * resid / norms[..., None]
    jumps = np.where(norms[..., None] > 0.0, jumps, 0.0)
    jumps[:, 0] = 0.0
    return loss, jumps


def loss_and_grad(p, xs_hat, U, dt, eta, newton_tol=1e-13, newton_maxit=30):
    """Rollout + loss + exact discrete-adjoint gradient.

    Returns (loss (B,), grads dict of per-trajectory arrays (B, ...), xs).
    """
    B, T, n = xs_hat.shape
    eye = np.eye(n)
    xs = rollout(p, xs_hat[:, 0], U, dt, newton_tol, newton_maxit)
    loss, jumps = _loss_jumps(xs, xs_hat, eta)

    grads = {
        "W_in": np.zeros((B,) + p["W_in"].shape),
        "b_in": np.zeros((B,) + p["b_in"].shape),
        "W_h": np.zeros((B,) + p["W_h"].shape),
        "b_h": np.zeros((B,) + p["b_h"].shape),
        "W_out": np.zeros((B,) + p["W_out"].shape),
        "b_out": np.zeros((B,) + p["b_out"].shape),
    }
    lam = jumps[:, T - 1].copy()
    half = 0.5 * dt
    for i in range(T - 2, -1, -1):
        u = U[:, i]
        A_r = _jac_x_only(p, xs[:, i + 1], u)
        M = eye - half * A_r
        mu = np.linalg.solve(np.swapaxes(M, -1, -2), lam[..., None])[..., 0]
        _vjp_theta(p, xs[:, i], u, half * mu, grads)
        _vjp_theta(p, xs[:, i + 1], u, half * mu, grads)
        A_l = _jac_x_only(p, xs[:, i], u)
        lam = mu + half * np.einsum("...ji,...j->...i", A_l, mu)
        if i > 0:
            lam = lam + jumps[:, i]
    return loss, grads, xs
