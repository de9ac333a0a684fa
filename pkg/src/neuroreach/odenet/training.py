"""Training loop: trapezoidal rollouts, adjoint gradients, Adam updates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .backend import get_backend
from .model import OdeNetModel


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 1500
    eta: float = 1.0              # uniform per-sample loss weight
    k_steps: int = 8              # depth-integration steps of new models
    integrator: str = "trapezoidal"
    batch_strategy: str = "whole"  # "whole" or "windows"
    window_s: float = 0.25        # window length for batch_strategy="windows"
    subsample: int = 1            # keep every k-th sample before training
    lr_decay: float = 0.5
    lr_decay_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.eta < 0:
            raise ValueError("loss weights must be >= 0")
        if self.integrator != "trapezoidal":
            raise ValueError(f"unknown integrator {self.integrator!r}")


class Trace:
    """One training trajectory: sampled states, inputs, uniform step."""

    def __init__(self, xs, us, dt):
        self.xs = np.asarray(xs, dtype=float)
        self.us = np.asarray(us, dtype=float)
        self.dt = float(dt)
        if self.xs.shape[0] != self.us.shape[0]:
            raise ValueError("state and input sample counts differ")
        if self.xs.shape[0] < 2:
            raise ValueError("a trace needs at least two samples")

    def __len__(self):
        return self.xs.shape[0]


def _eta_vector(n, eta):
    return np.full(n, float(eta))


def loss_from_rollout(xs, xs_hat, eta) -> float:
    """Sum_i 0.5 * eta_i * ||x_i - xhat_i||_2 over samples after the anchor."""
    norms = np.linalg.norm(xs - xs_hat, axis=-1)
    return float(0.5 * (eta[None, 1:] * norms[:, 1:]).sum())


def rollout(model: OdeNetModel, x1, us, times) -> np.ndarray:
    """Integrate the learned field from x1 over `times` (uniform, increasing).

    `us` holds the input samples at each time (zero-order hold in between).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.shape[0] < 2:
        raise ValueError("need at least two time points")
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise ValueError("times must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > 1e-9 * steps[0]:
        raise ValueError("rollout requires a uniform time grid")
    us = np.asarray(us, dtype=float)
    xs = get_backend().rollout(
        model.param_views(),
        np.asarray(x1, float)[None, :],
        us[None, :, :],
        float(steps[0]),
    )
    return xs[0]


def loss(model: OdeNetModel, traces, eta: float = 1.0) -> float:
    """Total rollout loss over a batch of traces."""
    if not traces:
        raise ValueError("batch is empty")
    total = 0.0
    for tr in traces:
        xs = get_backend().rollout(
            model.param_views(), tr.xs[None, 0], tr.us[None], tr.dt
        )
        total += loss_from_rollout(xs, tr.xs[None], _eta_vector(len(tr), eta))
    return total


def adjoint_gradient(model: OdeNetModel, trace: Trace, eta: float = 1.0):
    """Loss and flat parameter gradient for one trace (fused forward+adjoint)."""
    lo, grads, _ = get_backend().loss_and_grad(
        model.param_views(), trace.xs[None], trace.us[None], trace.dt,
        _eta_vector(len(trace), eta),
    )
    return float(lo[0]), model.flatten_grads(grads)[0]


def split_windows(traces, window_s: float):
    """Cut traces into equal-length windows treated as independent traces."""
    out = []
    for tr in traces:
        n_win = max(2, int(round(window_s / tr.dt)) + 1)
        start = 0
        while start + n_win <= len(tr):
            out.append(Trace(tr.xs[start : start + n_win],
                             tr.us[start : start + n_win], tr.dt))
            start += n_win - 1
        if start == 0:  # trace shorter than one window
            out.append(tr)
    return out


def _group_batches(traces):
    """Group traces of equal (length, dt) so the kernel can batch them."""
    groups = {}
    for tr in traces:
        groups.setdefault((len(tr), round(tr.dt, 12)), []).append(tr)
    batches = []
    for (n, dt), members in sorted(groups.items()):
        xs = np.stack([m.xs for m in members])
        us = np.stack([m.us for m in members])
        batches.append((xs, us, float(dt)))
    return batches


def train(model: OdeNetModel, traces, cfg: TrainConfig, log_path=None):
    """Full-batch Adam on the summed per-trajectory adjoint gradients.

    Returns (model, history) where history rows are (iter, loss, grad_norm, lr).
    Deterministic for a fixed seed and backend.
    """
    if not traces:
        raise ValueError("training set is empty")
    traces = [Trace(t.xs[:: cfg.subsample], t.us[:: cfg.subsample],
                    t.dt * cfg.subsample) if cfg.subsample > 1 else t
              for t in traces]
    if cfg.batch_strategy == "windows":
        traces = split_windows(traces, cfg.window_s)
    elif cfg.batch_strategy != "whole":
        raise ValueError(f"unknown batch strategy {cfg.batch_strategy!r}")
    batches = _group_batches(traces)
    backend = get_backend()

    theta = model.params
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    lr = cfg.lr
    history = []
    for it in range(1, cfg.iterations + 1):
        total_loss = 0.0
        total_grad = np.zeros_like(theta)
        for xs_hat, us, dt in batches:
            eta = _eta_vector(xs_hat.shape[1], cfg.eta)
            lo, grads, _ = backend.loss_and_grad(
                model.param_views(theta), xs_hat, us, dt, eta
            )
            total_loss += float(lo.sum())
            total_grad += model.flatten_grads(grads).sum(axis=0)
        if not np.isfinite(total_loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        gnorm = float(np.linalg.norm(total_grad))
        history.append((it, total_loss, gnorm, lr))

        m = cfg.beta1 * m + (1.0 - cfg.beta1) * total_grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * total_grad**2
        mhat = m / (1.0 - cfg.beta1**it)
        vhat = v / (1.0 - cfg.beta2**it)
        theta = theta - lr * mhat / (np.sqrt(vhat) + cfg.eps)
        if cfg.lr_decay_every and it % cfg.lr_decay_every == 0:
            lr *= cfg.lr_decay

    model.params = theta
    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["iter", "loss", "grad_norm", "lr"])
            for row in history:
                wr.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
    return model, history
