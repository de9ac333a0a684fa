"""Physics-data composition: unified field Xdot = F(X, W).

The composed state is X = [s_in; x_ex; i0_in] where x_ex is whatever the
external-subsystem model carries ([s_ex; i_ex] for the learned network, the
full external state set for the exact-physics oracle).  The model's current
derivatives close the KCL-derivative voltage solve of the internal physics,
and the internal physics feeds the model through u = [i_in; s_in; w_in; w_ex].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .odenet.model import OdeNetModel
from .plant.components import ConfigError
from .plant.simulate import BoundarySpec, boundary_spec
from .plant.system import OdePlant, _expand_dq, _fd_jacobian


@dataclass
class OperatingPoint:
    X_star: np.ndarray
    W_star: np.ndarray
    F_star: np.ndarray

    def __post_init__(self):
        for name in ("X_star", "W_star", "F_star"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"operating point field {name} is not finite")
            setattr(self, name, arr)


class OdeNetExSys:
    """Learned external subsystem: thin adapter over the network model."""

    def __init__(self, model: OdeNetModel):
        self.model = model
        self.state_labels = list(model.x_labels)
        self.input_labels = list(model.u_labels)

    def eval(self, x, u):
        return self.model.forward(x, u)

    def jac(self, x, u):
        return self.model.jacobians(x, u)


class PhysicsExSys:
    """Exact-physics oracle for the external subsystem.

    Its state is every external-owned plant state (shared control signals,
    hidden unit states, boundary currents); u reconstructs the remaining
    plant state, so evaluation is exact monolithic physics restricted to the
    external rows.
    """

    def __init__(self, plant: OdePlant, spec: BoundarySpec | None = None):
        self.plant = plant
        spec = spec or boundary_spec(plant)
        self.spec = spec
        sys = plant.sys
        state_idx = {lab: k for k, lab in enumerate(plant.state_labels)}

        hidden = []
        for j, der in enumerate(sys.ders):
            if not sys.is_external_bus(der.bus):
                continue
            for var in der.state_vars(is_anchor=(j == 0)):
                hidden.append(f"{der.id}.{var}")
        sex = [lab for lab in spec.x_labels if not lab.split(".")[-1] in ("id", "iq")]
        iex = [lab for lab in spec.x_labels if lab.split(".")[-1] in ("id", "iq")]
        self.state_labels = sex + hidden + iex
        self.input_labels = list(spec.u_labels)

        self._x_plant_cols = np.array([state_idx[l] for l in self.state_labels])
        # u -> plant-state columns (currents in u cover i0_in and i1; only
        # the reduced columns are scattered back).
        u_state_cols = []
        u_take = []
        for pos, lab in enumerate(spec.u_labels):
            if lab in state_idx:
                u_state_cols.append(state_idx[lab])
                u_take.append(pos)
        self._u_state_cols = np.array(u_state_cols, dtype=int)
        self._u_take = np.array(u_take, dtype=int)
        n_w = plant.n_inputs
        self._u_w_slice = slice(len(spec.u_labels) - n_w, len(spec.u_labels))
        # w columns in u are ordered [w_in; w_ex]; map back to plant order.
        worder = list(spec.w_in_cols) + list(spec.w_ex_cols)
        self._w_unperm = np.argsort(worder)

    def _reconstruct(self, x, u):
        B = x.shape[:-1]
        Xp = np.zeros(B + (self.plant.n_states,))
        Xp[..., self._x_plant_cols] = x
        Xp[..., self._u_state_cols] = u[..., self._u_take]
        W = u[..., self._u_w_slice][..., self._w_unperm]
        return Xp, W

    def eval(self, x, u):
        Xp, W = self._reconstruct(x, u)
        return self.plant.rhs(Xp, W)[..., self._x_plant_cols]

    def jac(self, x, u):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        out_x = np.empty(x.shape[:-1] + (x.shape[-1], x.shape[-1]))
        out_u = np.empty(x.shape[:-1] + (x.shape[-1], u.shape[-1]))
        for b in range(x.shape[0]):
            xb, ub = x[b], u[b]
            out_x[b] = _fd_jacobian(
                lambda xv: self.eval(xv, np.broadcast_to(ub, xv.shape[:-1] + ub.shape)), xb
            )
            out_u[b] = _fd_jacobian(
                lambda uv: self.eval(np.broadcast_to(xb, uv.shape[:-1] + xb.shape), uv), ub
            )
        return out_x, out_u


class PdiSystem:
    """Composed system with state layout [s_in; x_ex; i0_in]."""

    def __init__(self, plant: OdePlant, exsys, spec: BoundarySpec | None = None):
        self.plant = plant
        self.exsys = exsys
        sys = plant.sys
        dae = plant.dae
        spec = spec or boundary_spec(plant)
        self.spec = spec

        missing = [l for l in spec.x_labels if l not in exsys.state_labels]
        if missing:
            raise ConfigError(f"external model lacks boundary states {missing}")
        if list(exsys.input_labels) != list(spec.u_labels):
            raise ConfigError("external model inputs do not match the boundary wiring")

        state_idx = {lab: k for k, lab in enumerate(plant.state_labels)}
        secondary = sys.control_mode == "secondary"

        # InSys-owned states: internal DER vars (minus shared control signals)
        # then the internal members of i0.
        self.s_in_labels = []
        self._sin_plant_scols = []  # column in the plant s-block
        for j, der in enumerate(sys.ders):
            if sys.is_external_bus(der.bus):
                continue
            for var in der.state_vars(is_anchor=(j == 0)):
                if secondary and var in ("zf", "zv"):
                    continue
                self.s_in_labels.append(f"{der.id}.{var}")
                self._sin_plant_scols.append(dae.s_col[(j, var)])
        self._sin_plant_scols = np.array(self._sin_plant_scols, dtype=int)

        self.ex_labels = list(exsys.state_labels)
        n_ex = len(self.ex_labels)
        ex_idx = {lab: k for k, lab in enumerate(self.ex_labels)}

        # s_ex entries of the model state that feed internal DER dynamics.
        self._sex_in_model = []
        self._sex_plant_scols = []
        for lab in spec.x_labels:
            var = lab.split(".")[-1]
            if var in ("id", "iq"):
                continue
            der_id = lab.split(".")[0]
            j = dae.der_index[der_id]
            self._sex_in_model.append(ex_idx[lab])
            self._sex_plant_scols.append(dae.s_col[(j, var)])
        self._sex_in_model = np.array(self._sex_in_model, dtype=int)
        self._sex_plant_scols = np.array(self._sex_plant_scols, dtype=int)

        # hidden external states the oracle model may carry
        self._hidden_in_model = []
        self._hidden_plant_scols = []
        for k, lab in enumerate(self.ex_labels):
            if lab in spec.x_labels:
                continue
            var = lab.split(".")[-1]
            if var in ("id", "iq"):
                raise ConfigError(f"hidden external current {lab} is unsupported")
            j = dae.der_index[lab.split(".")[0]]
            self._hidden_in_model.append(k)
            self._hidden_plant_scols.append(dae.s_col[(j, var)])
        self._hidden_in_model = np.array(self._hidden_in_model, dtype=int)
        self._hidden_plant_scols = np.array(self._hidden_plant_scols, dtype=int)

        # current bookkeeping: plant i0 order, internal vs external
        in_i0, ex_i0 = [], []
        for pos, k in enumerate(plant.i0_pairs):
            (ex_i0 if dae.cur_external[k] else in_i0).append((pos, k))
        self.i0_in_labels = [f"{dae.cur_ids[k]}.{ax}" for (_, k) in in_i0
                             for ax in ("id", "iq")]
        self._iex_in_model = np.array(
            [ex_idx[f"{dae.cur_ids[k]}.{ax}"] for (_, k) in ex_i0 for ax in ("id", "iq")],
            dtype=int,
        )
        # scatter [i0_in | i_ex] into the plant's i0 vector (dq entries)
        n_i0 = len(plant.i0_pairs)
        self._i0_scatter_in = np.array(
            [2 * pos + ax for (pos, _) in in_i0 for ax in (0, 1)], dtype=int
        )
        self._i0_scatter_ex = np.array(
            [2 * pos + ax for (pos, _) in ex_i0 for ax in (0, 1)], dtype=int
        )
        self._n_i0_dq = 2 * n_i0

        self.state_labels = self.s_in_labels + self.ex_labels + self.i0_in_labels
        self.n_states = len(self.state_labels)
        self.n_w = plant.n_inputs
        self.input_labels = list(plant.input_labels)

        ns_in = len(self.s_in_labels)
        self._sl_sin = slice(0, ns_in)
        self._sl_ex = slice(ns_in, ns_in + n_ex)
        self._sl_i0 = slice(ns_in + n_ex, self.n_states)

        # composed-network matrices over internal currents
        in_entries = np.array([2 * k + ax for k in range(dae.n_cur)
                               if not dae.cur_external[k] for ax in (0, 1)], dtype=int)
        ex_entries = np.array([2 * k + ax for k in range(dae.n_cur)
                               if dae.cur_external[k] for ax in (0, 1)], dtype=int)
        self._in_entries = in_entries
        n_pairs = dae.n_pairs
        internal_mask = ~dae.cur_external
        buses_in = np.where(np.abs(n_pairs[:, internal_mask]).sum(axis=1) > 0)[0]
        if np.any(np.abs(n_pairs[:, dae.cur_external][np.setdiff1d(
                np.arange(dae.n_bus), buses_in)]).sum() > 0):
            raise ConfigError("external currents touch buses with no internal "
                              "connection; widen the internal subsystem")
        N_in = n_pairs[np.ix_(buses_in, np.where(internal_mask)[0])]
        N_ex = n_pairs[np.ix_(buses_in, np.where(dae.cur_external)[0])]
        m_pairs = -np.diag(dae.c) @ n_pairs.T
        M_in = m_pairs[np.ix_(np.where(internal_mask)[0], buses_in)]
        nm = N_in @ M_in
        solve = np.linalg.solve
        self._Vf = _expand_dq(-solve(nm, N_in))   # v = Vf fhat_in + Vn N_f
        self._Vn = _expand_dq(-solve(nm, N_ex))
        self._M2_in = _expand_dq(M_in)

        # positions of the composed i0_in currents within the internal list
        internal_ids = [k for k in range(dae.n_cur) if not dae.cur_external[k]]
        pos_of = {k: p for p, k in enumerate(internal_ids)}
        self._i0_rows_in_internal = np.array(
            [2 * pos_of[k] + ax for (_, k) in in_i0 for ax in (0, 1)], dtype=int
        )

        # model-output injection: F += B_N @ N_out
        C_f = (self._M2_in @ self._Vn)[self._i0_rows_in_internal]
        bn = np.zeros((self.n_states, n_ex))
        bn[self._sl_ex, :] = np.eye(n_ex)
        for rr, crow in zip(range(self._sl_i0.start, self._sl_i0.stop), C_f):
            bn[rr, self._iex_in_model] = crow
        self._B_N = bn

        # u = U_X X + U_W W (linear wiring)
        n_u = len(spec.u_labels)
        U_X = np.zeros((n_u, self.n_states))
        U_W = np.zeros((n_u, self.n_w))
        emb_rows = plant.EMB2[spec.u_cur_entries, :]  # i_in from plant i0
        scatter = np.zeros((self._n_i0_dq, self.n_states))
        for row, col in zip(self._i0_scatter_in,
                            range(self._sl_i0.start, self._sl_i0.stop)):
            scatter[row, col] = 1.0
        for row, exk in zip(self._i0_scatter_ex, self._iex_in_model):
            scatter[row, self._sl_ex.start + exk] = 1.0
        n_cur_dq = emb_rows.shape[0]
        U_X[:n_cur_dq, :] = emb_rows @ scatter
        sin_state_idx = {lab: i for i, lab in enumerate(self.state_labels)}
        row = n_cur_dq
        for lab in spec.u_labels[n_cur_dq:]:
            if lab.startswith("w."):
                break
            U_X[row, sin_state_idx[lab]] = 1.0
            row += 1
        for j in list(spec.w_in_cols) + list(spec.w_ex_cols):
            U_W[row, j] = 1.0
            row += 1
        assert row == n_u
        self._U_X, self._U_W = U_X, U_W
        self._scatter_i0 = scatter

    # -- evaluation ----------------------------------------------------------

    def _plant_views(self, X):
        """Full-plant svals and currents implied by the composed state."""
        B = X.shape[:-1]
        svals = np.zeros(B + (self.plant.dae.n_s,))
        svals[..., self._sin_plant_scols] = X[..., self._sl_sin]
        x_ex = X[..., self._sl_ex]
        if self._sex_in_model.size:
            svals[..., self._sex_plant_scols] = x_ex[..., self._sex_in_model]
        if self._hidden_in_model.size:
            svals[..., self._hidden_plant_scols] = x_ex[..., self._hidden_in_model]
        i0_plant = np.zeros(B + (self._n_i0_dq,))
        i0_plant[..., self._i0_scatter_in] = X[..., self._sl_i0]
        i0_plant[..., self._i0_scatter_ex] = x_ex[..., self._iex_in_model]
        i_full = i0_plant @ self.plant.EMB2.T
        return svals, x_ex, i_full

    def build_u(self, X, W):
        return X @ self._U_X.T + W @ self._U_W.T

    def eval_f(self, X, W, n_out_override=None):
        """Composed vector field; pure function of (X, W), batched."""
        X = np.asarray(X, dtype=float)
        W = np.asarray(W, dtype=float)
        svals, x_ex, i_full = self._plant_views(X)
        if n_out_override is None:
            u = self.build_u(X, W)
            n_out = self.exsys.eval(x_ex, u)
        else:
            n_out = np.broadcast_to(n_out_override, x_ex.shape).copy()
        s_dot_full, fhat_full = self.plant.dae.evaluate(svals, i_full, W)
        fhat_in = fhat_full[..., self._in_entries]
        n_f = n_out[..., self._iex_in_model]
        v = fhat_in @ self._Vf.T + n_f @ self._Vn.T
        i_dot_in = fhat_in + v @ self._M2_in.T
        out = np.concatenate(
            [
                s_dot_full[..., self._sin_plant_scols],
                n_out,
                i_dot_in[..., self._i0_rows_in_internal],
            ],
            axis=-1,
        )
        bad = ~np.isfinite(out)
        if np.any(bad):
            idx = int(np.argwhere(bad)[0][-1])
            raise FloatingPointError(f"non-finite composed derivative at state "
                                     f"index {idx} ({self.state_labels[idx]})")
        return out

    def operating_point(self, X_star, W_star) -> OperatingPoint:
        F = self.eval_f(np.asarray(X_star)[None, :], np.asarray(W_star)[None, :])[0]
        return OperatingPoint(np.asarray(X_star, float), np.asarray(W_star, float), F)

    def jacobians(self, op: OperatingPoint):
        """J = dF/dX, J_w = dF/dW: finite differences through the physics,
        analytic network Jacobians chained through the constant wiring."""
        X, W = op.X_star, op.W_star
        u = self.build_u(X[None, :], W[None, :])
        x_ex = X[self._sl_ex]
        n_out = self.exsys.eval(x_ex[None, :], u)[0]

        J_phys = _fd_jacobian(
            lambda Xv: self.eval_f(
                Xv, np.broadcast_to(W, Xv.shape[:-1] + W.shape), n_out_override=n_out
            ),
            X,
        )
        Jw_phys = _fd_jacobian(
            lambda Wv: self.eval_f(
                np.broadcast_to(X, Wv.shape[:-1] + X.shape), Wv, n_out_override=n_out
            ),
            W,
        )
        Jn_x, Jn_u = self.exsys.jac(x_ex[None, :], u)
        Jn_x, Jn_u = Jn_x[0], Jn_u[0]
        P_ex = np.zeros((len(self.ex_labels), self.n_states))
        P_ex[:, self._sl_ex] = np.eye(len(self.ex_labels))
        chain_x = Jn_x @ P_ex + Jn_u @ self._U_X
        chain_w = Jn_u @ self._U_W
        return J_phys + self._B_N @ chain_x, Jw_phys + self._B_N @ chain_w


def compose(plant: OdePlant, exsys, spec: BoundarySpec | None = None) -> PdiSystem:
    """Wire the internal physics to an external-subsystem model."""
    return PdiSystem(plant, exsys, spec)


class LinearSystem:
    """Xdot = A X + B W; the analytic test harness for the reach engine."""

    def __init__(self, A, B, labels=None):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.n_states = self.A.shape[0]
        self.n_w = self.B.shape[1]
        self.state_labels = labels or [f"x{k}" for k in range(self.n_states)]

    def eval_f(self, X, W):
        return X @ self.A.T + W @ self.B.T

    def operating_point(self, X_star, W_star) -> OperatingPoint:
        X_star = np.asarray(X_star, float)
        W_star = np.asarray(W_star, float)
        return OperatingPoint(X_star, W_star, self.A @ X_star + self.B @ W_star)

    def jacobians(self, op: OperatingPoint):
        return self.A, self.B
