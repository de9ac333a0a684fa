# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rollout/adjoint kernels for the continuous-depth network.

Semantics mirror the numpy reference backend: implicit-trapezoidal steps
solved by Newton, exact discrete-adjoint gradients.  Single-trajectory
loops in C with the batch loop outside; no BLAS dependency.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt, tanh

cnp.import_array()


cdef struct NetDims:
    int n_x
    int n_u
    int w
    int k_steps
    double delta


cdef inline void _net_forward(NetDims* d,
                              double[:, ::1] W_in, double[::1] b_in,
                              double[:, ::1] W_h, double[::1] b_h,
                              double[:, ::1] W_out, double[::1] b_out,
                              double[::1] x_shift, double[::1] x_scale,
                              double[::1] u_shift, double[::1] u_scale,
                              double* x, double* u,
                              double* xi, double* zs, double* ts,
                              double* out) noexcept nogil:
    """Forward pass storing depth internals (zs: (k_steps+1) x w, ts: k_steps x w)."""
    cdef int i, j, k, ni = d.n_x + d.n_u, w = d.w
    cdef double acc
    for i in range(d.n_x):
        xi[i] = (x[i] - x_shift[i]) / x_scale[i]
    for i in range(d.n_u):
        xi[d.n_x + i] = (u[i] - u_shift[i]) / u_scale[i]
    for j in range(w):
        acc = b_in[j]
        for i in range(ni):
            acc += W_in[j, i] * xi[i]
        zs[j] = acc
    for k in range(d.k_steps):
        for j in range(w):
            acc = b_h[j]
            for i in range(w):
                acc += W_h[j, i] * zs[k * w + i]
            ts[k * w + j] = tanh(acc)
        for j in range(w):
            zs[(k + 1) * w + j] = zs[k * w + j] + d.delta * ts[k * w + j]
    for j in range(d.n_x):
        acc = b_out[j]
        for i in range(w):
            acc += W_out[j, i] * zs[d.k_steps * w + i]
        out[j] = acc * x_scale[j]


cdef inline void _net_jac_x(NetDims* d,
                            double[:, ::1] W_in,
                            double[:, ::1] W_h,
                            double[:, ::1] W_out,
                            double[::1] x_scale,
                            double* ts,
                            double* T, double* Tnew,
                            double* jac) noexcept nogil:
    """dN/dx from stored tanh values; T, Tnew are w*n_x scratch."""
    cdef int i, j, k, m, w = d.w, nx = d.n_x
    cdef double acc, dt_
    for j in range(w):
        for m in range(nx):
            T[j * nx + m] = W_in[j, m]
    for k in range(d.k_steps):
        for j in range(w):
            dt_ = 1.0 - ts[k * w + j] * ts[k * w + j]
            for m in range(nx):
                acc = 0.0
                for i in range(w):
                    acc += W_h[j, i] * T[i * nx + m]
                Tnew[j * nx + m] = T[j * nx + m] + d.delta * dt_ * acc
        for j in range(w * nx):
            T[j] = Tnew[j]
    for j in range(nx):
        for m in range(nx):
            acc = 0.0
            for i in range(w):
                acc += W_out[j, i] * T[i * nx + m]
            jac[j * nx + m] = acc * x_scale[j] / x_scale[m]


cdef inline void _net_vjp_theta(NetDims* d,
                                double[:, ::1] W_h,
                                double[:, ::1] W_out,
                                double[::1] x_scale,
                                double* xi, double* zs, double* ts,
                                double* mu,
                                double* g_y, double* g_z, double* s_buf,
                                double[:, ::1] gW_in, double[::1] gb_in,
                                double[:, ::1] gW_h, double[::1] gb_h,
                                double[:, ::1] gW_out, double[::1] gb_out) noexcept nogil:
    """Accumulate mu^T dN/dtheta using stored forward internals."""
    cdef int i, j, k, w = d.w, nx = d.n_x, ni = d.n_x + d.n_u
    cdef double acc, sj
    for j in range(nx):
        g_y[j] = mu[j] * x_scale[j]
        gb_out[j] += g_y[j]
        for i in range(w):
            gW_out[j, i] += g_y[j] * zs[d.k_steps * w + i]
    for i in range(w):
        acc = 0.0
        for j in range(nx):
            acc += g_y[j] * W_out[j, i]
        g_z[i] = acc
    for k in range(d.k_steps - 1, -1, -1):
        for j in range(w):
            s_buf[j] = d.delta * g_z[j] * (1.0 - ts[k * w + j] * ts[k * w + j])
            gb_h[j] += s_buf[j]
        for j in range(w):
            sj = s_buf[j]
            for i in range(w):
                gW_h[j, i] += sj * zs[k * w + i]
        for i in range(w):
            acc = 0.0
            for j in range(w):
                acc += s_buf[j] * W_h[j, i]
            g_z[i] = g_z[i] + acc
    for j in range(w):
        gb_in[j] += g_z[j]
        for i in range(ni):
            gW_in[j, i] += g_z[j] * xi[i]


cdef inline int _lu_solve(double* A, double* b, int* piv, int n) noexcept nogil:
    """In-place partial-pivot LU solve of A x = b (A row-major, overwritten)."""
    cdef int i, j, k, p
    cdef double amax, tmp
    for k in range(n):
        p = k
        amax = fabs(A[k * n + k])
        for i in range(k + 1, n):
            if fabs(A[i * n + k]) > amax:
                amax = fabs(A[i * n + k])
                p = i
        if amax == 0.0:
            return -1
        piv[k] = p
        if p != k:
            for j in range(n):
                tmp = A[k * n + j]
                A[k * n + j] = A[p * n + j]
                A[p * n + j] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        for i in range(k + 1, n):
            A[i * n + k] /= A[k * n + k]
            for j in range(k + 1, n):
                A[i * n + j] -= A[i * n + k] * A[k * n + j]
            b[i] -= A[i * n + k] * b[k]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            b[i] -= A[i * n + j] * b[j]
        b[i] /= A[i * n + i]
    return 0


cdef inline int _lu_solve_T(double* A, double* b, int n, double* scratch,
                            int* piv) noexcept nogil:
    """Solve A^T x = b by transposing into scratch then LU-solving."""
    cdef int i, j
    for i in range(n):
        for j in range(n):
            scratch[i * n + j] = A[j * n + i]
    return _lu_solve(scratch, b, piv, n)


def rollout_batch(dict p, double[:, ::1] x1, double[:, :, ::1] U, double dt,
                  double newton_tol=1e-13, int newton_maxit=30):
    """Implicit-trapezoidal rollout, batched; returns xs (B, T, n_x)."""
    cdef double[:, ::1] W_in = p["W_in"]
    cdef double[::1] b_in = p["b_in"]
    cdef double[:, ::1] W_h = p["W_h"]
    cdef double[::1] b_h = p["b_h"]
    cdef double[:, ::1] W_out = p["W_out"]
    cdef double[::1] b_out = p["b_out"]
    cdef double[::1] x_shift = p["x_shift"]
    cdef double[::1] x_scale = p["x_scale"]
    cdef double[::1] u_shift = p["u_shift"]
    cdef double[::1] u_scale = p["u_scale"]
    cdef NetDims d
    d.n_x = W_out.shape[0]
    d.n_u = W_in.shape[1] - d.n_x
    d.w = W_h.shape[0]
    d.k_steps = int(p["k_steps"])
    d.delta = float(p["depth_len"]) / d.k_steps

    cdef int B = U.shape[0], T = U.shape[1], nx = d.n_x, w = d.w
    xs_arr = np.empty((B, T, nx))
    cdef double[:, :, ::1] xs = xs_arr
    scratch_arr = np.empty(2 * (d.k_steps + 1) * w + 2 * d.k_steps * w
                           + 4 * (d.n_x + d.n_u) + 8 * w + 6 * nx
                           + 3 * nx * nx + 2 * w * nx + 16)
    cdef double[::1] S = scratch_arr
    piv_arr = np.empty(nx, dtype=np.intc)
    cdef int[::1] piv = piv_arr

    cdef double* zs = &S[0]
    cdef double* ts = zs + (d.k_steps + 1) * w
    cdef double* xi = ts + d.k_steps * w
    cdef double* nl = xi + (d.n_x + d.n_u)
    cdef double* nr = nl + nx
    cdef double* xnew = nr + nx
    cdef double* resid = xnew + nx
    cdef double* A = resid + nx
    cdef double* M = A + nx * nx
    cdef double* Tbuf = M + nx * nx
    cdef double* Tnew = Tbuf + w * nx
    cdef double* jac = Tnew + w * nx

    cdef int b, i, k, it, diverged = -1
    cdef double scale, rmax, half = 0.5 * dt
    cdef int have_M
    with nogil:
        for b in range(B):
            for i in range(nx):
                xs[b, 0, i] = x1[b, i]
            for k in range(T - 1):
                _net_forward(&d, W_in, b_in, W_h, b_h, W_out, b_out,
                             x_shift, x_scale, u_shift, u_scale,
                             &xs[b, k, 0], &U[b, k, 0], xi, zs, ts, nl)
                scale = 1.0
                for i in range(nx):
                    if fabs(xs[b, k, i]) > scale - 1.0:
                        scale = 1.0 + fabs(xs[b, k, i])
                for i in range(nx):
                    xnew[i] = xs[b, k, i] + dt * nl[i]
                have_M = 0
                for it in range(newton_maxit):
                    _net_forward(&d, W_in, b_in, W_h, b_h, W_out, b_out,
                                 x_shift, x_scale, u_shift, u_scale,
                                 xnew, &U[b, k, 0], xi, zs, ts, nr)
                    rmax = 0.0
                    for i in range(nx):
                        resid[i] = xnew[i] - xs[b, k, i] - half * (nl[i] + nr[i])
                        if fabs(resid[i]) > rmax:
                            rmax = fabs(resid[i])
                    if rmax <= newton_tol * scale:
                        break
                    if have_M == 0 or it >= 10:
                        _net_jac_x(&d, W_in, W_h, W_out, x_scale, ts,
                                   Tbuf, Tnew, jac)
                        have_M = 1
                    for i in range(nx * nx):
                        M[i] = -half * jac[i]
                    for i in range(nx):
                        M[i * nx + i] += 1.0
                    if _lu_solve(M, resid, &piv[0], nx) != 0:
                        diverged = k + 1
                        break
                    for i in range(nx):
                        xnew[i] -= resid[i]
                if diverged >= 0:
                    break
                for i in range(nx):
                    if not (xnew[i] == xnew[i]) or fabs(xnew[i]) > 1e12:
                        diverged = k + 1
                for i in range(nx):
                    xs[b, k + 1, i] = xnew[i]
                if diverged >= 0:
                    break
            if diverged >= 0:
                break
    if diverged >= 0:
        raise FloatingPointError(f"rollout diverged at step {diverged}")
    return xs_arr


def loss_and_grad_batch(dict p, double[:, :, ::1] xs_hat, double[:, :, ::1] U,
                        double dt, double[::1] eta,
                        double newton_tol=1e-13, int newton_maxit=30):
    """Fused rollout + unsquared-norm loss + discrete-adjoint gradients."""
    cdef double[:, ::1] W_in = p["W_in"]
    cdef double[::1] b_in = p["b_in"]
    cdef double[:, ::1] W_h = p["W_h"]
    cdef double[::1] b_h = p["b_h"]
    cdef double[:, ::1] W_out = p["W_out"]
    cdef double[::1] b_out = p["b_out"]
    cdef double[::1] x_shift = p["x_shift"]
    cdef double[::1] x_scale = p["x_scale"]
    cdef double[::1] u_shift = p["u_shift"]
    cdef double[::1] u_scale = p["u_scale"]
    cdef NetDims d
    d.n_x = W_out.shape[0]
    d.n_u = W_in.shape[1] - d.n_x
    d.w = W_h.shape[0]
    d.k_steps = int(p["k_steps"])
    d.delta = float(p["depth_len"]) / d.k_steps

    cdef int B = xs_hat.shape[0], T = xs_hat.shape[1], nx = d.n_x, w = d.w
    cdef int ni = d.n_x + d.n_u

    xs_arr = rollout_batch(p, np.ascontiguousarray(xs_hat[:, 0, :]),
                           np.asarray(U), dt, newton_tol, newton_maxit)
    cdef double[:, :, ::1] xs = xs_arr

    loss_arr = np.zeros(B)
    cdef double[::1] loss = loss_arr
    gW_in_a = np.zeros((B, w, ni)); gb_in_a = np.zeros((B, w))
    gW_h_a = np.zeros((B, w, w)); gb_h_a = np.zeros((B, w))
    gW_out_a = np.zeros((B, nx, w)); gb_out_a = np.zeros((B, nx))
    cdef double[:, :, ::1] gW_in = gW_in_a
    cdef double[:, ::1] gb_in = gb_in_a
    cdef double[:, :, ::1] gW_h = gW_h_a
    cdef double[:, ::1] gb_h = gb_h_a
    cdef double[:, :, ::1] gW_out = gW_out_a
    cdef double[:, ::1] gb_out = gb_out_a

    scratch_arr = np.empty((d.k_steps + 1) * w + d.k_steps * w + ni
                           + 10 * nx + 4 * nx * nx + 2 * w * nx + 3 * w + 16)
    cdef double[::1] S = scratch_arr
    piv_arr = np.empty(nx, dtype=np.intc)
    cdef int[::1] piv = piv_arr

    cdef double* zs = &S[0]
    cdef double* ts = zs + (d.k_steps + 1) * w
    cdef double* xi = ts + d.k_steps * w
    cdef double* lam = xi + ni
    cdef double* mu = lam + nx
    cdef double* jump = mu + nx
    cdef double* resid = jump + nx
    cdef double* nout = resid + nx
    cdef double* muh = nout + nx
    cdef double* A_r = muh + nx
    cdef double* A_l = A_r + nx * nx
    cdef double* M = A_l + nx * nx
    cdef double* Mt = M + nx * nx
    cdef double* Tbuf = Mt + nx * nx
    cdef double* Tnew = Tbuf + w * nx
    cdef double* g_y = Tnew + w * nx
    cdef double* g_z = g_y + nx  # needs w; placed in remaining space
    cdef double* s_buf = g_z + w

    cdef int b, i, j, k
    cdef double half = 0.5 * dt, nrm, acc
    with nogil:
        for b in range(B):
            # terminal costate = loss jump at the last sample
            nrm = 0.0
            for i in range(nx):
                resid[i] = xs[b, T - 1, i] - xs_hat[b, T - 1, i]
                nrm += resid[i] * resid[i]
            nrm = sqrt(nrm)
            loss[b] += 0.5 * eta[T - 1] * nrm
            for i in range(nx):
                lam[i] = 0.0 if nrm == 0.0 else 0.5 * eta[T - 1] * resid[i] / nrm
            for k in range(T - 2, -1, -1):
                # A_r at (x_{k+1}, u_k); mu = (I - h A_r)^-T lam
                _net_forward(&d, W_in, b_in, W_h, b_h, W_out, b_out,
                             x_shift, x_scale, u_shift, u_scale,
                             &xs[b, k + 1, 0], &U[b, k, 0], xi, zs, ts, nout)
                _net_jac_x(&d, W_in, W_h, W_out, x_scale, ts, Tbuf, Tnew, A_r)
                for i in range(nx * nx):
                    M[i] = -half * A_r[i]
                for i in range(nx):
                    M[i * nx + i] += 1.0
                for i in range(nx):
                    mu[i] = lam[i]
                _lu_solve_T(M, mu, nx, Mt, &piv[0])
                for i in range(nx):
                    muh[i] = half * mu[i]
                # theta-VJP at the right endpoint (internals already stored)
                _net_vjp_theta(&d, W_h, W_out, x_scale, xi, zs, ts, muh,
                               g_y, g_z, s_buf,
                               gW_in[b], gb_in[b], gW_h[b], gb_h[b],
                               gW_out[b], gb_out[b])
                # left endpoint: forward + VJP + A_l
                _net_forward(&d, W_in, b_in, W_h, b_h, W_out, b_out,
                             x_shift, x_scale, u_shift, u_scale,
                             &xs[b, k, 0], &U[b, k, 0], xi, zs, ts, nout)
                _net_vjp_theta(&d, W_h, W_out, x_scale, xi, zs, ts, muh,
                               g_y, g_z, s_buf,
                               gW_in[b], gb_in[b], gW_h[b], gb_h[b],
                               gW_out[b], gb_out[b])
                _net_jac_x(&d, W_in, W_h, W_out, x_scale, ts, Tbuf, Tnew, A_l)
                for i in range(nx):
                    acc = mu[i]
                    for j in range(nx):
                        acc += half * A_l[j * nx + i] * mu[j]
                    lam[i] = acc
                if k > 0:
                    nrm = 0.0
                    for i in range(nx):
                        resid[i] = xs[b, k, i] - xs_hat[b, k, i]
                        nrm += resid[i] * resid[i]
                    nrm = sqrt(nrm)
                    loss[b] += 0.5 * eta[k] * nrm
                    if nrm > 0.0:
                        for i in range(nx):
                            lam[i] += 0.5 * eta[k] * resid[i] / nrm
    grads = {"W_in": gW_in_a, "b_in": gb_in_a, "W_h": gW_h_a,
             "b_h": gb_h_a, "W_out": gW_out_a, "b_out": gb_out_a}
    return loss_arr, grads, xs_arr
