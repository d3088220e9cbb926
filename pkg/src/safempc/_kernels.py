"""Numba-compiled hot path for the pendulum plant and the shooting solver.

Everything here is specialized to the double pendulum and a single-hidden-layer
tanh network so the closed-loop episode runner stays fast on one core. The
generic (pure numpy) implementations in `dynamics` and `mpc` remain the
reference; `tests/test_mpc.py` cross-checks the two paths.
"""

import numpy as np
from numba import njit

# pendulum parameter layout: (m1, m2, l1, l2, g)


@njit(cache=True)
def pend_deriv(x, u, p):
    m1, m2, l1, l2, g = p[0], p[1], p[2], p[3], p[4]
    s1 = np.sin(x[0])
    s2 = np.sin(x[1])
    s21 = np.sin(x[1] - x[0])
    c21 = np.cos(x[1] - x[0])
    # denominator (m1+m2)*l1 - m2*l1*c21^2 >= m1*l1 > 0
    d = (m1 + m2) * l1 - m2 * l1 * c21 * c21
    dd1 = (m2 * l1 * x[2] * x[2] * s21 * c21 + m2 * g * s2 * c21
           + m2 * l2 * x[3] * x[3] * s21 - (m1 + m2) * g * s1) / d + u
    dd2 = (-m2 * l2 * x[3] * x[3] * s21 * c21
           + (m1 + m2) * (g * s1 * c21 - l1 * x[2] * x[2] * s21 - g * s2)) / ((l2 / l1) * d)
    out = np.empty(4)
    out[0] = x[2]
    out[1] = x[3]
    out[2] = dd1
    out[3] = dd2
    return out


@njit(cache=True)
def pend_rk4(x, u, ts, p):
    k1 = pend_deriv(x, u, p)
    k2 = pend_deriv(x + 0.5 * ts * k1, u, p)
    k3 = pend_deriv(x + 0.5 * ts * k2, u, p)
    k4 = pend_deriv(x + ts * k3, u, p)
    return x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def pend_linearize(x, u, ts, p, h):
    """Central finite differences of the one-step map."""
    a = np.empty((4, 4))
    for j in range(4):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        col = (pend_rk4(xp, u, ts, p) - pend_rk4(xm, u, ts, p)) / (2.0 * h)
        for i in range(4):
            a[i, j] = col[i]
    b = (pend_rk4(x, u + h, ts, p) - pend_rk4(x, u - h, ts, p)) / (2.0 * h)
    return a, b


@njit(cache=True)
def nn_value(w1, b1, w2, b2, x):
    """Single-hidden-layer tanh net, scalar output."""
    y = b2
    for j in range(w1.shape[0]):
        a = b1[j]
        for i in range(x.shape[0]):
            a += w1[j, i] * x[i]
        y += w2[j] * np.tanh(a)
    return y


@njit(cache=True)
def nn_value_grad(w1, b1, w2, b2, x):
    y = b2
    g = np.zeros(x.shape[0])
    for j in range(w1.shape[0]):
        a = b1[j]
        for i in range(x.shape[0]):
            a += w1[j, i] * x[i]
        t = np.tanh(a)
        y += w2[j] * t
        c = w2[j] * (1.0 - t * t)
        for i in range(x.shape[0]):
            g[i] += c * w1[j, i]
    return y, g


@njit(cache=True)
def _all_finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True


@njit(cache=True)
def ocp_rollout(x0, useq, ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2, nn_ref):
    """Rollout of the prediction model; returns (J, states).

    J is +inf once any predicted state goes non-finite; states past that
    index are left untouched.
    """
    n = useq.shape[0]
    xs = np.empty((n + 1, 4))
    xs[0] = x0
    j = 0.0
    for i in range(n):
        x = xs[i]
        dx = x - x_d
        j += dx @ q @ dx + r * (useq[i] - u_d) * (useq[i] - u_d)
        j += nn_value(w1, b1, w2, b2, x) - nn_ref
        xs[i + 1] = pend_rk4(x, useq[i], ts, p)
        if not _all_finite(xs[i + 1]):
            return np.inf, xs
    dxn = xs[n] - x_d
    j += dxn @ tp @ dxn
    if not np.isfinite(j):
        return np.inf, xs
    return j, xs


@njit(cache=True)
def ocp_grad(xs, useq, ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2, h):
    """Adjoint gradient of the rollout cost w.r.t. the input sequence."""
    n = useq.shape[0]
    g = np.empty(n)
    lam = 2.0 * (tp @ (xs[n] - x_d))
    for i in range(n - 1, -1, -1):
        a, b = pend_linearize(xs[i], useq[i], ts, p, h)
        _, gx = nn_value_grad(w1, b1, w2, b2, xs[i])
        lx = 2.0 * (q @ (xs[i] - x_d)) + gx
        lu = 2.0 * r * (useq[i] - u_d)
        g[i] = lu + b @ lam
        lam = lx + a.T @ lam
    return g


@njit(cache=True)
def ocp_grad_hess(xs, useq, ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2, h):
    """Gradient and Gauss-Newton Hessian of the rollout cost w.r.t. useq.

    The Hessian keeps the quadratic stage/terminal curvature propagated
    through the state sensitivities and drops the network's second-order
    term, so it is positive semidefinite by construction.
    """
    n = useq.shape[0]
    amats = np.empty((n, 4, 4))
    bvecs = np.empty((n, 4))
    for i in range(n):
        a, b = pend_linearize(xs[i], useq[i], ts, p, h)
        amats[i] = a
        bvecs[i] = b
    # adjoint sweep for the gradient
    g = np.empty(n)
    lam = 2.0 * (tp @ (xs[n] - x_d))
    for i in range(n - 1, -1, -1):
        _, gx = nn_value_grad(w1, b1, w2, b2, xs[i])
        lx = 2.0 * (q @ (xs[i] - x_d)) + gx
        g[i] = 2.0 * r * (useq[i] - u_d) + bvecs[i] @ lam
        lam = lx + amats[i].T @ lam
    # forward sensitivity sweep for the Hessian: s = d x_i / d useq
    hess = np.zeros((n, n))
    s = np.zeros((4, n))
    for i in range(n):
        if i > 0:
            # x_i contributes 2 * s' Q s
            hess += 2.0 * (s.T @ (q @ s))
        hess[i, i] += 2.0 * r
        s = amats[i] @ s
        for k in range(4):
            s[k, i] += bvecs[i][k]
    hess += 2.0 * (s.T @ (tp @ s))
    return g, hess


@njit(cache=True)
def _solve_free_newton(hess, g, free, lam_reg):
    """Newton direction on the free set, steepest descent on the active set."""
    n = g.shape[0]
    nf = 0
    for i in range(n):
        if free[i]:
            nf += 1
    d = np.empty(n)
    for i in range(n):
        d[i] = -g[i]
    if nf == 0:
        return d
    hf = np.empty((nf, nf))
    gf = np.empty(nf)
    idx = np.empty(nf, dtype=np.int64)
    c = 0
    for i in range(n):
        if free[i]:
            idx[c] = i
            c += 1
    for a in range(nf):
        gf[a] = g[idx[a]]
        for b in range(nf):
            hf[a, b] = hess[idx[a], idx[b]]
        hf[a, a] += lam_reg
    df = np.linalg.solve(hf, -gf)
    for a in range(nf):
        d[idx[a]] = df[a]
    return d


@njit(cache=True)
def _clip_seq(u, lo, hi):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        v = u[i]
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        out[i] = v
    return out


@njit(cache=True)
def ocp_solve(x0, u0, ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2,
              u_min, u_max, max_iters, tol, h):
    """Projected Gauss-Newton over the input sequence.

    Two-metric projection: Newton direction on inputs strictly inside the
    box, steepest descent on actively constrained ones, Armijo
    backtracking on the projected trial points, Levenberg regularization
    on line-search failure. Convergence is declared on the unit-step
    gradient-projection residual.

    Returns (useq, states, J, iterations, converged, exploded).
    """
    nn_ref = nn_value(w1, b1, w2, b2, x_d)
    n = u0.shape[0]
    u = _clip_seq(u0, u_min, u_max)
    j, xs = ocp_rollout(x0, u, ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2, nn_ref)
    if not np.isfinite(j):
        return u, xs, j, 0, False, True
    converged = False
    it = 0
    lam_reg = 1e-8
    while it < max_iters:
        g, hess = ocp_grad_hess(xs, u, ts, p, q, r, x_d, u_d, tp,
                                w1, b1, w2, b2, h)
        pg = u - _clip_seq(u - g, u_min, u_max)
        if np.sqrt(pg @ pg) <= tol:
            converged = True
            break
        it += 1
        eps = 1e-12 * (u_max - u_min) + 1e-300
        free = np.empty(n, dtype=np.bool_)
        for i in range(n):
            at_lo = u[i] <= u_min + eps and g[i] > 0.0
            at_hi = u[i] >= u_max - eps and g[i] < 0.0
            free[i] = not (at_lo or at_hi)
        improved = False
        for _ in range(8):
            d = _solve_free_newton(hess, g, free, lam_reg)
            alpha = 1.0
            for _ in range(40):
                cand = _clip_seq(u + alpha * d, u_min, u_max)
                jc, xc = ocp_rollout(x0, cand, ts, p, q, r, x_d, u_d, tp,
                                     w1, b1, w2, b2, nn_ref)
                step = cand - u
                if jc <= j + 1e-4 * (g @ step) and jc < j:
                    improved = True
                    break
                alpha *= 0.5
            if improved:
                lam_reg = max(1e-8, lam_reg * 0.1)
                break
            lam_reg *= 100.0
        if not improved:
            # stalled at machine precision; return best iterate
            break
        u = cand
        j = jc
        xs = xc
    return u, xs, j, it, converged, False
