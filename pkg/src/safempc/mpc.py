"""Finite-horizon OCP with input box constraints, solved by direct single
shooting and a projected Gauss-Newton method (Newton steps on the free
inputs, steepest descent on the actively constrained ones), plus the
receding-horizon policy.

Gradients of the shooting cost combine analytic stage-cost gradients with
finite-difference plant Jacobians (adjoint sweep). Pendulum plants with a
single-hidden-layer cost network dispatch to the compiled kernel in
`_kernels`; everything else runs the generic numpy path below.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .dynamics import DiscretePlant, NumericsError, linearize, rk4_step
from .neural_cost import (
    NetArchitecture,
    QuadraticCost,
    nn_forward,
    stage_cost,
    stage_cost_grad,
    unpack,
)


class RiccatiError(RuntimeError):
    """DARE fixed-point iteration failed to converge."""


def terminal_weight(plant: DiscretePlant, x_d, u_d, q, r,
                    tol: float = 1e-10, max_iters: int = 100000) -> np.ndarray:
    """Terminal weight P from the discrete algebraic Riccati equation.

    Fixed-point iteration P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA starting
    from P = Q, at the plant linearization around the set-point.
    """
    a, b = linearize(plant, x_d, u_d)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    p = q.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        return _dare_iterate(a, b, q, r, p, tol, max_iters)


def _dare_iterate(a, b, q, r, p, tol, max_iters):
    for _ in range(max_iters):
        btp = b.T @ p
        gain = np.linalg.solve(r + btp @ b, btp @ a)
        p_next = q + a.T @ p @ (a - b @ gain)
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            break
        if np.max(np.abs(p_next - p)) <= tol:
            return p_next
        p = p_next
    raise RiccatiError(
        "DARE iteration did not converge; the linearization at the set-point "
        "is likely not stabilizable"
    )


def lqr_gain(plant: DiscretePlant, x_d, u_d, q, r) -> np.ndarray:
    """Feedback gain K of the LQR associated with `terminal_weight`."""
    a, b = linearize(plant, x_d, u_d)
    p = terminal_weight(plant, x_d, u_d, q, r)
    r = np.atleast_2d(np.asarray(r, dtype=float))
    btp = b.T @ p
    return np.linalg.solve(r + btp @ b, btp @ a)


@dataclass(frozen=True)
class OcpSpec:
    horizon: int
    plant: DiscretePlant           # prediction model (possibly mismatched)
    cost: QuadraticCost
    arch: NetArchitecture
    terminal: np.ndarray           # PSD terminal weight P
    u_min: float = -50.0
    u_max: float = 50.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")
        object.__setattr__(self, "terminal",
                           np.atleast_2d(np.asarray(self.terminal, dtype=float)))


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200
    tol: float = 1e-6
    armijo_c1: float = 1e-4
    max_backtracks: int = 40
    fd_step: float = 1e-6


@dataclass
class OcpSolution:
    u_seq: np.ndarray
    states: np.ndarray
    cost: float
    iterations: int
    converged: bool


def _fast_path_ok(spec: OcpSpec) -> bool:
    return spec.plant.pendulum is not None and len(spec.arch.layer_sizes) == 3


def _fast_args(spec: OcpSpec, theta):
    (w1, b1), (w2, b2) = unpack(theta, spec.arch)
    return (spec.plant.ts, spec.plant.pendulum.as_array(),
            spec.cost.q, float(spec.cost.r[0, 0]),
            spec.cost.x_d, float(spec.cost.u_d[0]), spec.terminal,
            w1, b1, w2.reshape(-1), float(b2[0]))


def rollout_cost(spec: OcpSpec, theta, x0, u_seq):
    """Shooting cost: sum of stage costs plus the quadratic terminal term.

    Returns (J, predicted states); J is +inf if the rollout goes non-finite.
    """
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1)
    if u_seq.shape[0] != spec.horizon:
        raise ValueError("input sequence length must equal the horizon")
    x0 = np.asarray(x0, dtype=float)
    if _fast_path_ok(spec):
        ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2 = _fast_args(spec, theta)
        nn_ref = _kernels.nn_value(w1, b1, w2, b2, x_d)
        j, xs = _kernels.ocp_rollout(x0, u_seq, ts, p, q, r, x_d, u_d, tp,
                                     w1, b1, w2, b2, nn_ref)
        return float(j), xs
    xs = np.empty((spec.horizon + 1, x0.shape[0]))
    xs[0] = x0
    j = 0.0
    for i in range(spec.horizon):
        j += stage_cost(spec.cost, spec.arch, theta, xs[i], u_seq[i])
        try:
            xs[i + 1] = rk4_step(spec.plant, xs[i], u_seq[i])
        except NumericsError:
            return np.inf, xs
    dxn = xs[-1] - spec.cost.x_d
    j += float(dxn @ spec.terminal @ dxn)
    return (j, xs) if np.isfinite(j) else (np.inf, xs)


def rollout_grad(spec: OcpSpec, theta, x0, u_seq, states=None,
                 fd_step: float = 1e-6) -> np.ndarray:
    """Adjoint gradient of the shooting cost w.r.t. the input sequence."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1)
    if states is None:
        _, states = rollout_cost(spec, theta, x0, u_seq)
    if _fast_path_ok(spec):
        ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2 = _fast_args(spec, theta)
        return _kernels.ocp_grad(states, u_seq, ts, p, q, r, x_d, u_d, tp,
                                 w1, b1, w2, b2, fd_step)
    n = spec.horizon
    g = np.empty(n)
    lam = 2.0 * (spec.terminal @ (states[n] - spec.cost.x_d))
    for i in range(n - 1, -1, -1):
        a, b = linearize(spec.plant, states[i], u_seq[i], h=fd_step)
        gx, gu = stage_cost_grad(spec.cost, spec.arch, theta, states[i], u_seq[i])
        g[i] = gu[0] + float(b[:, 0] @ lam)
        lam = gx + a.T @ lam
    return g


def _grad_hess(spec: OcpSpec, theta, u_seq, states, fd_step):
    """Gradient and Gauss-Newton Hessian of the shooting cost w.r.t. u_seq.

    The Hessian propagates the quadratic stage/terminal curvature through
    the state sensitivities and drops the network's second-order term,
    keeping it positive semidefinite.
    """
    n = spec.horizon
    nx = states.shape[1]
    amats = np.empty((n, nx, nx))
    bvecs = np.empty((n, nx))
    for i in range(n):
        a, b = linearize(spec.plant, states[i], u_seq[i], h=fd_step)
        amats[i] = a
        bvecs[i] = b[:, 0]
    g = np.empty(n)
    lam = 2.0 * (spec.terminal @ (states[n] - spec.cost.x_d))
    for i in range(n - 1, -1, -1):
        gx, gu = stage_cost_grad(spec.cost, spec.arch, theta, states[i], u_seq[i])
        g[i] = gu[0] + float(bvecs[i] @ lam)
        lam = gx + amats[i].T @ lam
    q2 = 2.0 * spec.cost.q
    r2 = 2.0 * float(spec.cost.r[0, 0])
    hess = np.zeros((n, n))
    sens = np.zeros((nx, n))
    for i in range(n):
        if i > 0:
            hess += sens.T @ (q2 @ sens)
        hess[i, i] += r2
        sens = amats[i] @ sens
        sens[:, i] += bvecs[i]
    hess += sens.T @ ((2.0 * spec.terminal) @ sens)
    return g, hess


def _two_metric_direction(hess, g, free, lam_reg):
    d = -g.copy()
    idx = np.flatnonzero(free)
    if idx.size:
        hf = hess[np.ix_(idx, idx)] + lam_reg * np.eye(idx.size)
        d[idx] = np.linalg.solve(hf, -g[idx])
    return d


def solve_ocp(spec: OcpSpec, theta, x0, warm_start=None,
              solver: SolverConfig = SolverConfig()) -> OcpSolution:
    """Minimize the shooting cost over the input box [u_min, u_max]^N.

    Projected gradient descent with Barzilai-Borwein steps and Armijo
    backtracking; deterministic given (x0, theta, warm start).
    """
    x0 = np.asarray(x0, dtype=float)
    if warm_start is None:
        u0 = np.full(spec.horizon, float(spec.cost.u_d[0]))
    else:
        u0 = np.asarray(warm_start, dtype=float).reshape(-1).copy()
    u0 = np.clip(u0, spec.u_min, spec.u_max)

    if _fast_path_ok(spec):
        ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2 = _fast_args(spec, theta)
        u, xs, j, it, conv, exploded = _kernels.ocp_solve(
            x0, u0, ts, p, q, r, x_d, u_d, tp, w1, b1, w2, b2,
            spec.u_min, spec.u_max, solver.max_iters, solver.tol, solver.fd_step)
        if exploded:
            raise NumericsError("prediction rollout exploded from the initial guess")
        return OcpSolution(u, xs, float(j), int(it), bool(conv))

    u = u0
    j, xs = rollout_cost(spec, theta, x0, u)
    if not np.isfinite(j):
        raise NumericsError("prediction rollout exploded from the initial guess")
    converged = False
    it = 0
    lam_reg = 1e-8
    eps = 1e-12 * (spec.u_max - spec.u_min)
    while it < solver.max_iters:
        g, hess = _grad_hess(spec, theta, u, xs, solver.fd_step)
        pg = u - np.clip(u - g, spec.u_min, spec.u_max)
        if float(np.sqrt(pg @ pg)) <= solver.tol:
            converged = True
            break
        it += 1
        at_lo = (u <= spec.u_min + eps) & (g > 0)
        at_hi = (u >= spec.u_max - eps) & (g < 0)
        free = ~(at_lo | at_hi)
        improved = False
        for _ in range(8):
            d = _two_metric_direction(hess, g, free, lam_reg)
            alpha = 1.0
            for _ in range(solver.max_backtracks):
                cand = np.clip(u + alpha * d, spec.u_min, spec.u_max)
                jc, xc = rollout_cost(spec, theta, x0, cand)
                step = cand - u
                if jc <= j + solver.armijo_c1 * float(g @ step) and jc < j:
                    improved = True
                    break
                alpha *= 0.5
            if improved:
                lam_reg = max(1e-8, lam_reg * 0.1)
                break
            lam_reg *= 100.0
        if not improved:
            break
        u, j, xs = cand, jc, xc
    return OcpSolution(u, xs, float(j), it, converged)


def shift_warm_start(solution: OcpSolution) -> np.ndarray:
    """Shift the previous optimal sequence by one, repeating the last input."""
    u = solution.u_seq
    return np.concatenate([u[1:], u[-1:]])


def mpc_policy(spec: OcpSpec, theta, x_k, prev_solution: Optional[OcpSolution] = None,
               solver: SolverConfig = SolverConfig()):
    """Receding-horizon policy: solve the OCP and return the first input."""
    warm = shift_warm_start(prev_solution) if prev_solution is not None else None
    sol = solve_ocp(spec, theta, x_k, warm_start=warm, solver=solver)
    return float(sol.u_seq[0]), sol
