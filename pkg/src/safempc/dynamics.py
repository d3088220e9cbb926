"""Double-pendulum dynamics, RK4 discretization, and the discrete-plant contract.

The plant contract is a sampling time plus a continuous-time derivative
function `xdot = deriv(x, u)`; `rk4_step` turns it into a discrete map.
The pendulum gets a compiled fast path (see `_kernels`); arbitrary
surrogate plants go through the generic python path.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels


class NumericsError(RuntimeError):
    """A simulated state or derivative went non-finite."""


@dataclass(frozen=True)
class PendulumParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"PendulumParams.{name} must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.l1, self.l2, self.g])


# true plant vs. the deliberately mismatched MPC prediction model
TRUE_PLANT = PendulumParams(m1=1.0, m2=1.0, l1=1.0, l2=1.0)
MPC_MODEL = PendulumParams(m1=2.0, m2=0.5, l1=1.2, l2=1.2)


def pendulum_deriv(x, u, params: PendulumParams) -> np.ndarray:
    """Continuous-time derivative (psi1', psi2', psi1'', psi2'').

    u is an acceleration acting on the base of the first link and enters
    additively on psi1''.
    """
    x = np.asarray(x, dtype=float)
    return _kernels.pend_deriv(x, float(u), params.as_array())


@dataclass(frozen=True)
class DiscretePlant:
    """Discrete plant: RK4 discretization of `deriv` with sampling time ts."""

    deriv: Callable[[np.ndarray, float], np.ndarray]
    ts: float
    nx: int = 4
    # set for pendulum plants; enables the compiled fast path
    pendulum: Optional[PendulumParams] = field(default=None)

    def __post_init__(self):
        if not self.ts > 0:
            raise ValueError("sampling time must be > 0")


def pendulum_plant(params: PendulumParams, ts: float) -> DiscretePlant:
    return DiscretePlant(
        deriv=lambda x, u: pendulum_deriv(x, u, params),
        ts=ts,
        nx=4,
        pendulum=params,
    )


def rk4_step(plant: DiscretePlant, x, u) -> np.ndarray:
    """One classical RK4 step under zero-order-hold input."""
    x = np.asarray(x, dtype=float)
    u = float(u)
    if plant.pendulum is not None:
        x_next = _kernels.pend_rk4(x, u, plant.ts, plant.pendulum.as_array())
    else:
        ts = plant.ts
        f = plant.deriv
        k1 = np.asarray(f(x, u), dtype=float)
        k2 = np.asarray(f(x + 0.5 * ts * k1, u), dtype=float)
        k3 = np.asarray(f(x + 0.5 * ts * k2, u), dtype=float)
        k4 = np.asarray(f(x + ts * k3, u), dtype=float)
        x_next = x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NumericsError(f"rk4_step produced a non-finite state from x={x}, u={u}")
    return x_next


def linearize(plant: DiscretePlant, x, u, h: float = 1e-6):
    """Central-difference Jacobians (A, B) of the one-step map at (x, u)."""
    x = np.asarray(x, dtype=float)
    u = float(u)
    if plant.pendulum is not None:
        a, b = _kernels.pend_linearize(x, u, plant.ts, plant.pendulum.as_array(), h)
        b = b.reshape(-1, 1)
    else:
        n = x.shape[0]
        a = np.empty((n, n))
        for j in range(n):
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            a[:, j] = (rk4_step(plant, xp, u) - rk4_step(plant, xm, u)) / (2.0 * h)
        b = ((rk4_step(plant, x, u + h) - rk4_step(plant, x, u - h)) / (2.0 * h)).reshape(-1, 1)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericsError("linearize produced non-finite Jacobian entries")
    return a, b
