"""Decaying stability envelope, the closed-loop margin, and the verdict.

The envelope is rho * chi^k * ||x0 - x_d||_2 floored at nu; the margin is
the worst-case slack of the trajectory under that envelope. A nonnegative
margin certifies practical stability of the probed run.
"""

from dataclasses import dataclass

import numpy as np

# sentinel margin for trajectories that blew up numerically
EXPLODED_MARGIN = -1e6


@dataclass(frozen=True)
class StabilityEnvelope:
    rho: float = 2.5
    chi: float = 0.985
    nu: float = 0.2

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not 0.0 < self.chi < 1.0:
            raise ValueError("chi must lie in (0, 1)")
        if not self.nu > 0:
            raise ValueError("nu must be > 0")


def envelope(env: StabilityEnvelope, d0: float, k) -> float:
    """max{rho * chi^k * d0, nu} for initial distance d0 >= 0."""
    return np.maximum(env.rho * env.chi ** np.asarray(k, dtype=float) * d0, env.nu)


def stability_margin(states, env: StabilityEnvelope, x_d,
                     exploded: bool = False) -> float:
    """min over k of envelope(k) - ||x_k - x_d||_2 along the trajectory.

    Exploded trajectories get a large negative sentinel regardless of the
    finite prefix.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] < 1:
        raise ValueError("trajectory must contain at least the initial state")
    if exploded or not np.all(np.isfinite(states)):
        return EXPLODED_MARGIN
    x_d = np.asarray(x_d, dtype=float)
    err = np.linalg.norm(states - x_d, axis=1)
    bound = envelope(env, err[0], np.arange(states.shape[0]))
    return float(np.min(bound - err))


def is_stable(states, env: StabilityEnvelope, x_d, exploded: bool = False) -> bool:
    """Closed inequality: margin >= 0 certifies the run."""
    return stability_margin(states, env, x_d, exploded=exploded) >= 0.0
