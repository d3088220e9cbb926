"""Feedforward network, flat parameter vector, and the parametrized stage cost.

The stage cost is a quadratic set-point penalty plus a network correction
term that vanishes at the set-point by construction:

    stage_cost(x, u) = (x-x_d)'Q(x-x_d) + (u-u_d)'R(u-u_d) + y(x) - y(x_d)

Parameter layout is normative so saved theta vectors are portable:
layer-major (input to output), each layer row-major weights then bias.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class NetArchitecture:
    """Layer sizes (input, hidden..., output); tanh hidden, linear output."""

    layer_sizes: tuple = (4, 7, 1)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if sizes[-1] != 1:
            raise ValueError("output layer must be scalar")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]


def param_count(arch: NetArchitecture) -> int:
    sizes = arch.layer_sizes
    return sum(sizes[i - 1] * sizes[i] + sizes[i] for i in range(1, len(sizes)))


def unpack(theta, arch: NetArchitecture):
    """Flat vector -> list of (W, b) pairs, input-to-output order."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (param_count(arch),):
        raise ValueError(
            f"theta has length {theta.shape}, expected ({param_count(arch)},)"
        )
    layers = []
    pos = 0
    sizes = arch.layer_sizes
    for i in range(1, len(sizes)):
        n_out, n_in = sizes[i], sizes[i - 1]
        w = theta[pos:pos + n_out * n_in].reshape(n_out, n_in)
        pos += n_out * n_in
        b = theta[pos:pos + n_out]
        pos += n_out
        layers.append((w, b))
    return layers


def pack(layers, arch: NetArchitecture) -> np.ndarray:
    parts = []
    for (w, b), (n_in, n_out) in zip(layers, zip(arch.layer_sizes, arch.layer_sizes[1:])):
        w = np.asarray(w, dtype=float)
        b = np.asarray(b, dtype=float)
        if w.shape != (n_out, n_in) or b.shape != (n_out,):
            raise ValueError("layer shape does not match architecture")
        parts.append(w.reshape(-1))
        parts.append(b)
    theta = np.concatenate(parts)
    assert theta.shape == (param_count(arch),)
    return theta


def nn_forward(arch: NetArchitecture, theta, x) -> float:
    """Scalar network output: tanh hidden layers, linear output layer."""
    z = np.asarray(x, dtype=float)
    layers = unpack(theta, arch)
    for w, b in layers[:-1]:
        z = np.tanh(w @ z + b)
    w, b = layers[-1]
    return float((w @ z + b)[0])


def nn_forward_grad(arch: NetArchitecture, theta, x):
    """(value, d value / d x) by backpropagation through the tanh layers."""
    z = np.asarray(x, dtype=float)
    layers = unpack(theta, arch)
    jac = np.eye(arch.n_in)
    for w, b in layers[:-1]:
        pre = w @ z + b
        z = np.tanh(pre)
        jac = ((1.0 - z * z)[:, None] * w) @ jac
    w, b = layers[-1]
    return float((w @ z + b)[0]), (w @ jac).reshape(-1)


def nn_cost(arch: NetArchitecture, theta, x, x_d) -> float:
    """Network correction term y(x) - y(x_d); zero at the set-point."""
    return nn_forward(arch, theta, x) - nn_forward(arch, theta, x_d)


@dataclass(frozen=True)
class QuadraticCost:
    q: np.ndarray
    r: np.ndarray
    x_d: np.ndarray
    u_d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_2d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "r", np.atleast_2d(np.asarray(self.r, dtype=float)))
        object.__setattr__(self, "x_d", np.atleast_1d(np.asarray(self.x_d, dtype=float)))
        object.__setattr__(self, "u_d", np.atleast_1d(np.asarray(self.u_d, dtype=float)))
        # R must be PD, Q PSD (up to round-off)
        np.linalg.cholesky(self.r)
        np.linalg.cholesky(self.q + 1e-12 * np.eye(self.q.shape[0]))


def quadratic_term(qc: QuadraticCost, x, u) -> float:
    dx = np.atleast_1d(np.asarray(x, dtype=float)) - qc.x_d
    du = np.atleast_1d(np.asarray(u, dtype=float)) - qc.u_d
    return float(dx @ qc.q @ dx + du @ qc.r @ du)


def stage_cost(qc: QuadraticCost, arch: NetArchitecture, theta, x, u) -> float:
    return quadratic_term(qc, x, u) + nn_cost(arch, theta, x, qc.x_d)


def stage_cost_grad(qc: QuadraticCost, arch: NetArchitecture, theta, x, u):
    """Exact (d/dx, d/du) of stage_cost via the chain rule."""
    dx = np.atleast_1d(np.asarray(x, dtype=float)) - qc.x_d
    du = np.atleast_1d(np.asarray(u, dtype=float)) - qc.u_d
    _, gnn = nn_forward_grad(arch, theta, x)
    gx = 2.0 * (qc.q @ dx) + gnn
    gu = 2.0 * (qc.r @ du)
    return gx, gu


def lipschitz_bound(arch: NetArchitecture, theta) -> float:
    """Product of layer operator norms; a global slope bound for the network."""
    return float(np.prod([np.linalg.norm(w, 2) for w, _ in unpack(theta, arch)]))
