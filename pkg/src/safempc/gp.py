"""Gaussian-process regression: Matern-5/2 kernel, posterior queries,
evidence-based hyperparameter fitting, and confidence scaling.

Models use a zero prior mean on standardized targets (subtract mean,
divide by std); queries are de-standardized on output. Fitting is a
deterministic derivative-free search: fixed log-space starts plus seeded
random starts, refined by coordinate-wise golden-section sweeps.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_SQRT5 = math.sqrt(5.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class FitError(RuntimeError):
    """Every hyperparameter start failed even with jitter escalation."""


@dataclass(frozen=True)
class Kernel:
    """Stationary covariance with per-dimension lengthscales."""

    variance: float
    lengthscales: np.ndarray
    variant: str = "matern52"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not self.variance > 0:
            raise ValueError("signal variance must be > 0")
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be > 0")
        if self.variant != "matern52":
            raise ValueError(f"unsupported kernel variant {self.variant!r}")


def _scaled_dists(kern: Kernel, xa, xb):
    xa = np.atleast_2d(xa) / kern.lengthscales
    xb = np.atleast_2d(xb) / kern.lengthscales
    d2 = np.maximum(
        np.sum(xa * xa, axis=1)[:, None]
        + np.sum(xb * xb, axis=1)[None, :]
        - 2.0 * (xa @ xb.T),
        0.0,
    )
    return np.sqrt(d2)


def kernel_matrix(kern: Kernel, xa, xb) -> np.ndarray:
    r = _scaled_dists(kern, xa, xb)
    sr = _SQRT5 * r
    return kern.variance * (1.0 + sr + (5.0 / 3.0) * r * r) * np.exp(-sr)


def kernel_eval(kern: Kernel, xi, xj) -> float:
    return float(kernel_matrix(kern, np.atleast_2d(xi), np.atleast_2d(xj))[0, 0])


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray   # (n_d, n_xi)
    targets: np.ndarray  # (n_d,)
    noise_var: float = 0.0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_1d(np.asarray(self.targets, dtype=float))
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and targets disagree on the sample count")
        if self.noise_var < 0:
            raise ValueError("noise variance must be >= 0")

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Confidence:
    beta: float
    delta: float = 0.05

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


class GpModel:
    """Immutable fitted GP: kernel + data + cached Cholesky factor.

    Safe for concurrent posterior queries. `standardize=True` fits in
    units of (targets - mean)/std and de-standardizes query outputs.
    """

    def __init__(self, kernel: Kernel, dataset: Dataset, standardize: bool = False,
                 jitter_start: float = 1e-10, jitter_cap: float = 1e-4):
        self.kernel = kernel
        self.dataset = dataset
        n = len(dataset)
        if standardize and n > 0:
            self._y_mean = float(np.mean(dataset.targets))
            std = float(np.std(dataset.targets))
            self._y_std = std if std > 0 else 1.0
        else:
            self._y_mean = 0.0
            self._y_std = 1.0
        self._y = (dataset.targets - self._y_mean) / self._y_std
        if n == 0:
            self._chol = None
            self._alpha = None
            self.log_evidence = 0.0
            return
        kmat = kernel_matrix(kernel, dataset.inputs, dataset.inputs)
        kmat[np.diag_indices_from(kmat)] += dataset.noise_var
        jitter = jitter_start
        base_diag = kmat[np.diag_indices_from(kmat)].copy()
        while True:
            try:
                self._chol = cho_factor(kmat, lower=True)
                break
            except np.linalg.LinAlgError:
                if jitter > jitter_cap:
                    raise FitError("covariance matrix not positive definite "
                                   "even after jitter escalation")
                kmat[np.diag_indices_from(kmat)] = base_diag + jitter
                jitter *= 10.0
        self._alpha = cho_solve(self._chol, self._y)
        logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))
        self.log_evidence = float(
            -0.5 * (self._y @ self._alpha) - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)
        )

    def posterior(self, xq):
        """Posterior (mean, variance) at query rows; variance clamped at 0."""
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        prior_var = np.full(xq.shape[0], self.kernel.variance)
        if self._chol is None:
            mean = np.full(xq.shape[0], self._y_mean)
            return mean, prior_var * self._y_std ** 2
        ks = kernel_matrix(self.kernel, xq, self.dataset.inputs)
        mean = ks @ self._alpha
        v = cho_solve(self._chol, ks.T)
        var = np.maximum(prior_var - np.sum(ks * v.T, axis=1), 0.0)
        return mean * self._y_std + self._y_mean, var * self._y_std ** 2

    def posterior_scalar(self, xi):
        mean, var = self.posterior(np.atleast_2d(xi))
        return float(mean[0]), float(var[0])


def posterior(model: GpModel, xq):
    return model.posterior(xq)


def bounds(model: GpModel, xq, conf: Confidence):
    """Confidence band m ∓ beta * sqrt(variance)."""
    mean, var = model.posterior(xq)
    half = conf.beta * np.sqrt(var)
    return mean - half, mean + half


def confidence_beta(rkhs_bound: float, noise_level: float, info_gain: float,
                    delta: float) -> float:
    """Calibration scaling beta = B + R * sqrt(gamma + 1 + ln(1/delta))."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if min(rkhs_bound, noise_level, info_gain) < 0:
        raise ValueError("B, R and gamma must be >= 0")
    return rkhs_bound + noise_level * math.sqrt(info_gain + 1.0 + math.log(1.0 / delta))


def _golden_min(f, lo, hi, evals):
    """Golden-section minimization of f on [lo, hi] with a fixed eval budget."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    used = 2
    while used < evals:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
        used += 1
    return (c, fc) if fc <= fd else (d, fd)


def fit(dataset: Dataset, kernel_init: Optional[Kernel] = None, *,
        seed: int = 0, n_fixed_starts: int = 8, n_random_starts: int = 8,
        evals_per_start: int = 100, tie_lengthscales: bool = False,
        optimize_noise: bool = True, standardize: bool = True) -> GpModel:
    """Maximize log marginal likelihood over (variance, lengthscales, noise).

    Deterministic given `seed`. With `tie_lengthscales` a single shared
    lengthscale multiplier is optimized, which keeps the search effective
    in high-dimensional input spaces.
    """
    if len(dataset) < 1:
        raise ValueError("need at least one data point to fit")
    x = dataset.inputs
    n_xi = x.shape[1]
    # reference scales from the data spread
    xs = np.std(x, axis=0)
    xs[xs == 0] = 1.0

    if kernel_init is not None:
        ls0 = kernel_init.lengthscales * np.ones(n_xi)
        var0 = kernel_init.variance
    else:
        ls0 = xs.copy()
        var0 = 1.0
    noise0 = dataset.noise_var if dataset.noise_var > 0 else 1e-4

    n_ls = 1 if tie_lengthscales else n_xi

    def build(logv):
        var = math.exp(logv[0])
        if tie_lengthscales:
            ls = ls0 * math.exp(logv[1])
        else:
            ls = np.exp(logv[1:1 + n_ls])
        noise = math.exp(logv[-1]) if optimize_noise else dataset.noise_var
        return var, ls, noise

    def neg_evidence(logv):
        var, ls, noise = build(logv)
        try:
            model = GpModel(Kernel(var, ls), Dataset(x, dataset.targets, noise),
                            standardize=standardize)
        except FitError:
            return np.inf
        return -model.log_evidence

    dim = 1 + n_ls + (1 if optimize_noise else 0)

    def make_start(var_scale, ls_scale, noise):
        v = np.empty(dim)
        v[0] = math.log(var0 * var_scale)
        if tie_lengthscales:
            v[1] = math.log(ls_scale)
        else:
            v[1:1 + n_ls] = np.log(ls0 * ls_scale)
        if optimize_noise:
            v[-1] = math.log(noise)
        return v

    starts = []
    for var_scale in (0.5, 2.0):
        for ls_scale in (0.5, 2.0):
            for noise in (max(noise0, 1e-8), max(noise0 * 100.0, 1e-4)):
                starts.append(make_start(var_scale, ls_scale, noise))
    starts = starts[:n_fixed_starts]
    rng = np.random.default_rng(seed)
    base = make_start(1.0, 1.0, noise0)
    for _ in range(n_random_starts):
        starts.append(base + rng.normal(0.0, 1.0, size=dim))

    best_v = None
    best_f = np.inf
    for start in starts:
        v = start.copy()
        fv = neg_evidence(v)
        used = 1
        coord = 0
        while used + 6 <= evals_per_start:
            def along(t, j=coord, vv=v):
                w = vv.copy()
                w[j] = t
                return neg_evidence(w)
            t, ft = _golden_min(along, v[coord] - 1.5, v[coord] + 1.5, 6)
            used += 6
            if ft < fv:
                v[coord] = t
                fv = ft
            coord = (coord + 1) % dim
        if fv < best_f:
            best_f = fv
            best_v = v
    if best_v is None or not np.isfinite(best_f):
        raise FitError("hyperparameter search failed from every start")
    var, ls, noise = build(best_v)
    return GpModel(Kernel(var, ls), Dataset(x, dataset.targets, noise),
                   standardize=standardize)
