"""Constraint-aware Bayesian optimization with log-barrier safety terms.

The objective is minimized (lower closed-loop deviation cost is better);
expected improvement is therefore written for minimization. Constraint
surrogates enter the acquisition through log barriers on their lower
confidence bounds, so candidates whose safety cannot be certified are
marked INFEASIBLE rather than scored.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.stats import norm, qmc

from . import gp


class _Infeasible:
    """Marker for candidates whose constraint lower bound is nonpositive."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFEASIBLE"


INFEASIBLE = _Infeasible()


@dataclass(frozen=True)
class Domain:
    """Axis-aligned parameter box with an incremental expansion schedule."""

    lower: np.ndarray
    upper: np.ndarray
    growth: float = 1.05
    cap_lower: Optional[np.ndarray] = None
    cap_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("need lower < upper elementwise")
        if self.growth < 1.0:
            raise ValueError("growth factor must be >= 1")
        cl = self.cap_lower if self.cap_lower is not None else lo.copy()
        cu = self.cap_upper if self.cap_upper is not None else hi.copy()
        cl = np.atleast_1d(np.asarray(cl, dtype=float))
        cu = np.atleast_1d(np.asarray(cu, dtype=float))
        object.__setattr__(self, "cap_lower", np.minimum(cl, lo))
        object.__setattr__(self, "cap_upper", np.maximum(cu, hi))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def halfwidth(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, theta, atol: float = 1e-12) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - atol)
                    and np.all(theta <= self.upper + atol))

    def expand(self) -> "Domain":
        center = 0.5 * (self.lower + self.upper)
        half = self.growth * self.halfwidth()
        return replace(self,
                       lower=np.maximum(center - half, self.cap_lower),
                       upper=np.minimum(center + half, self.cap_upper))


def expand_domain(domain: Domain) -> Domain:
    return domain.expand()


@dataclass
class BoDataset:
    """Rows of (theta, observed objective, observed constraint values)."""

    thetas: np.ndarray       # (n, n_p)
    objectives: np.ndarray   # (n,)
    constraints: np.ndarray  # (n, n_bc)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.objectives = np.atleast_1d(np.asarray(self.objectives, dtype=float))
        self.constraints = np.atleast_2d(np.asarray(self.constraints, dtype=float))
        n = self.thetas.shape[0]
        if self.objectives.shape[0] != n or self.constraints.shape[0] != n:
            raise ValueError("dataset row counts disagree")

    def __len__(self):
        return self.thetas.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.constraints.shape[1]

    def safe_mask(self) -> np.ndarray:
        return np.all(self.constraints >= 0.0, axis=1)

    def append(self, theta, objective, constraints):
        self.thetas = np.vstack([self.thetas, np.asarray(theta, dtype=float)])
        self.objectives = np.append(self.objectives, float(objective))
        self.constraints = np.vstack(
            [self.constraints, np.atleast_1d(np.asarray(constraints, dtype=float))])


def expected_improvement(mean, std, best_observed):
    """Closed-form EI for a minimization objective; std may be 0."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ValueError("std must be >= 0")
    gap = best_observed - mean
    out = np.maximum(gap, 0.0)
    pos = std > 0
    z = np.where(pos, gap / np.where(pos, std, 1.0), 0.0)
    out = np.where(pos, gap * norm.cdf(z) + std * norm.pdf(z), out)
    if out.ndim == 0:
        return float(out)
    return out


def barrier_term(constraint_gp: gp.GpModel, theta, beta: float):
    """log of the constraint's lower confidence bound, or INFEASIBLE."""
    mean, var = constraint_gp.posterior_scalar(np.asarray(theta, dtype=float))
    lcb = mean - beta * math.sqrt(var)
    if lcb <= 0.0:
        return INFEASIBLE
    return math.log(lcb)


@dataclass
class TuneState:
    """Iteration state of the safe BO loop."""

    dataset: BoDataset
    domain: Domain
    beta: float
    tau: float = 1.0
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    objective_gp: Optional[gp.GpModel] = None
    constraint_gps: List[gp.GpModel] = field(default_factory=list)
    # hyperparameter handling
    fit_hyperparameters: bool = True
    refit_every: int = 1
    fit_seed: int = 0
    tie_lengthscales: bool = True
    noise_var: float = 1e-6
    fixed_kernels: Optional[Sequence[gp.Kernel]] = None  # objective first
    # acquisition optimization
    n_candidates: int = 4096
    n_refine: int = 64
    refine_sweeps: int = 2
    # bookkeeping
    incumbent_index: Optional[int] = None
    last_proposal_fallback: bool = False

    def __post_init__(self):
        if not self.dataset.safe_mask().any():
            raise ValueError("the initial dataset must contain a safe row")
        self._update_incumbent()

    def _update_incumbent(self):
        safe = self.dataset.safe_mask()
        idx = np.flatnonzero(safe)
        self.incumbent_index = int(idx[np.argmin(self.dataset.objectives[idx])])

    @property
    def incumbent(self):
        i = self.incumbent_index
        return self.dataset.thetas[i], float(self.dataset.objectives[i])

    def fit_models(self, force: bool = False):
        """Fit/update the objective and constraint surrogates from the data."""
        ds = self.dataset
        refit = force or self.objective_gp is None or (
            self.fit_hyperparameters and self.iteration % max(self.refit_every, 1) == 0)
        if self.fixed_kernels is not None:
            kernels = list(self.fixed_kernels)
            noises = [self.noise_var] * (1 + ds.n_constraints)
        elif refit and self.fit_hyperparameters:
            kernels = []
            noises = []
            for col in [ds.objectives] + [ds.constraints[:, i]
                                          for i in range(ds.n_constraints)]:
                model = gp.fit(gp.Dataset(ds.thetas, col, self.noise_var),
                               seed=self.fit_seed,
                               tie_lengthscales=self.tie_lengthscales)
                kernels.append(model.kernel)
                noises.append(model.dataset.noise_var)
        else:
            kernels = [self.objective_gp.kernel] + [m.kernel for m in self.constraint_gps]
            noises = [self.objective_gp.dataset.noise_var] + [
                m.dataset.noise_var for m in self.constraint_gps]
        standardize = self.fixed_kernels is None
        self.objective_gp = gp.GpModel(
            kernels[0], gp.Dataset(ds.thetas, ds.objectives, noises[0]),
            standardize=standardize)
        self.constraint_gps = [
            gp.GpModel(kernels[1 + i],
                       gp.Dataset(ds.thetas, ds.constraints[:, i], noises[1 + i]),
                       standardize=standardize)
            for i in range(ds.n_constraints)
        ]


def _acquisition_batch(state: TuneState, thetas: np.ndarray):
    """(values, feasible mask) of the constrained acquisition on a batch."""
    best = state.incumbent[1]
    mean, var = state.objective_gp.posterior(thetas)
    vals = expected_improvement(mean, np.sqrt(var), best)
    feasible = np.ones(thetas.shape[0], dtype=bool)
    for cgp in state.constraint_gps:
        cmean, cvar = cgp.posterior(thetas)
        lcb = cmean - state.beta * np.sqrt(cvar)
        ok = lcb > 0.0
        feasible &= ok
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = vals + state.tau * np.where(ok, np.log(np.where(ok, lcb, 1.0)), 0.0)
    return vals, feasible


def constrained_acquisition(state: TuneState, theta):
    """EI plus tau * sum(log lcb_i); INFEASIBLE if any lcb is nonpositive."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    vals, feasible = _acquisition_batch(state, theta)
    if not feasible[0]:
        return INFEASIBLE
    return float(vals[0])


def propose_next(state: TuneState) -> np.ndarray:
    """Maximize the constrained acquisition over the current domain.

    Candidate pool: scrambled-Sobol points plus all observed-safe rows;
    the top candidates are refined by batched coordinate descent. Falls
    back to the safe row with the largest posterior objective uncertainty
    when no candidate is feasible.
    """
    dom = state.domain
    ds = state.dataset
    sob = qmc.Sobol(dom.dim, scramble=True,
                    seed=int(state.rng.integers(0, 2 ** 63 - 1)))
    pool = qmc.scale(sob.random(state.n_candidates), dom.lower, dom.upper)
    safe_rows = np.clip(ds.thetas[ds.safe_mask()], dom.lower, dom.upper)
    pool = np.vstack([pool, safe_rows])

    vals, feasible = _acquisition_batch(state, pool)
    scores = np.where(feasible, vals, -np.inf)
    order = np.argsort(-scores, kind="stable")
    top = order[: min(state.n_refine, pool.shape[0])]
    cand = pool[top].copy()
    cstep = 0.1 * dom.halfwidth()
    cvals, cfeas = vals[top].copy(), feasible[top].copy()
    for _ in range(state.refine_sweeps):
        for j in range(dom.dim):
            for sign in (1.0, -1.0):
                trial = cand.copy()
                trial[:, j] = np.clip(trial[:, j] + sign * cstep[j],
                                      dom.lower[j], dom.upper[j])
                tvals, tfeas = _acquisition_batch(state, trial)
                better = tfeas & (~cfeas | (tvals > cvals))
                cand[better] = trial[better]
                cvals[better] = tvals[better]
                cfeas[better] = tfeas[better]
        cstep *= 0.5

    if cfeas.any():
        cscores = np.where(cfeas, cvals, -np.inf)
        state.last_proposal_fallback = False
        return cand[int(np.argmax(cscores))].copy()

    # no feasible candidate anywhere: probe the safe row we know least about
    state.last_proposal_fallback = True
    _, svar = state.objective_gp.posterior(safe_rows)
    return safe_rows[int(np.argmax(svar))].copy()


def bo_step(state: TuneState,
            evaluator: Callable[[np.ndarray], Sequence[float]]) -> TuneState:
    """One iteration: fit surrogates, propose, evaluate, record, expand."""
    state.fit_models()
    theta = propose_next(state)
    obs = evaluator(theta)
    g0 = float(obs[0])
    g_rest = np.asarray(obs[1:], dtype=float)
    if g_rest.shape[0] != state.dataset.n_constraints:
        raise ValueError("evaluator returned the wrong number of constraints")
    state.dataset.append(theta, g0, g_rest)
    state._update_incumbent()
    state.domain = state.domain.expand()
    state.iteration += 1
    return state
