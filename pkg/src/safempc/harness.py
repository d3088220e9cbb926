"""Experiment orchestration: closed-loop episodes, the performance metric,
safe-seed generation, the tuning campaign, and run-log file I/O.

A run directory contains `run.json` (config snapshot + per-episode records
+ summary), `episodes/ep_<n>.csv` (one trajectory per probed episode), and
`curve.csv` (incumbent trace over BO iterations). Everything is
reproducible from `run.json` alone.
"""

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import mpc, neural_cost, safe_bo, stability
from .dynamics import (
    DiscretePlant,
    NumericsError,
    PendulumParams,
    pendulum_plant,
    rk4_step,
)
from .gp import Dataset as GpDataset
from .safe_bo import BoDataset, Domain, TuneState, bo_step
from .stability import EXPLODED_MARGIN, StabilityEnvelope, stability_margin

SENTINEL_COST = 1e12


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


class SafetyError(RuntimeError):
    """A safety precondition failed (baseline episode unsafe)."""


class IntegrityError(RuntimeError):
    """A stored episode does not replay to its recorded values."""


@dataclass(frozen=True)
class ExperimentConfig:
    # plant and prediction model (deliberately mismatched by default)
    true_plant: PendulumParams = PendulumParams(1.0, 1.0, 1.0, 1.0)
    model_plant: PendulumParams = PendulumParams(2.0, 0.5, 1.2, 1.2)
    ts: float = 0.05
    x0: tuple = (0.0, 0.0, 0.0, 0.0)
    x_d: tuple = (np.pi, np.pi, 0.0, 0.0)
    u_d: float = 0.0
    steps: int = 150             # closed-loop run length M
    horizon: int = 20            # MPC horizon N
    # MPC stage cost and input box
    q_diag: tuple = (10.0, 10.0, 0.1, 0.1)
    r: float = 0.01
    u_min: float = -50.0
    u_max: float = 50.0
    # closed-loop performance weights
    v_diag: tuple = (10.0, 10.0, 0.1, 0.1)
    # input effort is where model mismatch shows up most; weighting it at
    # 1.0 makes the closed-loop metric sensitive to what tuning can fix
    w: float = 1.0
    z_diag: tuple = (100.0, 100.0, 1.0, 1.0)
    # cost network
    layer_sizes: tuple = (4, 7, 1)
    # stability envelope
    rho: float = 2.5
    chi: float = 0.985
    nu: float = 0.2
    # safe BO
    beta: float = 2.0
    delta: float = 0.046
    tau: float = 1.0
    theta_halfwidth: float = 0.5
    theta_growth: float = 1.05
    theta_cap_halfwidth: float = 2.0
    seed_box_scale: float = 0.2
    n_init: int = 100
    n_iter: int = 400
    acceptance_floor: float = 0.01
    refit_every: int = 5
    gp_noise_var: float = 1e-6
    # solver
    solver_max_iters: int = 200
    solver_tol: float = 1e-6
    fd_step: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "x_d", tuple(float(v) for v in self.x_d))
        for name, cond in [
            ("ts", self.ts > 0), ("steps", self.steps >= 1),
            ("horizon", self.horizon >= 1), ("r", self.r > 0),
            ("u_min", self.u_min < self.u_max),
            ("theta_halfwidth", self.theta_halfwidth > 0),
            ("theta_growth", self.theta_growth >= 1.0),
            ("theta_cap_halfwidth", self.theta_cap_halfwidth >= self.theta_halfwidth),
            ("seed_box_scale", 0 < self.seed_box_scale <= 1.0),
            ("n_init", self.n_init >= 1), ("n_iter", self.n_iter >= 0),
            ("acceptance_floor", 0 < self.acceptance_floor <= 1.0),
        ]:
            if not cond:
                raise ConfigError(f"invalid config field {name!r}")

    @property
    def n_params(self) -> int:
        return neural_cost.param_count(neural_cost.NetArchitecture(self.layer_sizes))

    def envelope(self) -> StabilityEnvelope:
        return StabilityEnvelope(self.rho, self.chi, self.nu)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("true_plant", "model_plant"):
            out[key] = dataclasses.asdict(getattr(self, key))
        for key in ("x0", "x_d", "q_diag", "v_diag", "z_diag", "layer_sizes"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("true_plant", "model_plant"):
            if key in kwargs and isinstance(kwargs[key], dict):
                plant_known = {f.name for f in dataclasses.fields(PendulumParams)}
                bad = set(kwargs[key]) - plant_known
                if bad:
                    raise ConfigError(f"unknown {key} keys: {sorted(bad)}")
                try:
                    kwargs[key] = PendulumParams(**kwargs[key])
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
        for key in ("x0", "x_d", "q_diag", "v_diag", "z_diag", "layer_sizes"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class Episode:
    theta: np.ndarray
    states: np.ndarray        # (M+1, 4), or truncated prefix on explosion
    inputs: np.ndarray        # (M,), applied inputs (truncated on explosion)
    performance: float        # G0
    margin: float             # G1
    exploded: bool = False
    truncated_at: Optional[int] = None
    solver_iterations: Optional[list] = None
    wall_time: float = 0.0


def performance(states, inputs, v, w, z, x_d, u_d, exploded: bool = False) -> float:
    """Weighted closed-loop deviation: states under V, inputs under W,
    plus a terminal penalty under Z. Exploded runs get the sentinel cost."""
    if exploded:
        return SENTINEL_COST
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.atleast_1d(np.asarray(inputs, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    w = float(np.atleast_2d(np.asarray(w, dtype=float))[0, 0])
    x_d = np.asarray(x_d, dtype=float)
    if states.shape[1] != x_d.shape[0] or v.shape != (states.shape[1],) * 2:
        raise ValueError("dimension mismatch in performance weights")
    dx = states - x_d
    du = inputs - float(u_d)
    g0 = float(np.sum((dx @ v) * dx)) + w * float(du @ du)
    dterm = states[-1] - x_d
    g0 += float(dterm @ z @ dterm)
    return g0


class EpisodeRunner:
    """Closed-loop episode evaluation for a fixed experiment config.

    Builds the OCP spec (including the Riccati terminal weight) once and
    reuses it across episodes.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.true_plant = pendulum_plant(cfg.true_plant, cfg.ts)
        self.model_plant = pendulum_plant(cfg.model_plant, cfg.ts)
        self.arch = neural_cost.NetArchitecture(cfg.layer_sizes)
        q = np.diag(cfg.q_diag)
        r = np.array([[cfg.r]])
        x_d = np.asarray(cfg.x_d)
        self.qc = neural_cost.QuadraticCost(q, r, x_d, np.array([cfg.u_d]))
        p = mpc.terminal_weight(self.model_plant, x_d, cfg.u_d, q, r)
        self.spec = mpc.OcpSpec(cfg.horizon, self.model_plant, self.qc, self.arch,
                                p, cfg.u_min, cfg.u_max)
        self.solver = mpc.SolverConfig(max_iters=cfg.solver_max_iters,
                                       tol=cfg.solver_tol, fd_step=cfg.fd_step)
        self.env = cfg.envelope()
        self.v = np.diag(cfg.v_diag)
        self.z = np.diag(cfg.z_diag)

    def run(self, theta) -> Episode:
        cfg = self.cfg
        theta = np.asarray(theta, dtype=float)
        x_d = np.asarray(cfg.x_d)
        t0 = time.perf_counter()
        x = np.asarray(cfg.x0, dtype=float)
        states = [x.copy()]
        inputs: List[float] = []
        iters: List[int] = []
        exploded = False
        truncated_at = None
        sol = None
        for k in range(cfg.steps):
            try:
                u, sol = mpc.mpc_policy(self.spec, theta, x, sol, solver=self.solver)
                x = rk4_step(self.true_plant, x, u)
            except NumericsError:
                exploded = True
                truncated_at = k
                break
            inputs.append(u)
            iters.append(sol.iterations)
            states.append(x.copy())
        states_arr = np.array(states)
        inputs_arr = np.array(inputs)
        if exploded:
            g0 = SENTINEL_COST
            g1 = EXPLODED_MARGIN
        else:
            g0 = performance(states_arr, inputs_arr, self.v, cfg.w, self.z,
                             x_d, cfg.u_d)
            g1 = stability_margin(states_arr, self.env, x_d)
        return Episode(theta=theta, states=states_arr, inputs=inputs_arr,
                       performance=g0, margin=g1, exploded=exploded,
                       truncated_at=truncated_at, solver_iterations=iters,
                       wall_time=time.perf_counter() - t0)


def run_episode(cfg: ExperimentConfig, theta) -> Episode:
    """One closed-loop episode of the true plant under the MPC policy."""
    return EpisodeRunner(cfg).run(theta)


def generate_safe_seed(cfg: ExperimentConfig, runner: Optional[EpisodeRunner] = None,
                       collect=None):
    """Initial safe dataset by rejection sampling around theta = 0.

    The zero-network baseline is always row 0 and must be safe; random
    draws come from the initial box shrunk by `seed_box_scale`. Raises
    SafetyError if the baseline violates the envelope, ConfigError if the
    acceptance rate collapses.
    """
    runner = runner or EpisodeRunner(cfg)
    n_p = cfg.n_params
    rng = np.random.default_rng(cfg.seed)
    baseline = runner.run(np.zeros(n_p))
    if baseline.margin < 0:
        raise SafetyError(
            f"the zero-network baseline episode violates the stability envelope "
            f"(margin {baseline.margin:.4f}); loosen (rho, chi, nu) or fix the config")
    if collect is not None:
        collect(baseline)
    thetas = [np.zeros(n_p)]
    rows = [(baseline.performance, baseline.margin)]
    half = cfg.seed_box_scale * cfg.theta_halfwidth
    draws = 0
    budget = max(1000, int(np.ceil(cfg.n_init / cfg.acceptance_floor)))
    accepted = 1
    while accepted < cfg.n_init:
        if draws >= budget:
            raise ConfigError(
                f"safe-seed acceptance rate below {cfg.acceptance_floor:.0%} "
                f"after {draws} draws; shrink seed_box_scale")
        theta = rng.uniform(-half, half, size=n_p)
        draws += 1
        ep = runner.run(theta)
        if ep.margin >= 0:
            thetas.append(theta)
            rows.append((ep.performance, ep.margin))
            accepted += 1
            if collect is not None:
                collect(ep)
    rows = np.array(rows)
    dataset = BoDataset(np.array(thetas), rows[:, 0], rows[:, 1:2])
    acceptance_rate = (accepted - 1) / draws if draws else 1.0
    return dataset, acceptance_rate


def _episode_record(index: int, kind: str, ep: Episode, extra: Optional[dict] = None):
    rec = {
        "id": index,
        "kind": kind,
        "theta": [float(v) for v in ep.theta],
        "g0": ep.performance,
        "g1": ep.margin,
        "exploded": ep.exploded,
        "truncated_at": ep.truncated_at,
        "wall_time": ep.wall_time,
        "csv": f"episodes/ep_{index}.csv",
    }
    if extra:
        rec.update(extra)
    return rec


def _write_episode_csv(path: Path, ep: Episode, cfg: ExperimentConfig):
    env = cfg.envelope()
    x_d = np.asarray(cfg.x_d)
    err = np.linalg.norm(ep.states - x_d, axis=1)
    d0 = err[0]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "psi1", "psi2", "dpsi1", "dpsi2", "u",
                         "err_norm", "envelope"])
        for k in range(ep.states.shape[0]):
            u = repr(float(ep.inputs[k])) if k < ep.inputs.shape[0] else ""
            bound = float(stability.envelope(env, d0, k))
            writer.writerow([k] + [repr(float(v)) for v in ep.states[k]]
                            + [u, repr(float(err[k])), repr(bound)])


class RunLog:
    """Append-style run log persisted as run.json, flushed on every record."""

    def __init__(self, out_dir, cfg: ExperimentConfig):
        self.dir = Path(out_dir)
        (self.dir / "episodes").mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.data = {
            "objective": "minimize total weighted closed-loop deviation "
                         "(lower G0 is better)",
            "config": cfg.to_dict(),
            "episodes": [],
            "iterations": [],
            "summary": None,
        }

    def add_episode(self, kind: str, ep: Episode, extra: Optional[dict] = None) -> int:
        index = len(self.data["episodes"])
        self.data["episodes"].append(_episode_record(index, kind, ep, extra))
        _write_episode_csv(self.dir / "episodes" / f"ep_{index}.csv", ep, self.cfg)
        self.flush()
        return index

    def add_iteration(self, record: dict):
        self.data["iterations"].append(record)
        self.flush()

    def set_summary(self, summary: dict):
        self.data["summary"] = summary
        self.flush()

    def flush(self):
        tmp = self.dir / "run.json.tmp"
        tmp.write_text(json.dumps(self.data, indent=1))
        tmp.replace(self.dir / "run.json")

    def write_curve(self):
        with (self.dir / "curve.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "incumbent_g0", "proposal_g1", "violation"])
            for rec in self.data["iterations"]:
                writer.writerow([rec["n"], repr(rec["incumbent_g0"]),
                                 repr(rec["proposal_g1"]),
                                 int(rec["proposal_g1"] < 0)])


def _kernel_info(model) -> dict:
    return {
        "variance": float(model.kernel.variance),
        "lengthscales": [float(v) for v in model.kernel.lengthscales],
        "noise_var": float(model.dataset.noise_var),
    }


def tune(cfg: ExperimentConfig, out_dir) -> RunLog:
    """Full campaign: safe seed set, then n_iter safe-BO steps.

    The log is flushed after every episode, so a crash leaves a valid
    partial run behind.
    """
    runner = EpisodeRunner(cfg)
    log = RunLog(out_dir, cfg)

    dataset, acceptance_rate = generate_safe_seed(
        cfg, runner, collect=lambda ep: log.add_episode("seed", ep))
    n_p = cfg.n_params
    half = np.full(n_p, cfg.theta_halfwidth)
    cap = np.full(n_p, cfg.theta_cap_halfwidth)
    domain = Domain(-half, half, growth=cfg.theta_growth,
                    cap_lower=-cap, cap_upper=cap)
    state = TuneState(
        dataset=dataset, domain=domain, beta=cfg.beta, tau=cfg.tau,
        rng=np.random.default_rng(cfg.seed + 1),
        refit_every=cfg.refit_every, fit_seed=cfg.seed,
        noise_var=cfg.gp_noise_var,
    )

    def evaluator(theta):
        ep = evaluator.last = runner.run(theta)
        return ep.performance, ep.margin

    for n in range(cfg.n_iter):
        bo_step(state, evaluator)
        ep = evaluator.last
        idx = log.add_episode("bo", ep, extra={
            "iteration": n, "fallback": state.last_proposal_fallback})
        inc_theta, inc_g0 = state.incumbent
        log.add_iteration({
            "n": n,
            "episode_id": idx,
            "g0": ep.performance,
            "g1": ep.margin,
            "incumbent_g0": inc_g0,
            "proposal_g1": ep.margin,
            "fallback": state.last_proposal_fallback,
            "domain_halfwidth": float(state.domain.halfwidth()[0]),
            "gp": {
                "objective": _kernel_info(state.objective_gp),
                "constraints": [_kernel_info(m) for m in state.constraint_gps],
            },
        })

    inc_theta, inc_g0 = state.incumbent
    violations = int(np.sum(dataset.constraints[:, 0] < 0))
    bo_rows = dataset.constraints[len(dataset) - cfg.n_iter:, 0] if cfg.n_iter else []
    log.set_summary({
        "incumbent_theta": [float(v) for v in inc_theta],
        "incumbent_g0": inc_g0,
        "baseline_g0": float(dataset.objectives[0]),
        "seed_acceptance_rate": acceptance_rate,
        "n_episodes": len(log.data["episodes"]),
        "violations_total": violations,
        "violations_bo": int(np.sum(np.asarray(bo_rows) < 0)),
    })
    log.write_curve()
    return log


def load_run(log_dir) -> dict:
    path = Path(log_dir) / "run.json"
    if not path.exists():
        raise ConfigError(f"no run.json under {log_dir}")
    return json.loads(path.read_text())


def replay(log_dir, episode_id: int, tol: float = 1e-9) -> Episode:
    """Re-simulate a stored episode and check G0/G1 against the record."""
    data = load_run(log_dir)
    records = data["episodes"]
    if not 0 <= episode_id < len(records):
        raise IntegrityError(f"episode {episode_id} not present in the log")
    rec = records[episode_id]
    cfg = ExperimentConfig.from_dict(data["config"])
    ep = run_episode(cfg, np.asarray(rec["theta"], dtype=float))
    if abs(ep.performance - rec["g0"]) > tol or abs(ep.margin - rec["g1"]) > tol:
        raise IntegrityError(
            f"episode {episode_id} does not replay: stored (G0={rec['g0']}, "
            f"G1={rec['g1']}), recomputed (G0={ep.performance}, G1={ep.margin})")
    if rec["exploded"] != ep.exploded or rec["truncated_at"] != ep.truncated_at:
        raise IntegrityError(f"episode {episode_id} replay disagrees on truncation")
    return ep
