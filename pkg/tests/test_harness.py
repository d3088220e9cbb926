import json

import numpy as np
import pytest

from safempc import harness as hn
from safempc.dynamics import PendulumParams


def small_config(**kw):
    """Config sized for fast closed-loop tests."""
    base = dict(steps=30, horizon=10, n_init=3, n_iter=2, seed=0,
                refit_every=1)
    base.update(kw)
    return hn.ExperimentConfig(**base)


class TestPerformance:
    def test_hand_computed_value(self):
        # single step: x0=(1,0), x1=(0.5,0), u0=2, V=I, W=1, Z=2I, x_d=0
        states = np.array([[1.0, 0.0], [0.5, 0.0]])
        inputs = np.array([2.0])
        got = hn.performance(states, inputs, np.eye(2), 1.0, 2.0 * np.eye(2),
                             np.zeros(2), 0.0)
        # 1 + 0.25 (states) + 4 (input) + 2*0.25 (terminal) = 5.75
        assert got == pytest.approx(5.75)

    def test_linear_in_v(self):
        rng = np.random.default_rng(0)
        states = rng.normal(size=(6, 4))
        inputs = rng.normal(size=5)
        v = np.diag(rng.uniform(0.5, 2.0, size=4))
        args = (inputs, 3.0 * v, 0.0, np.zeros((4, 4)), np.zeros(4), 0.0)
        got = hn.performance(states, *args)
        base = hn.performance(states, inputs, v, 0.0, np.zeros((4, 4)),
                              np.zeros(4), 0.0)
        assert got == pytest.approx(3.0 * base, rel=1e-12)

    def test_zero_at_setpoint(self):
        x_d = np.array([np.pi, np.pi, 0.0, 0.0])
        states = np.tile(x_d, (10, 1))
        got = hn.performance(states, np.zeros(9), np.eye(4), 1.0, np.eye(4),
                             x_d, 0.0)
        assert got == 0.0

    def test_exploded_sentinel(self):
        got = hn.performance(np.zeros((2, 4)), np.zeros(1), np.eye(4), 1.0,
                             np.eye(4), np.zeros(4), 0.0, exploded=True)
        assert got == hn.SENTINEL_COST

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hn.performance(np.zeros((2, 4)), np.zeros(1), np.eye(3), 1.0,
                           np.eye(4), np.zeros(4), 0.0)


class TestConfig:
    def test_round_trip(self):
        cfg = small_config(rho=2.0, n_init=7)
        again = hn.ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_key_rejected(self):
        data = small_config().to_dict()
        data["horizan"] = 25
        with pytest.raises(hn.ConfigError):
            hn.ExperimentConfig.from_dict(data)

    def test_unknown_nested_plant_key_rejected(self):
        data = small_config().to_dict()
        data["true_plant"]["mass3"] = 1.0
        with pytest.raises(hn.ConfigError):
            hn.ExperimentConfig.from_dict(data)

    def test_invalid_value_rejected(self):
        with pytest.raises(hn.ConfigError):
            hn.ExperimentConfig(ts=-0.05)
        with pytest.raises(hn.ConfigError):
            hn.ExperimentConfig(u_min=10.0, u_max=-10.0)

    def test_from_json(self, tmp_path):
        cfg = small_config(beta=1.5)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert hn.ExperimentConfig.from_json(path) == cfg

    def test_bad_json_raises_config_error(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(hn.ConfigError):
            hn.ExperimentConfig.from_json(path)

    def test_n_params(self):
        assert hn.ExperimentConfig().n_params == 43


class TestEpisode:
    def test_baseline_is_stable_and_deterministic(self):
        cfg = small_config()
        runner = hn.EpisodeRunner(cfg)
        a = runner.run(np.zeros(cfg.n_params))
        b = runner.run(np.zeros(cfg.n_params))
        assert a.margin >= 0
        assert not a.exploded
        assert a.performance == b.performance
        assert a.margin == b.margin
        assert np.array_equal(a.states, b.states)

    def test_shapes(self):
        cfg = small_config()
        ep = hn.run_episode(cfg, np.zeros(cfg.n_params))
        assert ep.states.shape == (cfg.steps + 1, 4)
        assert ep.inputs.shape == (cfg.steps,)
        assert np.all(ep.inputs >= cfg.u_min) and np.all(ep.inputs <= cfg.u_max)

    def test_episode_metrics_consistent(self):
        cfg = small_config()
        runner = hn.EpisodeRunner(cfg)
        ep = runner.run(np.zeros(cfg.n_params))
        g0 = hn.performance(ep.states, ep.inputs, runner.v, cfg.w, runner.z,
                            np.asarray(cfg.x_d), cfg.u_d)
        assert ep.performance == g0


class TestSafeSeed:
    def test_postconditions(self):
        cfg = small_config(n_init=4)
        runner = hn.EpisodeRunner(cfg)
        ds, rate = hn.generate_safe_seed(cfg, runner)
        assert len(ds) == 4
        assert np.array_equal(ds.thetas[0], np.zeros(cfg.n_params))
        assert np.all(ds.constraints[:, 0] >= 0)
        assert 0.0 < rate <= 1.0
        half = cfg.seed_box_scale * cfg.theta_halfwidth
        assert np.all(np.abs(ds.thetas) <= half + 1e-12)

    def test_deterministic(self):
        cfg = small_config(n_init=3)
        runner = hn.EpisodeRunner(cfg)
        a, _ = hn.generate_safe_seed(cfg, runner)
        b, _ = hn.generate_safe_seed(cfg, runner)
        assert np.array_equal(a.thetas, b.thetas)
        assert np.array_equal(a.objectives, b.objectives)

    def test_unsafe_baseline_raises(self):
        # an envelope floor this tight is violated by the baseline transient
        cfg = small_config(rho=0.01, nu=0.001)
        with pytest.raises(hn.SafetyError):
            hn.generate_safe_seed(cfg)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config()
    hn.tune(cfg, out)
    return out


class TestTuneAndReplay:
    def test_artifacts_exist(self, run_dir):
        assert (run_dir / "run.json").exists()
        assert (run_dir / "curve.csv").exists()
        data = hn.load_run(run_dir)
        assert data["summary"] is not None
        n = data["summary"]["n_episodes"]
        assert n == len(data["episodes"])
        for i in range(n):
            assert (run_dir / "episodes" / f"ep_{i}.csv").exists()

    def test_summary_contents(self, run_dir):
        data = hn.load_run(run_dir)
        s = data["summary"]
        assert s["incumbent_g0"] <= s["baseline_g0"]
        assert len(s["incumbent_theta"]) == 43
        assert s["violations_total"] >= 0

    def test_curve_rows(self, run_dir):
        lines = (run_dir / "curve.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,incumbent_g0,proposal_g1,violation"
        assert len(lines) == 1 + 2  # header + n_iter

    def test_episode_csv_columns(self, run_dir):
        lines = (run_dir / "episodes" / "ep_0.csv").read_text().splitlines()
        assert lines[0] == "k,psi1,psi2,dpsi1,dpsi2,u,err_norm,envelope"
        # one row per state, final row has no input
        assert len(lines) == 1 + 30 + 1
        assert lines[-1].split(",")[5] == ""

    def test_replay_passes(self, run_dir):
        ep = hn.replay(run_dir, 0)
        assert ep.margin >= 0

    def test_replay_detects_tampering(self, run_dir, tmp_path):
        import shutil
        tampered = tmp_path / "tampered"
        shutil.copytree(run_dir, tampered)
        data = json.loads((tampered / "run.json").read_text())
        data["episodes"][0]["g0"] += 1e-3
        (tampered / "run.json").write_text(json.dumps(data))
        with pytest.raises(hn.IntegrityError):
            hn.replay(tampered, 0)

    def test_replay_missing_episode(self, run_dir):
        with pytest.raises(hn.IntegrityError):
            hn.replay(run_dir, 10 ** 6)

    def test_load_run_missing(self, tmp_path):
        with pytest.raises(hn.ConfigError):
            hn.load_run(tmp_path / "nope")
