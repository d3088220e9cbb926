"""Command-line entry points: simulate / tune / seed-set / replay.

Exit codes: 0 success, 2 config error, 3 safety precondition failure,
4 integrity error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ConfigError, ExperimentConfig, IntegrityError, SafetyError


def _load_theta(spec: str, n_params: int) -> np.ndarray:
    if spec == "zero":
        return np.zeros(n_params)
    try:
        data = json.loads(Path(spec).read_text())
        theta = np.asarray(data, dtype=float).reshape(-1)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read theta from {spec}: {exc}") from exc
    if theta.shape[0] != n_params:
        raise ConfigError(
            f"theta has {theta.shape[0]} entries, config expects {n_params}")
    return theta


def _cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    theta = _load_theta(args.theta, cfg.n_params)
    ep = harness.run_episode(cfg, theta)
    log = harness.RunLog(args.out, cfg)
    log.add_episode("single", ep)
    log.set_summary({"g0": ep.performance, "g1": ep.margin,
                     "exploded": ep.exploded})
    print(f"episode: G0={ep.performance:.6g} G1={ep.margin:.6g} "
          f"exploded={ep.exploded}")
    return 0


def _cmd_seed_set(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    log = harness.RunLog(args.out, cfg)
    dataset, rate = harness.generate_safe_seed(
        cfg, collect=lambda ep: log.add_episode("seed", ep))
    log.set_summary({"n_seed": len(dataset), "acceptance_rate": rate})
    print(f"collected {len(dataset)} safe seeds (acceptance rate {rate:.1%})")
    return 0


def _cmd_tune(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    log = harness.tune(cfg, args.out)
    summary = log.data["summary"]
    print(f"campaign done: baseline G0={summary['baseline_g0']:.6g}, "
          f"incumbent G0={summary['incumbent_g0']:.6g}, "
          f"violations={summary['violations_total']}")
    return 0


def _cmd_replay(args) -> int:
    ep = harness.replay(args.log, args.episode)
    print(f"episode {args.episode} replays: G0={ep.performance:.6g} "
          f"G1={ep.margin:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safempc",
        description="Safe BO tuning of a neural-cost MPC on a double pendulum")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a single closed-loop episode")
    p.add_argument("--config", required=True)
    p.add_argument("--theta", default="zero",
                   help="path to a JSON array of parameters, or 'zero'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("seed-set", help="generate the initial safe dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_seed_set)

    p = sub.add_parser("tune", help="run the full tuning campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("replay", help="re-simulate a stored episode")
    p.add_argument("--log", required=True)
    p.add_argument("--episode", type=int, required=True)
    p.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SafetyError as exc:
        print(f"safety precondition failed: {exc}", file=sys.stderr)
        return 3
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
