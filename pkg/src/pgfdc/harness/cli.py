"""Command-line entry point: ``pgfdc <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..gradcore import CheckpointError
from ..gridworlds import (
    ENV_SPECS,
    WAYPOINTS,
    DemoFormatError,
    EnvError,
    Trajectory,
    bfs_expert,
    load_demo,
    save_demo,
)
from ..intrinsic import estimate_js, grid_mdp, js_divergence, occupancy_oracle, random_policy_table
from ..orchestrator import (
    ALGORITHMS,
    MODES,
    SCHEDULES,
    ConfigError,
    TrainConfig,
    load_discriminator,
    load_policy,
    train,
)
from ..rlcore import TrainingError
from .evaluation import evaluate_discriminator_score, evaluate_policy, file_hash

EXIT_USAGE = 2
OUT_ENV = "PGFDC_OUT"


class UsageError(Exception):
    pass


def _load_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


# CLI flag -> TrainConfig field
_TRAIN_FLAGS = {
    "env": "env_id",
    "algo": "algorithm",
    "mode": "mode",
    "demo": "demo",
    "iters": "iterations",
    "seed": "seed",
    "out": "out",
    "horizon": "horizon",
    "n_envs": "n_envs",
    "lr": "lr",
    "epochs": "epochs",
    "minibatch": "minibatch",
    "lambda_d": "lambda_d",
    "lambda_c": "lambda_c",
    "beta": "beta",
    "disc_steps": "disc_steps",
    "cur_steps": "cur_steps",
    "schedule": "schedule",
    "literal_disc_objective": "literal_disc_objective",
    "sigmoid_inverse": "sigmoid_inverse",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pgfdc", description="PPO whose reward is shaped by a demonstration discriminator and a curiosity model."
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy and write metrics.csv + checkpoint.bin")
    t.add_argument("--config", help="JSON or YAML file of TrainConfig fields; flags override it")
    t.add_argument("--env", choices=sorted(ENV_SPECS), help="environment id")
    t.add_argument("--algo", choices=ALGORITHMS, help="training algorithm")
    t.add_argument("--mode", choices=MODES, help="synchronous or asynchronous learners")
    t.add_argument("--demo", help="demonstration JSON (required for pgfdc)")
    t.add_argument("--iters", type=int, help="number of outer iterations")
    t.add_argument("--seed", type=int, help="run seed")
    t.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    t.add_argument("--horizon", type=int, help="environment steps per iteration")
    t.add_argument("--n-envs", type=int, help="parallel environment copies")
    t.add_argument("--lr", type=float, help="policy learning rate")
    t.add_argument("--epochs", type=int, help="PPO epochs per iteration")
    t.add_argument("--minibatch", type=int, help="PPO minibatch size")
    t.add_argument("--lambda-d", type=float, help="demonstration reward weight")
    t.add_argument("--lambda-c", type=float, help="curiosity reward weight")
    t.add_argument("--beta", type=float, help="forward-loss weight in the curiosity loss")
    t.add_argument("--disc-steps", type=int, help="discriminator steps per iteration")
    t.add_argument("--cur-steps", type=int, help="curiosity steps per iteration")
    t.add_argument("--schedule", choices=SCHEDULES, help="async worker interleaving")
    t.add_argument(
        "--literal-disc-objective",
        action="store_true",
        default=None,
        help="train the discriminator on E[1 - log D] for generated pairs",
    )
    t.add_argument(
        "--sigmoid-inverse", action="store_true", default=None, help="per-class sigmoid inverse-model head"
    )

    d = sub.add_parser("demo-generate", help="write a BFS expert demonstration")
    d.add_argument("--env", required=True, choices=sorted(ENV_SPECS))
    d.add_argument("--out", required=True, help="destination JSON path")
    d.add_argument(
        "--variant",
        choices=("demo-1", "demo-2"),
        default="demo-1",
        help="demo-1: shortest path; demo-2: shortest path through a fixed waypoint",
    )

    e = sub.add_parser("eval", help="average extrinsic return of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", required=True, choices=sorted(ENV_SPECS))
    e.add_argument("--seeds", type=int, default=10)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--disc-checkpoint", help="also report the mean discriminator score")
    e.add_argument("--out", help="write the EvalReport JSON here instead of stdout")

    s = sub.add_parser("eval-disc", help="average discriminator score of a policy, demo or random play")
    s.add_argument("--disc-checkpoint", required=True, help="checkpoint holding discriminator/ parameters")
    s.add_argument("--source", required=True, help="policy checkpoint, demo JSON, or 'random'")
    s.add_argument("--env", required=True, choices=sorted(ENV_SPECS))
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--episodes", type=int, default=10)

    o = sub.add_parser("oracle-check", help="compare a trained-discriminator JS estimate with the exact value")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--gamma", type=float, default=0.9)
    o.add_argument("--samples", type=int, default=20_000)
    o.add_argument("--steps", type=int, default=400)

    r = sub.add_parser("report", help="render learning curves from run directories")
    r.add_argument("runs", nargs="+", help="run directories containing metrics.csv")
    r.add_argument("--out", required=True, help="directory for curves.csv and learning_curves.png")
    r.add_argument("--window", type=int, default=10, help="moving-average window")
    r.add_argument("--title", default="")
    return p


def cmd_train(args) -> int:
    cfg_dict = _load_config_file(args.config) if args.config else {}
    for flag, key in _TRAIN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg_dict[key] = val
    if not cfg_dict.get("out") and os.environ.get(OUT_ENV):
        cfg_dict["out"] = os.environ[OUT_ENV]
    if not cfg_dict.get("out"):
        raise UsageError(f"train needs --out (or ${OUT_ENV})")
    cfg = TrainConfig.from_dict(cfg_dict).validate()
    if cfg.demo and not Path(cfg.demo).exists():
        raise UsageError(f"demo file not found: {cfg.demo}")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory not writable: {out} ({exc})") from exc
    result = train(cfg)
    last = result.rows[-1]
    print(f"wrote {result.metrics_path} and {result.checkpoint_path}; final mean return {last.mean_return:.4f}")
    return 0


def cmd_demo(args) -> int:
    waypoint = WAYPOINTS[args.env] if args.variant == "demo-2" else None
    traj = bfs_expert(args.env, waypoint)
    traj.meta["variant"] = args.variant
    save_demo(traj, args.out)
    print(f"wrote {args.out}: {len(traj)} steps, return {traj.total_return:.4f}")
    return 0


def _need_file(path: str) -> None:
    if not Path(path).exists():
        raise UsageError(f"file not found: {path}")


def cmd_eval(args) -> int:
    _need_file(args.checkpoint)
    policy, meta = load_policy(args.checkpoint)
    if meta.get("env_id") not in (None, args.env):
        raise UsageError(f"checkpoint was trained on {meta['env_id']}, not {args.env}")
    disc = None
    if args.disc_checkpoint:
        _need_file(args.disc_checkpoint)
        disc, _ = load_discriminator(args.disc_checkpoint)
    report = evaluate_policy(
        policy, args.env, args.seeds, args.episodes, disc=disc, checkpoint_hash=file_hash(args.checkpoint)
    )
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}: mean return {report.mean:.4f}")
    else:
        print(text)
    return 0


def cmd_eval_disc(args) -> int:
    _need_file(args.disc_checkpoint)
    disc, _ = load_discriminator(args.disc_checkpoint)
    source: object
    if args.source == "random":
        source = "random"
    else:
        _need_file(args.source)
        if args.source.endswith(".json"):
            source = load_demo(args.source)
        else:
            source, _ = load_policy(args.source)
    score = evaluate_discriminator_score(source, disc, args.env, args.seeds, args.episodes)
    label = args.source if not isinstance(source, Trajectory) else f"demo {args.source}"
    print(json.dumps({"env_id": args.env, "source": label, "mean_disc_score": score}))
    return 0


def cmd_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    mdp = grid_mdp(3)
    p = occupancy_oracle(mdp, random_policy_table(9, 4, rng), args.gamma).normalized()
    q = occupancy_oracle(mdp, random_policy_table(9, 4, rng), args.gamma).normalized()
    exact = js_divergence(p, q)
    trace = estimate_js(p, q, rng, n_samples=args.samples, steps=args.steps)
    worst = max(e for _, e in trace) - exact
    final = trace[-1][1]
    ok = worst <= 0.05 and abs(final - exact) <= 0.1
    print(
        json.dumps(
            {"exact_js": exact, "final_estimate": final, "max_overshoot": worst, "within_bounds": ok}, indent=2
        )
    )
    return 0 if ok else 1


def cmd_report(args) -> int:
    from .plotting import learning_curves

    for d in args.runs:
        _need_file(str(Path(d) / "metrics.csv"))
    csv_path, png_path = learning_curves(args.runs, args.out, window=args.window, title=args.title)
    print(f"wrote {csv_path} and {png_path}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "demo-generate": cmd_demo,
    "eval": cmd_eval,
    "eval-disc": cmd_eval_disc,
    "oracle-check": cmd_oracle,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, DemoFormatError, EnvError, CheckpointError, KeyError) as exc:
        print(f"pgfdc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, OSError) as exc:
        print(f"pgfdc {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
