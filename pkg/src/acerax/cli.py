"""Command-line interface: train, sweep, eval, and gradcheck subcommands.

Value precedence for every setting, lowest to highest: built-in default,
preset, ACERAX_SEED (seed only), config file, command-line flag.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .agent import Config, PRESETS
from .harness import (
    ConfigError,
    OUT_ENV_VAR,
    SEED_ENV_VAR,
    append_eval_log,
    config_from_file,
    config_from_manifest,
    default_out_root,
    eval_checkpoint,
    gradcheck_suite,
    parse_overrides,
    run_name,
    run_sweep,
    train_to_dir,
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for f in fields(Config):
        group.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f"cfg_{f.name}",
            default=None,
            metavar="V",
            help=f"override {f.name}",
        )


def _collect_config(args: argparse.Namespace) -> Config:
    if getattr(args, "from_manifest", None):
        base = config_from_manifest(args.from_manifest)
    elif args.config:
        base = config_from_file(args.config)
    else:
        base = PRESETS[args.preset]()
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            base = replace(base, seed=int(env_seed))
    raw = {
        f.name: getattr(args, f"cfg_{f.name}")
        for f in fields(Config)
        if getattr(args, f"cfg_{f.name}", None) is not None
    }
    cfg = replace(base, **parse_overrides(raw))
    cfg.validate()
    return cfg


def _out_dir(args: argparse.Namespace, cfg: Config) -> Path:
    root = Path(args.out) if args.out else default_out_root()
    return root / (args.name or run_name(cfg))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acerax",
        description="Actor-critic with experience replay and adaptive exploration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = dict(formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    p_train = sub.add_parser("train", help="run one training job", **common)
    p_train.add_argument("--config", help="config file path")
    p_train.add_argument("--from-manifest", help="reuse the config snapshot of a manifest.json")
    p_train.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    p_train.add_argument("--out", help=f"output root (default ${OUT_ENV_VAR} or ./runs)")
    p_train.add_argument("--name", help="run directory name (default <env>_<mode>_seed<seed>)")
    _add_config_flags(p_train)

    p_sweep = sub.add_parser("sweep", help="grid over one parameter x seeds", **common)
    p_sweep.add_argument("--config", help="config file path")
    p_sweep.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    p_sweep.add_argument("--param", required=True, help="config field to sweep")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument(
        "--seeds", default="5", help="seed count N (seeds 0..N-1) or comma-separated list"
    )
    p_sweep.add_argument("--jobs", type=int, default=1, help="concurrent cells")
    p_sweep.add_argument("--out", help=f"output root (default ${OUT_ENV_VAR} or ./runs)")
    p_sweep.add_argument("--name", help="sweep directory name (default sweep_<param>)")
    _add_config_flags(p_sweep)

    p_eval = sub.add_parser("eval", help="deterministic rollouts of a checkpoint", **common)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint path or 'riccati'")
    p_eval.add_argument("--env", default="lqr2")
    p_eval.add_argument("--episodes", type=int, default=5)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--gamma", type=float, default=0.98, help="discount for the riccati gain")
    p_eval.add_argument("--env-noise", type=float, default=None)
    p_eval.add_argument("--out", help="output root for eval_log.csv")

    p_gc = sub.add_parser("gradcheck", help="finite-difference sweep of the three losses", **common)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--draws", type=int, default=100)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_gc.add_argument("--step", type=float, default=1e-6)
    p_gc.add_argument("--alpha", type=float, default=0.1)
    return parser


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _collect_config(args)
    out_dir = _out_dir(args, cfg)
    result = train_to_dir(cfg, out_dir)
    final = result.rows[-1]
    print(f"run directory: {out_dir}")
    print(
        f"final: step {final.step}, mean return {final.mean_return:.4f} "
        f"(std {final.std_return:.4f}), eta range [{final.min_eta:.4f}, {final.max_eta:.4f}]"
    )
    if result.eta_clamp_hits:
        print(f"warning: log-std numerical guard engaged {result.eta_clamp_hits} times")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _collect_config(args)
    values = [v for v in args.values.split(",") if v.strip()]
    if "," in args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    else:
        seeds = list(range(int(args.seeds))) if args.seeds.strip() else []
    root = Path(args.out) if args.out else default_out_root()
    sweep_dir = root / (args.name or f"sweep_{args.param}")
    outcomes, ok = run_sweep(cfg, args.param, values, seeds, sweep_dir, jobs=args.jobs)
    if not outcomes:
        print("empty sweep: nothing to do")
        return 0
    for oc in outcomes:
        if oc.error is None:
            print(
                f"{args.param}={oc.cell.value_text} seed={oc.cell.seed}: "
                f"final mean return {oc.final.mean_return:.4f}"
            )
        else:
            print(f"{args.param}={oc.cell.value_text} seed={oc.cell.seed}: FAILED ({oc.error})")
    print(f"summary: {sweep_dir / 'summary.csv'}")
    return 0 if ok else 1


def cmd_eval(args: argparse.Namespace) -> int:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get(SEED_ENV_VAR, "0"))
    returns = eval_checkpoint(
        args.checkpoint,
        args.env,
        args.episodes,
        seed,
        gamma=args.gamma,
        noise_std=args.env_noise,
    )
    mean, std = float(np.mean(returns)), float(np.std(returns))
    print(f"{args.env} x {args.episodes} episodes (seed {seed}): "
          f"mean return {mean:.4f}, std {std:.4f}")
    root = Path(args.out) if args.out else default_out_root()
    root.mkdir(parents=True, exist_ok=True)
    append_eval_log(root / "eval_log.csv", str(args.checkpoint), args.env, seed, returns)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cases = gradcheck_suite(
        seed=args.seed,
        draws=args.draws,
        tolerance=args.tolerance,
        step=args.step,
        alpha=args.alpha,
    )
    ok = True
    for case in cases:
        status = "PASS" if case.passed else "FAIL"
        print(
            f"{case.name}: max relative error {case.max_rel_error:.3e} "
            f"(draw {case.worst_draw}, coordinate {case.worst_coordinate}) {status}"
        )
        ok = ok and case.passed
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "sweep": cmd_sweep,
        "eval": cmd_eval,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
