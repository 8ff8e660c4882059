"""Command-line entry point: ``dsacc train | eval | solve``.

Exit codes: 0 success, 1 environment fault, 2 usage/config error,
3 numerical abort. Log verbosity comes from ``DSACC_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .agent import AgentConfig, Variant, evaluate, load_actor, train
from .envs import make_env, parse_shift
from .errors import EnvFault, NumericalError, UsageError
from .maxent import ConstraintTarget, QVector, SolveStatus, constrained_policy, solve_lambda

EXIT_OK, EXIT_ENV, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_VERSION = 1
# clipped solves whose residual exceeds this are reported as infeasible
INFEASIBLE_RESIDUAL = 1e-9
# table-driven hyperparameters echoed into every manifest
TABLE_FIELDS = ("lr", "optimizer", "batch_size", "gamma", "buffer_capacity", "hidden_layers",
                "activation", "tau", "entropy_discount")

log = logging.getLogger("dsacc")


def _floats(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"could not parse a number list from {text!r}") from None
    if not values:
        raise UsageError("empty value list")
    return values


def parse_seeds(text: str, base: int = 0) -> list[int]:
    """``"3"`` means three seeds counting up from ``base``; ``"0,4,9"`` is an explicit list."""
    text = text.strip()
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError:
        raise UsageError(f"bad --seeds value {text!r}") from None
    if n < 1:
        raise UsageError("--seeds count must be >= 1")
    return [base + k for k in range(n)]


def parse_variants(text: str) -> list[Variant]:
    if text.strip().lower() == "all":
        return list(Variant)
    try:
        return [Variant(v.strip().lower()) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"unknown variant in {text!r}; use dsac, dsac-m or dsac-v") from None


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    for key, attr in (("env", "env"), ("total_steps", "steps"), ("aggregation", "aggregation")):
        value = getattr(args, attr)
        if value is not None:
            out[key] = value
    return out


def load_config(args) -> AgentConfig:
    overrides = _overrides(args)
    if args.config:
        return AgentConfig.load(args.config, overrides)
    return AgentConfig.from_mapping(overrides)


def write_manifest(out: Path, config: AgentConfig, variants, seeds) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    runs = {
        v.value: {str(s): str(Path(v.value) / f"seed{s}") for s in seeds} for v in variants
    }
    snapshot = config.to_dict()
    manifest = {
        "format_version": MANIFEST_VERSION,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": snapshot,
        "config_text": config.to_text(),
        "hyperparameters": {k: snapshot[k] for k in TABLE_FIELDS},
        "variants": [v.value for v in variants],
        "seeds": seeds,
        "artifacts": {
            "runs": runs,
            "metrics": ["metrics.jsonl", "metrics.csv"],
            "checkpoints": "checkpoints/final.json",
        },
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def cmd_train(args) -> int:
    config = load_config(args)
    variants = parse_variants(args.variant) if args.variant else [config.variant]
    seeds = parse_seeds(args.seeds, config.seed) if args.seeds else [config.seed]
    out = Path(args.out)
    write_manifest(out, config, variants, seeds)
    summary = []
    for variant in variants:
        for seed in seeds:
            run_cfg = config.replace(variant=variant, seed=seed)
            run_dir = out / variant.value / f"seed{seed}"
            log.info("training %s seed %d -> %s", variant.label, seed, run_dir)
            try:
                result = train(run_cfg, out_dir=run_dir)
            except NumericalError as exc:
                path = _dump(run_dir / "abort.json", str(exc), exc.payload)
                print(f"numerical abort: {exc}; diagnostics in {path}", file=sys.stderr)
                return EXIT_NUMERIC
            except EnvFault as exc:
                path = _dump(run_dir / "abort.json", str(exc), exc.dump)
                print(f"environment fault: {exc}; state dump in {path}", file=sys.stderr)
                return EXIT_ENV
            last = result.records[-1]
            summary.append({"variant": variant.value, "seed": seed, "step": last["step"],
                            "eval_return_mean": last["eval_return_mean"]})
    for row in summary:
        print(json.dumps(row))
    return EXIT_OK


def _dump(path: Path, message: str, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"error": message, "payload": payload}, indent=2, default=str) + "\n")
    return path


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    actor, extra = load_actor(ckpt)
    env_text = args.env or extra.get("config", {}).get("env")
    if not env_text:
        raise UsageError("no --env given and the checkpoint does not record one")
    shift = parse_shift(args.shift)
    env = make_env(env_text, shift=shift)
    if env.observation_dim != actor.spec.input_dim or env.action_count != actor.spec.output_dim:
        raise UsageError(
            f"dimension mismatch: env {env_text!r} has obs_dim={env.observation_dim}, "
            f"actions={env.action_count}; checkpoint actor expects obs_dim={actor.spec.input_dim}, "
            f"actions={actor.spec.output_dim}"
        )
    # defaults reproduce the checkpoint's own final evaluation
    seed = args.seed if args.seed is not None else extra.get("eval_seed", 0)
    episodes = args.episodes or extra.get("config", {}).get("eval_episodes", 10)
    stats = evaluate(actor, env, episodes, args.mode, seed=seed)
    record = {"checkpoint": str(ckpt), "env": env_text, "shift": str(shift) if shift else None,
              "mode": args.mode, "seed": seed, "episodes": episodes,
              "return_mean": stats.mean, "return_std": stats.std}
    line = json.dumps(record)
    print(line)
    out = Path(args.out) if args.out else ckpt.parent / "eval.jsonl"
    with out.open("a") as f:
        f.write(line + "\n")
    return EXIT_OK


def cmd_solve(args) -> int:
    q = _floats(args.q)
    qv = QVector(q, args.alpha)
    if args.variance:
        if args.center is None:
            raise UsageError("--variance needs --center")
        ct = ConstraintTarget.variance(args.target, args.center)
    else:
        ct = ConstraintTarget.mean(args.target)
    sol = solve_lambda(qv, ct)
    policy = constrained_policy(qv, ct, sol.lam)
    print(f"lambda     = {sol.lam!r}")
    print(f"status     = {sol.status.value}")
    print(f"residual   = {sol.residual!r}")
    print(f"iterations = {sol.iterations}")
    print("policy     = " + ",".join(repr(float(p)) for p in policy))
    clipped = sol.status in (SolveStatus.CLIPPED_LOW, SolveStatus.CLIPPED_HIGH)
    if clipped and abs(sol.residual) > INFEASIBLE_RESIDUAL * max(1.0, abs(args.target)):
        print(f"error: target {args.target!r} is outside the reachable range "
              f"(residual {sol.residual!r} at lambda={sol.lam!r})", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsacc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one or more variants over seeds")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--variant", help="dsac, dsac-m, dsac-v, a comma list, or all")
    p.add_argument("--env", help='environment id, e.g. "chain:n=10,slip=0.1"')
    p.add_argument("--steps", type=int, help="total environment steps per run")
    p.add_argument("--seeds", help="seed count (N) or explicit comma list")
    p.add_argument("--aggregation", choices=["min", "avg"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--out", default="runs", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint, optionally shifted")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", help="override the env recorded in the checkpoint")
    p.add_argument("--shift", help='observation shift, e.g. "speckle:0.3:seed=7"')
    p.add_argument("--episodes", type=int, help="default: the checkpoint's eval_episodes")
    p.add_argument("--mode", choices=["greedy", "stochastic"], default="greedy")
    p.add_argument("--seed", type=int, help="default: the checkpoint's evaluation seed")
    p.add_argument("--out", help="JSONL file to append the summary to")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="solve for a Lagrange multiplier on one Q vector")
    p.add_argument("--q", required=True, help="comma-separated action values")
    p.add_argument("--alpha", type=float, default=1.0)
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--mean", action="store_true")
    kind.add_argument("--variance", action="store_true")
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--center", type=float)
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DSACC_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc} {json.dumps(exc.payload, default=str)}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
