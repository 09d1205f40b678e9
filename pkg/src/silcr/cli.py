"""Command-line entry point.

    silcr train --agent silcr --env pointgoal --episodic true --seed 7
    silcr eval --checkpoint runs/x/checkpoint.npz --env pendulum
    silcr record-demos --checkpoint runs/x/checkpoint.npz --env pendulum --out demos.jsonl
    silcr ablate --env pointgoal --episodic true --capacities 1000,5000,1000000
    silcr aggregate runs/*/metrics.jsonl --out aggregate.jsonl

Run settings come from defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags (highest precedence).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from silcr.agents import load_checkpoint
from silcr.harness import (
    DEFAULT_SEED_COUNT,
    RunConfig,
    aggregate_seeds,
    evaluate,
    greedy_policy,
    record_demos,
    run_ablation,
    train,
    write_aggregate,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one diagnostic line instead of usage + message
        raise UsageError(message)


def parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(float(v)) for v in str(text).replace(" ", "").split(",") if v)


def parse_count(text: str) -> int:
    # accepts 1e6 and 150000 alike
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


_FIELD_TYPES = {
    "agent": str, "env": str, "episodic": parse_bool, "total_steps": parse_count, "seed": int,
    "batch_size": parse_count, "gamma": float, "tau": float, "alpha": float, "lr_actor": float,
    "lr_critic": float, "online_capacity": parse_count, "expert_capacity": parse_count,
    "hidden": parse_int_list, "warmup_steps": parse_count, "eval_interval": parse_count,
    "eval_episodes": parse_count, "demos": str, "q_count": int, "out_dir": str,
}
assert set(_FIELD_TYPES) == {f.name for f in dataclasses.fields(RunConfig)}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    for name in _FIELD_TYPES:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar=name.upper())


def _convert(name: str, raw, origin: str):
    try:
        return _FIELD_TYPES[name](raw)
    except ValueError:
        flag = "--" + name.replace("_", "-")
        raise UsageError(f"invalid value {raw!r} for {flag} ({origin})") from None


def read_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = key.lstrip("-").replace("-", "_")
        if name not in _FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[name] = _convert(name, raw, f"{path}:{lineno}")
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in _FIELD_TYPES:
        raw = getattr(args, name)
        if raw is not None:
            values[name] = _convert(name, raw, "command line")
    return RunConfig(**values)


def default_out_dir(cfg: RunConfig) -> str:
    mode = "episodic" if cfg.episodic else "dense"
    return str(Path("runs") / f"{cfg.agent}-{cfg.env}-{mode}-seed{cfg.seed}")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="silcr", description="SILCR / SAC / SQIL on built-in control tasks")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one agent")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint's deterministic policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("record-demos", help="record demonstration episodes from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="SILCR runs over several expert buffer capacities")
    _add_run_flags(p)
    p.add_argument("--capacities", required=True, help="comma-separated transition counts")
    p.add_argument("--seeds", type=int, default=DEFAULT_SEED_COUNT, help="seeds per capacity, counting up from --seed")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("aggregate", help="mean/std curves across seeds")
    p.add_argument("files", nargs="+")
    p.add_argument("--out", required=True)
    return parser


def _print_record(rec) -> None:
    print(f"step {rec.env_step:>8d}  eval {rec.episodic_return_eval:10.2f}  "
          f"train {rec.episodic_return_train:10.2f}  q_loss {rec.q_loss:.4f}", flush=True)


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "train":
        cfg = build_config(args)
        cfg.validate()
        out = cfg.out_dir or default_out_dir(cfg)
        res = train(cfg, out_dir=out, progress=_print_record)
        print(f"wrote {out}/metrics.jsonl and {out}/checkpoint.npz (final eval {res.final_eval:.2f})")
    elif args.command == "eval":
        if not Path(args.checkpoint).is_file():
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        core, _, _ = load_checkpoint(args.checkpoint)
        mean, std, _ = evaluate(greedy_policy(core), args.env, args.episodes, args.seed)
        print(json.dumps({"mean": mean, "std": std, "episodes": args.episodes}))
    elif args.command == "record-demos":
        if not Path(args.checkpoint).is_file():
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        mean, trajs = record_demos(args.checkpoint, args.env, args.episodes, args.out, args.seed)
        print(f"recorded {len(trajs)} episodes to {args.out}; mean demo return {mean:.4f}")
    elif args.command == "ablate":
        cfg = build_config(args)
        try:
            caps = parse_int_list(args.capacities)
        except ValueError:
            raise UsageError(f"invalid value {args.capacities!r} for --capacities") from None
        if not caps:
            raise UsageError("--capacities must list at least one value")
        cfg = cfg.replace(agent="silcr")
        cfg.validate()
        root = cfg.out_dir or str(Path("runs") / f"ablation-{cfg.env}-seed{cfg.seed}")
        rows = run_ablation(cfg, caps, out_root=root, workers=args.workers, n_seeds=args.seeds)
        for cap in caps:
            finals = [r["final_eval"] for r in rows if r["expert_capacity"] == cap]
            print(f"expert_capacity {cap:>9d}  final eval {np.mean(finals):10.2f} +- {np.std(finals):.2f}"
                  f"  ({len(finals)} seeds)")
        Path(root).mkdir(parents=True, exist_ok=True)
        (Path(root) / "ablation.json").write_text(json.dumps(rows, indent=1) + "\n")
    elif args.command == "aggregate":
        write_aggregate(aggregate_seeds(args.files), args.out)
        print(f"wrote {args.out}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = make_parser().parse_args(argv)
        return dispatch(args)
    except UsageError as exc:
        print(f"silcr: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"silcr: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
