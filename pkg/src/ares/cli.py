"""Command-line front end: plan | eval | replay | render.

Exit codes: 0 ok, 1 usage/config error, 2 planning failure,
3 verification mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any, Optional

import numpy as np

from .config import (
    ConfigError,
    build_eval_params,
    load_config_file,
    params_digest,
    parse_value,
)
from .engine import ares_plan, write_level_log
from .flock import ConfigGenerationError, flock_mdp, random_initial
from .harness import (
    format_summary_text,
    required_samples,
    run_experiments,
    summarize,
    write_records_csv,
    write_summary_json,
)
from .mdp import plan_from_doc, save_plan
from .render import render_plan_frames

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PLAN_FAILURE = 2
EXIT_MISMATCH = 3

WORKERS_ENV = "ARES_WORKERS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; this CLI reserves 2 for
    # planning failure, so usage problems are rethrown and mapped to 1.
    def error(self, message: str):
        raise _UsageError(message)


def _seed_type(raw: str) -> int:
    value = int(raw)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="flat dotted-key JSON config file")
    parser.add_argument("--seed", type=_seed_type, help="master seed (64-bit)")
    parser.add_argument("--out", metavar="PATH", help="output path")
    parser.add_argument("--workers", type=int, help="worker process count")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key, e.g. --set flock.v_max=1.5",
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="ares", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="synthesize one plan from a random spawn")
    _common_flags(p_plan)
    p_plan.add_argument("--birds", type=int, help="flock size")
    p_plan.add_argument("--phi", type=float, help="success cost threshold")
    p_plan.add_argument("--budget-s", type=float, help="wall-clock budget (seconds)")
    p_plan.set_defaults(func=cmd_plan)

    p_eval = sub.add_parser("eval", help="run a Monte-Carlo evaluation campaign")
    _common_flags(p_eval)
    p_eval.add_argument("--birds", type=int, help="flock size")
    p_eval.add_argument("-N", "--num-experiments", type=int, dest="n", help="explicit N override")
    p_eval.add_argument("--epsilon", type=float, help="absolute error")
    p_eval.add_argument("--delta", type=float, help="one minus confidence")
    p_eval.add_argument("--budget-s", type=float, help="per-experiment budget (seconds)")
    p_eval.add_argument("--summary", metavar="PATH", help="summary JSON path")
    p_eval.add_argument(
        "--no-timing",
        action="store_true",
        help="record time_s as 0.0 for byte-stable outputs",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_replay = sub.add_parser("replay", help="verify a plan file by re-execution")
    _common_flags(p_replay)
    p_replay.add_argument("plan_path", help="plan JSON produced by `ares plan`")
    p_replay.set_defaults(func=cmd_replay)

    p_render = sub.add_parser("render", help="draw SVG frames for a plan file")
    _common_flags(p_render)
    p_render.add_argument("plan_path", help="plan JSON produced by `ares plan`")
    p_render.set_defaults(func=cmd_render)

    return parser


def _flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for pair in args.set:
        if "=" not in pair:
            raise _UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        values[key.strip()] = raw.strip()
    if getattr(args, "birds", None) is not None:
        values["eval.b"] = args.birds
    if getattr(args, "phi", None) is not None:
        values["ares.phi"] = args.phi
    if getattr(args, "budget_s", None) is not None:
        values["eval.budget_s"] = args.budget_s
    if getattr(args, "n", None) is not None:
        values["eval.n"] = args.n
    if getattr(args, "epsilon", None) is not None:
        values["eval.epsilon"] = args.epsilon
    if getattr(args, "delta", None) is not None:
        values["eval.delta"] = args.delta
    if getattr(args, "no_timing", False):
        values["eval.measure_time"] = False
    if args.seed is not None:
        values["eval.master_seed"] = args.seed
    if args.workers is not None:
        values["eval.workers"] = args.workers
    return values


def _resolve_params(args: argparse.Namespace):
    file_layer = load_config_file(args.config) if args.config else {}
    env_layer: dict[str, Any] = {}
    if args.workers is None and os.environ.get(WORKERS_ENV):
        try:
            env_layer["eval.workers"] = int(os.environ[WORKERS_ENV])
        except ValueError as exc:
            raise ConfigError(
                f"{WORKERS_ENV} must be an integer, got "
                f"{os.environ[WORKERS_ENV]!r}"
            ) from exc
    # --set strings are parsed through the same converters as file values
    flag_layer = {}
    for key, raw in _flag_overrides(args).items():
        flag_layer[key] = parse_value(key, raw) if isinstance(raw, str) else raw
    return build_eval_params(file_layer, env_layer, flag_layer)


def _with_suffix(path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + suffix


def cmd_plan(args: argparse.Namespace) -> int:
    cfg = _resolve_params(args)
    seed = cfg.master_seed
    mdp = flock_mdp(cfg.flock, cfg.b)
    rng = np.random.default_rng(seed)
    c0 = random_initial(rng, cfg.b, cfg.flock)
    outcome = ares_plan(
        mdp,
        c0,
        cfg.ares,
        master_seed=seed,
        pso_params=cfg.pso,
        budget_s=cfg.budget_s,
    )
    out_path = args.out or "plan.json"
    levels_path = _with_suffix(out_path, ".levels.csv")
    write_level_log(levels_path, outcome.levels)
    if not outcome.success:
        reason = "wall-clock budget exhausted" if outcome.budget_exhausted else (
            "level or schedule budget exhausted"
        )
        print(
            f"plan: failure ({reason}) after {outcome.levels_used} levels, "
            f"best cost {outcome.final_cost:.6g}; level log: {levels_path}"
        )
        return EXIT_PLAN_FAILURE
    digest = params_digest(cfg.flock, cfg.ares, cfg.pso)
    save_plan(out_path, outcome.plan, mdp, seed, digest)
    print(
        f"plan: success in {outcome.levels_used} levels "
        f"({outcome.plan.total_actions} actions, mean h "
        f"{outcome.mean_horizon:.2f}), final cost {outcome.final_cost:.6g}, "
        f"{outcome.wall_time_s:.2f} s; wrote {out_path} and {levels_path}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_params(args)
    n = cfg.n if cfg.n is not None else required_samples(cfg.epsilon, cfg.delta)
    print(
        f"running {n} experiments (b={cfg.b}, epsilon={cfg.epsilon}, "
        f"delta={cfg.delta}, workers={cfg.workers}, seed={cfg.master_seed})"
    )
    records = run_experiments(cfg)
    out_path = args.out or "records.csv"
    write_records_csv(out_path, records)
    table = summarize(records, cfg.epsilon, cfg.delta)
    summary_path = args.summary or _with_suffix(out_path, ".summary.json")
    write_summary_json(summary_path, table)
    print(format_summary_text(table))
    print(f"wrote {out_path} and {summary_path}")
    return EXIT_OK


def _load_plan_doc(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("plan document must be a JSON object")
    return doc


def _check_digest(doc: dict, cfg) -> Optional[str]:
    expected = params_digest(cfg.flock, cfg.ares, cfg.pso)
    stored = str(doc.get("params_digest", ""))
    if stored != expected:
        return (
            f"params digest mismatch: plan has {stored or '<missing>'}, "
            f"current config gives {expected}"
        )
    return None


def cmd_replay(args: argparse.Namespace) -> int:
    cfg = _resolve_params(args)
    doc = _load_plan_doc(args.plan_path)
    mismatch = _check_digest(doc, cfg)
    if mismatch:
        print(mismatch, file=sys.stderr)
        return EXIT_MISMATCH
    try:
        b = int(doc["initial_state"]["b"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed plan document: {exc!r}") from exc
    mdp = flock_mdp(cfg.flock, b)
    plan, meta = plan_from_doc(doc, mdp)
    recomputed = plan.final_cost
    stored = meta["final_cost"]
    if recomputed != stored:
        print(
            f"replay mismatch: stored final cost {stored!r}, "
            f"recomputed {recomputed!r}",
            file=sys.stderr,
        )
        return EXIT_MISMATCH
    if recomputed > cfg.ares.phi:
        print(
            f"replay mismatch: final cost {recomputed!r} exceeds "
            f"phi={cfg.ares.phi!r}",
            file=sys.stderr,
        )
        return EXIT_MISMATCH
    print(
        f"replay ok: {plan.total_actions} actions over {len(plan.blocks)} "
        f"levels reproduce final cost {recomputed!r}"
    )
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    cfg = _resolve_params(args)
    doc = _load_plan_doc(args.plan_path)
    mismatch = _check_digest(doc, cfg)
    if mismatch:
        print(mismatch, file=sys.stderr)
        return EXIT_MISMATCH
    try:
        b = int(doc["initial_state"]["b"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed plan document: {exc!r}") from exc
    mdp = flock_mdp(cfg.flock, b)
    plan, _ = plan_from_doc(doc, mdp)
    out_dir = args.out or "frames"
    paths = render_plan_frames(plan.initial_state, plan.blocks, cfg.flock, out_dir)
    print(f"wrote {len(paths)} frames to {out_dir}")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ConfigGenerationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
