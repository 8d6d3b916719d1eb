"""Command-line front end.

    npgflow generate --config run.json --N 300 --seed 0 --out data.jsonl
    npgflow train    --config run.json --seed 3 --lambda 0.5 --out runs/
    npgflow verify   --config run.json --seeds 0..199 --jobs 4 --out runs/
    npgflow sweep    --config run.json --axis N --values 500,2000,8000 --seeds 0..99
    npgflow print-defaults

``--seeds A..B`` is inclusive. Set ``NPGFLOW_LOG`` (e.g. ``DEBUG``) for logging.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core_model import LinearSoftmax, LoggedDataset, TabularSoftmax, read_jsonl, write_jsonl
from .diagnostics import reports_to_csv, run_campaign
from .envs import SyntheticEnv, fixture_a, random_env, sample_logged_dataset
from .learner import LearnerConfig, StageError, debiased_policy_learning

logger = logging.getLogger("npgflow")

DEFAULTS = {
    "env": "fixture_a",
    "policy_class": {"kind": "tabular"},
    "data": None,
    "lambda": 0.5,
    "n_per_split": 2000,
    "seeds": "0..9",
    "ridge": None,
    "entropy_estimator": "exact_context_average",
    "flow": {"step_size": 0.05, "t_max": 10.0, "integrator": "rk4", "stop_grad_norm": 1e-10, "checkpoint_every": 1},
    "erm": {"max_steps": 5000, "learning_rate": 1.0, "restarts": 5, "tolerance": 1e-8, "init_scale": 0.1},
    "overlap_floor": 0.01,
    "out": "npgflow_out",
    "sweep": {"axis": "N", "values": [500, 2000, 8000]},
}

SWEEP_COLUMNS = [
    "axis",
    "value",
    "n_seeds",
    "interior_fraction",
    "violations",
    "mean_soft_regret",
    "se_soft_regret",
    "mean_hard_regret",
    "se_hard_regret",
    "mean_I",
    "se_I",
    "mean_II",
    "se_II",
    "mean_III",
    "se_III",
    "gap_budget",
    "max_gap",
    "gap_holds",
]


class UsageError(Exception):
    pass


def parse_seeds(spec) -> list[int]:
    if isinstance(spec, (list, tuple)):
        seeds = [int(s) for s in spec]
    elif isinstance(spec, int):
        seeds = [spec]
    elif isinstance(spec, str) and ".." in spec:
        lo, hi = spec.split("..", 1)
        seeds = list(range(int(lo), int(hi) + 1))
    elif isinstance(spec, str):
        seeds = [int(s) for s in spec.split(",") if s.strip()]
    else:
        raise UsageError(f"cannot parse seeds {spec!r}")
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def load_config(path: Optional[str]) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    with open(path) as fh:
        user = json.load(fh)
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict) and key not in ("policy_class",):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    cfg["_base"] = str(Path(path).parent)
    return cfg


def resolve_env(cfg: dict) -> SyntheticEnv:
    spec = cfg["env"]
    if spec == "fixture_a":
        return fixture_a(floor=cfg.get("overlap_floor", 0.01))
    if isinstance(spec, dict) and "random" in spec:
        return random_env(**spec["random"])
    if isinstance(spec, dict):
        return SyntheticEnv.from_dict(spec)
    path = Path(spec)
    if not path.is_absolute() and "_base" in cfg:
        path = Path(cfg["_base"]) / path
    return SyntheticEnv.load(path)


def resolve_policy(cfg: dict, env: Optional[SyntheticEnv], data: Optional[LoggedDataset] = None):
    spec = cfg["policy_class"]
    kind = spec.get("kind", "tabular")
    if kind == "tabular":
        if env is not None:
            return env.tabular_class(), kind
        if data is None or data.context_kind != "discrete":
            raise UsageError("tabular policies need discrete contexts")
        return TabularSoftmax(int(data.contexts.max()) + 1, data.n_actions), kind
    if kind == "linear":
        if data is not None and data.context_kind == "dense":
            return LinearSoftmax.action_interactions(data.contexts.shape[1], data.n_actions), kind
        if env is None:
            raise UsageError("linear policies on discrete contexts need an environment feature table")
        return env.linear_class(), kind
    raise UsageError(f"unknown policy class {kind!r}")


def learner_config(cfg: dict, seed: int = 0) -> LearnerConfig:
    lam = float(cfg["lambda"])
    if not lam > 0:
        raise UsageError(
            "lambda must be > 0: entropy regularization is what makes the selected "
            "flow time an interior maximizer"
        )
    return LearnerConfig.from_dict(
        {
            "lam": lam,
            "flow": cfg["flow"],
            "erm": {**cfg["erm"], "seed": seed},
            "ridge": cfg["ridge"],
            "seed": seed,
            "entropy_estimator": cfg["entropy_estimator"],
        }
    )


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_generate(args, cfg) -> int:
    env = resolve_env(cfg)
    N = args.N if args.N is not None else 3 * int(cfg["n_per_split"])
    seed = args.seed if args.seed is not None else parse_seeds(cfg["seeds"])[0]
    data = sample_logged_dataset(env, None, N, seed)
    out = Path(args.out) if args.out else Path(cfg["out"]) / "data.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(data, out)
    print(f"wrote {out}: N={len(data)} K={data.n_actions} min propensity={data.propensities.min():.6g}")
    return 0


def cmd_train(args, cfg) -> int:
    seed = args.seed if args.seed is not None else parse_seeds(cfg["seeds"])[0]
    lcfg = learner_config(cfg, seed)
    if cfg.get("data"):
        path = Path(cfg["data"])
        if not path.is_absolute() and "_base" in cfg:
            path = Path(cfg["_base"]) / path
        data = read_jsonl(path, overlap_floor=cfg["overlap_floor"])
        # a feature table is only needed for linear policies over discrete ids
        needs_env = cfg["policy_class"].get("kind") == "linear" and data.context_kind == "discrete"
        env = resolve_env(cfg) if needs_env else None
    else:
        env = resolve_env(cfg)
        data = sample_logged_dataset(env, None, 3 * int(cfg["n_per_split"]), seed)
    policy, _ = resolve_policy(cfg, env, data)
    result = debiased_policy_learning(data, policy, lcfg)
    out = Path(args.out or cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"result_seed{seed}.json"
    payload = {"config": lcfg.to_dict(), "result": result.to_dict()}
    target.write_text(_dumps(payload))
    sel = result.index_selection
    v1 = result.values["split1"]
    print(f"t1={sel.t1:.6g} interior={sel.interior} stop={result.flow_path.stop_reason}")
    print(f"split-1 soft value: erm={v1['erm']:.6f} debiased={v1['debiased']:.6f}")
    print(f"value_at_t1={sel.value_at_t1:.6f} value_at_t0={sel.checkpoint_values[0]:.6f}")
    print(f"wrote {target}")
    return 0


def _campaign(cfg, env, seeds, jobs, n_per_split=None, lam=None):
    c = dict(cfg)
    if lam is not None:
        c["lambda"] = lam
    policy_kind = cfg["policy_class"].get("kind", "tabular")
    return run_campaign(
        env, policy_kind, int(n_per_split or cfg["n_per_split"]), seeds, learner_config(c), jobs=jobs
    )


def cmd_verify(args, cfg) -> int:
    seeds = parse_seeds(args.seeds if args.seeds is not None else cfg["seeds"])
    learner_config(cfg)  # validates lambda before any work
    env = resolve_env(cfg)
    reports = _campaign(cfg, env, seeds, args.jobs)
    out = Path(args.out or cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    target = out / "theorem_report.csv"
    target.write_text(reports_to_csv(reports))
    interior = [r for r in reports if r.interior]
    violations = sum(not r.bound_holds for r in interior)
    print(f"runs={len(reports)} interior={len(interior)} ({len(interior) / len(reports):.3f})")
    print(f"bound violations among interior runs: {violations}")
    if interior:
        for name in ("soft_regret", "term_I", "term_II", "term_III"):
            print(f"mean {name} (interior): {np.mean([getattr(r, name) for r in interior]):.6g}")
    print(f"wrote {target}")
    return 0 if violations == 0 else 1


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def cmd_sweep(args, cfg) -> int:
    seeds = parse_seeds(args.seeds if args.seeds is not None else cfg["seeds"])
    axis = args.axis or cfg["sweep"]["axis"]
    if axis not in ("N", "lambda"):
        raise UsageError("sweep axis must be N or lambda")
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    else:
        values = [float(v) for v in cfg["sweep"]["values"]]
    if axis == "N":
        values = [int(v) for v in values]
    learner_config(cfg)
    env = resolve_env(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    total_violations = 0
    for value in values:
        if axis == "N":
            reports = _campaign(cfg, env, seeds, args.jobs, n_per_split=value)
            lam = float(cfg["lambda"])
        else:
            reports = _campaign(cfg, env, seeds, args.jobs, lam=value)
            lam = value
        interior = [r for r in reports if r.interior]
        violations = sum(not r.bound_holds for r in interior)
        total_violations += violations
        budget = lam * math.log(env.n_actions)
        gaps = [r.hard_regret - r.soft_regret for r in reports]
        row = [axis, value, len(reports), len(interior) / len(reports), violations]
        for name in ("soft_regret", "hard_regret", "term_I", "term_II", "term_III"):
            row.extend(_mean_se([getattr(r, name) for r in reports]))
        row.extend([budget, max(gaps), int(max(gaps) <= budget + 1e-12)])
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    out = Path(args.out or cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"sweep_{axis}.csv"
    target.write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    print(f"wrote {target}")
    return 0 if total_violations == 0 else 1


def cmd_print_defaults(args, cfg) -> int:
    print(_dumps({k: v for k, v in DEFAULTS.items()}), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npgflow", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=False, jobs=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (file for generate)")
        p.add_argument("--seed", type=int)
        if seeds:
            p.add_argument("--seeds", help="A..B (inclusive) or comma list")
        if jobs:
            p.add_argument("--jobs", type=int, default=1)
        return p

    g = common(sub.add_parser("generate", help="sample a JSONL dataset from an environment"))
    g.add_argument("--N", type=int, help="number of records (default 3 * n_per_split)")
    t = common(sub.add_parser("train", help="run the debiased learner once"))
    v = common(sub.add_parser("verify", help="regret-bound verification campaign"), seeds=True, jobs=True)
    s = common(sub.add_parser("sweep", help="campaigns over N or lambda"), seeds=True, jobs=True)
    for p in (t, v, s):
        p.add_argument("--lambda", dest="lam", type=float, help="override the entropy weight")
    s.add_argument("--axis", choices=["N", "lambda"])
    s.add_argument("--values", help="comma-separated axis values")
    sub.add_parser("print-defaults", help="print the default configuration")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "print-defaults": cmd_print_defaults,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("NPGFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None))
        if getattr(args, "lam", None) is not None:
            cfg["lambda"] = args.lam
        return COMMANDS[args.command](args, cfg)
    except UsageError as err:
        print(f"npgflow {args.command}: error: {err}", file=sys.stderr)
        return 2
    except StageError as err:
        print(f"npgflow {args.command}: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as err:
        print(f"npgflow {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
