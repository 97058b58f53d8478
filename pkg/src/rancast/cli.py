"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence, 5 calibration constraint unsatisfied, 1 anything unexpected.
Flags can also be set through RANCAST_CONFIG, RANCAST_SEED, RANCAST_OUT,
and RANCAST_JOBS environment variables (flags win).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime
from pathlib import Path

from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    ConstraintUnsatisfiedError,
    DataError,
    DivergenceError,
    RancastError,
)
from .model import ForecastModel
from .multistep import NEIGHBOR_RECURSIVE, HorizonPlan, predict_multistep
from .pipeline import (
    STAGES,
    _neighbor_models,
    load_region,
    prepare_variant,
    run_all,
    run_stage,
)

EXIT_CODES = (
    (ConfigError, 2),
    (DataError, 3),
    (DivergenceError, 4),
    (ConstraintUnsatisfiedError, 5),
)

ENV_PREFIX = "RANCAST"


def _env(name: str):
    return os.environ.get(f"{ENV_PREFIX}_{name}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=_env("CONFIG"),
                        help="YAML run configuration (defaults apply when omitted)")
    parser.add_argument("--seed", type=int,
                        default=int(_env("SEED")) if _env("SEED") else None,
                        help="override scenario and training seeds")
    parser.add_argument("--out", default=_env("OUT") or "out",
                        help="output directory (default: ./out)")
    parser.add_argument("--jobs", type=int,
                        default=int(_env("JOBS")) if _env("JOBS") else 1,
                        help="worker processes for independent trainings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rancast",
        description="SLA-aware downlink traffic forecasting on synthetic RAN data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_common(p)

    p = sub.add_parser("run-all", help="run every stage in order, with caching")
    _add_common(p)
    p.add_argument("--stage", choices=STAGES, default=None,
                   help="run only this stage (upstream artifacts must exist)")
    p.add_argument("--force", action="store_true", help="ignore cached stage keys")

    p = sub.add_parser("predict", help="multi-step forecast from a saved model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model file from calibrate/ or train/")
    p.add_argument("--origin", required=True,
                   help="ISO timestamp of the last observed hour")
    p.add_argument("--horizon", type=int, default=24)
    p.add_argument("--handover-policy", choices=["seasonal-naive", "neighbor-recursive"],
                   default="seasonal-naive")
    p.add_argument("--out-file", default=None, help="prediction CSV (default: stdout)")
    return parser


def _load(args) -> RunConfig:
    return load_config(args.config, seed=args.seed)


def cmd_stage(args, stage: str) -> int:
    cfg = _load(args)
    ran = run_stage(cfg, args.out, stage, jobs=args.jobs)
    status = "completed" if ran else "cached, skipped"
    print(f"stage {stage}: {status} (config {cfg.config_hash()})")
    return _check_calibration(args, cfg) if stage in ("calibrate", "run-all") else 0


def cmd_run_all(args) -> int:
    cfg = _load(args)
    if args.stage is not None:
        ran = run_stage(cfg, args.out, args.stage, jobs=args.jobs, force=args.force)
        print(f"stage {args.stage}: {'completed' if ran else 'cached, skipped'}")
        return 0
    ran = run_all(cfg, args.out, jobs=args.jobs, force=args.force)
    for stage, did_run in ran.items():
        print(f"stage {stage}: {'completed' if did_run else 'cached, skipped'}")
    print(f"report under {Path(args.out) / 'report'} (config {cfg.config_hash()})")
    return _check_calibration(args, cfg)


def _check_calibration(args, cfg: RunConfig) -> int:
    summary_path = Path(args.out) / "calibrate" / "summary.json"
    if not summary_path.exists():
        return 0
    summary = json.loads(summary_path.read_text())
    unsatisfied = [
        f"{variant}/{tag}"
        for variant, by_sla in summary["calibration"].items()
        for tag, entry in by_sla.items()
        if not entry["satisfied"]
    ]
    if unsatisfied:
        print(f"calibration constraint unsatisfied for: {', '.join(sorted(unsatisfied))}",
              file=sys.stderr)
        return 5
    return 0


def cmd_predict(args) -> int:
    cfg = _load(args)
    model = ForecastModel.load(args.model)
    region, ho = load_region(cfg, args.out)
    data = prepare_variant(cfg, region, ho, model.recipe.variant)
    origin_ts = datetime.fromisoformat(args.origin)
    origin = data.grid.index_of(origin_ts)
    neighbor_models = {}
    if model.recipe.has_handover and args.handover_policy == NEIGHBOR_RECURSIVE:
        neighbor_models = _neighbor_models(cfg, args.out, data)
    plan = HorizonPlan(horizons=(args.horizon,), handover_policy=args.handover_policy,
                       neighbor_models=neighbor_models)
    preds = predict_multistep(model, data.matrix, data.grid, origin, args.horizon, plan,
                              neighbor_f10=data.neighbor_f10_by_name)
    lines = ["step,timestamp,prediction"]
    for k in range(args.horizon):
        ts = data.grid.timestamp(origin + k + 1).isoformat()
        lines.append(f"{k + 1},{ts},{preds[k]!r}")
    text = "\n".join(lines) + "\n"
    if args.out_file:
        Path(args.out_file).write_text(text)
        print(f"wrote {args.out_file}")
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run-all":
            return cmd_run_all(args)
        if args.command == "predict":
            return cmd_predict(args)
        return cmd_stage(args, args.command)
    except RancastError as exc:
        for klass, code in EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
