"""End-to-end pipeline stages with cached, hash-keyed artifacts.

Stage order: synth -> features -> train -> calibrate -> eval -> report.
Each stage directory carries a manifest recording the config hash, a stage
key derived from the config and upstream keys, and a digest of every emitted
file. A stage is skipped when its manifest key already matches; artifacts
from a different configuration are refused.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .calibrate import calibrate_weight
from .config import RunConfig
from .dataset import TARGET_LABEL, CellId, fit_matrix_normalizer, make_folds
from .errors import ArtifactMismatchError, ConfigError, DataError
from .evaluate import (
    EvalCell,
    build_report,
    evaluate_predictions,
    report_to_json,
    write_plot_source,
    write_report_tables,
)
from .features import build_recipe, correlation_table, detect_peak_hours
from .ingest import (
    read_cell_csv,
    read_handover_csv,
    write_cell_csv,
    write_handover_csv,
)
from .handover import gu14_reference_matrix
from .loss import LossConfig
from .lstm import LstmSpec, TrainConfig, _range_samples, grid_search, train
from .model import ForecastModel
from .multistep import HorizonPlan, NEIGHBOR_RECURSIVE, rolling_forecasts
from .synth import generate_region

STAGES = ("synth", "features", "train", "calibrate", "eval", "report")

MANIFEST_NAME = "manifest.json"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _stage_dir(out_dir, stage: str) -> Path:
    return Path(out_dir) / stage


def _stage_key(stage: str, config_hash: str, upstream: dict[str, str]) -> str:
    payload = json.dumps(
        {"stage": stage, "config": config_hash, "upstream": upstream}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _write_manifest(stage_dir: Path, stage: str, config_hash: str, key: str,
                    upstream: dict[str, str]) -> None:
    files = {}
    for path in sorted(stage_dir.rglob("*")):
        if path.is_file() and path.name != MANIFEST_NAME:
            files[str(path.relative_to(stage_dir))] = _sha256(path)
    manifest = {
        "stage": stage,
        "config_hash": config_hash,
        "key": key,
        "upstream": upstream,
        "files": files,
    }
    (stage_dir / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def _read_manifest(out_dir, stage: str) -> dict | None:
    path = _stage_dir(out_dir, stage) / MANIFEST_NAME
    if not path.exists():
        return None
    return json.loads(path.read_text())


def _require_upstream(out_dir, stage: str, config_hash: str) -> dict:
    manifest = _read_manifest(out_dir, stage)
    if manifest is None:
        raise ConfigError(f"stage {stage!r} has not been run yet (missing manifest)")
    if manifest["config_hash"] != config_hash:
        raise ArtifactMismatchError(
            f"artifacts in {stage}/ were produced by config {manifest['config_hash']},"
            f" current config is {config_hash}; refusing to mix"
        )
    return manifest


# ---------------------------------------------------------------------------
# data loading shared by the downstream stages


def load_region(cfg: RunConfig, out_dir):
    """Read the generated cell CSVs and handover table back in."""
    synth_dir = _stage_dir(out_dir, "synth")
    scenario = cfg.scenario()
    region = {}
    for cell in scenario.cells:
        path = synth_dir / f"{cell.render()}.csv"
        if not path.exists():
            raise DataError(f"synth stage output missing: {path}")
        region[cell] = read_cell_csv(path, cell=cell)
    ho_path = synth_dir / "handover.csv"
    if not ho_path.exists():
        raise DataError(f"synth stage output missing: {ho_path}")
    ho = read_handover_csv(ho_path)
    return region, ho


@dataclass
class VariantData:
    """Everything one variant needs for training and evaluation."""

    variant: str
    recipe: object
    matrix: np.ndarray  # raw feature matrix over the full grid
    normalizer: object
    train_inputs: np.ndarray
    train_targets: np.ndarray
    val_inputs: np.ndarray
    val_actual_raw: np.ndarray
    grid: object
    test_start: int
    neighbor_f10_by_name: dict


def prepare_variant(cfg: RunConfig, region, ho, variant: str) -> VariantData:
    split = cfg.split()
    feats = cfg.raw["features"]
    target = CellId.parse(cfg.target_cell)
    ds = region[target]
    neighbor_f10 = {cell: data.feature(TARGET_LABEL) for cell, data in region.items()}
    th, vh = split.train_hours, split.val_hours
    recipe, matrix = build_recipe(
        variant,
        ds,
        train_hours=th,
        ho=ho,
        neighbor_f10=neighbor_f10,
        tau=float(feats["peak_tau"]),
        threshold=float(feats["corr_threshold"]),
        weekend_days=frozenset(int(d) for d in feats["weekend_days"]),
        lookback=int(feats["lookback"]),
    )
    normalizer = fit_matrix_normalizer(matrix[:th], recipe.columns,
                                       skip=recipe.unnormalized_columns)
    normed = normalizer.transform_matrix(matrix, recipe.columns)
    target_norm = normed[:, 0]
    L = recipe.lookback
    Xtr, ytr = _range_samples(normed, target_norm, L, 0, th)
    Xva, _ = _range_samples(normed, target_norm, L, th, th + vh)
    val_actual_raw = matrix[th:th + vh, 0]
    return VariantData(
        variant=variant,
        recipe=recipe,
        matrix=matrix,
        normalizer=normalizer,
        train_inputs=Xtr,
        train_targets=ytr,
        val_inputs=Xva,
        val_actual_raw=val_actual_raw,
        grid=ds.grid,
        test_start=th + vh,
        neighbor_f10_by_name={c.render(): v for c, v in neighbor_f10.items()},
    )


# ---------------------------------------------------------------------------
# stages


def stage_synth(cfg: RunConfig, out_dir) -> Path:
    scenario = cfg.scenario()
    ho = gu14_reference_matrix().restricted_to(scenario.cells)
    region = generate_region(scenario, ho)
    stage_dir = _stage_dir(out_dir, "synth")
    stage_dir.mkdir(parents=True, exist_ok=True)
    for cell, ds in sorted(region.items(), key=lambda kv: kv[0].render()):
        write_cell_csv(stage_dir / f"{cell.render()}.csv", ds)
    write_handover_csv(stage_dir / "handover.csv", ho)
    return stage_dir


def stage_features(cfg: RunConfig, out_dir) -> Path:
    region, ho = load_region(cfg, out_dir)
    split = cfg.split()
    feats = cfg.raw["features"]
    target = CellId.parse(cfg.target_cell)
    train_view = region[target].view(0, split.train_hours)

    stage_dir = _stage_dir(out_dir, "features")
    stage_dir.mkdir(parents=True, exist_ok=True)

    labels, table = correlation_table(train_view)
    with open(stage_dir / "correlation_table.csv", "w", newline="\n") as fh:
        fh.write(",".join(("feature", *labels)) + "\n")
        for i, label in enumerate(labels):
            fh.write(",".join((label, *(repr(float(v)) for v in table[i]))) + "\n")

    profile = detect_peak_hours(
        train_view.feature(TARGET_LABEL),
        train_view.grid,
        tau=float(feats["peak_tau"]),
        weekend_days=frozenset(int(d) for d in feats["weekend_days"]),
    )
    (stage_dir / "peak_profile.json").write_text(json.dumps({
        "config_hash": cfg.config_hash(),
        "occurrence": list(profile.occurrence),
        "tau": profile.tau,
        "peak_hours": sorted(profile.peak_hours),
        "weekend_days": sorted(profile.weekend_days),
        "n_days": profile.n_days,
    }, sort_keys=True, indent=1) + "\n")

    recipes = {}
    for variant in cfg.raw["evaluation"]["variants"]:
        data = prepare_variant(cfg, region, ho, variant)
        recipes[variant] = {"recipe": data.recipe.to_dict(), "width": data.recipe.width}
    (stage_dir / "recipes.json").write_text(json.dumps({
        "config_hash": cfg.config_hash(),
        "recipes": recipes,
    }, sort_keys=True, indent=1) + "\n")
    return stage_dir


def _chosen_hyperparams(cfg: RunConfig, data: VariantData):
    """Grid-search the hyperparameters if a grid is configured."""
    candidates = cfg.grid_candidates(data.recipe.width)
    if candidates is None:
        return cfg.lstm_spec(data.recipe.width), cfg.train_config(), None
    t = cfg.raw["train"]
    span = data.test_start  # train+val hours
    plan = make_folds(span, int(t["cv_folds"]), int(t["cv_shift_hours"]))
    result = grid_search(
        candidates,
        data.matrix[:span],
        data.recipe.columns,
        plan,
        LossConfig(w=1.0),
        skip_normalize=data.recipe.unnormalized_columns,
    )
    return result.best_spec, result.best_config, result.scores


def stage_train(cfg: RunConfig, out_dir) -> Path:
    region, ho = load_region(cfg, out_dir)
    stage_dir = _stage_dir(out_dir, "train")
    (stage_dir / "models").mkdir(parents=True, exist_ok=True)
    chosen = {}
    for variant in cfg.raw["evaluation"]["variants"]:
        data = prepare_variant(cfg, region, ho, variant)
        spec, train_cfg, scores = _chosen_hyperparams(cfg, data)
        result = train(spec, data.train_inputs, data.train_targets, train_cfg,
                       LossConfig(w=1.0))
        model = ForecastModel(
            spec=spec,
            params=result.params,
            normalizer=data.normalizer,
            recipe=data.recipe,
            loss=LossConfig(w=1.0),
            train_config=train_cfg,
            meta={"config_hash": cfg.config_hash(), "variant": variant,
                  "final_train_loss": result.train_curve[-1]},
        )
        model.save(stage_dir / "models" / f"{variant}.json")
        chosen[variant] = {
            "hidden": spec.hidden,
            "layers": spec.layers,
            "learning_rate": train_cfg.learning_rate,
            "epochs": train_cfg.epochs,
            "l2": train_cfg.l2,
            "batch_size": train_cfg.batch_size,
            "grid_scores": scores,
        }
    (stage_dir / "hyperparams.json").write_text(json.dumps({
        "config_hash": cfg.config_hash(),
        "chosen": chosen,
    }, sort_keys=True, indent=1) + "\n")
    return stage_dir


def _hp_to_spec(cfg: RunConfig, hp: dict, width: int):
    spec = LstmSpec(
        input_dim=width,
        hidden=int(hp["hidden"]),
        layers=int(hp["layers"]),
        lookback=int(cfg.raw["features"]["lookback"]),
    )
    train_cfg = TrainConfig(
        learning_rate=float(hp["learning_rate"]),
        epochs=int(hp["epochs"]),
        l2=float(hp["l2"]),
        batch_size=int(hp["batch_size"]),
        seed=int(cfg.raw["train"]["seed"]),
    )
    return spec, train_cfg


def _calibrate_task(args):
    cfg_raw, out_dir, variant, sla = args
    cfg = RunConfig(cfg_raw)
    region, ho = load_region(cfg, out_dir)
    data = prepare_variant(cfg, region, ho, variant)
    hp = json.loads((_stage_dir(out_dir, "train") / "hyperparams.json").read_text())
    spec, train_cfg = _hp_to_spec(cfg, hp["chosen"][variant], data.recipe.width)
    cal = cfg.raw["calibration"]
    f10_mean, f10_std = data.normalizer.stats(TARGET_LABEL)
    result, params = calibrate_weight(
        sla,
        spec,
        train_cfg,
        data.train_inputs,
        data.train_targets,
        data.val_inputs,
        data.val_actual_raw,
        f10_mean,
        f10_std,
        w_grid=[float(w) for w in cal["w_grid"]],
        tolerance_pts=float(cal["tolerance_pts"]),
        margin_pts=float(cal["margin_pts"]),
        refine_iters=int(cal["refine_iters"]),
    )
    model = ForecastModel(
        spec=spec,
        params=params,
        normalizer=data.normalizer,
        recipe=data.recipe,
        loss=LossConfig(w=result.chosen_w, sla_target=sla),
        train_config=train_cfg,
        meta={"config_hash": cfg.config_hash(), "variant": variant, "sla_target": sla},
    )
    return variant, sla, result, model


def _sla_tag(sla: float) -> str:
    return f"sla{round(sla * 100):d}"


def _run_tasks(task_fn, payloads, jobs: int):
    if jobs <= 1 or len(payloads) <= 1:
        return [task_fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task_fn, payloads))


def stage_calibrate(cfg: RunConfig, out_dir, jobs: int = 1) -> Path:
    stage_dir = _stage_dir(out_dir, "calibrate")
    (stage_dir / "models").mkdir(parents=True, exist_ok=True)
    payloads = [
        (cfg.raw, str(out_dir), variant, float(sla))
        for variant in cfg.raw["evaluation"]["variants"]
        for sla in cfg.raw["calibration"]["targets"]
    ]
    outcomes = _run_tasks(_calibrate_task, payloads, jobs)
    summary = {}
    for variant, sla, result, model in outcomes:
        tag = f"{variant}_{_sla_tag(sla)}"
        (stage_dir / f"{tag}.json").write_text(json.dumps({
            "config_hash": cfg.config_hash(),
            "variant": variant,
            **result.to_dict(),
        }, sort_keys=True, indent=1) + "\n")
        model.save(stage_dir / "models" / f"{tag}.json")
        summary.setdefault(variant, {})[_sla_tag(sla)] = {
            "chosen_w": result.chosen_w,
            "violation_rate": result.violation_rate,
            "volume": result.volume,
            "satisfied": result.satisfied,
        }
    (stage_dir / "summary.json").write_text(json.dumps({
        "config_hash": cfg.config_hash(),
        "calibration": summary,
    }, sort_keys=True, indent=1) + "\n")
    return stage_dir


def _eval_task(args):
    cfg_raw, out_dir, variant, sla = args
    cfg = RunConfig(cfg_raw)
    region, ho = load_region(cfg, out_dir)
    data = prepare_variant(cfg, region, ho, variant)
    tag = f"{variant}_{_sla_tag(sla)}"
    model = ForecastModel.load(_stage_dir(out_dir, "calibrate") / "models" / f"{tag}.json")
    if model.meta.get("config_hash") != cfg.config_hash():
        raise ArtifactMismatchError(f"model {tag} belongs to a different config")

    horizons = [int(h) for h in cfg.raw["evaluation"]["horizons"]]
    max_h = max(horizons)
    T = data.matrix.shape[0]
    test_start = data.test_start
    origins = np.arange(test_start - 1, T - max_h)
    plan = HorizonPlan(
        horizons=tuple(horizons),
        handover_policy=cfg.raw["evaluation"]["handover_policy"],
        neighbor_models=_neighbor_models(cfg, out_dir, data) if (
            model.recipe.has_handover
            and cfg.raw["evaluation"]["handover_policy"] == NEIGHBOR_RECURSIVE
        ) else {},
    )
    preds = rolling_forecasts(model, data.matrix, data.grid, origins, max_h, plan,
                              neighbor_f10=data.neighbor_f10_by_name)
    cells = {}
    for h in horizons:
        pred_h = preds[:, h - 1]
        actual_h = data.matrix[origins + h, 0]
        cells[h] = evaluate_predictions(pred_h, actual_h, data.normalizer, model.loss.w)
    step1 = {
        "timestamps": [data.grid.timestamp(int(o) + 1).isoformat() for o in origins],
        "actual": data.matrix[origins + 1, 0].tolist(),
        "pred": preds[:, 0].tolist(),
    }
    return variant, sla, cells, step1


def _neighbor_models(cfg: RunConfig, out_dir, data: VariantData) -> dict:
    """Univariate models for every handover neighbor, for recursive fill.

    Each neighbor gets its own plain-MAE forecaster of its own volume; the
    SLA weight only belongs on the target cell's model.
    """
    region, _ = load_region(cfg, out_dir)
    split = cfg.split()
    th = split.train_hours
    lookback = int(cfg.raw["features"]["lookback"])
    names = sorted({n for n, _ in (*data.recipe.incoming_weights,
                                   *data.recipe.outgoing_weights)})
    models = {}
    for name in names:
        ds = region[CellId.parse(name)]
        recipe, matrix = build_recipe("univariate", ds, train_hours=th, lookback=lookback)
        normalizer = fit_matrix_normalizer(matrix[:th], recipe.columns)
        normed = normalizer.transform_matrix(matrix, recipe.columns)
        Xtr, ytr = _range_samples(normed, normed[:, 0], lookback, 0, th)
        spec = cfg.lstm_spec(1)
        train_cfg = cfg.train_config()
        result = train(spec, Xtr, ytr, train_cfg, LossConfig(w=1.0))
        models[name] = ForecastModel(
            spec=spec, params=result.params, normalizer=normalizer, recipe=recipe,
            loss=LossConfig(w=1.0), train_config=train_cfg,
            meta={"neighbor_of": data.recipe.cell},
        )
    return models


def stage_eval(cfg: RunConfig, out_dir, jobs: int = 1) -> Path:
    stage_dir = _stage_dir(out_dir, "eval")
    stage_dir.mkdir(parents=True, exist_ok=True)
    payloads = [
        (cfg.raw, str(out_dir), variant, float(sla))
        for variant in cfg.raw["evaluation"]["variants"]
        for sla in cfg.raw["calibration"]["targets"]
    ]
    outcomes = _run_tasks(_eval_task, payloads, jobs)
    metrics = {}
    plot_data = {}
    for variant, sla, cells, step1 in outcomes:
        for h, cell in cells.items():
            metrics[f"{variant}|{_sla_tag(sla)}|{h}"] = cell.to_dict()
        plot_data.setdefault(_sla_tag(sla), {"timestamps": step1["timestamps"],
                                             "actual": step1["actual"],
                                             "pred": {}})
        plot_data[_sla_tag(sla)]["pred"][variant] = step1["pred"]
    (stage_dir / "metrics.json").write_text(json.dumps({
        "config_hash": cfg.config_hash(),
        "metrics": metrics,
    }, sort_keys=True, indent=1) + "\n")
    for tag, data_ in plot_data.items():
        timestamps = [datetime.fromisoformat(t) for t in data_["timestamps"]]
        write_plot_source(stage_dir / f"predictions_{tag}.csv", timestamps,
                          data_["actual"], data_["pred"])
    return stage_dir


def stage_report(cfg: RunConfig, out_dir) -> Path:
    from . import figures

    stage_dir = _stage_dir(out_dir, "report")
    stage_dir.mkdir(parents=True, exist_ok=True)
    metrics = json.loads((_stage_dir(out_dir, "eval") / "metrics.json").read_text())
    cal_summary = json.loads((_stage_dir(out_dir, "calibrate") / "summary.json").read_text())

    variants = cfg.raw["evaluation"]["variants"]
    slas = [float(s) for s in cfg.raw["calibration"]["targets"]]
    horizons = [int(h) for h in cfg.raw["evaluation"]["horizons"]]
    results = {}
    for variant in variants:
        for sla in slas:
            for h in horizons:
                d = metrics["metrics"][f"{variant}|{_sla_tag(sla)}|{h}"]
                results[(variant, sla, h)] = EvalCell(**d)
    report = build_report(
        results, variants, slas, horizons,
        calibration=cal_summary["calibration"],
        metadata={
            "config_hash": cfg.config_hash(),
            "target_cell": cfg.target_cell,
            "unit": cfg.unit,
            "scenario_seed": cfg.raw["scenario"]["seed"],
            "train_seed": cfg.raw["train"]["seed"],
        },
    )
    (stage_dir / "report.json").write_text(report_to_json(report))
    write_report_tables(report, stage_dir)

    for sla in slas:
        tag = _sla_tag(sla)
        src = _stage_dir(out_dir, "eval") / f"predictions_{tag}.csv"
        rows = src.read_text().strip().split("\n")
        header = rows[0].split(",")
        cols = {name: [] for name in header}
        for line in rows[1:]:
            for name, value in zip(header, line.split(",")):
                cols[name].append(value)
        timestamps = [datetime.fromisoformat(t) for t in cols["timestamp"]]
        actual = np.array([float(v) for v in cols["actual"]])
        predictions = {
            name[len("pred_"):]: np.array([float(v) for v in cols[name]])
            for name in header if name.startswith("pred_")
        }
        write_plot_source(stage_dir / f"predictions_{tag}.csv", timestamps, actual, predictions)
        figures.overlay_figure(
            stage_dir / f"overlay_{tag}.png", timestamps, actual, predictions,
            title=f"1-hour ahead forecasts, {cfg.target_cell}, SLA {sla:.0%}",
        )
        losses = {
            variant: [report["results"][variant][f"{sla:.2f}"][str(h)]["loss"] for h in horizons]
            for variant in variants
        }
        figures.horizon_loss_figure(
            stage_dir / f"horizon_loss_{tag}.png", horizons, losses,
            title=f"Multi-step test loss, {cfg.target_cell}, SLA {sla:.0%}",
        )

    cal_traces = {}
    for variant in variants:
        for sla in slas:
            tag = f"{variant}_{_sla_tag(sla)}"
            cal = json.loads((_stage_dir(out_dir, "calibrate") / f"{tag}.json").read_text())
            ws = [p["w"] for p in cal["trace"]]
            rates = [p["violation_rate"] for p in cal["trace"]]
            cal_traces[tag] = (ws, rates, float(sla))
    figures.calibration_figure(stage_dir / "calibration.png", cal_traces,
                               title=f"Loss-weight line searches, {cfg.target_cell}")
    return stage_dir


# ---------------------------------------------------------------------------
# orchestration


_STAGE_FNS = {
    "synth": lambda cfg, out, jobs: stage_synth(cfg, out),
    "features": lambda cfg, out, jobs: stage_features(cfg, out),
    "train": lambda cfg, out, jobs: stage_train(cfg, out),
    "calibrate": stage_calibrate,
    "eval": stage_eval,
    "report": lambda cfg, out, jobs: stage_report(cfg, out),
}

_UPSTREAM = {
    "synth": (),
    "features": ("synth",),
    "train": ("synth", "features"),
    "calibrate": ("synth", "features", "train"),
    "eval": ("synth", "features", "train", "calibrate"),
    "report": ("synth", "features", "train", "calibrate", "eval"),
}


def run_stage(cfg: RunConfig, out_dir, stage: str, jobs: int = 1, force: bool = False) -> bool:
    """Run one stage if its cache key is stale; returns True if it ran."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")
    config_hash = cfg.config_hash()
    upstream = {}
    for dep in _UPSTREAM[stage]:
        manifest = _require_upstream(out_dir, dep, config_hash)
        upstream[dep] = manifest["key"]
    key = _stage_key(stage, config_hash, upstream)
    existing = _read_manifest(out_dir, stage)
    if existing is not None and existing["key"] == key and not force:
        return False
    stage_dir = _STAGE_FNS[stage](cfg, out_dir, jobs)
    _write_manifest(stage_dir, stage, config_hash, key, upstream)
    return True


def run_all(cfg: RunConfig, out_dir, jobs: int = 1, force: bool = False) -> dict[str, bool]:
    """Run every stage in order; cached stages are skipped."""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    ran = {}
    for stage in STAGES:
        ran[stage] = run_stage(cfg, out_dir, stage, jobs=jobs, force=force)
    return ran
