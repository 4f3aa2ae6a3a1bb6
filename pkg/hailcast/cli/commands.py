"""
Command implementations.

Each command receives fully resolved Settings plus the parsed arguments
that are not settings (e.g. ``--method``), and writes everything under
``settings.out_dir``.
"""

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog

from hailcast.cli.render import render_strip
from hailcast.config import Settings
from hailcast.core.errors import ConfigurationError, EvaluationError
from hailcast.core.tensor_io import write_array
from hailcast.diffusion.nowcast import nowcast
from hailcast.diffusion.schedule import NoiseSchedule, build_schedule, schedule_from_settings
from hailcast.diffusion.trainer import FINAL_CHECKPOINT, TrainState, train
from hailcast.model.params import DenoiserParams, load_checkpoint
from hailcast.model.spen import SpenVariant
from hailcast.radar.dataset import WINDOW_FILE, RadarDataset, build_dataset
from hailcast.verification.metrics import persistence_baseline, psnr_from_mse
from hailcast.verification.report import METRICS_FILE, MetricsReport, evaluate_run

logger = structlog.get_logger(__name__)

PREDICTIONS_DIR = "predictions"
IMAGES_DIR = "images"
ABLATION_DIR = "ablation"
ABLATION_FILE = "ablation.json"
ABLATION_COLUMNS = ("mse", "psnr_db", "ssim", "ets", "acc")
METHODS = ("diffusion", "persistence")


def _open_dataset(settings: Settings) -> RadarDataset:
    dataset = RadarDataset(settings.dataset_dir)
    geometry = dataset.geometry
    expected = {
        "height": settings.height,
        "width": settings.width,
        "N": settings.history_steps,
        "M": settings.forecast_steps,
    }
    actual = {
        "height": geometry["height"],
        "width": geometry["width"],
        "N": dataset.history_steps,
        "M": dataset.forecast_steps,
    }
    if expected != actual:
        raise ConfigurationError(
            f"dataset at {settings.dataset_dir} does not match the settings",
            expected=expected,
            actual=actual,
        )
    return dataset


def cmd_gen_data(settings: Settings, args: argparse.Namespace) -> Path:
    return build_dataset(settings, settings.dataset_dir)


def cmd_train(settings: Settings, args: argparse.Namespace) -> TrainState:
    dataset = _open_dataset(settings)
    state = TrainState.from_settings(settings)
    return train(state, dataset, settings, out_dir=settings.out_dir)


@dataclass
class LoadedModel:
    """Checkpoint parameters with the schedule and settings they were trained under."""
    params: DenoiserParams
    sched: NoiseSchedule
    settings: Settings


def _load_model(settings: Settings) -> LoadedModel:
    """
    Read the checkpoint and adopt its schedule and reference mode.

    The returned settings carry the checkpoint's reference mode, so a
    model trained on the full grid is also sampled on the full grid.
    """
    path = settings.checkpoint or settings.out_dir / FINAL_CHECKPOINT
    if not Path(path).exists():
        raise EvaluationError(f"checkpoint not found at {path}", missing=[str(path)])
    params, manifest = load_checkpoint(path)
    stored = manifest.get("schedule")
    sched = (
        schedule_from_settings(settings)
        if stored is None
        else build_schedule(stored["steps"], stored["beta_start"], stored["beta_end"])
    )
    mode = params.config.reference_mode
    if mode != settings.reference_mode:
        logger.info(
            "Using checkpoint reference mode",
            checkpoint_mode=mode,
            settings_mode=settings.reference_mode,
        )
        settings = settings.model_copy(update={"reference_mode": mode})
    return LoadedModel(params=params, sched=sched, settings=settings)


def cmd_nowcast(settings: Settings, args: argparse.Namespace) -> Path:
    method = getattr(args, "method", "diffusion")
    if method not in METHODS:
        raise ConfigurationError(f"Unknown nowcast method {method!r}", allowed=list(METHODS))
    dataset = _open_dataset(settings)
    split = getattr(args, "split", "test")
    ids = dataset.ids(split)
    limit = getattr(args, "limit", None)
    if limit is not None:
        ids = ids[:limit]

    model = _load_model(settings) if method == "diffusion" else None
    out = settings.out_dir / PREDICTIONS_DIR
    for wid in ids:
        history = dataset.window(wid).history
        if model is not None:
            pred = nowcast(history, model.params, model.settings, model.sched, window_id=wid)
        else:
            pred = persistence_baseline(history, settings.forecast_steps)
        write_array(out / WINDOW_FILE.format(wid), pred)
        if getattr(args, "pgm", False):
            render_strip(pred, settings.out_dir / IMAGES_DIR / f"window_{wid:06d}.pgm")

    manifest: dict[str, Any] = {
        "method": method,
        "split": split,
        "windows": ids,
        "sampler": settings.sampler if method == "diffusion" else None,
        "sampler_steps": settings.sampler_steps if method == "diffusion" else None,
        "ensemble_size": settings.ensemble_size if method == "diffusion" else None,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_bytes(
        orjson.dumps(manifest, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
    )
    logger.info("Predictions written", path=str(out), windows=len(ids), method=method)
    return out


def cmd_evaluate(settings: Settings, args: argparse.Namespace) -> MetricsReport:
    pred_dir = getattr(args, "pred_dir", None) or settings.out_dir / PREDICTIONS_DIR
    return evaluate_run(
        pred_dir,
        settings.dataset_dir,
        settings.threshold,
        out_path=settings.out_dir / METRICS_FILE,
        workers=settings.workers,
        target_tolerance=settings.target_tolerance,
    )


def _run_variant(settings: Settings) -> MetricsReport:
    args = argparse.Namespace(method="diffusion", split="test", limit=None, pgm=False)
    cmd_train(settings, args)
    cmd_nowcast(settings, args)
    return cmd_evaluate(settings, args)


def ablation_table(reports: dict[SpenVariant, list[MetricsReport]]) -> list[dict[str, Any]]:
    """Seed-averaged scores, one row per variant in reporting order."""
    rows = []
    for variant in SpenVariant.ordered():
        runs = reports[variant]
        mse_mean = float(np.mean([r.mse for r in runs]))
        psnr = psnr_from_mse(mse_mean)
        rows.append(
            {
                "variant": variant.value,
                "mse": mse_mean,
                "psnr_db": psnr if np.isfinite(psnr) else None,
                "ssim": float(np.mean([r.ssim for r in runs])),
                "ets": float(np.mean([r.ets for r in runs])),
                "acc": float(np.mean([r.acc for r in runs])),
            }
        )
    return rows


def format_table(rows: list[dict[str, Any]]) -> str:
    header = f"{'variant':<10}" + "".join(f"{c:>10}" for c in ABLATION_COLUMNS)
    lines = [header]
    for row in rows:
        cells = "".join(
            f"{'inf':>10}" if row[c] is None else f"{row[c]:>10.4f}" for c in ABLATION_COLUMNS
        )
        lines.append(f"{row['variant']:<10}{cells}")
    return "\n".join(lines)


def cmd_ablate(settings: Settings, args: argparse.Namespace) -> list[dict[str, Any]]:
    """Train, nowcast and evaluate every variant with identical training settings."""
    seeds = list(getattr(args, "seeds", None) or [settings.seed])
    _open_dataset(settings)
    reports: dict[SpenVariant, list[MetricsReport]] = {v: [] for v in SpenVariant.ordered()}
    for seed in seeds:
        for variant in SpenVariant.ordered():
            run_settings = settings.model_copy(
                update={
                    "seed": seed,
                    "variant": variant.value,
                    "data_dir": settings.dataset_dir,
                    "out_dir": settings.out_dir / ABLATION_DIR / f"seed_{seed}" / variant.value,
                    "checkpoint": None,
                }
            )
            logger.info("Ablation run", seed=seed, variant=variant.value)
            reports[variant].append(_run_variant(run_settings))

    rows = ablation_table(reports)
    table = {"columns": list(ABLATION_COLUMNS), "seeds": seeds, "rows": rows}
    path = settings.out_dir / ABLATION_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(table, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    print(format_table(rows))
    return rows


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "nowcast": cmd_nowcast,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}
