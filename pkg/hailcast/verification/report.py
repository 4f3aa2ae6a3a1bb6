"""
Evaluation Report

Scores a directory of per-window predictions against the test split of a
dataset and writes ``metrics.json``.

Prediction layout (written by ``hailcast nowcast``):

    <pred_dir>/window_%06d.fgt      # [M x H x W]

Aggregation:
- MSE pooled over every pixel of every window; PSNR from the pooled MSE
- SSIM averaged over windows and time slices
- ETS / ACC / CSI / POD / FAR from the contingency table pooled over
  windows
Each score is also reported per lead time 1..M.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog

from hailcast.core.errors import DimensionError, EvaluationError
from hailcast.core.tensor_io import read_array
from hailcast.radar.dataset import WINDOW_FILE, RadarDataset
from hailcast.verification.contingency import (
    ContingencyTable,
    acc,
    contingency,
    csi,
    ets,
    far,
    pod,
)
from hailcast.verification.metrics import psnr_from_mse, ssim_map

logger = structlog.get_logger(__name__)

METRICS_FILE = "metrics.json"


@dataclass
class LeadMetrics:
    """Scores for one forecast step (or for all steps pooled)."""
    mse: float
    psnr_db: float
    ssim: float
    ets: float
    acc: float
    csi: float
    pod: float
    far: float

    def to_dict(self) -> dict[str, Any]:
        finite = math.isfinite(self.psnr_db)
        return {
            "mse": self.mse,
            "psnr_db": self.psnr_db if finite else None,
            "psnr_infinite": not finite,
            "ssim": self.ssim,
            "ets": self.ets,
            "acc": self.acc,
            "csi": self.csi,
            "pod": self.pod,
            "far": self.far,
        }


@dataclass
class MetricsReport:
    overall: LeadMetrics
    threshold: float
    per_lead: list[LeadMetrics] = field(default_factory=list)
    n_windows: int = 0
    target_tolerance: float | None = None

    @property
    def mse(self) -> float:
        return self.overall.mse

    @property
    def psnr_db(self) -> float:
        return self.overall.psnr_db

    @property
    def ssim(self) -> float:
        return self.overall.ssim

    @property
    def ets(self) -> float:
        return self.overall.ets

    @property
    def acc(self) -> float:
        return self.overall.acc

    def to_dict(self) -> dict[str, Any]:
        data = self.overall.to_dict()
        data["threshold"] = self.threshold
        data["n_windows"] = self.n_windows
        data["per_lead"] = [
            {"lead": i + 1, **lead.to_dict()} for i, lead in enumerate(self.per_lead)
        ]
        if self.target_tolerance is not None:
            data["target_tolerance"] = self.target_tolerance
            data["within_tolerance"] = self.overall.mse <= self.target_tolerance
        return data

    def to_json_bytes(self) -> bytes:
        return orjson.dumps(self.to_dict(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_json_bytes())
        return path


@dataclass
class _WindowScores:
    sq_err: np.ndarray  # [M] sums of squared error
    pixels: int  # per lead
    ssim: np.ndarray  # [M]
    tables: list[ContingencyTable]


def _score_window(pred: np.ndarray, truth: np.ndarray, threshold: float) -> _WindowScores:
    return _WindowScores(
        sq_err=((pred - truth) ** 2).reshape(pred.shape[0], -1).sum(axis=1),
        pixels=int(np.prod(pred.shape[1:])),
        ssim=np.array([ssim_map(p, t).mean() for p, t in zip(pred, truth, strict=True)]),
        tables=[contingency(p, t, threshold) for p, t in zip(pred, truth, strict=True)],
    )


def _combine(sq_err: float, pixels: int, ssim_value: float, table: ContingencyTable) -> LeadMetrics:
    value = sq_err / pixels
    return LeadMetrics(
        mse=float(value),
        psnr_db=psnr_from_mse(value),
        ssim=float(ssim_value),
        ets=ets(table),
        acc=acc(table),
        csi=csi(table),
        pod=pod(table),
        far=far(table),
    )


def score_windows(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    threshold: float = 0.5,
    workers: int = 1,
    target_tolerance: float | None = None,
) -> MetricsReport:
    """Aggregate scores over (prediction, truth) pairs of [M x H x W]."""
    if not pairs:
        raise EvaluationError("no windows to evaluate", missing=[])
    for pred, truth in pairs:
        if pred.shape != truth.shape or pred.ndim != 3:
            raise DimensionError(
                f"prediction {pred.shape} and truth {truth.shape} must be equal [M x H x W]"
            )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        scores = list(pool.map(lambda pt: _score_window(pt[0], pt[1], threshold), pairs))

    m = pairs[0][0].shape[0]
    pixels = scores[0].pixels
    n = len(scores)
    sq_err = np.sum([s.sq_err for s in scores], axis=0)
    ssim_lead = np.mean([s.ssim for s in scores], axis=0)
    lead_tables = [sum((s.tables[k] for s in scores[1:]), scores[0].tables[k]) for k in range(m)]
    all_table = sum(lead_tables[1:], lead_tables[0])

    per_lead = [
        _combine(sq_err[k], pixels * n, ssim_lead[k], lead_tables[k]) for k in range(m)
    ]
    overall = _combine(sq_err.sum(), pixels * n * m, ssim_lead.mean(), all_table)
    return MetricsReport(
        overall=overall,
        threshold=threshold,
        per_lead=per_lead,
        n_windows=n,
        target_tolerance=target_tolerance,
    )


def evaluate_run(
    pred_dir: str | Path,
    truth_dir: str | Path,
    threshold: float = 0.5,
    *,
    out_path: str | Path | None = None,
    workers: int = 1,
    target_tolerance: float | None = None,
) -> MetricsReport:
    """
    Score every test window of the dataset at ``truth_dir``.

    Raises:
        EvaluationError: listing prediction files that are missing
    """
    pred_root = Path(pred_dir)
    dataset = RadarDataset(truth_dir)
    ids = dataset.ids("test")
    missing = [
        str(pred_root / WINDOW_FILE.format(wid))
        for wid in ids
        if not (pred_root / WINDOW_FILE.format(wid)).exists()
    ]
    if missing:
        raise EvaluationError(
            f"{len(missing)} prediction file(s) missing under {pred_root}", missing=missing
        )

    pairs = [
        (read_array(pred_root / WINDOW_FILE.format(wid)), dataset.window(wid).future)
        for wid in ids
    ]
    report = score_windows(pairs, threshold, workers, target_tolerance)
    if out_path is not None:
        report.write(out_path)
    logger.info(
        "Evaluation complete",
        n_windows=report.n_windows,
        mse=report.mse,
        ssim=report.ssim,
        ets=report.ets,
    )
    return report
