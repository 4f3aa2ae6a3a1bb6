"""
Verification module.

Continuous and categorical forecast scores, the persistence baseline and
the run-level report.
"""

from hailcast.verification.contingency import (
    ContingencyTable,
    acc,
    contingency,
    csi,
    ets,
    far,
    hits_random,
    pod,
)
from hailcast.verification.metrics import (
    mse,
    persistence_baseline,
    psnr,
    psnr_from_mse,
    ssim,
)
from hailcast.verification.report import (
    METRICS_FILE,
    LeadMetrics,
    MetricsReport,
    evaluate_run,
    score_windows,
)

__all__ = [
    "METRICS_FILE",
    "ContingencyTable",
    "LeadMetrics",
    "MetricsReport",
    "acc",
    "contingency",
    "csi",
    "ets",
    "evaluate_run",
    "far",
    "hits_random",
    "mse",
    "persistence_baseline",
    "pod",
    "psnr",
    "psnr_from_mse",
    "score_windows",
    "ssim",
]
