"""
Categorical Scores

Pixel-wise 2x2 contingency tables for the event ``value >= threshold``
and the scores derived from them. A zero denominator yields 0 for every
score.
"""

from dataclasses import dataclass

import numpy as np

from hailcast.core.errors import ConfigurationError, DimensionError, EmptyResultError


@dataclass(frozen=True)
class ContingencyTable:
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if min(self.hits, self.misses, self.false_alarms, self.correct_negatives) < 0:
            raise ConfigurationError("contingency counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_negatives

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        if self.threshold != other.threshold:
            raise ConfigurationError("cannot pool tables with different thresholds")
        return ContingencyTable(
            hits=self.hits + other.hits,
            misses=self.misses + other.misses,
            false_alarms=self.false_alarms + other.false_alarms,
            correct_negatives=self.correct_negatives + other.correct_negatives,
            threshold=self.threshold,
        )

    def _require_total(self) -> None:
        if self.total == 0:
            raise EmptyResultError("contingency table is empty")


def contingency(pred: np.ndarray, truth: np.ndarray, threshold: float = 0.5) -> ContingencyTable:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(
            f"prediction shape {pred.shape} does not match truth shape {truth.shape}"
        )
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError("threshold must lie in (0, 1)", threshold=threshold)
    p = pred >= threshold
    o = truth >= threshold
    return ContingencyTable(
        hits=int(np.count_nonzero(p & o)),
        misses=int(np.count_nonzero(~p & o)),
        false_alarms=int(np.count_nonzero(p & ~o)),
        correct_negatives=int(np.count_nonzero(~p & ~o)),
        threshold=threshold,
    )


def hits_random(table: ContingencyTable) -> float:
    """Hits expected by chance: (H + Mi)(H + F) / total."""
    table._require_total()
    return (table.hits + table.misses) * (table.hits + table.false_alarms) / table.total


def ets(table: ContingencyTable) -> float:
    """Equitable threat score (Gilbert skill score)."""
    h_rand = hits_random(table)
    den = table.hits + table.misses + table.false_alarms - h_rand
    if den == 0:
        return 0.0
    return float((table.hits - h_rand) / den)


def acc(table: ContingencyTable) -> float:
    """Fraction of correct pixels, (H + CN) / total."""
    table._require_total()
    return (table.hits + table.correct_negatives) / table.total


def csi(table: ContingencyTable) -> float:
    """Critical success index, H / (H + Mi + F)."""
    den = table.hits + table.misses + table.false_alarms
    return table.hits / den if den else 0.0


def pod(table: ContingencyTable) -> float:
    """Probability of detection, H / (H + Mi)."""
    den = table.hits + table.misses
    return table.hits / den if den else 0.0


def far(table: ContingencyTable) -> float:
    """False alarm ratio, F / (H + F)."""
    den = table.hits + table.false_alarms
    return table.false_alarms / den if den else 0.0
