"""
Unit Tests for Verification

Tests forecast scores including:
- MSE / PSNR / SSIM closed forms
- Contingency tables against loop counting
- ETS / ACC bounds by exhaustive enumeration
- Persistence baseline
- Run-level evaluation and metrics.json
"""

import itertools
import math

import numpy as np
import orjson
import pytest

from hailcast.config import Settings
from hailcast.core.errors import ConfigurationError, DimensionError, EvaluationError
from hailcast.core.tensor_io import write_array
from hailcast.radar.dataset import WINDOW_FILE, RadarDataset
from hailcast.radar.simulator import StormCell, generate_sequence
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
    SSIM_K1,
    mse,
    persistence_baseline,
    psnr,
    psnr_from_mse,
    ssim,
)
from hailcast.verification.report import METRICS_FILE, evaluate_run, score_windows


class TestContinuousScores:
    """Tests for MSE, PSNR and SSIM."""

    def test_mse_examples(self, rng: np.random.Generator):
        """Identical fields give 0; a 0.1 offset gives 0.01."""
        truth = rng.random((4, 4))

        assert mse(truth, truth) == 0.0
        assert mse(truth + 0.1, truth) == pytest.approx(0.01)

    def test_mse_symmetric(self, rng: np.random.Generator):
        """mse(a, b) == mse(b, a)."""
        a, b = rng.random((5, 5)), rng.random((5, 5))

        assert mse(a, b) == mse(b, a)

    def test_mse_shape_mismatch(self):
        """Shapes must agree."""
        with pytest.raises(DimensionError):
            mse(np.zeros(3), np.zeros(4))

    def test_psnr_twenty_db(self):
        """MSE 0.01 is exactly 20 dB."""
        assert psnr_from_mse(0.01) == 20.0

    def test_psnr_headline_scale(self):
        """MSE 0.0048 is about 23.19 dB."""
        assert psnr_from_mse(0.0048) == pytest.approx(23.19, abs=0.01)

    def test_psnr_identical_is_infinite(self, rng: np.random.Generator):
        """Zero error is the infinity sentinel."""
        x = rng.random((3, 3))

        assert math.isinf(psnr(x, x))

    def test_ssim_identical(self, rng: np.random.Generator):
        """SSIM of an image with itself is 1."""
        x = rng.random((16, 16))

        assert ssim(x, x) == pytest.approx(1.0)

    def test_ssim_inverted_checkerboard(self):
        """An inverted binary pattern is anti-correlated."""
        board = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)

        assert ssim(1.0 - board, board) < 0.0

    def test_ssim_constants(self):
        """Two constant images reduce to (2ab + C1) / (a^2 + b^2 + C1)."""
        a, b = 0.3, 0.7
        c1 = SSIM_K1**2

        value = ssim(np.full((12, 12), a), np.full((12, 12), b))

        assert value == pytest.approx((2 * a * b + c1) / (a * a + b * b + c1), rel=1e-9)

    def test_ssim_symmetric_and_averaged(self, rng: np.random.Generator):
        """SSIM is symmetric and averages [M x H x W] slices."""
        a, b = rng.random((3, 12, 12)), rng.random((3, 12, 12))

        assert ssim(a, b) == pytest.approx(ssim(b, a))
        assert ssim(a, b) == pytest.approx(np.mean([ssim(a[i], b[i]) for i in range(3)]))

    def test_ssim_too_small(self):
        """Images under the 11x11 window are rejected."""
        with pytest.raises(ConfigurationError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def _loop_table(pred: np.ndarray, truth: np.ndarray, threshold: float) -> tuple[int, int, int, int]:
    h = mi = f = cn = 0
    for p, o in zip(pred.ravel(), truth.ravel(), strict=True):
        if p >= threshold and o >= threshold:
            h += 1
        elif o >= threshold:
            mi += 1
        elif p >= threshold:
            f += 1
        else:
            cn += 1
    return h, mi, f, cn


class TestContingency:
    """Tests for event tabulation."""

    def test_matches_loop_counting(self, rng: np.random.Generator):
        """Vectorised counts equal the loop oracle on every small size."""
        for size in range(1, 21):
            for _ in range(20):
                pred, truth = rng.random(size), rng.random(size)
                t = contingency(pred, truth, 0.5)
                assert (t.hits, t.misses, t.false_alarms, t.correct_negatives) == _loop_table(pred, truth, 0.5)

    def test_random_16x16(self, rng: np.random.Generator):
        """A 16x16 pair matches the loop oracle."""
        pred, truth = rng.random((16, 16)), rng.random((16, 16))
        t = contingency(pred, truth, 0.3)

        assert (t.hits, t.misses, t.false_alarms, t.correct_negatives) == _loop_table(pred, truth, 0.3)

    def test_threshold_is_inclusive(self):
        """Values equal to the threshold are events."""
        t = contingency(np.array([0.5]), np.array([0.5]), 0.5)

        assert t.hits == 1

    def test_perfect_forecast(self, rng: np.random.Generator):
        """pred == truth has no misses or false alarms."""
        x = rng.random((8, 8))
        t = contingency(x, x)

        assert t.misses == 0
        assert t.false_alarms == 0

    def test_all_zero_forecast(self):
        """Zero prediction misses every event."""
        truth = np.zeros((4, 4))
        truth[0, :3] = 0.9

        t = contingency(np.zeros((4, 4)), truth)

        assert (t.hits, t.misses) == (0, 3)

    def test_threshold_monotonicity(self, rng: np.random.Generator):
        """Raising the threshold never increases H + F."""
        pred, truth = rng.random(200), rng.random(200)
        counts = []
        for th in np.linspace(0.05, 0.95, 19):
            t = contingency(pred, truth, float(th))
            counts.append(t.hits + t.false_alarms)

        assert all(a >= b for a, b in itertools.pairwise(counts))

    def test_invalid_threshold(self):
        """Thresholds must lie strictly inside (0, 1)."""
        with pytest.raises(ConfigurationError):
            contingency(np.zeros(2), np.zeros(2), 1.0)

    def test_tables_pool(self):
        """Tables add cell by cell."""
        a = ContingencyTable(1, 2, 3, 4)
        b = ContingencyTable(5, 6, 7, 8)

        assert a + b == ContingencyTable(6, 8, 10, 12)


class TestCategoricalScores:
    """Tests for ETS, ACC, CSI, POD and FAR."""

    def test_perfect_ets(self):
        """Perfect forecast with events and non-events scores 1."""
        assert ets(ContingencyTable(hits=7, misses=0, false_alarms=0, correct_negatives=13)) == pytest.approx(1.0)

    def test_total_miss(self):
        """H=0, F=0, Mi=10, CN=90 scores 0."""
        t = ContingencyTable(hits=0, misses=10, false_alarms=0, correct_negatives=90)

        assert hits_random(t) == 0.0
        assert ets(t) == 0.0

    def test_zero_denominator(self):
        """All correct negatives is defined as 0."""
        assert ets(ContingencyTable(0, 0, 0, 5)) == 0.0

    def test_exhaustive_bounds(self):
        """ETS <= 1 everywhere and <= 0 whenever H <= H_rand, for totals up to 20."""
        for h, mi, f, cn in itertools.product(range(21), repeat=4):
            total = h + mi + f + cn
            if total == 0 or total > 20:
                continue
            t = ContingencyTable(h, mi, f, cn)
            score = ets(t)
            assert score <= 1.0 + 1e-12
            if h <= hits_random(t):
                assert score <= 1e-12

    def test_acc_saturates_for_rare_events(self):
        """All-negative forecast at 1% event rate: ACC 0.99 while ETS is 0."""
        t = ContingencyTable(hits=0, misses=1, false_alarms=0, correct_negatives=99)

        assert acc(t) == pytest.approx(0.99)
        assert ets(t) == 0.0

    def test_acc_formula(self):
        """ACC is (H + CN) / total."""
        assert acc(ContingencyTable(3, 2, 1, 4)) == pytest.approx(0.7)

    def test_derived_scores(self):
        """CSI, POD and FAR follow their ratios and guard zero denominators."""
        t = ContingencyTable(hits=6, misses=2, false_alarms=4, correct_negatives=8)

        assert csi(t) == pytest.approx(0.5)
        assert pod(t) == pytest.approx(0.75)
        assert far(t) == pytest.approx(0.4)
        empty = ContingencyTable(0, 0, 0, 1)
        assert (csi(empty), pod(empty), far(empty)) == (0.0, 0.0, 0.0)


class TestPersistence:
    """Tests for the persistence baseline."""

    def test_shape(self, rng: np.random.Generator):
        """Output is M x H x W built from the last frame."""
        history = rng.random((3, 6, 6))

        out = persistence_baseline(history, 4)

        assert out.shape == (4, 6, 6)
        np.testing.assert_array_equal(out[3], history[-1])

    def test_static_scene_is_perfect(self):
        """A stationary cell is forecast without error."""
        cell = StormCell(center=(16.0, 16.0), velocity=(0.0, 0.0), amplitude=0.9, radius=4.0)
        seq = generate_sequence(seed=0, frames=10, height=32, width=32, n_cells=0, noise_std=0.0, cells=[cell])

        assert mse(persistence_baseline(seq.frames[:5], 5), seq.frames[5:]) == 0.0

    def test_error_grows_with_lead(self):
        """A translating cell makes persistence worse at every lead."""
        cell = StormCell(center=(16.0, 8.0), velocity=(0.0, 1.0), amplitude=0.9, radius=3.0)
        seq = generate_sequence(seed=0, frames=10, height=32, width=32, n_cells=0, noise_std=0.0, cells=[cell])

        pred = persistence_baseline(seq.frames[:5], 5)
        errors = [mse(pred[k], seq.frames[5 + k]) for k in range(5)]

        assert all(a < b for a, b in itertools.pairwise(errors))

    def test_empty_history(self):
        """At least one history frame is required."""
        with pytest.raises(ConfigurationError):
            persistence_baseline(np.zeros((0, 4, 4)), 2)


class TestReport:
    """Tests for run-level aggregation."""

    def test_composite_matches_recomputation(self, rng: np.random.Generator):
        """Pooled scores equal an independent recomputation on two windows."""
        pairs = [(rng.random((2, 12, 12)), rng.random((2, 12, 12))) for _ in range(2)]

        report = score_windows(pairs, threshold=0.5, workers=2)

        preds = np.stack([p for p, _ in pairs])
        truths = np.stack([t for _, t in pairs])
        assert report.mse == pytest.approx(mse(preds, truths))
        assert report.ssim == pytest.approx(np.mean([ssim(p, t) for p, t in pairs]))
        assert report.ets == pytest.approx(ets(contingency(preds, truths, 0.5)))
        assert report.acc == pytest.approx(acc(contingency(preds, truths, 0.5)))
        assert len(report.per_lead) == 2
        assert report.per_lead[1].mse == pytest.approx(mse(preds[:, 1], truths[:, 1]))

    def test_perfect_predictions(self, tiny_settings: Settings, tiny_dataset, tmp_path):
        """Predictions equal to truth give MSE 0, SSIM 1, ETS 1 and ACC 1."""
        ds = RadarDataset(tiny_dataset)
        pred_dir = tmp_path / "pred"
        for wid in ds.ids("test"):
            write_array(pred_dir / WINDOW_FILE.format(wid), ds.window(wid).future)

        report = evaluate_run(pred_dir, tiny_dataset, threshold=0.05, out_path=tmp_path / METRICS_FILE)

        assert report.mse == 0.0
        assert report.ssim == pytest.approx(1.0)
        assert report.ets == pytest.approx(1.0)
        assert report.acc == 1.0
        data = orjson.loads((tmp_path / METRICS_FILE).read_bytes())
        assert data["psnr_db"] is None
        assert data["psnr_infinite"] is True
        assert [lead["lead"] for lead in data["per_lead"]] == [1, 2]
        for key in ("mse", "psnr_db", "ssim", "ets", "acc", "threshold", "n_windows"):
            assert key in data

    def test_missing_predictions(self, tiny_dataset, tmp_path):
        """Absent prediction files are listed in the error."""
        with pytest.raises(EvaluationError) as exc:
            evaluate_run(tmp_path / "nothing", tiny_dataset)

        assert len(exc.value.missing) == 1

    def test_tolerance_flag(self, rng: np.random.Generator):
        """A target tolerance is reported with its verdict."""
        pair = (rng.random((1, 12, 12)), rng.random((1, 12, 12)))

        data = score_windows([pair], target_tolerance=1.0).to_dict()

        assert data["within_tolerance"] is True
