"""
Unit Tests for Diffusion

Tests the schedule, samplers, trainer and nowcast operator including:
- alpha_bar arithmetic and forward-noise statistics
- Oracle recovery through both samplers
- Loss oracles, optimizer behaviour and determinism
- Full-field nowcast tiling and worker independence
- Anchored residual coding of the target
"""

import math

import numpy as np
import pytest

from hailcast.config import Settings
from hailcast.core.errors import (
    BoundsError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    EmptyResultError,
    SamplingDivergenceError,
)
from hailcast.core.rng import derive_rng
from hailcast.diffusion.nowcast import nowcast, nowcast_patch
from hailcast.diffusion.samplers import (
    ddim_chain,
    ddim_timesteps,
    get_sampler,
    sample_ddim,
    sample_ddpm,
)
from hailcast.diffusion.schedule import build_schedule, forward_noise, schedule_from_settings
from hailcast.diffusion.trainer import (
    CHECKPOINTS_DIR,
    FINAL_CHECKPOINT,
    TRAIN_LOG,
    AdamW,
    TrainState,
    draw_batch,
    train,
    training_loss,
)
from hailcast.model.coding import TargetCoding, last_patch_frame
from hailcast.model.params import DenoiserParams, load_checkpoint
from hailcast.numeric.tensor import Tensor
from hailcast.patches.grid import PatchIndex, ReferencePatchSet
from hailcast.radar.dataset import RadarDataset
from hailcast.verification.metrics import persistence_baseline


class TestSchedule:
    """Tests for the linear beta schedule."""

    def test_two_step_products(self):
        """beta (0.1, 0.2) gives alpha_bar [0.9, 0.9 * 0.8]."""
        sched = build_schedule(2, 0.1, 0.2)

        assert sched.alpha_bar[0] == 0.9
        assert sched.alpha_bar[1] == 0.9 * 0.8
        assert sched.alpha_bar[1] == pytest.approx(0.72)

    def test_defaults(self):
        """200 steps from 1e-4 to 0.02."""
        sched = build_schedule(200, 1e-4, 0.02)

        assert sched.steps == 200
        assert sched.beta_at(1) == pytest.approx(1e-4)
        assert sched.beta_at(200) == pytest.approx(0.02)
        assert np.all(np.diff(sched.alpha_bar) < 0)

    def test_settings_default_reaches_noise(self, tmp_path):
        """The default 200-step schedule ends close to pure noise."""
        sched = schedule_from_settings(Settings(out_dir=tmp_path))

        assert sched.steps == 200
        assert sched.alpha_bar_at(200) < 1e-4
        assert sched.beta_at(200) == pytest.approx(0.1)

    def test_constant_beta(self):
        """Equal endpoints give a constant schedule."""
        sched = build_schedule(5, 0.1, 0.1)

        np.testing.assert_allclose(sched.beta, 0.1)

    def test_alpha_bar_at_zero_is_one(self):
        """Step 0 is the identity."""
        assert build_schedule(10, 0.01, 0.1).alpha_bar_at(0) == 1.0

    @pytest.mark.parametrize("args", [(1, 0.1, 0.2), (10, 0.2, 0.1), (10, 0.0, 0.1), (10, 0.1, 1.0)])
    def test_invalid_ranges(self, args):
        """Too few steps or bad beta ranges are configuration errors."""
        with pytest.raises(ConfigurationError):
            build_schedule(*args)

    def test_timestep_bounds(self):
        """Steps outside 1..T are bounds errors."""
        with pytest.raises(BoundsError):
            build_schedule(10, 0.01, 0.1).beta_at(11)


class TestForwardNoise:
    """Tests for q(x_t | x_0)."""

    def test_scalar_value(self):
        """alpha_bar 0.72, x0 = 1, eps = 1 gives sqrt(0.72) + sqrt(0.28)."""
        sched = build_schedule(2, 0.1, 0.2)

        x_t = forward_noise(np.array(1.0), 2, np.array(1.0), sched)

        assert float(x_t) == pytest.approx(math.sqrt(0.72) + math.sqrt(0.28))
        assert float(x_t) == pytest.approx(1.3778, abs=1e-4)

    def test_zero_signal(self, rng: np.random.Generator):
        """x0 = 0 leaves scaled noise."""
        sched = build_schedule(10, 0.01, 0.1)
        eps = rng.standard_normal(5)

        np.testing.assert_allclose(
            forward_noise(np.zeros(5), 4, eps, sched), math.sqrt(1 - sched.alpha_bar_at(4)) * eps
        )

    def test_step_zero_is_identity(self, rng: np.random.Generator):
        """alpha_bar = 1 returns x0."""
        x0 = rng.random(4)

        np.testing.assert_array_equal(
            forward_noise(x0, 0, rng.standard_normal(4), build_schedule(3, 0.1, 0.2)), x0
        )

    def test_moments(self):
        """Mean and variance match theory within three standard errors."""
        sched = build_schedule(200, 1e-4, 0.02)
        gen = np.random.default_rng(0)
        n, t, x0 = 100_000, 80, 0.6
        ab = sched.alpha_bar_at(t)

        x_t = forward_noise(np.full(n, x0), t, gen.standard_normal(n), sched)

        var = 1.0 - ab
        assert abs(x_t.mean() - math.sqrt(ab) * x0) < 3 * math.sqrt(var / n)
        assert abs(x_t.var() - var) < 3 * var * math.sqrt(2.0 / (n - 1))

    def test_shape_mismatch(self):
        """eps must match x0."""
        with pytest.raises(DimensionError):
            forward_noise(np.zeros(3), 1, np.zeros(4), build_schedule(3, 0.1, 0.2))


def _oracle(x0: np.ndarray, sched):
    def eps_fn(x: np.ndarray, t: int) -> np.ndarray:
        ab = sched.alpha_bar_at(t)
        return (x - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)

    return eps_fn


class TestSamplers:
    """Tests for DDPM and DDIM chains."""

    @pytest.fixture
    def refs(self, rng: np.random.Generator) -> ReferencePatchSet:
        return ReferencePatchSet(patches=rng.random((9, 8, 8, 2)), indices=[PatchIndex.at(0, 0, 1)] * 9)

    def test_ddpm_oracle_recovery(self, refs, toy_params: DenoiserParams, rng: np.random.Generator):
        """An exact noise oracle recovers x0 through the ancestral chain."""
        sched = build_schedule(50, 1e-4, 0.02)
        x0 = rng.random((8, 8, 2))

        out = sample_ddpm(refs, toy_params, sched, eps_fn=_oracle(x0, sched), forecast_steps=2, deterministic=True)

        assert np.max(np.abs(out.values[0] - x0)) <= 1e-6

    def test_ddim_oracle_recovery(self, refs, toy_params: DenoiserParams, rng: np.random.Generator):
        """An exact noise oracle recovers x0 through the strided chain."""
        sched = build_schedule(50, 1e-4, 0.02)
        x0 = rng.random((8, 8, 2))

        out = sample_ddim(refs, toy_params, sched, steps=7, eps_fn=_oracle(x0, sched), forecast_steps=2)

        assert np.max(np.abs(out.values[0] - x0)) <= 1e-6

    def test_ddpm_stochastic_oracle_recovery(self, refs, toy_params: DenoiserParams, rng: np.random.Generator):
        """The final step has no posterior noise, so the oracle still lands on x0."""
        sched = build_schedule(20, 1e-4, 0.02)
        x0 = rng.random((8, 8, 2))

        out = sample_ddpm(refs, toy_params, sched, eps_fn=_oracle(x0, sched), forecast_steps=2, seed=3)

        assert np.max(np.abs(out.values[0] - x0)) <= 1e-6

    def test_full_grid_ddim_is_deterministic_ancestral(self, refs, toy_params: DenoiserParams, rng: np.random.Generator):
        """DDIM over every step equals the eta = 0 recursion written out by hand."""
        sched = build_schedule(12, 1e-3, 0.2)
        x_start = rng.standard_normal((8, 8, 2))

        def eps_fn(x: np.ndarray, t: int) -> np.ndarray:
            return np.tanh(x) * 0.5 + 0.01 * t

        x = x_start.copy()
        for t in range(12, 0, -1):
            ab, ab_prev = sched.alpha_bar_at(t), sched.alpha_bar_at(t - 1)
            eps = eps_fn(x, t)
            x0_pred = (x - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
            x = math.sqrt(ab_prev) * x0_pred + math.sqrt(1.0 - ab_prev) * eps

        out = ddim_chain(eps_fn, (8, 8, 2), sched, 12, rng, x_start=x_start)

        np.testing.assert_allclose(out, x, rtol=1e-12, atol=1e-12)

    def test_decode_runs_before_clip(self, refs, toy_params: DenoiserParams, rng: np.random.Generator):
        """A zero residual decodes to the anchor frames."""
        sched = build_schedule(20, 1e-4, 0.02)
        coding = TargetCoding("persistence", 0.1)
        last = rng.random((8, 8))

        out = sample_ddim(
            refs,
            toy_params,
            sched,
            steps=5,
            eps_fn=_oracle(np.zeros((8, 8, 2)), sched),
            forecast_steps=2,
            decode=lambda z: coding.decode(z, last),
        )

        np.testing.assert_allclose(out.values[0], np.repeat(last[:, :, None], 2, axis=2), atol=1e-6)

    def test_ddim_grid(self):
        """Strided steps are descending, start at T and end at 1."""
        assert ddim_timesteps(200, 20)[0] == 200
        assert ddim_timesteps(200, 20)[-1] == 1
        assert ddim_timesteps(200, 1) == [200]
        assert ddim_timesteps(10, 10) == list(range(10, 0, -1))
        with pytest.raises(ConfigurationError):
            ddim_timesteps(10, 11)

    def test_outputs_clipped(self, refs, toy_params: DenoiserParams):
        """Sampler outputs lie in [0, 1]."""
        sched = build_schedule(10, 1e-4, 0.02)

        out = sample_ddpm(refs, toy_params, sched, forecast_steps=2, seed=1)

        assert out.values.shape == (1, 8, 8, 2)
        assert out.values.min() >= 0.0
        assert out.values.max() <= 1.0

    def test_fixed_seed_is_bit_identical(self, refs, toy_params: DenoiserParams):
        """The same seed gives the same sample."""
        sched = build_schedule(10, 1e-4, 0.02)

        a = sample_ddim(refs, toy_params, sched, steps=4, seed=5)
        b = sample_ddim(refs, toy_params, sched, steps=4, seed=5)

        assert a.values.tobytes() == b.values.tobytes()

    def test_divergence_names_step(self, refs, toy_params: DenoiserParams):
        """A non-finite noise estimate aborts with the step index."""
        sched = build_schedule(10, 1e-4, 0.02)

        def bad(x: np.ndarray, t: int) -> np.ndarray:
            return np.full_like(x, np.nan) if t == 7 else np.zeros_like(x)

        with pytest.raises(SamplingDivergenceError) as exc:
            sample_ddpm(refs, toy_params, sched, eps_fn=bad, forecast_steps=2)

        assert exc.value.step == 7

    def test_registry(self):
        """Samplers are looked up by name."""
        assert get_sampler("ddpm") is sample_ddpm
        with pytest.raises(ConfigurationError):
            get_sampler("euler")


class TestTrainingLoss:
    """Tests for the epsilon objective."""

    @pytest.fixture
    def batch(self, tiny_settings: Settings, tiny_dataset):
        dataset = RadarDataset(tiny_dataset)
        return draw_batch(dataset, dataset.ids("train"), tiny_settings.model_copy(update={"batch_size": 8}), 0)

    def test_oracle_predictor_has_zero_loss(self, batch, tiny_settings: Settings):
        """Predicting the drawn noise exactly gives loss 0."""
        sched = schedule_from_settings(tiny_settings)

        def oracle(x_t: np.ndarray, t: int, sample) -> Tensor:
            ab = sched.alpha_bar_at(t)
            x0 = sample.x0
            return Tensor((x_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab))

        result = training_loss(batch, None, sched, predict=oracle)

        assert result.value == pytest.approx(0.0, abs=1e-20)
        assert len(result.timesteps) == 4

    def test_zero_predictor_has_unit_loss(self, batch, tiny_settings: Settings):
        """Predicting zeros costs the mean squared normal, about 1."""
        sched = schedule_from_settings(tiny_settings)

        result = training_loss(batch, None, sched, predict=lambda x, t, s: Tensor(np.zeros_like(x)))

        assert result.value == pytest.approx(1.0, abs=0.1)

    def test_empty_batch(self, tiny_settings: Settings):
        """An empty batch is an empty-result error."""
        with pytest.raises(EmptyResultError):
            training_loss([], None, schedule_from_settings(tiny_settings), predict=lambda x, t, s: Tensor(x))

    def test_non_finite_loss_names_step(self, batch, tiny_settings: Settings):
        """A NaN prediction is a divergence at the current step."""
        sched = schedule_from_settings(tiny_settings)

        with pytest.raises(DivergenceError) as exc:
            training_loss(
                batch, None, sched, predict=lambda x, t, s: Tensor(np.full_like(x, np.inf)), step=12
            )

        assert exc.value.step == 12

    def test_gradients_cover_every_parameter(self, batch, tiny_settings: Settings):
        """The model loss returns a gradient for every parameter."""
        state = TrainState.from_settings(tiny_settings)

        result = training_loss(batch, state.params, schedule_from_settings(tiny_settings))

        assert set(result.grads) == set(state.params.tensors)
        assert any(np.any(g != 0) for g in result.grads.values())


class TestOptimizer:
    """Tests for AdamW and the training loop."""

    def test_zero_lr_keeps_parameters(self, tiny_settings: Settings, tiny_dataset):
        """lr = 0 leaves parameters bit-identical."""
        settings = tiny_settings.model_copy(update={"lr": 0.0, "train_steps": 3})
        state = TrainState.from_settings(settings)
        before = state.params.snapshot()

        train(state, RadarDataset(tiny_dataset), settings)

        after = state.params.snapshot()
        assert all(before[k].tobytes() == after[k].tobytes() for k in before)

    def test_single_step_descends(self, tiny_settings: Settings, tiny_dataset):
        """One update lowers the loss on the same sample and draws."""
        settings = tiny_settings.model_copy(update={"lr": 1e-4, "weight_decay": 0.0})
        dataset = RadarDataset(tiny_dataset)
        state = TrainState.from_settings(settings)
        sched = schedule_from_settings(settings)

        def sample():
            return draw_batch(dataset, dataset.ids("train"), settings, 0)

        before = training_loss(sample(), state.params, sched).value
        state.optimizer.step()
        after = training_loss(sample(), state.params, sched).value

        assert after < before

    def test_weight_decay_skips_vectors(self, toy_params: DenoiserParams):
        """Decay shrinks matrices but leaves biases and gains alone."""
        opt = AdamW(toy_params, lr=0.1, weight_decay=0.5)
        toy_params.zero_grad()
        w_before = toy_params["tok_in.w"].data.copy()
        g_before = toy_params["blocks.0.ln1.g"].data.copy()

        opt.step()

        np.testing.assert_allclose(toy_params["tok_in.w"].data, w_before * (1 - 0.1 * 0.5))
        np.testing.assert_array_equal(toy_params["blocks.0.ln1.g"].data, g_before)

    def test_training_is_deterministic(self, tiny_settings: Settings, tiny_dataset):
        """Two runs with one seed give identical curves and parameters."""
        dataset = RadarDataset(tiny_dataset)
        a = train(TrainState.from_settings(tiny_settings), dataset, tiny_settings)
        b = train(TrainState.from_settings(tiny_settings), dataset, tiny_settings)

        assert a.loss_history == b.loss_history
        assert a.val_history == b.val_history
        snap_a, snap_b = a.params.snapshot(), b.params.snapshot()
        assert all(snap_a[k].tobytes() == snap_b[k].tobytes() for k in snap_a)

    def test_artifacts(self, tiny_settings: Settings, tiny_dataset, tmp_path):
        """Training writes step checkpoints, the final checkpoint and the log."""
        out = tmp_path / "train"

        state = train(TrainState.from_settings(tiny_settings), RadarDataset(tiny_dataset), tiny_settings, out_dir=out)

        assert state.step == 2
        assert (out / CHECKPOINTS_DIR / "step_000001").is_dir()
        assert (out / TRAIN_LOG).exists()
        _, manifest = load_checkpoint(out / FINAL_CHECKPOINT)
        assert manifest["step"] == 2
        assert [v["step"] for v in state.val_history] == [0, 1, 2]


class TestNowcast:
    """Tests for the tiled forecast operator."""

    @pytest.fixture
    def params(self, tiny_settings: Settings) -> DenoiserParams:
        return TrainState.from_settings(tiny_settings).params

    def test_full_field_shape(self, tiny_settings: Settings, params, rng: np.random.Generator):
        """A 32x32 history becomes a 32x32 nowcast for every lead."""
        out = nowcast(rng.random((2, 32, 32)), params, tiny_settings)

        assert out.shape == (2, 32, 32)
        assert out.min() >= 0.0
        assert out.max() <= 1.0

    def test_tiles_match_patch_nowcasts(self, tiny_settings: Settings, params, rng: np.random.Generator):
        """Each stitched tile equals the nowcast of that patch alone."""
        history = rng.random((2, 32, 32))

        full = nowcast(history, params, tiny_settings, window_id=4)

        cell = PatchIndex.at(1, 0, 2)
        single = nowcast_patch(history, cell, params, tiny_settings, window_id=4).frames()
        np.testing.assert_array_equal(full[:, 16:32, 0:16], single)

    def test_independent_of_workers(self, tiny_settings: Settings, params, rng: np.random.Generator):
        """Thread count does not change the stitched result."""
        history = rng.random((2, 32, 32))

        one = nowcast(history, params, tiny_settings)
        four = nowcast(history, params, tiny_settings.model_copy(update={"workers": 4}))

        assert one.tobytes() == four.tobytes()

    def test_ensemble_mean(self, tiny_settings: Settings, params, rng: np.random.Generator):
        """An ensemble reports the mean of its members."""
        history = rng.random((2, 32, 32))
        settings = tiny_settings.model_copy(update={"ensemble_size": 2, "sampler": "ddpm"})
        cell = PatchIndex.at(0, 1, 2)

        full = nowcast(history, params, settings)

        members = [nowcast_patch(history, cell, params, settings, member=k).frames() for k in range(2)]
        np.testing.assert_allclose(full[:, 0:16, 16:32], np.mean(members, axis=0))

    def test_geometry_mismatch(self, tiny_settings: Settings, params):
        """A history of the wrong size is a configuration error."""
        with pytest.raises(ConfigurationError):
            nowcast(np.zeros((2, 64, 64)), params, tiny_settings)

    def test_reference_mode_must_match_model(self, tiny_settings: Settings, rng: np.random.Generator):
        """A model trained on the full grid is not sampled on the neighborhood."""
        settings = tiny_settings.model_copy(update={"reference_mode": "full_grid"})
        params = TrainState.from_settings(settings).params

        with pytest.raises(ConfigurationError, match="full_grid"):
            nowcast(rng.random((2, 32, 32)), params, tiny_settings)

        assert nowcast(rng.random((2, 32, 32)), params, settings).shape == (2, 32, 32)

    def test_small_residual_scale_tracks_persistence(self, tiny_settings: Settings, rng: np.random.Generator):
        """With the persistence anchor the sample stays within scale * |z| of the last frame."""
        settings = tiny_settings.model_copy(update={"residual_scale": 1e-6})
        params = TrainState.from_settings(settings).params
        history = rng.random((2, 32, 32))

        out = nowcast(history, params, settings)

        np.testing.assert_allclose(out, persistence_baseline(history, 2), atol=1e-3)

    def test_member_streams_differ(self):
        """Ensemble members draw from distinct streams."""
        a = derive_rng(0, "sample", 1, 2, 0).standard_normal(4)
        b = derive_rng(0, "sample", 1, 2, 1).standard_normal(4)

        assert not np.array_equal(a, b)


class TestTargetCoding:
    """Tests for the anchored residual coding."""

    def test_persistence_round_trip(self, rng: np.random.Generator):
        """encode then decode returns the target."""
        coding = TargetCoding("persistence", 0.1)
        future, last = rng.random((4, 4, 3)), rng.random((4, 4))

        z = coding.encode(future, last)

        np.testing.assert_allclose(z[:, :, 1], (future[:, :, 1] - last) / 0.1)
        np.testing.assert_allclose(coding.decode(z, last), future)

    def test_none_anchor_is_plain_scaling(self, rng: np.random.Generator):
        future = rng.random((4, 4, 2))

        z = TargetCoding("none", 2.0).encode(future, rng.random((4, 4)))

        np.testing.assert_allclose(z, future / 2.0)

    @pytest.mark.parametrize("anchor, scale", [("climatology", 1.0), ("none", 0.0)])
    def test_invalid(self, anchor: str, scale: float):
        with pytest.raises(ConfigurationError):
            TargetCoding(anchor, scale)

    def test_last_patch_frame(self):
        """The anchor is the newest frame of the requested cell."""
        history = np.arange(2 * 4 * 4, dtype=np.float64).reshape(2, 4, 4)

        np.testing.assert_array_equal(last_patch_frame(history, 1, 0, 2), history[1, 2:4, 0:2])

    def test_training_samples_are_coded(self, tiny_settings: Settings, tiny_dataset):
        """Drawn samples diffuse (future - last frame) / scale."""
        dataset = RadarDataset(tiny_dataset)
        sample = draw_batch(dataset, dataset.ids("train"), tiny_settings, 0)[0]
        r, c = sample.target.index.cell
        last = last_patch_frame(dataset.window(sample.window_id).history, r, c, 16)

        expected = (sample.target.values[0] - last[:, :, None]) / tiny_settings.residual_scale
        np.testing.assert_allclose(sample.x0, expected)

    def test_checkpoint_keeps_coding(self, tiny_settings: Settings, tiny_dataset, tmp_path):
        """The coding is part of the saved model config."""
        settings = tiny_settings.model_copy(update={"residual_scale": 0.25})
        state = train(TrainState.from_settings(settings), RadarDataset(tiny_dataset), settings, out_dir=tmp_path)

        params, _ = load_checkpoint(tmp_path / FINAL_CHECKPOINT)

        assert params.config.coding == TargetCoding("persistence", 0.25)
        assert params.config.coding == state.params.config.coding

