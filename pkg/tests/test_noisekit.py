import math

import numpy as np
import pytest

from relightkit.errors import InvalidParams, ShapeMismatch, StepOutOfRange
from relightkit.lightmodel import LightSample, normalize, sh_encode
from relightkit.noisekit import (
    DiffusionSchedule,
    IdentityCodec,
    ddim_sample,
    ddim_timesteps,
    diffusion_loss,
    light_embedding,
    noise_stats,
    noisy_latent,
    pyramid_noise,
)
from relightkit.radiometry import LinearImage


class TestSchedule:
    def test_linear_monotone_and_bounds(self):
        s = DiffusionSchedule.linear()
        assert s.steps == 1000
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert s.alpha_bars[-1] > 0.0

    def test_cosine_monotone_and_bounds(self):
        s = DiffusionSchedule.cosine()
        assert np.all(np.diff(s.alpha_bars) <= 0)
        assert s.alpha_bars[-1] > 0.0

    def test_first_step_matches_beta(self):
        s = DiffusionSchedule.linear(beta_start=1e-4)
        assert abs(s.alpha_bar(1) - (1.0 - 1e-4)) < 1e-15
        c = DiffusionSchedule.cosine()
        f = np.cos((np.arange(2) / 1000 + 0.008) / 1.008 * math.pi / 2.0) ** 2
        beta1 = 1.0 - f[1] / f[0]
        assert abs(c.alpha_bar(1) - (1.0 - beta1)) < 1e-12

    def test_validation(self):
        with pytest.raises(InvalidParams):
            DiffusionSchedule(np.array([0.5, 0.9]))  # increasing
        with pytest.raises(InvalidParams):
            DiffusionSchedule(np.array([0.9, 0.0]))  # hits zero

    def test_step_bounds(self):
        s = DiffusionSchedule.linear(steps=10)
        with pytest.raises(StepOutOfRange):
            s.alpha_bar(0)
        with pytest.raises(StepOutOfRange):
            s.alpha_bar(11)

    def test_json_roundtrip(self):
        s = DiffusionSchedule.linear(steps=17)
        again = DiffusionSchedule.from_json(s.to_json())
        assert np.allclose(again.alpha_bars, s.alpha_bars, rtol=0, atol=1e-15)


class TestPyramidNoise:
    def test_single_level_is_white_unit_variance(self):
        f = pyramid_noise(256, 256, 3, levels=1, seed=3)
        stats = noise_stats(f)
        assert abs(stats["variance"] - 1.0) < 0.05
        assert abs(stats["lag1_autocorr"]) < 0.02

    def test_default_statistics_over_seeds(self):
        means, variances = [], []
        for seed in range(16):
            f = pyramid_noise(256, 256, 3, levels=6, discount=0.8, seed=seed)
            s = noise_stats(f)
            means.append(s["mean"])
            variances.append(s["variance"])
        assert max(abs(m) for m in means) < 0.02
        assert all(abs(v - 1.0) < 0.05 for v in variances)

    def test_multilevel_raises_spatial_correlation(self):
        white = noise_stats(pyramid_noise(256, 256, 1, levels=1, seed=5))
        pyr = noise_stats(pyramid_noise(256, 256, 1, levels=6, discount=0.8, seed=5))
        assert pyr["lag1_autocorr"] > white["lag1_autocorr"]
        assert pyr["lag1_autocorr"] > 0.2

    def test_deterministic(self):
        a = pyramid_noise(64, 32, 3, seed=9)
        b = pyramid_noise(64, 32, 3, seed=9)
        assert np.array_equal(a, b)
        c = pyramid_noise(64, 32, 3, seed=10)
        assert not np.array_equal(a, c)

    def test_invalid_params(self):
        with pytest.raises(InvalidParams):
            pyramid_noise(16, 16, levels=0)
        with pytest.raises(InvalidParams):
            pyramid_noise(16, 16, discount=0.0)
        with pytest.raises(InvalidParams):
            pyramid_noise(0, 16)


class TestForwardNoising:
    def test_alpha_one_returns_signal(self):
        sched = DiffusionSchedule(np.array([1.0, 0.5, 0.1]))
        z0 = np.random.default_rng(0).standard_normal((4, 4, 3))
        eps = np.random.default_rng(1).standard_normal((4, 4, 3))
        assert np.array_equal(noisy_latent(z0, eps, 1, sched), z0)

    def test_alpha_vanishing_returns_noise(self):
        sched = DiffusionSchedule(np.array([1.0, 1e-12]))
        z0 = np.random.default_rng(2).standard_normal((4, 4, 3))
        eps = np.random.default_rng(3).standard_normal((4, 4, 3))
        out = noisy_latent(z0, eps, 2, sched)
        assert np.max(np.abs(out - eps)) < 1e-5

    def test_quarter_alpha_midpoint(self):
        sched = DiffusionSchedule(np.array([1.0, 0.25]))
        out = noisy_latent(np.ones((2, 2, 1)), np.zeros((2, 2, 1)), 2, sched)
        assert np.all(out == 0.5)

    def test_shape_mismatch(self):
        sched = DiffusionSchedule.linear(steps=10)
        with pytest.raises(ShapeMismatch):
            noisy_latent(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), 1, sched)

    def test_variance_preserving(self):
        sched = DiffusionSchedule.linear()
        t = 500
        variances = []
        for seed in range(16):
            rng = np.random.default_rng(seed)
            z0 = rng.standard_normal((256, 256))
            eps = rng.standard_normal((256, 256))
            variances.append(float(noisy_latent(z0, eps, t, sched).var()))
        assert all(abs(v - 1.0) < 0.05 for v in variances)


class _OracleDenoiser:
    """Returns the injected noise exactly (loss oracle)."""

    def __init__(self, eps):
        self.eps = eps
        self.seen_input = None

    def predict(self, latent_input, embedding, t):
        self.seen_input = np.array(latent_input)
        return self.eps


class _OffsetDenoiser(_OracleDenoiser):
    def __init__(self, eps, c):
        super().__init__(eps)
        self.c = c

    def predict(self, latent_input, embedding, t):
        return self.eps + self.c


class TestDiffusionLoss:
    def _setup(self, seed=0, size=8):
        rng = np.random.default_rng(seed)
        flat = LinearImage(rng.uniform(0, 1, (size, size, 3)).astype(np.float32))
        olat = LinearImage(rng.uniform(0, 1, (size, size, 3)).astype(np.float32))
        eps = rng.standard_normal((size, size, 3))
        emb = light_embedding(LightSample(normalize([0.0, 0.0, 1.0]), 0.0))
        sched = DiffusionSchedule.linear()
        return flat, olat, eps, emb, sched

    def test_oracle_denoiser_zero_loss(self):
        flat, olat, eps, emb, sched = self._setup()
        loss = diffusion_loss(_OracleDenoiser(eps), IdentityCodec(), flat, olat, emb, 400, eps, sched)
        assert loss == 0.0

    def test_constant_offset_closed_form(self):
        flat, olat, eps, emb, sched = self._setup()
        c = 0.37
        loss = diffusion_loss(
            _OffsetDenoiser(eps, c), IdentityCodec(), flat, olat, emb, 400, eps, sched
        )
        n = eps.size
        assert abs(loss - c * c * n) / (c * c * n) < 1e-12

    def test_mean_reduction(self):
        flat, olat, eps, emb, sched = self._setup()
        c = 0.5
        loss = diffusion_loss(
            _OffsetDenoiser(eps, c), IdentityCodec(), flat, olat, emb, 10, eps, sched,
            reduction="mean",
        )
        assert abs(loss - c * c) < 1e-12

    def test_nonnegative_for_random_denoisers(self):
        flat, olat, eps, emb, sched = self._setup()

        class Random:
            def __init__(self, seed):
                self.rng = np.random.default_rng(seed)

            def predict(self, latent_input, embedding, t):
                return self.rng.standard_normal(latent_input.shape[:-1] + (3,))

        for seed in range(100):
            loss = diffusion_loss(Random(seed), IdentityCodec(), flat, olat, emb, 250, eps, sched)
            assert loss >= 0.0

    def test_denoiser_sees_noisy_concat_conditioning(self):
        flat, olat, eps, emb, sched = self._setup()
        spy = _OracleDenoiser(eps)
        diffusion_loss(spy, IdentityCodec(), flat, olat, emb, 400, eps, sched)
        assert spy.seen_input.shape == (8, 8, 6)
        expected_noisy = noisy_latent(olat.data.astype(np.float64), eps, 400, sched)
        assert np.allclose(spy.seen_input[..., :3], expected_noisy)
        assert np.allclose(spy.seen_input[..., 3:], flat.data)


class TestLightEmbedding:
    def test_flat_lit_code_is_zero(self):
        emb = light_embedding(LightSample(normalize([0.3, 0.4, 0.866]), 1.0), 64)
        assert np.all(emb == 0.0)

    def test_direction_encoded_in_tail(self):
        d = normalize([0.0, 0.0, 1.0])
        emb = light_embedding(LightSample(d, 0.0), 1024)
        assert np.array_equal(emb[-16:], sh_encode(d))
        assert np.all(emb[:-16] == 0.0)

    def test_size_preserves_direction_code(self):
        d = normalize([0.6, -0.3, 0.74])
        a = light_embedding(LightSample(d, 0.0), 32)
        b = light_embedding(LightSample(d, 0.5), 32)
        assert np.allclose(a, b, atol=1e-12)


class _AnalyticPointDenoiser:
    """Exact noise predictor for a one-point data distribution {z*}."""

    def __init__(self, z_star, sched):
        self.z_star = z_star
        self.sched = sched

    def predict(self, latent_input, embedding, t):
        z = latent_input[..., : self.z_star.shape[-1]]
        ab = self.sched.alpha_bar(t)
        return (z - math.sqrt(ab) * self.z_star) / math.sqrt(1.0 - ab)


class TestDdim:
    def test_timesteps_bounds(self):
        ts = ddim_timesteps(1000, 30)
        assert ts[0] == 1000 and ts[-1] == 1 and len(ts) == 30
        assert np.all(np.diff(ts) < 0)
        with pytest.raises(StepOutOfRange):
            ddim_timesteps(100, 101)

    def test_converges_to_point_mass(self):
        sched = DiffusionSchedule.linear()
        rng = np.random.default_rng(4)
        z_star = rng.standard_normal((8, 8, 3))
        cond = np.zeros((8, 8, 3))
        emb = np.zeros(1024)
        out = ddim_sample(_AnalyticPointDenoiser(z_star, sched), cond, emb, sched, n_steps=30, seed=0)
        assert np.max(np.abs(out - z_star)) < 1e-4

    def test_full_steps_no_worse(self):
        sched = DiffusionSchedule.linear(steps=100)
        rng = np.random.default_rng(5)
        z_star = rng.standard_normal((4, 4, 3))
        cond = np.zeros((4, 4, 3))
        emb = np.zeros(16)
        den = _AnalyticPointDenoiser(z_star, sched)
        err30 = np.max(np.abs(ddim_sample(den, cond, emb, sched, n_steps=30, seed=1) - z_star))
        err_full = np.max(np.abs(ddim_sample(den, cond, emb, sched, n_steps=100, seed=1) - z_star))
        assert err_full <= err30 + 1e-12

    def test_error_monotone_over_final_steps(self):
        sched = DiffusionSchedule.linear()
        rng = np.random.default_rng(6)
        z_star = rng.standard_normal((4, 4, 3))
        den = _AnalyticPointDenoiser(z_star, sched)
        _, traj = ddim_sample(
            den, np.zeros((4, 4, 3)), np.zeros(16), sched, n_steps=30, seed=2,
            return_trajectory=True,
        )
        errs = [float(np.max(np.abs(z - z_star))) for z in traj[-10:]]
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))

    def test_deterministic_given_seed(self):
        sched = DiffusionSchedule.linear(steps=50)
        rng = np.random.default_rng(7)
        z_star = rng.standard_normal((4, 4, 3))
        den = _AnalyticPointDenoiser(z_star, sched)
        a = ddim_sample(den, np.zeros((4, 4, 3)), np.zeros(16), sched, n_steps=25, seed=3)
        b = ddim_sample(den, np.zeros((4, 4, 3)), np.zeros(16), sched, n_steps=25, seed=3)
        assert np.array_equal(a, b)

    def test_pyramid_init_supported(self):
        sched = DiffusionSchedule.linear(steps=50)
        z_star = np.zeros((8, 8, 3))
        den = _AnalyticPointDenoiser(z_star, sched)
        out = ddim_sample(den, np.zeros((8, 8, 3)), np.zeros(16), sched, n_steps=20, seed=4, init="pyramid")
        assert np.max(np.abs(out - z_star)) < 1e-4


class TestIdentityCodec:
    def test_roundtrip(self):
        codec = IdentityCodec()
        img = LinearImage(np.random.default_rng(8).uniform(0, 1, (4, 4, 3)).astype(np.float32))
        z = codec.encode(img)
        assert np.array_equal(codec.decode(z), img.data)
