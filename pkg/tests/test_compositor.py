import math

import numpy as np
import pytest

from relightkit.compositor import (
    OlatStack,
    RelitSequence,
    animate_rotation,
    area_light_target,
    area_light_weights,
    composite,
    crossfade_keyframes,
    load_stack_manifest,
    relight_hdri,
    write_stack,
)
from relightkit.envmap import (
    EnvironmentMap,
    OlatWeights,
    hdri_to_olat_weights,
    rotate,
    synthesize_env,
    texel_direction,
)
from relightkit.errors import SizeMismatch
from relightkit.lightmodel import LightSample, SphericalGaussian, build_stage, normalize, sg_sharpness
from relightkit.radiometry import LinearImage, linear_to_srgb, srgb_to_linear, write_png


def random_stack(n=6, size=8, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 1.0, (n, size, size, 3)).astype(np.float32)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return OlatStack(images, dirs, np.full(n, 0.09), tuple(f"f{i}" for i in range(n)))


class TestComposite:
    def test_one_hot_returns_frame(self):
        stack = random_stack()
        w = np.zeros((stack.count, 3))
        w[3] = 1.0
        assert np.array_equal(composite(stack, w).data, stack.images[3])

    def test_zero_weights_black(self):
        stack = random_stack()
        out = composite(stack, np.zeros((stack.count, 3)))
        assert np.all(out.data == 0.0)

    def test_superposition(self):
        stack = random_stack()
        rng = np.random.default_rng(1)
        w1 = rng.uniform(0, 1, (stack.count, 3))
        w2 = rng.uniform(0, 1, (stack.count, 3))
        lhs = composite(stack, w1).data.astype(np.float64) + composite(stack, w2).data
        rhs = composite(stack, w1 + w2).data
        assert np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-9)) < 1e-6

    def test_scaling_power_of_two_exact(self):
        stack = random_stack()
        w = np.random.default_rng(2).uniform(0, 1, (stack.count, 3))
        assert np.array_equal(
            composite(stack, 2.0 * w).data, 2.0 * composite(stack, w).data
        )

    def test_determinism(self):
        stack = random_stack()
        w = np.random.default_rng(3).uniform(0, 1, (stack.count, 3))
        assert np.array_equal(composite(stack, w).data, composite(stack, w).data)

    def test_size_mismatch(self):
        stack = random_stack()
        with pytest.raises(SizeMismatch):
            composite(stack, np.ones((stack.count + 1, 3)))

    def test_accepts_olat_weights_and_scalar_weights(self):
        stack = random_stack()
        w = np.abs(np.random.default_rng(4).standard_normal((stack.count, 3)))
        a = composite(stack, OlatWeights(w)).data
        b = composite(stack, w).data
        assert np.array_equal(a, b)
        mono = composite(stack, w[:, 0]).data  # (N,) applies to all channels
        ref = composite(stack, np.repeat(w[:, :1], 3, axis=1)).data
        assert np.array_equal(mono, ref)


class TestAreaLight:
    def test_weights_sum_to_one(self):
        layout = build_stage()
        for a in (0.0, 0.3, 1.0):
            w = area_light_weights(
                layout.directions, layout.solid_angles, LightSample(layout.directions[17], a)
            )
            assert abs(w.sum() - 1.0) < 1e-9

    def test_sharp_light_concentrates_on_aligned_panel(self):
        layout = build_stage()
        w = area_light_weights(
            layout.directions, layout.solid_angles, LightSample(layout.directions[17], 0.0)
        )
        assert w[17] > 0.999

    def test_flat_limit_near_uniform(self):
        layout = build_stage()
        w = area_light_weights(
            layout.directions, layout.solid_angles, LightSample(layout.directions[17], 1.0)
        )
        ratio = w.max() / w.min()
        assert ratio < math.exp(2.0 * sg_sharpness(1.0)) + 1e-9
        assert np.max(np.abs(w * layout.count - 1.0)) < 0.04

    def test_target_is_deterministic(self, small_stack):
        light = LightSample(normalize([0.2, -0.5, 0.84]), 0.4)
        a = area_light_target(small_stack, light)
        b = area_light_target(small_stack, light)
        assert np.array_equal(a.data, b.data)

    def test_sharp_target_equals_aligned_frame(self, small_stack):
        j = 17
        light = LightSample(small_stack.directions[j], 0.0)
        out = area_light_target(small_stack, light)
        assert np.allclose(out.data, small_stack.images[j], atol=1e-6)


class TestRelightHdri:
    def test_black_env_black_output(self, small_stack):
        env = EnvironmentMap(LinearImage(np.zeros((32, 64, 3), np.float32)))
        assert np.all(relight_hdri(small_stack, env, mode="olat").data == 0.0)

    def test_bright_region_picks_out_frame(self, small_stack):
        j = 40
        h, w = 64, 128
        vals = np.zeros((h, w, 3), np.float32)
        # paint a small bright disc strictly inside panel j's region
        d_j = small_stack.directions[j]
        for r in range(h):
            for c in range(w):
                if texel_direction(r, c, (h, w)) @ d_j > 0.9995:
                    vals[r, c] = 10.0
        assert vals.max() > 0.0
        env = EnvironmentMap(LinearImage(vals))
        weights = hdri_to_olat_weights(env, small_stack.layout()).weights
        assert weights[j].sum() > 0.0
        out = relight_hdri(small_stack, env, mode="olat")
        expect = small_stack.images[j].astype(np.float64) * weights[j]
        assert np.allclose(out.data, expect, rtol=1e-5, atol=1e-7)

    def test_olat_vs_sg_modes_agree_on_smooth_env(self, small_stack):
        # studio-style key/fill/rim placement: lobes above the horizon and
        # compact enough that their tails stay clear of the floor cap
        lobes = [
            SphericalGaussian(normalize([0.7, 0.3, 0.65]), 12.0, np.array([1.2, 1.0, 0.8])),
            SphericalGaussian(normalize([-0.5, 0.4, 0.77]), 10.0, np.array([0.5, 0.8, 1.1])),
            SphericalGaussian(normalize([0.0, -0.8, 0.6]), 14.0, np.array([0.9, 0.6, 0.7])),
        ]
        env = synthesize_env(lobes, 64, 128)
        a = relight_hdri(small_stack, env, mode="olat")
        b = relight_hdri(small_stack, env, mode="sg", k=3)
        rel = np.linalg.norm(a.data - b.data) / np.linalg.norm(a.data)
        assert rel < 0.05

    def test_unknown_mode(self, small_stack):
        env = EnvironmentMap(LinearImage(np.zeros((32, 64, 3), np.float32)))
        with pytest.raises(ValueError):
            relight_hdri(small_stack, env, mode="wrong")


class TestAnimateRotation:
    def test_single_frame(self, small_stack):
        env = synthesize_env(
            [SphericalGaussian(normalize([1.0, 0.0, 0.4]), 8.0, np.ones(3))], 32, 64
        )
        seq = animate_rotation(small_stack, env, 1, 2.0 * math.pi)
        assert len(seq) == 1
        assert np.array_equal(seq.frames[0].data, relight_hdri(small_stack, env).data)

    def test_full_turn_closes(self, small_stack):
        env = synthesize_env(
            [SphericalGaussian(normalize([1.0, 0.2, 0.4]), 8.0, np.ones(3))], 32, 64
        )
        seq = animate_rotation(small_stack, env, 5, 2.0 * math.pi)
        first, last = seq.frames[0].data, seq.frames[-1].data
        denom = max(float(np.abs(first).max()), 1e-9)
        assert np.max(np.abs(first - last)) / denom < 1e-5

    def test_hotspot_azimuth_monotone(self, small_stack):
        env = synthesize_env(
            [SphericalGaussian(normalize([1.0, 0.0, 0.1]), 20.0, np.ones(3))], 64, 128
        )
        seq = animate_rotation(small_stack, env, 6, math.pi)
        azimuths = []
        for angle in seq.params:
            w = hdri_to_olat_weights(rotate(env, angle), small_stack.layout()).weights
            d = small_stack.directions[int(np.argmax(w.sum(axis=1)))]
            azimuths.append(math.atan2(d[1], d[0]) % (2.0 * math.pi))
        unwrapped = np.unwrap(azimuths)
        assert np.all(np.diff(unwrapped) >= -1e-9)
        assert unwrapped[-1] > unwrapped[0]


class TestCrossfade:
    def _seq(self, arrays):
        return RelitSequence(tuple(LinearImage(a) for a in arrays))

    def test_step_one_unchanged(self):
        rng = np.random.default_rng(5)
        frames = [rng.uniform(0, 1, (4, 4, 3)).astype(np.float32) for _ in range(6)]
        seq = self._seq(frames)
        out = crossfade_keyframes(seq, step=1)
        for a, b in zip(out.frames, seq.frames):
            assert np.array_equal(a.data, b.data)

    def test_constant_frames_unchanged(self):
        frames = [np.full((4, 4, 3), 0.5, np.float32) for _ in range(5)]
        out = crossfade_keyframes(self._seq(frames), step=4)
        for f in out.frames:
            assert np.allclose(f.data, 0.5)

    def test_black_to_white_midpoint(self):
        rng = np.random.default_rng(6)
        frames = [np.zeros((4, 4, 3), np.float32)]
        frames += [rng.uniform(0, 1, (4, 4, 3)).astype(np.float32) for _ in range(3)]
        frames += [np.ones((4, 4, 3), np.float32)]
        out = crossfade_keyframes(self._seq(frames), step=4)
        assert np.allclose(out.frames[2].data, 0.5)

    def test_keyframes_and_tail_verbatim(self):
        rng = np.random.default_rng(7)
        frames = [rng.uniform(0, 1, (4, 4, 3)).astype(np.float32) for _ in range(11)]
        seq = self._seq(frames)
        out = crossfade_keyframes(seq, step=4)
        for idx in (0, 4, 8, 9, 10):  # keyframes plus trailing frames
            assert np.array_equal(out.frames[idx].data, frames[idx])
        assert len(out) == len(seq)


class TestStackManifest:
    def test_pfm_roundtrip(self, tmp_path):
        stack = random_stack(n=4, size=6, seed=8)
        manifest = write_stack(tmp_path / "stack", stack)
        again = load_stack_manifest(manifest)
        assert np.array_equal(again.images, stack.images)
        assert np.allclose(again.directions, stack.directions, atol=1e-12)
        assert np.array_equal(again.solid_angles, stack.solid_angles)
        assert again.labels == stack.labels

    def test_srgb_png_color_space(self, tmp_path):
        rng = np.random.default_rng(9)
        img = LinearImage(rng.uniform(0, 1, (6, 6, 3)).astype(np.float32))
        d = tmp_path / "pngstack"
        d.mkdir()
        write_png(d / "f0.png", img, bit_depth=16)
        (d / "stack.json").write_text(
            '{"frames": [{"path": "f0.png", "direction": [0, 0, 1], "label": "f0"}],'
            ' "color_space": "srgb-png"}'
        )
        stack = load_stack_manifest(d / "stack.json")
        expect = srgb_to_linear(linear_to_srgb(img, bit_depth=16)).data
        assert np.allclose(stack.images[0], expect, atol=1e-6)
