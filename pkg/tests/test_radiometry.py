import numpy as np
import pytest

from relightkit.errors import (
    ChartMismatch,
    MalformedHeader,
    TruncatedPayload,
    UnsupportedChannelCount,
)
from relightkit.radiometry import (
    ColorChart,
    LinearImage,
    ScaleFactor3,
    apply_exposure,
    apply_scale,
    calibrate_color,
    linear_to_srgb,
    read_pfm,
    read_png,
    srgb_decode,
    srgb_encode,
    srgb_to_linear,
    write_pfm,
    write_png,
)

# Frozen oracle: 1.055 * 0.5**(1/2.4) - 0.055 evaluated at 50 digits.
SRGB_OF_HALF = 0.7353569830524494


class TestTransfer:
    def test_fixed_points(self):
        assert srgb_encode(np.array(0.0)) == 0.0
        assert srgb_encode(np.array(1.0)) == 1.0

    def test_mid_gray(self):
        assert abs(float(srgb_encode(np.array(0.5))) - SRGB_OF_HALF) < 1e-12

    def test_strictly_monotone(self):
        x = np.linspace(0.0, 1.0, 1024)
        y = srgb_encode(x)
        assert np.all(np.diff(y) > 0)

    def test_inverse_identity_on_grid(self):
        x = np.linspace(0.0, 1.0, 1024)
        assert np.max(np.abs(srgb_decode(srgb_encode(x)) - x)) < 1e-6

    @pytest.mark.parametrize("bit_depth,peak", [(8, 255), (16, 65535)])
    def test_quantized_roundtrip(self, bit_depth, peak):
        # every code must survive decode -> encode exactly
        codes = np.arange(peak + 1) if bit_depth == 8 else np.arange(0, peak + 1, 257)
        dtype = np.uint8 if bit_depth == 8 else np.uint16
        ldr = np.repeat(codes, 3).reshape(1, -1, 3).astype(dtype)
        img = srgb_to_linear(ldr)
        again = linear_to_srgb(img, bit_depth=bit_depth)
        assert np.array_equal(again, ldr)

    def test_out_of_range_clamps(self):
        img = LinearImage(np.array([[[2.5, 0.0, 0.7]]], np.float32))
        ldr = linear_to_srgb(img)
        assert ldr[0, 0, 0] == 255 and ldr[0, 0, 1] == 0


class TestLinearImage:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LinearImage(np.full((2, 2, 3), -1.0, np.float32))

    def test_rejects_nonfinite(self):
        bad = np.ones((2, 2, 3), np.float32)
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            LinearImage(bad)

    def test_immutable(self):
        img = LinearImage(np.ones((2, 2, 3), np.float32))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 2.0


class TestScaling:
    def test_identity_scale(self):
        img = LinearImage(np.random.default_rng(0).uniform(0, 2, (4, 5, 3)).astype(np.float32))
        out = apply_scale(img, ScaleFactor3(1.0, 1.0, 1.0))
        assert np.array_equal(out.data, img.data)

    def test_channel_multiply(self):
        img = LinearImage(np.full((2, 2, 3), 0.2, np.float32))
        out = apply_scale(img, ScaleFactor3(2.0, 1.0, 1.0))
        assert np.allclose(out.data[..., 0], 0.4)
        assert np.allclose(out.data[..., 1:], 0.2)

    def test_scale_roundtrip(self):
        img = LinearImage(np.random.default_rng(1).uniform(0.01, 3, (8, 8, 3)).astype(np.float32))
        s = ScaleFactor3(1.7, 0.45, 2.3)
        inv = ScaleFactor3(1 / 1.7, 1 / 0.45, 1 / 2.3)
        back = apply_scale(apply_scale(img, s), inv)
        assert np.max(np.abs(back.data - img.data) / img.data) < 1e-6

    def test_exposure(self):
        img = LinearImage(np.full((2, 2, 3), 0.25, np.float32))
        assert np.allclose(apply_exposure(img, 2.0).data, 1.0)


class TestCalibration:
    def test_identical_charts(self):
        chart = ColorChart(np.random.default_rng(2).uniform(0.05, 1.0, (24, 3)))
        s = calibrate_color(chart, chart)
        assert np.allclose(s.as_array(), 1.0)

    def test_exact_inverse_of_half(self):
        ref = ColorChart(np.random.default_rng(3).uniform(0.05, 1.0, (24, 3)))
        obs = ColorChart(ref.patches * 0.5)
        s = calibrate_color(ref, obs)
        assert np.allclose(s.as_array(), 2.0)

    def test_noisy_recovery_within_2pct(self):
        rng = np.random.default_rng(4)
        ref = ColorChart(rng.uniform(0.1, 1.0, (24, 3)))
        true = np.array([1.3, 0.9, 1.1])
        obs = ColorChart(ref.patches / true * (1.0 + rng.normal(0, 0.01, (24, 3))))
        s = calibrate_color(ref, obs)
        assert np.max(np.abs(s.as_array() / true - 1.0)) < 0.02

    def test_closed_form_matches_independent_solve(self):
        rng = np.random.default_rng(5)
        ref = ColorChart(rng.uniform(0.1, 1.0, (12, 3)))
        obs = ColorChart(rng.uniform(0.1, 1.0, (12, 3)))
        s = calibrate_color(ref, obs).as_array()
        for c in range(3):
            # least-squares via numpy as the independent route
            expect, *_ = np.linalg.lstsq(obs.patches[:, c : c + 1], ref.patches[:, c], rcond=None)
            assert abs(s[c] - expect[0]) < 1e-12

    def test_scale_equivariance(self):
        rng = np.random.default_rng(6)
        ref = ColorChart(rng.uniform(0.1, 1.0, (24, 3)))
        obs = ColorChart(rng.uniform(0.1, 1.0, (24, 3)))
        base = calibrate_color(ref, obs).as_array()
        # power-of-two scaling is exact in floating point
        doubled = calibrate_color(ref, ColorChart(obs.patches * 2.0)).as_array()
        assert np.array_equal(doubled, base / 2.0)
        k = 1.3
        scaled = calibrate_color(ref, ColorChart(obs.patches * k)).as_array()
        assert np.max(np.abs(scaled - base / k)) < 1e-9

    def test_patch_count_mismatch(self):
        a = ColorChart(np.ones((4, 3)))
        b = ColorChart(np.ones((5, 3)))
        with pytest.raises(ChartMismatch):
            calibrate_color(a, b)


class TestPfm:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        data = rng.standard_normal((5, 9, 3)).astype(np.float32)  # negatives included
        path = tmp_path / "t.pfm"
        write_pfm(path, data)
        assert np.array_equal(read_pfm(path), data)

    def test_two_by_two_known_floats(self, tmp_path):
        data = np.arange(12, dtype=np.float32).reshape(2, 2, 3) / 7.0
        path = tmp_path / "k.pfm"
        write_pfm(path, data)
        assert np.array_equal(read_pfm(path), data)

    def test_endianness_twins(self, tmp_path):
        data = np.random.default_rng(8).standard_normal((4, 6, 3)).astype(np.float32)
        le, be = tmp_path / "le.pfm", tmp_path / "be.pfm"
        write_pfm(le, data, little_endian=True)
        write_pfm(be, data, little_endian=False)
        assert np.array_equal(read_pfm(le), read_pfm(be))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.pfm"
        p.write_bytes(b"P6\n2 2\n-1.0\n" + b"\x00" * 48)
        with pytest.raises(MalformedHeader):
            read_pfm(p)

    def test_grayscale_rejected(self, tmp_path):
        p = tmp_path / "gray.pfm"
        p.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 16)
        with pytest.raises(UnsupportedChannelCount):
            read_pfm(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "trunc.pfm"
        p.write_bytes(b"PF\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(TruncatedPayload):
            read_pfm(p)


class TestPng:
    def test_black_pixel(self, tmp_path):
        p = tmp_path / "black.png"
        write_png(p, LinearImage(np.zeros((1, 1, 3), np.float32)))
        assert np.array_equal(read_png(p).data, np.zeros((1, 1, 3), np.float32))

    def test_roundtrip_within_quantization(self, tmp_path):
        img = LinearImage(np.random.default_rng(9).uniform(0, 1, (16, 16, 3)).astype(np.float32))
        p = tmp_path / "g.png"
        write_png(p, img, bit_depth=16)
        back = read_png(p)
        # one 16-bit step in encoded space stays tiny after linearization
        assert np.max(np.abs(srgb_encode(back.data) - srgb_encode(img.data))) < 1.0 / 65534
