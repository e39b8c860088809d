"""Linear-radiance image containers, sRGB conversion, HDR/LDR file I/O,
exposure, and color-chart calibration.

Images live in linear radiance as (height, width, 3) float32 arrays. All
compositing happens in linear space; the sRGB transfer is applied only at
output boundaries (PNG files, preview transport). PFM files carry linear
float payloads verbatim and round-trip bit-exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    ChartMismatch,
    DegenerateChart,
    MalformedHeader,
    TruncatedPayload,
    UnsupportedChannelCount,
)

# IEC 61966-2-1 piecewise transfer constants.
_LINEAR_CUTOFF = 0.0031308
_ENCODED_CUTOFF = 0.04045


@dataclass(frozen=True)
class LinearImage:
    """HDR raster of linear-radiance RGB triples.

    The pixel block is stored as a read-only (height, width, 3) float32
    array; instances are safe to share across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) raster, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite components")
        if arr.min() < 0.0:
            raise ValueError("linear radiance must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def constant(cls, width: int, height: int, rgb=(0.0, 0.0, 0.0)) -> "LinearImage":
        block = np.broadcast_to(np.asarray(rgb, np.float32), (height, width, 3)).copy()
        return cls(block)


@dataclass(frozen=True)
class ColorChart:
    """Per-patch mean RGB values of a captured color chart, in linear space."""

    patches: np.ndarray  # (P, 3) strictly positive

    def __post_init__(self):
        arr = np.ascontiguousarray(self.patches, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValueError(f"expected (P, 3) patch means, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() <= 0.0:
            raise ValueError("patch means must be finite and strictly positive")
        arr.setflags(write=False)
        object.__setattr__(self, "patches", arr)

    @property
    def count(self) -> int:
        return self.patches.shape[0]


@dataclass(frozen=True)
class ScaleFactor3:
    """Constant per-channel multiplier correcting relit output to a reference."""

    r: float
    g: float
    b: float

    def __post_init__(self):
        for name, v in (("r", self.r), ("g", self.g), ("b", self.b)):
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"scale factor {name}={v} must be positive and finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.float64)


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Forward sRGB transfer on values clamped to [0, 1], without quantization."""
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    # gamma branch written so that x = 1 maps to exactly 1
    y = np.where(x <= _LINEAR_CUTOFF, 12.92 * x, 1.0 + 1.055 * (np.power(x, 1.0 / 2.4) - 1.0))
    return np.clip(y, 0.0, 1.0)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    """Inverse sRGB transfer back to linear radiance."""
    y = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(y <= _ENCODED_CUTOFF, y / 12.92, np.power((y + 0.055) / 1.055, 2.4))


def linear_to_srgb(img: LinearImage, bit_depth: int = 8) -> np.ndarray:
    """Encode a linear image to a quantized sRGB LDR raster.

    Returns a (H, W, 3) uint8 array for bit_depth=8 or uint16 for 16.
    """
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    peak = 255 if bit_depth == 8 else 65535
    encoded = srgb_encode(img.data)
    quantized = np.round(encoded * peak).astype(np.uint8 if bit_depth == 8 else np.uint16)
    return quantized


def srgb_to_linear(ldr: np.ndarray) -> LinearImage:
    """Decode a quantized sRGB LDR raster (uint8/uint16) to linear radiance."""
    arr = np.asarray(ldr)
    if arr.dtype == np.uint8:
        peak = 255.0
    elif arr.dtype == np.uint16:
        peak = 65535.0
    else:
        raise ValueError(f"expected uint8/uint16 raster, got {arr.dtype}")
    return LinearImage(srgb_decode(arr.astype(np.float64) / peak).astype(np.float32))


def apply_scale(img: LinearImage, s: ScaleFactor3) -> LinearImage:
    """Multiply each channel by its calibration factor."""
    return LinearImage((img.data.astype(np.float64) * s.as_array()).astype(np.float32))


def apply_exposure(img: LinearImage, stops: float) -> LinearImage:
    """Scale radiance by 2**stops."""
    return LinearImage(img.data * np.float32(2.0**stops))


def calibrate_color(reference: ColorChart, observed: ColorChart) -> ScaleFactor3:
    """Per-channel least-squares scale mapping observed patches onto reference.

    Solves argmin_s sum_p (ref_c - s * obs_c)^2 independently per channel,
    which has the closed form s_c = sum(ref*obs) / sum(obs^2).
    """
    if reference.count != observed.count:
        raise ChartMismatch(
            f"patch counts differ: reference {reference.count} vs observed {observed.count}"
        )
    denom = np.sum(observed.patches**2, axis=0)
    if np.any(denom == 0.0):
        raise DegenerateChart("a channel of the observed chart carries no energy")
    num = np.sum(reference.patches * observed.patches, axis=0)
    s = num / denom
    return ScaleFactor3(float(s[0]), float(s[1]), float(s[2]))


# ---------------------------------------------------------------------------
# PFM (Portable FloatMap), color "PF" variant. Scanlines are stored bottom-up;
# a negative scale marks little-endian payloads.
# ---------------------------------------------------------------------------


def encode_pfm_bytes(data: np.ndarray, little_endian: bool = True) -> bytes:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) raster, got shape {arr.shape}")
    h, w = arr.shape[:2]
    scale = -1.0 if little_endian else 1.0
    payload = np.flipud(arr)
    if not little_endian:
        payload = payload.astype(">f4")
    header = f"PF\n{w} {h}\n{scale}\n".encode("ascii")
    return header + payload.tobytes()


def write_pfm(path, data: np.ndarray, little_endian: bool = True) -> None:
    Path(path).write_bytes(encode_pfm_bytes(data, little_endian))


def _read_token(f) -> bytes:
    tok = b""
    while True:
        c = f.read(1)
        if c == b"":
            raise MalformedHeader("unexpected end of file in header")
        if c in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += c


def parse_pfm_bytes(data: bytes) -> np.ndarray:
    """Decode a color PFM byte string into a (H, W, 3) float32 array."""
    return _parse_pfm_stream(io.BytesIO(data))


def read_pfm(path) -> np.ndarray:
    """Read a color PFM file into a (H, W, 3) float32 array, top row first."""
    with open(path, "rb") as f:
        return _parse_pfm_stream(f)


def _parse_pfm_stream(f) -> np.ndarray:
    magic = _read_token(f)
    if magic == b"Pf":
        raise UnsupportedChannelCount("grayscale PFM is not supported")
    if magic != b"PF":
        raise MalformedHeader(f"bad magic {magic!r}, expected b'PF'")
    try:
        w = int(_read_token(f))
        h = int(_read_token(f))
        scale = float(_read_token(f))
    except ValueError as exc:
        raise MalformedHeader(f"unparseable dimensions or scale: {exc}") from exc
    if w <= 0 or h <= 0:
        raise MalformedHeader(f"non-positive dimensions {w}x{h}")
    if scale == 0.0:
        raise MalformedHeader("scale must be nonzero")
    count = w * h * 3
    raw = f.read(count * 4)
    if len(raw) < count * 4:
        raise TruncatedPayload(f"expected {count * 4} payload bytes, got {len(raw)}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(raw, dtype=dtype, count=count).reshape(h, w, 3)
    return np.flipud(arr).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG, 8/16-bit sRGB via OpenCV.
# ---------------------------------------------------------------------------


def encode_png_bytes(img: LinearImage, bit_depth: int = 8) -> bytes:
    ldr = linear_to_srgb(img, bit_depth=bit_depth)
    ok, buf = cv2.imencode(".png", ldr[:, :, ::-1])  # RGB -> BGR
    if not ok:
        raise RuntimeError("PNG encoding failed")
    return buf.tobytes()


def write_png(path, img: LinearImage, bit_depth: int = 8) -> None:
    Path(path).write_bytes(encode_png_bytes(img, bit_depth=bit_depth))


def read_png(path) -> LinearImage:
    """Load an sRGB PNG and linearize it."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise MalformedHeader(f"cannot decode PNG at {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    return srgb_to_linear(raw[:, :, ::-1])  # BGR -> RGB
