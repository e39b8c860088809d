"""Dynamic-splat kernels: covariance construction and screen projection,
depth-ordered alpha blending against a clean-plate background, segment
planning for long-sequence training, keyframe initialization transfer, and
the keyframe deformation regularizer.

These are exact per-element kernels; there is no rasterizer or optimizer
here. Callers supply depth-sorted contributions per pixel.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidPlan, Misaligned, SingularCovariance

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-6


def quat_normalize(q) -> np.ndarray:
    arr = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(arr)
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return arr / n


def quat_multiply(q1, q2) -> np.ndarray:
    """Hamilton product, (w, x, y, z) convention."""
    w1, x1, y1, z1 = np.asarray(q1, dtype=np.float64)
    w2, x2, y2, z2 = np.asarray(q2, dtype=np.float64)
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Splat:
    """Anisotropic 3D gaussian primitive."""

    position: np.ndarray  # (3,)
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    scale: np.ndarray  # (3,) positive
    opacity: float
    color: np.ndarray  # (3,)

    def __post_init__(self):
        pos = np.ascontiguousarray(self.position, dtype=np.float64)
        rot = np.ascontiguousarray(self.rotation, dtype=np.float64)
        scl = np.ascontiguousarray(self.scale, dtype=np.float64)
        col = np.ascontiguousarray(self.color, dtype=np.float64)
        if pos.shape != (3,) or rot.shape != (4,) or scl.shape != (3,) or col.shape != (3,):
            raise ValueError("splat fields have shapes (3,), (4,), (3,), scalar, (3,)")
        if abs(np.linalg.norm(rot) - 1.0) > 1e-9:
            raise ValueError("rotation quaternion must be unit length")
        if np.any(scl <= 0.0):
            raise ValueError("scales must be positive")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError("opacity must lie in [0, 1]")
        for arr in (pos, rot, scl, col):
            arr.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "scale", scl)
        object.__setattr__(self, "color", col)


@dataclass(frozen=True)
class DeformationOffset:
    """Per-splat deformation at one frame time: position shift, rotation
    increment (quaternion), and scale shift."""

    d_position: np.ndarray  # (3,)
    d_rotation: np.ndarray  # (4,) quaternion increment
    d_scale: np.ndarray  # (3,)

    def __post_init__(self):
        dp = np.ascontiguousarray(self.d_position, dtype=np.float64)
        dr = np.ascontiguousarray(self.d_rotation, dtype=np.float64)
        ds = np.ascontiguousarray(self.d_scale, dtype=np.float64)
        if dp.shape != (3,) or dr.shape != (4,) or ds.shape != (3,):
            raise ValueError("offset fields have shapes (3,), (4,), (3,)")
        if not (np.all(np.isfinite(dp)) and np.all(np.isfinite(dr)) and np.all(np.isfinite(ds))):
            raise ValueError("offset components must be finite")
        for arr in (dp, dr, ds):
            arr.setflags(write=False)
        object.__setattr__(self, "d_position", dp)
        object.__setattr__(self, "d_rotation", dr)
        object.__setattr__(self, "d_scale", ds)

    @classmethod
    def zero(cls) -> "DeformationOffset":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.d_position, self.d_rotation, self.d_scale])


def build_covariance(rotation, scale) -> np.ndarray:
    """3x3 covariance R S S^T R^T from a quaternion and per-axis scales."""
    r = quat_to_matrix(rotation)
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    return (r * s2[None, :]) @ r.T


def project_covariance(cov3: np.ndarray, view_rot: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    """Screen-space 2x2 covariance J W Sigma W^T J^T."""
    sigma = np.asarray(cov3, dtype=np.float64)
    w = np.asarray(view_rot, dtype=np.float64)
    j = np.asarray(jacobian, dtype=np.float64)
    if sigma.shape != (3, 3) or w.shape != (3, 3) or j.shape != (2, 3):
        raise ValueError("expected Sigma (3,3), W (3,3), J (2,3)")
    t = j @ w
    return t @ sigma @ t.T


@dataclass(frozen=True)
class SplatContribution:
    """One depth-sorted splat's footprint at a pixel."""

    opacity: float
    center: np.ndarray  # (2,) projected mean
    cov2: np.ndarray  # (2, 2) screen-space covariance
    color: np.ndarray  # (3,)


_COND_LIMIT = 1e8


def pixel_blend(contributions, pixel, background) -> tuple:
    """Front-to-back alpha blending over a clean-plate background.

    alpha_i = opacity * exp(-0.5 * (p - q_i)^T inv(Sigma') (p - q_i)),
    transmittance multiplies down the sorted list, and whatever is left
    falls through to the background pixel. Returns (rgb, accumulated alpha).
    """
    p = np.asarray(pixel, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    color = np.zeros(3)
    transmittance = 1.0
    coverage = 0.0
    for contrib in contributions:
        cov = np.asarray(contrib.cov2, dtype=np.float64)
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 0.0 or eig[1] / eig[0] > _COND_LIMIT:
            raise SingularCovariance(
                f"screen covariance eigenvalues {eig} exceed conditioning bound {_COND_LIMIT:g}"
            )
        d = p - np.asarray(contrib.center, dtype=np.float64)
        inv = np.linalg.inv(cov)
        alpha = float(contrib.opacity) * math.exp(-0.5 * float(d @ inv @ d))
        color += transmittance * alpha * np.asarray(contrib.color, dtype=np.float64)
        coverage += transmittance * alpha
        transmittance *= 1.0 - alpha
    return color + (1.0 - coverage) * bg, coverage


@dataclass(frozen=True)
class SegmentPlan:
    """Keyframe indices, per-segment frame ranges, and training-phase
    boundaries for segment-wise dynamic-splat training."""

    keyframes: tuple
    segments: tuple
    warmup_iters: int = 3000
    densify_iters: int = 10000
    total_iters: int = 40000

    def __post_init__(self):
        kf = tuple(int(i) for i in self.keyframes)
        if sorted(kf) != list(kf) or len(set(kf)) != len(kf):
            raise InvalidPlan("keyframes must be strictly increasing")
        gaps = [b - a for a, b in zip(kf, kf[1:])]
        if gaps and max(gaps) - min(gaps) > 1:
            raise InvalidPlan("keyframes must be evenly spaced (gap spread <= 1)")
        seg = tuple((int(a), int(b)) for a, b in self.segments)
        if seg != tuple(zip(kf, kf[1:])):
            raise InvalidPlan("segments must span consecutive keyframe pairs")
        if not (0 <= self.warmup_iters and 0 <= self.densify_iters):
            raise InvalidPlan("phase lengths must be non-negative")
        if self.warmup_iters + self.densify_iters > self.total_iters:
            raise InvalidPlan("phase boundaries exceed total iterations")
        object.__setattr__(self, "keyframes", kf)
        object.__setattr__(self, "segments", seg)

    def phase_at(self, iteration: int) -> str:
        if iteration < 0 or iteration >= self.total_iters:
            raise InvalidPlan(f"iteration {iteration} outside [0, {self.total_iters})")
        if iteration < self.warmup_iters:
            return "warmup"
        if iteration < self.warmup_iters + self.densify_iters:
            return "densify"
        return "joint"

    def to_json(self) -> str:
        return json.dumps(
            {
                "keyframes": list(self.keyframes),
                "segments": [list(s) for s in self.segments],
                "phases": {
                    "warmup": [0, self.warmup_iters],
                    "densify": [self.warmup_iters, self.warmup_iters + self.densify_iters],
                    "joint": [self.warmup_iters + self.densify_iters, self.total_iters],
                },
            },
            indent=2,
        )


def plan_segments(
    n_frames: int,
    k: int,
    warmup_iters: int = 3000,
    densify_iters: int = 10000,
    total_iters: int = 40000,
) -> SegmentPlan:
    """Evenly distribute k keyframes over [0, n_frames) and pair them into
    k-1 overlapping segments that share boundary frames."""
    if k < 2:
        raise InvalidPlan("need at least 2 keyframes")
    if k > n_frames:
        raise InvalidPlan(f"k={k} keyframes exceed {n_frames} frames")
    kf = tuple(int(round(i * (n_frames - 1) / (k - 1))) for i in range(k))
    segments = tuple(zip(kf, kf[1:]))
    return SegmentPlan(kf, segments, warmup_iters, densify_iters, total_iters)


def init_segment(splats, offsets) -> list:
    """Transform pretrained splats by their first-frame deformation offsets.

    Positions translate, rotations compose multiplicatively and renormalize,
    scales shift additively and are floored at 1e-6 (a warning is logged
    when the floor engages). Opacity and color pass through.
    """
    splats = list(splats)
    offsets = list(offsets)
    if len(splats) != len(offsets):
        raise Misaligned(f"{len(splats)} splats vs {len(offsets)} offsets")
    out = []
    clamped = 0
    for splat, off in zip(splats, offsets):
        new_scale = splat.scale + off.d_scale
        if np.any(new_scale < SCALE_FLOOR):
            clamped += 1
            new_scale = np.maximum(new_scale, SCALE_FLOOR)
        out.append(
            Splat(
                position=splat.position + off.d_position,
                rotation=quat_normalize(quat_multiply(splat.rotation, off.d_rotation)),
                scale=new_scale,
                opacity=splat.opacity,
                color=splat.color,
            )
        )
    if clamped:
        logger.warning("init_segment floored %d degenerate scale(s) at %g", clamped, SCALE_FLOOR)
    return out


def _offsets_vector(offsets) -> np.ndarray:
    return np.concatenate([o.flatten() for o in offsets])


def l_reg(learned, initial) -> float:
    """Keyframe deformation regularizer.

    Both arguments are (offsets_at_k0, offsets_at_k1) pairs; the result is
    the L2 norm of the concatenated deviation at each keyframe, summed over
    the two keyframes.
    """
    if len(learned) != 2 or len(initial) != 2:
        raise Misaligned("expected offset lists for exactly two keyframes")
    total = 0.0
    for lrn, ini in zip(learned, initial):
        if len(lrn) != len(ini):
            raise Misaligned(f"{len(lrn)} learned offsets vs {len(ini)} initial")
        total += float(np.linalg.norm(_offsets_vector(lrn) - _offsets_vector(ini)))
    return total


# ---------------------------------------------------------------------------
# Splat list serialization: flat little-endian float32 records of
# position(3) rotation(4) scale(3) opacity(1) color(3), plus a JSON sidecar
# with the count and field order.
# ---------------------------------------------------------------------------

_FIELD_ORDER = ["position", "rotation", "scale", "opacity", "color"]
_FLOATS_PER_SPLAT = 14


def save_splats(path, splats) -> None:
    path = Path(path)
    records = np.empty((len(splats), _FLOATS_PER_SPLAT), dtype="<f4")
    for i, s in enumerate(splats):
        records[i, 0:3] = s.position
        records[i, 3:7] = s.rotation
        records[i, 7:10] = s.scale
        records[i, 10] = s.opacity
        records[i, 11:14] = s.color
    path.write_bytes(records.tobytes())
    sidecar = {
        "count": len(splats),
        "fields": _FIELD_ORDER,
        "floats_per_splat": _FLOATS_PER_SPLAT,
        "dtype": "<f4",
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_splats(path) -> list:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(
        sidecar["count"], sidecar["floats_per_splat"]
    )
    out = []
    for rec in raw.astype(np.float64):
        out.append(
            Splat(
                position=rec[0:3],
                rotation=rec[3:7] / np.linalg.norm(rec[3:7]),
                scale=rec[7:10],
                opacity=float(np.clip(rec[10], 0.0, 1.0)),
                color=rec[11:14],
            )
        )
    return out
