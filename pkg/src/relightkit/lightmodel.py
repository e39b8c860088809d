"""Light directions, capture-stage panel geometry, spherical gaussians,
area-light size mapping, and spherical-harmonic direction encodings.

Conventions frozen here:
  * z is up; directions are unit vectors from the stage center outward.
  * Spherical gaussians use the normalized-peak form exp(lambda*(v.mu - 1)).
  * The SH basis is real, degree 3, Condon-Shortley-phase-free, ordered
    lexicographically by (l, m) with m running -l..l.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometry, NonOrthonormal, OutOfRange, TooShort

THETA_MIN = math.pi / 180.0
THETA_MAX = 89.0 * math.pi / 180.0

SH_DEGREE = 3
SH_COEFF_COUNT = (SH_DEGREE + 1) ** 2  # 16


def normalize(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(arr)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return arr / n


def require_unit(v, tol: float = 1e-9) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    n = np.linalg.norm(arr)
    if abs(n - 1.0) > tol:
        raise ValueError(f"direction norm {n} deviates from 1 by more than {tol}")
    return arr


@dataclass(frozen=True)
class LightSample:
    """Universal light descriptor: unit direction plus area-size factor a.

    a = 0 is a single hard source, a = 1 the flat-lit condition.
    """

    direction: np.ndarray
    size: float = 0.0

    def __post_init__(self):
        d = require_unit(self.direction)
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)
        if not (0.0 <= self.size <= 1.0):
            raise OutOfRange(f"size a={self.size} outside [0, 1]")


def scaled_direction(sample: LightSample) -> np.ndarray:
    """Direction scaled by (1 - a); a = 1 collapses to the zero flat-lit code."""
    return (1.0 - sample.size) * sample.direction


def sg_sharpness(a: float) -> float:
    """Map the area-size factor to spherical-gaussian sharpness.

    theta(a) sweeps linearly from 1 to 89 degrees and
    lambda = cos(theta) / sin(theta)^2, strictly decreasing in a.
    """
    if not (0.0 <= a <= 1.0):
        raise OutOfRange(f"size a={a} outside [0, 1]")
    theta = a * (THETA_MAX - THETA_MIN) + THETA_MIN
    s = math.sin(theta)
    return math.cos(theta) / (s * s)


def sg_sharpness_inverse(lam: float) -> float:
    """Recover the size factor a from a sharpness value, clamped to [0, 1].

    Inverts lambda = c / (1 - c^2) for c = cos(theta) via the closed-form
    positive root c = (sqrt(1 + 4*lambda^2) - 1) / (2*lambda).
    """
    if lam <= 0.0 or not math.isfinite(lam):
        return 1.0
    c = (math.sqrt(1.0 + 4.0 * lam * lam) - 1.0) / (2.0 * lam)
    theta = math.acos(min(1.0, max(-1.0, c)))
    a = (theta - THETA_MIN) / (THETA_MAX - THETA_MIN)
    return min(1.0, max(0.0, a))


@dataclass(frozen=True)
class SphericalGaussian:
    """Isotropic spherical gaussian lobe: amplitude * exp(lambda*(v.axis - 1))."""

    axis: np.ndarray
    sharpness: float
    amplitude: np.ndarray  # RGB, linear radiance

    def __post_init__(self):
        ax = require_unit(self.axis)
        ax.setflags(write=False)
        object.__setattr__(self, "axis", ax)
        if not (self.sharpness > 0.0 and math.isfinite(self.sharpness)):
            raise ValueError(f"sharpness {self.sharpness} must be positive and finite")
        amp = np.ascontiguousarray(self.amplitude, dtype=np.float64)
        if amp.shape != (3,) or not np.all(np.isfinite(amp)) or amp.min() < 0.0:
            raise ValueError("amplitude must be a non-negative finite RGB triple")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)

    def evaluate(self, dirs: np.ndarray) -> np.ndarray:
        """Radiance at unit directions; dirs is (..., 3), result (..., 3)."""
        d = np.asarray(dirs, dtype=np.float64)
        cos = d @ self.axis
        lobe = np.exp(self.sharpness * (cos - 1.0))
        return lobe[..., None] * self.amplitude

    def energy(self) -> np.ndarray:
        """Integral of the lobe over the sphere, per channel:
        amplitude * 2*pi*(1 - exp(-2*lambda)) / lambda."""
        return self.amplitude * (2.0 * math.pi * (1.0 - math.exp(-2.0 * self.sharpness)) / self.sharpness)


def sg_eval(sg: SphericalGaussian, v) -> np.ndarray:
    return sg.evaluate(require_unit(v))


# ---------------------------------------------------------------------------
# Real spherical harmonics, degree 3, (l, m) lexicographic order.
# ---------------------------------------------------------------------------

_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
_C1 = 0.4886025119029199
_C2a = 1.0925484305920792
_C2b = 0.31539156525252005
_C2c = 0.5462742152960396
_C3a = 0.5900435899266435
_C3b = 2.890611442640554
_C3c = 0.4570457994644658
_C3d = 0.3731763325901154
_C3e = 1.445305721320277


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Evaluate all 16 degree-3 basis functions at unit directions.

    dirs: (..., 3) unit vectors. Returns (..., 16).
    """
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty(d.shape[:-1] + (SH_COEFF_COUNT,), dtype=np.float64)
    out[..., 0] = _C0
    out[..., 1] = _C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = _C1 * x
    out[..., 4] = _C2a * x * y
    out[..., 5] = _C2a * y * z
    out[..., 6] = _C2b * (3.0 * zz - 1.0)
    out[..., 7] = _C2a * x * z
    out[..., 8] = _C2c * (xx - yy)
    out[..., 9] = _C3a * y * (3.0 * xx - yy)
    out[..., 10] = _C3b * x * y * z
    out[..., 11] = _C3c * y * (5.0 * zz - 1.0)
    out[..., 12] = _C3d * z * (5.0 * zz - 3.0)
    out[..., 13] = _C3c * x * (5.0 * zz - 1.0)
    out[..., 14] = _C3e * z * (xx - yy)
    out[..., 15] = _C3a * x * (xx - 3.0 * yy)
    return out


def sh_encode(d) -> np.ndarray:
    """16 SH coefficients of a unit direction."""
    return sh_basis(require_unit(d))


def pad_embedding(coeffs: np.ndarray, total_len: int) -> np.ndarray:
    """Left-pad an SH encoding with zeros up to an embedding length."""
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if total_len < c.size:
        raise TooShort(f"total_len {total_len} < encoding length {c.size}")
    out = np.zeros(total_len, dtype=np.float64)
    out[total_len - c.size :] = c
    return out


# ---------------------------------------------------------------------------
# Panel layouts and the cylindrical capture stage.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelLayout:
    """Panel center directions with per-panel solid angles and labels."""

    directions: np.ndarray  # (N, 3) unit
    solid_angles: np.ndarray  # (N,) steradians
    labels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        dirs = np.ascontiguousarray(self.directions, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[1] != 3 or dirs.shape[0] < 1:
            raise InvalidGeometry(f"expected (N, 3) directions, got {dirs.shape}")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvalidGeometry("panel directions must be unit length")
        omega = np.ascontiguousarray(self.solid_angles, dtype=np.float64)
        if omega.shape != (dirs.shape[0],):
            raise InvalidGeometry("solid angle count must match panel count")
        if np.any(omega <= 0.0):
            raise InvalidGeometry("solid angles must be positive")
        if omega.sum() > 4.0 * math.pi + 1e-9:
            raise InvalidGeometry("total solid angle exceeds the full sphere")
        labels = tuple(self.labels) if self.labels else tuple(
            f"panel_{i:03d}" for i in range(dirs.shape[0])
        )
        if len(labels) != dirs.shape[0]:
            raise InvalidGeometry("label count must match panel count")
        dirs.setflags(write=False)
        omega.setflags(write=False)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "solid_angles", omega)
        object.__setattr__(self, "labels", labels)

    @property
    def count(self) -> int:
        return self.directions.shape[0]

    def to_json(self) -> str:
        entries = [
            {
                "label": self.labels[i],
                "direction": [float(c) for c in self.directions[i]],
                "solid_angle": float(self.solid_angles[i]),
            }
            for i in range(self.count)
        ]
        return json.dumps(entries, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PanelLayout":
        entries = json.loads(text)
        dirs = np.array([e["direction"] for e in entries], dtype=np.float64)
        # Manifests are authoritative but may carry rounded components.
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        omega = np.array([e["solid_angle"] for e in entries], dtype=np.float64)
        labels = tuple(e.get("label", f"panel_{i:03d}") for i, e in enumerate(entries))
        return cls(dirs, omega, labels)


def cone_solid_angle(half_angle_rad: float) -> float:
    return 2.0 * math.pi * (1.0 - math.cos(half_angle_rad))


def _sunflower_points(n: int, radius: float) -> list:
    """Evenly spread n points over a disc (golden-angle spiral)."""
    golden = math.pi * (3.0 - math.sqrt(5.0))
    pts = []
    for i in range(n):
        r = radius * math.sqrt((i + 0.5) / n)
        a = i * golden
        pts.append((r * math.cos(a), r * math.sin(a)))
    return pts


def build_stage(
    columns: int = 16,
    rows: int = 5,
    ceiling: tuple = (6, 5),
    floor: int = 10,
    subdivision: int = 1,
    diameter_cm: float = 276.0,
    height_cm: float = 250.0,
    panel_cm: float = 50.0,
    cone_half_angle_deg: float = 10.0,
    solid_angle: float | None = None,
) -> PanelLayout:
    """Panel layout of the cylindrical capture stage.

    Defaults: a 16x5 wall of 50 cm panels around a 276 cm diameter, 250 cm
    tall volume, a 6x5 ceiling grid scaled to fit inside the rim (a strict
    50 cm pitch would push the corner panels outside the stage), and 10
    floor panels spread evenly over the floor disc: 120 directions total.
    `subdivision` splits every panel into n x n subpanels and shrinks the
    cone angle to match, refining the sphere sampling without moving the
    footprint.
    """
    if columns < 1 or rows < 1 or subdivision < 1 or floor < 1:
        raise InvalidGeometry("panel counts and subdivision must be positive")
    if min(ceiling) < 1:
        raise InvalidGeometry("ceiling grid must be positive")
    if diameter_cm <= 0 or height_cm <= 0 or panel_cm <= 0:
        raise InvalidGeometry("stage dimensions must be positive")

    radius = diameter_cm / 2.0
    half_h = height_cm / 2.0
    sub = subdivision

    dirs: list[np.ndarray] = []
    labels: list[str] = []

    # Wall band: one column per azimuth step, row centers stacked on z.
    n_cols, n_rows = columns * sub, rows * sub
    col_az = 2.0 * math.pi * np.arange(n_cols) / n_cols
    row_z = (np.arange(n_rows) - (n_rows - 1) / 2.0) * (height_cm / n_rows)
    for ci, az in enumerate(col_az):
        for ri, z in enumerate(row_z):
            dirs.append(normalize([radius * math.cos(az), radius * math.sin(az), z]))
            labels.append(f"wall_c{ci:02d}_r{ri}")

    # Ceiling grid at +half_h, pitch shrunk so the outer panel centers stay
    # inside the rim.
    cc, cr = ceiling[0] * sub, ceiling[1] * sub
    half_span = math.hypot((cc - 1) / 2.0, (cr - 1) / 2.0)
    pitch = min(panel_cm / sub, radius / max(half_span, 1e-9) * 0.999)
    xs = (np.arange(cc) - (cc - 1) / 2.0) * pitch
    ys = (np.arange(cr) - (cr - 1) / 2.0) * pitch
    for i, xo in enumerate(xs):
        for j, yo in enumerate(ys):
            dirs.append(normalize([xo, yo, half_h]))
            labels.append(f"ceil_{i:02d}_{j:02d}")

    # Floor panels spread evenly over the floor disc at -half_h.
    for i, (xo, yo) in enumerate(_sunflower_points(floor * sub * sub, radius * 0.8)):
        dirs.append(normalize([xo, yo, -half_h]))
        labels.append(f"floor_{i:02d}")

    n = len(dirs)
    if solid_angle is None:
        omega_each = cone_solid_angle(math.radians(cone_half_angle_deg / sub))
    else:
        omega_each = float(solid_angle)
    return PanelLayout(np.array(dirs), np.full(n, omega_each), tuple(labels))


def to_camera_space(d, rotation: np.ndarray) -> np.ndarray:
    """Rotate a world-space direction into camera space."""
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape != (3, 3):
        raise NonOrthonormal(f"expected a 3x3 rotation, got shape {rot.shape}")
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6:
        raise NonOrthonormal("rotation deviates from orthonormality beyond 1e-6")
    return rot @ require_unit(d)
