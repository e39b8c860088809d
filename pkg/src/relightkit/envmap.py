"""Equirectangular environment maps: lat-long parameterization, azimuthal
rotation, panel-weight extraction, and spherical-gaussian decomposition.

Lat-long convention: z up, inclination theta measured from +z maps to rows
top-down, azimuth phi from +x maps to columns left-right. Texel centers sit
at half-integer offsets, so a (H, W) map tiles the sphere exactly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import EmptyRegion, IndexOutOfRange, NonConvergenceWarning
from .lightmodel import PanelLayout, SphericalGaussian
from .radiometry import LinearImage, read_pfm


def texel_directions(height: int, width: int) -> np.ndarray:
    """Unit directions of all texel centers, shape (H, W, 3)."""
    theta = math.pi * (np.arange(height) + 0.5) / height
    phi = 2.0 * math.pi * (np.arange(width) + 0.5) / width
    st, ct = np.sin(theta), np.cos(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    out = np.empty((height, width, 3), dtype=np.float64)
    out[..., 0] = st[:, None] * cp[None, :]
    out[..., 1] = st[:, None] * sp[None, :]
    out[..., 2] = np.broadcast_to(ct[:, None], (height, width))
    return out


def texel_solid_angles(height: int, width: int) -> np.ndarray:
    """Per-row texel solid angle (2pi/W)(pi/H) sin(theta), shape (H,)."""
    theta = math.pi * (np.arange(height) + 0.5) / height
    return (2.0 * math.pi / width) * (math.pi / height) * np.sin(theta)


def texel_direction(row: int, col: int, dims: tuple) -> np.ndarray:
    h, w = dims
    if not (0 <= row < h and 0 <= col < w):
        raise IndexOutOfRange(f"texel ({row}, {col}) outside {h}x{w}")
    return texel_directions(h, w)[row, col]


def solid_angle(row: int, dims: tuple) -> float:
    h, w = dims
    if not (0 <= row < h):
        raise IndexOutOfRange(f"row {row} outside {h} rows")
    return float(texel_solid_angles(h, w)[row])


@dataclass(frozen=True)
class EnvironmentMap:
    """Lat-long HDR radiance map with an accumulated azimuthal rotation."""

    image: LinearImage
    rotation: float = 0.0

    def __post_init__(self):
        if self.image.width != 2 * self.image.height:
            raise ValueError(
                f"lat-long maps need width = 2*height, got {self.image.width}x{self.image.height}"
            )

    @property
    def height(self) -> int:
        return self.image.height

    @property
    def width(self) -> int:
        return self.image.width

    @classmethod
    def from_pfm(cls, path) -> "EnvironmentMap":
        return cls(LinearImage(np.maximum(read_pfm(path), 0.0)))

    @classmethod
    def from_values(cls, values: np.ndarray) -> "EnvironmentMap":
        return cls(LinearImage(values))

    def rotated_values(self) -> np.ndarray:
        """Texel radiance with the rotation baked in, shape (H, W, 3) float64.

        A feature at azimuth p appears at p + rotation; fractional shifts
        interpolate linearly between adjacent columns.
        """
        vals = self.image.data.astype(np.float64)
        shift = self.rotation * self.width / (2.0 * math.pi)
        k = math.floor(shift)
        frac = shift - k
        rolled = np.roll(vals, k, axis=1)
        if frac == 0.0:
            return rolled
        return (1.0 - frac) * rolled + frac * np.roll(vals, k + 1, axis=1)

    def sample(self, dirs: np.ndarray, bilinear: bool = True) -> np.ndarray:
        """Radiance along unit directions (..., 3) -> (..., 3)."""
        d = np.asarray(dirs, dtype=np.float64)
        z = np.clip(d[..., 2], -1.0, 1.0)
        theta = np.arccos(z)
        phi = np.mod(np.arctan2(d[..., 1], d[..., 0]) - self.rotation, 2.0 * math.pi)
        r = theta * self.height / math.pi - 0.5
        c = phi * self.width / (2.0 * math.pi) - 0.5
        vals = self.image.data.astype(np.float64)
        if not bilinear:
            ri = np.clip(np.round(r).astype(int), 0, self.height - 1)
            ci = np.mod(np.round(c).astype(int), self.width)
            return vals[ri, ci]
        r0 = np.floor(r).astype(int)
        c0 = np.floor(c).astype(int)
        fr = (r - r0)[..., None]
        fc = (c - c0)[..., None]
        r0c = np.clip(r0, 0, self.height - 1)
        r1c = np.clip(r0 + 1, 0, self.height - 1)
        c0w = np.mod(c0, self.width)
        c1w = np.mod(c0 + 1, self.width)
        top = vals[r0c, c0w] * (1 - fc) + vals[r0c, c1w] * fc
        bot = vals[r1c, c0w] * (1 - fc) + vals[r1c, c1w] * fc
        return top * (1 - fr) + bot * fr

    def total_energy(self) -> np.ndarray:
        """Per-channel integral of radiance over the sphere."""
        omega = texel_solid_angles(self.height, self.width)
        return np.einsum("h,hwc->c", omega, self.rotated_values())


def rotate(env: EnvironmentMap, delta: float) -> EnvironmentMap:
    """Accumulate an azimuthal rotation; 2*pi is the identity."""
    return EnvironmentMap(env.image, env.rotation + delta)


@dataclass(frozen=True)
class OlatWeights:
    """Per-panel RGB weighting coefficients for linear OLAT compositing."""

    weights: np.ndarray  # (N, 3)
    labels: tuple = ()

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 3:
            raise ValueError(f"expected (N, 3) weights, got {w.shape}")
        if not np.all(np.isfinite(w)) or w.min() < 0.0:
            raise ValueError("weights must be finite and non-negative")
        labels = tuple(self.labels) if self.labels else tuple(
            f"panel_{i:03d}" for i in range(w.shape[0])
        )
        if len(labels) != w.shape[0]:
            raise ValueError("label count must match weight count")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", labels)

    @property
    def count(self) -> int:
        return self.weights.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            [
                {"label": self.labels[i], "weight": [float(c) for c in self.weights[i]]}
                for i in range(self.count)
            ],
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "OlatWeights":
        entries = json.loads(text)
        return cls(
            np.array([e["weight"] for e in entries], dtype=np.float64),
            tuple(e.get("label", f"panel_{i:03d}") for i, e in enumerate(entries)),
        )


def assign_regions(layout: PanelLayout, dirs: np.ndarray) -> np.ndarray:
    """Nearest-panel index for each direction (spherical Voronoi)."""
    flat = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    return np.argmax(flat @ layout.directions.T, axis=1)


def hdri_to_olat_weights(
    env: EnvironmentMap,
    layout: PanelLayout,
    include_solid_angle: bool = True,
) -> OlatWeights:
    """Weighting coefficients from the map region owned by each panel.

    The sphere is partitioned by nearest panel direction. Each weight is the
    solid-angle-weighted mean radiance of the panel's region; by default it
    is then scaled by the region's solid angle, so a weighted OLAT sum
    approximates the environment integral and total energy is conserved.
    With include_solid_angle=False the pure region mean is returned.
    """
    h, w = env.height, env.width
    dirs = texel_directions(h, w).reshape(-1, 3)
    omega = np.broadcast_to(texel_solid_angles(h, w)[:, None], (h, w)).reshape(-1)
    vals = env.rotated_values().reshape(-1, 3)

    idx = assign_regions(layout, dirs)
    counts = np.bincount(idx, minlength=layout.count)
    if np.any(counts == 0):
        missing = [layout.labels[i] for i in np.nonzero(counts == 0)[0][:5]]
        raise EmptyRegion(
            f"{int((counts == 0).sum())} panel region(s) captured no texels at {h}x{w} "
            f"(first: {missing}); increase the map resolution"
        )
    region_omega = np.bincount(idx, weights=omega, minlength=layout.count)
    energy = np.stack(
        [
            np.bincount(idx, weights=omega * vals[:, c], minlength=layout.count)
            for c in range(3)
        ],
        axis=1,
    )
    if include_solid_angle:
        weights = energy
    else:
        weights = energy / region_omega[:, None]
    return OlatWeights(np.maximum(weights, 0.0), layout.labels)


# ---------------------------------------------------------------------------
# K-lobe spherical-gaussian decomposition.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SgSet:
    """Fitted spherical-gaussian approximation of an environment map."""

    gaussians: tuple
    residual: float = 0.0  # relative, solid-angle weighted
    converged: bool = True

    def __post_init__(self):
        if len(self.gaussians) < 1:
            raise ValueError("an SgSet holds at least one lobe")
        object.__setattr__(self, "gaussians", tuple(self.gaussians))

    @property
    def count(self) -> int:
        return len(self.gaussians)

    def evaluate(self, dirs: np.ndarray) -> np.ndarray:
        d = np.asarray(dirs, dtype=np.float64)
        out = np.zeros(d.shape[:-1] + (3,), dtype=np.float64)
        for sg in self.gaussians:
            out += sg.evaluate(d)
        return out

    def to_json(self) -> str:
        return json.dumps(
            [
                {
                    "axis": [float(c) for c in sg.axis],
                    "lambda": float(sg.sharpness),
                    "amplitude": [float(c) for c in sg.amplitude],
                }
                for sg in self.gaussians
            ],
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SgSet":
        entries = json.loads(text)
        lobes = tuple(
            SphericalGaussian(
                np.asarray(e["axis"], np.float64) / np.linalg.norm(e["axis"]),
                float(e["lambda"]),
                np.asarray(e["amplitude"], np.float64),
            )
            for e in entries
        )
        return cls(lobes)


def _solve_amplitudes(phi: np.ndarray, sqrt_omega: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Non-negative least squares per channel; phi is (T, K)."""
    a = np.empty((phi.shape[1], 3))
    weighted_phi = phi * sqrt_omega[:, None]
    for c in range(3):
        a[:, c], _ = nnls(weighted_phi, target[:, c] * sqrt_omega)
    return a


def _sg_model(dirs, axes, lambdas, amps):
    cos = dirs @ axes.T  # (T, K)
    phi = np.exp(lambdas[None, :] * (cos - 1.0))
    return phi @ amps, phi, cos


def fit_sgs(
    env: EnvironmentMap,
    k: int = 15,
    max_iters: int = 60,
    tol: float = 1e-6,
    init_sharpness: float = 10.0,
    seed: int = 0,
) -> SgSet:
    """Fit K spherical gaussians to a map by alternating optimization.

    Each round solves amplitudes by non-negative least squares, then takes a
    damped Gauss-Newton step on the axes (reprojected to unit length) and
    log-sharpness values, with backtracking so the solid-angle-weighted
    residual never increases. Stops once the relative residual improvement
    drops below `tol`. On hitting max_iters a NonConvergenceWarning is
    emitted and the best-so-far set is returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    h, w = env.height, env.width
    dirs = texel_directions(h, w).reshape(-1, 3)
    omega = np.broadcast_to(texel_solid_angles(h, w)[:, None], (h, w)).reshape(-1)
    target = env.rotated_values().reshape(-1, 3)
    sqrt_omega = np.sqrt(omega)
    norm_sq = float(np.sum(omega[:, None] * target**2))

    if norm_sq == 0.0:  # black map: zero-residual fit
        lobes = tuple(
            SphericalGaussian(np.array([0.0, 0.0, 1.0]), init_sharpness, np.zeros(3))
            for _ in range(k)
        )
        return SgSet(lobes, residual=0.0, converged=True)

    # Greedy init: peel energy peaks off the residual map.
    axes = np.zeros((k, 3))
    lambdas = np.full(k, float(init_sharpness))
    residual_map = target.copy()
    amps = np.zeros((k, 3))
    for i in range(k):
        lum = omega * residual_map.sum(axis=1).clip(min=0.0)
        axes[i] = dirs[int(np.argmax(lum))]
        amps[: i + 1] = _solve_amplitudes(
            _sg_model(dirs, axes[: i + 1], lambdas[: i + 1], amps[: i + 1])[1],
            sqrt_omega,
            target,
        )
        model, _, _ = _sg_model(dirs, axes[: i + 1], lambdas[: i + 1], amps[: i + 1])
        residual_map = target - model

    def weighted_sse(model):
        return float(np.sum(omega[:, None] * (model - target) ** 2))

    model, phi, cos = _sg_model(dirs, axes, lambdas, amps)
    sse = weighted_sse(model)
    damping = 1e-3
    converged = False

    for _ in range(max_iters):
        amps = _solve_amplitudes(phi, sqrt_omega, target)
        model = phi @ amps
        sse = min(sse, weighted_sse(model))
        if sse <= 1e-24 * norm_sq:  # exact fit up to roundoff
            converged = True
            break

        # Gauss-Newton on (axis, log lambda) with Levenberg damping.
        t_count = dirs.shape[0]
        jac = np.zeros((t_count, 3, 4 * k))
        amp_sum = amps  # (K, 3)
        for i in range(k):
            tangent = dirs - cos[:, i : i + 1] * axes[i]  # d(cos)/d(mu) at unit mu
            base = phi[:, i] * lambdas[i]  # (T,)
            for c in range(3):
                jac[:, c, 4 * i : 4 * i + 3] = (
                    (base * amp_sum[i, c])[:, None] * tangent
                )
                jac[:, c, 4 * i + 3] = amp_sum[i, c] * base * (cos[:, i] - 1.0)
        jac *= sqrt_omega[:, None, None]
        jac_flat = jac.reshape(-1, 4 * k)
        res_flat = ((model - target) * sqrt_omega[:, None]).reshape(-1)

        jtj = jac_flat.T @ jac_flat
        jtr = jac_flat.T @ res_flat
        improved = False
        for _ in range(8):
            lhs = jtj + damping * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(lhs, -jtr)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            new_axes = axes + delta.reshape(k, 4)[:, :3]
            norms = np.linalg.norm(new_axes, axis=1, keepdims=True)
            new_axes = np.where(norms > 1e-12, new_axes / np.maximum(norms, 1e-12), axes)
            new_lambdas = np.exp(
                np.clip(np.log(lambdas) + delta.reshape(k, 4)[:, 3], math.log(1e-3), math.log(1e5))
            )
            new_model, new_phi, new_cos = _sg_model(dirs, new_axes, new_lambdas, amps)
            new_sse = weighted_sse(new_model)
            if new_sse < sse:
                axes, lambdas = new_axes, new_lambdas
                model, phi, cos = new_model, new_phi, new_cos
                rel_drop = (sse - new_sse) / max(sse, 1e-300)
                sse = new_sse
                damping = max(damping / 3.0, 1e-9)
                improved = True
                if rel_drop < tol:
                    converged = True
                break
            damping *= 10.0
        if not improved:
            converged = True  # no descent direction left at any damping
        if converged:
            break

    amps = _solve_amplitudes(phi, sqrt_omega, target)
    model = phi @ amps
    sse = weighted_sse(model)
    rel_residual = math.sqrt(sse / norm_sq)

    if not converged:
        warnings.warn(
            f"spherical-gaussian fit stopped at max_iters={max_iters} "
            f"with relative residual {rel_residual:.3e}",
            NonConvergenceWarning,
        )
    lobes = tuple(
        SphericalGaussian(axes[i], float(lambdas[i]), np.maximum(amps[i], 0.0))
        for i in range(k)
    )
    return SgSet(lobes, residual=rel_residual, converged=converged)


def synthesize_env(sgs, height: int, width: int) -> EnvironmentMap:
    """Render a lat-long map from spherical-gaussian lobes (test helper)."""
    dirs = texel_directions(height, width)
    vals = np.zeros((height, width, 3))
    for sg in sgs:
        vals += sg.evaluate(dirs)
    return EnvironmentMap(LinearImage(vals.astype(np.float32)))
