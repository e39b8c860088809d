"""Diffusion-support kernels: pyramid noise, noising schedules, forward
noising, training-loss evaluation, light-embedding assembly, and DDIM
stepping against a pluggable denoiser.

No neural network lives here. The latent codec defaults to identity and the
denoiser is an interface, so the kernels stay testable against analytic
noise predictors while a learned model can be slotted in unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Protocol

import cv2
import numpy as np

from .errors import InvalidParams, ShapeMismatch, StepOutOfRange
from .lightmodel import (
    LightSample,
    SH_COEFF_COUNT,
    pad_embedding,
    scaled_direction,
    sh_basis,
)
from .radiometry import LinearImage


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal fractions (alpha-bar) over T timesteps, 1-based."""

    alpha_bars: np.ndarray

    def __post_init__(self):
        ab = np.ascontiguousarray(self.alpha_bars, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 1:
            raise InvalidParams("alpha_bars must be a non-empty 1-D array")
        if ab[0] > 1.0 or ab[-1] <= 0.0:
            raise InvalidParams("alpha_bars must start <= 1 and stay positive")
        if np.any(np.diff(ab) > 0.0):
            raise InvalidParams("alpha_bars must be non-increasing")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bars", ab)

    @property
    def steps(self) -> int:
        return self.alpha_bars.size

    def alpha_bar(self, t: int) -> float:
        if not (1 <= t <= self.steps):
            raise StepOutOfRange(f"t={t} outside [1, {self.steps}]")
        return float(self.alpha_bars[t - 1])

    @classmethod
    def linear(cls, steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2):
        betas = np.linspace(beta_start, beta_end, steps)
        return cls(np.cumprod(1.0 - betas))

    @classmethod
    def cosine(cls, steps: int = 1000, s: float = 0.008, max_beta: float = 0.999):
        f = np.cos((np.arange(steps + 1) / steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, max_beta)
        return cls(np.cumprod(1.0 - betas))

    def to_json(self) -> str:
        return json.dumps(list(map(float, self.alpha_bars)))

    @classmethod
    def from_json(cls, text: str) -> "DiffusionSchedule":
        return cls(np.asarray(json.loads(text), dtype=np.float64))


class LatentCodec(Protocol):
    def encode(self, image) -> np.ndarray: ...

    def decode(self, latent: np.ndarray): ...


class IdentityCodec:
    """Pass-through codec: the latent space is pixel space."""

    def encode(self, image) -> np.ndarray:
        if isinstance(image, LinearImage):
            return image.data.astype(np.float32)
        return np.asarray(image, dtype=np.float32)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent, dtype=np.float32)


class Denoiser(Protocol):
    def predict(self, latent_input: np.ndarray, embedding: np.ndarray, t: int) -> np.ndarray: ...


def pyramid_noise(
    width: int,
    height: int,
    channels: int = 3,
    levels: int = 6,
    discount: float = 0.8,
    seed: int = 0,
) -> np.ndarray:
    """Multi-resolution gaussian noise, centered and renormalized so the
    field has exactly zero empirical mean and unit empirical variance.

    Level l draws white noise at resolution /2^l, upsamples it bilinearly
    to full size, and adds it scaled by discount^l. Coarse levels inject
    the low-frequency content that plain white noise lacks; they also
    carry a DC component large enough to drift the raw mean, which is why
    the field is centered before use as diffusion noise.
    """
    if width < 1 or height < 1 or channels < 1:
        raise InvalidParams("dimensions must be positive")
    if levels < 1:
        raise InvalidParams("levels must be >= 1")
    if not (0.0 < discount <= 1.0):
        raise InvalidParams("discount must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    field = np.zeros((height, width, channels), dtype=np.float32)
    for level in range(levels):
        h = max(1, height >> level)
        w = max(1, width >> level)
        noise = rng.standard_normal((h, w, channels)).astype(np.float32)
        if (h, w) != (height, width):
            noise = cv2.resize(noise, (width, height), interpolation=cv2.INTER_LINEAR)
            if noise.ndim == 2:
                noise = noise[:, :, None]
        field += (discount**level) * noise
    field -= field.mean()
    std = float(field.std())
    if std > 0.0:
        field /= std
    return field


def noise_stats(field: np.ndarray) -> dict:
    """Audit statistics: mean, variance, and horizontal lag-1 autocorrelation."""
    f = np.asarray(field, dtype=np.float64)
    mean = float(f.mean())
    var = float(f.var())
    a = (f[:, :-1] - mean).reshape(-1)
    b = (f[:, 1:] - mean).reshape(-1)
    lag1 = float(np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b)))
    return {"mean": mean, "variance": var, "lag1_autocorr": lag1}


def noisy_latent(z0: np.ndarray, eps: np.ndarray, t: int, sched: DiffusionSchedule) -> np.ndarray:
    """Forward noising: sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps."""
    z = np.asarray(z0, dtype=np.float64)
    e = np.asarray(eps, dtype=np.float64)
    if z.shape != e.shape:
        raise ShapeMismatch(f"latent {z.shape} vs noise {e.shape}")
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * z + math.sqrt(1.0 - ab) * e


def light_embedding(sample: LightSample, total_len: int = 1024) -> np.ndarray:
    """Conditioning vector for a light sample: zeros followed by the SH
    encoding of the size-scaled direction.

    The scaled vector (1-a)*d is encoded through its normalized direction;
    at a = 1 the vector vanishes and the SH block is all zeros, which is the
    flat-lit code.
    """
    v = scaled_direction(sample)
    n = np.linalg.norm(v)
    if n < 1e-12:
        coeffs = np.zeros(SH_COEFF_COUNT)
    else:
        coeffs = sh_basis(v / n)
    return pad_embedding(coeffs, total_len)


def diffusion_loss(
    denoiser: Denoiser,
    codec: LatentCodec,
    flat: LinearImage,
    olat: LinearImage,
    embedding: np.ndarray,
    t: int,
    eps: np.ndarray,
    sched: DiffusionSchedule,
    reduction: str = "sum",
) -> float:
    """Squared L2 between the denoiser's noise estimate and the true noise.

    The denoiser sees the noisy target latent channel-concatenated with the
    clean conditioning latent, plus the light embedding and the timestep.
    """
    if flat.data.shape != olat.data.shape:
        raise ShapeMismatch(f"flat {flat.data.shape} vs target {olat.data.shape}")
    z0 = codec.encode(olat)
    cond = codec.encode(flat)
    zt = noisy_latent(z0, eps, t, sched)
    pred = np.asarray(denoiser.predict(np.concatenate([zt, cond], axis=-1), embedding, t))
    e = np.asarray(eps, dtype=np.float64)
    if pred.shape != e.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs noise {e.shape}")
    sq = (pred.astype(np.float64) - e) ** 2
    if reduction == "sum":
        return float(sq.sum())
    if reduction == "mean":
        return float(sq.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


def ddim_timesteps(total_steps: int, n_steps: int) -> np.ndarray:
    """Evenly spaced timesteps from T down to 1."""
    if not (1 <= n_steps <= total_steps):
        raise StepOutOfRange(f"n_steps={n_steps} outside [1, {total_steps}]")
    ts = np.unique(np.round(np.linspace(1, total_steps, n_steps)).astype(int))
    return ts[::-1]


def ddim_sample(
    denoiser: Denoiser,
    conditioning: np.ndarray,
    embedding: np.ndarray,
    sched: DiffusionSchedule,
    n_steps: int = 30,
    seed: int = 0,
    init: str = "gaussian",
    latent_shape: tuple | None = None,
    return_trajectory: bool = False,
):
    """Deterministic (eta = 0) DDIM trajectory from noise to a clean latent.

    Each step predicts the clean latent
        z0_hat = (z_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)
    and re-noises it to the next alpha-bar with the same eps_hat. The
    starting field is seeded gaussian or pyramid noise, so equal seeds give
    bit-identical trajectories.
    """
    cond = np.asarray(conditioning, dtype=np.float64)
    shape = tuple(latent_shape) if latent_shape is not None else cond.shape
    if init == "gaussian":
        z = np.random.default_rng(seed).standard_normal(shape)
    elif init == "pyramid":
        if len(shape) != 3:
            raise InvalidParams("pyramid init needs an (H, W, C) latent shape")
        z = pyramid_noise(shape[1], shape[0], shape[2], seed=seed).astype(np.float64)
    else:
        raise ValueError(f"unknown init {init!r}")

    ts = ddim_timesteps(sched.steps, n_steps)
    trajectory = []
    for i, t in enumerate(ts):
        ab_t = sched.alpha_bar(int(t))
        eps_hat = np.asarray(
            denoiser.predict(np.concatenate([z, cond], axis=-1), embedding, int(t)),
            dtype=np.float64,
        )
        if eps_hat.shape != z.shape:
            raise ShapeMismatch(f"prediction {eps_hat.shape} vs latent {z.shape}")
        z0_hat = (z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
        ab_next = sched.alpha_bar(int(ts[i + 1])) if i + 1 < len(ts) else 1.0
        z = math.sqrt(ab_next) * z0_hat + math.sqrt(1.0 - ab_next) * eps_hat
        if return_trajectory:
            trajectory.append(z0_hat.copy())
    if return_trajectory:
        return z, trajectory
    return z
