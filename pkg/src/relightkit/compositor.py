"""Linear-space relighting by weighted OLAT combination: directional and
variable-size area lights, HDRI relights, rotation animation, and keyframe
crossfade blending.

Everything here is a pure function over immutable stacks. Per-pixel sums
accumulate in float64 with a fixed frame order, so repeated calls are
bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envmap import EnvironmentMap, OlatWeights, hdri_to_olat_weights, fit_sgs, rotate
from .errors import SizeMismatch
from .lightmodel import LightSample, PanelLayout, sg_sharpness, sg_sharpness_inverse
from .radiometry import LinearImage, read_pfm, read_png, write_pfm


@dataclass(frozen=True)
class OlatStack:
    """One-light-at-a-time frames bound to unit directions and solid angles."""

    images: np.ndarray  # (N, H, W, 3) float32
    directions: np.ndarray  # (N, 3) float64 unit
    solid_angles: np.ndarray  # (N,) steradians
    labels: tuple = ()

    def __post_init__(self):
        imgs = np.ascontiguousarray(self.images, dtype=np.float32)
        if imgs.ndim != 4 or imgs.shape[3] != 3 or imgs.shape[0] < 1:
            raise ValueError(f"expected (N, H, W, 3) image block, got {imgs.shape}")
        dirs = np.ascontiguousarray(self.directions, dtype=np.float64)
        if dirs.shape != (imgs.shape[0], 3):
            raise ValueError("direction count must match frame count")
        if np.any(np.abs(np.linalg.norm(dirs, axis=1) - 1.0) > 1e-9):
            raise ValueError("stack directions must be unit length")
        omega = np.ascontiguousarray(self.solid_angles, dtype=np.float64)
        if omega.shape != (imgs.shape[0],) or np.any(omega <= 0.0):
            raise ValueError("solid angles must be positive, one per frame")
        labels = tuple(self.labels) if self.labels else tuple(
            f"olat_{i:03d}" for i in range(imgs.shape[0])
        )
        if len(labels) != imgs.shape[0]:
            raise ValueError("label count must match frame count")
        for arr in (imgs, dirs, omega):
            arr.setflags(write=False)
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "solid_angles", omega)
        object.__setattr__(self, "labels", labels)

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def frame(self, i: int) -> LinearImage:
        return LinearImage(self.images[i])

    def layout(self) -> PanelLayout:
        return PanelLayout(self.directions, self.solid_angles, self.labels)


@dataclass(frozen=True)
class RelitSequence:
    """Relit frames plus the light parameter (sample or rotation) per frame."""

    frames: tuple
    params: tuple = ()

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a sequence holds at least one frame")
        w, h = frames[0].width, frames[0].height
        if any(f.width != w or f.height != h for f in frames):
            raise ValueError("sequence frames must share dimensions")
        object.__setattr__(self, "frames", frames)
        params = tuple(self.params) if self.params else tuple(range(len(frames)))
        object.__setattr__(self, "params", params)

    def __len__(self) -> int:
        return len(self.frames)


def composite(stack: OlatStack, weights) -> LinearImage:
    """Per-pixel weighted sum of OLAT frames in linear radiance.

    `weights` is an OlatWeights, an (N, 3) array, or an (N,) array applied
    to all channels.
    """
    if isinstance(weights, OlatWeights):
        w = weights.weights
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim == 1:
            w = np.repeat(w[:, None], 3, axis=1)
    if w.shape != (stack.count, 3):
        raise SizeMismatch(f"weight shape {w.shape} does not match stack of {stack.count}")
    out = np.zeros((stack.height, stack.width, 3), dtype=np.float64)
    for i in range(stack.count):
        out += stack.images[i] * w[i]
    return LinearImage(np.maximum(out, 0.0).astype(np.float32))


def area_light_weights(
    directions: np.ndarray, solid_angles: np.ndarray, light: LightSample
) -> np.ndarray:
    """Unit-sum OLAT weights simulating a spherical-gaussian area light.

    w_i is the lobe value at panel i times the panel solid angle, normalized
    to sum to one. The exponent is shifted by its maximum before exp so an
    extremely sharp lobe (a -> 0) cannot underflow to an all-zero vector.
    """
    lam = sg_sharpness(light.size)
    cos = np.asarray(directions, np.float64) @ light.direction
    expo = lam * (cos - 1.0)
    g = np.exp(expo - expo.max())
    w = g * np.asarray(solid_angles, np.float64)
    return w / w.sum()


def area_light_target(stack: OlatStack, light: LightSample) -> LinearImage:
    """Ground-truth image for a directional-to-diffuse area light."""
    w = area_light_weights(stack.directions, stack.solid_angles, light)
    return composite(stack, w)


def relight_weights(
    layout: PanelLayout,
    env: EnvironmentMap,
    mode: str = "olat",
    k: int = 15,
    include_solid_angle: bool = True,
) -> np.ndarray:
    """Combined (N, 3) OLAT weights that relight a stack under a map.

    mode="olat" uses per-panel region weights. mode="sg" fits k spherical
    gaussians and sums one unit-normalized area-light weight vector per
    lobe, scaled by amplitude times lobe energy (the sphere integral
    2*pi*(1-exp(-2*lambda))/lambda), which keeps the two modes
    radiometrically comparable.
    """
    if mode == "olat":
        return hdri_to_olat_weights(env, layout, include_solid_angle).weights
    if mode == "sg":
        sgs = fit_sgs(env, k=k)
        combined = np.zeros((layout.count, 3), dtype=np.float64)
        for sg in sgs.gaussians:
            a = sg_sharpness_inverse(sg.sharpness)
            w = area_light_weights(layout.directions, layout.solid_angles, LightSample(sg.axis, a))
            combined += w[:, None] * sg.energy()
        return combined
    raise ValueError(f"unknown mode {mode!r}, expected 'olat' or 'sg'")


def relight_hdri(
    stack: OlatStack,
    env: EnvironmentMap,
    mode: str = "olat",
    k: int = 15,
    include_solid_angle: bool = True,
) -> LinearImage:
    """Relight under an environment map in a single weighted composite."""
    return composite(stack, relight_weights(stack.layout(), env, mode, k, include_solid_angle))


def animate_rotation(
    stack: OlatStack,
    env: EnvironmentMap,
    n_frames: int,
    total_delta: float,
    mode: str = "olat",
    k: int = 15,
) -> RelitSequence:
    """Relit sequence under an azimuthally rotating environment."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if n_frames == 1:
        angles = [0.0]
    else:
        angles = [i * total_delta / (n_frames - 1) for i in range(n_frames)]
    frames = [relight_hdri(stack, rotate(env, a), mode=mode, k=k) for a in angles]
    return RelitSequence(tuple(frames), tuple(angles))


def crossfade_keyframes(seq: RelitSequence, step: int = 4) -> RelitSequence:
    """Keep every step-th frame verbatim and linearly blend the frames
    between consecutive keyframes. Trailing frames past the last keyframe
    are left untouched."""
    if step < 1:
        raise ValueError("step must be >= 1")
    n = len(seq)
    keyframes = list(range(0, n, step))
    out = list(seq.frames)
    for ki in range(len(keyframes) - 1):
        lo, hi = keyframes[ki], keyframes[ki + 1]
        a = seq.frames[lo].data.astype(np.float64)
        b = seq.frames[hi].data.astype(np.float64)
        for t in range(lo + 1, hi):
            frac = (t - lo) / (hi - lo)
            out[t] = LinearImage(((1.0 - frac) * a + frac * b).astype(np.float32))
    return RelitSequence(tuple(out), seq.params)


# ---------------------------------------------------------------------------
# Stack manifest I/O: {"frames": [{path, direction, label, solid_angle}],
# "color_space": "linear-pfm" | "srgb-png"}
# ---------------------------------------------------------------------------

_DEFAULT_OMEGA = 2.0 * math.pi * (1.0 - math.cos(math.radians(10.0)))


def load_stack_manifest(path, base_dir=None) -> OlatStack:
    path = Path(path)
    doc = json.loads(path.read_text())
    base = Path(base_dir) if base_dir is not None else path.parent
    color_space = doc.get("color_space", "linear-pfm")
    if color_space not in ("linear-pfm", "srgb-png"):
        raise ValueError(f"unknown color_space {color_space!r}")
    frames = doc["frames"]
    if not frames:
        raise ValueError("stack manifest lists no frames")
    images = None
    dirs = np.empty((len(frames), 3))
    omega = np.empty(len(frames))
    labels = []
    for i, entry in enumerate(frames):
        fpath = Path(entry["path"])
        if not fpath.is_absolute():
            fpath = base / fpath
        if color_space == "linear-pfm":
            img = np.maximum(read_pfm(fpath), 0.0)
        else:
            img = read_png(fpath).data
        if images is None:
            images = np.empty((len(frames),) + img.shape, dtype=np.float32)
        images[i] = img
        d = np.asarray(entry["direction"], dtype=np.float64)
        dirs[i] = d / np.linalg.norm(d)
        omega[i] = float(entry.get("solid_angle", _DEFAULT_OMEGA))
        labels.append(entry.get("label", f"olat_{i:03d}"))
    return OlatStack(images, dirs, omega, tuple(labels))


def write_stack(out_dir, stack: OlatStack, manifest_name: str = "stack.json") -> Path:
    """Write PFM frames plus a manifest referencing them by relative path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(stack.count):
        name = f"{stack.labels[i]}.pfm"
        write_pfm(out / name, stack.images[i])
        entries.append(
            {
                "path": name,
                "direction": [float(c) for c in stack.directions[i]],
                "label": stack.labels[i],
                "solid_angle": float(stack.solid_angles[i]),
            }
        )
    manifest = out / manifest_name
    manifest.write_text(json.dumps({"frames": entries, "color_space": "linear-pfm"}, indent=2))
    return manifest
