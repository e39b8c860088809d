"""Deterministic synthetic renderer used as the brute-force reference for
compositing correctness.

The scene is a Blinn-Phong sphere resting above a Lambertian ground plane,
ray-traced with hard shadows and no stochastic sampling, so renders are
reproducible bit-for-bit. A directional render is linear in radiance, and
an environment render is by construction the solid-angle-weighted sum of
directional renders over every texel, which is exactly the identity that
weighted OLAT compositing is supposed to approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compositor import OlatStack
from .envmap import EnvironmentMap, texel_directions, texel_solid_angles
from .lightmodel import PanelLayout, normalize
from .radiometry import LinearImage


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: tuple
    specular_weight: float = 0.0
    specular_exponent: float = 16.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.specular_exponent < 1:
            raise ValueError("specular exponent must be >= 1")
        if not all(0.0 <= a <= 1.0 for a in self.albedo):
            raise ValueError("albedo components must lie in [0, 1]")


@dataclass(frozen=True)
class GroundPlane:
    """Finite horizontal disc at z = height, centered on the z axis.

    A finite ground keeps the lower light hemisphere partially visible, so
    no direction band is globally occluded and compositing converges
    smoothly with panel density.
    """

    height: float
    albedo: tuple
    radius: float = 2.5

    def __post_init__(self):
        if not all(0.0 <= a <= 1.0 for a in self.albedo):
            raise ValueError("albedo components must lie in [0, 1]")
        if self.radius <= 0:
            raise ValueError("ground radius must be positive")


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    vfov_deg: float = 40.0
    width: int = 256
    height: int = 256
    up: tuple = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class Scene:
    sphere: Sphere
    plane: GroundPlane
    camera: Camera


def default_scene(resolution: int = 256) -> Scene:
    """Desk-scale test scene: a matte-plus-gloss sphere hovering just above
    a small neutral disc, seen from a raised three-quarter view."""
    return Scene(
        sphere=Sphere(
            center=(0.0, 0.0, 0.70),
            radius=0.5,
            albedo=(0.70, 0.55, 0.45),
            specular_weight=0.18,
            specular_exponent=12.0,
        ),
        plane=GroundPlane(height=0.0, albedo=(0.42, 0.44, 0.48), radius=1.2),
        camera=Camera(
            position=(0.0, -1.2, 2.9),
            look_at=(0.0, 0.0, 0.45),
            vfov_deg=38.0,
            width=resolution,
            height=resolution,
        ),
    )


class _GBuffer:
    """Flat arrays over pixels that hit geometry."""

    __slots__ = (
        "shape", "hit_index", "position", "normal", "view",
        "albedo", "spec_weight", "spec_exponent", "on_plane",
    )

    def __init__(self, shape, hit_index, position, normal, view, albedo,
                 spec_weight, spec_exponent, on_plane):
        self.shape = shape
        self.hit_index = hit_index
        self.position = position
        self.normal = normal
        self.view = view
        self.albedo = albedo
        self.spec_weight = spec_weight
        self.spec_exponent = spec_exponent
        self.on_plane = on_plane


def trace(scene: Scene) -> _GBuffer:
    cam = scene.camera
    eye = np.asarray(cam.position, dtype=np.float64)
    forward = normalize(np.asarray(cam.look_at, np.float64) - eye)
    right = normalize(np.cross(forward, np.asarray(cam.up, np.float64)))
    up = np.cross(right, forward)
    tan_v = math.tan(math.radians(cam.vfov_deg) / 2.0)
    aspect = cam.width / cam.height

    xs = ((np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0) * tan_v * aspect
    ys = (1.0 - (np.arange(cam.height) + 0.5) / cam.height * 2.0) * tan_v
    rays = (
        forward[None, None, :]
        + xs[None, :, None] * right[None, None, :]
        + ys[:, None, None] * up[None, None, :]
    )
    rays /= np.linalg.norm(rays, axis=2, keepdims=True)
    rays = rays.reshape(-1, 3)

    # Sphere intersection.
    c = np.asarray(scene.sphere.center, np.float64)
    oc = eye - c
    b = rays @ oc
    disc = b * b - (oc @ oc - scene.sphere.radius**2)
    t_sph = np.where(disc > 0.0, -b - np.sqrt(np.maximum(disc, 0.0)), np.inf)
    t_sph = np.where(t_sph > 1e-6, t_sph, np.inf)

    # Ground disc at z = height.
    dz = rays[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_pln = (scene.plane.height - eye[2]) / dz
    t_pln = np.where((np.abs(dz) > 1e-12) & (t_pln > 1e-6), t_pln, np.inf)
    hit_xy = eye[None, :2] + t_pln[:, None] * rays[:, :2]
    with np.errstate(invalid="ignore"):
        inside = np.einsum("pk,pk->p", hit_xy, hit_xy) <= scene.plane.radius**2
    t_pln = np.where(inside, t_pln, np.inf)

    t = np.minimum(t_sph, t_pln)
    hit = np.isfinite(t)
    on_plane = hit & (t_pln <= t_sph)

    idx = np.nonzero(hit)[0]
    th = t[idx]
    pos = eye[None, :] + th[:, None] * rays[idx]
    plane_sel = on_plane[idx]
    nrm = np.where(
        plane_sel[:, None],
        np.array([0.0, 0.0, 1.0])[None, :],
        (pos - c[None, :]) / scene.sphere.radius,
    )
    view = -rays[idx]
    albedo = np.where(
        plane_sel[:, None],
        np.asarray(scene.plane.albedo, np.float64)[None, :],
        np.asarray(scene.sphere.albedo, np.float64)[None, :],
    )
    spec_w = np.where(plane_sel, 0.0, scene.sphere.specular_weight)
    return _GBuffer(
        shape=(cam.height, cam.width),
        hit_index=idx,
        position=pos,
        normal=nrm,
        view=view,
        albedo=albedo.astype(np.float32),
        spec_weight=spec_w.astype(np.float32),
        spec_exponent=scene.sphere.specular_exponent,
        on_plane=plane_sel,
    )


def _int_power(base: np.ndarray, exponent: float) -> np.ndarray:
    """x**e by repeated squaring for integral e (hot path), else np.power."""
    e = int(exponent)
    if e != exponent or e < 1:
        return np.power(base, exponent)
    result = None
    acc = base
    while e:
        if e & 1:
            result = acc if result is None else result * acc
        e >>= 1
        if e:
            acc = acc * acc
    return result


class _ShadeScratch:
    """Reusable (P, chunk) work buffers so chunked shading does not thrash
    the allocator."""

    def __init__(self, p: int, chunk: int):
        self.chunk = chunk
        shape = (p, chunk)
        self.n_dot_d = np.empty(shape, np.float32)
        self.v_dot_d = np.empty(shape, np.float32)
        self.b = np.empty(shape, np.float32)
        self.work = np.empty(shape, np.float32)
        self.work2 = np.empty(shape, np.float32)
        self.diffuse = np.empty(shape, np.float32)
        self.spec = np.empty(shape, np.float32)
        self.lit = np.empty(shape, bool)
        self.mask = np.empty(shape, bool)


def _shade_chunks(scene: Scene, gbuf: _GBuffer, dirs: np.ndarray, chunk: int | None = None):
    """Yield (start, diffuse, spec) blocks of shading factors per direction.

    diffuse and spec are (P, Mc) float32 views into reused scratch; the
    pixel value under direction m with radiance r is
    (albedo * diffuse[:, m] + spec[:, m]) * r.
    """
    p = gbuf.position.shape[0]
    m = dirs.shape[0]
    if p == 0 or m == 0:
        return
    if chunk is None:
        chunk = int(min(m, max(16, 8.0e6 // max(p, 1))))

    n32 = gbuf.normal.astype(np.float32)
    v32 = gbuf.view.astype(np.float32)
    n_dot_v = np.einsum("pk,pk->p", n32, v32).astype(np.float32)
    oc = gbuf.position - np.asarray(scene.sphere.center, np.float64)[None, :]
    oc32 = oc.astype(np.float32)
    oc_sq32 = (np.einsum("pk,pk->p", oc, oc) - scene.sphere.radius**2).astype(np.float32)
    pos32 = gbuf.position.astype(np.float32)
    plane_h = np.float32(scene.plane.height)
    plane_r2 = np.float32(scene.plane.radius**2)
    on_plane = gbuf.on_plane[:, None]
    spec_w = gbuf.spec_weight[:, None]

    s = _ShadeScratch(p, chunk)
    for start in range(0, m, chunk):
        d = np.ascontiguousarray(dirs[start : start + chunk].T, dtype=np.float32)  # (3, Mc)
        mc = d.shape[1]
        ndd = s.n_dot_d[:, :mc]
        vdd = s.v_dot_d[:, :mc]
        b = s.b[:, :mc]
        work = s.work[:, :mc]
        work2 = s.work2[:, :mc]
        diffuse = s.diffuse[:, :mc]
        spec = s.spec[:, :mc]
        lit = s.lit[:, :mc]
        mask = s.mask[:, :mc]

        # Dot products written elementwise, not through BLAS: gemm kernels
        # round differently per matrix shape, and batched frames must be
        # bit-identical to single-direction renders.
        def dot3(lhs, out):
            np.multiply(lhs[:, 0:1], d[0:1], out=out)
            np.multiply(lhs[:, 1:2], d[1:2], out=work)
            out += work
            np.multiply(lhs[:, 2:3], d[2:3], out=work)
            out += work

        dot3(n32, ndd)
        dot3(v32, vdd)
        np.greater(ndd, 0.0, out=lit)

        # Sphere shadow on the ground: blocked when the quadratic in the
        # shadow ray has a positive root.
        dot3(oc32, b)
        np.multiply(b, b, out=work)
        np.greater(work, oc_sq32[:, None], out=mask)
        mask &= b < 0.0
        mask &= on_plane
        lit &= ~mask

        # Ground-disc shadow on sphere points for below-horizon light.
        with np.errstate(divide="ignore", invalid="ignore"):
            np.subtract(plane_h, pos32[:, 2:3], out=work)
            np.divide(work, d[2][None, :], out=work)  # t along the ray
            np.multiply(work, d[0][None, :], out=work2)
            work2 += pos32[:, 0:1]
            np.multiply(work2, work2, out=work2)
            np.multiply(work, d[1][None, :], out=b)
            b += pos32[:, 1:2]
            np.multiply(b, b, out=b)
            work2 += b
            np.less_equal(work2, plane_r2, out=mask)
        mask &= work > 1e-6
        mask &= d[2][None, :] < 0.0
        mask &= ~on_plane
        lit &= ~mask

        np.multiply(ndd, lit, out=diffuse)

        # Blinn half-vector dot via |d + v|^2 = 2 + 2 d.v, guarded at d = -v.
        np.multiply(vdd, 2.0, out=work)
        work += 2.0
        np.maximum(work, 1e-12, out=work)
        np.sqrt(work, out=work)
        np.add(ndd, n_dot_v[:, None], out=work2)
        np.divide(work2, work, out=work2)
        np.maximum(work2, 0.0, out=work2)
        lobe = _int_power(work2, gbuf.spec_exponent)
        np.multiply(lobe, lit, out=spec)
        spec *= spec_w

        yield start, diffuse, spec


def _shade_sum(scene: Scene, gbuf: _GBuffer, dirs: np.ndarray, radiances: np.ndarray) -> np.ndarray:
    """Sum of shading over light directions, radiances pre-scaled by any
    quadrature weight. dirs (M, 3), radiances (M, 3); returns (P, 3)."""
    p = gbuf.position.shape[0]
    out = np.zeros((p, 3), dtype=np.float64)
    alb64 = gbuf.albedo.astype(np.float64)
    for start, diffuse, spec in _shade_chunks(scene, gbuf, dirs):
        rad = radiances[start : start + diffuse.shape[1]].astype(np.float64)
        d64 = diffuse.astype(np.float64)
        s64 = spec.astype(np.float64)
        out += (d64 @ rad) * alb64
        out += s64 @ rad
    return out


def _scatter(gbuf: _GBuffer, shaded: np.ndarray) -> LinearImage:
    h, w = gbuf.shape
    img = np.zeros((h * w, 3), dtype=np.float32)
    img[gbuf.hit_index] = np.maximum(shaded, 0.0).astype(np.float32)
    return LinearImage(img.reshape(h, w, 3))


def render_directional(scene: Scene, direction, radiance=(1.0, 1.0, 1.0),
                       gbuf: _GBuffer | None = None) -> LinearImage:
    """Ray-traced render under a single distant light."""
    if gbuf is None:
        gbuf = trace(scene)
    d = np.asarray(direction, np.float64).reshape(1, 3)
    rad = np.asarray(radiance, np.float64).reshape(1, 3)
    return _scatter(gbuf, _shade_sum(scene, gbuf, d, rad))


def render_env(scene: Scene, env: EnvironmentMap, quadrature: tuple | None = None,
               gbuf: _GBuffer | None = None) -> LinearImage:
    """Direct environment render: sum of texel-direction renders weighted by
    texel solid angle. quadrature=(H, W) resamples the map; default is the
    map's own resolution (no resampling error)."""
    if gbuf is None:
        gbuf = trace(scene)
    if quadrature is None:
        h, w = env.height, env.width
        vals = env.rotated_values()
    else:
        h, w = quadrature
        if h < 32 or w < 64:
            raise ValueError("quadrature must be at least 32x64")
        vals = env.sample(texel_directions(h, w))
    dirs = texel_directions(h, w).reshape(-1, 3)
    omega = np.broadcast_to(texel_solid_angles(h, w)[:, None], (h, w)).reshape(-1)
    radiances = vals.reshape(-1, 3) * omega[:, None]
    return _scatter(gbuf, _shade_sum(scene, gbuf, dirs, radiances))


def make_olat_stack(scene: Scene, layout: PanelLayout) -> OlatStack:
    """One unit-radiance directional render per panel.

    All panels are shaded in one chunked pass; each frame is assembled with
    the same float64 expression as render_directional, so frame i is
    bit-identical to render_directional(scene, layout.directions[i])."""
    gbuf = trace(scene)
    cam = scene.camera
    images = np.zeros((layout.count, cam.height * cam.width, 3), dtype=np.float32)
    alb64 = gbuf.albedo.astype(np.float64)
    for start, diffuse, spec in _shade_chunks(scene, gbuf, layout.directions):
        for j in range(diffuse.shape[1]):
            frame = diffuse[:, j, None].astype(np.float64) * alb64
            frame += spec[:, j, None].astype(np.float64)
            images[start + j, gbuf.hit_index, :] = np.maximum(frame, 0.0).astype(np.float32)
    images = images.reshape(layout.count, cam.height, cam.width, 3)
    return OlatStack(images, layout.directions, layout.solid_angles, layout.labels)
