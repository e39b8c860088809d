"""HTTP preview service: upload OLAT stacks and environment maps, then pull
directional/area/HDRI relights as sRGB PNG (or lossless PFM) previews.

Render endpoints are stateless against an in-memory resource cache keyed by
upload ids, so any render can be retried and the service scales
horizontally. Responses carry an X-Content-SHA256 header for cache
validation; renders are bit-deterministic for identical queries.
"""

from __future__ import annotations

import hashlib
import math
import os
import threading
import uuid
from pathlib import Path
from typing import Literal, Optional

import cv2
import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .compositor import (
    OlatStack,
    area_light_target,
    area_light_weights,
    relight_hdri,
    relight_weights,
)
from .envmap import EnvironmentMap, hdri_to_olat_weights, rotate
from .errors import RelightError
from .lightmodel import LightSample, build_stage, normalize
from .radiometry import (
    LinearImage,
    encode_pfm_bytes,
    encode_png_bytes,
    parse_pfm_bytes,
    read_pfm,
    read_png,
)

DEFAULT_MAX_BODY = 256 * 1024 * 1024  # 256 MiB


class StackFrame(BaseModel):
    path: str
    direction: list[float] = Field(min_length=3, max_length=3)
    label: Optional[str] = None
    solid_angle: Optional[float] = None


class StackManifest(BaseModel):
    frames: list[StackFrame] = Field(min_length=1)
    color_space: Literal["linear-pfm", "srgb-png"] = "linear-pfm"
    base_dir: Optional[str] = None


class ResourceCreated(BaseModel):
    id: str
    frames: Optional[int] = None
    width: Optional[int] = None
    height: Optional[int] = None


class HealthStatus(BaseModel):
    status: str
    version: str
    panels: int
    stacks: int
    envs: int


class WeightEntry(BaseModel):
    label: str
    weight: list[float]


_LOADING = object()


class PreviewStack:
    """Downscaled stack with a channel-major matrix for fast compositing.

    Preview composites run as one float32 BLAS matrix-vector product per
    channel instead of the float64 frame loop; at preview sizes the
    difference is far below PNG quantization and renders stay deterministic
    for identical queries.
    """

    __slots__ = ("stack", "matrix")

    def __init__(self, stack: OlatStack):
        self.stack = stack
        hw = stack.height * stack.width
        self.matrix = np.ascontiguousarray(
            stack.images.reshape(stack.count, hw, 3).transpose(2, 0, 1)
        )

    def composite(self, weights: np.ndarray) -> LinearImage:
        w32 = np.asarray(weights, dtype=np.float32)
        if w32.ndim == 1:
            w32 = np.repeat(w32[:, None], 3, axis=1)
        hw = self.stack.height * self.stack.width
        out = np.empty((3, hw), dtype=np.float32)
        for c in range(3):
            np.dot(np.ascontiguousarray(w32[:, c]), self.matrix[c], out=out[c])
        img = out.T.reshape(self.stack.height, self.stack.width, 3)
        return LinearImage(np.maximum(img, 0.0))


class ResourceStore:
    """Read-mostly cache with exclusive insertion and shared reads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._stacks: dict = {}
        self._envs: dict = {}
        self._resized: dict = {}

    def begin_stack(self) -> str:
        sid = uuid.uuid4().hex[:12]
        with self._lock:
            self._stacks[sid] = _LOADING
        return sid

    def finish_stack(self, sid: str, stack: OlatStack | None):
        with self._lock:
            if stack is None:
                self._stacks.pop(sid, None)
            else:
                self._stacks[sid] = stack

    def put_env(self, env: EnvironmentMap) -> str:
        eid = uuid.uuid4().hex[:12]
        with self._lock:
            self._envs[eid] = env
        return eid

    def stack(self, sid: str):
        with self._lock:
            return self._stacks.get(sid)

    def env(self, eid: str):
        with self._lock:
            return self._envs.get(eid)

    def counts(self) -> tuple:
        with self._lock:
            stacks = sum(1 for v in self._stacks.values() if v is not _LOADING)
            return stacks, len(self._envs)

    def resized_stack(self, sid: str, max_dim: int) -> PreviewStack:
        key = (sid, max_dim)
        with self._lock:
            cached = self._resized.get(key)
        if cached is not None:
            return cached
        stack = self.stack(sid)
        scale = max_dim / max(stack.width, stack.height)
        if scale >= 1.0:
            resized = stack
        else:
            w = max(1, round(stack.width * scale))
            h = max(1, round(stack.height * scale))
            block = np.empty((stack.count, h, w, 3), dtype=np.float32)
            for i in range(stack.count):
                block[i] = cv2.resize(stack.images[i], (w, h), interpolation=cv2.INTER_AREA)
            block = np.maximum(block, 0.0)
            resized = OlatStack(block, stack.directions, stack.solid_angles, stack.labels)
        preview = PreviewStack(resized)
        with self._lock:
            self._resized.setdefault(key, preview)
            return self._resized[key]


def _parse_direction(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError("direction must be 'x,y,z'")
    return normalize([float(p) for p in parts])


def _image_response(img: LinearImage, fmt: str) -> Response:
    if fmt == "pfm":
        body = encode_pfm_bytes(img.data)
        media = "image/x-portable-floatmap"
    else:
        body = encode_png_bytes(img)
        media = "image/png"
    digest = hashlib.sha256(body).hexdigest()
    return Response(content=body, media_type=media, headers={"X-Content-SHA256": digest})


def create_app(max_body_bytes: int = DEFAULT_MAX_BODY, workers: int | None = None) -> FastAPI:
    app = FastAPI(title="relightd", version=__version__)
    store = ResourceStore()
    app.state.store = store
    if workers is None:
        workers = int(os.environ.get("RELIGHTD_WORKERS", os.cpu_count() or 1))
    render_slots = threading.BoundedSemaphore(max(1, workers))
    default_layout = build_stage()

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(RelightError)
    async def _engine_error_handler(request: Request, exc: RelightError):
        return JSONResponse(
            status_code=400, content={"detail": str(exc), "error": type(exc).__name__}
        )

    @app.middleware("http")
    async def _limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length is not None and int(length) > max_body_bytes:
            return JSONResponse(status_code=413, content={"detail": "request body too large"})
        return await call_next(request)

    @app.get("/health", response_model=HealthStatus)
    def health():
        stacks, envs = store.counts()
        return HealthStatus(
            status="ok",
            version=__version__,
            panels=default_layout.count,
            stacks=stacks,
            envs=envs,
        )

    @app.post("/stacks", response_model=ResourceCreated)
    def upload_stack(manifest: StackManifest):
        sid = store.begin_stack()
        stack = None
        try:
            base = Path(manifest.base_dir) if manifest.base_dir else Path.cwd()
            images = None
            n = len(manifest.frames)
            dirs = np.empty((n, 3))
            omega = np.empty(n)
            labels = []
            for i, frame in enumerate(manifest.frames):
                fpath = Path(frame.path)
                if not fpath.is_absolute():
                    fpath = base / fpath
                if not fpath.exists():
                    return JSONResponse(
                        status_code=400, content={"detail": f"frame path not found: {fpath}"}
                    )
                if manifest.color_space == "linear-pfm":
                    img = np.maximum(read_pfm(fpath), 0.0)
                else:
                    img = read_png(fpath).data
                if images is None:
                    images = np.empty((n,) + img.shape, dtype=np.float32)
                elif img.shape != images.shape[1:]:
                    return JSONResponse(
                        status_code=400,
                        content={"detail": f"frame {i} dimensions {img.shape} mismatch"},
                    )
                images[i] = img
                dirs[i] = normalize(frame.direction)
                omega[i] = frame.solid_angle if frame.solid_angle else 2.0 * math.pi * (
                    1.0 - math.cos(math.radians(10.0))
                )
                labels.append(frame.label or f"olat_{i:03d}")
            stack = OlatStack(images, dirs, omega, tuple(labels))
            return ResourceCreated(
                id=sid, frames=stack.count, width=stack.width, height=stack.height
            )
        finally:
            store.finish_stack(sid, stack)

    @app.post("/envs", response_model=ResourceCreated)
    async def upload_env(request: Request):
        body = await request.body()
        if len(body) > max_body_bytes:
            return JSONResponse(status_code=413, content={"detail": "request body too large"})
        env = EnvironmentMap(LinearImage(np.maximum(parse_pfm_bytes(body), 0.0)))
        eid = store.put_env(env)
        return ResourceCreated(id=eid, width=env.width, height=env.height)

    def _resolve_stack(sid: str, max_dim: int | None):
        stack = store.stack(sid)
        if stack is None:
            return None, JSONResponse(status_code=404, content={"detail": f"unknown stack {sid!r}"})
        if stack is _LOADING:
            return None, JSONResponse(
                status_code=503,
                content={"detail": f"stack {sid!r} is loading"},
                headers={"Retry-After": "1"},
            )
        if max_dim is not None:
            stack = store.resized_stack(sid, max_dim)
        return stack, None

    @app.get("/render")
    def render(
        stack: str,
        dir: str = Query(..., description="light direction 'x,y,z'"),
        size: float = Query(0.0, ge=0.0, le=1.0),
        format: Literal["png", "pfm"] = "png",
        max_dim: Optional[int] = Query(None, ge=1),
    ):
        target, err = _resolve_stack(stack, max_dim)
        if err is not None:
            return err
        try:
            light = LightSample(_parse_direction(dir), size)
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        with render_slots:
            if isinstance(target, PreviewStack):
                w = area_light_weights(
                    target.stack.directions, target.stack.solid_angles, light
                )
                img = target.composite(w)
            else:
                img = area_light_target(target, light)
        return _image_response(img, format)

    @app.get("/render-env")
    def render_env_endpoint(
        stack: str,
        env: str,
        mode: Literal["olat", "sg"] = "olat",
        rot: float = 0.0,
        k: int = Query(15, ge=1, le=64),
        format: Literal["png", "pfm"] = "png",
        max_dim: Optional[int] = Query(None, ge=1),
    ):
        target, err = _resolve_stack(stack, max_dim)
        if err is not None:
            return err
        stored = store.env(env)
        if stored is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown env {env!r}"})
        with render_slots:
            rotated = rotate(stored, rot)
            if isinstance(target, PreviewStack):
                w = relight_weights(target.stack.layout(), rotated, mode=mode, k=k)
                img = target.composite(w)
            else:
                img = relight_hdri(target, rotated, mode=mode, k=k)
        return _image_response(img, format)

    @app.get("/weights", response_model=list[WeightEntry])
    def weights(
        env: str,
        layout: str = "default",
        pure_mean: bool = False,
    ):
        stored = store.env(env)
        if stored is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown env {env!r}"})
        if layout == "default":
            panel_layout = default_layout
        else:
            stack = store.stack(layout)
            if stack is None or stack is _LOADING:
                return JSONResponse(
                    status_code=404, content={"detail": f"unknown layout source {layout!r}"}
                )
            panel_layout = stack.layout()
        w = hdri_to_olat_weights(stored, panel_layout, include_solid_angle=not pure_mean)
        return [
            WeightEntry(label=w.labels[i], weight=[float(c) for c in w.weights[i]])
            for i in range(w.count)
        ]

    return app


app = create_app()
