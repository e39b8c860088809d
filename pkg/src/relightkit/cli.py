"""relightd command line: batch front end over the engine plus the `serve`
verb that starts the HTTP preview service.

Every verb delegates to exactly one engine operation, writes outputs
atomically (temp file + rename), and exits 0 on success, 2 on validation
errors, 3 on runtime failures. `--json` switches stdout to a single
machine-readable JSON object.
"""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
from pathlib import Path

import click
import numpy as np

from . import __version__
from .compositor import (
    animate_rotation,
    area_light_target,
    composite,
    crossfade_keyframes,
    load_stack_manifest,
    relight_hdri,
    write_stack,
    RelitSequence,
)
from .envmap import EnvironmentMap, OlatWeights, fit_sgs, hdri_to_olat_weights, rotate
from .errors import RelightError
from .dyngs import plan_segments
from .lightmodel import LightSample, PanelLayout, build_stage, normalize
from .noisekit import noise_stats, pyramid_noise
from .radiometry import (
    ColorChart,
    LinearImage,
    calibrate_color,
    read_pfm,
    write_pfm,
    write_png,
)
from .synthoracle import default_scene, make_olat_stack


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _atomic_write_image(path: Path, img: LinearImage) -> None:
    if path.suffix.lower() == ".png":
        from .radiometry import encode_png_bytes

        _atomic_write_bytes(path, encode_png_bytes(img))
    else:
        from .radiometry import encode_pfm_bytes

        _atomic_write_bytes(path, encode_pfm_bytes(img.data))


def _load_layout(spec: str) -> PanelLayout:
    if spec == "default":
        return build_stage()
    return PanelLayout.from_json(Path(spec).read_text())


def _load_env(path: str, rotation: float = 0.0) -> EnvironmentMap:
    env = EnvironmentMap.from_pfm(path)
    return rotate(env, rotation) if rotation else env


def _parse_dir(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise click.UsageError("direction must be 'x,y,z'")
    return normalize([float(p) for p in parts])


def _emit(as_json: bool, payload: dict, fallback: str) -> None:
    if as_json:
        click.echo(json.dumps(payload))
    else:
        click.echo(fallback)


def _run(body):
    """Map engine errors to exit 2 and unexpected failures to exit 3."""
    try:
        body()
    except click.ClickException:
        raise
    except RelightError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except (OSError, Exception) as exc:  # noqa: BLE001 - deliberate catch-all
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(3)


@click.group()
@click.version_option(__version__)
def main():
    """Reflectance-field relighting engine."""


@main.command()
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
@click.option("--resolution", default=256, show_default=True)
@click.option("--subdivision", default=1, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def synth(out_dir, resolution, subdivision, as_json):
    """Render the synthetic OLAT stack and write frames plus a manifest."""

    def body():
        scene = default_scene(resolution)
        layout = build_stage(subdivision=subdivision)
        stack = make_olat_stack(scene, layout)
        manifest = write_stack(out_dir, stack)
        _atomic_write_text(out_dir / "layout.json", layout.to_json())
        _emit(
            as_json,
            {"status": "ok", "manifest": str(manifest), "frames": stack.count},
            f"wrote {stack.count} frames to {out_dir}",
        )

    _run(body)


@main.command("composite")
@click.option("--stack", "stack_path", required=True, type=click.Path(exists=True))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def composite_cmd(stack_path, weights_path, out, as_json):
    """Weighted OLAT sum in linear space."""

    def body():
        stack = load_stack_manifest(stack_path)
        weights = OlatWeights.from_json(Path(weights_path).read_text())
        _atomic_write_image(out, composite(stack, weights))
        _emit(as_json, {"status": "ok", "out": str(out)}, f"wrote {out}")

    _run(body)


@main.command("area-light")
@click.option("--stack", "stack_path", required=True, type=click.Path(exists=True))
@click.option("--dir", "direction", required=True, help="light direction 'x,y,z'")
@click.option("--size", default=0.0, show_default=True, help="area size a in [0,1]")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def area_light(stack_path, direction, size, out, as_json):
    """Variable-size area light from OLAT combination."""

    def body():
        stack = load_stack_manifest(stack_path)
        img = area_light_target(stack, LightSample(_parse_dir(direction), size))
        _atomic_write_image(out, img)
        _emit(as_json, {"status": "ok", "out": str(out)}, f"wrote {out}")

    _run(body)


@main.command("relight-hdri")
@click.option("--stack", "stack_path", required=True, type=click.Path(exists=True))
@click.option("--env", "env_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["olat", "sg"]), default="olat", show_default=True)
@click.option("--k", default=15, show_default=True)
@click.option("--rotation", default=0.0, show_default=True, help="env azimuth, radians")
@click.option("--pure-mean", is_flag=True, help="use region means without solid-angle scaling")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def relight_hdri_cmd(stack_path, env_path, mode, k, rotation, pure_mean, out, as_json):
    """Relight under an HDRI environment map."""

    def body():
        stack = load_stack_manifest(stack_path)
        env = _load_env(env_path, rotation)
        img = relight_hdri(stack, env, mode=mode, k=k, include_solid_angle=not pure_mean)
        _atomic_write_image(out, img)
        _emit(as_json, {"status": "ok", "out": str(out)}, f"wrote {out}")

    _run(body)


@main.command()
@click.option("--stack", "stack_path", required=True, type=click.Path(exists=True))
@click.option("--env", "env_path", required=True, type=click.Path(exists=True))
@click.option("--frames", "n_frames", default=8, show_default=True)
@click.option("--total-rotation", default=2.0 * math.pi, show_default=True)
@click.option("--mode", type=click.Choice(["olat", "sg"]), default="olat", show_default=True)
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def animate(stack_path, env_path, n_frames, total_rotation, mode, out_dir, as_json):
    """Relit sequence under a rotating environment."""

    def body():
        stack = load_stack_manifest(stack_path)
        env = _load_env(env_path)
        seq = animate_rotation(stack, env, n_frames, total_rotation, mode=mode)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(seq.frames):
            _atomic_write_image(out_dir / f"frame_{i:04d}.pfm", frame)
        _atomic_write_text(
            out_dir / "sequence.json",
            json.dumps({"frames": len(seq), "rotations": list(seq.params)}, indent=2),
        )
        _emit(as_json, {"status": "ok", "frames": len(seq), "out_dir": str(out_dir)},
              f"wrote {len(seq)} frames to {out_dir}")

    _run(body)


@main.command()
@click.option("--in-dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--step", default=4, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def crossfade(in_dir, step, out_dir, as_json):
    """Blend frames between every step-th keyframe of a PFM sequence."""

    def body():
        paths = sorted(in_dir.glob("*.pfm"))
        if not paths:
            raise click.UsageError(f"no .pfm frames in {in_dir}")
        frames = tuple(LinearImage(np.maximum(read_pfm(p), 0.0)) for p in paths)
        seq = crossfade_keyframes(RelitSequence(frames), step=step)
        out_dir.mkdir(parents=True, exist_ok=True)
        for path, frame in zip(paths, seq.frames):
            _atomic_write_image(out_dir / path.name, frame)
        _emit(as_json, {"status": "ok", "frames": len(seq), "out_dir": str(out_dir)},
              f"wrote {len(seq)} frames to {out_dir}")

    _run(body)


@main.command("fit-sg")
@click.option("--env", "env_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=15, show_default=True)
@click.option("--max-iters", default=60, show_default=True)
@click.option("--tol", default=1e-6, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def fit_sg(env_path, k, max_iters, tol, out, as_json):
    """Approximate an HDRI by K spherical gaussians."""

    def body():
        env = _load_env(env_path)
        sgs = fit_sgs(env, k=k, max_iters=max_iters, tol=tol)
        _atomic_write_text(out, sgs.to_json())
        _emit(
            as_json,
            {"status": "ok", "out": str(out), "k": sgs.count,
             "residual": sgs.residual, "converged": sgs.converged},
            f"wrote {sgs.count} lobes to {out} (residual {sgs.residual:.3e})",
        )

    _run(body)


@main.command()
@click.option("--env", "env_path", required=True, type=click.Path(exists=True))
@click.option("--layout", "layout_spec", default="default", show_default=True,
              help="'default' or a layout JSON path")
@click.option("--pure-mean", is_flag=True, help="region means without solid-angle scaling")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def weights(env_path, layout_spec, pure_mean, out, as_json):
    """Per-panel weighting coefficients from an HDRI."""

    def body():
        env = _load_env(env_path)
        layout = _load_layout(layout_spec)
        w = hdri_to_olat_weights(env, layout, include_solid_angle=not pure_mean)
        _atomic_write_text(out, w.to_json())
        _emit(as_json, {"status": "ok", "out": str(out), "panels": w.count},
              f"wrote {w.count} weights to {out}")

    _run(body)


@main.command()
@click.option("--reference", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--observed", "obs_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def calibrate(ref_path, obs_path, out, as_json):
    """Per-channel scale from paired color-chart captures (JSON patch lists)."""

    def body():
        ref = ColorChart(np.asarray(json.loads(Path(ref_path).read_text())))
        obs = ColorChart(np.asarray(json.loads(Path(obs_path).read_text())))
        s = calibrate_color(ref, obs)
        doc = {"r": s.r, "g": s.g, "b": s.b}
        _atomic_write_text(out, json.dumps(doc, indent=2))
        _emit(as_json, {"status": "ok", "out": str(out), **doc},
              f"scale factors r={s.r:.6g} g={s.g:.6g} b={s.b:.6g}")

    _run(body)


@main.command("noise-stats")
@click.option("--width", default=256, show_default=True)
@click.option("--height", default=256, show_default=True)
@click.option("--channels", default=3, show_default=True)
@click.option("--levels", default=6, show_default=True)
@click.option("--discount", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True)
def noise_stats_cmd(width, height, channels, levels, discount, seed):
    """Pyramid-noise audit statistics as JSON on stdout."""

    def body():
        field = pyramid_noise(width, height, channels, levels, discount, seed)
        click.echo(json.dumps(noise_stats(field)))

    _run(body)


@main.command("plan-segments")
@click.option("--frames", "n_frames", required=True, type=int)
@click.option("--keyframes", "k", type=int, default=None,
              help="keyframe count; derived from --segment-length when omitted")
@click.option("--segment-length", default=20, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--json", "as_json", is_flag=True)
def plan_segments_cmd(n_frames, k, segment_length, out, as_json):
    """Keyframe/segment plan for long-sequence training."""

    def body():
        count = k if k is not None else max(2, round((n_frames - 1) / max(segment_length - 1, 1)) + 1)
        plan = plan_segments(n_frames, count)
        text = plan.to_json()
        if out is not None:
            _atomic_write_text(out, text)
            _emit(as_json, {"status": "ok", "out": str(out), "keyframes": list(plan.keyframes)},
                  f"wrote plan with {len(plan.keyframes)} keyframes to {out}")
        else:
            click.echo(text)

    _run(body)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=None, type=int, help="default: $RELIGHTD_PORT or 8080")
@click.option("--workers", default=None, type=int, help="default: $RELIGHTD_WORKERS or CPU count")
def serve(host, port, workers):
    """Start the HTTP preview service."""

    def body():
        import uvicorn

        from .service import create_app

        resolved_port = port if port is not None else int(os.environ.get("RELIGHTD_PORT", "8080"))
        app = create_app(workers=workers)
        uvicorn.run(app, host=host, port=resolved_port, log_level="info")

    _run(body)


if __name__ == "__main__":
    main()
