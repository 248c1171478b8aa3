"""Command-line surface: compose, render, decompose, recompose, eval.

Every failure maps to a documented exit code (0 ok, 2 configuration,
3 guidance/transport, 4 checkpoint) and prints one machine-readable
line ``componerf-error code=<ExceptionName> exit=<n> message="..."``
on stderr; stack traces never leak to the user.
"""

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import image_io
from .errors import (
    ComponerfError,
    ConfigError,
    DecodeUnavailable,
    MissingTarget,
)
from .guidance import MockGuidance, RemoteGuidance
from .fields import CompositionConfig
from .layout import load_layout, validate_layout
from .oracle import reference_render, scene_from_json
from .rendering import TEST_RESOLUTION, Camera, psnr, render_image
from .scene import SceneConfig, SceneModel
from .training import (
    FINETUNE_STEPS,
    TrainConfig,
    load_checkpoint,
    recompose,
    save_checkpoint,
    save_node_cache,
    train,
)

__all__ = ["main"]

GUIDANCE_URL_ENV = "COMPONERF_GUIDANCE_URL"
CHECKPOINT_NAME = "scene.cnrfckpt"


def _emit_error(exc: ComponerfError) -> int:
    code = type(exc).__name__
    message = str(exc).replace('"', "'")
    print(
        f'componerf-error code={code} exit={exc.exit_code} message="{message}"',
        file=sys.stderr,
    )
    return exc.exit_code


def _guidance_spec(args) -> str:
    spec = getattr(args, "guidance", None)
    if spec:
        return spec
    env = os.environ.get(GUIDANCE_URL_ENV)
    if env:
        return f"remote:{env}"
    raise ConfigError(
        f"no guidance configured: pass --guidance mock:<scene.json>|remote:<url> "
        f"or set {GUIDANCE_URL_ENV}"
    )


def _make_guidance(spec: str, layout):
    """Returns (provider, channels) for a guidance spec string."""
    if spec.startswith("mock:"):
        path = spec[len("mock:") :]
        try:
            with open(path, "r", encoding="utf-8") as fh:
                scene = scene_from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read mock target scene {path!r}: {exc}") from exc
        return MockGuidance(scene, layout), scene.color_dim
    if spec.startswith("remote:"):
        return RemoteGuidance(spec[len("remote:") :]), 4
    raise ConfigError(f"guidance spec must start with mock: or remote:, got {spec!r}")


def _scene_config(channels: int, mode: str) -> SceneConfig:
    composition = CompositionConfig(mode=mode)
    if channels == 3:
        return SceneConfig.rgb(composition=composition)
    return SceneConfig(composition=composition)


def _remote_url(args) -> str | None:
    spec = getattr(args, "guidance", None)
    if spec and spec.startswith("remote:"):
        return spec[len("remote:") :]
    return os.environ.get(GUIDANCE_URL_ENV)


def _orbit_cameras(frames: int, elevation: float, resolution: int) -> list[Camera]:
    return [
        Camera.from_orbit(
            azimuth_deg=360.0 * i / frames,
            elevation_deg=elevation,
            fov_deg=60.0,
            resolution=(resolution, resolution),
        )
        for i in range(frames)
    ]


def _save_frame(out_dir: str, stem: str, image: torch.Tensor, color_dim: int) -> str:
    if color_dim == 3:
        path = os.path.join(out_dir, f"{stem}.png")
        image_io.save_png(path, image)
    else:
        path = os.path.join(out_dir, f"{stem}.cnrf")
        image_io.save_latent(path, image)
    return path


def cmd_compose(args) -> int:
    layout = load_layout(args.layout)
    for diag in validate_layout(layout):
        print(f"layout {diag.severity}: {diag.message}")
    guidance, channels = _make_guidance(_guidance_spec(args), layout)
    config = _scene_config(channels, args.mode)
    scene = SceneModel(layout, config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, CHECKPOINT_NAME)
    train_config = TrainConfig(resolution=args.resolution or 64)
    steps = args.steps if args.steps is not None else train_config.steps
    train(
        layout,
        scene,
        guidance,
        steps,
        config=train_config,
        snapshot_dir=os.path.join(args.out, "snapshots"),
        checkpoint_path=ckpt_path,
    )
    print(f"checkpoint written: {ckpt_path}")
    return 0


def cmd_render(args) -> int:
    scene, layout = load_checkpoint(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    resolution = args.resolution or TEST_RESOLUTION
    if args.azimuth is not None:
        cameras = [
            Camera.from_orbit(
                azimuth_deg=args.azimuth,
                elevation_deg=args.elevation,
                fov_deg=60.0,
                resolution=(resolution, resolution),
            )
        ]
    else:
        cameras = _orbit_cameras(args.frames, args.elevation, resolution)
    decoder = None
    if args.rgb and scene.color_dim != 3:
        url = _remote_url(args)
        if url is None:
            raise DecodeUnavailable(
                "checkpoint renders latent images; decoding to RGB needs a "
                f"remote service (--guidance remote:<url> or {GUIDANCE_URL_ENV})"
            )
        decoder = RemoteGuidance(url)
    for i, camera in enumerate(cameras):
        buffer = render_image(scene, layout, camera)
        path = _save_frame(args.out, f"frame_{i:03d}", buffer.pixels, scene.color_dim)
        print(f"wrote {path}")
        if decoder is not None:
            rgb = decoder.decode_latent(buffer.pixels.numpy())
            rgb_path = os.path.join(args.out, f"frame_{i:03d}_rgb.png")
            image_io.save_png(rgb_path, rgb)
            print(f"wrote {rgb_path}")
    return 0


def cmd_decompose(args) -> int:
    scene, layout = load_checkpoint(args.ckpt)
    wanted = list(args.node) if args.node else sorted(scene.nodes)
    unknown = set(wanted) - set(scene.nodes)
    if unknown:
        raise ConfigError(f"unknown node ids: {sorted(unknown)}")
    os.makedirs(args.out, exist_ok=True)
    prompts = {box.id: box.prompt for box in layout.boxes}
    for node_id in wanted:
        path = os.path.join(args.out, f"{node_id}.cnrfnode")
        save_node_cache(scene, node_id, path, prompts.get(node_id, ""))
        print(f"cached {node_id}: {path}")
    return 0


def cmd_recompose(args) -> int:
    layout = load_layout(args.layout)
    base_dir = os.path.dirname(os.path.abspath(args.layout))
    steps = args.steps if args.steps is not None else FINETUNE_STEPS
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, CHECKPOINT_NAME)
    if steps > 0:
        guidance, channels = _make_guidance(_guidance_spec(args), layout)
    else:
        guidance, channels = None, 4
        if getattr(args, "guidance", None) and args.guidance.startswith("mock:"):
            _, channels = _make_guidance(args.guidance, layout)
    scene = recompose(layout, _scene_config(channels, args.mode), args.seed, base_dir)
    if steps > 0:
        train(
            layout,
            scene,
            guidance,
            steps,
            config=TrainConfig(resolution=args.resolution or 64),
            snapshot_dir=os.path.join(args.out, "snapshots"),
            checkpoint_path=ckpt_path,
        )
    else:
        save_checkpoint(scene, layout, ckpt_path)
    print(f"checkpoint written: {ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    scene, layout = load_checkpoint(args.ckpt)
    resolution = args.resolution or 64
    cameras = _orbit_cameras(args.frames, args.elevation, resolution)
    frames = [render_image(scene, layout, camera) for camera in cameras]
    lines = [
        "componerf eval report",
        f"checkpoint: {args.ckpt}",
        f"frames: {len(frames)}",
    ]
    if args.target:
        try:
            with open(args.target, "r", encoding="utf-8") as fh:
                target_scene = scene_from_json(fh.read())
        except OSError as exc:
            raise MissingTarget(f"cannot read target scene {args.target!r}: {exc}") from exc
        lines.append("metric: psnr_db")
        values = []
        for camera, buffer in zip(cameras, frames):
            ref = reference_render(target_scene, layout, camera, steps=args.march_steps)
            value = psnr(buffer.pixels.numpy().astype(np.float64), ref)
            values.append(value)
            lines.append(f"frame azimuth={camera.azimuth_deg:.1f} psnr={value:.4f}")
        lines.append(f"mean {float(np.mean(values)):.4f}")
    else:
        url = _remote_url(args)
        if url is None:
            raise MissingTarget(
                "eval needs --target <scene.json> for PSNR mode or a remote "
                f"service URL for CLIP mode ({GUIDANCE_URL_ENV} or --guidance remote:<url>)"
            )
        client = RemoteGuidance(url)
        rgb_frames = []
        for buffer in frames:
            pixels = buffer.pixels.numpy()
            if scene.color_dim != 3:
                pixels = client.decode_latent(pixels)
            rgb_frames.append(pixels.astype(np.float32))
        prompt = args.prompt or layout.global_prompt
        result = client.clip_score(prompt, rgb_frames)
        lines.append("metric: clip_score")
        lines.append(f"prompt: {prompt}")
        for camera, score in zip(cameras, result["scores"]):
            lines.append(f"frame azimuth={camera.azimuth_deg:.1f} clip={score:.4f}")
        lines.append(f"mean {result['mean']:.4f}")
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="componerf",
        description="Compositional radiance fields from box layouts and prompts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ckpt=False, layout=False, out=True):
        if layout:
            p.add_argument("--layout", required=True, help="layout JSON path")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="scene checkpoint path")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the layout seed")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="pin to one compute thread for bitwise-reproducible runs",
        )
        p.add_argument("--resolution", type=int, default=None, help="square image size")

    p = sub.add_parser("compose", help="train a scene from scratch")
    common(p, layout=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--guidance", default=None, help="mock:<scene.json> | remote:<url>")
    p.add_argument("--mode", choices=["density", "color"], default="density")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("render", help="render frames from a checkpoint")
    common(p, ckpt=True)
    p.add_argument("--frames", type=int, default=8, help="orbit frame count")
    p.add_argument("--azimuth", type=float, default=None, help="render one view instead")
    p.add_argument("--elevation", type=float, default=15.0)
    p.add_argument("--rgb", action="store_true", help="also decode latent frames to RGB")
    p.add_argument("--guidance", default=None, help="remote:<url> used for decoding")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("decompose", help="cache each node field to a file")
    common(p, ckpt=True)
    p.add_argument("--node", action="append", default=None, help="limit to these node ids")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("recompose", help="build a scene from cached nodes and finetune")
    common(p, layout=True)
    p.add_argument("--steps", type=int, default=None, help="finetune steps (default 1000)")
    p.add_argument("--guidance", default=None, help="mock:<scene.json> | remote:<url>")
    p.add_argument("--mode", choices=["density", "color"], default="density")
    p.set_defaults(func=cmd_recompose)

    p = sub.add_parser("eval", help="orbit-render and score a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", default=None, help="report file path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--elevation", type=float, default=15.0)
    p.add_argument("--prompt", default=None, help="override the layout's global prompt")
    p.add_argument("--target", default=None, help="analytic scene JSON for PSNR mode")
    p.add_argument("--march-steps", type=int, default=1024, help="target integrator steps")
    p.add_argument("--guidance", default=None, help="remote:<url> for CLIP mode")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "deterministic", False):
        torch.set_num_threads(1)
    try:
        return args.func(args)
    except ComponerfError as exc:
        return _emit_error(exc)


if __name__ == "__main__":
    sys.exit(main())
