"""Command line launcher: ``sds-service`` or ``python -m sds_service``."""

import argparse

from .config import STUB_MODES, ProviderConfig


def build_config(args: argparse.Namespace) -> ProviderConfig:
    return ProviderConfig(
        model_tag=args.model,
        guidance_scale=args.guidance_scale,
        t_range=(args.t_min, args.t_max),
        device=args.device,
        stub_mode=None if args.stub == "none" else args.stub,
        fixed_vector=tuple(float(v) for v in args.fixed_vector.split(",")),
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sds-service",
        description="Serve score-distillation gradients, CLIP scores, and latent decoding.",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument(
        "--stub",
        choices=STUB_MODES + ("none",),
        default="perfect-denoiser",
        help="deterministic provider to run; 'none' loads the real diffusion model",
    )
    parser.add_argument(
        "--fixed-vector",
        default="0,0,0,0",
        help="comma-separated per-channel gradient for --stub fixed-vector",
    )
    parser.add_argument("--model", default="stable-diffusion-v1-4")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--guidance-scale", type=float, default=100.0)
    parser.add_argument("--t-min", type=int, default=20)
    parser.add_argument("--t-max", type=int, default=980)
    args = parser.parse_args(argv)

    import uvicorn

    from .app import create_app

    uvicorn.run(create_app(build_config(args)), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
