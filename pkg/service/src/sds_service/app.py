"""HTTP surface: three POST endpoints plus a health probe.

Handlers are synchronous, so the server runs them on a thread pool. Stub
providers are pure functions and serve any number of requests in parallel;
the diffusion provider holds an internal lock, so concurrent requests queue
at the model rather than corrupting it.
"""

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .config import ProviderConfig
from .protocol import (
    BAD_SHAPE,
    PROTOCOL_VERSION,
    ClipScoreRequest,
    DecodeRequest,
    ProtocolError,
    SdsGradRequest,
    check_prompt,
    check_version,
    decode_image,
    encode_image,
)
from .providers import LATENT_CHANNELS, SCHEDULE_STEPS, make_provider


def create_app(config: ProviderConfig | None = None) -> FastAPI:
    """Build the service around one provider instance."""
    provider = make_provider(config or ProviderConfig())
    app = FastAPI(title="sds-service", docs_url=None, redoc_url=None)

    @app.exception_handler(ProtocolError)
    def protocol_error(request: Request, exc: ProtocolError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"error_code": exc.code, "message": exc.message},
        )

    @app.exception_handler(RequestValidationError)
    def validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ())) or "request"
        return JSONResponse(
            status_code=400,
            content={
                "error_code": BAD_SHAPE,
                "message": f"malformed request: {where}: {first.get('msg', 'invalid')}",
            },
        )

    @app.get("/v1/health")
    def health() -> dict:
        return {
            "status": "ok",
            "provider": provider.tag,
            "stub": provider.stub,
            "protocol_version": PROTOCOL_VERSION,
        }

    @app.post("/v1/sds_grad")
    def sds_grad(req: SdsGradRequest) -> dict:
        check_version(req.protocol_version)
        check_prompt(req.prompt)
        if req.channels != LATENT_CHANNELS:
            raise ProtocolError(
                BAD_SHAPE,
                f"sds_grad expects {LATENT_CHANNELS}-channel latents, got {req.channels}",
            )
        if req.t is not None and not 0 <= req.t < SCHEDULE_STEPS:
            raise ProtocolError(
                BAD_SHAPE, f"t must be in [0, {SCHEDULE_STEPS}), got {req.t}"
            )
        image = decode_image(req.image_b64, req.height, req.width, req.channels)
        grad, t_used = provider.sds_grad(
            image,
            req.prompt,
            (req.view.azimuth, req.view.elevation),
            req.t,
            req.request_id,
        )
        return {
            "grad_b64": encode_image(grad),
            "t_used": int(t_used),
            "provider": provider.tag,
        }

    @app.post("/v1/clip_score")
    def clip_score(req: ClipScoreRequest) -> dict:
        check_version(req.protocol_version)
        check_prompt(req.prompt)
        if not req.frames:
            raise ProtocolError(BAD_SHAPE, "frames must not be empty")
        images = [
            decode_image(f.image_b64, f.height, f.width, f.channels) for f in req.frames
        ]
        scores = provider.clip_scores(req.prompt, images)
        return {"scores": scores, "mean": float(np.mean(scores))}

    @app.post("/v1/decode")
    def decode(req: DecodeRequest) -> dict:
        check_version(req.protocol_version)
        if req.channels != LATENT_CHANNELS:
            raise ProtocolError(
                BAD_SHAPE,
                f"decode expects {LATENT_CHANNELS}-channel latents, got {req.channels}",
            )
        latent = decode_image(req.image_b64, req.height, req.width, req.channels)
        image = provider.decode(latent)
        return {
            "image_b64": encode_image(image),
            "height": image.shape[0],
            "width": image.shape[1],
            "channels": image.shape[2],
        }

    return app
