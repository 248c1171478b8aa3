"""Pluggable guidance providers.

A provider is any callable ``provider(request, scope) -> GuidanceResponse``
where ``scope`` is ``"global"`` or ``"local:<box id>"``. The trainer renders
a view, wraps it in a :class:`GuidanceRequest`, and applies the returned
image-space gradient through the render tape. Two implementations ship:

  * :class:`MockGuidance` pulls renders toward analytic reference images,
    the gradient of a photometric half-squared error.
  * :class:`RemoteGuidance` speaks the HTTP protocol of the score
    distillation service and fails closed on anything malformed.
"""

import base64
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import requests
import torch

from .errors import GuidanceTransportError, ProtocolVersionMismatch, ProviderError, ShapeMismatch
from .oracle import AnalyticScene, reference_render
from .layout import Layout
from .rendering import Camera

__all__ = [
    "PROTOCOL_VERSION",
    "GuidanceRequest",
    "GuidanceResponse",
    "augment_prompt",
    "mock_guidance",
    "MockGuidance",
    "FixedVectorGuidance",
    "RemoteGuidance",
    "encode_image_b64",
    "decode_image_b64",
]

PROTOCOL_VERSION = 1


@dataclass
class GuidanceRequest:
    """One rendered view plus the text condition for it.

    ``camera`` is in-process context for local providers that need the full
    projection (the mock oracle re-renders its target through it); it never
    crosses the wire, where only azimuth/elevation travel.
    """

    image: torch.Tensor
    prompt: str
    azimuth: float
    elevation: float
    t: int | None = None
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    camera: Camera | None = None


@dataclass
class GuidanceResponse:
    """Image-space gradient with provider diagnostics."""

    grad_image: torch.Tensor
    t_used: int
    provider: str


def augment_prompt(prompt: str, azimuth: float, elevation: float) -> str:
    """Append exactly one directional cue based on the camera direction.

    Elevation above 60 degrees reads as overhead regardless of azimuth;
    otherwise azimuth (wrapped to (-180, 180]) selects front (<45 deg from
    the axis), back (>135 deg), or side.
    """
    if elevation > 60.0:
        return f"{prompt}, overhead view"
    az = ((azimuth + 180.0) % 360.0) - 180.0
    if abs(az) < 45.0:
        return f"{prompt}, front view"
    if abs(az) > 135.0:
        return f"{prompt}, back view"
    return f"{prompt}, side view"


def mock_guidance(request: GuidanceRequest, target: torch.Tensor) -> GuidanceResponse:
    """Gradient of 0.5 * ||image - target||^2: simply image - target."""
    if tuple(target.shape) != tuple(request.image.shape):
        raise ShapeMismatch(
            f"target shape {tuple(target.shape)} != image shape {tuple(request.image.shape)}"
        )
    grad = request.image.detach() - target.to(request.image.dtype)
    return GuidanceResponse(grad_image=grad, t_used=request.t or 0, provider="mock")


class MockGuidance:
    """Photometric oracle: pulls each view toward an analytic reference.

    For the global scope the target is the full analytic scene; for a
    ``local:<id>`` scope it is that node's content alone, integrated only
    inside its own box. Targets are ray-marched on demand and memoized for
    a handful of recent cameras.
    """

    def __init__(
        self,
        scene: AnalyticScene,
        layout: Layout,
        march_steps: int = 160,
        cache_size: int = 8,
    ):
        self.scene = scene
        self.layout = layout
        self.march_steps = march_steps
        self._cache: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._cache_size = cache_size
        self._local_layouts = {
            box.id: Layout(
                global_prompt=layout.global_prompt, boxes=(box,), seed=layout.seed
            )
            for box in layout.boxes
        }

    def target(self, scope: str, camera: Camera) -> np.ndarray:
        key = (scope, camera)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        if scope == "global":
            img = reference_render(self.scene, self.layout, camera, steps=self.march_steps)
        elif scope.startswith("local:"):
            node_id = scope.split(":", 1)[1]
            img = reference_render(
                self.scene.restrict([node_id]),
                self._local_layouts[node_id],
                camera,
                steps=self.march_steps,
            )
        else:
            raise ValueError(f"unknown guidance scope {scope!r}")
        img = img.astype(np.float32)
        self._cache[key] = img
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return img

    def __call__(self, request: GuidanceRequest, scope: str) -> GuidanceResponse:
        if request.camera is None:
            raise ValueError("mock guidance needs the full camera on the request")
        target = torch.from_numpy(self.target(scope, request.camera))
        return mock_guidance(request, target)


class FixedVectorGuidance:
    """Returns the same gradient for every request; for boundary tests."""

    def __init__(self, grad: torch.Tensor):
        self.grad = grad

    def __call__(self, request: GuidanceRequest, scope: str) -> GuidanceResponse:
        if tuple(self.grad.shape) != tuple(request.image.shape):
            raise ShapeMismatch(
                f"fixed grad shape {tuple(self.grad.shape)} != image {tuple(request.image.shape)}"
            )
        return GuidanceResponse(
            grad_image=self.grad.to(request.image.dtype).clone(),
            t_used=request.t or 0,
            provider="fixed",
        )


def encode_image_b64(image: np.ndarray) -> str:
    """Row-major little-endian float32 bytes, base64-encoded."""
    return base64.b64encode(np.ascontiguousarray(image.astype("<f4")).tobytes()).decode("ascii")


def decode_image_b64(data: str, height: int, width: int, channels: int) -> np.ndarray:
    raw = base64.b64decode(data, validate=True)
    expected = height * width * channels * 4
    if len(raw) != expected:
        raise ProtocolVersionMismatch(
            f"payload is {len(raw)} bytes, expected {expected} for {height}x{width}x{channels}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(height, width, channels).copy()


class RemoteGuidance:
    """HTTP client for the score distillation service.

    Transport failures are retried with the same request id so the service
    can deduplicate; protocol damage of any kind raises before a single
    gradient value is handed to the trainer.
    """

    def __init__(self, url: str, timeout: float = 60.0, retries: int = 2):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = requests.Session()

    def __call__(self, request: GuidanceRequest, scope: str) -> GuidanceResponse:
        image = request.image.detach().cpu().numpy()
        if image.ndim != 3:
            raise ShapeMismatch(f"expected [H, W, C] image, got shape {image.shape}")
        height, width, channels = image.shape
        body = {
            "protocol_version": PROTOCOL_VERSION,
            "prompt": request.prompt,
            "height": height,
            "width": width,
            "channels": channels,
            "view": {"azimuth": request.azimuth, "elevation": request.elevation},
            "image_b64": encode_image_b64(image),
            "request_id": request.request_id,
        }
        if request.t is not None:
            body["t"] = request.t
        payload = self._post("/v1/sds_grad", body)
        try:
            grad = decode_image_b64(payload["grad_b64"], height, width, channels)
            t_used = int(payload["t_used"])
            provider = str(payload["provider"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolVersionMismatch(f"malformed guidance response: {exc}") from exc
        return GuidanceResponse(
            grad_image=torch.from_numpy(grad).to(request.image.dtype),
            t_used=t_used,
            provider=provider,
        )

    def clip_score(self, prompt: str, frames: list[np.ndarray]) -> dict:
        """Score rendered RGB frames against a prompt via /v1/clip_score."""
        body = {
            "protocol_version": PROTOCOL_VERSION,
            "prompt": prompt,
            "frames": [
                {
                    "height": f.shape[0],
                    "width": f.shape[1],
                    "channels": f.shape[2],
                    "image_b64": encode_image_b64(f),
                }
                for f in frames
            ],
        }
        payload = self._post("/v1/clip_score", body)
        try:
            return {"scores": [float(s) for s in payload["scores"]], "mean": float(payload["mean"])}
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolVersionMismatch(f"malformed clip_score response: {exc}") from exc

    def decode_latent(self, latent: np.ndarray) -> np.ndarray:
        """Decode a latent image to RGB via /v1/decode."""
        height, width, channels = latent.shape
        body = {
            "protocol_version": PROTOCOL_VERSION,
            "height": height,
            "width": width,
            "channels": channels,
            "image_b64": encode_image_b64(latent),
        }
        payload = self._post("/v1/decode", body)
        try:
            return decode_image_b64(
                payload["image_b64"],
                int(payload["height"]),
                int(payload["width"]),
                int(payload["channels"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolVersionMismatch(f"malformed decode response: {exc}") from exc

    def health(self) -> dict:
        try:
            resp = self._session.get(f"{self.url}/v1/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise GuidanceTransportError(f"health check failed: {exc}") from exc
        return resp.json()

    def _post(self, route: str, body: dict) -> dict:
        last_exc: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(f"{self.url}{route}", json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                continue
            return self._interpret(resp)
        raise GuidanceTransportError(
            f"service unreachable at {self.url}{route} after {self.retries + 1} attempts: {last_exc}"
        )

    def _interpret(self, resp: requests.Response) -> dict:
        if resp.status_code >= 400:
            try:
                detail = resp.json()
            except ValueError:
                detail = {}
            code = detail.get("error_code", "")
            message = detail.get("message", resp.text[:200])
            if code == "BAD_VERSION":
                raise ProtocolVersionMismatch(f"service rejected protocol version: {message}")
            raise ProviderError(f"{code or resp.status_code}: {message}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolVersionMismatch(f"response body is not structured: {exc}") from exc
