"""Wire protocol: payload schemas, byte packing, and error mapping.

Images travel as base64-encoded row-major little-endian float32 buffers
with explicit height, width, and channels fields. Every error response is
``{"error_code", "message"}`` with a 4xx status for request problems
(BAD_VERSION, BAD_SHAPE, PROMPT_EMPTY) and 500 for provider failures
(PROVIDER_ERROR).
"""

import base64

import numpy as np
from pydantic import BaseModel

PROTOCOL_VERSION = 1

BAD_VERSION = "BAD_VERSION"
BAD_SHAPE = "BAD_SHAPE"
PROMPT_EMPTY = "PROMPT_EMPTY"
PROVIDER_ERROR = "PROVIDER_ERROR"


class ProtocolError(Exception):
    """A request or provider failure with a protocol error code."""

    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.status = status


class ViewAngles(BaseModel):
    azimuth: float
    elevation: float


class SdsGradRequest(BaseModel):
    protocol_version: int
    prompt: str
    height: int
    width: int
    channels: int
    view: ViewAngles
    image_b64: str
    t: int | None = None
    request_id: str | None = None


class FramePayload(BaseModel):
    height: int
    width: int
    channels: int
    image_b64: str


class ClipScoreRequest(BaseModel):
    protocol_version: int
    prompt: str
    frames: list[FramePayload]


class DecodeRequest(BaseModel):
    protocol_version: int
    height: int
    width: int
    channels: int
    image_b64: str


def encode_image(image: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(image.astype("<f4")).tobytes()).decode("ascii")


def decode_image(data: str, height: int, width: int, channels: int) -> np.ndarray:
    """Unpack one image payload, rejecting anything that does not fit."""
    if height <= 0 or width <= 0 or channels <= 0:
        raise ProtocolError(BAD_SHAPE, f"non-positive dimensions {height}x{width}x{channels}")
    try:
        raw = base64.b64decode(data, validate=True)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(BAD_SHAPE, f"image_b64 is not valid base64: {exc}") from exc
    expected = height * width * channels * 4
    if len(raw) != expected:
        raise ProtocolError(
            BAD_SHAPE,
            f"payload is {len(raw)} bytes, expected {expected} for {height}x{width}x{channels}",
        )
    return np.frombuffer(raw, dtype="<f4").reshape(height, width, channels).copy()


def check_version(version: int) -> None:
    if version != PROTOCOL_VERSION:
        raise ProtocolError(BAD_VERSION, f"server speaks protocol {PROTOCOL_VERSION}, got {version}")


def check_prompt(prompt: str) -> None:
    if not prompt.strip():
        raise ProtocolError(PROMPT_EMPTY, "prompt must not be blank")
