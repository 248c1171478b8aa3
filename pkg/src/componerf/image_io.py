"""Image writers and readers for training snapshots and CLI output.

Three formats:
  * ``.png``  8-bit tonemapped color (values clamped to [0, 1]).
  * ``.pfm``  grayscale float maps (accumulated weights), standard
              "Pf" header with scale -1.0 and bottom-up row order.
  * ``.cnrf`` raw latent images: a 16-byte header (magic "CNRF",
              version u16, channels u16, height u32, width u32, all
              little-endian) followed by row-major float32 samples.
"""

import struct

import numpy as np
from PIL import Image

from .errors import ShapeMismatch, VersionMismatch

__all__ = [
    "LATENT_MAGIC",
    "LATENT_VERSION",
    "save_png",
    "load_png",
    "save_pfm",
    "load_pfm",
    "save_latent",
    "load_latent",
]

LATENT_MAGIC = b"CNRF"
LATENT_VERSION = 1
_LATENT_HEADER = struct.Struct("<4sHHII")


def _as_array(image) -> np.ndarray:
    arr = np.asarray(image.detach().cpu().numpy() if hasattr(image, "detach") else image)
    if arr.ndim != 3:
        raise ShapeMismatch(f"expected [H, W, C] image, got shape {arr.shape}")
    return arr


def save_png(path: str, image) -> None:
    """Write a [H, W, 3] (or [H, W, 1]) float image as 8-bit PNG."""
    arr = _as_array(image).astype(np.float64)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if arr.shape[2] != 3:
        raise ShapeMismatch(f"PNG output needs 1 or 3 channels, got {arr.shape[2]}")
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def load_png(path: str) -> np.ndarray:
    """Read a PNG back to float32 in [0, 1], shape [H, W, 3]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_pfm(path: str, values) -> None:
    """Write a [H, W] float map as grayscale PFM (little-endian, bottom-up)."""
    arr = np.asarray(values.detach().cpu().numpy() if hasattr(values, "detach") else values)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected [H, W] map, got shape {arr.shape}")
    data = arr.astype("<f4")[::-1]
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(data.tobytes())


def load_pfm(path: str) -> np.ndarray:
    """Read a grayscale PFM written by :func:`save_pfm` (or compatible)."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise VersionMismatch(f"not a grayscale PFM: header {header!r}")
        width, height = (int(tok) for tok in fh.readline().split())
        scale = float(fh.readline())
        raw = fh.read(width * height * 4)
    if len(raw) != width * height * 4:
        raise VersionMismatch("PFM data truncated")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return np.ascontiguousarray(arr[::-1]).astype(np.float32)


def save_latent(path: str, image) -> None:
    """Write a [H, W, C] float image in the raw latent container."""
    arr = _as_array(image).astype("<f4")
    height, width, channels = arr.shape
    header = _LATENT_HEADER.pack(LATENT_MAGIC, LATENT_VERSION, channels, height, width)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_latent(path: str) -> np.ndarray:
    """Read a raw latent image; validates magic, version, and payload size."""
    with open(path, "rb") as fh:
        header = fh.read(_LATENT_HEADER.size)
        if len(header) != _LATENT_HEADER.size:
            raise VersionMismatch("latent file truncated in header")
        magic, version, channels, height, width = _LATENT_HEADER.unpack(header)
        if magic != LATENT_MAGIC:
            raise VersionMismatch(f"bad latent magic {magic!r}")
        if version != LATENT_VERSION:
            raise VersionMismatch(f"latent version {version} unsupported")
        raw = fh.read()
    expected = height * width * channels * 4
    if len(raw) != expected:
        raise VersionMismatch(
            f"latent payload is {len(raw)} bytes, header promises {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(height, width, channels).copy()
