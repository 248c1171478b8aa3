"""Binary container for checkpoints and node caches.

Layout of a file:
    bytes 0..16    magic, NUL-padded to 16 bytes ("CNRFCKPT" / "CNRFNODE")
    bytes 16..20   format version (u32, little-endian)
    bytes 20..28   metadata length (u64, little-endian)
    metadata       UTF-8 JSON: provenance plus a section index
                   [{name, dtype, shape, offset, length}, ...]
    blob           named parameter sections, raw little-endian floats

Writes are atomic (temp file + rename); reads validate everything before
returning, so a truncated or foreign file never yields a partial result.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .errors import VersionMismatch

__all__ = [
    "FORMAT_VERSION",
    "SCENE_MAGIC",
    "NODE_MAGIC",
    "write_blob_file",
    "read_blob_file",
    "read_meta",
]

FORMAT_VERSION = 1
SCENE_MAGIC = b"CNRFCKPT"
NODE_MAGIC = b"CNRFNODE"

_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def _pad_magic(magic: bytes) -> bytes:
    return magic.ljust(16, b"\0")


def write_blob_file(path: str, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write metadata + named float arrays atomically."""
    sections = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = {np.dtype("float32"): "f4", np.dtype("float64"): "f8"}[arr.dtype]
        raw = arr.astype(_DTYPES[code]).tobytes()
        sections.append(
            {
                "name": name,
                "dtype": code,
                "shape": list(arr.shape),
                "offset": offset,
                "length": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    meta_bytes = json.dumps({**meta, "sections": sections}).encode("utf-8")
    header = _pad_magic(magic) + struct.pack("<IQ", FORMAT_VERSION, len(meta_bytes))
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(meta_bytes)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise VersionMismatch(f"file truncated while reading {what}")
    return data


def read_blob_file(path: str, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Read and fully validate a blob file; raises VersionMismatch on any damage."""
    with open(path, "rb") as fh:
        got_magic = _read_exact(fh, 16, "magic")
        if got_magic != _pad_magic(magic):
            raise VersionMismatch(
                f"bad magic in {path!r}: expected {magic!r}, got {got_magic[:8]!r}"
            )
        version, meta_len = struct.unpack("<IQ", _read_exact(fh, 12, "header"))
        if version != FORMAT_VERSION:
            raise VersionMismatch(
                f"format version {version} unsupported (this build reads {FORMAT_VERSION})"
            )
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise VersionMismatch(f"corrupt metadata in {path!r}: {exc}") from exc
        blob = fh.read()
    arrays = {}
    for section in meta.get("sections", []):
        start, length = int(section["offset"]), int(section["length"])
        if start < 0 or length < 0 or start + length > len(blob):
            raise VersionMismatch(f"section {section['name']!r} extends past end of file")
        dtype = _DTYPES.get(section["dtype"])
        if dtype is None:
            raise VersionMismatch(f"unknown section dtype {section['dtype']!r}")
        shape = [int(n) for n in section["shape"]]
        if int(np.prod(shape)) * dtype.itemsize != length:
            raise VersionMismatch(
                f"section {section['name']!r} shape {shape} disagrees with its byte length"
            )
        arr = np.frombuffer(blob[start : start + length], dtype=dtype).reshape(shape)
        arrays[section["name"]] = arr.copy()
    return meta, arrays


def read_meta(path: str, magic: bytes) -> dict:
    """Header index only (cheap peek; still fully validated)."""
    meta, _ = read_blob_file(path, magic)
    return meta
