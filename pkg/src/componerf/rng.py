"""Counter-based deterministic random streams.

Every draw is a pure function of integer keys (seed, purpose tag, step,
pixel index, ...) pushed through a splitmix64-style mixer, so parallel
and serial execution produce identical values and a re-run with the same
configuration reproduces a run bitwise. Mixing is done in numpy uint64,
where overflow wraps by definition.
"""

import hashlib

import numpy as np

__all__ = ["tag", "mix", "uniform", "uniform_scalar", "normal"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def tag(name: str) -> int:
    """Stable 64-bit integer key for a purpose name."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # uint64 wraparound is the algorithm
        x = x + _GAMMA
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def _as_u64(key) -> np.ndarray:
    if isinstance(key, (int, np.integer)):
        return np.uint64(int(key) & _MASK64)
    arr = np.asarray(key)
    if arr.dtype.kind not in "iu":
        raise TypeError(f"rng keys must be integers, got dtype {arr.dtype}")
    return arr.astype(np.int64).view(np.uint64) if arr.dtype.kind == "i" else arr.astype(np.uint64)


def mix(*keys) -> np.ndarray:
    """Mix integer keys (scalars or broadcastable integer arrays) into uint64 hashes."""
    h = np.uint64(0)
    for key in keys:
        h = _splitmix(h ^ _as_u64(key))
    return h


def uniform(*keys) -> np.ndarray:
    """Uniform float64 draws in [0, 1), one per element of the broadcast keys."""
    h = mix(*keys)
    return (h >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def uniform_scalar(*keys) -> float:
    return float(uniform(*keys))


def normal(*keys) -> np.ndarray:
    """Standard normal draws via Box-Muller on two decorrelated uniform streams."""
    u1 = uniform(*keys, tag("normal/u1"))
    u2 = uniform(*keys, tag("normal/u2"))
    r = np.sqrt(-2.0 * np.log(1.0 - u1))
    return r * np.cos(2.0 * np.pi * u2)
