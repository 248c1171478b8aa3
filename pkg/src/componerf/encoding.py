"""Input encodings: multiresolution hash grid and SH direction basis.

The hash grid follows the usual multiresolution scheme: L levels with
geometrically growing resolution between the coarsest and finest grids,
each level holding a power-of-two table of F-dimensional features that
vertices index through a spatial hash
    index = (ix * 1  ^  iy * 2654435761  ^  iz * 805459861)  &  (T - 1)
and features are trilinearly interpolated inside the enclosing cell.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import rng

__all__ = [
    "HashGridConfig",
    "level_resolutions",
    "init_hash_table",
    "hash_encode",
    "sh_encode",
    "SH_DIM",
]

_PRIMES = (1, 2654435761, 805459861)

_CORNERS = torch.tensor(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=torch.int64
)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 8
    features_per_level: int = 2
    coarsest: int = 16
    finest: int = 128
    table_size: int = 2**13

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not (self.finest >= self.coarsest >= 2):
            raise ValueError("need finest >= coarsest >= 2")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError("table_size must be a power of two")

    @property
    def out_dim(self) -> int:
        return self.levels * self.features_per_level


def level_resolutions(cfg: HashGridConfig) -> list[int]:
    """Per-level grid resolution, growing geometrically from coarsest to finest."""
    if cfg.levels == 1:
        return [cfg.coarsest]
    b = math.exp((math.log(cfg.finest) - math.log(cfg.coarsest)) / (cfg.levels - 1))
    return [int(round(cfg.coarsest * b**i)) for i in range(cfg.levels)]


def init_hash_table(cfg: HashGridConfig, seed: int, name: str, dtype=torch.float32) -> torch.Tensor:
    """[L, T, F] table with small uniform entries from the (seed, name) stream."""
    shape = (cfg.levels, cfg.table_size, cfg.features_per_level)
    u = rng.uniform(seed, rng.tag("init/" + name), np.arange(math.prod(shape)))
    table = (torch.from_numpy(u).reshape(shape) * 2.0 - 1.0) * 1e-4
    return table.to(dtype)


def _hash_vertices(ijk: torch.Tensor, table_size: int) -> torch.Tensor:
    """Spatial hash of integer vertices [..., 3] into [0, table_size)."""
    h = ijk[..., 0] * _PRIMES[0] ^ ijk[..., 1] * _PRIMES[1] ^ ijk[..., 2] * _PRIMES[2]
    return h & (table_size - 1)


def hash_encode(x: torch.Tensor, cfg: HashGridConfig, table: torch.Tensor) -> torch.Tensor:
    """Encode points [..., 3] in [-1,1]^3 into features [..., L*F].

    Points beyond the domain are clamped. A point exactly on a grid vertex
    reproduces that vertex's stored feature exactly.
    """
    u = ((x + 1.0) * 0.5).clamp(0.0, 1.0)
    feats = []
    corners = _CORNERS.to(x.device)
    for level, res in enumerate(level_resolutions(cfg)):
        pos = u * res
        cell = pos.floor().long().clamp_(0, res - 1)
        frac = pos - cell.to(pos.dtype)
        ijk = cell.unsqueeze(-2) + corners  # [..., 8, 3]
        idx = _hash_vertices(ijk, cfg.table_size)  # [..., 8]
        vertex_feats = table[level][idx]  # [..., 8, F]
        d = corners.to(pos.dtype)  # [8, 3]
        f = frac.unsqueeze(-2)  # [..., 1, 3]
        weights = (d * f + (1.0 - d) * (1.0 - f)).prod(dim=-1)  # [..., 8]
        feats.append((weights.unsqueeze(-1) * vertex_feats).sum(dim=-2))
    return torch.cat(feats, dim=-1)


SH_DIM = 16


def sh_encode(d: torch.Tensor) -> torch.Tensor:
    """Degree-4 real spherical-harmonic basis of unit directions [..., 3] -> [..., 16]."""
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    return torch.stack(
        [
            torch.full_like(x, 0.28209479177387814),
            -0.48860251190291987 * y,
            0.48860251190291987 * z,
            -0.48860251190291987 * x,
            1.0925484305920792 * xy,
            -1.0925484305920792 * yz,
            0.94617469575755997 * zz - 0.31539156525251999,
            -1.0925484305920792 * xz,
            0.5462742152960396 * (xx - yy),
            -0.5900435899266435 * y * (3.0 * xx - yy),
            2.890611442640554 * xy * z,
            -0.4570457994644658 * y * (4.0 * zz - xx - yy),
            0.3731763325901154 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            -0.4570457994644658 * x * (4.0 * zz - xx - yy),
            1.445305721320277 * z * (xx - yy),
            -0.5900435899266435 * x * (xx - 3.0 * yy),
        ],
        dim=-1,
    )
