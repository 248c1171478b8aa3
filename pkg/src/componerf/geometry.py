"""Ray geometry: intersection, sampling, frame transforms, depth merge.

All batched operations are pure tensor functions whose dtype follows the
inputs. Stratified jitter comes from counter-based streams keyed by
(seed, salt, pixel, box, sample), so batches are identical regardless of
chunking or parallelism.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import rng
from .layout import Box3, Layout

__all__ = [
    "Ray",
    "RayBundle",
    "HitInterval",
    "Sample",
    "SampleRng",
    "BoxSamples",
    "SampleBatch",
    "ray_box_intersect",
    "intersect_rays_box",
    "sample_interval",
    "to_local",
    "to_global",
    "local_direction",
    "segment_lengths",
    "build_sample_batch",
    "DELTA_CAP",
]

DELTA_CAP = 1e10

_JITTER_TAG = rng.tag("geometry/jitter")


@dataclass(frozen=True)
class Ray:
    """A single camera ray with pixel provenance."""

    origin: tuple[float, float, float]
    direction: tuple[float, float, float]
    pixel: tuple[int, int] = (0, 0)

    def __post_init__(self):
        norm = math.sqrt(sum(d * d for d in self.direction))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit norm, got |d| = {norm}")


@dataclass
class RayBundle:
    """Batched rays: origins [R,3], dirs [R,3], pixel_index [R] (int64)."""

    origins: torch.Tensor
    dirs: torch.Tensor
    pixel_index: torch.Tensor

    @staticmethod
    def from_rays(rays: list[Ray], dtype=torch.float32) -> "RayBundle":
        origins = torch.tensor([r.origin for r in rays], dtype=dtype)
        dirs = torch.tensor([r.direction for r in rays], dtype=dtype)
        # (row, col) folded into one provenance key for the jitter streams
        pixel_index = torch.tensor(
            [r.pixel[0] * 65536 + r.pixel[1] for r in rays], dtype=torch.int64
        )
        return RayBundle(origins, dirs, pixel_index)

    def __len__(self) -> int:
        return self.origins.shape[0]


@dataclass(frozen=True)
class HitInterval:
    """Clipped parametric interval of a ray inside one box."""

    node_id: str
    t_near: float
    t_far: float

    def __post_init__(self):
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError(
                f"hit interval must satisfy 0 <= t_near < t_far, got "
                f"({self.t_near}, {self.t_far})"
            )


@dataclass(frozen=True)
class Sample:
    """One point of a merged per-ray sample sequence (inspection view)."""

    t: float
    x_g: tuple[float, float, float]
    x_l: tuple[float, float, float]
    d_g: tuple[float, float, float]
    node_id: str
    delta: float


@dataclass(frozen=True)
class SampleRng:
    """Counter-stream spec for stratified jitter; salt is typically the step."""

    seed: int
    salt: int = 0


def intersect_rays_box(origins: torch.Tensor, dirs: torch.Tensor, box: Box3):
    """Slab test of a ray batch against one box.

    Returns (near [R], far [R], hit [R] bool) with near clipped at 0.
    Axis-parallel rays are handled by substituting a tiny denominator,
    which drives the unbounded slabs to +/-inf as the slab method needs.
    """
    dtype = origins.dtype
    center = torch.tensor(box.center, dtype=dtype)
    half = torch.tensor(box.half_extents, dtype=dtype)
    lo = center - half
    hi = center + half
    tiny = torch.tensor(1e-30, dtype=dtype)
    d_safe = torch.where(dirs.abs() < tiny, torch.where(dirs < 0, -tiny, tiny), dirs)
    t_a = (lo - origins) / d_safe
    t_b = (hi - origins) / d_safe
    t_lo = torch.minimum(t_a, t_b)
    t_hi = torch.maximum(t_a, t_b)
    near = t_lo.amax(dim=-1)
    far = t_hi.amin(dim=-1)
    hit = (far > near) & (far > 0)
    near = near.clamp_min(0.0)
    hit = hit & (far > near)
    return near, far, hit


def ray_box_intersect(ray: Ray, box: Box3) -> HitInterval | None:
    """Single-ray slab intersection; None when the ray misses (or only grazes)."""
    origins = torch.tensor([ray.origin], dtype=torch.float64)
    dirs = torch.tensor([ray.direction], dtype=torch.float64)
    near, far, hit = intersect_rays_box(origins, dirs, box)
    if not bool(hit[0]):
        return None
    return HitInterval(box.id, float(near[0]), float(far[0]))


def sample_interval(
    hit: HitInterval, n: int, stratified: bool = False, rand: np.random.Generator | None = None
) -> np.ndarray:
    """n sorted t values in [t_near, t_far].

    Deterministic mode places midpoints of n equal sub-intervals; stratified
    mode places one uniform draw per sub-interval.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if stratified:
        if rand is None:
            rand = np.random.default_rng(0)
        offsets = (np.arange(n) + rand.uniform(size=n)) / n
    else:
        offsets = (np.arange(n) + 0.5) / n
    return hit.t_near + (hit.t_far - hit.t_near) * offsets


def to_local(box: Box3, x_g: torch.Tensor) -> torch.Tensor:
    """Map global points [...,3] into the box frame: (x - center) / half_extents."""
    center = torch.tensor(box.center, dtype=x_g.dtype)
    half = torch.tensor(box.half_extents, dtype=x_g.dtype)
    return (x_g - center) / half


def to_global(box: Box3, x_l: torch.Tensor) -> torch.Tensor:
    center = torch.tensor(box.center, dtype=x_l.dtype)
    half = torch.tensor(box.half_extents, dtype=x_l.dtype)
    return x_l * half + center


def local_direction(box: Box3, d_g: torch.Tensor) -> torch.Tensor:
    """Box-frame unit direction: normalize(d_g / half_extents)."""
    half = torch.tensor(box.half_extents, dtype=d_g.dtype)
    d = d_g / half
    return d / d.norm(dim=-1, keepdim=True)


def segment_lengths(t: torch.Tensor, valid: torch.Tensor, cap: float = DELTA_CAP) -> torch.Tensor:
    """delta_k = t_{k+1} - t_k along dim 1; the last valid sample gets `cap`.

    Shared by the local and merged render paths so a single-box merged
    sequence reproduces the local deltas bitwise. Invalid slots get 0.
    """
    inf_col = torch.full_like(t[:, :1], math.inf)
    t_next = torch.cat([t[:, 1:], inf_col], dim=1)
    raw = t_next - t
    delta = torch.where(torch.isfinite(raw), raw, torch.full_like(raw, cap))
    return torch.where(valid, delta, torch.zeros_like(delta))


@dataclass
class BoxSamples:
    """Per-box sample rectangle: fixed n samples per ray, hit mask per ray."""

    node_id: str
    t: torch.Tensor  # [R, n]
    x_g: torch.Tensor  # [R, n, 3]
    x_l: torch.Tensor  # [R, n, 3]
    hit: torch.Tensor  # [R] bool
    delta: torch.Tensor  # [R, n] node-local segment lengths
    valid: torch.Tensor  # [R, n] bool (hit broadcast over samples)


@dataclass
class SampleBatch:
    """Per-box rectangles plus the depth-merged global sequence.

    Merged arrays are sorted by (t, node rank) with node rank assigned in
    lexicographic id order, so box order in the Layout never matters.
    """

    layout: Layout
    bundle: RayBundle
    node_order: list[str]
    per_box: dict[str, BoxSamples]
    t: torch.Tensor  # [R, K] merged, +inf at invalid slots
    x_g: torch.Tensor  # [R, K, 3]
    x_l: torch.Tensor  # [R, K, 3]
    rank: torch.Tensor  # [R, K] int64 node rank
    valid: torch.Tensor  # [R, K] bool
    delta: torch.Tensor  # [R, K]
    sort_idx: torch.Tensor  # [R, K] gather index from concat layout to merged order
    n_per_box: int

    def ray_samples(self, r: int) -> list[Sample]:
        """Materialize the merged sample list of ray r (ordered, valid only)."""
        out = []
        d_g = tuple(float(v) for v in self.bundle.dirs[r])
        for k in range(self.t.shape[1]):
            if not bool(self.valid[r, k]):
                continue
            out.append(
                Sample(
                    t=float(self.t[r, k]),
                    x_g=tuple(float(v) for v in self.x_g[r, k]),
                    x_l=tuple(float(v) for v in self.x_l[r, k]),
                    d_g=d_g,
                    node_id=self.node_order[int(self.rank[r, k])],
                    delta=float(self.delta[r, k]),
                )
            )
        return out


def _stratum_offsets(
    n: int, pixel_index: torch.Tensor, box_id: str, sample_rng: SampleRng | None, dtype
) -> torch.Tensor:
    """[R, n] sample offsets in (0,1): midpoints, or one draw per stratum."""
    if sample_rng is None:
        off = (torch.arange(n, dtype=torch.float64) + 0.5) / n
        return off.to(dtype).expand(pixel_index.shape[0], n)
    u = rng.uniform(
        sample_rng.seed,
        _JITTER_TAG,
        sample_rng.salt,
        pixel_index.numpy()[:, None],
        rng.tag("box/" + box_id),
        np.arange(n)[None, :],
    )
    off = (np.arange(n)[None, :] + u) / n
    return torch.from_numpy(off).to(dtype)


def build_sample_batch(
    layout: Layout,
    rays: RayBundle | list[Ray],
    n_per_box: int,
    sample_rng: SampleRng | None = None,
    cap: float = DELTA_CAP,
) -> SampleBatch:
    """Intersect every box, sample each hit interval, merge by depth.

    Ties in t are broken by node rank (lexicographic id), and delta is
    measured in the merged sequence: delta_k = t_{k+1} - t_k with the final
    sample of each ray capped. Rays hitting nothing get all-invalid slots.
    """
    if isinstance(rays, list):
        rays = RayBundle.from_rays(rays)
    origins, dirs = rays.origins, rays.dirs
    dtype = origins.dtype
    R = origins.shape[0]
    node_order = sorted(box.id for box in layout.boxes)
    boxes = {box.id: box for box in layout.boxes}

    per_box: dict[str, BoxSamples] = {}
    t_parts, xg_parts, xl_parts, rank_parts, valid_parts = [], [], [], [], []
    for rank_i, node_id in enumerate(node_order):
        box = boxes[node_id]
        near, far, hit = intersect_rays_box(origins, dirs, box)
        near = torch.where(hit, near, torch.zeros_like(near))
        far = torch.where(hit, far, torch.zeros_like(far))
        off = _stratum_offsets(n_per_box, rays.pixel_index, node_id, sample_rng, dtype)
        t = near[:, None] + (far - near)[:, None] * off
        x_g = origins[:, None, :] + t[..., None] * dirs[:, None, :]
        x_l = to_local(box, x_g)
        valid = hit[:, None].expand(R, n_per_box)
        delta_local = segment_lengths(t, valid, cap)
        per_box[node_id] = BoxSamples(node_id, t, x_g, x_l, hit, delta_local, valid)
        t_parts.append(torch.where(valid, t, torch.full_like(t, math.inf)))
        xg_parts.append(x_g)
        xl_parts.append(x_l)
        rank_parts.append(torch.full((R, n_per_box), rank_i, dtype=torch.int64))
        valid_parts.append(valid)

    t_cat = torch.cat(t_parts, dim=1)
    # Concatenation follows node rank order, so a single stable sort on t
    # yields the (t, rank) lexicographic order the merge contract demands.
    t_sorted, sort_idx = torch.sort(t_cat, dim=1, stable=True)
    xg_sorted = torch.gather(torch.cat(xg_parts, dim=1), 1, sort_idx[..., None].expand(-1, -1, 3))
    xl_sorted = torch.gather(torch.cat(xl_parts, dim=1), 1, sort_idx[..., None].expand(-1, -1, 3))
    rank_sorted = torch.gather(torch.cat(rank_parts, dim=1), 1, sort_idx)
    valid_sorted = torch.gather(torch.cat(valid_parts, dim=1), 1, sort_idx)
    delta = segment_lengths(t_sorted, valid_sorted, cap)

    return SampleBatch(
        layout=layout,
        bundle=rays,
        node_order=node_order,
        per_box=per_box,
        t=t_sorted,
        x_g=xg_sorted,
        x_l=xl_sorted,
        rank=rank_sorted,
        valid=valid_sorted,
        delta=delta,
        sort_idx=sort_idx,
        n_per_box=n_per_box,
    )
