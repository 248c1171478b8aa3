"""Volume rendering of local and composited global views.

Local views accumulate one node's samples (its own segment lengths);
the global view accumulates the depth-merged, composition-calibrated
sequence. Both paths share composite_samples, so a single-box scene
with identity composition renders bitwise identically through either.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import rng
from .errors import ShapeMismatch
from .fields import compose_samples
from .geometry import RayBundle, SampleBatch, SampleRng, build_sample_batch
from .layout import Layout

__all__ = [
    "Camera",
    "ImageBuffer",
    "generate_rays",
    "sample_camera",
    "composite_samples",
    "render_ray_local",
    "render_ray_global",
    "eval_node_fields",
    "render_local_view",
    "render_global_view",
    "render_views",
    "render_image",
    "psnr",
    "TRAIN_RESOLUTION",
    "TEST_RESOLUTION",
]

TRAIN_RESOLUTION = 64
TEST_RESOLUTION = 128

_CAMERA_TAG = rng.tag("camera/train")


@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking at a target, up = +z, half-pixel centers."""

    position: tuple[float, float, float]
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fov_deg: float = 60.0
    resolution: tuple[int, int] = (TRAIN_RESOLUTION, TRAIN_RESOLUTION)
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.fov_deg < 180.0):
            raise ValueError(f"fov must be in (0, 180), got {self.fov_deg}")

    @staticmethod
    def from_orbit(
        azimuth_deg: float,
        elevation_deg: float,
        radius: float = 1.25,
        fov_deg: float = 60.0,
        resolution: tuple[int, int] = (TRAIN_RESOLUTION, TRAIN_RESOLUTION),
    ) -> "Camera":
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        position = (
            radius * math.cos(el) * math.cos(az),
            radius * math.cos(el) * math.sin(az),
            radius * math.sin(el),
        )
        return Camera(position, (0.0, 0.0, 0.0), fov_deg, resolution, azimuth_deg, elevation_deg)


@dataclass
class ImageBuffer:
    """Rendered pixels [H,W,c] plus the accumulated weight map [H,W]."""

    pixels: torch.Tensor
    weight_sum: torch.Tensor
    tag: str = "global"


def generate_rays(camera: Camera, dtype=torch.float32) -> RayBundle:
    """One ray per pixel through half-pixel centers; row 0 is the top of the image."""
    H, W = camera.resolution
    position = torch.tensor(camera.position, dtype=torch.float64)
    target = torch.tensor(camera.target, dtype=torch.float64)
    forward = target - position
    forward = forward / forward.norm()
    up_world = torch.tensor((0.0, 0.0, 1.0), dtype=torch.float64)
    if float(forward.dot(up_world).abs()) > 0.999:
        up_world = torch.tensor((1.0, 0.0, 0.0), dtype=torch.float64)
    right = torch.linalg.cross(forward, up_world)
    right = right / right.norm()
    up = torch.linalg.cross(right, forward)

    tan_half = math.tan(math.radians(camera.fov_deg) / 2.0)
    rows = torch.arange(H, dtype=torch.float64)
    cols = torch.arange(W, dtype=torch.float64)
    v = (1.0 - 2.0 * (rows + 0.5) / H) * tan_half  # top row points up
    u = (2.0 * (cols + 0.5) / W - 1.0) * tan_half * (W / H)
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    dirs = forward + uu[..., None] * right + vv[..., None] * up
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    dirs = dirs.reshape(-1, 3).to(dtype)
    origins = position.to(dtype).expand_as(dirs).contiguous()
    pixel_index = torch.arange(H * W, dtype=torch.int64)
    return RayBundle(origins, dirs, pixel_index)


def sample_camera(seed: int, step: int, phase: str = "train") -> Camera:
    """Training pose: radius U[1.0,1.5], area-uniform upper hemisphere, fov U[40,70].

    Test phase fixes fov at 60. Draws come from the (seed, step) counter
    stream, so pose sequences are reproducible and parallelism-independent.
    """
    u = [rng.uniform_scalar(seed, _CAMERA_TAG, step, dim) for dim in range(4)]
    radius = 1.0 + 0.5 * u[0]
    azimuth = 360.0 * u[1] - 180.0
    elevation = math.degrees(math.asin(u[2]))
    fov = 40.0 + 30.0 * u[3] if phase == "train" else 60.0
    return Camera.from_orbit(azimuth, elevation, radius, fov)


def composite_samples(
    sigma: torch.Tensor,
    color: torch.Tensor,
    delta: torch.Tensor,
    valid: torch.Tensor,
    background: torch.Tensor,
):
    """Transmittance-weighted accumulation along dim 1.

    Returns (pixels [R,c], weight_sum [R], weights [R,K], transmittance [R,K]).
    Invalid slots contribute nothing; leftover transmittance lands on the
    background color.
    """
    sd = torch.where(valid, sigma * delta, torch.zeros_like(sigma))
    accum = torch.cumsum(sd, dim=1)
    t_prefix = torch.exp(-torch.cat([torch.zeros_like(accum[:, :1]), accum[:, :-1]], dim=1))
    alpha = -torch.expm1(-sd)
    weights = t_prefix * alpha
    pixels = (weights.unsqueeze(-1) * color).sum(dim=1)
    t_final = torch.exp(-accum[:, -1])
    pixels = pixels + t_final.unsqueeze(-1) * background
    return pixels, weights.sum(dim=1), weights, t_prefix


def render_ray_local(samples: list[tuple[float, float, list[float]]], background=None):
    """Reference per-ray accumulation over (sigma, delta, color) triples.

    Thin scalar wrapper over the batched kernel, kept for worked examples
    and scalar test cases.
    """
    if not samples:
        c = len(background) if background is not None else 1
        bg = torch.tensor(background, dtype=torch.float64) if background is not None else torch.zeros(c, dtype=torch.float64)
        return bg.clone(), 0.0
    sigma = torch.tensor([[s for s, _, _ in samples]], dtype=torch.float64)
    delta = torch.tensor([[d for _, d, _ in samples]], dtype=torch.float64)
    color = torch.tensor([[c for _, _, c in samples]], dtype=torch.float64)
    bg = (
        torch.tensor(background, dtype=torch.float64)
        if background is not None
        else torch.zeros(color.shape[-1], dtype=torch.float64)
    )
    valid = torch.ones_like(sigma, dtype=torch.bool)
    pixels, wsum, _, _ = composite_samples(sigma, color, delta, valid, bg)
    return pixels[0], float(wsum[0])


render_ray_global = render_ray_local  # identical accumulation, merged sequence in


def eval_node_fields(scene, batch: SampleBatch) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
    """Evaluate each node's field on its own sample rectangle (hit rays only).

    Rays that miss a box never touch its field, so gradient locality holds
    by construction.
    """
    out = {}
    for node_id in batch.node_order:
        samples = batch.per_box[node_id]
        R, n = samples.t.shape
        dtype = samples.t.dtype
        sigma = torch.zeros(R, n, dtype=dtype)
        color = torch.zeros(R, n, scene.color_dim, dtype=dtype)
        hit_idx = samples.hit.nonzero(as_tuple=True)[0]
        if hit_idx.numel() > 0:
            s, c = scene.nodes[node_id](samples.x_l[hit_idx])
            sigma = torch.index_put(sigma, (hit_idx,), s)
            color = torch.index_put(color, (hit_idx,), c)
        out[node_id] = (sigma, color)
    return out


def render_local_view(
    batch: SampleBatch,
    node_id: str,
    evals: dict[str, tuple[torch.Tensor, torch.Tensor]],
    background: torch.Tensor,
):
    """Accumulate one node's samples with its node-local segment lengths."""
    samples = batch.per_box[node_id]
    sigma, color = evals[node_id]
    return composite_samples(sigma, color, samples.delta, samples.valid, background)


def render_global_view(
    scene,
    batch: SampleBatch,
    evals: dict[str, tuple[torch.Tensor, torch.Tensor]],
    background: torch.Tensor,
):
    """Calibrate merged samples through the composition module and accumulate."""
    sigma_cat = torch.cat([evals[i][0] for i in batch.node_order], dim=1)
    color_cat = torch.cat([evals[i][1] for i in batch.node_order], dim=1)
    K = sigma_cat.shape[1]
    sigma_sorted = torch.gather(sigma_cat, 1, batch.sort_idx)
    color_sorted = torch.gather(
        color_cat, 1, batch.sort_idx[..., None].expand(-1, -1, scene.color_dim)
    )
    comp = scene.composition
    cfg = comp.config
    if cfg.mode == "density" and cfg.alpha_d == 0.0 and cfg.alpha_c == 0.0:
        sigma_g, color_g = sigma_sorted, color_sorted
    else:
        valid = batch.valid
        d_exp = batch.bundle.dirs[:, None, :].expand(-1, K, -1)
        sigma_flat, color_flat = compose_samples(
            comp, batch.x_g[valid], d_exp[valid], sigma_sorted[valid], color_sorted[valid]
        )
        sigma_g = torch.zeros_like(sigma_sorted).masked_scatter(valid, sigma_flat)
        color_g = torch.zeros_like(color_sorted).masked_scatter(
            valid.unsqueeze(-1).expand_as(color_sorted), color_flat
        )
    return composite_samples(sigma_g, color_g, batch.delta, batch.valid, background)


@dataclass
class ViewRender:
    """Graph-attached render of one view."""

    image: torch.Tensor  # [R, c] flat pixels
    weight_sum: torch.Tensor  # [R]
    weights: torch.Tensor  # [R, K] per-sample weights
    valid: torch.Tensor  # [R, K] bool, True where a weight is a real sample
    tag: str


def render_views(
    scene,
    layout: Layout,
    camera: Camera,
    *,
    n_per_box: int,
    sample_rng: SampleRng | None = None,
    which: str = "all",  # "all" | "global" | "local:<id>"
    background: torch.Tensor | None = None,
    rays: RayBundle | None = None,
) -> dict[str, ViewRender]:
    """Render the global view and/or local views over one camera's rays.

    Field evaluations are shared between all requested views, matching the
    training loop's single forward pass per step.
    """
    if rays is None:
        rays = generate_rays(camera)
    bg = scene.background_tensor(rays.origins.dtype) if background is None else background
    batch = build_sample_batch(layout, rays, n_per_box, sample_rng)
    evals = eval_node_fields(scene, batch)
    out: dict[str, ViewRender] = {}
    want_global = which in ("all", "global")
    local_ids = (
        batch.node_order
        if which == "all"
        else [which.split(":", 1)[1]]
        if which.startswith("local:")
        else []
    )
    for node_id in local_ids:
        pixels, wsum, weights, _ = render_local_view(batch, node_id, evals, bg)
        out[f"local:{node_id}"] = ViewRender(
            pixels, wsum, weights, batch.per_box[node_id].valid, f"local:{node_id}"
        )
    if want_global:
        pixels, wsum, weights, _ = render_global_view(scene, batch, evals, bg)
        out["global"] = ViewRender(pixels, wsum, weights, batch.valid, "global")
    return out


def render_image(
    scene,
    layout: Layout,
    camera: Camera,
    mode: str = "global",
    *,
    n_per_box: int | None = None,
    background: torch.Tensor | None = None,
    chunk_rays: int = 4096,
) -> ImageBuffer:
    """Deterministic (midpoint-sampled) inference render, chunked over rays."""
    H, W = camera.resolution
    n = n_per_box if n_per_box is not None else scene.n_per_box
    rays = generate_rays(camera)
    parts_pix, parts_w = [], []
    with torch.no_grad():
        for start in range(0, len(rays), chunk_rays):
            sub = RayBundle(
                rays.origins[start : start + chunk_rays],
                rays.dirs[start : start + chunk_rays],
                rays.pixel_index[start : start + chunk_rays],
            )
            views = render_views(
                scene, layout, camera, n_per_box=n, which=mode,
                background=background, rays=sub,
            )
            key = mode if mode != "all" else "global"
            view = views[key]
            parts_pix.append(view.image)
            parts_w.append(view.weight_sum)
    pixels = torch.cat(parts_pix, dim=0).reshape(H, W, scene.color_dim)
    weight_sum = torch.cat(parts_w, dim=0).reshape(H, W)
    tag = mode if mode != "all" else "global"
    return ImageBuffer(pixels=pixels, weight_sum=weight_sum, tag=tag)


def psnr(image: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB."""
    if image.shape != reference.shape:
        raise ShapeMismatch(f"psnr shapes differ: {image.shape} vs {reference.shape}")
    mse = float(np.mean((np.asarray(image, dtype=np.float64) - reference) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
