"""Analytic reference scenes and an independent ray-march integrator.

The integrator is pure numpy, marches a fixed number of uniform steps
through each ray's box-union interval with its own inline slab test, and
shares no code with the renderer's sampling/merge/composite path. It
serves as the ground truth for renderer equivalence tests and as the
target generator for mock photometric guidance.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .layout import Box3, Layout
from .rendering import Camera, generate_rays

__all__ = [
    "SphereSpec",
    "AnalyticScene",
    "AnalyticSphereField",
    "march",
    "reference_render",
    "two_sphere_fixture",
    "scene_to_json",
    "scene_from_json",
]


@dataclass(frozen=True)
class SphereSpec:
    """A sphere of constant (or smoothstep-edged) density and constant color."""

    node_id: str
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, ...]
    density: float
    edge: float = 0.0  # 0: hard boundary; > 0: smoothstep ramp of this width


@dataclass(frozen=True)
class AnalyticScene:
    spheres: tuple[SphereSpec, ...]
    background: tuple[float, ...]

    @property
    def color_dim(self) -> int:
        return len(self.background)

    def restrict(self, node_ids) -> "AnalyticScene":
        keep = tuple(s for s in self.spheres if s.node_id in set(node_ids))
        return replace(self, spheres=keep)

    def sigma_color(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Density [N] and density-blended color [N,c] at points [N,3]."""
        total = np.zeros(x.shape[0])
        color = np.zeros((x.shape[0], self.color_dim))
        for s in self.spheres:
            d = np.linalg.norm(x - np.asarray(s.center), axis=-1)
            if s.edge > 0.0:
                u = np.clip((s.radius - d) / s.edge, 0.0, 1.0)
                sig = s.density * u * u * (3.0 - 2.0 * u)
            else:
                sig = np.where(d <= s.radius, s.density, 0.0)
            total += sig
            color += sig[:, None] * np.asarray(s.color)
        color = color / np.maximum(total, 1e-30)[:, None]
        return total, color


class AnalyticSphereField(nn.Module):
    """Engine-side adapter: evaluates a node's spheres at box-local points.

    Parameter-free, so it never appears in the trainable registry; used by
    fixtures that need exact, known fields inside the real render path.
    """

    def __init__(self, box: Box3, scene: AnalyticScene):
        super().__init__()
        self.box = box
        self.scene = scene.restrict([box.id])

    def forward(self, x_l: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        center = torch.tensor(self.box.center, dtype=x_l.dtype)
        half = torch.tensor(self.box.half_extents, dtype=x_l.dtype)
        x_g = x_l * half + center
        sigma = torch.zeros(x_l.shape[:-1], dtype=x_l.dtype)
        color = torch.zeros(*x_l.shape[:-1], self.scene.color_dim, dtype=x_l.dtype)
        total = torch.zeros_like(sigma)
        for s in self.scene.spheres:
            d = (x_g - torch.tensor(s.center, dtype=x_l.dtype)).norm(dim=-1)
            if s.edge > 0.0:
                u = ((s.radius - d) / s.edge).clamp(0.0, 1.0)
                sig = s.density * u * u * (3.0 - 2.0 * u)
            else:
                sig = torch.where(d <= s.radius, torch.full_like(d, s.density), torch.zeros_like(d))
            sigma = sigma + sig
            total = total + sig
            color = color + sig[..., None] * torch.tensor(s.color, dtype=x_l.dtype)
        color = color / total.clamp_min(1e-30)[..., None]
        return sigma, color


def _slab_union(origins: np.ndarray, dirs: np.ndarray, layout: Layout):
    """Per-ray union interval over all boxes, via an inline slab test.

    Returns (t0 [R], t1 [R], hit [R]); deliberately independent of the
    geometry module.
    """
    R = origins.shape[0]
    t0 = np.full(R, np.inf)
    t1 = np.full(R, -np.inf)
    hit_any = np.zeros(R, dtype=bool)
    for box in layout.boxes:
        lo = np.asarray(box.center) - np.asarray(box.half_extents)
        hi = np.asarray(box.center) + np.asarray(box.half_extents)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / np.where(np.abs(dirs) < 1e-30, 1e-30, dirs)
        ta = (lo - origins) * inv
        tb = (hi - origins) * inv
        near = np.minimum(ta, tb).max(axis=-1)
        far = np.maximum(ta, tb).min(axis=-1)
        near = np.maximum(near, 0.0)
        hit = far > near
        t0 = np.where(hit, np.minimum(t0, near), t0)
        t1 = np.where(hit, np.maximum(t1, far), t1)
        hit_any |= hit
    return t0, t1, hit_any


def march(
    scene: AnalyticScene,
    origins: np.ndarray,
    dirs: np.ndarray,
    t0: np.ndarray,
    t1: np.ndarray,
    steps: int,
) -> np.ndarray:
    """Uniform midpoint ray march with transmittance accumulation; float64.

    Rays are processed in chunks sized so the [rays, steps] work arrays stay
    small; within a chunk the exclusive optical-depth prefix replaces the
    sequential transmittance product.
    """
    R = origins.shape[0]
    acc = np.zeros((R, scene.color_dim))
    chunk = max(1, 2_000_000 // steps)
    k_mid = np.arange(steps) + 0.5
    for start in range(0, R, chunk):
        sl = slice(start, min(start + chunk, R))
        delta = (t1[sl] - t0[sl]) / steps  # [r]
        t = t0[sl, None] + k_mid[None, :] * delta[:, None]  # [r, steps]
        x = origins[sl, None, :] + t[..., None] * dirs[sl, None, :]
        sigma, color = scene.sigma_color(x.reshape(-1, 3))
        sigma = sigma.reshape(t.shape)
        color = color.reshape(t.shape + (scene.color_dim,))
        sd = sigma * delta[:, None]
        depth = np.cumsum(sd, axis=1)
        trans = np.exp(-(depth - sd))  # exclusive prefix
        weights = trans * -np.expm1(-sd)
        acc[sl] = (weights[..., None] * color).sum(axis=1)
        acc[sl] += np.exp(-depth[:, -1])[:, None] * np.asarray(scene.background)
    return acc


def reference_render(
    scene: AnalyticScene, layout: Layout, camera: Camera, steps: int = 10_000
) -> np.ndarray:
    """Reference image [H,W,c] float64 for an analytic scene."""
    H, W = camera.resolution
    rays = generate_rays(camera, dtype=torch.float64)
    origins = rays.origins.numpy()
    dirs = rays.dirs.numpy()
    t0, t1, hit = _slab_union(origins, dirs, layout)
    image = np.tile(np.asarray(scene.background, dtype=np.float64), (H * W, 1))
    if hit.any():
        idx = np.nonzero(hit)[0]
        image[idx] = march(scene, origins[idx], dirs[idx], t0[idx], t1[idx], steps)
    return image.reshape(H, W, scene.color_dim)


def two_sphere_fixture(hard: bool = True, color_dim: int = 3):
    """Canonical two-box, two-sphere test scene.

    Boxes overlap in a thin slab around x = 0, but the spheres stay clear
    of it: inside the overlap both nodes' samples interleave, which halves
    the effective density either node contributes there (a property of
    merged-sequence segment lengths), so reference fixtures keep density
    out of shared space.
    """
    background = tuple([0.0] * color_dim)
    boxes = (
        Box3("left", (-0.32, 0.0, 0.0), (0.34, 0.34, 0.34), "a matte red sphere"),
        Box3("right", (0.32, 0.0, 0.0), (0.34, 0.34, 0.34), "a glossy blue sphere"),
    )
    layout = Layout(
        global_prompt="a red sphere beside a blue sphere", boxes=boxes, seed=7
    )
    edge = 0.0 if hard else 0.10
    colors = {
        "left": (0.85, 0.25, 0.20),
        "right": (0.20, 0.45, 0.90),
    }
    spheres = tuple(
        SphereSpec(
            node_id=b.id,
            center=b.center,
            radius=0.24,
            color=tuple(list(colors[b.id])[:color_dim] + [0.0] * max(0, color_dim - 3)),
            density=6.0 if hard else 14.0,
            edge=edge,
        )
        for b in boxes
    )
    return layout, AnalyticScene(spheres=spheres, background=background)


def scene_to_json(scene: AnalyticScene) -> str:
    doc = {
        "background": list(scene.background),
        "spheres": [
            {
                "node_id": s.node_id,
                "center": list(s.center),
                "radius": s.radius,
                "color": list(s.color),
                "density": s.density,
                "edge": s.edge,
            }
            for s in scene.spheres
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def scene_from_json(text: str) -> AnalyticScene:
    doc = json.loads(text)
    spheres = tuple(
        SphereSpec(
            node_id=str(s["node_id"]),
            center=tuple(float(v) for v in s["center"]),
            radius=float(s["radius"]),
            color=tuple(float(v) for v in s["color"]),
            density=float(s["density"]),
            edge=float(s.get("edge", 0.0)),
        )
        for s in doc["spheres"]
    )
    return AnalyticScene(spheres=spheres, background=tuple(float(v) for v in doc["background"]))
