"""Shared finite-difference gradient checking over the full render pipeline.

Builds a deliberately tiny one-box scene (well under a thousand parameters)
in float64 and compares reverse-mode gradients of a linear image functional
against central finite differences, coordinate by coordinate.
"""

import numpy as np
import torch

from componerf.encoding import HashGridConfig
from componerf.fields import CompositionConfig, LocalFieldConfig
from componerf.layout import Box3, Layout
from componerf.optim import RenderTape, backward_from_image_grad
from componerf.rendering import Camera, generate_rays, render_views
from componerf.scene import SceneConfig, SceneModel

MICRO_HASH = HashGridConfig(levels=2, features_per_level=2, coarsest=2, finest=4, table_size=16)


def micro_scene():
    """One-box float64 scene small enough for exhaustive finite differences.

    Calibrator and head output layers are nudged off their zero init so the
    composition path actually shapes the image and its parameters carry
    nonzero gradients.
    """
    layout = Layout(
        global_prompt="a pebble",
        boxes=(Box3("pebble", (0.0, 0.0, 0.0), (0.5, 0.5, 0.5), "a smooth pebble"),),
        seed=13,
    )
    config = SceneConfig.rgb(
        field=LocalFieldConfig(hash=MICRO_HASH, hidden=8, color_dim=3, squash_color=True),
        composition=CompositionConfig(
            mode="density", alpha_d=1.0, alpha_c=1.0, h_dim=7, depth=4, hidden=8, hash=MICRO_HASH
        ),
        n_per_box=4,
    )
    scene = SceneModel(layout, config).to_dtype(torch.float64)
    gen = torch.Generator().manual_seed(21)

    def nudge(linear):
        with torch.no_grad():
            linear.weight.add_(torch.randn(linear.weight.shape, generator=gen, dtype=torch.float64) * 0.05)
            linear.bias.add_(torch.randn(linear.bias.shape, generator=gen, dtype=torch.float64) * 0.05)

    nudge(scene.composition.density_mlp[-1])
    nudge(scene.composition.color_mlp[-1])
    return layout, scene


def micro_camera():
    return Camera(position=(1.1, 0.3, 0.4), fov_deg=50.0, resolution=(4, 4))


def render_functional(scene, layout, camera, cotangent, attached):
    """Scalar <cotangent, global image> over a float64 midpoint render."""
    rays = generate_rays(camera, dtype=torch.float64)
    context = torch.enable_grad() if attached else torch.no_grad()
    with context:
        views = render_views(
            scene, layout, camera, n_per_box=scene.n_per_box, which="global", rays=rays
        )
        image = views["global"].image
        value = (image * cotangent).sum()
    return image, value


def analytic_gradients(scene, layout, camera, cotangent):
    image, _ = render_functional(scene, layout, camera, cotangent, attached=True)
    tape = RenderTape(scene.parameters())
    return backward_from_image_grad(tape, image, cotangent)


def finite_difference_check(scene, layout, camera, cotangent, coords_per_param=4, h=1e-5, seed=9):
    """Max relative error between reverse-mode and central-difference gradients.

    Checks `coords_per_param` randomly chosen coordinates of every registered
    parameter tensor. Relative error uses a small floor so untouched
    coordinates (zero both ways) count as exact agreement.
    """
    grads = analytic_gradients(scene, layout, camera, cotangent)
    gen = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for name, param in scene.parameters().items():
        flat = param.detach().view(-1)
        n = flat.numel()
        coords = gen.choice(n, size=min(coords_per_param, n), replace=False)
        for idx in coords:
            idx = int(idx)
            keep = flat[idx].item()
            with torch.no_grad():
                flat[idx] = keep + h
            _, up = render_functional(scene, layout, camera, cotangent, attached=False)
            with torch.no_grad():
                flat[idx] = keep - h
            _, down = render_functional(scene, layout, camera, cotangent, attached=False)
            with torch.no_grad():
                flat[idx] = keep
            fd = (up.item() - down.item()) / (2.0 * h)
            an = grads[name].view(-1)[idx].item()
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            if rel > worst:
                worst = rel
            checked += 1
    return worst, checked
