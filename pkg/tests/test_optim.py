"""Tests for gradient plumbing, loss assembly, and the Adam step."""

import math

import pytest
import torch

import gradcheck_util
from componerf.errors import RegistryMismatch, ShapeMismatch
from componerf.optim import (
    AdamState,
    LossWeights,
    RenderTape,
    adam_step,
    assemble_total_gradient,
    backward_from_image_grad,
    sparsity_loss,
)
from componerf.rendering import Camera, generate_rays, render_views


def micro_net_params(seed=0):
    gen = torch.Generator().manual_seed(seed)
    return {
        name: torch.randn((), generator=gen, dtype=torch.float64, requires_grad=True)
        for name in ("a", "b", "c", "d")
    }


def micro_net_image(params, x):
    return params["d"] * torch.tanh(params["a"] * x + params["b"]) + params["c"]


class TestBackwardFromImageGrad:
    def test_zero_cotangent_zero_grads(self):
        params = micro_net_params()
        x = torch.linspace(-1.0, 1.0, 9, dtype=torch.float64).reshape(3, 3)
        image = micro_net_image(params, x)
        grads = backward_from_image_grad(RenderTape(params), image, torch.zeros_like(image))
        for g in grads.values():
            assert torch.all(g == 0.0)

    def test_photometric_matches_scalar_backward(self):
        """grad_image = image - target reproduces 0.5*||image - target||^2 backward."""
        params = micro_net_params(3)
        x = torch.linspace(-1.0, 1.0, 9, dtype=torch.float64).reshape(3, 3)
        target = torch.full((3, 3), 0.2, dtype=torch.float64)

        image = micro_net_image(params, x)
        via_cotangent = backward_from_image_grad(
            RenderTape(params), image, (image - target).detach()
        )

        image2 = micro_net_image(params, x)
        loss = 0.5 * ((image2 - target) ** 2).sum()
        direct = torch.autograd.grad(loss, list(params.values()))
        for name, g in zip(params, direct):
            assert torch.equal(via_cotangent[name], g)

    def test_shape_mismatch(self):
        params = micro_net_params()
        x = torch.zeros(3, 3, dtype=torch.float64)
        image = micro_net_image(params, x)
        with pytest.raises(ShapeMismatch):
            backward_from_image_grad(RenderTape(params), image, torch.zeros(2, 2))

    def test_unused_parameter_gets_zeros(self):
        params = micro_net_params()
        params["unused"] = torch.randn((), dtype=torch.float64, requires_grad=True)
        x = torch.zeros(2, 2, dtype=torch.float64)
        image = micro_net_image({k: params[k] for k in "abcd"}, x)
        grads = backward_from_image_grad(RenderTape(params), image, torch.ones_like(image))
        assert torch.all(grads["unused"] == 0.0)
        assert grads["unused"].shape == params["unused"].shape

    def test_micro_net_finite_differences(self):
        """Four-parameter net: reverse mode vs central differences, rel err < 1e-5."""
        params = micro_net_params(7)
        x = torch.linspace(-1.2, 0.8, 16, dtype=torch.float64).reshape(4, 4)
        cot = torch.randn(4, 4, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
        image = micro_net_image(params, x)
        grads = backward_from_image_grad(RenderTape(params), image, cot)
        h = 1e-4
        for name in params:
            keep = params[name].item()
            with torch.no_grad():
                params[name].fill_(keep + h)
                up = (micro_net_image(params, x) * cot).sum().item()
                params[name].fill_(keep - h)
                down = (micro_net_image(params, x) * cot).sum().item()
                params[name].fill_(keep)
            fd = (up - down) / (2.0 * h)
            an = grads[name].item()
            assert abs(an - fd) / max(abs(an), abs(fd), 1e-6) < 1e-5


class TestSparsityLoss:
    def test_entropy_maximum_at_half(self):
        w = torch.full((1000,), 0.5, dtype=torch.float64)
        assert abs(sparsity_loss(w).item() - math.log(2.0)) < 1e-9

    def test_transparent_rays_near_zero(self):
        w = torch.zeros(1000, dtype=torch.float64)
        assert sparsity_loss(w).item() < 2e-4

    def test_opaque_rays_near_zero(self):
        w = torch.ones(1000, dtype=torch.float64)
        assert sparsity_loss(w).item() < 2e-4

    def test_binary_mix_near_zero(self):
        w = torch.tensor([0.0, 1.0] * 500, dtype=torch.float64)
        assert sparsity_loss(w).item() < 2e-4

    def test_half_is_the_maximum(self):
        half = sparsity_loss(torch.tensor([0.5], dtype=torch.float64))
        for w in (0.1, 0.3, 0.45, 0.55, 0.7, 0.9):
            assert sparsity_loss(torch.tensor([w], dtype=torch.float64)) < half

    def test_gradient_pushes_toward_binary(self):
        """sign(dH/dw) = sign(0.5 - w) inside the clamp region."""
        for w0, sign in ((0.2, 1.0), (0.49, 1.0), (0.51, -1.0), (0.8, -1.0)):
            w = torch.tensor([w0], dtype=torch.float64, requires_grad=True)
            sparsity_loss(w).backward()
            assert math.copysign(1.0, w.grad.item()) == sign


class TestAssembleTotalGradient:
    @staticmethod
    def make_grads(values):
        return {name: torch.tensor([v], dtype=torch.float64) for name, v in values.items()}

    def test_weighted_sum_formula(self):
        g = self.make_grads({"p": 1.0, "q": -2.0})
        locals_ = {"a": self.make_grads({"p": 0.5, "q": 0.0}), "b": self.make_grads({"p": 0.0, "q": 3.0})}
        s = self.make_grads({"p": 10.0, "q": 20.0})
        w = LossWeights(alpha_global=2.0, alpha_local=3.0, beta=0.1)
        total = assemble_total_gradient(g, locals_, s, w)
        assert total["p"].item() == pytest.approx(2.0 * 1.0 + 3.0 * 0.5 + 0.1 * 10.0)
        assert total["q"].item() == pytest.approx(2.0 * -2.0 + 3.0 * 3.0 + 0.1 * 20.0)

    def test_global_only(self):
        g = self.make_grads({"p": 4.0})
        s = self.make_grads({"p": 9.0})
        w = LossWeights(alpha_global=100.0, alpha_local=0.0, beta=0.0)
        total = assemble_total_gradient(g, {"n": self.make_grads({"p": 7.0})}, s, w)
        assert total["p"].item() == pytest.approx(400.0)

    def test_all_zero_inputs(self):
        zeros = self.make_grads({"p": 0.0})
        total = assemble_total_gradient(zeros, {"n": zeros}, zeros, LossWeights())
        assert torch.all(total["p"] == 0.0)

    def test_registry_mismatch_local(self):
        g = self.make_grads({"p": 1.0, "q": 1.0})
        bad_local = {"n": self.make_grads({"p": 1.0})}
        with pytest.raises(RegistryMismatch):
            assemble_total_gradient(g, bad_local, g, LossWeights())

    def test_registry_mismatch_sparsity(self):
        g = self.make_grads({"p": 1.0})
        extra = self.make_grads({"p": 1.0, "zzz": 1.0})
        with pytest.raises(RegistryMismatch):
            assemble_total_gradient(g, {}, extra, LossWeights())

    def test_defaults(self):
        w = LossWeights()
        assert (w.alpha_global, w.alpha_local, w.beta) == (100.0, 100.0, 5e-4)

    def test_matches_combined_scalar_backward(self):
        """Assembling per-view gradients equals one backward of the weighted scalar."""
        layout, scene = gradcheck_util.micro_scene()
        camera = gradcheck_util.micro_camera()
        rays = generate_rays(camera, dtype=torch.float64)
        weights = LossWeights(alpha_global=100.0, alpha_local=100.0, beta=5e-4)
        gen = torch.Generator().manual_seed(2)
        params = scene.parameters()
        names = list(params)

        views = render_views(scene, layout, camera, n_per_box=4, which="all", rays=rays)
        cots = {
            tag: torch.randn(view.image.shape, generator=gen, dtype=torch.float64)
            for tag, view in views.items()
        }
        local_tags = [t for t in views if t.startswith("local:")]
        local_weights = torch.cat([views[t].weights[views[t].valid] for t in local_tags])

        tape = RenderTape(params)
        global_grads = backward_from_image_grad(tape, views["global"].image, cots["global"])
        local_grads = {}
        for tag in local_tags:
            local_grads[tag.split(":", 1)[1]] = backward_from_image_grad(
                tape, views[tag].image, cots[tag]
            )
        sparse = sparsity_loss(local_weights)
        raw = torch.autograd.grad(sparse, list(params.values()), retain_graph=True, allow_unused=True)
        sparsity_grads = {
            n: torch.zeros_like(params[n]) if g is None else g for n, g in zip(names, raw)
        }
        assembled = assemble_total_gradient(global_grads, local_grads, sparsity_grads, weights)

        scalar = weights.alpha_global * (views["global"].image * cots["global"]).sum()
        for tag in local_tags:
            scalar = scalar + weights.alpha_local * (views[tag].image * cots[tag]).sum()
        scalar = scalar + weights.beta * sparse
        direct = torch.autograd.grad(scalar, list(params.values()), allow_unused=True)
        for name, g in zip(names, direct):
            want = torch.zeros_like(params[name]) if g is None else g
            assert torch.allclose(assembled[name], want, rtol=1e-9, atol=1e-12), name


class TestAdamStep:
    @staticmethod
    def one_param(value, grad):
        params = {"p": torch.tensor([value], dtype=torch.float64)}
        grads = {"p": torch.tensor([grad], dtype=torch.float64)}
        return params, grads

    def test_zero_grad_no_move(self):
        params, grads = self.one_param(1.5, 0.0)
        new_params, state = adam_step(params, grads, AdamState())
        assert torch.equal(new_params["p"], params["p"])
        assert state.step == 1

    def test_first_step_magnitude(self):
        """First bias-corrected step is -lr * g / (|g| + eps)."""
        params, grads = self.one_param(0.0, 0.3)
        state = AdamState(lr=1e-3)
        new_params, _ = adam_step(params, grads, state)
        want = -1e-3 * 0.3 / (0.3 + 1e-8)
        assert new_params["p"].item() == pytest.approx(want, rel=1e-12)

    def test_first_step_is_signed_lr(self):
        for g in (5.0, -2.0, 0.04):
            params, grads = self.one_param(0.0, g)
            new_params, _ = adam_step(params, grads, AdamState(lr=1e-3))
            assert new_params["p"].item() == pytest.approx(-1e-3 * math.copysign(1.0, g), rel=1e-6)

    def test_deterministic(self):
        params, grads = self.one_param(0.7, -0.2)
        a_params, a_state = adam_step(params, grads, AdamState())
        b_params, b_state = adam_step(params, grads, AdamState())
        assert torch.equal(a_params["p"], b_params["p"])
        assert torch.equal(a_state.m["p"], b_state.m["p"])
        assert torch.equal(a_state.v["p"], b_state.v["p"])

    def test_pure_function(self):
        params, grads = self.one_param(0.7, -0.2)
        state = AdamState()
        before = params["p"].clone()
        adam_step(params, grads, state)
        assert torch.equal(params["p"], before)
        assert state.step == 0 and not state.m and not state.v

    def test_registry_mismatch(self):
        params, _ = self.one_param(0.0, 0.0)
        with pytest.raises(RegistryMismatch):
            adam_step(params, {"other": torch.zeros(1)}, AdamState())

    def test_shape_mismatch(self):
        params, _ = self.one_param(0.0, 0.0)
        with pytest.raises(ShapeMismatch):
            adam_step(params, {"p": torch.zeros(3)}, AdamState())

    def test_converges_on_quadratic(self):
        params = {"p": torch.tensor([10.0], dtype=torch.float64)}
        state = AdamState(lr=0.1)
        for _ in range(800):
            grads = {"p": 2.0 * (params["p"] - 3.0)}
            params, state = adam_step(params, grads, state)
        assert params["p"].item() == pytest.approx(3.0, abs=1e-3)
        assert state.step == 800


class TestGradientLocality:
    def test_unhit_node_gets_zero_gradient(self):
        """Rays confined to one box leave the other node's parameters untouched."""
        import numpy as np

        from componerf.encoding import HashGridConfig
        from componerf.fields import CompositionConfig, LocalFieldConfig
        from componerf.oracle import two_sphere_fixture
        from componerf.scene import SceneConfig, SceneModel

        layout, _ = two_sphere_fixture()
        config = SceneConfig.rgb(
            field=LocalFieldConfig(
                hash=HashGridConfig(levels=2, coarsest=4, finest=8, table_size=2**8),
                hidden=8,
                color_dim=3,
                squash_color=True,
            ),
            composition=CompositionConfig(alpha_d=0.0, alpha_c=0.0),
            n_per_box=8,
        )
        scene = SceneModel(layout, config)
        # Narrow-fov camera straight above the left box: its rays stay at
        # x near -0.32 and never reach the right box (x >= -0.02).
        camera = Camera(
            position=(-0.32, 0.0, 1.3), target=(-0.32, 0.0, 0.0), fov_deg=10.0, resolution=(6, 6)
        )
        views = render_views(scene, layout, camera, n_per_box=8, which="global")
        params = scene.parameters()
        tape = RenderTape(params)
        cot = torch.ones_like(views["global"].image)
        grads = backward_from_image_grad(tape, views["global"].image, cot)
        right = {n: g for n, g in grads.items() if n.startswith("nodes/right/")}
        left = {n: g for n, g in grads.items() if n.startswith("nodes/left/")}
        assert right and left
        assert all(torch.all(g == 0.0) for g in right.values())
        assert any(g.abs().sum().item() > 0.0 for g in left.values())


class TestFullPipelineFiniteDifferences:
    def test_micro_scene_gradcheck(self):
        """Reverse mode through render + composition + fields + encoding."""
        layout, scene = gradcheck_util.micro_scene()
        assert sum(p.numel() for p in scene.parameters().values()) <= 1000
        camera = gradcheck_util.micro_camera()
        gen = torch.Generator().manual_seed(4)
        cot = torch.randn(16, 3, generator=gen, dtype=torch.float64)
        worst, checked = gradcheck_util.finite_difference_check(
            scene, layout, camera, cot, coords_per_param=3
        )
        assert checked >= 30
        assert worst < 1e-4
