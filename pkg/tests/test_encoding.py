"""Tests for the hash-grid and spherical-harmonic encoders."""

import math

import numpy as np
import pytest
import torch

from componerf.encoding import (
    SH_DIM,
    HashGridConfig,
    hash_encode,
    init_hash_table,
    level_resolutions,
    sh_encode,
)

# Independent reimplementation of the vertex hash, kept deliberately
# separate from the library: unsigned 64-bit products, xor, power-of-two
# mask. Low bits agree with any wider intermediate width because xor and
# the mask never mix bit positions.
_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)


def naive_hash(ijk, table_size):
    ijk = np.asarray(ijk, dtype=np.uint64)
    with np.errstate(over="ignore"):
        prods = ijk * _PRIMES
    h = prods[..., 0] ^ prods[..., 1] ^ prods[..., 2]
    return (h & np.uint64(table_size - 1)).astype(np.int64)


def vertex_to_point(ijk, res):
    """Domain coordinate in [-1, 1]^3 that lands exactly on grid vertex ijk."""
    return 2.0 * np.asarray(ijk, dtype=np.float64) / res - 1.0


@pytest.fixture()
def small_cfg():
    return HashGridConfig(levels=4, features_per_level=2, coarsest=4, finest=32, table_size=2**10)


@pytest.fixture()
def small_table(small_cfg):
    return init_hash_table(small_cfg, seed=3, name="enc", dtype=torch.float64)


class TestLevelResolutions:
    def test_default_ladder(self):
        assert level_resolutions(HashGridConfig()) == [16, 22, 29, 39, 53, 71, 95, 128]

    def test_endpoints_exact(self):
        cfg = HashGridConfig(levels=5, coarsest=8, finest=256)
        res = level_resolutions(cfg)
        assert res[0] == cfg.coarsest
        assert res[-1] == cfg.finest
        assert res == sorted(res)

    def test_geometric_growth(self):
        cfg = HashGridConfig(levels=6, coarsest=16, finest=512)
        res = level_resolutions(cfg)
        b = (cfg.finest / cfg.coarsest) ** (1.0 / (cfg.levels - 1))
        for i, r in enumerate(res):
            assert abs(r - cfg.coarsest * b**i) <= 0.5 + 1e-9

    def test_single_level(self):
        assert level_resolutions(HashGridConfig(levels=1, coarsest=16, finest=128)) == [16]


class TestConfigValidation:
    def test_table_size_power_of_two(self):
        with pytest.raises(ValueError):
            HashGridConfig(table_size=3000)

    def test_fine_coarse_order(self):
        with pytest.raises(ValueError):
            HashGridConfig(coarsest=64, finest=32)

    def test_levels_positive(self):
        with pytest.raises(ValueError):
            HashGridConfig(levels=0)

    def test_out_dim(self):
        # 16 levels of 2 features concatenate to a 32-vector.
        assert HashGridConfig(levels=16, finest=512).out_dim == 32
        assert HashGridConfig().out_dim == 16


class TestInitHashTable:
    def test_shape_and_range(self, small_cfg):
        t = init_hash_table(small_cfg, seed=0, name="a")
        assert t.shape == (small_cfg.levels, small_cfg.table_size, small_cfg.features_per_level)
        assert t.abs().max().item() <= 1e-4

    def test_deterministic(self, small_cfg):
        a = init_hash_table(small_cfg, seed=5, name="x")
        b = init_hash_table(small_cfg, seed=5, name="x")
        assert torch.equal(a, b)

    def test_streams_independent(self, small_cfg):
        a = init_hash_table(small_cfg, seed=5, name="x")
        b = init_hash_table(small_cfg, seed=5, name="y")
        c = init_hash_table(small_cfg, seed=6, name="x")
        assert not torch.equal(a, b)
        assert not torch.equal(a, c)


class TestHashEncode:
    def test_output_width(self, small_cfg, small_table):
        x = torch.zeros(7, 3, dtype=torch.float64)
        out = hash_encode(x, small_cfg, small_table)
        assert out.shape == (7, small_cfg.out_dim)

    def test_deterministic(self, small_cfg, small_table):
        x = torch.rand(50, 3, dtype=torch.float64) * 2.0 - 1.0
        a = hash_encode(x, small_cfg, small_table)
        b = hash_encode(x.clone(), small_cfg, small_table)
        assert torch.equal(a, b)

    def test_vertex_exactness(self, small_cfg, small_table):
        """A point on a grid vertex reproduces the hashed table row exactly."""
        resolutions = level_resolutions(small_cfg)
        gen = np.random.default_rng(11)
        for level, res in enumerate(resolutions):
            # Vertices of level `level` are representable only when the point
            # also lies on a vertex of every other level, which holds for the
            # shared corners of the domain.
            for ijk in ([0, 0, 0], [res, res, res], [0, res, 0]):
                x = torch.tensor(vertex_to_point(ijk, res), dtype=torch.float64)
                out = hash_encode(x, small_cfg, small_table)
                fpl = small_cfg.features_per_level
                got = out[level * fpl : (level + 1) * fpl]
                want = small_table[level][naive_hash(ijk, small_cfg.table_size)]
                assert torch.equal(got, want)
        # Interior vertices of the coarsest level: pick points on its grid and
        # check only that level's slice (other levels interpolate).
        res0 = resolutions[0]
        for _ in range(20):
            ijk = gen.integers(0, res0 + 1, size=3)
            x = torch.tensor(vertex_to_point(ijk, res0), dtype=torch.float64)
            out = hash_encode(x, small_cfg, small_table)
            fpl = small_cfg.features_per_level
            got = out[:fpl]
            want = small_table[0][naive_hash(ijk, small_cfg.table_size)]
            assert torch.allclose(got, want, rtol=0.0, atol=1e-12)

    def test_trilinear_against_naive(self, small_cfg, small_table):
        """Interior points match a from-scratch trilinear blend of hashed corners."""
        gen = np.random.default_rng(23)
        table = small_table.numpy()
        pts = gen.uniform(-1.0, 1.0, size=(64, 3))
        out = hash_encode(torch.from_numpy(pts), small_cfg, small_table).numpy()
        for level, res in enumerate(level_resolutions(small_cfg)):
            u = (pts + 1.0) * 0.5 * res
            base = np.clip(np.floor(u).astype(np.int64), 0, res - 1)
            frac = u - base
            want = np.zeros((len(pts), small_cfg.features_per_level))
            for ci in (0, 1):
                for cj in (0, 1):
                    for ck in (0, 1):
                        corner = base + np.array([ci, cj, ck])
                        w = (
                            (ci * frac[:, 0] + (1 - ci) * (1 - frac[:, 0]))
                            * (cj * frac[:, 1] + (1 - cj) * (1 - frac[:, 1]))
                            * (ck * frac[:, 2] + (1 - ck) * (1 - frac[:, 2]))
                        )
                        rows = table[level][naive_hash(corner, small_cfg.table_size)]
                        want += w[:, None] * rows
            fpl = small_cfg.features_per_level
            got = out[:, level * fpl : (level + 1) * fpl]
            np.testing.assert_allclose(got, want, rtol=0.0, atol=1e-12)

    def test_linear_along_axis(self, small_cfg, small_table):
        """Inside one cell the encoding is affine in each coordinate."""
        res0 = level_resolutions(small_cfg)[0]
        # Stay strictly inside the first cell of every level by working in a
        # thin slab of the coarsest cell.
        lo = torch.tensor([-1.0 + 0.02 / res0, -0.9999, -0.9999], dtype=torch.float64)
        hi = torch.tensor([-1.0 + 0.04 / res0, -0.9999, -0.9999], dtype=torch.float64)
        mid = (lo + hi) / 2.0
        f_lo = hash_encode(lo, small_cfg, small_table)
        f_hi = hash_encode(hi, small_cfg, small_table)
        f_mid = hash_encode(mid, small_cfg, small_table)
        assert torch.allclose(f_mid, (f_lo + f_hi) / 2.0, rtol=0.0, atol=1e-12)

    def test_clamped_outside_domain(self, small_cfg, small_table):
        inside = torch.ones(3, dtype=torch.float64)
        outside = torch.tensor([1.5, 2.0, 7.0], dtype=torch.float64)
        assert torch.equal(
            hash_encode(inside, small_cfg, small_table),
            hash_encode(outside, small_cfg, small_table),
        )

    def test_gradient_flows_to_table(self, small_cfg):
        table = init_hash_table(small_cfg, seed=1, name="g", dtype=torch.float64)
        table.requires_grad_(True)
        x = torch.rand(16, 3, dtype=torch.float64) * 2.0 - 1.0
        hash_encode(x, small_cfg, table).sum().backward()
        assert table.grad is not None
        assert table.grad.abs().sum().item() > 0.0


class TestShEncode:
    def test_shape(self):
        d = torch.randn(9, 3)
        d = d / d.norm(dim=-1, keepdim=True)
        assert sh_encode(d).shape == (9, SH_DIM)

    def test_pole_values(self):
        """At +z every m != 0 harmonic vanishes and Y_l0 = sqrt((2l+1)/4pi)."""
        out = sh_encode(torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64))
        want = torch.zeros(16, dtype=torch.float64)
        want[0] = math.sqrt(1.0 / (4.0 * math.pi))
        want[2] = math.sqrt(3.0 / (4.0 * math.pi))
        want[6] = math.sqrt(5.0 / (4.0 * math.pi))
        want[12] = math.sqrt(7.0 / (4.0 * math.pi))
        assert torch.allclose(out, want, rtol=0.0, atol=1e-12)

    def test_orthonormal_basis(self):
        """Monte Carlo estimate of <Y_i, Y_j> over the sphere is delta_ij."""
        gen = np.random.default_rng(7)
        d = gen.standard_normal((200_000, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        y = sh_encode(torch.from_numpy(d)).numpy()
        # Uniform-sphere mean of Y_i * Y_j equals delta_ij / (4 pi).
        gram = 4.0 * math.pi * (y.T @ y) / len(d)
        np.testing.assert_allclose(gram, np.eye(16), rtol=0.0, atol=0.03)

    def test_deterministic(self):
        d = torch.randn(40, 3, dtype=torch.float64)
        d = d / d.norm(dim=-1, keepdim=True)
        assert torch.equal(sh_encode(d), sh_encode(d.clone()))
