"""Tests for PNG, PFM, and raw latent image files."""

import struct

import numpy as np
import pytest
import torch

from componerf.errors import ShapeMismatch, VersionMismatch
from componerf.image_io import (
    LATENT_MAGIC,
    LATENT_VERSION,
    load_latent,
    load_pfm,
    load_png,
    save_latent,
    save_pfm,
    save_png,
)


class TestPng:
    def test_round_trip_quantized(self, tmp_path):
        path = tmp_path / "img.png"
        image = np.random.default_rng(0).random((6, 8, 3))
        save_png(str(path), image)
        back = load_png(str(path))
        assert back.shape == (6, 8, 3)
        assert back.dtype == np.float32
        assert np.abs(back - image).max() <= 0.5 / 255.0 + 1e-7

    def test_exact_at_quantized_values(self, tmp_path):
        path = tmp_path / "img.png"
        image = np.round(np.random.default_rng(1).random((4, 4, 3)) * 255.0) / 255.0
        save_png(str(path), image)
        np.testing.assert_allclose(load_png(str(path)), image, atol=1e-7)

    def test_single_channel_broadcasts(self, tmp_path):
        path = tmp_path / "gray.png"
        save_png(str(path), np.full((3, 3, 1), 0.5))
        back = load_png(str(path))
        assert back.shape == (3, 3, 3)
        assert np.all(back[..., 0] == back[..., 1])

    def test_out_of_range_clamped(self, tmp_path):
        path = tmp_path / "img.png"
        save_png(str(path), np.array([[[2.0, -1.0, 0.5]]]))
        back = load_png(str(path))
        assert back[0, 0, 0] == 1.0
        assert back[0, 0, 1] == 0.0

    def test_torch_input(self, tmp_path):
        path = tmp_path / "img.png"
        save_png(str(path), torch.full((2, 2, 3), 0.25))
        assert load_png(str(path)).shape == (2, 2, 3)

    def test_latent_channel_count_rejected(self, tmp_path):
        with pytest.raises(ShapeMismatch):
            save_png(str(tmp_path / "img.png"), np.zeros((4, 4, 4)))

    def test_non_image_shape_rejected(self, tmp_path):
        with pytest.raises(ShapeMismatch):
            save_png(str(tmp_path / "img.png"), np.zeros((4, 4)))


class TestPfm:
    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "w.pfm"
        values = np.random.default_rng(2).random((5, 9)).astype(np.float32)
        save_pfm(str(path), values)
        np.testing.assert_array_equal(load_pfm(str(path)), values)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "w.pfm"
        save_pfm(str(path), np.zeros((2, 3), dtype=np.float32))
        data = path.read_bytes()
        assert data.startswith(b"Pf\n3 2\n-1.0\n")
        assert len(data) == len(b"Pf\n3 2\n-1.0\n") + 2 * 3 * 4

    def test_bottom_up_row_order(self, tmp_path):
        path = tmp_path / "w.pfm"
        values = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        save_pfm(str(path), values)
        data = path.read_bytes()
        floats = np.frombuffer(data[len(b"Pf\n2 2\n-1.0\n") :], dtype="<f4")
        # Last image row is stored first.
        np.testing.assert_array_equal(floats, [3.0, 4.0, 1.0, 2.0])

    def test_torch_input(self, tmp_path):
        path = tmp_path / "w.pfm"
        save_pfm(str(path), torch.arange(6, dtype=torch.float32).reshape(2, 3))
        assert load_pfm(str(path)).shape == (2, 3)

    def test_wrong_rank_rejected(self, tmp_path):
        with pytest.raises(ShapeMismatch):
            save_pfm(str(tmp_path / "w.pfm"), np.zeros((2, 3, 1)))

    def test_color_pfm_rejected(self, tmp_path):
        path = tmp_path / "c.pfm"
        path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 48)
        with pytest.raises(VersionMismatch):
            load_pfm(str(path))

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "w.pfm"
        save_pfm(str(path), np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(VersionMismatch, match="truncated"):
            load_pfm(str(path))


class TestLatent:
    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "img.cnrf"
        image = np.random.default_rng(3).standard_normal((6, 5, 4)).astype(np.float32)
        save_latent(str(path), image)
        back = load_latent(str(path))
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, image)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "img.cnrf"
        save_latent(str(path), np.zeros((7, 9, 4), dtype=np.float32))
        data = path.read_bytes()
        magic, version, channels, height, width = struct.unpack("<4sHHII", data[:16])
        assert magic == LATENT_MAGIC == b"CNRF"
        assert version == LATENT_VERSION
        assert (channels, height, width) == (4, 7, 9)
        assert len(data) == 16 + 7 * 9 * 4 * 4

    def test_rgb_channels_allowed(self, tmp_path):
        path = tmp_path / "img.cnrf"
        save_latent(str(path), np.zeros((2, 2, 3), dtype=np.float32))
        assert load_latent(str(path)).shape == (2, 2, 3)

    def test_torch_input(self, tmp_path):
        path = tmp_path / "img.cnrf"
        save_latent(str(path), torch.randn(3, 4, 4))
        assert load_latent(str(path)).shape == (3, 4, 4)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "img.cnrf"
        save_latent(str(path), np.zeros((2, 2, 4), dtype=np.float32))
        data = bytearray(path.read_bytes())
        data[:4] = b"JUNK"
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch, match="magic"):
            load_latent(str(path))

    def test_future_version(self, tmp_path):
        path = tmp_path / "img.cnrf"
        save_latent(str(path), np.zeros((2, 2, 4), dtype=np.float32))
        data = bytearray(path.read_bytes())
        data[4:6] = struct.pack("<H", LATENT_VERSION + 1)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch, match="version"):
            load_latent(str(path))

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "img.cnrf"
        path.write_bytes(b"CNRF\x01\x00")
        with pytest.raises(VersionMismatch, match="header"):
            load_latent(str(path))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "img.cnrf"
        save_latent(str(path), np.zeros((4, 4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(VersionMismatch, match="payload"):
            load_latent(str(path))
