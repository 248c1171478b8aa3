"""Per-object fields and the residual composition calibrators.

Each box owns a LocalField (hash grid + small MLP) that maps box-local
positions to a density and a view-independent color. The composition
module then calibrates every merged sample in the global frame: in
density mode a residual is added to the density and a hidden feature h
conditions a view-dependent color residual; in color mode the density
passes through untouched and only the color residual applies. Calibrator
output layers start at zero, so a fresh composition is the identity.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import rng
from .encoding import SH_DIM, HashGridConfig, hash_encode, init_hash_table, sh_encode
from .errors import WrongMode

__all__ = [
    "LocalFieldConfig",
    "LocalField",
    "CompositionConfig",
    "CompositionParams",
    "eval_local",
    "compose_density",
    "compose_color",
    "compose_color_only",
    "compose_samples",
]


def _init_linear(linear: nn.Linear, seed: int, name: str, zero: bool = False) -> None:
    """Deterministic counter-stream init (uniform +/- 1/sqrt(fan_in)), or zeros."""
    with torch.no_grad():
        if zero:
            linear.weight.zero_()
            linear.bias.zero_()
            return
        bound = 1.0 / math.sqrt(linear.in_features)
        for pname, p in (("weight", linear.weight), ("bias", linear.bias)):
            u = rng.uniform(seed, rng.tag(f"init/{name}/{pname}"), np.arange(p.numel()))
            vals = (torch.from_numpy(u).reshape(p.shape) * 2.0 - 1.0) * bound
            p.copy_(vals.to(p.dtype))


def _mlp(dims: list[int], seed: int, name: str, zero_last: bool = False) -> nn.ModuleList:
    layers = nn.ModuleList()
    for i in range(len(dims) - 1):
        linear = nn.Linear(dims[i], dims[i + 1])
        _init_linear(linear, seed, f"{name}/{i}", zero=zero_last and i == len(dims) - 2)
        layers.append(linear)
    return layers


def _run_mlp(layers: nn.ModuleList, x: torch.Tensor) -> torch.Tensor:
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = torch.relu(x)
    return x


@dataclass(frozen=True)
class LocalFieldConfig:
    hash: HashGridConfig = field(default_factory=HashGridConfig)
    hidden: int = 64
    hidden_layers: int = 1
    color_dim: int = 4
    density_bias: float = -1.0
    squash_color: bool = False  # sigmoid color head (RGB mode); latent mode leaves it raw


class LocalField(nn.Module):
    """Box-local field: hash features -> trunk -> (density, color) heads."""

    def __init__(self, config: LocalFieldConfig, seed: int, name: str):
        super().__init__()
        self.config = config
        self.table = nn.Parameter(init_hash_table(config.hash, seed, name + "/table"))
        dims = [config.hash.out_dim] + [config.hidden] * config.hidden_layers
        self.trunk = _mlp(dims, seed, name + "/trunk")
        self.sigma_head = nn.Linear(config.hidden, 1)
        _init_linear(self.sigma_head, seed, name + "/sigma_head")
        self.color_head = nn.Linear(config.hidden, config.color_dim)
        _init_linear(self.color_head, seed, name + "/color_head")

    def forward(self, x_l: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feats = hash_encode(x_l, self.config.hash, self.table)
        hid = feats
        for layer in self.trunk:
            hid = torch.relu(layer(hid))
        sigma = torch.nn.functional.softplus(
            self.sigma_head(hid).squeeze(-1) + self.config.density_bias
        )
        color = self.color_head(hid)
        if self.config.squash_color:
            color = torch.sigmoid(color)
        return sigma, color


def eval_local(field_module, x_l: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Evaluate a node field at box-local points [..., 3] -> (sigma [...], color [..., c])."""
    return field_module(x_l)


@dataclass(frozen=True)
class CompositionConfig:
    mode: str = "density"  # "density" | "color"
    alpha_d: float = 1.0
    alpha_c: float = 1.0
    h_dim: int = 15
    depth: int = 4
    hidden: int = 64
    hash: HashGridConfig = field(
        default_factory=lambda: HashGridConfig(levels=4, coarsest=16, finest=64, table_size=2**12)
    )

    def __post_init__(self):
        if self.mode not in ("density", "color"):
            raise ValueError(f"unknown composition mode {self.mode!r}")
        if self.depth not in (4, 6):
            raise ValueError(f"calibrator depth must be 4 or 6, got {self.depth}")


class CompositionParams(nn.Module):
    """Global residual calibrators over hash-encoded x_g and SH-encoded d_g.

    Density mode: a density calibrator maps enc(x_g) to (residual, h) and the
    color calibrator maps (h, SH(d_g)) to a color residual. Color mode: the
    density calibrator does not exist; the color calibrator consumes
    (enc(x_g), SH(d_g)) directly.
    """

    def __init__(self, config: CompositionConfig, color_dim: int, seed: int):
        super().__init__()
        self.config = config
        self.color_dim = color_dim
        self.table = nn.Parameter(init_hash_table(config.hash, seed, "composition/table"))
        enc_dim = config.hash.out_dim
        hidden = [config.hidden] * (config.depth - 1)
        if config.mode == "density":
            self.density_mlp = _mlp(
                [enc_dim] + hidden + [1 + config.h_dim], seed, "composition/density", zero_last=True
            )
            color_in = config.h_dim + SH_DIM
        else:
            self.density_mlp = None
            color_in = enc_dim + SH_DIM
        self.color_mlp = _mlp(
            [color_in] + hidden + [color_dim], seed, "composition/color", zero_last=True
        )

    @property
    def mode(self) -> str:
        return self.config.mode

    def encode_position(self, x_g: torch.Tensor) -> torch.Tensor:
        return hash_encode(x_g, self.config.hash, self.table)


def compose_density(
    params: CompositionParams, x_g: torch.Tensor, sigma_l: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Density-mode calibration: sigma_g = max(0, alpha_d * residual(x_g) + sigma_l).

    Also returns the calibrator's hidden feature h for the color stage.
    With alpha_d = 0 the input density is returned exactly (no clamp applied).
    """
    if params.mode != "density":
        raise WrongMode("compose_density requires density mode")
    out = _run_mlp(params.density_mlp, params.encode_position(x_g))
    residual, h = out[..., 0], out[..., 1:]
    if params.config.alpha_d == 0.0:
        return sigma_l, h
    return (params.config.alpha_d * residual + sigma_l).clamp_min(0.0), h


def compose_color(
    params: CompositionParams, h: torch.Tensor, d_g: torch.Tensor, c_l: torch.Tensor
) -> torch.Tensor:
    """Density-mode color calibration: C_g = alpha_c * f(h, SH(d_g)) + C_l."""
    if params.mode != "density":
        raise WrongMode("compose_color requires density mode")
    if params.config.alpha_c == 0.0:
        return c_l
    inp = torch.cat([h, sh_encode(d_g)], dim=-1)
    return params.config.alpha_c * _run_mlp(params.color_mlp, inp) + c_l


def compose_color_only(
    params: CompositionParams, x_g: torch.Tensor, d_g: torch.Tensor, sigma_l: torch.Tensor,
    c_l: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Color-mode calibration: density passes through bitwise, color gets a residual."""
    if params.mode != "color":
        raise WrongMode("compose_color_only requires color mode")
    if params.config.alpha_c == 0.0:
        return sigma_l, c_l
    inp = torch.cat([params.encode_position(x_g), sh_encode(d_g)], dim=-1)
    return sigma_l, params.config.alpha_c * _run_mlp(params.color_mlp, inp) + c_l


def compose_samples(
    params: CompositionParams,
    x_g: torch.Tensor,
    d_g: torch.Tensor,
    sigma_l: torch.Tensor,
    c_l: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mode dispatch for a flat batch of merged samples.

    Skips the calibrator networks entirely when both alpha scales are 0;
    the result is exact either way (the residual terms vanish), this just
    keeps pure pass-through renders cheap.
    """
    cfg = params.config
    if cfg.mode == "density":
        if cfg.alpha_d == 0.0 and cfg.alpha_c == 0.0:
            return sigma_l, c_l
        sigma_g, h = compose_density(params, x_g, sigma_l)
        return sigma_g, compose_color(params, h, d_g, c_l)
    return compose_color_only(params, x_g, d_g, sigma_l, c_l)
