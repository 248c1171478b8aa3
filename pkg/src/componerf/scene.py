"""Scene model: one field per box plus the composition calibrators.

The parameter registry is an ordered mapping from stable names
("nodes/<id>/<param>", "composition/<param>") to tensors, sorted by name,
so gradient assembly, optimizer state, and checkpoints are independent of
box order in the Layout.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass, field as dc_field, replace

import torch

from .encoding import HashGridConfig
from .fields import CompositionConfig, CompositionParams, LocalField, LocalFieldConfig
from .layout import Layout

__all__ = ["SceneConfig", "SceneModel"]


@dataclass(frozen=True)
class SceneConfig:
    color_dim: int = 4
    field: LocalFieldConfig = dc_field(default_factory=LocalFieldConfig)
    composition: CompositionConfig = dc_field(default_factory=CompositionConfig)
    background: tuple[float, ...] | None = None
    n_per_box: int = 32

    @staticmethod
    def rgb(**overrides) -> "SceneConfig":
        """Oracle-friendly RGB configuration: 3 channels, sigmoid colors."""
        base = SceneConfig(
            color_dim=3,
            field=LocalFieldConfig(color_dim=3, squash_color=True),
        )
        return replace(base, **overrides) if overrides else base

    def __post_init__(self):
        if self.field.color_dim != self.color_dim:
            object.__setattr__(self, "field", replace(self.field, color_dim=self.color_dim))


def _config_to_dict(config: SceneConfig) -> dict:
    return asdict(config)


def _config_from_dict(doc: dict) -> SceneConfig:
    fld = dict(doc["field"])
    fld["hash"] = HashGridConfig(**fld["hash"])
    comp = dict(doc["composition"])
    comp["hash"] = HashGridConfig(**comp["hash"])
    background = doc.get("background")
    return SceneConfig(
        color_dim=int(doc["color_dim"]),
        field=LocalFieldConfig(**fld),
        composition=CompositionConfig(**comp),
        background=tuple(background) if background is not None else None,
        n_per_box=int(doc["n_per_box"]),
    )


class SceneModel:
    """Per-node fields keyed by box id, composition module, and run state."""

    def __init__(self, layout: Layout, config: SceneConfig | None = None, seed: int | None = None):
        self.config = config if config is not None else SceneConfig()
        self.seed = layout.seed if seed is None else seed
        self.mode = self.config.composition.mode
        self.color_dim = self.config.color_dim
        self.n_per_box = self.config.n_per_box
        self.step = 0
        self.skipped_steps = 0
        self.nodes: dict[str, torch.nn.Module] = OrderedDict(
            (box_id, LocalField(self.config.field, self.seed, f"node/{box_id}"))
            for box_id in sorted(b.id for b in layout.boxes)
        )
        self.composition = CompositionParams(self.config.composition, self.color_dim, self.seed)

    @staticmethod
    def with_analytic(layout: Layout, analytic_scene, config: SceneConfig) -> "SceneModel":
        """Scene whose nodes are exact analytic fields (fixtures and oracles)."""
        from .oracle import AnalyticSphereField

        scene = SceneModel(layout, config)
        boxes = {b.id: b for b in layout.boxes}
        scene.nodes = OrderedDict(
            (box_id, AnalyticSphereField(boxes[box_id], analytic_scene))
            for box_id in sorted(boxes)
        )
        return scene

    def background_tensor(self, dtype=torch.float32) -> torch.Tensor:
        if self.config.background is None:
            return torch.zeros(self.color_dim, dtype=dtype)
        return torch.tensor(self.config.background, dtype=dtype)

    def parameters(self) -> "OrderedDict[str, torch.Tensor]":
        """Name -> tensor registry in sorted name order."""
        out = {}
        for node_id, module in self.nodes.items():
            for name, p in module.named_parameters():
                out[f"nodes/{node_id}/{name}"] = p
        for name, p in self.composition.named_parameters():
            out[f"composition/{name}"] = p
        return OrderedDict(sorted(out.items()))

    def trainable_parameters(
        self, freeze_composition: bool = False, frozen_nodes: set[str] | None = None
    ) -> "OrderedDict[str, torch.Tensor]":
        frozen_nodes = frozen_nodes or set()
        out = OrderedDict()
        for name, p in self.parameters().items():
            if freeze_composition and name.startswith("composition/"):
                continue
            if any(name.startswith(f"nodes/{nid}/") for nid in frozen_nodes):
                continue
            out[name] = p
        return out

    def to_dtype(self, dtype: torch.dtype) -> "SceneModel":
        """Convert all module parameters in place (64-bit gradient-check mode)."""
        for module in self.nodes.values():
            module.to(dtype)
        self.composition.to(dtype)
        return self

    def config_dict(self) -> dict:
        return _config_to_dict(self.config)

    @staticmethod
    def config_from_dict(doc: dict) -> SceneConfig:
        return _config_from_dict(doc)
