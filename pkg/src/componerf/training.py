"""Training loop, node caching lifecycle, and scene checkpoints.

One training step: sample a pose, render the global view and every local
view over the same rays, ask the guidance provider for an image-space
gradient per view (global prompt for the global view, per-box prompt for
each local view, both with a directional cue), fold the weighted terms plus
the sparsity penalty into a single scalar whose autograd gradient equals
the assembled total, and take one Adam step.
"""

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from . import checkpoints, image_io
from .encoding import HashGridConfig
from .errors import (
    CacheVersionMismatch,
    GuidanceError,
    MissingCache,
    VersionMismatch,
)
from .fields import LocalField, LocalFieldConfig
from .geometry import SampleRng
from .guidance import GuidanceRequest, augment_prompt
from .layout import Layout, parse_layout, serialize_layout
from .optim import AdamState, LossWeights, adam_step, sparsity_loss
from .rendering import TRAIN_RESOLUTION, render_views, sample_camera
from .scene import SceneModel

__all__ = [
    "TrainConfig",
    "train",
    "decompose",
    "recompose",
    "save_node_cache",
    "load_node_cache",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_STEPS = 5000
FINETUNE_STEPS = 1000


@dataclass
class TrainConfig:
    """Knobs for one training run."""

    steps: int = DEFAULT_STEPS
    loss: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    resolution: int = TRAIN_RESOLUTION
    snapshot_every: int = 500
    fixed_t: int | None = None
    freeze_composition: bool = False
    freeze_after: dict[str, int] | None = None  # node id -> step to stop updating it


def _orbit_camera(seed: int, step: int, resolution: int):
    camera = sample_camera(seed, step)
    if camera.resolution != (resolution, resolution):
        camera = replace(camera, resolution=(resolution, resolution))
    return camera


def train(
    layout: Layout,
    scene: SceneModel,
    guidance,
    steps: int | None = None,
    *,
    config: TrainConfig | None = None,
    snapshot_dir: str | None = None,
    checkpoint_path: str | None = None,
    log=None,
) -> SceneModel:
    """Run the training loop; mutates and returns ``scene``.

    Args:
        layout: box layout; never mutated.
        scene: model to optimize in place.
        guidance: callable ``(request, scope) -> GuidanceResponse``.
        steps: iteration count (defaults to ``config.steps``).
        config: loop configuration.
        snapshot_dir: if set, periodic view snapshots are written there.
        checkpoint_path: if set, a checkpoint is written on guidance
            failure (at the last completed step) and at the end.
        log: optional callable ``(step, diagnostics dict)``.

    Raises:
        GuidanceError: re-raised after checkpointing when the provider fails.
    """
    config = config or TrainConfig()
    total = config.steps if steps is None else steps
    res = config.resolution
    weights = config.loss
    state = AdamState(lr=config.lr)
    box_prompts = {box.id: box.prompt for box in layout.boxes}

    for _ in range(total):
        step = scene.step
        camera = _orbit_camera(scene.seed, step, res)
        frozen = {
            node_id
            for node_id, until in (config.freeze_after or {}).items()
            if step >= until
        }
        params = scene.trainable_parameters(config.freeze_composition, frozen)
        views = render_views(
            scene,
            layout,
            camera,
            n_per_box=scene.n_per_box,
            sample_rng=SampleRng(scene.seed, step),
            which="all",
        )

        try:
            grads_by_scope = {}
            for scope, view in views.items():
                if scope == "global":
                    prompt = layout.global_prompt
                else:
                    prompt = box_prompts[scope.split(":", 1)[1]]
                request = GuidanceRequest(
                    image=view.image.reshape(res, res, scene.color_dim),
                    prompt=augment_prompt(prompt, camera.azimuth_deg, camera.elevation_deg),
                    azimuth=camera.azimuth_deg,
                    elevation=camera.elevation_deg,
                    t=config.fixed_t,
                    camera=camera,
                )
                response = guidance(request, scope)
                grads_by_scope[scope] = response.grad_image.reshape(-1, scene.color_dim)
        except GuidanceError:
            if checkpoint_path is not None:
                save_checkpoint(scene, layout, checkpoint_path)
            raise

        scalar = None
        local_weight_parts = []
        for scope, view in views.items():
            coeff = weights.alpha_global if scope == "global" else weights.alpha_local
            term = coeff * (grads_by_scope[scope].detach() * view.image).sum()
            scalar = term if scalar is None else scalar + term
            if scope != "global":
                local_weight_parts.append(view.weights[view.valid])
        local_weights = torch.cat(local_weight_parts) if local_weight_parts else torch.zeros(0)
        sparsity = sparsity_loss(local_weights) if local_weights.numel() > 0 else scalar * 0.0
        scalar = scalar + weights.beta * sparsity

        grad_list = torch.autograd.grad(
            scalar, list(params.values()), allow_unused=True
        )
        grads = {
            name: (torch.zeros_like(p) if g is None else g)
            for (name, p), g in zip(params.items(), grad_list)
        }

        finite = all(bool(torch.isfinite(g).all()) for g in grads.values())
        if finite:
            values = {name: p.detach() for name, p in params.items()}
            new_values, state = adam_step(values, grads, state)
            with torch.no_grad():
                for name, p in params.items():
                    p.copy_(new_values[name])
        else:
            scene.skipped_steps += 1

        scene.step += 1
        if log is not None:
            grad_norm = float(
                torch.sqrt(sum((g * g).sum() for g in grads.values()))
            )
            log(
                scene.step,
                {
                    "grad_norm": grad_norm,
                    "sparsity": float(sparsity.detach()),
                    "skipped": scene.skipped_steps,
                    "finite": finite,
                },
            )
        if snapshot_dir is not None and scene.step % config.snapshot_every == 0:
            _write_snapshots(snapshot_dir, scene, views, res)

    if checkpoint_path is not None:
        save_checkpoint(scene, layout, checkpoint_path)
    return scene


def _write_snapshots(snapshot_dir: str, scene: SceneModel, views: dict, res: int) -> None:
    os.makedirs(snapshot_dir, exist_ok=True)
    for scope, view in views.items():
        if scope == "global":
            kind, ident = "global", "scene"
        else:
            kind, ident = "local", scope.split(":", 1)[1]
        stem = f"step_{scene.step}_{kind}_{ident}"
        image = view.image.detach().reshape(res, res, scene.color_dim)
        if scene.color_dim == 3:
            image_io.save_png(os.path.join(snapshot_dir, f"{stem}_image.png"), image)
        else:
            image_io.save_latent(os.path.join(snapshot_dir, f"{stem}_image.cnrf"), image)
        image_io.save_pfm(
            os.path.join(snapshot_dir, f"{stem}_weights_sum.pfm"),
            view.weight_sum.detach().reshape(res, res),
        )


def _field_config_to_dict(cfg: LocalFieldConfig) -> dict:
    return asdict(cfg)


def _field_config_from_dict(doc: dict) -> LocalFieldConfig:
    doc = dict(doc)
    doc["hash"] = HashGridConfig(**doc["hash"])
    return LocalFieldConfig(**doc)


def _module_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        name: p.detach().cpu().numpy() for name, p in module.named_parameters()
    }


def _load_module_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray], what: str) -> None:
    expected = dict(module.named_parameters())
    if set(expected) != set(arrays):
        raise VersionMismatch(
            f"{what}: parameter sections {sorted(arrays)} do not match model {sorted(expected)}"
        )
    with torch.no_grad():
        for name, p in expected.items():
            arr = torch.from_numpy(arrays[name])
            if tuple(arr.shape) != tuple(p.shape):
                raise VersionMismatch(
                    f"{what}: section {name} has shape {tuple(arr.shape)}, expected {tuple(p.shape)}"
                )
            p.copy_(arr.to(p.dtype))


def save_node_cache(scene: SceneModel, node_id: str, path: str, prompt: str) -> None:
    """Persist one node's field for reuse in other scenes."""
    module = scene.nodes[node_id]
    meta = {
        "kind": "node_cache",
        "node_id": node_id,
        "prompt": prompt,
        "trained_steps": scene.step,
        "source_seed": scene.seed,
        "field_config": _field_config_to_dict(scene.config.field),
    }
    checkpoints.write_blob_file(path, checkpoints.NODE_MAGIC, meta, _module_arrays(module))


def load_node_cache(path: str) -> tuple[LocalField, dict]:
    """Rebuild a LocalField from a cache file; returns (field, provenance)."""
    try:
        meta, arrays = checkpoints.read_blob_file(path, checkpoints.NODE_MAGIC)
    except FileNotFoundError as exc:
        raise MissingCache(f"node cache not found: {path}") from exc
    except VersionMismatch as exc:
        raise CacheVersionMismatch(str(exc)) from exc
    try:
        cfg = _field_config_from_dict(meta["field_config"])
    except (KeyError, TypeError) as exc:
        raise CacheVersionMismatch(f"node cache metadata incomplete: {exc}") from exc
    module = LocalField(cfg, seed=0, name=f"cache/{meta.get('node_id', '?')}")
    try:
        _load_module_arrays(module, arrays, f"node cache {path!r}")
    except VersionMismatch as exc:
        raise CacheVersionMismatch(str(exc)) from exc
    return module, meta


def decompose(scene: SceneModel, layout: Layout, out_dir: str) -> dict[str, str]:
    """Write one cache file per node; returns id -> path."""
    os.makedirs(out_dir, exist_ok=True)
    prompts = {box.id: box.prompt for box in layout.boxes}
    paths = {}
    for node_id in scene.nodes:
        path = os.path.join(out_dir, f"{node_id}.cnrfnode")
        save_node_cache(scene, node_id, path, prompts.get(node_id, ""))
        paths[node_id] = path
    return paths


def recompose(
    layout: Layout,
    config=None,
    seed: int | None = None,
    base_dir: str = ".",
) -> SceneModel:
    """Build a scene from a layout whose boxes may reference cached fields.

    Cached boxes get their saved local field; boxes without a cache_ref get
    a fresh field. Composition calibrators always start zero-initialized,
    since they encode scene-specific context. The result is ready for a
    short finetune (default 1,000 steps).

    Raises:
        MissingCache: a referenced cache file does not exist.
        CacheVersionMismatch: a cache exists but cannot be read safely.
    """
    scene = SceneModel(layout, config, seed)
    for box in layout.boxes:
        if box.cache_ref is None:
            continue
        path = box.cache_ref
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        module, _ = load_node_cache(path)
        module.to(next(scene.nodes[box.id].parameters()).dtype)
        scene.nodes[box.id] = module
    return scene


def save_checkpoint(scene: SceneModel, layout: Layout, path: str) -> None:
    """Write a self-describing scene checkpoint (atomic)."""
    arrays = {name: p.detach().cpu().numpy() for name, p in scene.parameters().items()}
    meta = {
        "kind": "scene",
        "seed": scene.seed,
        "step": scene.step,
        "skipped_steps": scene.skipped_steps,
        "config": scene.config_dict(),
        "layout": json.loads(serialize_layout(layout)),
        "node_ids": sorted(scene.nodes),
    }
    checkpoints.write_blob_file(path, checkpoints.SCENE_MAGIC, meta, arrays)


def load_checkpoint(path: str) -> tuple[SceneModel, Layout]:
    """Rebuild (scene, layout) from a checkpoint; fails closed on damage."""
    meta, arrays = checkpoints.read_blob_file(path, checkpoints.SCENE_MAGIC)
    try:
        layout = parse_layout(json.dumps(meta["layout"]))
        config = SceneModel.config_from_dict(meta["config"])
        seed = int(meta["seed"])
    except (KeyError, TypeError) as exc:
        raise VersionMismatch(f"checkpoint metadata incomplete: {exc}") from exc
    scene = SceneModel(layout, config, seed)
    registry = scene.parameters()
    if set(registry) != set(arrays):
        raise VersionMismatch(
            "checkpoint sections do not match the model built from its own metadata"
        )
    with torch.no_grad():
        for name, p in registry.items():
            arr = torch.from_numpy(arrays[name])
            if tuple(arr.shape) != tuple(p.shape):
                raise VersionMismatch(
                    f"checkpoint section {name} has shape {tuple(arr.shape)}, expected {tuple(p.shape)}"
                )
            p.copy_(arr.to(p.dtype))
    scene.step = int(meta.get("step", 0))
    scene.skipped_steps = int(meta.get("skipped_steps", 0))
    return scene, layout
