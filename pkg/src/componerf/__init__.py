"""Compositional radiance fields: multi-object 3D scenes from box layouts.

A scene is a set of axis-aligned boxes, each holding one learned radiance
field conditioned on its own text prompt, plus residual calibrators that
reconcile the per-object fields into one coherent global render. Training
is guided per view by a pluggable provider (a photometric mock oracle or a
remote score-distillation service); trained objects can be cached to disk
and recomposed into edited layouts.
"""

from .errors import (
    CacheVersionMismatch,
    ComponerfError,
    ConfigError,
    DecodeUnavailable,
    GuidanceError,
    GuidanceTransportError,
    InvariantViolation,
    LayoutError,
    LayoutSyntaxError,
    MissingCache,
    MissingTarget,
    ProtocolVersionMismatch,
    ProviderError,
    RegistryMismatch,
    ShapeMismatch,
    UnknownTarget,
    ValidationError,
    VersionMismatch,
    WrongMode,
)
from .layout import (
    Box3,
    Diagnostic,
    Layout,
    LayoutEdit,
    apply_edit,
    load_layout,
    parse_layout,
    serialize_layout,
    validate_layout,
)
from .encoding import HashGridConfig, hash_encode, sh_encode
from .fields import CompositionConfig, CompositionParams, LocalField, LocalFieldConfig
from .geometry import Ray, RayBundle, SampleRng, build_sample_batch, ray_box_intersect
from .rendering import (
    Camera,
    ImageBuffer,
    TEST_RESOLUTION,
    TRAIN_RESOLUTION,
    generate_rays,
    psnr,
    render_image,
    render_views,
    sample_camera,
)
from .optim import (
    AdamState,
    LossWeights,
    RenderTape,
    adam_step,
    assemble_total_gradient,
    backward_from_image_grad,
    sparsity_loss,
)
from .guidance import (
    GuidanceRequest,
    GuidanceResponse,
    MockGuidance,
    RemoteGuidance,
    augment_prompt,
    mock_guidance,
)
from .scene import SceneConfig, SceneModel
from .training import (
    TrainConfig,
    decompose,
    load_checkpoint,
    recompose,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Box3",
    "CacheVersionMismatch",
    "Camera",
    "ComponerfError",
    "CompositionConfig",
    "CompositionParams",
    "ConfigError",
    "DecodeUnavailable",
    "Diagnostic",
    "GuidanceError",
    "GuidanceRequest",
    "GuidanceResponse",
    "GuidanceTransportError",
    "HashGridConfig",
    "ImageBuffer",
    "InvariantViolation",
    "Layout",
    "LayoutEdit",
    "LayoutError",
    "LayoutSyntaxError",
    "LocalField",
    "LocalFieldConfig",
    "LossWeights",
    "MissingCache",
    "MissingTarget",
    "MockGuidance",
    "ProtocolVersionMismatch",
    "ProviderError",
    "Ray",
    "RayBundle",
    "RegistryMismatch",
    "RemoteGuidance",
    "RenderTape",
    "SampleRng",
    "SceneConfig",
    "SceneModel",
    "ShapeMismatch",
    "TEST_RESOLUTION",
    "TRAIN_RESOLUTION",
    "TrainConfig",
    "UnknownTarget",
    "ValidationError",
    "VersionMismatch",
    "WrongMode",
    "adam_step",
    "apply_edit",
    "assemble_total_gradient",
    "augment_prompt",
    "backward_from_image_grad",
    "build_sample_batch",
    "decompose",
    "generate_rays",
    "hash_encode",
    "load_checkpoint",
    "load_layout",
    "mock_guidance",
    "parse_layout",
    "psnr",
    "ray_box_intersect",
    "recompose",
    "render_image",
    "render_views",
    "sample_camera",
    "save_checkpoint",
    "serialize_layout",
    "sh_encode",
    "sparsity_loss",
    "train",
    "validate_layout",
    "__version__",
]
