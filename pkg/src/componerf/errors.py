"""Exception taxonomy for the engine.

Every error the CLI can surface maps to a documented exit code:
2 for configuration/layout problems, 3 for guidance/transport problems,
4 for checkpoint problems. Contract violations inside the library
(shape or mode misuse) raise ValueError subclasses and are bugs, not
user-facing conditions.
"""

__all__ = [
    "ComponerfError",
    "ConfigError",
    "LayoutError",
    "LayoutSyntaxError",
    "ValidationError",
    "InvariantViolation",
    "UnknownTarget",
    "DecodeUnavailable",
    "MissingTarget",
    "GuidanceError",
    "GuidanceTransportError",
    "ProtocolVersionMismatch",
    "ProviderError",
    "CheckpointError",
    "VersionMismatch",
    "MissingCache",
    "CacheVersionMismatch",
    "ShapeMismatch",
    "WrongMode",
    "RegistryMismatch",
]


class ComponerfError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigError(ComponerfError):
    """Invalid configuration, layout, or unusable capability."""

    exit_code = 2


class LayoutError(ConfigError):
    """Problem with a scene layout document or edit."""


class LayoutSyntaxError(LayoutError):
    """Layout document is not well-formed."""


class ValidationError(LayoutError):
    """Layout violates a structural invariant."""


class InvariantViolation(ValidationError):
    """An edit produced a layout that violates an invariant."""


class UnknownTarget(LayoutError):
    """Edit references a box id that does not exist."""


class DecodeUnavailable(ConfigError):
    """RGB output requested for a latent scene without a decode service."""


class MissingTarget(ConfigError):
    """Oracle evaluation requested without a target scene."""


class GuidanceError(ComponerfError):
    """Base class for guidance provider failures."""

    exit_code = 3


class GuidanceTransportError(GuidanceError):
    """Remote guidance unreachable after retries."""


class ProtocolVersionMismatch(GuidanceError):
    """Response malformed or speaks a different protocol version."""


class ProviderError(GuidanceError):
    """Service-reported failure; message passed through."""


class CheckpointError(ComponerfError):
    """Base class for checkpoint/cache failures."""

    exit_code = 4


class VersionMismatch(CheckpointError):
    """Checkpoint bytes unreadable or from an incompatible format version."""


class MissingCache(CheckpointError):
    """A layout cache_ref does not resolve to a readable node cache."""


class CacheVersionMismatch(CheckpointError):
    """Node cache was written by an incompatible format version."""


class ShapeMismatch(ComponerfError, ValueError):
    """Tensor arguments disagree in shape."""


class WrongMode(ComponerfError, ValueError):
    """Composition op called in the wrong composition mode."""


class RegistryMismatch(ComponerfError, ValueError):
    """Gradient dictionaries cover different parameter registries."""
