"""Provider configuration."""

from dataclasses import dataclass

STUB_MODES = ("echo", "perfect-denoiser", "fixed-vector")


@dataclass(frozen=True)
class ProviderConfig:
    """How gradients are produced.

    ``stub_mode`` selects a deterministic, dependency-free provider: "echo"
    returns the input image as its own gradient, "perfect-denoiser" returns
    zeros (a denoiser that exactly recovers the injected noise), and
    "fixed-vector" broadcasts ``fixed_vector`` over every pixel. ``None``
    selects the diffusion provider, which needs the ``full`` extra installed
    plus model weights; nothing in the stub path touches those.

    ``t_range`` bounds the noise timestep on a 1000-step schedule; the
    default covers the middle 96 percent, skipping the degenerate ends.
    ``guidance_scale`` only applies to the diffusion provider.
    """

    model_tag: str = "stable-diffusion-v1-4"
    guidance_scale: float = 100.0
    t_range: tuple[int, int] = (20, 980)
    device: str = "cpu"
    stub_mode: str | None = "perfect-denoiser"
    fixed_vector: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.stub_mode is not None and self.stub_mode not in STUB_MODES:
            raise ValueError(
                f"stub_mode must be one of {STUB_MODES} or None, got {self.stub_mode!r}"
            )
        lo, hi = self.t_range
        if not (0 <= lo <= hi < 1000):
            raise ValueError(f"t_range must satisfy 0 <= lo <= hi < 1000, got {self.t_range}")
