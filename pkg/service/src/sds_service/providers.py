"""Gradient providers: deterministic stubs and the real diffusion path.

The stubs are pure functions of the request, so retried requests (same
request id, same payload) get byte-identical responses without any
bookkeeping. The diffusion provider imports its heavy dependencies lazily;
a server running in stub mode never loads them.
"""

import hashlib
import threading

import numpy as np

from .config import ProviderConfig
from .protocol import PROVIDER_ERROR, ProtocolError

LATENT_CHANNELS = 4
SCHEDULE_STEPS = 1000


def bilinear_upsample_x2(image: np.ndarray) -> np.ndarray:
    """Double both spatial dimensions with edge-clamped bilinear weights.

    Output sample centers sit at input coordinates (k - 0.5) / 2 for even k
    and (k + 0.5) / 2 for odd k, which is a fixed 3:1 blend of the two
    nearest rows or columns.
    """

    def along_rows(a: np.ndarray) -> np.ndarray:
        lo = np.concatenate([a[:1], a[:-1]], axis=0)
        hi = np.concatenate([a[1:], a[-1:]], axis=0)
        even = 0.75 * a + 0.25 * lo
        odd = 0.75 * a + 0.25 * hi
        out = np.empty((2 * a.shape[0],) + a.shape[1:], dtype=a.dtype)
        out[0::2] = even
        out[1::2] = odd
        return out

    up = along_rows(image.astype(np.float32))
    return along_rows(up.transpose(1, 0, 2)).transpose(1, 0, 2)


def _digest(*parts: bytes) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "big")


class StubProvider:
    """Dependency-free provider with three behaviors.

    echo: gradient equals the input image.
    perfect-denoiser: gradient is identically zero, the fixed point of
        score distillation (the predicted noise matches the injected noise).
    fixed-vector: every pixel's gradient is the configured channel vector.
    """

    stub = True

    def __init__(self, config: ProviderConfig):
        if config.stub_mode is None:
            raise ValueError("StubProvider needs a stub_mode")
        self.config = config
        self.tag = f"stub:{config.stub_mode}"

    def _pick_t(self, prompt: str, image: np.ndarray, t: int | None) -> int:
        if t is not None:
            return t
        lo, hi = self.config.t_range
        span = hi - lo + 1
        return lo + _digest(prompt.encode(), image.tobytes()) % span

    def sds_grad(
        self,
        image: np.ndarray,
        prompt: str,
        view: tuple[float, float],
        t: int | None,
        request_id: str | None,
    ) -> tuple[np.ndarray, int]:
        mode = self.config.stub_mode
        t_used = self._pick_t(prompt, image, t)
        if mode == "echo":
            return image.astype(np.float32), t_used
        if mode == "perfect-denoiser":
            return np.zeros_like(image, dtype=np.float32), t_used
        vector = np.asarray(self.config.fixed_vector, dtype=np.float32)
        if vector.shape[0] != image.shape[2]:
            raise ProtocolError(
                PROVIDER_ERROR,
                f"fixed vector has {vector.shape[0]} channels, image has {image.shape[2]}",
                status=500,
            )
        return np.broadcast_to(vector, image.shape).astype(np.float32), t_used

    def clip_scores(self, prompt: str, frames: list[np.ndarray]) -> list[float]:
        """Pseudo-scores in [20, 40), a stable hash of prompt and pixels."""
        return [
            20.0 + (_digest(prompt.encode(), f.astype("<f4").tobytes()) % 2000) / 100.0
            for f in frames
        ]

    def decode(self, latent: np.ndarray) -> np.ndarray:
        rgb = bilinear_upsample_x2(latent[:, :, :3])
        return np.clip(rgb, 0.0, 1.0).astype(np.float32)


class DiffusionProvider:
    """Latent diffusion guidance: noise the latent, predict, return the error.

    The gradient is w(t) * (predicted_noise - injected_noise) with
    classifier-free guidance at the configured scale and w(t) = 1 - alpha_bar_t.
    Model calls are serialized; one model instance serves one request at a
    time while the HTTP layer queues the rest.
    """

    stub = False

    def __init__(self, config: ProviderConfig):
        self.config = config
        self.tag = config.model_tag
        self._lock = threading.Lock()
        self._pipeline = None

    def _load(self):
        if self._pipeline is not None:
            return self._pipeline
        try:
            import torch
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:
            raise ProtocolError(
                PROVIDER_ERROR,
                f"diffusion dependencies unavailable ({exc}); install the 'full' extra "
                "or run with a stub mode",
                status=500,
            ) from exc
        pipeline = StableDiffusionPipeline.from_pretrained(
            self.config.model_tag, torch_dtype=torch.float32
        )
        pipeline = pipeline.to(self.config.device)
        pipeline.unet.eval()
        self._pipeline = pipeline
        return pipeline

    def sds_grad(self, image, prompt, view, t, request_id):
        with self._lock:
            pipe = self._load()
            import torch

            scheduler = pipe.scheduler
            lo, hi = self.config.t_range
            if t is None:
                t = int(torch.randint(lo, hi + 1, (1,)).item())
            latent = torch.from_numpy(image).permute(2, 0, 1)[None].to(self.config.device)
            with torch.no_grad():
                if hasattr(pipe, "encode_prompt"):
                    cond, uncond = pipe.encode_prompt(
                        prompt, self.config.device, 1, True, ""
                    )
                    text_emb = torch.cat([uncond, cond])
                else:
                    text_emb = pipe._encode_prompt(
                        prompt, self.config.device, 1, True, ""
                    )
                noise = torch.randn_like(latent)
                alphas = scheduler.alphas_cumprod.to(self.config.device)
                a_bar = alphas[t]
                noisy = a_bar.sqrt() * latent + (1 - a_bar).sqrt() * noise
                latent_in = torch.cat([noisy, noisy])
                pred = pipe.unet(
                    latent_in, t, encoder_hidden_states=text_emb
                ).sample
                uncond, cond = pred.chunk(2)
                pred = uncond + self.config.guidance_scale * (cond - uncond)
                grad = (1 - a_bar) * (pred - noise)
            out = grad[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)
        return out, t

    def clip_scores(self, prompt, frames):
        with self._lock:
            try:
                import torch
                from transformers import CLIPModel, CLIPProcessor
            except ImportError as exc:
                raise ProtocolError(
                    PROVIDER_ERROR,
                    f"CLIP dependencies unavailable ({exc})",
                    status=500,
                ) from exc
            model = CLIPModel.from_pretrained("openai/clip-vit-base-patch16")
            processor = CLIPProcessor.from_pretrained("openai/clip-vit-base-patch16")
            images = [np.clip(f * 255.0, 0, 255).astype(np.uint8) for f in frames]
            inputs = processor(
                text=[prompt], images=images, return_tensors="pt", padding=True
            )
            with torch.no_grad():
                out = model(**inputs)
                text = out.text_embeds / out.text_embeds.norm(dim=-1, keepdim=True)
                image = out.image_embeds / out.image_embeds.norm(dim=-1, keepdim=True)
                sims = (image @ text.T).squeeze(1)
            return [float(100.0 * s) for s in sims]

    def decode(self, latent):
        with self._lock:
            pipe = self._load()
            import torch

            scaled = torch.from_numpy(latent).permute(2, 0, 1)[None]
            scaled = scaled.to(self.config.device) / pipe.vae.config.scaling_factor
            with torch.no_grad():
                image = pipe.vae.decode(scaled).sample
            image = (image / 2 + 0.5).clamp(0, 1)
        return image[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)


def make_provider(config: ProviderConfig):
    if config.stub_mode is not None:
        return StubProvider(config)
    return DiffusionProvider(config)
