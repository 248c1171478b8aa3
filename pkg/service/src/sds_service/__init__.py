"""Guidance service: SDS gradients, CLIP scoring, and latent decoding over HTTP."""

from .app import create_app
from .config import ProviderConfig
from .protocol import PROTOCOL_VERSION, ProtocolError

__all__ = ["PROTOCOL_VERSION", "ProtocolError", "ProviderConfig", "create_app"]
