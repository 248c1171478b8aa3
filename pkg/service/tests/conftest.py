"""Shared fixtures: in-process test clients and a real HTTP server."""

import threading
import time

import numpy as np
import pytest
import uvicorn
from fastapi.testclient import TestClient

from sds_service import ProviderConfig, create_app
from sds_service.protocol import PROTOCOL_VERSION, encode_image


class LiveServer:
    """Run the app on a real socket so external HTTP clients can reach it."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self.url = ""

    def __enter__(self) -> "LiveServer":
        uv_config = uvicorn.Config(
            create_app(self.config), host="127.0.0.1", port=0, log_level="error"
        )
        self.server = uvicorn.Server(uv_config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.thread.start()
        deadline = time.monotonic() + 10.0
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start within 10s")
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.url = f"http://127.0.0.1:{port}"
        return self

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5.0)


@pytest.fixture
def make_client():
    def factory(**kwargs) -> TestClient:
        return TestClient(create_app(ProviderConfig(**kwargs)))

    return factory


@pytest.fixture
def client(make_client) -> TestClient:
    return make_client(stub_mode="perfect-denoiser")


@pytest.fixture
def live_server():
    def factory(**kwargs) -> LiveServer:
        return LiveServer(ProviderConfig(**kwargs))

    return factory


def latent(height=8, width=8, channels=4, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((height, width, channels)).astype(np.float32)


def grad_body(image: np.ndarray, prompt="a small ceramic fox", **overrides) -> dict:
    body = {
        "protocol_version": PROTOCOL_VERSION,
        "prompt": prompt,
        "height": image.shape[0],
        "width": image.shape[1],
        "channels": image.shape[2],
        "view": {"azimuth": 30.0, "elevation": 15.0},
        "image_b64": encode_image(image),
    }
    body.update(overrides)
    return body


def frame_payload(image: np.ndarray) -> dict:
    return {
        "height": image.shape[0],
        "width": image.shape[1],
        "channels": image.shape[2],
        "image_b64": encode_image(image),
    }
