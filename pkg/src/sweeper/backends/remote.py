"""HTTP client for the backend wire protocol, with retry and backoff."""

from __future__ import annotations

import time

import httpx
import numpy as np

from ..errors import BackendError
from . import wire

DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 2
BACKOFF_BASE_SECONDS = 0.25


class RemoteBackend:
    """Speaks the wire protocol against a base URL implementing all four roles."""

    zero_latency = False

    def __init__(
        self,
        base_url: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = BACKOFF_BASE_SECONDS,
        transport: httpx.BaseTransport | None = None,
    ):
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(
            base_url=self.base_url, timeout=timeout, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, op: str, payload: dict):
        last: BackendError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(f"/{op}", json=payload)
            except httpx.TimeoutException as exc:
                last = BackendError("timeout", f"{op}: {exc}")
                continue
            except httpx.HTTPError as exc:
                last = BackendError("remote", f"{op}: {exc}")
                continue
            if resp.status_code != 200:
                last = _error_from_response(op, resp)
                # Client errors are not transient; do not retry them.
                if 400 <= resp.status_code < 500:
                    raise last
                continue
            try:
                body = resp.json()
            except ValueError as exc:
                raise BackendError("malformed", f"{op}: non-JSON reply: {exc}") from exc
            return wire.parse_response(op, body)
        assert last is not None
        raise last

    def embed_text(self, prompt: str) -> np.ndarray:
        return self._post("embed_text", wire.build_request("embed_text", prompt=prompt))

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        return self._post("embed_image", wire.build_request("embed_image", rgb=rgb))

    def detect(self, rgb, phrase, box_threshold, text_threshold):
        payload = wire.build_request(
            "detect",
            rgb=rgb,
            phrase=phrase,
            box_threshold=box_threshold,
            text_threshold=text_threshold,
        )
        return self._post("detect", payload)

    def generate(self, prompt: str) -> str:
        return self._post("generate", wire.build_request("generate", prompt=prompt))

    def generate_multimodal(self, images, prompt: str) -> str:
        payload = wire.build_request("generate_multimodal", images=images, prompt=prompt)
        return self._post("generate_multimodal", payload)

    def healthz(self) -> bool:
        try:
            return self._client.get("/healthz").status_code == 200
        except httpx.HTTPError:
            return False


def _error_from_response(op: str, resp: httpx.Response) -> BackendError:
    try:
        err = resp.json().get("error", {})
        kind = err.get("type", "remote")
        message = err.get("message", resp.text)
    except ValueError:
        kind, message = "remote", resp.text
    if kind not in ("timeout", "malformed", "remote"):
        kind = "remote"
    return BackendError(kind, f"{op}: HTTP {resp.status_code}: {message}")
