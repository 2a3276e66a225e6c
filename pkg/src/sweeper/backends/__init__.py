"""Model backend protocol: role interfaces, descriptors, mock and remote
implementations, and call transcripts."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .mock import MockBackend
from .remote import RemoteBackend
from .transcript import ReplayBackend, TranscriptRecorder
from .wire import Box

BACKEND_KINDS = ("Embedding", "Detection", "TextGen", "Multimodal")

ENV_MOCK = "SWEEPER_MOCK"
ENV_BACKEND_URL = "SWEEPER_BACKEND_URL"


@runtime_checkable
class EmbeddingBackend(Protocol):
    def embed_text(self, prompt: str) -> np.ndarray: ...

    def embed_image(self, rgb: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class DetectionBackend(Protocol):
    def detect(
        self, rgb: np.ndarray, phrase: str, box_threshold: float, text_threshold: float
    ) -> list[Box]: ...


@runtime_checkable
class TextGenBackend(Protocol):
    def generate(self, prompt: str) -> str: ...


@runtime_checkable
class MultimodalBackend(Protocol):
    def generate_multimodal(self, images: Sequence[np.ndarray], prompt: str) -> str: ...


@dataclass(frozen=True)
class BackendDescriptor:
    """How to reach one backend role; endpoint "mock" selects the in-process mock."""

    kind: str
    endpoint: str = "mock"
    timeout: float = 30.0
    retry: int = 2

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @property
    def is_mock(self) -> bool:
        return self.endpoint == "mock"


@dataclass
class BackendSet:
    """The four roles a question pipeline needs; they may share one object."""

    embedding: EmbeddingBackend
    detection: DetectionBackend
    textgen: TextGenBackend
    multimodal: MultimodalBackend

    @classmethod
    def single(cls, backend) -> "BackendSet":
        return cls(
            embedding=backend, detection=backend, textgen=backend, multimodal=backend
        )

    def roles(self) -> dict[str, object]:
        return {
            "embedding": self.embedding,
            "detection": self.detection,
            "textgen": self.textgen,
            "multimodal": self.multimodal,
        }

    @property
    def zero_latency(self) -> bool:
        return all(getattr(b, "zero_latency", False) for b in self.roles().values())

    def mocks(self) -> list[MockBackend]:
        seen: list[MockBackend] = []
        for backend in self.roles().values():
            inner = getattr(backend, "inner", backend)
            if isinstance(inner, MockBackend) and inner not in seen:
                seen.append(inner)
        return seen


def resolve_backend_set(
    mock: bool | None = None, backend_url: str | None = None
) -> BackendSet:
    """Build a backend set from explicit flags or the SWEEPER_* environment.

    Precedence: explicit ``mock`` flag, then explicit URL, then SWEEPER_MOCK=1,
    then SWEEPER_BACKEND_URL, then the in-process mock.
    """
    if mock:
        return BackendSet.single(MockBackend())
    if backend_url:
        return BackendSet.single(RemoteBackend(backend_url))
    if os.environ.get(ENV_MOCK) == "1":
        return BackendSet.single(MockBackend())
    env_url = os.environ.get(ENV_BACKEND_URL)
    if env_url:
        return BackendSet.single(RemoteBackend(env_url))
    return BackendSet.single(MockBackend())


__all__ = [
    "BackendDescriptor",
    "BackendSet",
    "Box",
    "DetectionBackend",
    "EmbeddingBackend",
    "MockBackend",
    "MultimodalBackend",
    "RemoteBackend",
    "ReplayBackend",
    "TextGenBackend",
    "TranscriptRecorder",
    "resolve_backend_set",
]
