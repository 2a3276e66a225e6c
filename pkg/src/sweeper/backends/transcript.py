"""Backend call transcripts: append-only records that replay bit-exactly.

Each entry stores the full wire-format request and response alongside their
digests; replaying feeds the recorded responses back in order, so the whole
pipeline reproduces byte-identical outputs without touching any model.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BackendError
from . import wire


@dataclass(frozen=True)
class TranscriptEntry:
    index: int
    op: str
    request: dict
    request_digest: str
    response: dict
    response_digest: str
    latency_ms: float

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "op": self.op,
            "request": self.request,
            "requestDigest": self.request_digest,
            "response": self.response,
            "responseDigest": self.response_digest,
            "latencyMs": self.latency_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TranscriptEntry":
        return cls(
            index=obj["index"],
            op=obj["op"],
            request=obj["request"],
            request_digest=obj["requestDigest"],
            response=obj["response"],
            response_digest=obj["responseDigest"],
            latency_ms=obj["latencyMs"],
        )


class TranscriptRecorder:
    """Wraps a backend and appends one entry per call (appends serialized)."""

    def __init__(self, inner):
        self.inner = inner
        self.entries: list[TranscriptEntry] = []
        self._lock = threading.Lock()
        # Deterministic backends record zero latency so transcripts are
        # byte-stable across runs.
        self._measure = not getattr(inner, "zero_latency", False)

    @property
    def zero_latency(self) -> bool:
        return not self._measure

    def _call(self, op: str, value_fn, **request_kwargs):
        request = wire.build_request(op, **request_kwargs)
        start = time.perf_counter() if self._measure else 0.0
        value = value_fn()
        latency = (time.perf_counter() - start) * 1000.0 if self._measure else 0.0
        response = wire.build_response(op, value)
        with self._lock:
            entry = TranscriptEntry(
                index=len(self.entries),
                op=op,
                request=request,
                request_digest=wire.digest(request),
                response=response,
                response_digest=wire.digest(response),
                latency_ms=latency,
            )
            self.entries.append(entry)
        return value

    def embed_text(self, prompt: str) -> np.ndarray:
        return self._call(
            "embed_text", lambda: self.inner.embed_text(prompt), prompt=prompt
        )

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        return self._call("embed_image", lambda: self.inner.embed_image(rgb), rgb=rgb)

    def detect(self, rgb, phrase, box_threshold, text_threshold):
        return self._call(
            "detect",
            lambda: self.inner.detect(rgb, phrase, box_threshold, text_threshold),
            rgb=rgb,
            phrase=phrase,
            box_threshold=box_threshold,
            text_threshold=text_threshold,
        )

    def generate(self, prompt: str) -> str:
        return self._call("generate", lambda: self.inner.generate(prompt), prompt=prompt)

    def generate_multimodal(self, images, prompt: str) -> str:
        return self._call(
            "generate_multimodal",
            lambda: self.inner.generate_multimodal(images, prompt),
            images=images,
            prompt=prompt,
        )


class ReplayBackend:
    """Feeds recorded responses back in order, verifying request digests."""

    zero_latency = True

    def __init__(self, entries: list[TranscriptEntry]):
        self.entries = list(entries)
        self._cursor = 0
        self._lock = threading.Lock()

    def _next(self, op: str, request: dict):
        with self._lock:
            if self._cursor >= len(self.entries):
                raise BackendError("malformed", f"transcript exhausted at {op} call")
            entry = self.entries[self._cursor]
            self._cursor += 1
        if entry.op != op:
            raise BackendError(
                "malformed", f"transcript divergence: expected {entry.op}, got {op}"
            )
        if wire.digest(request) != entry.request_digest:
            raise BackendError(
                "malformed", f"transcript divergence: request digest mismatch at {op}"
            )
        return wire.parse_response(op, entry.response)

    def embed_text(self, prompt: str):
        return self._next("embed_text", wire.build_request("embed_text", prompt=prompt))

    def embed_image(self, rgb):
        return self._next("embed_image", wire.build_request("embed_image", rgb=rgb))

    def detect(self, rgb, phrase, box_threshold, text_threshold):
        request = wire.build_request(
            "detect",
            rgb=rgb,
            phrase=phrase,
            box_threshold=box_threshold,
            text_threshold=text_threshold,
        )
        return self._next("detect", request)

    def generate(self, prompt: str):
        return self._next("generate", wire.build_request("generate", prompt=prompt))

    def generate_multimodal(self, images, prompt: str):
        request = wire.build_request("generate_multimodal", images=images, prompt=prompt)
        return self._next("generate_multimodal", request)


def save_transcript(path: str | Path, entries, header: dict | None = None) -> None:
    """JSON-lines transcript file; an optional header precedes the entries."""
    lines = []
    if header is not None:
        lines.append(wire.canonical_json({"kind": "header", **header}))
    for entry in entries:
        lines.append(wire.canonical_json({"kind": "entry", **entry.to_json()}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_transcript(path: str | Path) -> tuple[dict | None, list[TranscriptEntry]]:
    import json

    header = None
    entries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        kind = obj.pop("kind", "entry")
        if kind == "header":
            header = obj
        else:
            entries.append(TranscriptEntry.from_json(obj))
    return header, entries
