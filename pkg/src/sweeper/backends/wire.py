"""JSON wire format for the model-backend protocol.

Requests and responses are structured JSON over HTTP; images travel as
base64-encoded PNG. Any adapter in any language can implement the five
endpoints: /embed_text, /embed_image, /detect, /generate,
/generate_multimodal.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..errors import BackendError
from ..renderer import rgb_from_png_bytes, rgb_png_bytes

OPS = ("embed_text", "embed_image", "detect", "generate", "generate_multimodal")


@dataclass(frozen=True)
class Box:
    """Detection box in pixel coordinates with confidence and the matched phrase."""

    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float
    phrase: str

    def to_json(self) -> dict:
        return {
            "x0": self.x0,
            "y0": self.y0,
            "x1": self.x1,
            "y1": self.y1,
            "confidence": self.confidence,
            "phrase": self.phrase,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Box":
        try:
            return cls(
                x0=float(obj["x0"]),
                y0=float(obj["y0"]),
                x1=float(obj["x1"]),
                y1=float(obj["y1"]),
                confidence=float(obj["confidence"]),
                phrase=str(obj["phrase"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError("malformed", f"bad box payload: {exc}") from exc


def encode_image(rgb: np.ndarray) -> str:
    return base64.b64encode(rgb_png_bytes(rgb)).decode("ascii")


def decode_image(data: str) -> np.ndarray:
    try:
        return rgb_from_png_bytes(base64.b64decode(data))
    except Exception as exc:
        raise BackendError("malformed", f"bad image payload: {exc}") from exc


def build_request(op: str, **kwargs) -> dict:
    if op == "embed_text":
        return {"prompt": kwargs["prompt"]}
    if op == "embed_image":
        return {"image": encode_image(kwargs["rgb"])}
    if op == "detect":
        return {
            "image": encode_image(kwargs["rgb"]),
            "phrase": kwargs["phrase"],
            "boxThreshold": kwargs["box_threshold"],
            "textThreshold": kwargs["text_threshold"],
        }
    if op == "generate":
        return {"prompt": kwargs["prompt"]}
    if op == "generate_multimodal":
        return {
            "images": [encode_image(im) for im in kwargs["images"]],
            "prompt": kwargs["prompt"],
        }
    raise ValueError(f"unknown op {op!r}")


def build_response(op: str, value) -> dict:
    if op in ("embed_text", "embed_image"):
        return {"vector": [float(x) for x in value]}
    if op == "detect":
        return {"boxes": [b.to_json() for b in value]}
    if op in ("generate", "generate_multimodal"):
        return {"text": value}
    raise ValueError(f"unknown op {op!r}")


def parse_response(op: str, obj: dict):
    if not isinstance(obj, dict):
        raise BackendError("malformed", f"{op}: response is not an object")
    if op in ("embed_text", "embed_image"):
        vec = obj.get("vector")
        if not isinstance(vec, list) or not vec:
            raise BackendError("malformed", f"{op}: missing vector")
        arr = np.asarray(vec, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise BackendError("malformed", f"{op}: non-finite vector")
        return arr
    if op == "detect":
        boxes = obj.get("boxes")
        if not isinstance(boxes, list):
            raise BackendError("malformed", "detect: missing boxes")
        return [Box.from_json(b) for b in boxes]
    if op in ("generate", "generate_multimodal"):
        text = obj.get("text")
        if not isinstance(text, str):
            raise BackendError("malformed", f"{op}: missing text")
        return text
    raise ValueError(f"unknown op {op!r}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def load_schema() -> dict:
    """The published JSON schema for all request/response payloads."""
    text = resources.files("sweeper.backends").joinpath("schema.json").read_text()
    return json.loads(text)
