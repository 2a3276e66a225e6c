"""Deterministic mock backend built from renderer ground truth.

The mock is registered with each model's rendered views at session setup and
afterwards answers every protocol call from the object-id maps alone:

* text embedding: one-hot sum over the vocabulary axes named in the prompt;
* image embedding: a semantic block holding the view's per-object
  visible-fraction vector (plus a background-share axis) and a geometry
  block holding per-term screen centroids and extents. Text vectors are
  zero in the geometry block, so image-text cosine stays proportional to
  the visible-fraction similarity (verifiable with the visible_fractions
  oracle), while image-image cosine can tell view angles apart the way a
  real encoder would;
* detection: one box per visible instance whose label matches the phrase,
  bounds taken from the object-id map, confidence = clamp(2 x ratio, 0, 1)
  where ratio compares the instance's visible pixels against its unoccluded
  pixel count at the same pose (estimated from a low-resolution solo
  render), so mostly occluded objects fall below the 0.50 box threshold
  while small unobstructed ones stay findable;
* generation: fixed templates (vocabulary lookup, cardinality rules, token
  set algebra, visible-object enumeration).

No wall clock, no randomness, no network I/O.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .. import prompts
from ..errors import BackendError
from .wire import Box

STYLE_TOKENS = ("background", "unknown")
# Mock detection confidence doubles the visible fraction, clamped to [0, 1].
CONFIDENCE_GAIN = 2.0
# Resolution of the per-object solo renders behind occlusion estimates.
SOLO_RENDER_SIZE = 128
# Blend weights for the semantic and geometry blocks of image embeddings;
# their squares sum to 1 so a fully populated embedding stays unit norm.
SEMANTIC_WEIGHT = 0.8
GEOMETRY_WEIGHT = 0.6
# Geometry features per vocabulary term: centroid x, centroid y, extent.
GEOMETRY_FEATURES = 3

_WORD = re.compile(r"[a-zA-Z]+")


def canonical_term(term: str) -> str:
    """Lowercased, naively singularized form used for vocabulary matching."""
    t = term.strip().lower()
    if t.endswith("ies") and len(t) > 4:
        return t[:-3] + "y"
    for suffix in ("ches", "shes", "sses", "xes", "zes"):
        if t.endswith(suffix):
            return t[:-2]
    if t.endswith("s") and not t.endswith("ss") and len(t) > 3:
        return t[:-1]
    return t


@dataclass(frozen=True)
class _ViewTruth:
    object_ids: np.ndarray
    names_by_id: dict[int, str]
    # Per object id, the unoccluded pixel count this pose would show.
    unoccluded: dict[int, float]


class MockBackend:
    """Implements all four backend roles from registered render ground truth."""

    zero_latency = True

    def __init__(self):
        self._vocab: list[str] = []
        self._views: dict[str, _ViewTruth] = {}
        self._embed_cache: dict[str, np.ndarray] = {}

    # --- registration -------------------------------------------------

    def register_model(self, mesh, views) -> None:
        """Index a model's object names and its rendered views by image digest.

        Each object is re-rendered alone at low resolution per pose to learn
        how many pixels it would cover unoccluded.
        """
        from ..renderer import IMAGE_SIZE, render_view

        names_by_id = {
            k: canonical_term(v) for k, v in sorted(mesh.object_names.items())
        }
        for name in names_by_id.values():
            if name not in self._vocab:
                self._vocab.append(name)
        # New vocabulary terms change the embedding layout.
        self._embed_cache.clear()

        solo_meshes = {obj: _solo_mesh(mesh, obj) for obj in sorted(names_by_id)}
        scale = (IMAGE_SIZE / SOLO_RENDER_SIZE) ** 2
        for view in views:
            key = _image_digest(view.rgb)
            present = np.unique(view.object_ids)
            unoccluded: dict[int, float] = {}
            for obj in present[present >= 0]:
                solo = render_view(
                    solo_meshes[int(obj)], view.pose, size=SOLO_RENDER_SIZE
                )
                unoccluded[int(obj)] = float((solo.object_ids >= 0).sum()) * scale
            self._views[key] = _ViewTruth(
                object_ids=view.object_ids,
                names_by_id=names_by_id,
                unoccluded=unoccluded,
            )

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return tuple(self._vocab)

    @property
    def semantic_dimension(self) -> int:
        return len(self._vocab) + len(STYLE_TOKENS)

    @property
    def dimension(self) -> int:
        return self.semantic_dimension + GEOMETRY_FEATURES * len(self._vocab)

    def _axis(self, token: str) -> int:
        term = canonical_term(token)
        if term in self._vocab:
            return self._vocab.index(term)
        return len(self._vocab) + STYLE_TOKENS.index("unknown")

    def _background_axis(self) -> int:
        return len(self._vocab) + STYLE_TOKENS.index("background")

    def _lookup(self, rgb: np.ndarray) -> _ViewTruth | None:
        return self._views.get(_image_digest(rgb))

    # --- embedding ----------------------------------------------------

    def embed_text(self, prompt: str) -> np.ndarray:
        if not prompt:
            raise BackendError("malformed", "empty prompt")
        vec = np.zeros(self.dimension)
        for token in prompt.split(","):
            token = token.strip()
            if token:
                vec[self._axis(token)] += 1.0
        return _unit(vec, self._background_axis())

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        key = _image_digest(rgb)
        cached = self._embed_cache.get(key)
        if cached is not None:
            return cached.copy()
        truth = self._views.get(key)
        semantic = np.zeros(self.semantic_dimension)
        geometry = np.zeros(GEOMETRY_FEATURES * len(self._vocab))
        if truth is not None:
            ids = truth.object_ids
            h, w = ids.shape
            ys, xs = np.nonzero(ids >= 0)
            total_fg = ys.size
            if total_fg:
                vals = ids[ids >= 0]
                counts = np.bincount(vals)
                sum_x = np.bincount(vals, weights=xs)
                sum_y = np.bincount(vals, weights=ys)
                term_pixels: dict[int, float] = {}
                term_x: dict[int, float] = {}
                term_y: dict[int, float] = {}
                for obj, count in enumerate(counts):
                    if not count or obj not in truth.names_by_id:
                        continue
                    axis = self._axis(truth.names_by_id[obj])
                    semantic[axis] += count / total_fg
                    slot = self._vocab.index(truth.names_by_id[obj])
                    term_pixels[slot] = term_pixels.get(slot, 0.0) + count
                    term_x[slot] = term_x.get(slot, 0.0) + sum_x[obj]
                    term_y[slot] = term_y.get(slot, 0.0) + sum_y[obj]
                for slot, pixels in term_pixels.items():
                    base = GEOMETRY_FEATURES * slot
                    geometry[base] = term_x[slot] / pixels / w - 0.5
                    geometry[base + 1] = term_y[slot] / pixels / h - 0.5
                    geometry[base + 2] = np.sqrt(pixels / ids.size)
            semantic[len(self._vocab) + STYLE_TOKENS.index("background")] = (
                1.0 - total_fg / ids.size
            )
        vec = np.zeros(self.dimension)
        sem_norm = float(np.linalg.norm(semantic))
        geo_norm = float(np.linalg.norm(geometry))
        if sem_norm:
            vec[: self.semantic_dimension] = SEMANTIC_WEIGHT * semantic / sem_norm
        if geo_norm:
            vec[self.semantic_dimension :] = GEOMETRY_WEIGHT * geometry / geo_norm
        vec = _unit(vec, self._background_axis())
        self._embed_cache[key] = vec
        return vec.copy()

    # --- detection ------------------------------------------------------

    def detect(
        self, rgb: np.ndarray, phrase: str, box_threshold: float, text_threshold: float
    ) -> list[Box]:
        """One box per visible instance whose label matches the phrase.

        Labels either match exactly (canonical form) or not at all, so the
        text threshold never splits a match; boxes below the box threshold
        are dropped. Confidence doubles the instance's visible-pixel ratio
        against its largest same-radius appearance, clamped to [0, 1].
        """
        if not 0.0 <= box_threshold <= 1.0 or not 0.0 <= text_threshold <= 1.0:
            raise BackendError("malformed", "thresholds must lie in [0, 1]")
        truth = self._lookup(rgb)
        if truth is None:
            return []
        want = canonical_term(phrase)
        ids = truth.object_ids
        if not (ids >= 0).any():
            return []
        boxes = []
        for obj in sorted(truth.names_by_id):
            if truth.names_by_id[obj] != want:
                continue
            rows, cols = np.nonzero(ids == obj)
            if rows.size == 0:
                continue
            expected = truth.unoccluded.get(obj, 0.0)
            if expected <= 0.0:
                continue
            confidence = min(CONFIDENCE_GAIN * rows.size / expected, 1.0)
            if confidence < box_threshold:
                continue
            boxes.append(
                Box(
                    x0=float(cols.min()),
                    y0=float(rows.min()),
                    x1=float(cols.max() + 1),
                    y1=float(rows.max() + 1),
                    confidence=confidence,
                    phrase=phrase,
                )
            )
        return boxes

    # --- text generation ------------------------------------------------

    def generate(self, prompt: str) -> str:
        if not prompt:
            raise BackendError("malformed", "empty prompt")
        question = _template_payload(prompts.ENTITY_EXTRACTION_TEMPLATE, prompt)
        if question is not None:
            return self._extract_entities(question)
        question = _template_payload(prompts.CLASSIFY_TEMPLATE, prompt)
        if question is not None:
            return self._classify(question)
        answers = _template_payload(prompts.COMPARE_TEMPLATE, prompt, token="${ANSWERS}")
        if answers is not None:
            return self._compare(answers)
        return ""

    def _extract_entities(self, question: str) -> str:
        found: list[str] = []
        for token in _WORD.findall(question):
            term = canonical_term(token)
            if term in self._vocab and term not in found:
                found.append(term)
        return ", ".join(found)

    @staticmethod
    def _classify(question: str) -> str:
        q = question.lower()
        counting_cues = ("how many", "count", "number of", "total number")
        return "Counting" if any(cue in q for cue in counting_cues) else "Other"

    @staticmethod
    def _compare(answers_block: str) -> str:
        answers = []
        for line in answers_block.splitlines():
            if ":" in line and line.startswith("Model "):
                answers.append(line.split(":", 1)[1].strip())
        token_sets = [
            {canonical_term(w) for w in _WORD.findall(a.lower())} for a in answers
        ]
        shared = set.intersection(*token_sets) if token_sets else set()
        if shared:
            similarities = "All answers mention: " + ", ".join(sorted(shared)) + "."
        else:
            similarities = "The answers share no common terms."
        distinct_parts = []
        for i, tokens in enumerate(token_sets):
            distinct = sorted(tokens - shared)
            if distinct:
                distinct_parts.append(f"Model {i + 1} mentions: {', '.join(distinct)}")
        if distinct_parts:
            differences = "; ".join(distinct_parts) + "."
        else:
            differences = "No notable differences."
        return f"Similarities: {similarities}\nDifferences: {differences}"

    # --- multimodal -------------------------------------------------------

    def generate_multimodal(self, images, prompt: str) -> str:
        """Enumerate the ground-truth objects visible across the given views."""
        if not prompt:
            raise BackendError("malformed", "empty prompt")
        max_count: dict[str, int] = {}
        max_share: dict[str, float] = {}
        for rgb in images:
            truth = self._lookup(rgb)
            if truth is None:
                continue
            ids = truth.object_ids
            fg = ids >= 0
            total_fg = int(fg.sum())
            if not total_fg:
                continue
            per_name_count: dict[str, int] = {}
            per_name_share: dict[str, float] = {}
            counts = np.bincount(ids[fg])
            for obj, count in enumerate(counts):
                if count and obj in truth.names_by_id:
                    name = truth.names_by_id[obj]
                    per_name_count[name] = per_name_count.get(name, 0) + 1
                    per_name_share[name] = per_name_share.get(name, 0.0) + count / total_fg
            for name, count in per_name_count.items():
                max_count[name] = max(max_count.get(name, 0), count)
                max_share[name] = max(max_share.get(name, 0.0), per_name_share[name])
        if not max_count:
            return "A 3D model with no visible objects."
        parts = [
            f"{name} x{max_count[name]}"
            for name in sorted(max_count, key=lambda n: (-max_share[n], n))
        ]
        return "A 3D model showing: " + ", ".join(parts) + "."


def _solo_mesh(mesh, obj: int):
    from ..assets import MeshModel

    mask = mesh.object_ids == obj
    return MeshModel(
        id=f"{mesh.id}#{obj}",
        triangles=mesh.triangles[mask],
        vertex_colors=mesh.vertex_colors[mask],
        object_ids=np.zeros(int(mask.sum()), dtype=np.int32),
        object_names={0: mesh.object_names.get(obj, str(obj))},
    )


def _unit(vec: np.ndarray, background_axis: int) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec = vec.copy()
        vec[background_axis] = 1.0
        return vec
    return vec / norm


def _image_digest(rgb: np.ndarray) -> str:
    arr = np.ascontiguousarray(rgb)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def _template_payload(template: str, prompt: str, token: str = "${VQ}") -> str | None:
    """Recover the substituted payload if ``prompt`` was built from ``template``."""
    head, _, tail = template.partition(token)
    if prompt.startswith(head) and prompt.endswith(tail):
        end = len(prompt) - len(tail) if tail else len(prompt)
        return prompt[len(head) : end]
    return None
