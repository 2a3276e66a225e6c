"""Stage-2 view selection: similarity, flatness, z-filters, duplicate
removal, and object relevance over the 42 sampled views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends.wire import Box
from .renderer import SampledView
from .viewgrid import ViewGrid

# Detection thresholds, slightly above the detector defaults.
BOX_THRESHOLD = 0.50
TEXT_THRESHOLD = 0.35
# Image-embedding cosine above this marks a repetitive view.
DUP_COSINE_THRESHOLD = 0.95
# A box covering the whole model silhouette carries no object evidence.
FULL_SILHOUETTE_IOU = 0.95

STATUS_KEPT = "kept"
STATUS_REJECTED_SIMILARITY = "rejectedSimilarity"
STATUS_REJECTED_FLATNESS = "rejectedFlatness"
STATUS_REJECTED_DUPLICATE = "rejectedDuplicate"
STATUS_REJECTED_OBJECT = "rejectedObject"


@dataclass(frozen=True)
class EntitySet:
    """Key noun phrases of a question and their comma-joined comparative prompt."""

    entities: tuple[str, ...]

    @property
    def comparative_prompt(self) -> str:
        return ", ".join(self.entities)


@dataclass(frozen=True)
class DetectionResult:
    """All retained boxes for one view plus the max confidence per entity."""

    boxes: tuple[Box, ...]
    per_entity_confidence: dict[str, float]

    def to_json(self) -> dict:
        return {
            "boxes": [b.to_json() for b in self.boxes],
            "perEntityConfidence": dict(self.per_entity_confidence),
        }


@dataclass
class ViewScoreSet:
    """Per-view scores and the filter stage each view ended in.

    ``o`` is NaN for views rejected before object scoring.
    """

    s: np.ndarray
    f: np.ndarray
    o: np.ndarray
    d_unique: np.ndarray
    status: list[str]

    def kept_indices(self) -> list[int]:
        return [i for i, st in enumerate(self.status) if st == STATUS_KEPT]

    def to_json(self) -> dict:
        return {
            "perView": [
                {
                    "index": i,
                    "s": float(self.s[i]),
                    "f": float(self.f[i]),
                    "o": None if np.isnan(self.o[i]) else float(self.o[i]),
                    "dUnique": int(self.d_unique[i]),
                    "status": self.status[i],
                }
                for i in range(len(self.status))
            ]
        }


@dataclass
class SelectedViews:
    """Final question-relevant views (ascending index) with full provenance."""

    views: list[SampledView]
    scores: ViewScoreSet
    entities: EntitySet
    detections: dict[int, DetectionResult] = field(default_factory=dict)
    low_confidence: bool = False

    @property
    def indices(self) -> list[int]:
        return [v.index for v in self.views]

    def trace(self) -> dict:
        trace = self.scores.to_json()
        trace["entities"] = list(self.entities.entities)
        trace["comparativePrompt"] = self.entities.comparative_prompt
        trace["selected"] = self.indices
        trace["lowConfidence"] = self.low_confidence
        trace["detections"] = {
            str(i): d.to_json() for i, d in sorted(self.detections.items())
        }
        return trace


def score_similarity(views, prompt: str, backend) -> np.ndarray:
    """Cosine similarity of each view's image embedding to the prompt embedding."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    embeddings = image_embeddings(views, backend)
    return cosine_to_prompt(embeddings, backend.embed_text(prompt))


def image_embeddings(views, backend) -> np.ndarray:
    return np.stack([np.asarray(backend.embed_image(v.rgb), dtype=np.float64) for v in views])


def cosine_to_prompt(embeddings: np.ndarray, text_vec: np.ndarray) -> np.ndarray:
    return np.array([_cosine(e, text_vec) for e in embeddings])


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def z_filter(values, mode: str) -> list[int]:
    """Indices surviving the z-score filter.

    rejectLow drops z < -1, rejectHigh drops z > +1; a zero standard
    deviation keeps everything. The extreme-best value always has z of the
    safe sign, so the kept set is never empty.
    """
    if mode not in ("rejectLow", "rejectHigh"):
        raise ValueError(f"unknown mode {mode!r}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("z_filter needs at least one value")
    sigma = float(arr.std())
    if sigma == 0.0:
        return list(range(arr.size))
    z = (arr - arr.mean()) / sigma
    # Two-value inputs land exactly on |z| = 1; the guard keeps rounding noise
    # from flipping that boundary.
    guard = 1.0 + 1e-12
    if mode == "rejectLow":
        kept = np.nonzero(z >= -guard)[0]
    else:
        kept = np.nonzero(z <= guard)[0]
    return [int(i) for i in kept]


def compute_flatness(s, grid: ViewGrid) -> np.ndarray:
    """Average L1 difference of similarity between each view and its lattice
    neighbors; computed over all grid views before any rejection."""
    arr = np.asarray(s, dtype=np.float64)
    if arr.size != len(grid.poses):
        raise ValueError("similarity must cover every grid view")
    f = np.empty_like(arr)
    for i, site in enumerate(grid.lattice):
        diffs = [abs(arr[i] - arr[j]) for j in site.neighbors]
        f[i] = sum(diffs) / len(diffs)
    return f


def dedup_views(views, s, backend, embeddings=None) -> list[int]:
    """Greedy duplicate removal in descending similarity order.

    Returns surviving positions into ``views``; a view is dropped when its
    image embedding aligns with any survivor above the duplicate threshold.
    """
    if len(views) == 0:
        raise ValueError("dedup_views needs at least one view")
    if embeddings is None:
        embeddings = image_embeddings(views, backend)
    order = sorted(range(len(views)), key=lambda i: (-float(s[i]), views[i].index))
    survivors: list[int] = []
    for i in order:
        duplicate = any(
            _cosine(embeddings[i], embeddings[j]) > DUP_COSINE_THRESHOLD
            for j in survivors
        )
        if not duplicate:
            survivors.append(i)
    return sorted(survivors)


def silhouette_bbox(view: SampledView) -> tuple[float, float, float, float] | None:
    """Pixel-bound box of all non-background pixels; None if the view is empty."""
    rows, cols = np.nonzero(view.object_ids >= 0)
    if rows.size == 0:
        return None
    return (float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1))


def box_iou(a, b) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def retained_boxes(view: SampledView, boxes) -> list[Box]:
    """Drop boxes that perfectly overlap the whole model silhouette."""
    sil = silhouette_bbox(view)
    if sil is None:
        return list(boxes)
    return [
        b for b in boxes if box_iou((b.x0, b.y0, b.x1, b.y1), sil) <= FULL_SILHOUETTE_IOU
    ]


def object_score(views, entities: EntitySet, backend):
    """Mean detection confidence of the key entities per view.

    Per entity the best retained box counts; a failed recognition contributes
    a zero-confidence box. Returns (o per view, DetectionResult per view).
    """
    if not entities.entities:
        raise ValueError("entities must be non-empty")
    o = np.empty(len(views))
    results: list[DetectionResult] = []
    for k, view in enumerate(views):
        kept_boxes: list[Box] = []
        per_entity: dict[str, float] = {}
        for entity in entities.entities:
            boxes = retained_boxes(
                view, backend.detect(view.rgb, entity, BOX_THRESHOLD, TEXT_THRESHOLD)
            )
            if boxes:
                per_entity[entity] = max(b.confidence for b in boxes)
                kept_boxes.extend(boxes)
            else:
                per_entity[entity] = 0.0
                kept_boxes.append(Box(0.0, 0.0, 0.0, 0.0, 0.0, entity))
        o[k] = float(np.mean(list(per_entity.values())))
        results.append(
            DetectionResult(boxes=tuple(kept_boxes), per_entity_confidence=per_entity)
        )
    return o, results


def select_views(views, grid: ViewGrid, question: str, backends) -> SelectedViews:
    """Run the full Stage-2 pipeline over grid-rendered views.

    Order: entity extraction, similarity, z-filter(s, rejectLow), flatness,
    z-filter(f, rejectHigh), duplicate removal, object score,
    z-filter(o, rejectLow). Never returns an empty selection: if a stage
    would empty the set, the single best-similarity view is kept and the
    result is flagged low-confidence.
    """
    from .reasoning import extract_entities
    from .renderer import unique_depth

    if not question:
        raise ValueError("question must be non-empty")
    if len(views) != len(grid.poses):
        raise ValueError("expected one rendered view per grid pose")

    entities = extract_entities(question, backends.textgen)

    embeddings = image_embeddings(views, backends.embedding)
    text_vec = backends.embedding.embed_text(entities.comparative_prompt)
    s = cosine_to_prompt(embeddings, text_vec)
    f = compute_flatness(s, grid)
    d_unique = np.array([unique_depth(v) for v in views], dtype=np.int64)
    status = [STATUS_KEPT] * len(views)
    scores = ViewScoreSet(s=s, f=f, o=np.full(len(views), np.nan), d_unique=d_unique, status=status)

    def fallback() -> SelectedViews:
        best = int(np.argmax(s))
        for i in range(len(status)):
            if status[i] == STATUS_KEPT and i != best:
                status[i] = STATUS_REJECTED_SIMILARITY
        status[best] = STATUS_KEPT
        return SelectedViews(
            views=[views[best]], scores=scores, entities=entities, low_confidence=True
        )

    kept = list(range(len(views)))

    def apply(surviving_positions: list[int], rejected_status: str) -> None:
        nonlocal kept
        survivors = {kept[p] for p in surviving_positions}
        for i in kept:
            if i not in survivors:
                status[i] = rejected_status
        kept = sorted(survivors)

    apply(z_filter(s, "rejectLow"), STATUS_REJECTED_SIMILARITY)
    if not kept:
        return fallback()

    apply(z_filter(f[kept], "rejectHigh"), STATUS_REJECTED_FLATNESS)
    if not kept:
        return fallback()

    kept_views = [views[i] for i in kept]
    apply(
        dedup_views(kept_views, s[kept], backends.embedding, embeddings=embeddings[kept]),
        STATUS_REJECTED_DUPLICATE,
    )
    if not kept:
        return fallback()

    kept_views = [views[i] for i in kept]
    o_vals, det_results = object_score(kept_views, entities, backends.detection)
    detections = {view.index: det_results[p] for p, view in enumerate(kept_views)}
    for p, i in enumerate(kept):
        scores.o[i] = o_vals[p]
    apply(z_filter(o_vals, "rejectLow"), STATUS_REJECTED_OBJECT)
    if not kept:
        return fallback()

    return SelectedViews(
        views=[views[i] for i in kept],
        scores=scores,
        entities=entities,
        detections={views[i].index: detections[views[i].index] for i in kept},
        low_confidence=False,
    )
