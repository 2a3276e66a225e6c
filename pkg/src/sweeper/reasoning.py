"""Stage-3 answer generation: question classification, compositional
counting with total-importance fusion, open-ended answering, and
cross-model comparison summaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import prompts
from .errors import AnswerUnavailable, BackendError
from .selection import (
    BOX_THRESHOLD,
    TEXT_THRESHOLD,
    EntitySet,
    SelectedViews,
    retained_boxes,
)

log = logging.getLogger(__name__)

KIND_COUNTING = "Counting"
KIND_OTHER = "Other"

# At most this many views accompany a multimodal request.
MAX_VIEWS_PER_REQUEST = 8


@dataclass(frozen=True)
class AnswerCandidate:
    """One candidate answer: its supporting views, averaged scores, and the
    total importance T = s + o + dNorm + (1 - f)."""

    answer_text: str
    supporting_views: tuple[int, ...]
    s: float
    o: float
    f: float
    d_unique_mean: float
    d_norm: float

    @property
    def total_importance(self) -> float:
        return self.s + self.o + self.d_norm + (1.0 - self.f)

    def to_json(self) -> dict:
        return {
            "answer": self.answer_text,
            "supportingViews": list(self.supporting_views),
            "s": self.s,
            "o": self.o,
            "f": self.f,
            "dUniqueMean": self.d_unique_mean,
            "dNorm": self.d_norm,
            "totalImportance": self.total_importance,
        }


@dataclass(frozen=True)
class ComparisonSummary:
    similarities: str
    differences: str
    source_answers: tuple[str, ...]


def extract_entities(question: str, backend) -> EntitySet:
    """Key noun phrases of the question, in order; falls back to the whole
    question as a single entity when extraction yields nothing."""
    if not question:
        raise ValueError("question must be non-empty")
    reply = backend.generate(prompts.fill(prompts.ENTITY_EXTRACTION_TEMPLATE, question))
    entities = tuple(part.strip() for part in reply.split(",") if part.strip())
    if not entities:
        entities = (question,)
    return EntitySet(entities=entities)


def classify_question(question: str, backend) -> str:
    """Counting iff the question asks for a cardinality; unparseable replies
    default to Other."""
    if not question:
        raise ValueError("question must be non-empty")
    reply = backend.generate(prompts.fill(prompts.CLASSIFY_TEMPLATE, question)).strip()
    lowered = reply.lower()
    if lowered.startswith("counting"):
        return KIND_COUNTING
    if lowered.startswith("other"):
        return KIND_OTHER
    log.warning("unparseable classification reply %r; defaulting to Other", reply)
    return KIND_OTHER


def count_per_view(view, entity: str, backend) -> int:
    """Number of retained boxes for the entity in this view (0 on failure)."""
    if not entity:
        raise ValueError("entity must be non-empty")
    boxes = backend.detect(view.rgb, entity, BOX_THRESHOLD, TEXT_THRESHOLD)
    return len(retained_boxes(view, boxes))


def fuse_counting(per_view_counts: dict[int, int], scores) -> tuple[AnswerCandidate, list[AnswerCandidate]]:
    """Group views by identical count, average their scores, and pick the
    count with the largest total importance.

    Unique-depth means are normalized by the largest group mean. Ties break
    toward the larger supporting group, then the smaller count.
    """
    if not per_view_counts:
        raise ValueError("at least one counted view is required")
    groups: dict[int, list[int]] = {}
    for index in sorted(per_view_counts):
        groups.setdefault(per_view_counts[index], []).append(index)

    d_means = {
        count: float(np.mean([scores.d_unique[i] for i in views]))
        for count, views in groups.items()
    }
    d_max = max(d_means.values())

    candidates = []
    for count in sorted(groups):
        views = groups[count]
        o_vals = [scores.o[i] for i in views]
        candidates.append(
            AnswerCandidate(
                answer_text=str(count),
                supporting_views=tuple(views),
                s=float(np.mean([scores.s[i] for i in views])),
                o=float(np.nan_to_num(np.mean(o_vals))),
                f=float(np.mean([scores.f[i] for i in views])),
                d_unique_mean=d_means[count],
                d_norm=d_means[count] / d_max if d_max > 0 else 0.0,
            )
        )

    winner = max(
        candidates,
        key=lambda c: (
            c.total_importance,
            len(c.supporting_views),
            -int(c.answer_text),
        ),
    )
    return winner, candidates


def answer_counting(selected: SelectedViews, backend) -> tuple[AnswerCandidate, list[AnswerCandidate]]:
    """The fixed counting plan: detect the primary entity per selected view,
    then fuse the per-view counts by total importance."""
    target = selected.entities.entities[0]
    counts = {
        view.index: count_per_view(view, target, backend) for view in selected.views
    }
    return fuse_counting(counts, selected.scores)


def answer_other(selected: SelectedViews, question: str, backend) -> str:
    """Ask the multimodal backend with up to 8 views in descending similarity
    order and the fixed one-sentence template."""
    if not selected.views:
        raise ValueError("at least one selected view is required")
    ordered = sorted(
        selected.views, key=lambda v: (-float(selected.scores.s[v.index]), v.index)
    )
    images = [v.rgb for v in ordered[:MAX_VIEWS_PER_REQUEST]]
    reply = backend.generate_multimodal(
        images, prompts.fill(prompts.MULTIMODAL_ANSWER_TEMPLATE, question)
    )
    if not reply.strip():
        raise AnswerUnavailable("multimodal backend returned an empty answer")
    return reply.strip()


def summarize_comparison(row_answers, backend) -> ComparisonSummary:
    """Similarities/differences over the per-model answers of one row.

    Models are referenced by index name only. Identical answers short-circuit
    to a fixed degenerate summary.
    """
    answers = tuple(row_answers)
    if len(answers) < 2:
        raise ValueError("comparison needs at least two answers")
    if any(not a for a in answers):
        raise ValueError("all model answers must be present")
    if len(set(answers)) == 1:
        return ComparisonSummary(
            similarities=f"All models give the same answer: {answers[0]}",
            differences="No notable differences.",
            source_answers=answers,
        )
    reply = backend.generate(prompts.fill_compare(list(answers)))
    similarities, differences = _parse_comparison(reply)
    return ComparisonSummary(
        similarities=similarities, differences=differences, source_answers=answers
    )


def _parse_comparison(reply: str) -> tuple[str, str]:
    similarities = differences = None
    for line in reply.splitlines():
        stripped = line.strip()
        if stripped.lower().startswith("similarities:"):
            similarities = stripped.split(":", 1)[1].strip()
        elif stripped.lower().startswith("differences:"):
            differences = stripped.split(":", 1)[1].strip()
    if similarities is None or differences is None:
        raise BackendError("malformed", f"unparseable comparison reply: {reply!r}")
    return similarities, differences
