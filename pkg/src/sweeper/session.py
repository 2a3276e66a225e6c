"""Four-model sessions and their editable table: question rows, per-model
answers, similarities/differences, persistence and export."""

from __future__ import annotations

import csv
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import reasoning
from .assets import MeshModel, compute_aabb, load_mesh
from .backends import BackendSet, resolve_backend_set
from .errors import BackendError, SweeperError, TooManyModels
from .renderer import SampledView, save_rgb_png
from .selection import SelectedViews, select_views
from .viewgrid import ViewGrid, build_view_grid, render_grid

MAX_MODELS = 4

CELL_PENDING = "pending"
CELL_OK = "ok"
CELL_LOW_CONFIDENCE = "lowConfidence"
CELL_ERROR = "error"


@dataclass
class SessionModel:
    """One loaded model slot: mesh, cached view grid, and rendered views."""

    index: int
    path: str
    mesh: MeshModel
    grid: ViewGrid
    views: list[SampledView]

    @property
    def label(self) -> str:
        return f"Model {self.index}"


@dataclass(frozen=True)
class Cell:
    status: str
    answer: str | None = None
    error: str | None = None
    timing_ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "answer": self.answer,
            "error": self.error,
            "timingMs": self.timing_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Cell":
        return cls(
            status=obj["status"],
            answer=obj.get("answer"),
            error=obj.get("error"),
            timing_ms=obj.get("timingMs", 0.0),
        )


@dataclass(frozen=True)
class TableRow:
    row_id: int
    question: str
    cells: tuple[Cell, ...]
    similarities: str | None
    differences: str | None
    traces: tuple[dict, ...] = ()

    def is_final(self) -> bool:
        return all(c.status != CELL_PENDING for c in self.cells)

    def to_json(self, include_traces: bool = True) -> dict:
        obj = {
            "rowId": self.row_id,
            "question": self.question,
            "cells": [c.to_json() for c in self.cells],
            "similarities": self.similarities,
            "differences": self.differences,
        }
        if include_traces:
            obj["traces"] = list(self.traces)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "TableRow":
        return cls(
            row_id=obj["rowId"],
            question=obj["question"],
            cells=tuple(Cell.from_json(c) for c in obj["cells"]),
            similarities=obj.get("similarities"),
            differences=obj.get("differences"),
            traces=tuple(obj.get("traces", ())),
        )


@dataclass
class Session:
    id: str
    models: list[SessionModel]
    created_at: str
    backends: BackendSet
    store_dir: Path | None = None
    rows: list[TableRow] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def table_json(self) -> dict:
        """The full table as served to the frontend, including accessible
        per-cell label strings that always carry the model index."""
        columns = (
            ["Question"]
            + [m.label for m in self.models]
            + ["Similarities", "Differences"]
        )
        rows = []
        for row in self.rows:
            cells = []
            for model, cell in zip(self.models, row.cells):
                cells.append(
                    {
                        **cell.to_json(),
                        "modelIndex": model.index,
                        "ariaLabel": f"{model.label}: {_cell_text(cell)}",
                    }
                )
            rows.append(
                {
                    "rowId": row.row_id,
                    "question": row.question,
                    "cells": cells,
                    "similarities": row.similarities,
                    "differences": row.differences,
                }
            )
        return {
            "sessionId": self.id,
            "models": [
                {"index": m.index, "label": m.label, "meshId": m.mesh.id}
                for m in self.models
            ],
            "columns": columns,
            "rows": rows,
        }


def _cell_text(cell: Cell) -> str:
    if cell.status == CELL_PENDING:
        return "pending"
    if cell.status == CELL_ERROR:
        return f"Error: {cell.error}"
    return cell.answer or ""


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def create_session(
    model_paths,
    backends: BackendSet | None = None,
    store_dir: str | Path | None = None,
    session_id: str | None = None,
    now_fn=None,
) -> Session:
    """Load 1-4 models, render and cache their 42-view grids, and register
    ground truth with any mock backends. Fails atomically on a bad model."""
    paths = [str(p) for p in model_paths]
    if not paths:
        raise ValueError("a session needs at least one model")
    if len(paths) > MAX_MODELS:
        raise TooManyModels(f"{len(paths)} models exceed the limit of {MAX_MODELS}")
    backends = backends or resolve_backend_set()

    models = []
    for i, path in enumerate(paths, start=1):
        mesh = load_mesh(path)
        grid = build_view_grid(compute_aabb(mesh))
        views = render_grid(mesh, grid)
        models.append(SessionModel(index=i, path=path, mesh=mesh, grid=grid, views=views))

    for mock in backends.mocks():
        for model in models:
            mock.register_model(model.mesh, model.views)

    session = Session(
        id=session_id or uuid.uuid4().hex,
        models=models,
        created_at=(now_fn or _utc_now)(),
        backends=backends,
        store_dir=Path(store_dir) if store_dir else None,
    )
    if session.store_dir:
        _persist_header(session)
    return session


def _session_dir(session: Session) -> Path:
    assert session.store_dir is not None
    return session.store_dir / session.id


def _persist_header(session: Session) -> None:
    root = _session_dir(session)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": "session",
        "id": session.id,
        "createdAt": session.created_at,
        "models": [
            {"index": m.index, "label": m.label, "meshId": m.mesh.id, "path": m.path}
            for m in session.models
        ],
    }
    with (root / "session.jsonl").open("w") as fh:
        fh.write(_canonical(header) + "\n")
    for model in session.models:
        view_dir = root / "views" / f"model{model.index}"
        view_dir.mkdir(parents=True, exist_ok=True)
        for view in model.views:
            save_rgb_png(view, view_dir / f"{view.index}.png")


def _persist_row(session: Session, row: TableRow) -> None:
    if not session.store_dir:
        return
    event = {"kind": "row", **row.to_json()}
    with (_session_dir(session) / "session.jsonl").open("a") as fh:
        fh.write(_canonical(event) + "\n")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def ask(session: Session, question: str) -> TableRow:
    """Answer one question across all models and append the completed row.

    Backend failures mark only the affected cell as an error; rows are
    immutable once appended. One question is in flight per session.
    """
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    question = question.strip()
    with session.lock:
        cells: list[Cell] = []
        traces: list[dict] = []
        for model in session.models:
            start = time.perf_counter()
            try:
                cell, trace = _answer_for_model(session, model, question)
            except BackendError as exc:
                cell, trace = Cell(status=CELL_ERROR, error=str(exc)), {}
            except SweeperError as exc:
                cell, trace = Cell(status=CELL_ERROR, error=str(exc)), {}
            if not session.backends.zero_latency:
                elapsed = (time.perf_counter() - start) * 1000.0
                cell = Cell(
                    status=cell.status,
                    answer=cell.answer,
                    error=cell.error,
                    timing_ms=round(elapsed, 3),
                )
            cells.append(cell)
            traces.append(trace)

        similarities = differences = None
        answered = [c.answer for c in cells if c.status in (CELL_OK, CELL_LOW_CONFIDENCE)]
        if len(session.models) >= 2 and len(answered) == len(session.models):
            try:
                summary = reasoning.summarize_comparison(answered, session.backends.textgen)
                similarities, differences = summary.similarities, summary.differences
            except BackendError as exc:
                similarities = differences = f"Error: {exc}"

        row = TableRow(
            row_id=len(session.rows),
            question=question,
            cells=tuple(cells),
            similarities=similarities,
            differences=differences,
            traces=tuple(traces),
        )
        session.rows.append(row)
        _persist_row(session, row)
        return row


def _answer_for_model(session: Session, model: SessionModel, question: str):
    selected = select_views(model.views, model.grid, question, session.backends)
    kind = reasoning.classify_question(question, session.backends.textgen)
    trace = selected.trace()
    trace["question"] = question
    trace["questionKind"] = kind
    if kind == reasoning.KIND_COUNTING:
        winner, candidates = reasoning.answer_counting(selected, session.backends.detection)
        answer = winner.answer_text
        trace["candidates"] = [c.to_json() for c in candidates]
        trace["winner"] = winner.to_json()
    else:
        try:
            answer = reasoning.answer_other(selected, question, session.backends.multimodal)
        except SweeperError as exc:
            return Cell(status=CELL_ERROR, error=str(exc)), trace
    status = CELL_LOW_CONFIDENCE if selected.low_confidence else CELL_OK
    return Cell(status=status, answer=answer), trace


def export_session(session: Session, format: str, path: str | Path) -> Path:
    """Write the session as lossless JSON or a flat CSV table."""
    path = Path(path)
    fmt = format.upper()
    if fmt == "JSON":
        path.write_text(json.dumps(session_export_json(session), indent=2, sort_keys=True) + "\n")
    elif fmt == "CSV":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["question"]
                + [m.label for m in session.models]
                + ["similarities", "differences"]
            )
            for row in session.rows:
                writer.writerow(
                    [row.question]
                    + [_cell_text(c) for c in row.cells]
                    + [row.similarities or "", row.differences or ""]
                )
    else:
        raise ValueError(f"unknown export format {format!r}")
    return path


def session_export_json(session: Session) -> dict:
    return {
        "id": session.id,
        "createdAt": session.created_at,
        "models": [
            {"index": m.index, "label": m.label, "meshId": m.mesh.id, "path": m.path}
            for m in session.models
        ],
        "rows": [row.to_json() for row in session.rows],
    }


def import_session_export(path: str | Path) -> dict:
    """Reload an exported JSON session; table contents round-trip losslessly."""
    return json.loads(Path(path).read_text())


def load_session(
    store_dir: str | Path, session_id: str, backends: BackendSet | None = None
) -> Session:
    """Rebuild a persisted session from its JSONL event log.

    Meshes are reloaded from their recorded paths and views re-rendered
    (rendering is deterministic), so the reloaded session can keep answering.
    """
    store_dir = Path(store_dir)
    log_path = store_dir / session_id / "session.jsonl"
    header = None
    rows: list[TableRow] = []
    for line in log_path.read_text().splitlines():
        if not line.strip():
            continue
        event = json.loads(line)
        if event["kind"] == "session":
            header = event
        elif event["kind"] == "row":
            rows.append(TableRow.from_json(event))
    if header is None:
        raise ValueError(f"{log_path}: missing session header")

    session = create_session(
        [m["path"] for m in header["models"]],
        backends=backends,
        session_id=header["id"],
        now_fn=lambda: header["createdAt"],
    )
    session.store_dir = store_dir
    session.rows = rows
    return session
