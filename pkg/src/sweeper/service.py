"""HTTP API over sessions, questions, and selection traces."""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .backends import BackendSet, MockBackend, RemoteBackend, resolve_backend_set
from .errors import ParseError, SweeperError, TooManyModels
from .session import CELL_PENDING, Session, ask, create_session

DEFAULT_LONG_POLL_SECONDS = 60.0

_EPOCH = "1970-01-01T00:00:00+00:00"


@dataclass
class ServiceConfig:
    port: int = 8000
    session_dir: str | None = None
    backend: str = "mock"
    long_poll_seconds: float = DEFAULT_LONG_POLL_SECONDS
    cors_origins: list[str] = field(default_factory=lambda: ["*"])
    deterministic: bool = False
    preload: list[str] = field(default_factory=list)
    preload_session_id: str | None = None

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ServiceConfig":
        """Config file plus SWEEPER_* environment overrides."""
        obj = {}
        if path is not None:
            obj = json.loads(Path(path).read_text())
        cfg = cls(
            port=obj.get("port", 8000),
            session_dir=obj.get("sessionDir"),
            backend=obj.get("backend", "mock"),
            long_poll_seconds=obj.get("longPollSeconds", DEFAULT_LONG_POLL_SECONDS),
            cors_origins=obj.get("corsOrigins", ["*"]),
            deterministic=obj.get("deterministic", False),
            preload=obj.get("preload", []),
            preload_session_id=obj.get("preloadSessionId"),
        )
        if os.environ.get("SWEEPER_MOCK") == "1":
            cfg.backend = "mock"
        elif os.environ.get("SWEEPER_BACKEND_URL"):
            cfg.backend = os.environ["SWEEPER_BACKEND_URL"]
        if os.environ.get("SWEEPER_SESSION_DIR"):
            cfg.session_dir = os.environ["SWEEPER_SESSION_DIR"]
        if os.environ.get("SWEEPER_PORT"):
            cfg.port = int(os.environ["SWEEPER_PORT"])
        return cfg


def _api_error(code: str, message: str, status: int, detail=None) -> JSONResponse:
    error = {"code": code, "message": message}
    if detail is not None:
        error["detail"] = detail
    return JSONResponse({"error": error}, status_code=status)


@dataclass
class _SessionSlot:
    session: Session
    executor: ThreadPoolExecutor
    counter: "itertools.count"
    pending: dict[int, tuple[str, Future]] = field(default_factory=dict)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="sweeper", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    slots: dict[str, _SessionSlot] = {}
    id_counter = itertools.count(1)

    def new_backends() -> BackendSet:
        if config.backend == "mock":
            return BackendSet.single(MockBackend())
        return resolve_backend_set(backend_url=config.backend)

    def open_session(paths: list[str], session_id: str | None) -> Session:
        if config.deterministic and session_id is None:
            session_id = f"session-{next(id_counter)}"
        session = create_session(
            paths,
            backends=new_backends(),
            store_dir=config.session_dir,
            session_id=session_id,
            now_fn=(lambda: _EPOCH) if config.deterministic else None,
        )
        # One worker per session keeps question processing strictly FIFO.
        slots[session.id] = _SessionSlot(
            session=session,
            executor=ThreadPoolExecutor(max_workers=1),
            counter=itertools.count(0),
        )
        return session

    for path in config.preload:
        if not Path(path).exists():
            raise ParseError(f"preload model not found: {path}")
    if config.preload:
        open_session(config.preload, config.preload_session_id)

    def get_slot(session_id: str) -> _SessionSlot | None:
        return slots.get(session_id)

    def pending_row_json(slot: _SessionSlot, row_id: int) -> dict:
        question = slot.pending[row_id][0]
        cells = [
            {
                "status": CELL_PENDING,
                "answer": None,
                "error": None,
                "timingMs": 0.0,
                "modelIndex": m.index,
                "ariaLabel": f"{m.label}: pending",
            }
            for m in slot.session.models
        ]
        return {
            "rowId": row_id,
            "question": question,
            "cells": cells,
            "similarities": None,
            "differences": None,
            "pending": True,
        }

    def final_row_json(slot: _SessionSlot, row_id: int) -> dict:
        table_row = slot.session.table_json()["rows"][row_id]
        table_row["pending"] = False
        return table_row

    @app.post("/sessions")
    async def post_sessions(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _api_error("BadRequest", "body must be JSON", 400)
        paths = body.get("models")
        if not isinstance(paths, list) or not paths:
            return _api_error("BadRequest", "body.models must be a non-empty list", 400)
        try:
            session = open_session([str(p) for p in paths], body.get("sessionId"))
        except TooManyModels as exc:
            return _api_error("BadRequest", str(exc), 400)
        except SweeperError as exc:
            return _api_error("BadRequest", f"model load failed: {exc}", 400)
        return JSONResponse(
            {
                "sessionId": session.id,
                "models": [
                    {"index": m.index, "label": m.label, "meshId": m.mesh.id}
                    for m in session.models
                ],
            },
            status_code=201,
        )

    @app.post("/sessions/{session_id}/questions")
    async def post_question(session_id: str, request: Request):
        slot = get_slot(session_id)
        if slot is None:
            return _api_error("NotFound", f"unknown session {session_id}", 404)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _api_error("BadRequest", "body must be JSON", 400)
        question = (body.get("question") or "").strip()
        if not question:
            return _api_error("BadRequest", "body.question must be non-empty", 400)
        mode = body.get("mode", "wait")
        if mode not in ("wait", "poll"):
            return _api_error("BadRequest", f"unknown mode {mode!r}", 400)

        row_id = next(slot.counter)
        future = slot.executor.submit(ask, slot.session, question)
        slot.pending[row_id] = (question, future)

        def finalize():
            slot.pending.pop(row_id, None)

        if mode == "poll":
            future.add_done_callback(lambda _f: finalize())
            return JSONResponse({"rowId": row_id, "pending": True}, status_code=202)
        try:
            from anyio import to_thread

            await to_thread.run_sync(
                lambda: future.result(timeout=config.long_poll_seconds)
            )
        except FutureTimeout:
            future.add_done_callback(lambda _f: finalize())
            return JSONResponse({"rowId": row_id, "pending": True}, status_code=202)
        except SweeperError as exc:
            finalize()
            return _api_error("BackendUnavailable", str(exc), 502)
        except Exception as exc:  # pragma: no cover - defensive
            finalize()
            return _api_error("Internal", str(exc), 500)
        finalize()
        return JSONResponse(final_row_json(slot, row_id))

    @app.get("/sessions/{session_id}/table")
    async def get_table(session_id: str):
        slot = get_slot(session_id)
        if slot is None:
            return _api_error("NotFound", f"unknown session {session_id}", 404)
        return JSONResponse(slot.session.table_json())

    @app.get("/sessions/{session_id}/rows/{row_id}")
    async def get_row(session_id: str, row_id: int):
        slot = get_slot(session_id)
        if slot is None:
            return _api_error("NotFound", f"unknown session {session_id}", 404)
        if row_id < len(slot.session.rows):
            return JSONResponse(final_row_json(slot, row_id))
        if row_id in slot.pending:
            return JSONResponse(pending_row_json(slot, row_id))
        return _api_error("NotFound", f"unknown row {row_id}", 404)

    @app.get("/sessions/{session_id}/rows/{row_id}/trace")
    async def get_trace(session_id: str, row_id: int):
        slot = get_slot(session_id)
        if slot is None:
            return _api_error("NotFound", f"unknown session {session_id}", 404)
        if row_id >= len(slot.session.rows):
            return _api_error("NotFound", f"no completed row {row_id}", 404)
        row = slot.session.rows[row_id]
        return JSONResponse({"rowId": row.row_id, "traces": list(row.traces)})

    @app.get("/healthz")
    async def healthz():
        components = {}
        probe = new_backends()
        for role, backend in probe.roles().items():
            if isinstance(backend, RemoteBackend):
                components[role] = "ok" if backend.healthz() else "unreachable"
            else:
                components[role] = "ok"
        status = "ok" if all(v == "ok" for v in components.values()) else "degraded"
        return JSONResponse({"status": status, "components": components})

    app.state.config = config
    app.state.slots = slots
    return app


def load_service_schema() -> dict:
    text = resources.files("sweeper").joinpath("service_schema.json").read_text()
    return json.loads(text)


def run(config: ServiceConfig) -> None:  # pragma: no cover - exercised via CLI
    import uvicorn

    uvicorn.run(create_app(config), host="127.0.0.1", port=config.port, log_level="warning")
