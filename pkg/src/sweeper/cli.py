"""Command-line entry point: offline pipeline runs, view dumps, the HTTP
service, and transcript replay."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .assets import build_load_report, compute_aabb, load_mesh
from .backends import BackendSet, ReplayBackend, TranscriptRecorder, resolve_backend_set
from .backends.transcript import load_transcript, save_transcript
from .errors import SweeperError
from .renderer import save_depth_png, save_rgb_png
from .session import ask, create_session
from .viewgrid import build_view_grid, render_grid


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SweeperError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sweeper",
        description="Question-conditioned view selection and VQA over 3D models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ask = sub.add_parser("ask", help="answer one question over one or more models")
    p_ask.add_argument("--models", nargs="+", required=True, metavar="PATH")
    p_ask.add_argument("--question", required=True)
    group = p_ask.add_mutually_exclusive_group()
    group.add_argument("--mock", action="store_true", help="force the mock backend")
    group.add_argument("--backend", metavar="URL", help="remote backend base URL")
    p_ask.add_argument("--trace", metavar="OUT.json", help="write the selection trace")
    p_ask.add_argument(
        "--transcript", metavar="OUT.jsonl", help="record a replayable backend transcript"
    )
    p_ask.set_defaults(func=cmd_ask)

    p_render = sub.add_parser("render", help="dump all 42 views of a model")
    p_render.add_argument("--model", required=True, metavar="PATH")
    p_render.add_argument("--out", required=True, metavar="DIR")
    p_render.set_defaults(func=cmd_render)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--config", metavar="FILE", default=None)
    p_serve.set_defaults(func=cmd_serve)

    p_replay = sub.add_parser("replay", help="re-run a pipeline from a transcript")
    p_replay.add_argument("--transcript", required=True, metavar="FILE")
    p_replay.set_defaults(func=cmd_replay)

    return parser


def _row_lines(session, row) -> list[str]:
    lines = [f"Question: {row.question}"]
    for model, cell in zip(session.models, row.cells):
        if cell.status == "error":
            lines.append(f"{model.label}: Error: {cell.error}")
        else:
            lines.append(f"{model.label}: {cell.answer}")
    if row.similarities is not None:
        lines.append(f"Similarities: {row.similarities}")
    if row.differences is not None:
        lines.append(f"Differences: {row.differences}")
    return lines


def cmd_ask(args) -> int:
    backends = resolve_backend_set(mock=args.mock, backend_url=args.backend)
    recorder = None
    if args.transcript:
        recorder = TranscriptRecorder(backends.embedding)
        backends = BackendSet.single(recorder)
    session = create_session(args.models, backends=backends)
    row = ask(session, args.question)
    for line in _row_lines(session, row):
        print(line)
    if args.trace:
        trace = {
            "question": row.question,
            "models": [
                {"label": m.label, "trace": t}
                for m, t in zip(session.models, row.traces)
            ],
        }
        Path(args.trace).write_text(json.dumps(trace, indent=2, sort_keys=True) + "\n")
    if recorder is not None:
        header = {
            "models": [str(p) for p in args.models],
            "question": args.question,
            "result": row.to_json(),
        }
        save_transcript(args.transcript, recorder.entries, header=header)
    return 0


def cmd_render(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = load_mesh(args.model)
    grid = build_view_grid(compute_aabb(mesh))
    views = render_grid(mesh, grid)
    for view in views:
        save_rgb_png(view, out / f"view_{view.index:02d}.png")
        save_depth_png(view, out / f"depth_{view.index:02d}.png")
    (out / "grid.json").write_text(json.dumps(grid.to_json(), indent=2) + "\n")
    (out / "load_report.json").write_text(
        json.dumps(build_load_report(mesh), indent=2) + "\n"
    )
    print(f"wrote {len(views)} views to {out}")
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, run

    run(ServiceConfig.load(args.config))
    return 0


def cmd_replay(args) -> int:
    header, entries = load_transcript(args.transcript)
    if not header or "models" not in header or "question" not in header:
        print("error: transcript lacks a header with models and question", file=sys.stderr)
        return 1
    backends = BackendSet.single(ReplayBackend(entries))
    session = create_session(header["models"], backends=backends)
    row = ask(session, header["question"])
    recorded = json.dumps(header.get("result"), sort_keys=True)
    replayed = json.dumps(row.to_json(), sort_keys=True)
    if recorded == replayed:
        print("identical")
        return 0
    print("error: replay diverged from the recorded result", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
