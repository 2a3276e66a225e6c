import json
from pathlib import Path

import pytest
from scenes import counting_scene, desk_scene

from sweeper.backends import BackendSet, MockBackend
from sweeper.errors import BackendError, TooManyModels
from sweeper.session import (
    CELL_ERROR,
    CELL_OK,
    ask,
    create_session,
    export_session,
    import_session_export,
    load_session,
    session_export_json,
)


@pytest.fixture(scope="module")
def scene_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    paths = []
    for k, n in enumerate((1, 2)):
        paths.append(str(counting_scene(seed=40 + k, instances=n).write_obj(root / f"m{k}.obj")))
    return paths


def mock_backends():
    return BackendSet.single(MockBackend())


EPOCH = "2026-01-01T00:00:00+00:00"


def test_create_session_renders_grids(scene_paths):
    session = create_session(scene_paths, backends=mock_backends())
    assert len(session.models) == 2
    for model in session.models:
        assert len(model.views) == 42
        assert model.label in ("Model 1", "Model 2")


def test_create_session_limits(scene_paths, tmp_path):
    with pytest.raises(TooManyModels):
        create_session([scene_paths[0]] * 5, backends=mock_backends())
    with pytest.raises(ValueError):
        create_session([], backends=mock_backends())


def test_create_session_bad_model_fails(tmp_path):
    bad = tmp_path / "bad.obj"
    bad.write_text("")
    from sweeper.errors import ParseError

    with pytest.raises(ParseError):
        create_session([str(bad)], backends=mock_backends())


def test_ask_counting_two_models(scene_paths):
    session = create_session(scene_paths, backends=mock_backends())
    row = ask(session, "how many boxes are on the board?")
    assert [c.answer for c in row.cells] == ["1", "2"]
    assert all(c.status == CELL_OK for c in row.cells)
    assert row.similarities is not None
    assert row.differences is not None
    assert len(session.rows) == 1


def test_ask_appends_rows_immutably(scene_paths):
    session = create_session(scene_paths, backends=mock_backends())
    first = ask(session, "how many boxes are on the board?")
    second = ask(session, "how many boxes are on the board?")
    assert [r.row_id for r in session.rows] == [0, 1]
    assert session.rows[0] is first
    assert second.row_id == 1
    assert first.cells == second.cells


def test_single_model_skips_comparison(scene_paths):
    session = create_session(scene_paths[:1], backends=mock_backends())
    row = ask(session, "how many boxes are on the board?")
    assert row.similarities is None
    assert row.differences is None


class BrokenMultimodal:
    zero_latency = True

    def generate_multimodal(self, images, prompt):
        raise BackendError("remote", "backend is down")


def test_backend_failure_marks_cell_error(scene_paths, tmp_path):
    mock = MockBackend()
    backends = BackendSet(
        embedding=mock, detection=mock, textgen=mock, multimodal=BrokenMultimodal()
    )
    session = create_session(
        scene_paths,
        backends=backends,
        store_dir=tmp_path,
        session_id="err",
        now_fn=lambda: EPOCH,
    )
    row = ask(session, "What does the board look like?")
    assert all(c.status == CELL_ERROR for c in row.cells)
    assert all("backend is down" in c.error for c in row.cells)
    assert row.similarities is None
    # The failed row is still persisted.
    log = (tmp_path / "err" / "session.jsonl").read_text().splitlines()
    assert len(log) == 2


def test_ask_validates_question(scene_paths):
    session = create_session(scene_paths[:1], backends=mock_backends())
    with pytest.raises(ValueError):
        ask(session, "   ")


def test_persistence_byte_identical_runs(scene_paths, tmp_path):
    logs = []
    for run in range(2):
        store = tmp_path / f"run{run}"
        session = create_session(
            scene_paths,
            backends=mock_backends(),
            store_dir=store,
            session_id="fixed",
            now_fn=lambda: EPOCH,
        )
        ask(session, "how many boxes are on the board?")
        ask(session, "What does the board look like?")
        logs.append((store / "fixed" / "session.jsonl").read_bytes())
    assert logs[0] == logs[1]


def test_persisted_views_layout(scene_paths, tmp_path):
    session = create_session(
        scene_paths[:1],
        backends=mock_backends(),
        store_dir=tmp_path,
        session_id="layout",
        now_fn=lambda: EPOCH,
    )
    views_dir = tmp_path / "layout" / "views" / "model1"
    assert len(list(views_dir.glob("*.png"))) == 42


def test_reload_renders_identical_table(scene_paths, tmp_path):
    session = create_session(
        scene_paths,
        backends=mock_backends(),
        store_dir=tmp_path,
        session_id="reload",
        now_fn=lambda: EPOCH,
    )
    ask(session, "how many boxes are on the board?")
    original = json.dumps(session.table_json(), sort_keys=True)

    restored = load_session(tmp_path, "reload", backends=mock_backends())
    assert json.dumps(restored.table_json(), sort_keys=True) == original
    # The reloaded session can continue answering.
    row = ask(restored, "how many boxes are on the board?")
    assert row.row_id == 1


def test_export_json_roundtrip(scene_paths, tmp_path):
    session = create_session(
        scene_paths, backends=mock_backends(), session_id="exp", now_fn=lambda: EPOCH
    )
    ask(session, "how many boxes are on the board?")
    out = export_session(session, "JSON", tmp_path / "session.json")
    again = import_session_export(out)
    assert again == session_export_json(session)


def test_export_empty_session(scene_paths, tmp_path):
    session = create_session(scene_paths[:1], backends=mock_backends())
    out = export_session(session, "CSV", tmp_path / "empty.csv")
    lines = Path(out).read_text().strip().splitlines()
    assert len(lines) == 1  # header only
    out_json = export_session(session, "JSON", tmp_path / "empty.json")
    assert import_session_export(out_json)["rows"] == []


def test_export_csv_layout(scene_paths, tmp_path):
    session = create_session(scene_paths, backends=mock_backends())
    ask(session, "how many boxes are on the board?")
    ask(session, "What does the board look like?")
    out = export_session(session, "CSV", tmp_path / "t.csv")
    import csv

    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["question", "Model 1", "Model 2", "similarities", "differences"]
    assert len(rows) == 3
    assert all(len(r) == 1 + 2 + 2 for r in rows)


def test_table_json_aria_labels(scene_paths):
    session = create_session(scene_paths, backends=mock_backends())
    ask(session, "how many boxes are on the board?")
    table = session.table_json()
    assert table["columns"][0] == "Question"
    for row in table["rows"]:
        for cell in row["cells"]:
            assert cell["ariaLabel"].startswith(f"Model {cell['modelIndex']}: ")


def test_comparison_requires_all_final(scene_paths):
    mock = MockBackend()
    backends = BackendSet(
        embedding=mock, detection=mock, textgen=mock, multimodal=BrokenMultimodal()
    )
    session = create_session(scene_paths, backends=backends)
    row = ask(session, "What does the board look like?")
    assert row.similarities is None and row.differences is None


def test_timing_zero_under_mock(scene_paths):
    session = create_session(scene_paths[:1], backends=mock_backends())
    row = ask(session, "how many boxes are on the board?")
    assert row.cells[0].timing_ms == 0.0
