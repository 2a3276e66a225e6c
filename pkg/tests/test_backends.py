import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scenes import desk_scene

from sweeper.assets import compute_aabb
from sweeper.backends import (
    BackendDescriptor,
    BackendSet,
    MockBackend,
    RemoteBackend,
    ReplayBackend,
    TranscriptRecorder,
)
from sweeper.backends import wire
from sweeper.backends.server import wire_app
from sweeper.backends.transcript import load_transcript, save_transcript
from sweeper.backends.mock import canonical_term
from sweeper.errors import BackendError
from sweeper.renderer import visible_fractions
from sweeper.viewgrid import build_view_grid, render_grid
from sweeper import prompts


@pytest.fixture(scope="module")
def desk_truth():
    mesh = desk_scene(seed=1, displays=2).build()
    grid = build_view_grid(compute_aabb(mesh))
    views = render_grid(mesh, grid)
    mock = MockBackend()
    mock.register_model(mesh, views)
    return mesh, grid, views, mock


# --- mock: embeddings ------------------------------------------------------


def test_canonical_term_singularizes():
    assert canonical_term("displays") == "display"
    assert canonical_term("Desks ") == "desk"
    assert canonical_term("handles") == "handle"
    assert canonical_term("boxes") == "box"
    assert canonical_term("bus") == "bus"


def test_embed_text_one_hot_sum(desk_truth):
    _, _, _, mock = desk_truth
    vec = mock.embed_text("display, desk")
    d_axis = mock.vocabulary.index("display")
    k_axis = mock.vocabulary.index("desk")
    expected = np.zeros(mock.dimension)
    expected[d_axis] = expected[k_axis] = 1.0
    expected /= np.linalg.norm(expected)
    assert np.allclose(vec, expected)
    assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_embed_text_unknown_token_uses_reserved_axis(desk_truth):
    _, _, _, mock = desk_truth
    vec = mock.embed_text("zeppelin")
    assert np.linalg.norm(vec) == pytest.approx(1.0)
    assert vec[len(mock.vocabulary) + 1] == pytest.approx(1.0)


def test_embed_image_unregistered_is_background_axis(desk_truth):
    _, _, _, mock = desk_truth
    blank = np.full((512, 512, 3), 255, dtype=np.uint8)
    vec = mock.embed_image(blank)
    assert vec[len(mock.vocabulary)] == pytest.approx(1.0)
    assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_embed_image_matches_visible_fraction_oracle(desk_truth):
    # The semantic block of an image embedding is exactly the normalized
    # visible-fraction vector (plus background share); the geometry block
    # carries no weight against text embeddings.
    mesh, _, views, mock = desk_truth
    view = views[14 + 1]  # middle radius, first ring station
    fractions = visible_fractions(view, mesh.object_count)
    vec = mock.embed_image(view.rgb)
    expected = np.zeros(mock.semantic_dimension)
    for obj, frac in enumerate(fractions):
        if frac:
            expected[mock.vocabulary.index(canonical_term(mesh.object_names[obj]))] += frac
    expected[len(mock.vocabulary)] = 1.0 - (view.object_ids >= 0).mean()
    expected /= np.linalg.norm(expected)
    semantic = vec[: mock.semantic_dimension]
    assert np.allclose(semantic / np.linalg.norm(semantic), expected)
    assert np.linalg.norm(vec) == pytest.approx(1.0)
    # Image-text cosine is proportional to the fraction-vector similarity.
    text = mock.embed_text("display, desk")
    assert float(vec @ text) == pytest.approx(
        float(semantic @ text[: mock.semantic_dimension])
    )


def test_mock_determinism(desk_truth):
    _, _, views, mock = desk_truth
    a = mock.embed_image(views[3].rgb)
    b = mock.embed_image(views[3].rgb)
    assert np.array_equal(a, b)
    assert mock.generate("x") == mock.generate("x")


# --- mock: detection --------------------------------------------------------


def test_detect_bounds_match_id_map(desk_truth):
    from sweeper.viewgrid import directions, pose_index

    mesh, _, views, mock = desk_truth
    display_ids = [k for k, v in mesh.object_names.items() if v == "display"]
    # Far-radius front view: displays face -z and are fully in frame there.
    view = views[pose_index(directions().index((30.0, 270.0)), 2)]
    assert all((view.object_ids == i).sum() > 200 for i in display_ids)
    boxes = mock.detect(view.rgb, "display", 0.0, 0.35)
    assert len(boxes) == 2
    for box in boxes:
        sel = [
            i
            for i in display_ids
            if np.nonzero(view.object_ids == i)[1].min() == box.x0
        ]
        assert len(sel) == 1
        rows, cols = np.nonzero(view.object_ids == sel[0])
        assert (box.y0, box.x1, box.y1) == (rows.min(), cols.max() + 1, rows.max() + 1)
        assert 0.0 <= box.confidence <= 1.0


def test_detect_no_match_returns_empty(desk_truth):
    _, _, views, mock = desk_truth
    assert mock.detect(views[0].rgb, "giraffe", 0.5, 0.35) == []


def test_detect_threshold_validation(desk_truth):
    _, _, views, mock = desk_truth
    with pytest.raises(BackendError):
        mock.detect(views[0].rgb, "desk", 1.5, 0.35)


def test_detect_fully_visible_instance_confidence_one(desk_truth):
    # In its best same-radius view an unobstructed instance scores 1.0.
    mesh, _, views, mock = desk_truth
    best = None
    for view in views:
        boxes = mock.detect(view.rgb, "display", 0.0, 0.35)
        for box in boxes:
            best = max(best or 0.0, box.confidence)
    assert best == pytest.approx(1.0)


# --- mock: text generation ---------------------------------------------------


def test_generate_entity_extraction(desk_truth):
    _, _, _, mock = desk_truth
    reply = mock.generate(
        prompts.fill(prompts.ENTITY_EXTRACTION_TEMPLATE, "how many displays on the desk?")
    )
    assert reply == "display, desk"


def test_generate_classification(desk_truth):
    _, _, _, mock = desk_truth
    ask = lambda q: mock.generate(prompts.fill(prompts.CLASSIFY_TEMPLATE, q))
    assert ask("how many displays are on the desk") == "Counting"
    assert ask("What does the desk look like?") == "Other"
    assert ask("count the chairs") == "Counting"


def test_generate_comparison_token_algebra(desk_truth):
    _, _, _, mock = desk_truth
    answers = [
        "It is a cruiser bike",
        "It is a mountain bike",
        "It is a BMX bike",
        "It is a BMX bike",
    ]
    reply = mock.generate(prompts.fill_compare(answers))
    sim_line, diff_line = reply.splitlines()
    assert sim_line.startswith("Similarities:")
    assert "bike" in sim_line
    for label in ("cruiser", "mountain", "bmx"):
        assert label in diff_line


def test_generate_multimodal_enumerates_objects(desk_truth):
    mesh, _, views, mock = desk_truth
    frontish = [v for v in views if v.pose.alpha == 30.0]
    reply = mock.generate_multimodal([v.rgb for v in frontish], "describe")
    assert reply.startswith("A 3D model showing: ")
    assert "display x2" in reply
    assert "desk x1" in reply


# --- wire format -------------------------------------------------------------


small_images = st.integers(2, 6).flatmap(
    lambda n: st.binary(min_size=n * n * 3, max_size=n * n * 3).map(
        lambda raw: np.frombuffer(raw, dtype=np.uint8).reshape(n, n, 3).copy()
    )
)

boxes_strategy = st.builds(
    wire.Box,
    x0=st.floats(0, 500, allow_nan=False),
    y0=st.floats(0, 500, allow_nan=False),
    x1=st.floats(0, 512, allow_nan=False),
    y1=st.floats(0, 512, allow_nan=False),
    confidence=st.floats(0, 1, allow_nan=False),
    phrase=st.text(min_size=0, max_size=20),
)


@settings(max_examples=50, deadline=None)
@given(small_images)
def test_image_codec_roundtrip(rgb):
    assert np.array_equal(wire.decode_image(wire.encode_image(rgb)), rgb)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=16))
def test_vector_response_roundtrip(vec):
    payload = json.loads(json.dumps(wire.build_response("embed_text", vec)))
    assert np.allclose(wire.parse_response("embed_text", payload), vec)


@settings(max_examples=50, deadline=None)
@given(st.lists(boxes_strategy, max_size=5))
def test_boxes_response_roundtrip(boxes):
    payload = json.loads(json.dumps(wire.build_response("detect", boxes)))
    assert wire.parse_response("detect", payload) == boxes


@settings(max_examples=50, deadline=None)
@given(st.text(max_size=200))
def test_text_response_roundtrip(text):
    payload = json.loads(json.dumps(wire.build_response("generate", text)))
    assert wire.parse_response("generate", payload) == text


def test_requests_validate_against_schema(desk_truth):
    jsonschema = pytest.importorskip("jsonschema")
    _, _, views, _ = desk_truth
    schema = wire.load_schema()
    cases = {
        "embed_text_request": wire.build_request("embed_text", prompt="desk"),
        "embed_image_request": wire.build_request("embed_image", rgb=views[0].rgb),
        "detect_request": wire.build_request(
            "detect", rgb=views[0].rgb, phrase="desk", box_threshold=0.5, text_threshold=0.35
        ),
        "generate_request": wire.build_request("generate", prompt="hi"),
        "generate_multimodal_request": wire.build_request(
            "generate_multimodal", images=[views[0].rgb], prompt="hi"
        ),
    }
    for name, payload in cases.items():
        jsonschema.validate(payload, {**schema, "$ref": f"#/$defs/{name}"})


def test_parse_response_malformed():
    with pytest.raises(BackendError) as err:
        wire.parse_response("embed_text", {"nope": 1})
    assert err.value.kind == "malformed"
    with pytest.raises(BackendError):
        wire.parse_response("detect", {"boxes": [{"x0": 0}]})


# --- descriptors -------------------------------------------------------------


def test_descriptor_validation():
    d = BackendDescriptor(kind="Embedding")
    assert d.is_mock
    with pytest.raises(ValueError):
        BackendDescriptor(kind="Nope")
    with pytest.raises(ValueError):
        BackendDescriptor(kind="Embedding", timeout=0)


def test_backend_set_resolution_env(monkeypatch):
    from sweeper.backends import resolve_backend_set

    monkeypatch.setenv("SWEEPER_MOCK", "1")
    assert isinstance(resolve_backend_set().embedding, MockBackend)
    monkeypatch.delenv("SWEEPER_MOCK")
    monkeypatch.setenv("SWEEPER_BACKEND_URL", "http://example.invalid:9")
    backend = resolve_backend_set().embedding
    assert isinstance(backend, RemoteBackend)


# --- remote client -----------------------------------------------------------


def _remote(handler, retries=2):
    return RemoteBackend(
        "http://test",
        timeout=1.0,
        retries=retries,
        backoff=0.0,
        transport=httpx.MockTransport(handler),
    )


def test_remote_success_roundtrip():
    def handler(request):
        assert request.url.path == "/embed_text"
        return httpx.Response(200, json={"vector": [0.6, 0.8]})

    vec = _remote(handler).embed_text("desk")
    assert np.allclose(vec, [0.6, 0.8])


def test_remote_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(500, json={"error": {"type": "remote", "message": "boom"}})
        return httpx.Response(200, json={"text": "ok"})

    assert _remote(handler).generate("hello") == "ok"
    assert len(calls) == 3


def test_remote_timeout_exhausts_retries():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectTimeout("slow")

    with pytest.raises(BackendError) as err:
        _remote(handler).generate("hello")
    assert err.value.kind == "timeout"
    assert len(calls) == 3  # initial + 2 retries


def test_remote_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, json={"error": {"type": "malformed", "message": "bad"}})

    with pytest.raises(BackendError) as err:
        _remote(handler).generate("hello")
    assert err.value.kind == "malformed"
    assert len(calls) == 1


def test_remote_malformed_json():
    def handler(request):
        return httpx.Response(200, content=b"not json")

    with pytest.raises(BackendError) as err:
        _remote(handler).generate("hello")
    assert err.value.kind == "malformed"


def test_remote_against_wire_app(desk_truth):
    from server_utils import run_app

    _, _, views, mock = desk_truth
    with run_app(wire_app(mock)) as base_url:
        remote = RemoteBackend(base_url, timeout=10.0)
        try:
            direct = mock.embed_image(views[2].rgb)
            over_http = remote.embed_image(views[2].rgb)
            assert np.allclose(direct, over_http)
            assert remote.detect(views[2].rgb, "desk", 0.5, 0.35) == mock.detect(
                views[2].rgb, "desk", 0.5, 0.35
            )
            assert remote.healthz()
        finally:
            remote.close()


# --- transcripts --------------------------------------------------------------


def test_transcript_record_and_replay(desk_truth, tmp_path):
    _, _, views, mock = desk_truth
    recorder = TranscriptRecorder(mock)
    v1 = recorder.embed_text("display, desk")
    v2 = recorder.embed_image(views[0].rgb)
    boxes = recorder.detect(views[0].rgb, "desk", 0.5, 0.35)
    text = recorder.generate(prompts.fill(prompts.CLASSIFY_TEMPLATE, "how many desks?"))
    assert len(recorder.entries) == 4
    assert all(e.latency_ms == 0.0 for e in recorder.entries)

    path = tmp_path / "t.jsonl"
    save_transcript(path, recorder.entries, header={"question": "how many desks?"})
    header, entries = load_transcript(path)
    assert header["question"] == "how many desks?"

    replay = ReplayBackend(entries)
    assert np.allclose(replay.embed_text("display, desk"), v1)
    assert np.allclose(replay.embed_image(views[0].rgb), v2)
    assert replay.detect(views[0].rgb, "desk", 0.5, 0.35) == boxes
    assert replay.generate(prompts.fill(prompts.CLASSIFY_TEMPLATE, "how many desks?")) == text


def test_replay_divergence_detected(desk_truth):
    _, _, views, mock = desk_truth
    recorder = TranscriptRecorder(mock)
    recorder.embed_text("desk")
    replay = ReplayBackend(recorder.entries)
    with pytest.raises(BackendError):
        replay.embed_text("lamp")


def test_replay_exhaustion_detected(desk_truth):
    _, _, _, mock = desk_truth
    replay = ReplayBackend([])
    with pytest.raises(BackendError):
        replay.generate("anything")


def test_backend_set_single_shares_instance():
    mock = MockBackend()
    bs = BackendSet.single(mock)
    assert bs.embedding is bs.detection is bs.textgen is bs.multimodal
    assert bs.zero_latency
    assert bs.mocks() == [mock]
