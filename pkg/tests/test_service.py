"""Tests for the HTTP session service."""

import base64
import hashlib
import json
import threading
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

import morphoforge.service as service_module
from fixtures import make_turtle
from morphoforge.gateway import RecordBackend
from morphoforge.mjcf import parse
from morphoforge.pipeline import DesignSession, human_feedback, run_full
from morphoforge.service import create_app
from scripting import ScriptedBackend, edits_response, full_script

TRANSCRIPTS = Path(__file__).resolve().parent.parent / "transcripts"
MANIFEST = json.loads((TRANSCRIPTS / "manifest.json").read_text())
RABBIT_LABEL = MANIFEST["designs"]["rabbit"]["label"]
CRAB_LABEL = MANIFEST["designs"]["crab"]["label"]
TURTLE_LABEL = MANIFEST["designs"]["turtle"]["label"]
RABBIT_REF = (TRANSCRIPTS / "refs" / "rabbit.png").read_bytes()
RABBIT_REF_B64 = base64.b64encode(RABBIT_REF).decode()
TURTLE_REF_B64 = base64.b64encode((TRANSCRIPTS / "refs" / "turtle.png").read_bytes()).decode()

RESOURCE_KEYS = {
    "id", "label", "stage", "locked", "busy",
    "visual_rounds_used", "visual_rounds_remaining",
    "human_prompts_used", "human_prompts_remaining",
    "snapshot_count", "snapshot_index", "model_url", "render_urls",
    "reference_url", "error",
}


def wait_idle(client, session_id, timeout=60.0):
    """Poll until the background pipeline thread has finished."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = client.get(f"/sessions/{session_id}").json()
        if not body["busy"]:
            return body
        time.sleep(0.05)
    raise AssertionError("session stayed busy past the deadline")


def make_rabbit(client, transcript="rabbit"):
    response = client.post("/sessions", json={
        "label": RABBIT_LABEL, "transcript": transcript,
        "reference_b64": RABBIT_REF_B64,
    })
    assert response.status_code == 201
    return response.json()["id"]


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    # transcript cut off mid-build, to drive the background error path
    broken = root / "broken.jsonl"
    lines = (TRANSCRIPTS / "turtle.jsonl").read_text().splitlines()[:3]
    broken.write_text("\n".join(lines) + "\n")
    app = create_app(root / "data", transcripts={
        "rabbit": TRANSCRIPTS / "rabbit.jsonl",
        "reject": TRANSCRIPTS / "rabbit_reject.jsonl",
        "crab": TRANSCRIPTS / "crab.jsonl",
        "broken": broken,
    })
    return TestClient(app), app, root / "data"


@pytest.fixture(scope="module")
def rabbit(service):
    """One completed rabbit session shared by the read-only tests."""
    client, _, _ = service
    response = client.post("/sessions", json={
        "label": RABBIT_LABEL, "transcript": "rabbit",
        "reference_b64": RABBIT_REF_B64,
    })
    assert response.status_code == 201
    created = response.json()
    idle = wait_idle(client, created["id"])
    return created, idle


@pytest.fixture(scope="module")
def small_service(tmp_path_factory):
    """Service over a transcript recorded at a small render size, with a
    referenceless turtle run and three scripted human rounds."""
    root = tmp_path_factory.mktemp("small")
    transcript = root / "budget.jsonl"
    turtle = make_turtle()
    rounds = [edits_response([{"op": "set_color", "node": "torso",
                               "rgba": [0.2, 0.2 + 0.1 * i, 0.2, 1.0]}]) for i in range(3)]
    backend = RecordBackend(ScriptedBackend(full_script(turtle) + rounds), transcript)
    session = DesignSession.create(root / "recording", "turtle",
                                   backend=backend, render_size=64)
    run_full(session)
    for i in range(3):
        human_feedback(session, f"tweak {i}")
    app = create_app(root / "data", transcripts={"budget": transcript}, render_size=64)
    return TestClient(app), app, root / "data"


class TestHealthAndCreate:
    """Session creation and its input checks."""

    def test_healthz(self, service):
        client, _, _ = service
        response = client.get("/healthz")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}

    def test_created_resource_shape(self, rabbit):
        created, _ = rabbit
        assert set(created.keys()) == RESOURCE_KEYS
        assert created["label"] == RABBIT_LABEL
        assert created["locked"] is False
        assert created["error"] is None
        assert created["human_prompts_used"] == 0
        assert created["human_prompts_remaining"] == 3

    def test_blank_label_400(self, service):
        client, _, _ = service
        for label in ("", "   ", None, 7):
            response = client.post("/sessions", json={"label": label, "transcript": "rabbit"})
            assert response.status_code == 400
            assert response.json()["code"] == "InvalidLabel"

    def test_bad_base64_400(self, service):
        client, _, _ = service
        response = client.post("/sessions", json={
            "label": RABBIT_LABEL, "transcript": "rabbit",
            "reference_b64": "not//valid base64!!",
        })
        assert response.status_code == 400
        assert response.json()["code"] == "InvalidInput"

    def test_non_image_reference_400(self, service):
        client, _, _ = service
        response = client.post("/sessions", json={
            "label": RABBIT_LABEL, "transcript": "rabbit",
            "reference_b64": base64.b64encode(b"plain text").decode(),
        })
        assert response.status_code == 400
        assert "PNG or JPEG" in response.json()["message"]

    def test_oversized_reference_400(self, service):
        client, _, _ = service
        blob = b"\x89PNG\r\n\x1a\n" + b"\x00" * (8 * 1024 * 1024)
        response = client.post("/sessions", json={
            "label": RABBIT_LABEL, "transcript": "rabbit",
            "reference_b64": base64.b64encode(blob).decode(),
        })
        assert response.status_code == 400
        assert "exceeds" in response.json()["message"]

    def test_unknown_transcript_400(self, service):
        client, _, _ = service
        response = client.post("/sessions", json={"label": "x", "transcript": "nope"})
        assert response.status_code == 400

    def test_no_backend_503(self, service, monkeypatch):
        client, _, _ = service
        monkeypatch.delenv("MORPHOFORGE_VLM_URL", raising=False)
        response = client.post("/sessions", json={"label": "a live robot"})
        assert response.status_code == 503
        assert response.json()["code"] == "BackendUnavailable"

    def test_unknown_session_404(self, service):
        client, _, _ = service
        for path in ("/sessions/nosuch",
                     "/sessions/nosuch/snapshots/0/model.xml",
                     "/sessions/nosuch/snapshots/0/render/front.png",
                     "/sessions/nosuch/report.json"):
            response = client.get(path)
            assert response.status_code == 404
            assert response.json()["code"] == "UnknownSession"
        assert client.post("/sessions/nosuch/feedback",
                           json={"text": "hi"}).status_code == 404
        assert client.post("/sessions/nosuch/finalize").status_code == 404


class TestRabbitFlow:
    """A replayed rabbit session, observed read-only."""

    def test_runs_to_finalized(self, rabbit):
        _, idle = rabbit
        assert idle["stage"] == "Finalized"
        assert idle["error"] is None
        assert idle["busy"] is False
        assert idle["visual_rounds_used"] == 2
        assert idle["human_prompts_used"] == 0
        assert idle["snapshot_count"] == 2
        assert idle["snapshot_index"] == 1

    def test_model_document_served(self, service, rabbit):
        client, _, _ = service
        _, idle = rabbit
        response = client.get(idle["model_url"])
        assert response.status_code == 200
        assert response.headers["content-type"].startswith("application/xml")
        tree = parse(response.text)
        assert len(tree) == MANIFEST["designs"]["rabbit"]["bodies"]

    def test_all_views_served(self, service, rabbit):
        client, _, _ = service
        _, idle = rabbit
        assert set(idle["render_urls"]) == {"front", "left", "top", "threequarter"}
        images = {}
        for view, url in idle["render_urls"].items():
            response = client.get(url)
            assert response.status_code == 200
            assert response.content.startswith(b"\x89PNG")
            images[view] = response.content
        assert images["front"] != images["top"]

    def test_reference_content_addressed(self, service, rabbit):
        client, _, data_dir = service
        _, idle = rabbit
        sha = hashlib.sha256(RABBIT_REF).hexdigest()
        assert idle["reference_url"] == f"/references/{sha}.png"
        response = client.get(idle["reference_url"])
        assert response.content == RABBIT_REF
        # the same image uploaded by several sessions lands in one file
        stored = list((data_dir / "references").glob("*.png"))
        assert len(stored) == 1

    def test_report_served(self, service, rabbit):
        client, _, _ = service
        created, _ = rabbit
        report = client.get(f"/sessions/{created['id']}/report.json")
        assert report.status_code == 200
        assert report.json()["passed"] is True
        assert report.json()["errors"] == []

    def test_unknown_snapshot_404(self, service, rabbit):
        client, _, _ = service
        created, _ = rabbit
        base = f"/sessions/{created['id']}/snapshots"
        assert client.get(f"{base}/99/model.xml").status_code == 404
        assert client.get(f"{base}/-1/model.xml").status_code == 404
        assert client.get(f"{base}/99/render/front.png").status_code == 404
        response = client.get(f"{base}/0/render/back.png")
        assert response.status_code == 404
        assert response.json()["code"] == "UnknownView"

    def test_blank_feedback_text_400(self, service, rabbit):
        client, _, _ = service
        created, _ = rabbit
        url = f"/sessions/{created['id']}/feedback"
        assert client.post(url, json={"text": "  "}).status_code == 400
        assert client.post(url, json={}).status_code == 400


class TestFeedbackStory:
    """Human feedback over HTTP, with append-only snapshot history."""

    def test_feedback_applies_then_locks(self, service):
        client, _, _ = service
        sid = make_rabbit(client)
        idle = wait_idle(client, sid)
        base = f"/sessions/{sid}/snapshots"
        before = {k: client.get(f"{base}/{k}/model.xml").content for k in (0, 1)}
        front_before = client.get(f"{base}/0/render/front.png").content

        response = client.post(f"/sessions/{sid}/feedback",
                               json={"text": "Make the ears longer."})
        assert response.status_code == 200
        body = response.json()
        assert body["snapshot_count"] == 3
        assert body["snapshot_index"] == 2
        assert body["human_prompts_used"] == 1

        # earlier snapshots are immutable; the edit landed in a new one
        for k in (0, 1):
            assert client.get(f"{base}/{k}/model.xml").content == before[k]
        assert client.get(f"{base}/0/render/front.png").content == front_before
        assert client.get(f"{base}/2/model.xml").content != before[1]

        # the replay transcript has no further exchanges
        worn = client.post(f"/sessions/{sid}/feedback", json={"text": "More."})
        assert worn.status_code == 502
        assert worn.json()["code"] == "TranscriptExhausted"

        final = client.post(f"/sessions/{sid}/finalize")
        assert final.status_code == 200
        assert final.json()["locked"] is True
        again = client.post(f"/sessions/{sid}/finalize")
        assert again.status_code == 200

        locked = client.post(f"/sessions/{sid}/feedback", json={"text": "More."})
        assert locked.status_code == 409
        assert locked.json()["code"] == "StageError"

    def test_rejected_edit_422_snapshot_unchanged(self, service):
        client, _, _ = service
        sid = make_rabbit(client, transcript="reject")
        idle = wait_idle(client, sid)
        assert idle["snapshot_count"] == 1

        response = client.post(f"/sessions/{sid}/feedback",
                               json={"text": "Make only the left ear longer."})
        assert response.status_code == 422
        assert response.json()["code"] == "EditRejected"

        after = client.get(f"/sessions/{sid}").json()
        assert after["snapshot_count"] == 1
        assert after["snapshot_index"] == 0
        assert after["human_prompts_used"] == 1


class TestCrabFlow:
    """A referenceless session skips the visual rounds."""

    def test_no_reference_no_visual_rounds(self, service):
        client, _, _ = service
        response = client.post("/sessions", json={"label": CRAB_LABEL, "transcript": "crab"})
        assert response.status_code == 201
        body = wait_idle(client, response.json()["id"])
        assert body["stage"] == "Finalized"
        assert body["visual_rounds_used"] == 0
        assert body["snapshot_count"] == 1
        assert body["reference_url"] is None
        tree = parse(client.get(body["model_url"]).text)
        assert len(tree) == MANIFEST["designs"]["crab"]["bodies"]


class TestErrorState:
    """A failing background run surfaces in the resource."""

    def test_transcript_break_reported(self, service):
        client, _, _ = service
        response = client.post("/sessions", json={
            "label": TURTLE_LABEL, "transcript": "broken",
            "reference_b64": TURTLE_REF_B64,
        })
        assert response.status_code == 201
        body = wait_idle(client, response.json()["id"])
        assert body["error"] is not None
        assert body["error"]["code"] == "TranscriptExhausted"
        assert body["stage"] == "Structured"
        assert body["snapshot_count"] == 0
        assert body["model_url"] is None

        sid = body["id"]
        feedback = client.post(f"/sessions/{sid}/feedback", json={"text": "hi"})
        assert feedback.status_code == 409
        assert feedback.json()["code"] == "StageError"
        final = client.post(f"/sessions/{sid}/finalize")
        assert final.status_code == 409


class TestBudgetAndConcurrency:
    """Budget enforcement and per-session request serialization."""

    def test_fourth_prompt_409(self, small_service):
        client, _, _ = small_service
        response = client.post("/sessions", json={"label": "turtle", "transcript": "budget"})
        sid = response.json()["id"]
        wait_idle(client, sid)
        for i in range(3):
            round_i = client.post(f"/sessions/{sid}/feedback", json={"text": f"tweak {i}"})
            assert round_i.status_code == 200
            assert round_i.json()["human_prompts_used"] == i + 1
        fourth = client.post(f"/sessions/{sid}/feedback", json={"text": "tweak 3"})
        assert fourth.status_code == 409
        assert fourth.json()["code"] == "BudgetExhausted"
        assert client.get(f"/sessions/{sid}").json()["human_prompts_remaining"] == 0

    def test_concurrent_feedback_exactly_one_wins(self, small_service, monkeypatch):
        client, app, _ = small_service
        response = client.post("/sessions", json={"label": "turtle", "transcript": "budget"})
        sid = response.json()["id"]
        wait_idle(client, sid)

        entered, release = threading.Event(), threading.Event()

        def gated(session, text):
            entered.set()
            assert release.wait(10.0)
            session.human_prompts_used += 1
            return []

        monkeypatch.setattr(service_module, "human_feedback", gated)
        results = {}

        def first_post():
            # a second client keeps the two requests on independent portals
            results["a"] = TestClient(app).post(f"/sessions/{sid}/feedback",
                                                json={"text": "first"})

        thread = threading.Thread(target=first_post)
        thread.start()
        assert entered.wait(10.0)
        results["b"] = client.post(f"/sessions/{sid}/feedback", json={"text": "second"})
        release.set()
        thread.join(10.0)
        assert not thread.is_alive()

        assert results["a"].status_code == 200
        assert results["b"].status_code == 409
        assert results["b"].json()["code"] == "SessionBusy"
        assert client.get(f"/sessions/{sid}").json()["human_prompts_used"] == 1

    def test_feedback_during_pipeline_run_409(self, small_service, monkeypatch):
        client, _, _ = small_service
        started, release = threading.Event(), threading.Event()

        def gated_run(session):
            started.set()
            assert release.wait(10.0)

        monkeypatch.setattr(service_module, "run_full", gated_run)
        response = client.post("/sessions", json={"label": "turtle", "transcript": "budget"})
        sid = response.json()["id"]
        assert started.wait(10.0)

        assert client.get(f"/sessions/{sid}").json()["busy"] is True
        feedback = client.post(f"/sessions/{sid}/feedback", json={"text": "hi"})
        assert feedback.status_code == 409
        assert feedback.json()["code"] == "SessionBusy"
        release.set()
        wait_idle(client, sid)
