"""HTTP service exposing design sessions to the companion console.

Sessions are created with POST /sessions and run their pipeline stages in a
background thread; clients poll GET /sessions/{id} for stage and budget
progress, fetch immutable snapshot documents and renders, and submit human
feedback. State-mutating requests on one session are strictly serialized:
of two concurrent feedback submissions exactly one consumes budget and the
other receives 409.

Reference images arrive base64-encoded in the JSON body (PNG or JPEG, at
most 8 MiB) and are stored content-addressed so repeated uploads of the
same image share one file.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse, Response

from .errors import ConfigError, MorphoforgeError
from .gateway import Backend, GatewayError, LiveBackend, ReplayBackend
from .pipeline import (
    HUMAN_PROMPT_BUDGET,
    VISUAL_ROUND_BUDGET,
    BudgetExhausted,
    BuildConstraints,
    DesignSession,
    EditRejected,
    PipelineError,
    StageError,
    finalize,
    human_feedback,
    run_full,
)
from .render import VIEW_PRESETS
from .validation import report_state, validate

MAX_REFERENCE_BYTES = 8 * 1024 * 1024
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
JPEG_MAGIC = b"\xff\xd8\xff"

VIEW_NAMES = tuple(v.name for v in VIEW_PRESETS)


class SessionRecord:
    """One live session plus its serialization lock and background state."""

    def __init__(self, session: DesignSession, reference_sha: Optional[str]):
        self.session = session
        self.reference_sha = reference_sha
        self.lock = threading.Lock()
        self.error: Optional[dict] = None
        self.thread: Optional[threading.Thread] = None


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _exception_response(exc: Exception) -> JSONResponse:
    if isinstance(exc, BudgetExhausted):
        return _error(409, "BudgetExhausted", str(exc))
    if isinstance(exc, EditRejected):
        return _error(422, "EditRejected", str(exc))
    if isinstance(exc, StageError):
        return _error(409, "StageError", str(exc))
    if isinstance(exc, (GatewayError, PipelineError)):
        return _error(502, type(exc).__name__, str(exc))
    if isinstance(exc, (ValueError, ConfigError)):
        return _error(400, type(exc).__name__, str(exc))
    return _error(500, type(exc).__name__, str(exc))


def _decode_reference(payload: dict) -> Optional[bytes]:
    encoded = payload.get("reference_b64")
    if encoded is None:
        return None
    if not isinstance(encoded, str):
        raise ValueError("reference_b64 must be a base64 string")
    try:
        data = base64.b64decode(encoded, validate=True)
    except Exception as exc:
        raise ValueError(f"reference_b64 is not valid base64: {exc}") from exc
    if len(data) > MAX_REFERENCE_BYTES:
        raise ValueError(f"reference image exceeds {MAX_REFERENCE_BYTES} bytes")
    if not (data.startswith(PNG_MAGIC) or data.startswith(JPEG_MAGIC)):
        raise ValueError("reference image must be PNG or JPEG")
    return data


def _parse_constraints(payload: dict) -> BuildConstraints:
    raw = payload.get("constraints")
    if raw is None:
        return BuildConstraints()
    if not isinstance(raw, dict):
        raise ValueError("constraints must be an object")
    defaults = BuildConstraints()
    return BuildConstraints(
        max_components=raw.get("max_components", defaults.max_components),
        max_links_per_component=raw.get("max_links_per_component",
                                        defaults.max_links_per_component),
        require_symmetry=raw.get("require_symmetry", defaults.require_symmetry),
    )


def create_app(
    root: str | Path,
    transcripts: Optional[dict[str, str | Path]] = None,
    run_async: bool = True,
    render_size: int = 512,
) -> FastAPI:
    """Build the service around a data directory.

    `transcripts` names replay transcripts that POST /sessions may select
    with its "transcript" field; without a selection the live backend from
    the environment is used. Replayed sessions must render at the same
    `render_size` the transcript was recorded at, because visual-feedback
    fingerprints cover the render bytes.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    references_dir = root / "references"
    references_dir.mkdir(exist_ok=True)
    transcripts = {name: Path(path) for name, path in (transcripts or {}).items()}

    app = FastAPI(title="morphoforge design sessions")
    records: dict[str, SessionRecord] = {}
    app.state.records = records

    def store_reference(data: bytes) -> str:
        sha = hashlib.sha256(data).hexdigest()
        path = references_dir / f"{sha}.png"
        if not path.exists():
            path.write_bytes(data)
        return sha

    def pick_backend(payload: dict) -> Backend:
        name = payload.get("transcript")
        if name is not None:
            if name not in transcripts:
                raise ValueError(f"unknown transcript {name!r}")
            return ReplayBackend(transcripts[name])
        return LiveBackend.from_env()

    def resource(record: SessionRecord) -> dict:
        session = record.session
        snapshots = len(session.snapshots)
        latest = snapshots - 1
        render_urls = {}
        model_url = None
        if snapshots:
            base = f"/sessions/{session.id}/snapshots/{latest}"
            model_url = f"{base}/model.xml"
            render_urls = {view: f"{base}/render/{view}.png" for view in VIEW_NAMES}
        busy = record.thread is not None and record.thread.is_alive()
        return {
            "id": session.id,
            "label": session.label,
            "stage": session.stage,
            "locked": session.locked,
            "busy": busy,
            "visual_rounds_used": session.visual_rounds_used,
            "visual_rounds_remaining": VISUAL_ROUND_BUDGET - session.visual_rounds_used,
            "human_prompts_used": session.human_prompts_used,
            "human_prompts_remaining": HUMAN_PROMPT_BUDGET - session.human_prompts_used,
            "snapshot_count": snapshots,
            "snapshot_index": latest if snapshots else None,
            "model_url": model_url,
            "render_urls": render_urls,
            "reference_url": (f"/references/{record.reference_sha}.png"
                              if record.reference_sha else None),
            "error": record.error,
        }

    def run_pipeline(record: SessionRecord) -> None:
        with record.lock:
            try:
                run_full(record.session)
            except (MorphoforgeError, ValueError) as exc:
                record.error = {"code": type(exc).__name__, "message": str(exc)}

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict):
        label = payload.get("label")
        if not isinstance(label, str) or not label.strip():
            return _error(400, "InvalidLabel", "label must be a nonempty string")
        try:
            reference = _decode_reference(payload)
            constraints = _parse_constraints(payload)
        except ValueError as exc:
            return _error(400, "InvalidInput", str(exc))
        try:
            backend = pick_backend(payload)
        except ValueError as exc:
            return _error(400, "InvalidInput", str(exc))
        except ConfigError as exc:
            return _error(503, "BackendUnavailable", str(exc))

        session_id = uuid.uuid4().hex[:12]
        reference_sha = store_reference(reference) if reference is not None else None
        session = DesignSession.create(
            root / "sessions" / session_id,
            label,
            backend=backend,
            constraints=constraints,
            reference_png=reference,
            session_id=session_id,
            render_size=render_size,
        )
        record = SessionRecord(session, reference_sha)
        records[session_id] = record
        if run_async:
            record.thread = threading.Thread(target=run_pipeline, args=(record,), daemon=True)
            record.thread.start()
        else:
            run_pipeline(record)
        return JSONResponse(status_code=201, content=resource(record))

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        record = records.get(session_id)
        if record is None:
            return _error(404, "UnknownSession", f"no session {session_id!r}")
        return resource(record)

    @app.get("/sessions/{session_id}/snapshots/{index}/model.xml")
    def get_model(session_id: str, index: int) -> Response:
        record = records.get(session_id)
        if record is None:
            return _error(404, "UnknownSession", f"no session {session_id!r}")
        snapshots = record.session.snapshots
        if not 0 <= index < len(snapshots):
            return _error(404, "UnknownSnapshot", f"no snapshot {index}")
        return Response(content=snapshots[index], media_type="application/xml")

    @app.get("/sessions/{session_id}/snapshots/{index}/render/{view}.png")
    def get_render(session_id: str, index: int, view: str) -> Response:
        record = records.get(session_id)
        if record is None:
            return _error(404, "UnknownSession", f"no session {session_id!r}")
        files = record.session.render_files
        if not 0 <= index < len(files):
            return _error(404, "UnknownSnapshot", f"no snapshot {index}")
        if view not in files[index]:
            return _error(404, "UnknownView", f"no view {view!r}")
        path = record.session.directory / files[index][view]
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/sessions/{session_id}/report.json")
    def get_report(session_id: str):
        record = records.get(session_id)
        if record is None:
            return _error(404, "UnknownSession", f"no session {session_id!r}")
        if record.session.tree is None:
            return _error(404, "NoModel", "session has no built model yet")
        return report_state(validate(record.session.tree))

    @app.get("/references/{sha}.png")
    def get_reference(sha: str) -> Response:
        path = references_dir / f"{sha}.png"
        if not sha.isalnum() or not path.exists():
            return _error(404, "UnknownReference", "no such reference image")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, payload: dict):
        record = records.get(session_id)
        if record is None:
            return _error(404, "UnknownSession", f"no session {session_id!r}")
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            return _error(400, "InvalidInput", "text must be a nonempty string")
        if not record.lock.acquire(blocking=False):
            return _error(409, "SessionBusy", "another request holds this session")
        try:
            human_feedback(record.session, text)
        except Exception as exc:
            return _exception_response(exc)
        finally:
            record.lock.release()
        return resource(record)

    @app.post("/sessions/{session_id}/finalize")
    def post_finalize(session_id: str):
        record = records.get(session_id)
        if record is None:
            return _error(404, "UnknownSession", f"no session {session_id!r}")
        if not record.lock.acquire(blocking=False):
            return _error(409, "SessionBusy", "another request holds this session")
        try:
            finalize(record.session)
        except Exception as exc:
            return _exception_response(exc)
        finally:
            record.lock.release()
        return resource(record)

    return app


def main() -> None:
    """Run the service with live credentials from the environment."""
    import os

    import uvicorn

    data_dir = os.environ.get("MORPHOFORGE_DATA_DIR", "service-data")
    manifest_path = Path(os.environ.get("MORPHOFORGE_TRANSCRIPTS", "")) / "manifest.json"
    transcripts: dict[str, Path] = {}
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        for name, entry in manifest.get("designs", {}).items():
            transcripts[name] = manifest_path.parent / entry["transcript"]
    app = create_app(data_dir, transcripts=transcripts or None)
    uvicorn.run(app, host="127.0.0.1", port=int(os.environ.get("PORT", "8732")))


if __name__ == "__main__":
    main()
