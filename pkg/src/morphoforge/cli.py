"""Command-line front end: synthesize, refine, validate, render, export, replay.

Exit codes are fixed for scriptability: 0 ok, 2 config error, 3 not found,
4 gateway/model failure, 5 budget exhausted, 6 validation failure. stdout
carries only artifact paths and a one-line summary; diagnostics go to
stderr as a single JSON object.
"""

from __future__ import annotations

import json
import shutil
import sys
import tempfile
import uuid
from pathlib import Path
from typing import Optional

import click

from .errors import ConfigError, MorphoforgeError
from .gateway import (
    Backend,
    GatewayError,
    LiveBackend,
    RecordBackend,
    ReplayBackend,
)
from .mjcf import MjcfError, parse
from .model import UnknownNode
from .pipeline import (
    STAGE_BUILT,
    STAGE_FINALIZED,
    STAGE_VISUAL_REFINED,
    VISUAL_ROUND_BUDGET,
    AnchorSolveFailure,
    BudgetExhausted,
    BuildConstraints,
    DesignSession,
    EditRejected,
    ParseFailure,
    PlanViolatesConstraints,
    StageError,
    ValidationFailed,
    build,
    human_feedback,
    synthesize_structure,
    visual_feedback_round,
)
from .render import VIEW_PRESETS, render_contact_views
from .validation import Tolerances, report_state, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_FOUND = 3
EXIT_GATEWAY = 4
EXIT_BUDGET = 5
EXIT_VALIDATION = 6

VIEW_NAMES = tuple(v.name for v in VIEW_PRESETS)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, BudgetExhausted):
        return EXIT_BUDGET
    if isinstance(exc, (EditRejected, ValidationFailed, MjcfError)):
        return EXIT_VALIDATION
    if isinstance(exc, (FileNotFoundError, UnknownNode)):
        return EXIT_NOT_FOUND
    if isinstance(exc, (ParseFailure, PlanViolatesConstraints, AnchorSolveFailure, GatewayError)):
        return EXIT_GATEWAY
    # ConfigError, StageError, bad flag values, other misuse
    return EXIT_CONFIG


def _fail(exc: BaseException) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    sys.exit(_exit_code(exc))


def _guarded(body) -> None:
    try:
        body()
    except (MorphoforgeError, FileNotFoundError, ValueError) as exc:
        _fail(exc)


def _constraints(max_components: int, max_links: int, no_symmetry: bool) -> BuildConstraints:
    return BuildConstraints(
        max_components=max_components,
        max_links_per_component=max_links,
        require_symmetry=not no_symmetry,
    )


def _make_backend(mode: str, transcript: Optional[Path]) -> Backend:
    if mode == "auto":
        mode = "replay" if transcript else "live"
    if mode in ("replay", "record"):
        if transcript is None:
            raise ConfigError(f"--backend {mode} requires --transcript")
        if mode == "replay":
            if not transcript.exists():
                raise FileNotFoundError(f"transcript {transcript} does not exist")
            return ReplayBackend(transcript)
        return RecordBackend(LiveBackend.from_env(), transcript)
    return LiveBackend.from_env()


def _read_reference(path: Optional[Path]) -> Optional[bytes]:
    if path is None:
        return None
    if not path.exists():
        raise FileNotFoundError(f"reference image {path} does not exist")
    return path.read_bytes()


def _tolerances(tolerance_gap: Optional[float]) -> Tolerances:
    return Tolerances() if tolerance_gap is None else Tolerances(attach_gap_max=tolerance_gap)


def _run_stages(session: DesignSession, max_rounds: int) -> None:
    """The run_full sequence with a cap on visual rounds."""
    synthesize_structure(session)
    build(session)
    if session.reference_png is not None and max_rounds > 0:
        cap = min(max_rounds, VISUAL_ROUND_BUDGET)
        while session.visual_rounds_used < cap and session.stage == STAGE_BUILT:
            try:
                edits = visual_feedback_round(session)
            except EditRejected:
                continue
            if not edits:
                break
    session.advance(STAGE_VISUAL_REFINED)
    session.advance(STAGE_FINALIZED)
    session.save()


def _write_artifacts(session: DesignSession, tol: Tolerances) -> int:
    """model.xml and report.json beside session.json; prints paths + summary."""
    if not session.snapshots:
        raise StageError("session has no built model")
    model_path = session.directory / "model.xml"
    model_path.write_text(session.snapshots[-1], encoding="utf-8")
    report = validate(session.tree, tol)
    report_path = session.directory / "report.json"
    report_path.write_text(json.dumps(report_state(report), indent=2) + "\n", encoding="utf-8")
    print(model_path)
    print(report_path)
    summary = "passed" if report.passed else f"{len(report.errors)} validation errors"
    print(f"{session.id} {session.stage} {summary}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


@click.group()
def main() -> None:
    """Robot design synthesis from a text label and optional reference image."""


@main.command()
@click.argument("label")
@click.option("--backend", type=click.Choice(["auto", "live", "record", "replay"]), default="auto",
              show_default=True, help="Completion backend; auto picks replay when a transcript is given.")
@click.option("--transcript", type=click.Path(path_type=Path), default=None,
              help="Transcript file for record/replay backends.")
@click.option("--session-dir", type=click.Path(path_type=Path), default=Path("sessions"),
              show_default=True, help="Base directory holding one subdirectory per session.")
@click.option("--reference", type=click.Path(path_type=Path), default=None,
              help="Reference image (PNG) steering the visual feedback stage.")
@click.option("--visual-rounds", type=int, default=None,
              help="Cap on visual feedback rounds; requires --reference when set.")
@click.option("--tolerance-gap", type=float, default=None,
              help="Maximum allowed attachment gap for the final report.")
@click.option("--max-components", type=int, default=32, show_default=True)
@click.option("--max-links", type=int, default=4, show_default=True)
@click.option("--no-symmetry", is_flag=True, default=False,
              help="Drop the left/right symmetry requirement.")
def synth(label, backend, transcript, session_dir, reference, visual_rounds,
          tolerance_gap, max_components, max_links, no_symmetry) -> None:
    """Run the full pipeline for LABEL and write the session artifacts."""

    def body() -> None:
        if visual_rounds is not None and visual_rounds > 0 and reference is None:
            raise ConfigError("--visual-rounds needs --reference to compare against")
        constraints = _constraints(max_components, max_links, no_symmetry)
        ref = _read_reference(reference)
        resolved = _make_backend(backend, transcript)
        session_id = uuid.uuid4().hex[:12]
        session = DesignSession.create(
            Path(session_dir) / session_id,
            label,
            backend=resolved,
            constraints=constraints,
            reference_png=ref,
            transcript=str(transcript) if transcript else None,
            session_id=session_id,
        )
        rounds = VISUAL_ROUND_BUDGET if visual_rounds is None else visual_rounds
        _run_stages(session, rounds)
        sys.exit(_write_artifacts(session, _tolerances(tolerance_gap)))

    _guarded(body)


def _load_session(session_dir: Path, session_id: str, backend_mode: str,
                  transcript: Optional[Path]) -> DesignSession:
    directory = Path(session_dir) / session_id
    if not (directory / "session.json").exists():
        raise FileNotFoundError(f"no session {session_id!r} under {session_dir}")
    if transcript is None:
        state = json.loads((directory / "session.json").read_text(encoding="utf-8"))
        transcript = Path(state["transcript"]) if state.get("transcript") else None
    backend = _make_backend(backend_mode, transcript)
    return DesignSession.load(directory, backend=backend)


@main.command()
@click.argument("session_id")
@click.argument("text")
@click.option("--session-dir", type=click.Path(path_type=Path), default=Path("sessions"),
              show_default=True)
@click.option("--backend", type=click.Choice(["auto", "live", "record", "replay"]), default="auto")
@click.option("--transcript", type=click.Path(path_type=Path), default=None,
              help="Override the transcript recorded in the session.")
@click.option("--tolerance-gap", type=float, default=None)
def feedback(session_id, text, session_dir, backend, transcript, tolerance_gap) -> None:
    """Apply one human feedback round to an existing session."""

    def body() -> None:
        session = _load_session(session_dir, session_id, backend, transcript)
        human_feedback(session, text)
        sys.exit(_write_artifacts(session, _tolerances(tolerance_gap)))

    _guarded(body)


@main.command(name="validate")
@click.argument("model", type=click.Path(path_type=Path))
@click.option("--tolerance-gap", type=float, default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Report path; defaults to the model path with a .report.json suffix.")
def validate_cmd(model, tolerance_gap, out) -> None:
    """Validate an existing model document and write its report."""

    def body() -> None:
        if not model.exists():
            raise FileNotFoundError(f"model {model} does not exist")
        tree = parse(model.read_text(encoding="utf-8"))
        report = validate(tree, _tolerances(tolerance_gap))
        report_path = out or model.with_suffix(".report.json")
        report_path.write_text(json.dumps(report_state(report), indent=2) + "\n", encoding="utf-8")
        print(report_path)
        summary = "passed" if report.passed else f"{len(report.errors)} validation errors"
        print(f"{model} {summary}")
        sys.exit(EXIT_OK if report.passed else EXIT_VALIDATION)

    _guarded(body)


@main.command(name="render")
@click.argument("model", type=click.Path(path_type=Path))
@click.option("--views", default=",".join(VIEW_NAMES), show_default=True,
              help="Comma-separated subset of the canonical views.")
@click.option("--out", type=click.Path(path_type=Path), default=Path("renders"), show_default=True)
@click.option("--size", type=int, default=512, show_default=True)
def render_cmd(model, views, out, size) -> None:
    """Render a model document to orthographic PNG views."""

    def body() -> None:
        if not model.exists():
            raise FileNotFoundError(f"model {model} does not exist")
        names = [v.strip() for v in views.split(",") if v.strip()]
        unknown = [v for v in names if v not in VIEW_NAMES]
        if not names or unknown:
            raise ConfigError(f"views must be drawn from {', '.join(VIEW_NAMES)}")
        tree = parse(model.read_text(encoding="utf-8"))
        images = render_contact_views(tree, size)
        out.mkdir(parents=True, exist_ok=True)
        for name in names:
            path = out / f"{name}.png"
            path.write_bytes(images[name])
            print(path)

    _guarded(body)


@main.command()
@click.argument("session_id")
@click.option("--session-dir", type=click.Path(path_type=Path), default=Path("sessions"),
              show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Destination file; defaults to <session_id>.xml in the working directory.")
def export(session_id, session_dir, out) -> None:
    """Copy a session's latest model document to a standalone file."""

    def body() -> None:
        directory = Path(session_dir) / session_id
        if not (directory / "session.json").exists():
            raise FileNotFoundError(f"no session {session_id!r} under {session_dir}")
        model = directory / "model.xml"
        if not model.exists():
            session = DesignSession.load(directory)
            if not session.snapshots:
                raise StageError("session has no built model to export")
            model.write_text(session.snapshots[-1], encoding="utf-8")
        destination = out or Path(f"{session_id}.xml")
        shutil.copyfile(model, destination)
        print(destination)

    _guarded(body)


@main.command(name="replay")
@click.argument("transcript", type=click.Path(path_type=Path))
@click.option("--label", required=True, help="Creature label the transcript was recorded with.")
@click.option("--reference", type=click.Path(path_type=Path), default=None)
@click.option("--human", "human_rounds", multiple=True,
              help="Human feedback text, once per recorded round, in order.")
@click.option("--session-dir", type=click.Path(path_type=Path), default=Path("sessions"),
              show_default=True)
@click.option("--max-components", type=int, default=32, show_default=True)
@click.option("--max-links", type=int, default=4, show_default=True)
@click.option("--no-symmetry", is_flag=True, default=False)
def replay_cmd(transcript, label, reference, human_rounds, session_dir,
               max_components, max_links, no_symmetry) -> None:
    """Re-run a recorded session twice and require byte-identical output."""

    def body() -> None:
        if not transcript.exists():
            raise FileNotFoundError(f"transcript {transcript} does not exist")
        constraints = _constraints(max_components, max_links, no_symmetry)
        ref = _read_reference(reference)

        def one_run(directory: Path, session_id: Optional[str] = None) -> DesignSession:
            session = DesignSession.create(
                directory, label, backend=ReplayBackend(transcript),
                constraints=constraints, reference_png=ref,
                transcript=str(transcript), session_id=session_id,
            )
            _run_stages(session, VISUAL_ROUND_BUDGET)
            for text in human_rounds:
                human_feedback(session, text)
            return session

        session_id = uuid.uuid4().hex[:12]
        first = one_run(Path(session_dir) / session_id, session_id)
        with tempfile.TemporaryDirectory() as tmp:
            second = one_run(Path(tmp) / "check")
            if first.snapshots != second.snapshots:
                raise ConfigError("replay produced diverging documents across runs")
        exit_code = _write_artifacts(first, Tolerances())
        print("replay deterministic")
        sys.exit(exit_code)

    _guarded(body)


if __name__ == "__main__":
    main()
