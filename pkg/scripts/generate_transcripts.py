#!/usr/bin/env python3
"""Regenerate the bundled replay transcripts, reference images, and manifest.

Each design is driven through the real pipeline against a scripted backend
wrapped in a recorder, so every transcript entry carries the genuine request
fingerprint and the file replays byte-identically. After recording, each
transcript is replayed into a fresh session and the snapshot documents are
required to match exactly.

Run from the repository root:

    python3 scripts/generate_transcripts.py
"""

from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))  # fixture builders and scripted backends

from fixtures import make_crab, make_rabbit, make_turtle  # noqa: E402
from scripting import ScriptedBackend, edits_response, full_script  # noqa: E402

from morphoforge.gateway import RecordBackend, ReplayBackend  # noqa: E402
from morphoforge.model import Fixed, trees_equal  # noqa: E402
from morphoforge.pipeline import (  # noqa: E402
    DesignSession,
    EditRejected,
    human_feedback,
    run_full,
)
from morphoforge.render import VIEW_BY_NAME, RenderTarget, render  # noqa: E402

OUT = ROOT / "transcripts"
TURTLE_LEGS = ("leg_front_left", "leg_front_right", "leg_back_left", "leg_back_right")

DESIGNS = {
    "turtle": {
        "label": "a small turtle robot",
        "tree": make_turtle,
        "reference": True,
        "visual_rounds": [
            [{"op": "set_color", "node": "torso", "rgba": [0.3, 0.45, 0.22, 1.0]}],
            [],
        ],
        "human": [
            ("Make the legs shorter.",
             [{"op": "set_size", "node": leg, "params": [0.035, 0.06]} for leg in TURTLE_LEGS]),
        ],
        "rejects_human": False,
    },
    "crab": {
        "label": "a crab robot",
        "tree": make_crab,
        "reference": False,
        "visual_rounds": [],
        "human": [],
        "rejects_human": False,
    },
    "rabbit": {
        "label": "a rabbit robot",
        "tree": make_rabbit,
        "reference": True,
        "visual_rounds": [
            [{"op": "set_color", "node": "torso", "rgba": [0.85, 0.8, 0.74, 1.0]}],
            [],
        ],
        "human": [
            ("Make the ears longer.",
             [{"op": "set_size", "node": ear, "params": [0.014, 0.075]}
              for ear in ("ear_left", "ear_right")]),
        ],
        "rejects_human": False,
    },
    "rabbit_reject": {
        "label": "a rabbit robot",
        "tree": make_rabbit,
        "reference": True,
        "visual_rounds": [[]],
        "human": [
            ("Make only the left ear longer.",
             [{"op": "set_size", "node": "ear_left", "params": [0.014, 0.09]}]),
        ],
        "rejects_human": True,
    },
}


def reference_png(tree) -> bytes:
    return render(tree, VIEW_BY_NAME["threequarter"], RenderTarget(512, 512))


def drive(session: DesignSession, spec: dict) -> None:
    """Run the full pipeline plus the design's scripted human rounds."""
    run_full(session)
    for text, _edits in spec["human"]:
        if spec["rejects_human"]:
            try:
                human_feedback(session, text)
            except EditRejected:
                continue
            raise SystemExit(f"{session.label}: expected the human round to be rejected")
        else:
            human_feedback(session, text)


def articulated_joints(tree) -> int:
    count = 0
    for nid in tree.topological_order():
        node = tree.node(nid)
        if node.parent is not None and not isinstance(node.joint, Fixed):
            count += 1
    return count


def record_design(name: str, spec: dict, refs_dir: Path) -> dict:
    tree = spec["tree"]()
    ref = None
    ref_rel = None
    if spec["reference"]:
        ref = reference_png(tree)
        ref_path = refs_dir / f"{name.split('_')[0]}.png"
        ref_path.write_bytes(ref)
        ref_rel = str(ref_path.relative_to(OUT))

    script = full_script(tree, spec["visual_rounds"])
    for _text, edits in spec["human"]:
        script.append(edits_response(edits))

    transcript = OUT / f"{name}.jsonl"
    transcript.unlink(missing_ok=True)
    recorder = RecordBackend(ScriptedBackend(script), transcript)
    with tempfile.TemporaryDirectory() as tmp:
        session = DesignSession.create(Path(tmp) / "rec", spec["label"], backend=recorder,
                                       reference_png=ref)
        drive(session, spec)
        recorded = {
            "snapshots": list(session.snapshots),
            "exchanges": session.exchanges_used,
            "tree": session.tree,
        }

    # replay the fresh transcript and require byte-identical snapshots
    with tempfile.TemporaryDirectory() as tmp:
        replayed = DesignSession.create(Path(tmp) / "rep", spec["label"],
                                        backend=ReplayBackend(transcript), reference_png=ref)
        drive(replayed, spec)
        if replayed.snapshots != recorded["snapshots"]:
            raise SystemExit(f"{name}: replay diverged from the recording")
        if not trees_equal(replayed.tree, recorded["tree"]):
            raise SystemExit(f"{name}: replayed tree differs from the recording")

    final = recorded["tree"]
    return {
        "label": spec["label"],
        "transcript": f"{name}.jsonl",
        "reference": ref_rel,
        "human_feedback": [text for text, _ in spec["human"]],
        "rejects_human": spec["rejects_human"],
        "bodies": len(final),
        "articulated_joints": articulated_joints(final),
        "snapshots": len(recorded["snapshots"]),
        "exchanges": recorded["exchanges"],
    }


def main() -> None:
    OUT.mkdir(exist_ok=True)
    refs_dir = OUT / "refs"
    refs_dir.mkdir(exist_ok=True)
    manifest = {"designs": {}}
    for name, spec in DESIGNS.items():
        print(f"recording {name} ...", flush=True)
        manifest["designs"][name] = record_design(name, spec, refs_dir)
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {OUT / 'manifest.json'}")


if __name__ == "__main__":
    main()
