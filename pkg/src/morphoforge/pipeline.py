"""Four-stage design orchestration: structure, build, visual and human feedback.

A DesignSession walks the stages Created -> Structured -> Built ->
VisualRefined -> Finalized, never backwards. Structure synthesis asks the
model for a JSON plan of named body nodes; the build stage turns each
descriptor into one attach_body tool call and grows the tree with exact
surface anchors; visual rounds render the four canonical views and apply the
model's edit commands transactionally; human rounds do the same from a text
instruction. Both feedback budgets are hard-capped at three.

Right-side halves of symmetric pairs are never requested from the model:
they are instantiated by mirroring the finished left subtree, which keeps
pairs exactly symmetric by construction.
"""

from __future__ import annotations

import copy
import json
import uuid
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import MorphoforgeError
from .gateway import (
    Backend,
    CompletionRequest,
    CompletionResponse,
    ImagePart,
    MalformedJson,
    NoJsonFound,
    ParamSpec,
    ReplayBackend,
    ToolCallInvalid,
    ToolSchema,
    assistant_message,
    extract_json,
    user_message,
    validate_tool_call,
)
from .geometry import (
    GeometryError,
    anchor_solve,
    body_origins,
    exit_distance,
    posed_geom,
)
from .mjcf import emit, parse, summarize
from .model import (
    Ball,
    BodyNode,
    Box,
    Capsule,
    Ellipsoid,
    Fixed,
    Free,
    GeomSpec,
    Hinge,
    JointSpec,
    KinematicTree,
    Orientation,
    PrimitiveShape,
    Rgba,
    SymmetryTag,
    UnknownNode,
    Vec3,
    shape_is_valid,
    swap_side_name,
)
from .render import render_contact_views
from .validation import Tolerances, ValidationReport, validate

VISUAL_ROUND_BUDGET = 3
HUMAN_PROMPT_BUDGET = 3

def _twin_name(name: str) -> str:
    """Mirror twin of a side-marked name; names without a side marker are
    shared across the midline and map to themselves."""
    if name.endswith("_left") or "_left_" in name:
        return swap_side_name(name, "left", "right")
    if name.endswith("_right") or "_right_" in name:
        return swap_side_name(name, "right", "left")
    return name


STAGE_CREATED = "Created"
STAGE_STRUCTURED = "Structured"
STAGE_BUILT = "Built"
STAGE_VISUAL_REFINED = "VisualRefined"
STAGE_FINALIZED = "Finalized"
STAGES = (STAGE_CREATED, STAGE_STRUCTURED, STAGE_BUILT, STAGE_VISUAL_REFINED, STAGE_FINALIZED)

SHAPE_KINDS = ("box", "ellipsoid", "capsule")
JOINT_KINDS = ("free", "fixed", "hinge", "ball")


class PipelineError(MorphoforgeError):
    pass


class StageError(PipelineError):
    """Operation called in a stage that does not allow it."""


class ParseFailure(PipelineError):
    pass


class PlanViolatesConstraints(PipelineError):
    pass


class AnchorSolveFailure(PipelineError):
    pass


class ValidationFailed(PipelineError):
    def __init__(self, report: ValidationReport):
        super().__init__(f"validation errors: {[f.code for f in report.errors]}")
        self.report = report


class BudgetExhausted(PipelineError):
    pass


class EditRejected(PipelineError):
    pass


# ---------------------------------------------------------------------------
# Constraints and plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BuildConstraints:
    max_components: int = 32
    max_links_per_component: int = 4
    require_symmetry: bool = True
    allowed_shapes: frozenset[str] = frozenset(SHAPE_KINDS)
    allowed_joints: frozenset[str] = frozenset(JOINT_KINDS)

    def __post_init__(self) -> None:
        if self.max_components <= 0 or self.max_links_per_component <= 0:
            raise ValueError("constraint limits must be positive")
        for kind in self.allowed_shapes:
            if kind not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {kind!r}")
        for kind in self.allowed_joints:
            if kind not in JOINT_KINDS:
                raise ValueError(f"unknown joint kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "max_components": self.max_components,
            "max_links_per_component": self.max_links_per_component,
            "require_symmetry": self.require_symmetry,
            "allowed_shapes": sorted(self.allowed_shapes),
            "allowed_joints": sorted(self.allowed_joints),
        }

    @staticmethod
    def from_dict(payload: dict) -> "BuildConstraints":
        return BuildConstraints(
            max_components=payload["max_components"],
            max_links_per_component=payload["max_links_per_component"],
            require_symmetry=payload["require_symmetry"],
            allowed_shapes=frozenset(payload["allowed_shapes"]),
            allowed_joints=frozenset(payload["allowed_joints"]),
        )


@dataclass(frozen=True)
class NodeDescriptor:
    name: str
    parent: Optional[str]
    purpose: str = ""
    symmetry: Optional[SymmetryTag] = None
    links: int = 1

    def to_dict(self) -> dict:
        sym = {"side": self.symmetry.side, "group": self.symmetry.group} if self.symmetry else None
        return {
            "name": self.name,
            "parent": self.parent,
            "purpose": self.purpose,
            "symmetry": sym,
            "links": self.links,
        }


@dataclass(frozen=True)
class StructurePlan:
    nodes: tuple[NodeDescriptor, ...]

    @staticmethod
    def from_payload(payload) -> "StructurePlan":
        if not isinstance(payload, dict) or not isinstance(payload.get("nodes"), list):
            raise ParseFailure("plan must be an object with a 'nodes' list")
        descriptors: list[NodeDescriptor] = []
        seen: set[str] = set()
        for i, raw in enumerate(payload["nodes"]):
            if not isinstance(raw, dict):
                raise ParseFailure(f"node {i} is not an object")
            name = raw.get("name")
            if not isinstance(name, str) or not name:
                raise ParseFailure(f"node {i} has no name")
            if name in seen:
                raise ParseFailure(f"duplicate node name {name!r}")
            parent = raw.get("parent")
            if parent is not None and not isinstance(parent, str):
                raise ParseFailure(f"node {name!r}: parent must be a name or null")
            if i == 0 and parent is not None:
                raise ParseFailure("first node must be the root (parent null)")
            if i > 0 and parent is None:
                raise ParseFailure(f"node {name!r}: only the first node may be the root")
            if parent is not None and parent not in seen:
                raise ParseFailure(f"node {name!r}: parent {parent!r} not defined before it")
            links = raw.get("links", 1)
            if isinstance(links, bool) or not isinstance(links, int):
                raise ParseFailure(f"node {name!r}: links must be an integer")
            descriptors.append(
                NodeDescriptor(
                    name=name,
                    parent=parent,
                    purpose=str(raw.get("purpose", "")),
                    symmetry=_parse_tag(raw.get("symmetry"), f"node {name!r}"),
                    links=links,
                )
            )
            seen.add(name)
        if not descriptors:
            raise ParseFailure("plan has no nodes")
        return StructurePlan(tuple(descriptors))

    def check(self, constraints: BuildConstraints) -> None:
        """Raise PlanViolatesConstraints on count, chain-length, or pairing faults."""
        if len(self.nodes) > constraints.max_components:
            raise PlanViolatesConstraints(
                f"{len(self.nodes)} nodes exceeds max_components {constraints.max_components}"
            )
        children: dict[str, list[str]] = {d.name: [] for d in self.nodes}
        for d in self.nodes:
            if d.parent is not None:
                children[d.parent].append(d.name)
        root = self.nodes[0].name
        # a component is a serial chain of links (e.g. one leg); the limit caps
        # its segment count, not how many limbs may share a parent
        for d in self.nodes[1:]:
            starts_chain = d.parent == root or len(children[d.parent]) != 1
            if not starts_chain:
                continue
            length, cur = 1, d.name
            while len(children[cur]) == 1:
                cur = children[cur][0]
                length += 1
            if length > constraints.max_links_per_component:
                raise PlanViolatesConstraints(
                    f"chain starting at {d.name!r} has {length} links, "
                    f"limit {constraints.max_links_per_component}"
                )
        if constraints.require_symmetry:
            by_name = {d.name: d for d in self.nodes}
            for d in self.nodes:
                if d.symmetry is None:
                    continue
                twin_name = _twin_name(d.name)
                twin = by_name.get(twin_name)
                if twin is None or twin.symmetry is None:
                    raise PlanViolatesConstraints(
                        f"{d.name!r} is tagged {d.symmetry.side} but {twin_name!r} is missing"
                    )
                if twin.symmetry != d.symmetry.flipped() or twin.symmetry.group != d.symmetry.group:
                    raise PlanViolatesConstraints(f"{d.name!r} and {twin_name!r} tags do not mirror")
                expected_parent = d.parent if d.parent is None else _twin_name(d.parent)
                if twin.parent != expected_parent:
                    raise PlanViolatesConstraints(
                        f"{twin_name!r} must hang under {expected_parent!r} to mirror {d.name!r}"
                    )

    def to_dict(self) -> dict:
        return {"nodes": [d.to_dict() for d in self.nodes]}


# ---------------------------------------------------------------------------
# Payload parsing shared by tool calls and edit commands
# ---------------------------------------------------------------------------


def _parse_vec3(value, what: str) -> Vec3:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 3
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ParseFailure(f"{what} must be a list of 3 numbers")
    return Vec3(float(value[0]), float(value[1]), float(value[2]))


def _parse_rgba(value, what: str) -> Rgba:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ParseFailure(f"{what} must be a list of 4 numbers")
    r, g, b, a = (float(v) for v in value)
    if not all(0.0 <= v <= 1.0 for v in (r, g, b, a)):
        raise ParseFailure(f"{what} components must lie in [0, 1]")
    return Rgba(r, g, b, a)


def _parse_tag(value, what: str) -> Optional[SymmetryTag]:
    if value is None:
        return None
    if not isinstance(value, dict):
        raise ParseFailure(f"{what}: symmetry must be an object or null")
    side, group = value.get("side"), value.get("group")
    if side not in ("left", "right") or not isinstance(group, str) or not group:
        raise ParseFailure(f"{what}: symmetry needs side left|right and a group name")
    return SymmetryTag(side=side, group=group)


def _parse_shape(value, what: str) -> PrimitiveShape:
    if not isinstance(value, dict):
        raise ParseFailure(f"{what}: shape must be an object")
    kind = value.get("type")
    params = value.get("params")
    if kind not in SHAPE_KINDS:
        raise ParseFailure(f"{what}: unknown shape type {kind!r}")
    if not isinstance(params, (list, tuple)) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in params
    ):
        raise ParseFailure(f"{what}: shape params must be a list of numbers")
    shape = _shape_from_params(kind, [float(v) for v in params], what)
    if not shape_is_valid(shape):
        raise ParseFailure(f"{what}: shape params must be positive and finite")
    return shape


def _shape_from_params(kind: str, params: Sequence[float], what: str) -> PrimitiveShape:
    if kind == "box":
        if len(params) != 3:
            raise ParseFailure(f"{what}: box needs 3 params")
        return Box(Vec3(*params))
    if kind == "ellipsoid":
        if len(params) != 3:
            raise ParseFailure(f"{what}: ellipsoid needs 3 params")
        return Ellipsoid(Vec3(*params))
    if len(params) != 2:
        raise ParseFailure(f"{what}: capsule needs 2 params")
    return Capsule(params[0], params[1])


def _shape_kind(shape: PrimitiveShape) -> str:
    if isinstance(shape, Box):
        return "box"
    if isinstance(shape, Ellipsoid):
        return "ellipsoid"
    return "capsule"


def _parse_joint(value, what: str) -> JointSpec:
    if not isinstance(value, dict):
        raise ParseFailure(f"{what}: joint must be an object")
    kind = value.get("type")
    if kind == "free":
        return Free()
    if kind == "fixed":
        return Fixed()
    if kind == "ball":
        return Ball()
    if kind == "hinge":
        axis = _parse_vec3(value.get("axis", [0.0, 1.0, 0.0]), f"{what}: hinge axis")
        if axis.norm() < 1e-12:
            raise ParseFailure(f"{what}: hinge axis must be nonzero")
        raw_range = value.get("range")
        if raw_range is None:
            return Hinge(axis=axis.normalized())
        if (
            not isinstance(raw_range, (list, tuple))
            or len(raw_range) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw_range)
        ):
            raise ParseFailure(f"{what}: hinge range must be [lo, hi]")
        lo, hi = float(raw_range[0]), float(raw_range[1])
        if not lo < hi:
            raise ParseFailure(f"{what}: hinge range must be ordered")
        return Hinge(axis=axis.normalized(), range=(lo, hi))
    raise ParseFailure(f"{what}: unknown joint type {kind!r}")


def _joint_kind(joint: JointSpec) -> str:
    if isinstance(joint, Free):
        return "free"
    if isinstance(joint, Fixed):
        return "fixed"
    if isinstance(joint, Hinge):
        return "hinge"
    return "ball"


# ---------------------------------------------------------------------------
# The attach_body tool
# ---------------------------------------------------------------------------

ATTACH_BODY_TOOL = ToolSchema(
    "attach_body",
    "Attach one new body to the robot's kinematic tree, growing it from its "
    "parent's surface along a growth direction.",
    (
        ParamSpec("name", "string", description="Unique body name."),
        ParamSpec("parent", "string", required=False, description="Parent body name; omit for the root."),
        ParamSpec(
            "growth_direction",
            "array",
            required=False,
            description="[x, y, z] from the parent's center toward the new body; omit for the root.",
        ),
        ParamSpec("joint", "object", description="Joint specification, e.g. {\"type\": \"hinge\", ...}."),
        ParamSpec("shape", "object", description="Primitive, e.g. {\"type\": \"capsule\", \"params\": [r, hl]}."),
        ParamSpec("color", "array", required=False, description="[r, g, b, a] in [0, 1]."),
        ParamSpec("symmetry", "object", required=False, description="{\"side\": ..., \"group\": ...} for paired limbs."),
    ),
)

DEFAULT_COLOR = Rgba(0.7, 0.7, 0.7, 1.0)


@dataclass(frozen=True)
class AttachBodyCall:
    """Parsed, validated arguments of one attach_body invocation."""

    name: str
    parent: Optional[str]
    direction: Optional[Vec3]
    joint: JointSpec
    shape: PrimitiveShape
    color: Rgba = DEFAULT_COLOR
    tag: Optional[SymmetryTag] = None

    @staticmethod
    def from_payload(payload: dict) -> "AttachBodyCall":
        """Parse tool arguments; raises ToolCallInvalid on any fault."""
        try:
            name = payload.get("name")
            if not isinstance(name, str) or not name:
                raise ParseFailure("attach_body needs a nonempty name")
            parent = payload.get("parent")
            if parent is not None and (not isinstance(parent, str) or not parent):
                raise ParseFailure("parent must be a nonempty name or omitted")
            direction = None
            if parent is not None:
                direction = _parse_vec3(payload.get("growth_direction"), "growth_direction")
                if direction.norm() < 1e-12:
                    raise ParseFailure("growth_direction must be nonzero")
            joint = _parse_joint(payload.get("joint"), "joint")
            shape = _parse_shape(payload.get("shape"), "shape")
            color = DEFAULT_COLOR if payload.get("color") is None else _parse_rgba(payload["color"], "color")
            tag = _parse_tag(payload.get("symmetry"), "symmetry")
        except ParseFailure as exc:
            raise ToolCallInvalid(str(exc)) from exc
        return AttachBodyCall(
            name=name, parent=parent, direction=direction, joint=joint, shape=shape, color=color, tag=tag
        )

    def to_payload(self) -> dict:
        payload: dict = {"name": self.name, "joint": _joint_payload(self.joint), "shape": _shape_payload(self.shape)}
        if self.parent is not None:
            payload["parent"] = self.parent
            payload["growth_direction"] = list(self.direction.as_tuple())
        payload["color"] = [self.color.r, self.color.g, self.color.b, self.color.a]
        if self.tag is not None:
            payload["symmetry"] = {"side": self.tag.side, "group": self.tag.group}
        return payload


def _joint_payload(joint: JointSpec) -> dict:
    kind = _joint_kind(joint)
    if kind == "hinge":
        return {"type": "hinge", "axis": list(joint.axis.as_tuple()), "range": list(joint.range)}
    return {"type": kind}


def _shape_payload(shape: PrimitiveShape) -> dict:
    return {"type": _shape_kind(shape), "params": list(shape.size_params())}


def attach_body(tree: KinematicTree, call: AttachBodyCall) -> int:
    """Grow one body: exact surface anchor on the parent, tangent placement.

    The child's geom center sits at anchor + beta * d where beta is the
    child's own exit distance back along -d, so the two surfaces touch at
    the anchor with zero gap by construction.
    """
    if call.parent is None:
        if len(tree) > 0:
            raise ToolCallInvalid("root body already exists")
        node = BodyNode(
            name=call.name,
            joint=call.joint,
            geom=GeomSpec(shape=call.shape, color=call.color),
            symmetry_tag=call.tag,
        )
        return tree.add_node(None, node)

    parent_id = tree.find(call.parent)
    if parent_id is None:
        raise ToolCallInvalid(f"parent {call.parent!r} does not exist")
    if call.name in tree.names():
        raise ToolCallInvalid(f"a body named {call.name!r} already exists")
    direction = call.direction.normalized()
    origins = body_origins(tree)
    try:
        anchor_world = anchor_solve(posed_geom(tree, parent_id, origins), direction)
    except GeometryError as exc:
        raise AnchorSolveFailure(f"{call.name!r}: {exc}") from exc
    anchor_local = anchor_world - origins[parent_id]
    orient = Orientation.align_z(direction) if isinstance(call.shape, Capsule) else Orientation.identity()
    beta = exit_distance(call.shape, orient, -direction)
    node = BodyNode(
        name=call.name,
        joint=call.joint,
        geom=GeomSpec(shape=call.shape, local_pos=direction * beta, local_orient=orient, color=call.color),
        anchor_local=anchor_local,
        growth_dir=direction,
        symmetry_tag=call.tag,
    )
    return tree.add_node(parent_id, node)


# ---------------------------------------------------------------------------
# Edit commands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetSize:
    node: str
    params: tuple[float, ...]


@dataclass(frozen=True)
class SetColor:
    node: str
    color: Rgba


@dataclass(frozen=True)
class SetShape:
    node: str
    shape: PrimitiveShape


@dataclass(frozen=True)
class SetGrowthDirection:
    node: str
    direction: Vec3


@dataclass(frozen=True)
class SetJoint:
    node: str
    joint: JointSpec


@dataclass(frozen=True)
class AddBody:
    call: AttachBodyCall


@dataclass(frozen=True)
class RemoveSubtree:
    node: str


@dataclass(frozen=True)
class SetSymmetryTag:
    node: str
    tag: Optional[SymmetryTag]


EditCommand = Union[
    SetSize, SetColor, SetShape, SetGrowthDirection, SetJoint, AddBody, RemoveSubtree, SetSymmetryTag
]


def parse_edit_commands(payload) -> list[EditCommand]:
    """Parse the model's JSON array of edits; raises ParseFailure."""
    if not isinstance(payload, list):
        raise ParseFailure("edits must be a JSON array")
    edits: list[EditCommand] = []
    for i, raw in enumerate(payload):
        what = f"edit {i}"
        if not isinstance(raw, dict):
            raise ParseFailure(f"{what} is not an object")
        op = raw.get("op")
        if op == "add_body":
            try:
                edits.append(AddBody(AttachBodyCall.from_payload(raw)))
            except ToolCallInvalid as exc:
                raise ParseFailure(f"{what}: {exc}") from exc
            continue
        node = raw.get("node")
        if not isinstance(node, str) or not node:
            raise ParseFailure(f"{what}: missing node name")
        if op == "set_size":
            params = raw.get("params")
            if (
                not isinstance(params, (list, tuple))
                or not params
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in params)
            ):
                raise ParseFailure(f"{what}: params must be a list of numbers")
            if not all(v > 0 for v in params):
                raise ParseFailure(f"{what}: size params must be positive")
            edits.append(SetSize(node, tuple(float(v) for v in params)))
        elif op == "set_color":
            edits.append(SetColor(node, _parse_rgba(raw.get("rgba"), what)))
        elif op == "set_shape":
            edits.append(SetShape(node, _parse_shape(raw.get("shape"), what)))
        elif op == "set_growth_direction":
            direction = _parse_vec3(raw.get("direction"), f"{what}: direction")
            if direction.norm() < 1e-12:
                raise ParseFailure(f"{what}: direction must be nonzero")
            edits.append(SetGrowthDirection(node, direction))
        elif op == "set_joint":
            edits.append(SetJoint(node, _parse_joint(raw.get("joint"), what)))
        elif op == "remove_subtree":
            edits.append(RemoveSubtree(node))
        elif op == "set_symmetry_tag":
            edits.append(SetSymmetryTag(node, _parse_tag(raw.get("symmetry"), what)))
        else:
            raise ParseFailure(f"{what}: unknown op {op!r}")
    return edits


def _resolve_placement(tree: KinematicTree, node_id: int) -> None:
    """Recompute one node's anchor and geom placement from its growth
    direction against the current parent geometry."""
    node = tree.node(node_id)
    if node.growth_dir is None or node.parent is None:
        return
    direction = node.growth_dir.normalized()
    origins = body_origins(tree)
    anchor_world = anchor_solve(posed_geom(tree, node.parent, origins), direction)
    node.anchor_local = anchor_world - origins[node.parent]
    orient = Orientation.align_z(direction) if isinstance(node.geom.shape, Capsule) else Orientation.identity()
    beta = exit_distance(node.geom.shape, orient, -direction)
    node.geom.local_orient = orient
    node.geom.local_pos = direction * beta
    node.growth_dir = direction


def _resolve_subtree(tree: KinematicTree, node_id: int) -> None:
    order = set(tree.iter_subtree(node_id))
    for nid in tree.topological_order():
        if nid in order:
            _resolve_placement(tree, nid)


def apply_edits(tree: KinematicTree, edits: Sequence[EditCommand]) -> KinematicTree:
    """Apply edits to a copy; all-or-nothing.

    Geometric edits re-solve the edited node's placement and its whole
    subtree so anchors stay exactly on parent surfaces. If the result fails
    validation the original tree is left untouched and EditRejected raised.
    """
    work = copy.deepcopy(tree)
    for edit in edits:
        try:
            _apply_one(work, edit)
        except UnknownNode:
            raise
        except (ToolCallInvalid, AnchorSolveFailure, GeometryError, ValueError) as exc:
            raise EditRejected(str(exc)) from exc
    report = validate(work)
    if report.errors:
        raise EditRejected(f"edited tree fails validation: {[f.code for f in report.errors]}")
    return work


def _apply_one(tree: KinematicTree, edit: EditCommand) -> None:
    if isinstance(edit, AddBody):
        attach_body(tree, edit.call)
        return
    nid = tree.require(edit.node)
    node = tree.node(nid)
    if isinstance(edit, SetSize):
        kind = _shape_kind(node.geom.shape)
        node.geom.shape = _shape_from_params(kind, edit.params, f"set_size on {edit.node!r}")
        if not shape_is_valid(node.geom.shape):
            raise ValueError(f"set_size on {edit.node!r}: params must be positive")
        _resolve_subtree(tree, nid)
    elif isinstance(edit, SetColor):
        node.geom.color = edit.color
    elif isinstance(edit, SetShape):
        node.geom.shape = edit.shape
        _resolve_subtree(tree, nid)
    elif isinstance(edit, SetGrowthDirection):
        if node.parent is None:
            raise ValueError("the root has no growth direction")
        node.growth_dir = edit.direction.normalized()
        _resolve_subtree(tree, nid)
    elif isinstance(edit, SetJoint):
        node.joint = edit.joint
    elif isinstance(edit, RemoveSubtree):
        if nid == tree.root:
            raise ValueError("cannot remove the root body")
        tree.remove_subtree(nid)
    elif isinstance(edit, SetSymmetryTag):
        node.symmetry_tag = edit.tag
    else:
        raise ValueError(f"unknown edit {edit!r}")


# ---------------------------------------------------------------------------
# Session state
# ---------------------------------------------------------------------------


def _load_prompt(name: str) -> str:
    return (resources.files(__package__) / "prompts" / f"{name}.txt").read_text(encoding="utf-8")


@dataclass
class DesignSession:
    """Persistent state of one design run; saved as session.json."""

    id: str
    label: str
    constraints: BuildConstraints
    directory: Path
    backend: Optional[Backend] = None
    stage: str = STAGE_CREATED
    tree: Optional[KinematicTree] = None
    plan: Optional[StructurePlan] = None
    snapshots: list[str] = field(default_factory=list)
    visual_rounds_used: int = 0
    human_prompts_used: int = 0
    exchanges_used: int = 0
    locked: bool = False
    reference_png: Optional[bytes] = None
    transcript: Optional[str] = None
    events: list[str] = field(default_factory=list)
    render_files: list[dict] = field(default_factory=list)
    render_size: int = 512

    @staticmethod
    def create(
        directory: str | Path,
        label: str,
        backend: Optional[Backend] = None,
        constraints: BuildConstraints = BuildConstraints(),
        reference_png: Optional[bytes] = None,
        transcript: Optional[str] = None,
        session_id: Optional[str] = None,
        render_size: int = 512,
    ) -> "DesignSession":
        if not label.strip():
            raise ValueError("creature label must be nonempty")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        session = DesignSession(
            id=session_id or uuid.uuid4().hex[:12],
            label=label,
            constraints=constraints,
            directory=directory,
            backend=backend,
            reference_png=reference_png,
            transcript=transcript,
            render_size=render_size,
        )
        if reference_png is not None:
            (directory / "reference.png").write_bytes(reference_png)
        session.save()
        return session

    def save(self) -> None:
        state = {
            "id": self.id,
            "label": self.label,
            "stage": self.stage,
            "locked": self.locked,
            "constraints": self.constraints.to_dict(),
            "plan": self.plan.to_dict() if self.plan else None,
            "visual_rounds_used": self.visual_rounds_used,
            "human_prompts_used": self.human_prompts_used,
            "exchanges_used": self.exchanges_used,
            "snapshots": list(self.snapshots),
            "transcript": self.transcript,
            "reference": "reference.png" if self.reference_png is not None else None,
            "events": list(self.events),
            "renders": self.render_files,
            "render_size": self.render_size,
        }
        path = self.directory / "session.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")
        tmp.replace(path)

    @staticmethod
    def load(directory: str | Path, backend: Optional[Backend] = None) -> "DesignSession":
        directory = Path(directory)
        state = json.loads((directory / "session.json").read_text(encoding="utf-8"))
        reference = None
        if state.get("reference"):
            reference = (directory / state["reference"]).read_bytes()
        session = DesignSession(
            id=state["id"],
            label=state["label"],
            constraints=BuildConstraints.from_dict(state["constraints"]),
            directory=directory,
            backend=backend,
            stage=state["stage"],
            locked=state["locked"],
            plan=StructurePlan.from_payload(state["plan"]) if state.get("plan") else None,
            snapshots=list(state["snapshots"]),
            visual_rounds_used=state["visual_rounds_used"],
            human_prompts_used=state["human_prompts_used"],
            exchanges_used=state["exchanges_used"],
            reference_png=reference,
            transcript=state.get("transcript"),
            events=list(state.get("events", [])),
            render_files=list(state.get("renders", [])),
            render_size=state.get("render_size", 512),
        )
        if session.snapshots:
            session.tree = parse(session.snapshots[-1])
        if isinstance(backend, ReplayBackend):
            backend.seek(session.exchanges_used)
        return session

    def advance(self, stage: str) -> None:
        """Move forward; stage order is monotone by contract."""
        if STAGES.index(stage) < STAGES.index(self.stage):
            raise StageError(f"stage cannot regress from {self.stage} to {stage}")
        self.stage = stage

    def log(self, message: str) -> None:
        self.events.append(message)


def _exchange(session: DesignSession, request: CompletionRequest) -> CompletionResponse:
    if session.backend is None:
        raise StageError("session has no completion backend attached")
    response = session.backend.complete(request)
    session.exchanges_used += 1
    return response


def _commit_snapshot(session: DesignSession) -> None:
    """Persist the current tree as a new snapshot with its four renders."""
    index = len(session.snapshots)
    session.snapshots.append(emit(session.tree))
    renders = render_contact_views(session.tree, session.render_size)
    render_dir = session.directory / "renders" / str(index)
    render_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for view, png in renders.items():
        path = render_dir / f"{view}.png"
        path.write_bytes(png)
        files[view] = str(path.relative_to(session.directory))
    session.render_files.append(files)
    session.save()


def _current_renders(session: DesignSession) -> dict[str, bytes]:
    if not session.render_files:
        return render_contact_views(session.tree, session.render_size)
    files = session.render_files[-1]
    return {view: (session.directory / rel).read_bytes() for view, rel in files.items()}


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _request_json(session: DesignSession, text: str, images: Sequence[ImagePart] = (),
                  tools: Sequence[ToolSchema] = ()):
    """One exchange expecting JSON in the reply, with a single re-prompt."""
    first = user_message(text, images)
    response = _exchange(session, CompletionRequest(messages=(first,), tools=tuple(tools)))
    try:
        return extract_json(response.text), response
    except (NoJsonFound, MalformedJson):
        retry = CompletionRequest(
            messages=(
                first,
                _assistant_echo(response),
                user_message(
                    "Your previous reply did not contain valid JSON of the required shape. "
                    "Reply again with only the JSON described above."
                ),
            ),
            tools=tuple(tools),
        )
        second = _exchange(session, retry)
        try:
            return extract_json(second.text), second
        except (NoJsonFound, MalformedJson) as exc:
            raise ParseFailure(f"no usable JSON after re-prompt: {exc}") from exc


def _assistant_echo(response: CompletionResponse):
    text = response.text if response.text.strip() else "(tool call)"
    return assistant_message(text)


def synthesize_structure(session: DesignSession) -> StructurePlan:
    """Stage 1: ask for the kinematic-tree plan and constraint-check it."""
    if session.stage != STAGE_CREATED:
        raise StageError(f"structure synthesis requires a Created session, not {session.stage}")
    if not session.label.strip():
        raise ValueError("creature label must be nonempty")
    constraints = session.constraints
    symmetry_line = (
        "the design must be left/right symmetric: tag every paired body"
        if constraints.require_symmetry
        else "symmetry is optional"
    )
    text = _load_prompt("structure").format(
        label=session.label,
        max_components=constraints.max_components,
        max_links=constraints.max_links_per_component,
        symmetry_line=symmetry_line,
    )
    images = [ImagePart(session.reference_png)] if session.reference_png is not None else []
    payload, _response = _request_json(session, text, images)
    try:
        plan = StructurePlan.from_payload(payload)
    except ParseFailure:
        raise
    plan.check(constraints)
    session.plan = plan
    session.advance(STAGE_STRUCTURED)
    session.save()
    return plan


def _descriptor_call(session: DesignSession, tree: KinematicTree, descriptor: NodeDescriptor) -> AttachBodyCall:
    """One build exchange for one descriptor, with a single re-prompt."""
    parent_text = (
        "this is the root body" if descriptor.parent is None else f"parent: {descriptor.parent}"
    )
    symmetry_text = (
        "null"
        if descriptor.symmetry is None
        else json.dumps({"side": descriptor.symmetry.side, "group": descriptor.symmetry.group})
    )
    text = _load_prompt("build").format(
        label=session.label,
        summary=summarize(tree) if len(tree) else "(empty)\n",
        name=descriptor.name,
        parent_text=parent_text,
        purpose=descriptor.purpose or "unspecified",
        allowed_shapes=", ".join(sorted(session.constraints.allowed_shapes)),
        allowed_joints=", ".join(sorted(session.constraints.allowed_joints)),
        symmetry_text=symmetry_text,
    )
    first = user_message(text)
    request = CompletionRequest(messages=(first,), tools=(ATTACH_BODY_TOOL,))
    response = _exchange(session, request)
    try:
        return _call_from_response(session, descriptor, response)
    except ToolCallInvalid as exc:
        retry = CompletionRequest(
            messages=(
                first,
                _assistant_echo(response),
                user_message(
                    f"Your previous attach_body call was invalid: {exc}. "
                    "Call attach_body again, following the parameter description exactly."
                ),
            ),
            tools=(ATTACH_BODY_TOOL,),
        )
        second = _exchange(session, retry)
        return _call_from_response(session, descriptor, second)


def _call_from_response(
    session: DesignSession, descriptor: NodeDescriptor, response: CompletionResponse
) -> AttachBodyCall:
    """Accept either a native tool call or a JSON object in the text."""
    if response.tool_calls:
        tool_call = response.tool_calls[0]
        validate_tool_call(tool_call, [ATTACH_BODY_TOOL])
        payload = tool_call.arguments
    else:
        try:
            payload = extract_json(response.text)
        except (NoJsonFound, MalformedJson) as exc:
            raise ToolCallInvalid(f"no attach_body call in reply: {exc}") from exc
        if not isinstance(payload, dict):
            raise ToolCallInvalid("attach_body arguments must be a JSON object")
    call = AttachBodyCall.from_payload(payload)
    if call.name != descriptor.name:
        raise ToolCallInvalid(f"expected body {descriptor.name!r}, got {call.name!r}")
    if call.parent != descriptor.parent:
        raise ToolCallInvalid(f"{call.name!r} must attach under {descriptor.parent!r}")
    if call.tag != descriptor.symmetry:
        raise ToolCallInvalid(f"{call.name!r} symmetry tag must match the plan")
    if _shape_kind(call.shape) not in session.constraints.allowed_shapes:
        raise ToolCallInvalid(f"shape {_shape_kind(call.shape)!r} is not allowed")
    if _joint_kind(call.joint) not in session.constraints.allowed_joints:
        raise ToolCallInvalid(f"joint {_joint_kind(call.joint)!r} is not allowed")
    return call


def build(session: DesignSession, plan: Optional[StructurePlan] = None) -> KinematicTree:
    """Stage 2: grow the tree descriptor by descriptor; mirror right halves."""
    if session.stage != STAGE_STRUCTURED:
        raise StageError(f"build requires a Structured session, not {session.stage}")
    plan = plan or session.plan
    if plan is None:
        raise StageError("no structure plan available")
    mirror = session.constraints.require_symmetry
    tree = KinematicTree()
    skipped: set = set()
    for descriptor in plan.nodes:
        tagged_right = descriptor.symmetry is not None and descriptor.symmetry.side == "right"
        if mirror and (tagged_right or descriptor.parent in skipped):
            skipped.add(descriptor.name)
            continue  # instantiated by mirroring its left twin below
        call = _descriptor_call(session, tree, descriptor)
        attach_body(tree, call)
    if mirror:
        for nid in list(tree.topological_order()):
            node = tree.node(nid)
            if node.symmetry_tag is None or node.symmetry_tag.side != "left":
                continue
            if tree.find(_twin_name(node.name)) is None:
                tree.mirror_subtree(nid)
    report = validate(tree)
    if report.errors:
        raise ValidationFailed(report)
    session.tree = tree
    session.advance(STAGE_BUILT)
    _commit_snapshot(session)
    return tree


def _feedback_edits(session: DesignSession, prompt_text: str) -> list[EditCommand]:
    """Shared visual/human round body: exchange, parse, apply, commit."""
    renders = _current_renders(session)
    images = []
    if session.reference_png is not None:
        images.append(ImagePart(session.reference_png))
    for view in ("front", "left", "top", "threequarter"):
        images.append(ImagePart(renders[view]))
    payload, _response = _request_json(session, prompt_text, images)
    edits = parse_edit_commands(payload)
    if not edits:
        return []
    session.tree = apply_edits(session.tree, edits)
    _commit_snapshot(session)
    return edits


def visual_feedback_round(session: DesignSession) -> list[EditCommand]:
    """Stage 3, one round: compare renders with the reference, apply edits.

    An empty edit list ends refinement early. Rejected rounds still consume
    budget and leave the tree untouched.
    """
    if session.visual_rounds_used >= VISUAL_ROUND_BUDGET:
        raise BudgetExhausted(f"visual feedback is limited to {VISUAL_ROUND_BUDGET} rounds")
    if session.stage not in (STAGE_BUILT, STAGE_VISUAL_REFINED):
        raise StageError(f"visual feedback requires a built session, not {session.stage}")
    if session.reference_png is None:
        raise StageError("visual feedback requires a reference image")
    text = _load_prompt("visual").format(label=session.label, summary=summarize(session.tree))
    session.visual_rounds_used += 1
    try:
        edits = _feedback_edits(session, text)
    except EditRejected as exc:
        session.log(f"visual round {session.visual_rounds_used} rejected: {exc}")
        session.save()
        raise
    except PipelineError:
        session.save()
        raise
    if not edits:
        session.advance(STAGE_VISUAL_REFINED)
    session.save()
    return edits


def human_feedback(session: DesignSession, text: str) -> list[EditCommand]:
    """Stage 4, one round: apply edits derived from a user instruction."""
    if not text.strip():
        raise ValueError("feedback text must be nonempty")
    if session.locked:
        raise StageError("session is finalized; no further feedback accepted")
    if session.human_prompts_used >= HUMAN_PROMPT_BUDGET:
        raise BudgetExhausted(f"human feedback is limited to {HUMAN_PROMPT_BUDGET} prompts")
    if session.stage not in (STAGE_VISUAL_REFINED, STAGE_FINALIZED):
        raise StageError(f"human feedback requires a refined session, not {session.stage}")
    prompt = _load_prompt("human").format(
        label=session.label, feedback=text.strip(), summary=summarize(session.tree)
    )
    session.human_prompts_used += 1
    try:
        edits = _feedback_edits(session, prompt)
    except EditRejected as exc:
        session.log(f"human prompt {session.human_prompts_used} rejected: {exc}")
        session.save()
        raise
    except PipelineError:
        session.save()
        raise
    session.save()
    return edits


def finalize(session: DesignSession) -> None:
    """Lock the session; after this no feedback of any kind is accepted."""
    if session.tree is None:
        raise StageError("cannot finalize a session with no built tree")
    session.advance(STAGE_FINALIZED)
    session.locked = True
    session.save()


def run_full(session: DesignSession) -> tuple[KinematicTree, str, ValidationReport]:
    """All stages end to end; leaves the session Finalized but not locked,
    so human feedback remains available until an explicit finalize."""
    if session.stage != STAGE_CREATED:
        raise StageError(f"run_full requires a fresh session, not {session.stage}")
    plan = synthesize_structure(session)
    build(session, plan)
    if session.reference_png is not None:
        while session.visual_rounds_used < VISUAL_ROUND_BUDGET and session.stage == STAGE_BUILT:
            try:
                edits = visual_feedback_round(session)
            except EditRejected:
                continue
            if not edits:
                break
    session.advance(STAGE_VISUAL_REFINED)
    session.advance(STAGE_FINALIZED)
    session.save()
    document = session.snapshots[-1]
    report = validate(session.tree)
    return session.tree, document, report
