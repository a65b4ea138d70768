"""MJCF serialization: emit a kinematic tree as MuJoCo XML and parse the
supported subset back losslessly.

The emitted subset: one <body> per node (pos = joint anchor in the parent
frame), a single geom per body, hinge/ball/free joints (fixed joints emit no
joint element), motors for hinges and per-axis general actuators for ball
joints. Growth directions and symmetry tags ride in the <custom> block so
parse(emit(tree)) reproduces the tree exactly. Angles are radians throughout.

Numbers are written with Python's shortest round-trip repr, so parsing
recovers the exact float (the round-trip contract takes precedence over
fixed-width formatting).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional

from .errors import MorphoforgeError
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
    Vec3,
)

MjcfDocument = str

MODEL_NAME = "morphoforge"


class MjcfError(MorphoforgeError):
    pass


class MalformedXml(MjcfError):
    pass


class UnsupportedElement(MjcfError):
    pass


class SubsetViolation(MjcfError):
    pass


def _fmt(value: float) -> str:
    # shortest exact round-trip decimal
    return repr(float(value))


def _fmt_seq(values) -> str:
    return " ".join(_fmt(v) for v in values)


def _shape_attrs(shape: PrimitiveShape) -> tuple[str, str]:
    if isinstance(shape, Box):
        return "box", _fmt_seq(shape.half_extents.as_tuple())
    if isinstance(shape, Ellipsoid):
        return "ellipsoid", _fmt_seq(shape.semi_axes.as_tuple())
    if isinstance(shape, Capsule):
        return "capsule", _fmt_seq((shape.radius, shape.half_length))
    raise TypeError(f"unknown shape {shape!r}")


def _is_identity(q: Orientation) -> bool:
    return q.w == 1.0 and q.x == 0.0 and q.y == 0.0 and q.z == 0.0


def _emit_geom(parent: ET.Element, name: str, geom: GeomSpec) -> None:
    gtype, size = _shape_attrs(geom.shape)
    el = ET.SubElement(parent, "geom")
    el.set("name", f"{name}_geom")
    el.set("type", gtype)
    el.set("size", size)
    el.set("pos", _fmt_seq(geom.local_pos.as_tuple()))
    if not _is_identity(geom.local_orient):
        q = geom.local_orient
        el.set("quat", _fmt_seq((q.w, q.x, q.y, q.z)))
    c = geom.color
    el.set("rgba", _fmt_seq((c.r, c.g, c.b, c.a)))


def _emit_joint(parent: ET.Element, name: str, joint: JointSpec) -> None:
    if isinstance(joint, Free):
        ET.SubElement(parent, "freejoint")
        return
    if isinstance(joint, Fixed):
        return
    el = ET.SubElement(parent, "joint")
    el.set("name", f"{name}_joint")
    if isinstance(joint, Hinge):
        el.set("type", "hinge")
        el.set("axis", _fmt_seq(joint.axis.as_tuple()))
        el.set("range", _fmt_seq(joint.range))
    elif isinstance(joint, Ball):
        el.set("type", "ball")


def emit(tree: KinematicTree) -> MjcfDocument:
    """Serialize the tree as MJCF text. Deterministic: topological element
    order, fixed attribute order, shortest round-trip number formatting."""
    tree.assert_valid()
    root = ET.Element("mujoco")
    root.set("model", MODEL_NAME)
    ET.SubElement(root, "compiler").set("angle", "radian")

    custom = ET.SubElement(root, "custom")
    order = tree.topological_order()
    for nid in order:
        node = tree.node(nid)
        if node.growth_dir is not None:
            num = ET.SubElement(custom, "numeric")
            num.set("name", f"growth_dir:{node.name}")
            num.set("data", _fmt_seq(node.growth_dir.as_tuple()))
        if node.symmetry_tag is not None:
            txt = ET.SubElement(custom, "text")
            txt.set("name", f"symmetry:{node.name}")
            txt.set("data", f"{node.symmetry_tag.side}:{node.symmetry_tag.group}")

    worldbody = ET.SubElement(root, "worldbody")
    elements: dict[int, ET.Element] = {}
    for nid in order:
        node = tree.node(nid)
        parent_el = worldbody if node.parent is None else elements[node.parent]
        body = ET.SubElement(parent_el, "body")
        body.set("name", node.name)
        body.set("pos", _fmt_seq(node.anchor_local.as_tuple()))
        _emit_joint(body, node.name, node.joint)
        _emit_geom(body, node.name, node.geom)
        elements[nid] = body

    actuator = ET.SubElement(root, "actuator")
    for nid in order:
        node = tree.node(nid)
        if isinstance(node.joint, Hinge):
            motor = ET.SubElement(actuator, "motor")
            motor.set("name", f"{node.name}_motor")
            motor.set("joint", f"{node.name}_joint")
            motor.set("gear", "1")
        elif isinstance(node.joint, Ball):
            for axis_name, gear in (("x", "1 0 0"), ("y", "0 1 0"), ("z", "0 0 1")):
                gen = ET.SubElement(actuator, "general")
                gen.set("name", f"{node.name}_motor_{axis_name}")
                gen.set("joint", f"{node.name}_joint")
                gen.set("gear", gear)

    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="unicode") + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_GEOM_TYPES = {"box", "ellipsoid", "capsule"}
_BODY_CHILDREN = {"body", "geom", "joint", "freejoint", "inertial"}


def _floats(text: Optional[str], n: int, what: str) -> tuple[float, ...]:
    if text is None:
        raise MalformedXml(f"missing {what}")
    try:
        vals = tuple(float(tok) for tok in text.split())
    except ValueError as exc:
        raise MalformedXml(f"bad number in {what}: {text!r}") from exc
    if len(vals) != n:
        raise MalformedXml(f"{what} needs {n} numbers, got {len(vals)}")
    return vals


def _parse_geom(el: ET.Element) -> GeomSpec:
    gtype = el.get("type", "sphere")
    if gtype not in _GEOM_TYPES:
        raise UnsupportedElement(f"geom type {gtype!r} not supported")
    if gtype == "box":
        shape: PrimitiveShape = Box(Vec3(*_floats(el.get("size"), 3, "box size")))
    elif gtype == "ellipsoid":
        shape = Ellipsoid(Vec3(*_floats(el.get("size"), 3, "ellipsoid size")))
    else:
        r, hl = _floats(el.get("size"), 2, "capsule size")
        shape = Capsule(r, hl)
    pos = Vec3(*_floats(el.get("pos", "0 0 0"), 3, "geom pos"))
    quat = Orientation(*_floats(el.get("quat", "1 0 0 0"), 4, "geom quat"))
    rgba = Rgba(*_floats(el.get("rgba", "0.5 0.5 0.5 1"), 4, "geom rgba"))
    return GeomSpec(shape=shape, local_pos=pos, local_orient=quat, color=rgba)


def _parse_joint(body_el: ET.Element) -> JointSpec:
    joints = body_el.findall("joint") + body_el.findall("freejoint")
    if len(joints) > 1:
        raise SubsetViolation(f"body {body_el.get('name')!r} has multiple joints")
    if not joints:
        return Fixed()
    el = joints[0]
    if el.tag == "freejoint":
        return Free()
    jtype = el.get("type", "hinge")
    if jtype == "hinge":
        axis = Vec3(*_floats(el.get("axis", "0 0 1"), 3, "hinge axis"))
        if el.get("range") is not None:
            lo, hi = _floats(el.get("range"), 2, "hinge range")
        else:
            lo, hi = Hinge(axis).range
        return Hinge(axis, (lo, hi))
    if jtype == "ball":
        return Ball()
    if jtype == "free":
        return Free()
    raise UnsupportedElement(f"joint type {jtype!r} not supported")


def _parse_body(
    tree: KinematicTree,
    el: ET.Element,
    parent_id: Optional[int],
    custom_growth: dict[str, Vec3],
    custom_tags: dict[str, SymmetryTag],
) -> None:
    name = el.get("name")
    if not name:
        raise MalformedXml("body without a name")
    for child in el:
        if child.tag not in _BODY_CHILDREN:
            raise UnsupportedElement(f"element <{child.tag}> not supported inside <body>")
    geoms = el.findall("geom")
    if len(geoms) != 1:
        raise SubsetViolation(f"body {name!r} must have exactly one geom, found {len(geoms)}")
    node = BodyNode(
        name=name,
        joint=_parse_joint(el),
        geom=_parse_geom(geoms[0]),
        anchor_local=Vec3(*_floats(el.get("pos", "0 0 0"), 3, "body pos")),
        growth_dir=custom_growth.get(name),
        symmetry_tag=custom_tags.get(name),
    )
    nid = tree.add_node(parent_id, node)
    for child in el.findall("body"):
        _parse_body(tree, child, nid, custom_growth, custom_tags)


def parse(text: str) -> KinematicTree:
    """Rebuild a tree from MJCF text in the emitted subset."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "mujoco":
        raise UnsupportedElement(f"root element <{root.tag}> is not <mujoco>")

    custom_growth: dict[str, Vec3] = {}
    custom_tags: dict[str, SymmetryTag] = {}
    for custom in root.findall("custom"):
        for num in custom.findall("numeric"):
            cname = num.get("name", "")
            if cname.startswith("growth_dir:"):
                custom_growth[cname.split(":", 1)[1]] = Vec3(*_floats(num.get("data"), 3, cname))
        for txt in custom.findall("text"):
            cname = txt.get("name", "")
            if cname.startswith("symmetry:"):
                data = txt.get("data", "")
                side, _, group = data.partition(":")
                if side not in ("left", "right") or not group:
                    raise MalformedXml(f"bad symmetry tag {data!r}")
                custom_tags[cname.split(":", 1)[1]] = SymmetryTag(side, group)

    worldbody = root.find("worldbody")
    if worldbody is None:
        raise SubsetViolation("document has no <worldbody>")
    roots = worldbody.findall("body")
    if len(roots) != 1:
        raise SubsetViolation(f"worldbody must hold exactly one root body, found {len(roots)}")

    tree = KinematicTree()
    _parse_body(tree, roots[0], None, custom_growth, custom_tags)
    return tree


# ---------------------------------------------------------------------------
# Summaries for prompt context
# ---------------------------------------------------------------------------


def _short(value: float) -> str:
    return f"{value:.4g}"


def _joint_text(joint: JointSpec) -> str:
    if isinstance(joint, Hinge):
        a = joint.axis
        return (
            f"hinge axis ({_short(a.x)}, {_short(a.y)}, {_short(a.z)}) "
            f"range [{_short(joint.range[0])}, {_short(joint.range[1])}]"
        )
    if isinstance(joint, Ball):
        return "ball"
    if isinstance(joint, Free):
        return "free"
    return "fixed"


def summarize(tree: KinematicTree) -> str:
    """One deterministic line per node: lineage, joint, shape, size, color.

    This is the model description placed in feedback prompts.
    """
    lines = []
    for nid in tree.topological_order():
        node = tree.node(nid)
        gtype, _ = _shape_attrs(node.geom.shape)
        size = ", ".join(_short(v) for v in node.geom.shape.size_params())
        c = node.geom.color
        color = f"rgba({_short(c.r)}, {_short(c.g)}, {_short(c.b)}, {_short(c.a)})"
        if node.parent is None:
            head = f"{node.name} [root]"
        else:
            a = node.anchor_local
            head = (
                f"{node.name} <- {tree.node(node.parent).name}"
                f" at ({_short(a.x)}, {_short(a.y)}, {_short(a.z)})"
            )
        tag = ""
        if node.symmetry_tag is not None:
            tag = f", {node.symmetry_tag.side} of pair '{node.symmetry_tag.group}'"
        lines.append(f"{head}: {_joint_text(node.joint)} joint, {gtype} size ({size}), {color}{tag}")
    return "\n".join(lines) + "\n"
