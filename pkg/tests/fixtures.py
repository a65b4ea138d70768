"""Shared tree fixtures built through the anchor solve.

Every fixture attaches children by growing from the parent geom's center, so
anchors sit on parent surfaces by construction and validation passes with
zero errors. The turtle, crab, and rabbit fixtures pin the body/joint counts
and topologies the rest of the suite checks against.
"""

from __future__ import annotations

import math
from random import Random
from typing import Optional

from morphoforge.geometry import anchor_solve, body_origins, exit_distance, posed_geom
from morphoforge.model import (
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

GRAY = Rgba(0.7, 0.7, 0.7, 1.0)


def make_root(name: str, shape: PrimitiveShape, joint: JointSpec = Free(), color: Rgba = GRAY) -> KinematicTree:
    tree = KinematicTree()
    tree.add_node(None, BodyNode(name=name, joint=joint, geom=GeomSpec(shape=shape, color=color)))
    return tree


def shape_orient(shape: PrimitiveShape, direction: Vec3) -> Orientation:
    """Capsules grow along their axis; box/ellipsoid stay axis-aligned."""
    if isinstance(shape, Capsule):
        return Orientation.align_z(direction)
    return Orientation.identity()


def attach(
    tree: KinematicTree,
    parent_name: str,
    name: str,
    shape: PrimitiveShape,
    direction: Vec3,
    joint: JointSpec,
    color: Rgba = GRAY,
    tag: Optional[SymmetryTag] = None,
    orient: Optional[Orientation] = None,
) -> int:
    """Grow a child from the parent geom's center along `direction`.

    The joint anchor is the ray's surface exit; the child geom is placed so
    its own surface touches the anchor (center pushed out by the child's exit
    distance along the reversed direction).
    """
    d = direction.normalized()
    parent_id = tree.require(parent_name)
    origins = body_origins(tree)
    anchor_world = anchor_solve(posed_geom(tree, parent_id, origins), d)
    anchor_local = anchor_world - origins[parent_id]
    geom_orient = shape_orient(shape, d) if orient is None else orient
    beta = exit_distance(shape, geom_orient, -d)
    node = BodyNode(
        name=name,
        joint=joint,
        geom=GeomSpec(shape=shape, local_pos=d * beta, local_orient=geom_orient, color=color),
        anchor_local=anchor_local,
        growth_dir=d,
        symmetry_tag=tag,
    )
    return tree.add_node(parent_id, node)


def hinge_y() -> Hinge:
    return Hinge(Vec3(0.0, 1.0, 0.0), (-1.2, 1.2))


def make_turtle() -> KinematicTree:
    """7 bodies, 6 articulated joints: torso, head, tail, four legs."""
    tree = make_root("torso", Ellipsoid(Vec3(0.3, 0.25, 0.12)), color=Rgba(0.25, 0.4, 0.2, 1.0))
    attach(tree, "torso", "head", Ellipsoid(Vec3(0.08, 0.06, 0.05)),
           Vec3(1.0, 0.0, 0.15), hinge_y(), color=Rgba(0.3, 0.5, 0.25, 1.0))
    attach(tree, "torso", "tail", Capsule(0.025, 0.05),
           Vec3(-1.0, 0.0, -0.1), hinge_y(), color=Rgba(0.3, 0.5, 0.25, 1.0))
    legs = [
        ("leg_front_left", Vec3(0.5, 0.55, -0.55), "leg_front"),
        ("leg_back_left", Vec3(-0.5, 0.55, -0.55), "leg_back"),
    ]
    for name, d, group in legs:
        nid = attach(tree, "torso", name, Capsule(0.035, 0.09), d,
                     Hinge(Vec3(1.0, 0.0, 0.0), (-0.8, 0.8)),
                     color=Rgba(0.3, 0.5, 0.25, 1.0), tag=SymmetryTag("left", group))
        tree.mirror_subtree(nid)
    return tree


def make_crab() -> KinematicTree:
    """31 bodies, 30 joints: torso, 8 three-link legs, 2 two-link claws, 2 eyes."""
    tree = make_root("torso", Ellipsoid(Vec3(0.28, 0.22, 0.1)), color=Rgba(0.7, 0.25, 0.15, 1.0))
    shell = Rgba(0.75, 0.3, 0.18, 1.0)
    for i, x in enumerate((0.42, 0.15, -0.15, -0.42)):
        base = f"leg{i + 1}_left"
        d_out = Vec3(x, 0.9, -0.25)
        nid = attach(tree, "torso", base, Capsule(0.022, 0.07), d_out,
                     Hinge(Vec3(0.0, 0.0, 1.0), (-0.7, 0.7)), color=shell,
                     tag=SymmetryTag("left", f"leg{i + 1}"))
        attach(tree, base, f"leg{i + 1}_mid_left", Capsule(0.018, 0.065),
               Vec3(x * 0.3, 0.8, -0.6), Hinge(Vec3(1.0, 0.0, 0.0), (-1.0, 0.3)), color=shell)
        attach(tree, f"leg{i + 1}_mid_left", f"leg{i + 1}_tip_left", Capsule(0.014, 0.06),
               Vec3(x * 0.2, 0.35, -0.9), Hinge(Vec3(1.0, 0.0, 0.0), (-1.0, 0.2)), color=shell)
        tree.mirror_subtree(nid)
    claw_id = attach(tree, "torso", "claw_arm_left", Capsule(0.028, 0.08),
                     Vec3(0.8, 0.55, 0.1), Hinge(Vec3(0.0, 0.0, 1.0), (-0.9, 0.9)),
                     color=shell, tag=SymmetryTag("left", "claw"))
    attach(tree, "claw_arm_left", "claw_pincer_left", Ellipsoid(Vec3(0.06, 0.035, 0.025)),
           Vec3(0.9, 0.3, 0.1), Hinge(Vec3(0.0, 0.0, 1.0), (-0.5, 0.5)), color=Rgba(0.8, 0.35, 0.2, 1.0))
    tree.mirror_subtree(claw_id)
    eye_id = attach(tree, "torso", "eye_left", Capsule(0.012, 0.03),
                    Vec3(0.6, 0.25, 0.9), Ball(), color=Rgba(0.15, 0.12, 0.1, 1.0),
                    tag=SymmetryTag("left", "eye"))
    tree.mirror_subtree(eye_id)
    return tree


RABBIT_PARENT_MAP = {
    "torso": None,
    "head": "torso",
    "ear_left": "head",
    "ear_right": "head",
    "leg_front_left": "torso",
    "leg_front_right": "torso",
    "leg_back_left": "torso",
    "leg_back_right": "torso",
    "tail": "torso",
}


def make_rabbit() -> KinematicTree:
    """9 bodies: ears under the head, limbs and tail under the torso."""
    fur = Rgba(0.82, 0.78, 0.72, 1.0)
    tree = make_root("torso", Ellipsoid(Vec3(0.16, 0.1, 0.11)), color=fur)
    attach(tree, "torso", "head", Ellipsoid(Vec3(0.07, 0.055, 0.06)),
           Vec3(1.0, 0.0, 0.55), Ball(), color=fur)
    ear = attach(tree, "head", "ear_left", Capsule(0.014, 0.055),
                 Vec3(-0.25, 0.3, 1.0), Hinge(Vec3(0.0, 1.0, 0.0), (-0.6, 0.6)),
                 color=fur, tag=SymmetryTag("left", "ear"))
    tree.mirror_subtree(ear)
    for name, d, group in [
        ("leg_front_left", Vec3(0.55, 0.4, -0.75), "leg_front"),
        ("leg_back_left", Vec3(-0.55, 0.4, -0.75), "leg_back"),
    ]:
        nid = attach(tree, "torso", name, Capsule(0.022, 0.06), d,
                     Hinge(Vec3(0.0, 1.0, 0.0), (-1.3, 1.3)), color=fur,
                     tag=SymmetryTag("left", group))
        tree.mirror_subtree(nid)
    attach(tree, "torso", "tail", Ellipsoid(Vec3(0.03, 0.025, 0.03)),
           Vec3(-1.0, 0.0, 0.3), Fixed(), color=Rgba(0.9, 0.88, 0.85, 1.0))
    return tree


def parent_name_map(tree: KinematicTree) -> dict[str, Optional[str]]:
    out: dict[str, Optional[str]] = {}
    for nid in tree.topological_order():
        node = tree.node(nid)
        out[node.name] = None if node.parent is None else tree.node(node.parent).name
    return out


def all_fixtures() -> dict[str, KinematicTree]:
    return {"turtle": make_turtle(), "crab": make_crab(), "rabbit": make_rabbit()}


# ---------------------------------------------------------------------------
# Randomized valid trees (round-trip and validator property tests)
# ---------------------------------------------------------------------------


def _random_shape(rng: Random) -> PrimitiveShape:
    kind = rng.choice(("box", "ellipsoid", "capsule"))
    if kind == "box":
        return Box(Vec3(rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3)))
    if kind == "ellipsoid":
        return Ellipsoid(Vec3(rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3)))
    return Capsule(rng.uniform(0.015, 0.08), rng.uniform(0.0, 0.25))


def _random_direction(rng: Random) -> Vec3:
    while True:
        v = Vec3(rng.gauss(0, 1), rng.gauss(0, 1), rng.gauss(0, 1))
        if v.norm() > 1e-6:
            return v.normalized()


def _random_joint(rng: Random) -> JointSpec:
    kind = rng.choice(("hinge", "hinge", "ball", "fixed"))
    if kind == "hinge":
        lo = rng.uniform(-2.0, 0.0)
        return Hinge(_random_direction(rng), (lo, lo + rng.uniform(0.1, 2.5)))
    if kind == "ball":
        return Ball()
    return Fixed()


def random_tree(rng: Random, max_nodes: int = 12) -> KinematicTree:
    """A random valid tree grown through the anchor solve; mirrored pairs
    included so the symmetry audit has something to chew on."""
    tree = make_root("torso", _random_shape(rng), joint=rng.choice((Free(), Fixed())))
    names = ["torso"]
    count = 1
    serial = 0
    while count < max_nodes and rng.random() < 0.85:
        parent = rng.choice(names)
        serial += 1
        color = Rgba(rng.random(), rng.random(), rng.random(), rng.uniform(0.3, 1.0))
        if rng.random() < 0.3 and count + 2 <= max_nodes:
            # mirrored pairs stay leaves: a child added to one side only
            # would break the symmetry audit
            name = f"limb{serial}_left"
            nid = attach(tree, parent, name, _random_shape(rng), _random_direction(rng),
                         _random_joint(rng), color=color, tag=SymmetryTag("left", f"limb{serial}"))
            tree.mirror_subtree(nid)
            count += 2
        else:
            name = f"part{serial}"
            attach(tree, parent, name, _random_shape(rng), _random_direction(rng),
                   _random_joint(rng), color=color)
            names.append(name)
            count += 1
    return tree
