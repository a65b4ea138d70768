"""Kinematic validity audit: attachment gaps, anchors off surface, symmetry
drift, joint sanity, and deep penetration between unrelated bodies.

Findings are structured, ordered by tree position, and serializable; the
report never raises. Attachment checks are errors; penetration between
non-adjacent bodies is only a warning because overlapping stylistic geoms
(eyes sunk into a head) are legitimate designs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .geometry import body_origins, pair_gap, posed_geom, primitive_aabb, surface_distance
from .model import (
    Ball,
    BodyNode,
    Fixed,
    Free,
    Hinge,
    KinematicTree,
    UNIT_EPS,
    Vec3,
    body_dimensions,
    mirror_joint,
    swap_side_name,
)

ANCHOR_SURFACE_EPS = 1e-6


@dataclass(frozen=True, slots=True)
class Tolerances:
    """Validation thresholds. sibling_penetration_max defaults to
    0.25 x the smaller bounding half-extent of each pair when None."""

    attach_gap_max: float = 1e-3
    sibling_penetration_max: Optional[float] = None
    symmetry_eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.attach_gap_max <= 0 or self.symmetry_eps <= 0:
            raise ValueError("tolerances must be positive")
        if self.sibling_penetration_max is not None and self.sibling_penetration_max <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True, slots=True)
class Finding:
    code: str
    nodes: tuple[str, ...]
    value: float

    def to_dict(self) -> dict:
        return {"code": self.code, "nodes": list(self.nodes), "value": self.value}


@dataclass(slots=True)
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors

    def codes(self) -> set[str]:
        return {f.code for f in self.errors} | {f.code for f in self.warnings}

    def to_dict(self) -> dict:
        return {
            "errors": [f.to_dict() for f in self.errors],
            "warnings": [f.to_dict() for f in self.warnings],
            "passed": self.passed,
        }


def report_state(report: ValidationReport) -> dict:
    """Strict-JSON-safe report dict: non-finite finding values become null."""

    def fix(finding: Finding) -> dict:
        d = finding.to_dict()
        if not math.isfinite(d["value"]):
            d["value"] = None
        return d

    return {
        "passed": report.passed,
        "errors": [fix(f) for f in report.errors],
        "warnings": [fix(f) for f in report.warnings],
    }


def audit_counts(tree: KinematicTree) -> tuple[int, int]:
    """(bodies, articulated joints): fixed welds and the root's free joint
    do not count as joints."""
    joints = sum(
        1 for nid in tree.ids() if isinstance(tree.node(nid).joint, (Hinge, Ball))
    )
    return len(tree), joints


def _min_half_extent(node: BodyNode) -> float:
    dims = body_dimensions(node)
    return min(dims.x, dims.y, dims.z)


def _quat_deviation(a, b) -> float:
    # q and -q are the same rotation
    direct = max(abs(a.w - b.w), abs(a.x - b.x), abs(a.y - b.y), abs(a.z - b.z))
    flipped = max(abs(a.w + b.w), abs(a.x + b.x), abs(a.y + b.y), abs(a.z + b.z))
    return min(direct, flipped)


def _vec_deviation(a: Vec3, b: Vec3) -> float:
    return max(abs(a.x - b.x), abs(a.y - b.y), abs(a.z - b.z))


def _pair_deviation(tree: KinematicTree, left_id: int, right_id: int) -> float:
    """Worst mirrored-field mismatch between two subtrees; inf on a
    structural mismatch."""
    left_nodes = {tree.node(n).name: n for n in tree.iter_subtree(left_id)}
    right_nodes = {tree.node(n).name: n for n in tree.iter_subtree(right_id)}
    expected_right = {swap_side_name(n, "left", "right") for n in left_nodes}
    if expected_right != set(right_nodes):
        return math.inf

    worst = 0.0
    for lname, lid in left_nodes.items():
        ln = tree.node(lid)
        rn = tree.node(right_nodes[swap_side_name(lname, "left", "right")])
        worst = max(worst, _vec_deviation(ln.anchor_local.mirror_y(), rn.anchor_local))
        if (ln.growth_dir is None) != (rn.growth_dir is None):
            return math.inf
        if ln.growth_dir is not None:
            worst = max(worst, _vec_deviation(ln.growth_dir.mirror_y(), rn.growth_dir))
        worst = max(worst, _vec_deviation(ln.geom.local_pos.mirror_y(), rn.geom.local_pos))
        worst = max(worst, _quat_deviation(ln.geom.local_orient.mirror_y(), rn.geom.local_orient))
        if type(ln.geom.shape) is not type(rn.geom.shape):
            return math.inf
        for x, y in zip(ln.geom.shape.size_params(), rn.geom.shape.size_params()):
            worst = max(worst, abs(x - y))
        lj, rj = mirror_joint(ln.joint), rn.joint
        if type(lj) is not type(rj):
            return math.inf
        if isinstance(lj, Hinge):
            worst = max(worst, _vec_deviation(lj.axis, rj.axis))
            worst = max(worst, abs(lj.range[0] - rj.range[0]), abs(lj.range[1] - rj.range[1]))
    return worst


def validate(tree: KinematicTree, tol: Tolerances = Tolerances()) -> ValidationReport:
    """Audit attachment, symmetry, and joint sanity; pure and deterministic."""
    report = ValidationReport()
    order = tree.topological_order()
    position = {nid: i for i, nid in enumerate(order)}
    origins = body_origins(tree)
    posed = {nid: posed_geom(tree, nid, origins) for nid in order}

    # joints
    for nid in order:
        node = tree.node(nid)
        if isinstance(node.joint, Hinge):
            if abs(node.joint.axis.norm() - 1.0) > UNIT_EPS:
                report.errors.append(Finding("BadJoint", (node.name,), node.joint.axis.norm()))
            if node.joint.range[0] > node.joint.range[1]:
                report.errors.append(
                    Finding("BadJoint", (node.name,), node.joint.range[0] - node.joint.range[1])
                )
        elif isinstance(node.joint, Free) and node.parent is not None:
            report.errors.append(Finding("BadJoint", (node.name,), 0.0))

    # attachment: every edge must close the parent-child contact
    for nid in order:
        node = tree.node(nid)
        if node.parent is None:
            continue
        parent = tree.node(node.parent)
        gap = pair_gap(posed[node.parent], posed[nid])
        if gap > tol.attach_gap_max:
            report.errors.append(Finding("GapDetected", (parent.name, node.name), gap))
        anchor_err = abs(surface_distance(posed[node.parent], origins[nid]))
        if anchor_err > ANCHOR_SURFACE_EPS:
            report.errors.append(Finding("AnchorOffSurface", (parent.name, node.name), anchor_err))

    # symmetry groups
    groups: dict[str, dict[str, int]] = {}
    for nid in order:
        tag = tree.node(nid).symmetry_tag
        if tag is not None:
            groups.setdefault(tag.group, {})[tag.side] = nid
    for group in sorted(groups):
        sides = groups[group]
        if set(sides) != {"left", "right"}:
            only = next(iter(sides.values()))
            report.errors.append(Finding("AsymmetricPair", (tree.node(only).name,), math.inf))
            continue
        deviation = _pair_deviation(tree, sides["left"], sides["right"])
        if deviation > tol.symmetry_eps:
            names = (tree.node(sides["left"]).name, tree.node(sides["right"]).name)
            report.errors.append(Finding("AsymmetricPair", names, deviation))

    # deep penetration between non-adjacent bodies (warning only)
    adjacent = set()
    for nid in order:
        parent = tree.node(nid).parent
        if parent is not None:
            adjacent.add((min(nid, parent), max(nid, parent)))
    aabbs = {nid: primitive_aabb(posed[nid]) for nid in order}
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            if (min(a, b), max(a, b)) in adjacent:
                continue
            (alo, ahi), (blo, bhi) = aabbs[a], aabbs[b]
            if (
                ahi.x < blo.x or bhi.x < alo.x
                or ahi.y < blo.y or bhi.y < alo.y
                or ahi.z < blo.z or bhi.z < alo.z
            ):
                continue  # disjoint bounds cannot penetrate
            limit = tol.sibling_penetration_max
            if limit is None:
                limit = 0.25 * min(_min_half_extent(tree.node(a)), _min_half_extent(tree.node(b)))
            gap = pair_gap(posed[a], posed[b])
            if gap < -limit:
                report.warnings.append(
                    Finding("DeepPenetration", (tree.node(a).name, tree.node(b).name), -gap)
                )

    def sort_key(f: Finding):
        ids = [position.get(tree.find(n), len(order)) for n in f.nodes if tree.find(n) is not None]
        return (min(ids) if ids else len(order), f.code)

    report.errors.sort(key=sort_key)
    report.warnings.sort(key=sort_key)
    return report
