"""Kinematic-tree data model: bodies, joints, geometric primitives, symmetry
tags, and the structural editing operations the synthesis pipeline builds on.

World convention used throughout the package: +x forward, +z up, +y left.
The sagittal (left/right mirror) plane is y = 0.

Trees are plain values: safe to read concurrently, mutation requires
exclusive access. There is no interior locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

from .errors import MorphoforgeError

UNIT_EPS = 1e-9


class ModelError(MorphoforgeError):
    """Base class for structural model errors."""


class UnknownParent(ModelError):
    pass


class UnknownNode(ModelError):
    pass


class DuplicateName(ModelError):
    pass


class RootAlreadyExists(ModelError):
    pass


class UntaggedNode(ModelError):
    pass


class NameCollision(ModelError):
    pass


class InvalidTree(ModelError):
    """Raised when a structural audit finds violations."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Vec3:
    """3-vector in meters, or unitless for directions. Components must be finite."""

    x: float
    y: float
    z: float

    def __add__(self, other: Vec3) -> Vec3:
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: Vec3) -> Vec3:
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, s: float) -> Vec3:
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__

    def __neg__(self) -> Vec3:
        return Vec3(-self.x, -self.y, -self.z)

    def dot(self, other: Vec3) -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: Vec3) -> Vec3:
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> Vec3:
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)

    def mirror_y(self) -> Vec3:
        """Reflection across the sagittal plane y = 0."""
        return Vec3(self.x, -self.y, self.z)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @staticmethod
    def zero() -> Vec3:
        return Vec3(0.0, 0.0, 0.0)


@dataclass(frozen=True, slots=True)
class Orientation:
    """Unit quaternion (w, x, y, z). Norm must be within 1e-9 of 1."""

    w: float
    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def is_unit(self, eps: float = UNIT_EPS) -> bool:
        return abs(self.norm() - 1.0) <= eps

    def normalized(self) -> Orientation:
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero quaternion")
        return Orientation(self.w / n, self.x / n, self.y / n, self.z / n)

    def conjugate(self) -> Orientation:
        return Orientation(self.w, -self.x, -self.y, -self.z)

    def compose(self, other: Orientation) -> Orientation:
        """Hamilton product self * other (apply `other` first, then self)."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Orientation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, v: Vec3) -> Vec3:
        # v' = v + 2w (q x v) + 2 q x (q x v), q = vector part
        qx, qy, qz, w = self.x, self.y, self.z, self.w
        cx = qy * v.z - qz * v.y
        cy = qz * v.x - qx * v.z
        cz = qx * v.y - qy * v.x
        ccx = qy * cz - qz * cy
        ccy = qz * cx - qx * cz
        ccz = qx * cy - qy * cx
        return Vec3(
            v.x + 2.0 * (w * cx + ccx),
            v.y + 2.0 * (w * cy + ccy),
            v.z + 2.0 * (w * cz + ccz),
        )

    def inverse_rotate(self, v: Vec3) -> Vec3:
        return self.conjugate().rotate(v)

    def rotation_rows(self) -> tuple[Vec3, Vec3, Vec3]:
        """Rows of the rotation matrix equivalent to this quaternion."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return (
            Vec3(1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)),
            Vec3(2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)),
            Vec3(2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)),
        )

    def mirror_y(self) -> Orientation:
        """Conjugation by the sagittal reflection: the pose of the mirrored geom.

        Valid for the primitives used here because box, ellipsoid, and capsule
        are each symmetric under coordinate-axis flips.
        """
        return Orientation(self.w, -self.x, self.y, -self.z)

    @staticmethod
    def identity() -> Orientation:
        return Orientation(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis: Vec3, angle: float) -> Orientation:
        a = axis.normalized()
        h = 0.5 * angle
        s = math.sin(h)
        return Orientation(math.cos(h), a.x * s, a.y * s, a.z * s)

    @staticmethod
    def align_z(direction: Vec3) -> Orientation:
        """Shortest rotation taking local +z onto `direction`."""
        d = direction.normalized()
        c = d.z  # dot with +z
        if c > 1.0 - 1e-12:
            return Orientation.identity()
        if c < -1.0 + 1e-12:
            # antiparallel: 180 degrees about x
            return Orientation(0.0, 1.0, 0.0, 0.0)
        axis = Vec3(0.0, 0.0, 1.0).cross(d)
        return Orientation.from_axis_angle(axis, math.acos(c))


@dataclass(frozen=True, slots=True)
class Rgba:
    """Color with straight alpha; every component in [0, 1]."""

    r: float
    g: float
    b: float
    a: float = 1.0

    def is_valid(self) -> bool:
        return all(0.0 <= c <= 1.0 for c in (self.r, self.g, self.b, self.a))


# ---------------------------------------------------------------------------
# Primitive shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Box:
    half_extents: Vec3

    def size_params(self) -> tuple[float, ...]:
        return self.half_extents.as_tuple()


@dataclass(frozen=True, slots=True)
class Ellipsoid:
    semi_axes: Vec3

    def size_params(self) -> tuple[float, ...]:
        return self.semi_axes.as_tuple()


@dataclass(frozen=True, slots=True)
class Capsule:
    """Capsule along local +z: segment of half_length, inflated by radius."""

    radius: float
    half_length: float

    def size_params(self) -> tuple[float, ...]:
        return (self.radius, self.half_length)


PrimitiveShape = Union[Box, Ellipsoid, Capsule]


def shape_is_valid(shape: PrimitiveShape) -> bool:
    if isinstance(shape, Box):
        h = shape.half_extents
        return h.is_finite() and h.x > 0 and h.y > 0 and h.z > 0
    if isinstance(shape, Ellipsoid):
        a = shape.semi_axes
        return a.is_finite() and a.x > 0 and a.y > 0 and a.z > 0
    if isinstance(shape, Capsule):
        return (
            math.isfinite(shape.radius)
            and math.isfinite(shape.half_length)
            and shape.radius > 0
            and shape.half_length >= 0
        )
    return False


def shape_half_extents(shape: PrimitiveShape, orient: Orientation) -> Vec3:
    """Half-extents of the axis-aligned bounding box of `shape` under `orient`.

    Closed forms: box via absolute rotation rows, ellipsoid via the row-norm
    formula, capsule via the rotated axis inflated by the radius.
    """
    rows = orient.rotation_rows()
    if isinstance(shape, Box):
        h = shape.half_extents
        return Vec3(
            abs(rows[0].x) * h.x + abs(rows[0].y) * h.y + abs(rows[0].z) * h.z,
            abs(rows[1].x) * h.x + abs(rows[1].y) * h.y + abs(rows[1].z) * h.z,
            abs(rows[2].x) * h.x + abs(rows[2].y) * h.y + abs(rows[2].z) * h.z,
        )
    if isinstance(shape, Ellipsoid):
        a = shape.semi_axes
        return Vec3(
            math.sqrt((rows[0].x * a.x) ** 2 + (rows[0].y * a.y) ** 2 + (rows[0].z * a.z) ** 2),
            math.sqrt((rows[1].x * a.x) ** 2 + (rows[1].y * a.y) ** 2 + (rows[1].z * a.z) ** 2),
            math.sqrt((rows[2].x * a.x) ** 2 + (rows[2].y * a.y) ** 2 + (rows[2].z * a.z) ** 2),
        )
    if isinstance(shape, Capsule):
        axis = orient.rotate(Vec3(0.0, 0.0, 1.0))
        hl, r = shape.half_length, shape.radius
        return Vec3(abs(axis.x) * hl + r, abs(axis.y) * hl + r, abs(axis.z) * hl + r)
    raise TypeError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# Geoms, joints, symmetry
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class GeomSpec:
    """The single geometric primitive attached to a body."""

    shape: PrimitiveShape
    local_pos: Vec3 = field(default_factory=Vec3.zero)
    local_orient: Orientation = field(default_factory=Orientation.identity)
    color: Rgba = Rgba(0.7, 0.7, 0.7, 1.0)


@dataclass(frozen=True, slots=True)
class Hinge:
    axis: Vec3
    range: tuple[float, float] = (-math.pi / 2, math.pi / 2)


@dataclass(frozen=True, slots=True)
class Ball:
    pass


@dataclass(frozen=True, slots=True)
class Free:
    pass


@dataclass(frozen=True, slots=True)
class Fixed:
    """Welded to the parent; emits no joint element."""


JointSpec = Union[Hinge, Ball, Free, Fixed]


def mirror_joint(joint: JointSpec) -> JointSpec:
    """Sagittal mirror of a joint.

    Hinge axes map (x, y, z) -> (-x, y, -z): the reflected rotation about the
    reflected axis with negated angle equals rotation about this axis with the
    original angle, so the range carries over unchanged.
    """
    if isinstance(joint, Hinge):
        a = joint.axis
        return Hinge(Vec3(-a.x, a.y, -a.z), joint.range)
    return joint


@dataclass(frozen=True, slots=True)
class SymmetryTag:
    """Marks the root of one half of a mirrored subtree pair."""

    side: str  # "left" | "right"
    group: str

    def flipped(self) -> SymmetryTag:
        return SymmetryTag("right" if self.side == "left" else "left", self.group)


def swap_side_name(name: str, src: str, dst: str) -> str:
    """Rename across the mirror: suffix "_left"/"_right" swapped, else appended."""
    if name.endswith(f"_{src}"):
        return name[: -len(src)] + dst
    if f"_{src}_" in name:
        return name.replace(f"_{src}_", f"_{dst}_", 1)
    return f"{name}_{dst}"


# ---------------------------------------------------------------------------
# Body nodes and the tree
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class BodyNode:
    """One rigid body: joint to its parent, anchor point, and a single geom.

    anchor_local is the joint anchor expressed in the parent's frame (body
    frames are axis-aligned with the world; only geoms carry orientation).
    growth_dir is the unit direction the body was grown along, retained so
    anchors can be re-solved after geometric edits; None for the root.
    """

    name: str
    joint: JointSpec
    geom: GeomSpec
    anchor_local: Vec3 = field(default_factory=Vec3.zero)
    growth_dir: Optional[Vec3] = None
    symmetry_tag: Optional[SymmetryTag] = None
    parent: Optional[int] = None  # assigned by the tree on insertion


class KinematicTree:
    """Rooted hierarchy of bodies; exactly one root, children in insertion order."""

    def __init__(self) -> None:
        self._nodes: dict[int, BodyNode] = {}
        self._children: dict[int, list[int]] = {}
        self._root: Optional[int] = None
        self._next_id = 0

    # -- basic access -------------------------------------------------------

    @property
    def root(self) -> int:
        if self._root is None:
            raise InvalidTree(["tree has no root"])
        return self._root

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._nodes

    def node(self, node_id: int) -> BodyNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node with id {node_id}") from None

    def children(self, node_id: int) -> list[int]:
        return list(self._children.get(node_id, []))

    def ids(self) -> Iterator[int]:
        return iter(self._nodes)

    def names(self) -> set[str]:
        return {n.name for n in self._nodes.values()}

    def find(self, name: str) -> Optional[int]:
        for nid, n in self._nodes.items():
            if n.name == name:
                return nid
        return None

    def require(self, name: str) -> int:
        nid = self.find(name)
        if nid is None:
            raise UnknownNode(f"no node named {name!r}")
        return nid

    # -- construction -------------------------------------------------------

    def add_node(self, parent_id: Optional[int], node: BodyNode) -> int:
        """Insert `node` under `parent_id` (None for the root). Returns the new id."""
        if parent_id is None:
            if self._root is not None:
                raise RootAlreadyExists("tree already has a root")
        elif parent_id not in self._nodes:
            raise UnknownParent(f"no node with id {parent_id}")
        if node.name in self.names():
            raise DuplicateName(f"name {node.name!r} already used")
        if not node.name:
            raise DuplicateName("node name must be nonempty")

        nid = self._next_id
        self._next_id += 1
        node.parent = parent_id
        self._nodes[nid] = node
        self._children[nid] = []
        if parent_id is None:
            self._root = nid
        else:
            self._children[parent_id].append(nid)
        return nid

    def remove_subtree(self, node_id: int) -> int:
        """Remove `node_id` and all descendants; returns the number removed."""
        if node_id not in self._nodes:
            raise UnknownNode(f"no node with id {node_id}")
        doomed = list(self.iter_subtree(node_id))
        for nid in doomed:
            del self._nodes[nid]
            del self._children[nid]
        parent = None
        for nid, kids in self._children.items():
            if node_id in kids:
                parent = nid
        if parent is not None:
            self._children[parent].remove(node_id)
        if node_id == self._root:
            self._root = None
        return len(doomed)

    def iter_subtree(self, node_id: int) -> Iterator[int]:
        """Depth-first preorder over `node_id` and its descendants."""
        stack = [node_id]
        while stack:
            nid = stack.pop()
            yield nid
            stack.extend(reversed(self._children.get(nid, [])))

    def topological_order(self) -> list[int]:
        """Depth-first preorder from the root: parents precede descendants,
        children visited in insertion order."""
        if self._root is None:
            return []
        return list(self.iter_subtree(self._root))

    def mirror_subtree(self, node_id: int) -> int:
        """Create the sagittal mirror (y = 0) of the subtree rooted at `node_id`.

        The node must carry a symmetry tag; the copy's root gets the opposite
        tag, names are side-swapped, positions and growth directions have y
        negated, geom orientations are conjugated by the reflection, and hinge
        axes are reflected. Returns the id of the new subtree root.
        """
        src = self.node(node_id)
        if src.symmetry_tag is None:
            raise UntaggedNode(f"node {src.name!r} has no symmetry tag")
        src_side = src.symmetry_tag.side
        dst_side = "right" if src_side == "left" else "left"

        existing = self.names()
        order = list(self.iter_subtree(node_id))
        for nid in order:
            new_name = swap_side_name(self._nodes[nid].name, src_side, dst_side)
            if new_name in existing:
                raise NameCollision(f"mirrored name {new_name!r} already used")

        id_map: dict[int, int] = {}
        new_root = -1
        for nid in order:
            n = self._nodes[nid]
            mirrored = BodyNode(
                name=swap_side_name(n.name, src_side, dst_side),
                joint=mirror_joint(n.joint),
                geom=GeomSpec(
                    shape=n.geom.shape,
                    local_pos=n.geom.local_pos.mirror_y(),
                    local_orient=n.geom.local_orient.mirror_y(),
                    color=n.geom.color,
                ),
                anchor_local=n.anchor_local.mirror_y(),
                growth_dir=None if n.growth_dir is None else n.growth_dir.mirror_y(),
                symmetry_tag=n.symmetry_tag.flipped() if nid == node_id else n.symmetry_tag,
            )
            parent = n.parent if nid == node_id else id_map[n.parent]
            new_id = self.add_node(parent, mirrored)
            id_map[nid] = new_id
            if nid == node_id:
                new_root = new_id
        return new_root

    # -- invariants ---------------------------------------------------------

    def audit_structure(self) -> list[str]:
        """Check the tree invariants; returns a list of violations (empty = valid)."""
        out: list[str] = []
        if self._root is None:
            return ["tree has no root"]

        names: set[str] = set()
        for nid, n in self._nodes.items():
            if not n.name:
                out.append(f"node {nid}: empty name")
            elif n.name in names:
                out.append(f"node {nid}: duplicate name {n.name!r}")
            names.add(n.name)

            if nid == self._root:
                if n.parent is not None:
                    out.append(f"root {n.name!r} has a parent")
                if not isinstance(n.joint, (Free, Fixed)):
                    out.append(f"root {n.name!r} joint must be free or fixed")
            else:
                if n.parent is None or n.parent not in self._nodes:
                    out.append(f"node {n.name!r}: missing or dangling parent")
                if not n.anchor_local.is_finite():
                    out.append(f"node {n.name!r}: non-finite anchor")
                if isinstance(n.joint, Free):
                    out.append(f"node {n.name!r}: free joint off the root")

            if not shape_is_valid(n.geom.shape):
                out.append(f"node {n.name!r}: invalid shape parameters")
            if not n.geom.local_orient.is_unit():
                out.append(f"node {n.name!r}: geom orientation not unit")
            if not n.geom.color.is_valid():
                out.append(f"node {n.name!r}: color outside [0, 1]")
            if isinstance(n.joint, Hinge):
                if abs(n.joint.axis.norm() - 1.0) > UNIT_EPS:
                    out.append(f"node {n.name!r}: hinge axis not unit")
                if n.joint.range[0] > n.joint.range[1]:
                    out.append(f"node {n.name!r}: hinge range inverted")

        # connectivity: every node must reach the root by parent links
        for nid in self._nodes:
            seen = set()
            cur: Optional[int] = nid
            while cur is not None:
                if cur in seen:
                    out.append(f"cycle through node id {nid}")
                    break
                seen.add(cur)
                cur = self._nodes[cur].parent if cur in self._nodes else None
            else:
                if self._root not in seen:
                    out.append(f"node id {nid} not connected to root")

        # symmetry tags pair up by group
        groups: dict[str, set[str]] = {}
        for n in self._nodes.values():
            if n.symmetry_tag is not None:
                groups.setdefault(n.symmetry_tag.group, set()).add(n.symmetry_tag.side)
        for group, sides in groups.items():
            if sides != {"left", "right"}:
                out.append(f"symmetry group {group!r} is unpaired")
        return out

    def assert_valid(self) -> None:
        violations = self.audit_structure()
        if violations:
            raise InvalidTree(violations)


def body_dimensions(node: BodyNode) -> Vec3:
    """Half-extents of the geom's axis-aligned bounding box in the body frame.

    Invariant under geom color and translation; equivariant under rotation.
    """
    return shape_half_extents(node.geom.shape, node.geom.local_orient)


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol


def _vec_close(a: Vec3, b: Vec3, tol: float) -> bool:
    return _close(a.x, b.x, tol) and _close(a.y, b.y, tol) and _close(a.z, b.z, tol)


def _joints_equal(a: JointSpec, b: JointSpec, tol: float) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, Hinge):
        return (
            _vec_close(a.axis, b.axis, tol)
            and _close(a.range[0], b.range[0], tol)
            and _close(a.range[1], b.range[1], tol)
        )
    return True


def trees_equal(a: KinematicTree, b: KinematicTree, tol: float = 1e-12) -> bool:
    """Field-wise structural equality within `tol` on reals.

    Nodes are matched by name; parent links, joints, anchors, growth
    directions, symmetry tags, and full geom specs must all agree.
    """
    if a.names() != b.names():
        return False
    for nid in a.topological_order():
        na = a.node(nid)
        nb = b.node(b.require(na.name))
        pa = None if na.parent is None else a.node(na.parent).name
        pb = None if nb.parent is None else b.node(nb.parent).name
        if pa != pb:
            return False
        if not _joints_equal(na.joint, nb.joint, tol):
            return False
        if not _vec_close(na.anchor_local, nb.anchor_local, tol):
            return False
        if (na.growth_dir is None) != (nb.growth_dir is None):
            return False
        if na.growth_dir is not None and not _vec_close(na.growth_dir, nb.growth_dir, tol):
            return False
        if na.symmetry_tag != nb.symmetry_tag:
            return False
        ga, gb = na.geom, nb.geom
        if type(ga.shape) is not type(gb.shape):
            return False
        if any(not _close(x, y, tol) for x, y in zip(ga.shape.size_params(), gb.shape.size_params())):
            return False
        if not _vec_close(ga.local_pos, gb.local_pos, tol):
            return False
        qa, qb = ga.local_orient, gb.local_orient
        if any(not _close(x, y, tol) for x, y in zip((qa.w, qa.x, qa.y, qa.z), (qb.w, qb.x, qb.y, qb.z))):
            return False
        ca, cb = ga.color, gb.color
        if any(not _close(x, y, tol) for x, y in zip((ca.r, ca.g, ca.b, ca.a), (cb.r, cb.g, cb.b, cb.a))):
            return False
    return True
