"""Closed-form and numeric geometry on posed primitives.

Signed distance to primitive surfaces, exact first-exit ray intersection
(the anchor solve used to attach child bodies to a parent's surface), tight
world AABBs, and pairwise gap/penetration distance via support-function
iteration. All functions are pure; unrestricted parallel use is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import MorphoforgeError
from .model import (
    Box,
    Capsule,
    Ellipsoid,
    KinematicTree,
    Orientation,
    PrimitiveShape,
    Vec3,
    shape_half_extents,
)

GJK_MAX_ITERATIONS = 128
GJK_PROGRESS_EPS = 1e-9


class GeometryError(MorphoforgeError):
    pass


class OriginOutsideShape(GeometryError):
    """Ray origin was not strictly inside the shape."""


class NoIntersection(GeometryError):
    """Defensive: no surface crossing found (cannot occur for interior origins)."""


@dataclass(frozen=True, slots=True)
class GrowthRay:
    """Parent geom center plus the unit direction a child grows along."""

    origin: Vec3
    direction: Vec3


@dataclass(frozen=True, slots=True)
class PosedShape:
    """A primitive placed in the world frame."""

    shape: PrimitiveShape
    world_pos: Vec3 = Vec3(0.0, 0.0, 0.0)
    world_orient: Orientation = Orientation(1.0, 0.0, 0.0, 0.0)

    def to_local(self, point: Vec3) -> Vec3:
        return self.world_orient.inverse_rotate(point - self.world_pos)

    def to_world(self, point: Vec3) -> Vec3:
        return self.world_orient.rotate(point) + self.world_pos


# ---------------------------------------------------------------------------
# Signed distance
# ---------------------------------------------------------------------------


def _box_distance_local(h: Vec3, p: Vec3) -> float:
    qx, qy, qz = abs(p.x) - h.x, abs(p.y) - h.y, abs(p.z) - h.z
    ox, oy, oz = max(qx, 0.0), max(qy, 0.0), max(qz, 0.0)
    outside = math.sqrt(ox * ox + oy * oy + oz * oz)
    return outside + min(max(qx, qy, qz), 0.0)


def _capsule_distance_local(r: float, hl: float, p: Vec3) -> float:
    dz = p.z - max(-hl, min(hl, p.z))
    return math.sqrt(p.x * p.x + p.y * p.y + dz * dz) - r


def _ellipsoid_nearest_octant(a: tuple[float, float, float], y: tuple[float, float, float]):
    """Nearest surface point to `y` in the closed positive octant.

    Solves the stationarity condition x_i = a_i^2 y_i / (a_i^2 + t) for the
    unique multiplier root, working in the shifted variable u = t + min(a_i^2)
    over the nonzero components so the near-pole regime stays well conditioned.
    Components of y that are exactly zero admit off-plane minimizers; those
    candidates are enumerated and compared explicitly.
    """
    active = [i for i in range(3) if y[i] > 0.0]
    candidates: list[tuple[float, float, float]] = []

    if active:
        m = min(a[i] * a[i] for i in active)
        coef = [(a[i] * y[i], a[i] * a[i] - m) for i in active]

        def g(u: float) -> float:
            return sum((c / (s + u)) ** 2 for c, s in coef) - 1.0

        # bracket: g(u_lo) >= 0 at u_lo = a_j y_j for an axis attaining m;
        # g(u_hi) <= 0 once every term is at most 1/3
        u_lo = min(c for c, s in coef if s == 0.0)
        u_hi = max(math.sqrt(3.0) * c - s for c, s in coef)
        u_hi = max(u_hi, u_lo)
        if u_hi <= 0.0:
            u_hi = u_lo
        for _ in range(32):
            mid = math.sqrt(u_lo * u_hi)
            if g(mid) >= 0.0:
                u_lo = mid
            else:
                u_hi = mid
            if u_hi - u_lo <= 1e-15 * u_hi:
                break
        u = 0.5 * (u_lo + u_hi)
        for _ in range(16):
            val = g(u)
            slope = sum(-2.0 * c * c / (s + u) ** 3 for c, s in coef)
            if slope == 0.0:
                break
            step = val / slope
            nxt = u - step
            if not (u_lo <= nxt <= u_hi):
                nxt = math.sqrt(u_lo * u_hi)
            if g(nxt) >= 0.0:
                u_lo = nxt
            else:
                u_hi = nxt
            if abs(nxt - u) <= 1e-16 * u:
                u = nxt
                break
            u = nxt
        x = [0.0, 0.0, 0.0]
        for idx, i in enumerate(active):
            c, s = coef[idx]
            x[i] = a[i] * c / (s + u)
        candidates.append((x[0], x[1], x[2]))

    # off-plane candidates for zero components: multiplier pinned at -a_j^2
    for j in range(3):
        if y[j] > 0.0:
            continue
        denom_ok = all(a[i] * a[i] - a[j] * a[j] > 1e-30 for i in active)
        if not denom_ok:
            continue
        x = [0.0, 0.0, 0.0]
        s_sum = 0.0
        for i in active:
            x[i] = a[i] * a[i] * y[i] / (a[i] * a[i] - a[j] * a[j])
            s_sum += (x[i] / a[i]) ** 2
        if s_sum < 1.0:
            x[j] = a[j] * math.sqrt(1.0 - s_sum)
            candidates.append((x[0], x[1], x[2]))

    best = None
    best_d2 = math.inf
    for cand in candidates:
        d2 = sum((cand[i] - y[i]) ** 2 for i in range(3))
        if d2 < best_d2:
            best_d2 = d2
            best = cand
    return best, math.sqrt(best_d2)


def _ellipsoid_distance_local(a: Vec3, p: Vec3) -> float:
    axes = (a.x, a.y, a.z)
    y = (abs(p.x), abs(p.y), abs(p.z))
    _, dist = _ellipsoid_nearest_octant(axes, y)
    inside = (p.x / a.x) ** 2 + (p.y / a.y) ** 2 + (p.z / a.z) ** 2 < 1.0
    return -dist if inside else dist


def surface_distance(posed: PosedShape, point: Vec3) -> float:
    """Signed Euclidean distance to the primitive's surface.

    Negative inside, zero on the surface. Box and capsule are exact closed
    forms; the ellipsoid uses the numeric nearest-point projection, accurate
    to 1e-9.
    """
    p = posed.to_local(point)
    shape = posed.shape
    if isinstance(shape, Box):
        return _box_distance_local(shape.half_extents, p)
    if isinstance(shape, Capsule):
        return _capsule_distance_local(shape.radius, shape.half_length, p)
    if isinstance(shape, Ellipsoid):
        return _ellipsoid_distance_local(shape.semi_axes, p)
    raise TypeError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# Ray-surface intersection (first exit from an interior origin)
# ---------------------------------------------------------------------------


def _box_exit_local(h: Vec3, o: Vec3, d: Vec3) -> float:
    alpha = math.inf
    for oc, dc, hc in ((o.x, d.x, h.x), (o.y, d.y, h.y), (o.z, d.z, h.z)):
        if dc > 0.0:
            alpha = min(alpha, (hc - oc) / dc)
        elif dc < 0.0:
            alpha = min(alpha, (-hc - oc) / dc)
    return alpha


def _ellipsoid_exit_local(a: Vec3, o: Vec3, d: Vec3) -> float:
    ox, oy, oz = o.x / a.x, o.y / a.y, o.z / a.z
    dx, dy, dz = d.x / a.x, d.y / a.y, d.z / a.z
    qa = dx * dx + dy * dy + dz * dz
    qb = 2.0 * (ox * dx + oy * dy + oz * dz)
    qc = ox * ox + oy * oy + oz * oz - 1.0
    disc = qb * qb - 4.0 * qa * qc
    return (-qb + math.sqrt(max(disc, 0.0))) / (2.0 * qa)


def _capsule_exit_local(r: float, hl: float, o: Vec3, d: Vec3) -> float:
    slack = 1e-12 * (r + hl + 1.0)
    best = math.inf
    a2 = d.x * d.x + d.y * d.y
    if a2 > 0.0:
        qb = 2.0 * (o.x * d.x + o.y * d.y)
        qc = o.x * o.x + o.y * o.y - r * r
        disc = qb * qb - 4.0 * a2 * qc
        if disc >= 0.0:
            alpha = (-qb + math.sqrt(disc)) / (2.0 * a2)
            if alpha > 0.0 and abs(o.z + alpha * d.z) <= hl + slack:
                best = min(best, alpha)
    for cap_z in (hl, -hl):
        oz = o.z - cap_z
        qb = 2.0 * (o.x * d.x + o.y * d.y + oz * d.z)
        qc = o.x * o.x + o.y * o.y + oz * oz - r * r
        disc = qb * qb - 4.0 * qc
        if disc < 0.0:
            continue
        alpha = (-qb + math.sqrt(disc)) / 2.0
        z_hit = o.z + alpha * d.z
        on_cap = z_hit >= hl - slack if cap_z > 0 else z_hit <= -hl + slack
        if alpha > 0.0 and on_cap:
            best = min(best, alpha)
    return best


def ray_surface_alpha(posed: PosedShape, ray: GrowthRay) -> float:
    """Smallest alpha > 0 with origin + alpha * direction on the surface.

    The origin must be strictly inside the shape (the growth contract: the
    ray starts at the parent's center). Closed form per primitive: slab exit
    for the box, one quadratic for the ellipsoid, cylinder and cap quadratics
    for the capsule.
    """
    if surface_distance(posed, ray.origin) >= 0.0:
        raise OriginOutsideShape("ray origin must be strictly inside the shape")
    o = posed.to_local(ray.origin)
    d = posed.world_orient.inverse_rotate(ray.direction.normalized())
    shape = posed.shape
    if isinstance(shape, Box):
        alpha = _box_exit_local(shape.half_extents, o, d)
    elif isinstance(shape, Ellipsoid):
        alpha = _ellipsoid_exit_local(shape.semi_axes, o, d)
    elif isinstance(shape, Capsule):
        alpha = _capsule_exit_local(shape.radius, shape.half_length, o, d)
    else:
        raise TypeError(f"unknown shape {shape!r}")
    if not math.isfinite(alpha) or alpha <= 0.0:
        raise NoIntersection("no positive surface crossing along the ray")
    return alpha


def anchor_solve(parent: PosedShape, direction: Vec3) -> Vec3:
    """World surface point reached by growing from the parent's center.

    Equivalent to origin + alpha * direction with alpha from
    ray_surface_alpha; the result lies on the parent surface to 1e-9.
    """
    d = direction.normalized()
    alpha = ray_surface_alpha(parent, GrowthRay(parent.world_pos, d))
    return parent.world_pos + d * alpha


def exit_distance(shape: PrimitiveShape, orient: Orientation, direction: Vec3) -> float:
    """Distance from the shape's center to its surface along `direction`."""
    posed = PosedShape(shape, Vec3.zero(), orient)
    return ray_surface_alpha(posed, GrowthRay(Vec3.zero(), direction.normalized()))


# ---------------------------------------------------------------------------
# Bounding boxes
# ---------------------------------------------------------------------------


def primitive_aabb(posed: PosedShape) -> tuple[Vec3, Vec3]:
    """Tight world-axis-aligned bounds of the posed primitive."""
    half = shape_half_extents(posed.shape, posed.world_orient)
    return posed.world_pos - half, posed.world_pos + half


# ---------------------------------------------------------------------------
# Pairwise gap via support-function (GJK-style) iteration
# ---------------------------------------------------------------------------


def support_point(posed: PosedShape, direction: Vec3) -> Vec3:
    """Farthest point of the posed primitive along `direction` (world frame)."""
    dl = posed.world_orient.inverse_rotate(direction)
    shape = posed.shape
    if isinstance(shape, Box):
        h = shape.half_extents
        local = Vec3(
            h.x if dl.x >= 0.0 else -h.x,
            h.y if dl.y >= 0.0 else -h.y,
            h.z if dl.z >= 0.0 else -h.z,
        )
    elif isinstance(shape, Ellipsoid):
        a = shape.semi_axes
        denom = math.sqrt((a.x * dl.x) ** 2 + (a.y * dl.y) ** 2 + (a.z * dl.z) ** 2)
        if denom == 0.0:
            local = Vec3(a.x, 0.0, 0.0)
        else:
            local = Vec3(a.x * a.x * dl.x / denom, a.y * a.y * dl.y / denom, a.z * a.z * dl.z / denom)
    elif isinstance(shape, Capsule):
        n = dl.norm()
        radial = dl * (shape.radius / n) if n > 0.0 else Vec3(shape.radius, 0.0, 0.0)
        tip = shape.half_length if dl.z >= 0.0 else -shape.half_length
        local = Vec3(radial.x, radial.y, radial.z + tip)
    else:
        raise TypeError(f"unknown shape {shape!r}")
    return posed.to_world(local)


def _closest_on_segment(a: Vec3, b: Vec3) -> tuple[Vec3, list[Vec3]]:
    ab = b - a
    denom = ab.dot(ab)
    if denom == 0.0:
        return a, [a]
    t = -a.dot(ab) / denom
    if t <= 0.0:
        return a, [a]
    if t >= 1.0:
        return b, [b]
    return a + ab * t, [a, b]


def _closest_on_triangle(a: Vec3, b: Vec3, c: Vec3) -> tuple[Vec3, list[Vec3]]:
    # Ericson-style region classification for the origin
    ab = b - a
    ac = c - a
    ap = -a
    d1 = ab.dot(ap)
    d2 = ac.dot(ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return a, [a]
    bp = -b
    d3 = ab.dot(bp)
    d4 = ac.dot(bp)
    if d3 >= 0.0 and d4 <= d3:
        return b, [b]
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        return a + ab * t, [a, b]
    cp = -c
    d5 = ab.dot(cp)
    d6 = ac.dot(cp)
    if d6 >= 0.0 and d5 <= d6:
        return c, [c]
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        return a + ac * t, [a, c]
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + (c - b) * t, [b, c]
    denom = va + vb + vc
    if denom <= 0.0:
        # degenerate (collinear) face: closest lies on an edge
        best = None
        best_d2 = math.inf
        for e0, e1 in ((a, b), (a, c), (b, c)):
            pt, kept = _closest_on_segment(e0, e1)
            d2 = pt.dot(pt)
            if d2 < best_d2:
                best_d2 = d2
                best = (pt, kept)
        assert best is not None
        return best
    v = vb / denom
    w = vc / denom
    return a + ab * v + ac * w, [a, b, c]


def _origin_in_tetrahedron(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> bool:
    def same_side(p1: Vec3, p2: Vec3, p3: Vec3, p4: Vec3) -> bool:
        n = (p2 - p1).cross(p3 - p1)
        ref = n.dot(p4 - p1)
        val = n.dot(-p1)
        return ref * val >= 0.0

    return (
        same_side(a, b, c, d)
        and same_side(a, b, d, c)
        and same_side(a, c, d, b)
        and same_side(b, c, d, a)
    )


def _closest_on_simplex(simplex: list[Vec3]) -> tuple[Vec3, list[Vec3]]:
    if len(simplex) == 1:
        return simplex[0], simplex
    if len(simplex) == 2:
        return _closest_on_segment(simplex[0], simplex[1])
    if len(simplex) == 3:
        return _closest_on_triangle(simplex[0], simplex[1], simplex[2])
    a, b, c, d = simplex
    if _origin_in_tetrahedron(a, b, c, d):
        return Vec3.zero(), simplex
    best: tuple[Vec3, list[Vec3]] | None = None
    best_d2 = math.inf
    for face in ((a, b, c), (a, b, d), (a, c, d), (b, c, d)):
        pt, kept = _closest_on_triangle(*face)
        d2 = pt.dot(pt)
        if d2 < best_d2:
            best_d2 = d2
            best = (pt, kept)
    assert best is not None
    return best


# penetration-depth samples: 6 axes, 12 edge and 8 corner diagonals
_DEPTH_DIRS: list[Vec3] = [
    Vec3(*t).normalized()
    for t in [
        (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
        (1, 1, 0), (1, -1, 0), (-1, 1, 0), (-1, -1, 0),
        (1, 0, 1), (1, 0, -1), (-1, 0, 1), (-1, 0, -1),
        (0, 1, 1), (0, 1, -1), (0, -1, 1), (0, -1, -1),
        (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
        (-1, 1, 1), (-1, 1, -1), (-1, -1, 1), (-1, -1, -1),
    ]
]


def _penetration_estimate(a: PosedShape, b: PosedShape) -> float:
    """Sampled upper bound on penetration depth: min over directions of the
    Minkowski-difference support height. Exact along any sampled direction."""
    dirs = list(_DEPTH_DIRS)
    axis = b.world_pos - a.world_pos
    if axis.norm() > 0.0:
        dirs.append(axis.normalized())
        dirs.append(-axis.normalized())
    depth = math.inf
    for n in dirs:
        h = support_point(a, n).dot(n) - support_point(b, -n).dot(n)
        depth = min(depth, h)
    return max(depth, 0.0)


def pair_gap(a: PosedShape, b: PosedShape) -> float:
    """Minimal signed separation between two convex primitives.

    Positive is a gap (accurate to 1e-6); zero or negative means touching or
    overlap, with the magnitude a support-sampled penetration estimate rather
    than the exact depth. Terminates after 128 iterations or when the duality
    gap falls below 1e-9.
    """
    v = a.world_pos - b.world_pos
    if v.norm() == 0.0:
        v = Vec3(1.0, 0.0, 0.0)
    simplex: list[Vec3] = []
    for _ in range(GJK_MAX_ITERATIONS):
        vv = v.dot(v)
        if vv < 1e-24:
            return -_penetration_estimate(a, b)
        w = support_point(a, -v) - support_point(b, v)
        # duality gap: |v| upper-bounds the distance, v.w/|v| lower-bounds it
        if vv - v.dot(w) <= GJK_PROGRESS_EPS * max(1.0, vv):
            return math.sqrt(vv)
        if any((w - s).norm() <= 1e-14 for s in simplex):
            return math.sqrt(vv)
        simplex.append(w)
        v, simplex = _closest_on_simplex(simplex)
        if len(simplex) == 4:
            return -_penetration_estimate(a, b)
    return math.sqrt(v.dot(v))


# ---------------------------------------------------------------------------
# Tree poses
# ---------------------------------------------------------------------------


def body_origins(tree: KinematicTree) -> dict[int, Vec3]:
    """World position of every body frame origin (frames are axis-aligned;
    a child's origin is its joint anchor in the parent frame)."""
    origins: dict[int, Vec3] = {}
    for nid in tree.topological_order():
        node = tree.node(nid)
        if node.parent is None:
            origins[nid] = node.anchor_local  # root's world placement
        else:
            origins[nid] = origins[node.parent] + node.anchor_local
    return origins


def posed_geom(tree: KinematicTree, node_id: int, origins: dict[int, Vec3] | None = None) -> PosedShape:
    """The node's geom as a world-posed primitive."""
    if origins is None:
        origins = body_origins(tree)
    node = tree.node(node_id)
    return PosedShape(
        node.geom.shape,
        origins[node_id] + node.geom.local_pos,
        node.geom.local_orient,
    )
