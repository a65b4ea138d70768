"""Deterministic orthographic ray-cast renderer for primitive trees.

Four canonical views (front, left, top, threequarter) share one auto-framing
computed from the tree's bounding sphere, so proportions stay comparable
across views and the framing is invariant under translation. Shading is flat
Lambert from a single fixed directional light plus ambient; no shadows, no
anti-aliasing, no randomness, so identical inputs give byte-identical PNGs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .geometry import body_origins, posed_geom, primitive_aabb
from .model import Box, Capsule, Ellipsoid, KinematicTree, Orientation, Vec3

AMBIENT = 0.35
_S6 = math.sqrt(6.0)
LIGHT_DIR = (-1.0 / _S6, -1.0 / _S6, -2.0 / _S6)
# content fills at most this fraction of the half-viewport (10% margin)
FRAME_FILL = 0.9
DEFAULT_SIZE = 512
# keeps the encoded PNG comfortably under the gateway's 4 MiB image cap
MAX_PIXELS = 4096 * 4096
_HIT_EPS = 1e-9


@dataclass(frozen=True, slots=True)
class ViewPreset:
    """Orthographic camera: rays travel along `direction`, `up` is screen-up."""

    name: str
    direction: Vec3
    up: Vec3

    def __post_init__(self) -> None:
        d, u = self.direction, self.up
        if abs(d.norm() - 1.0) > 1e-9 or abs(u.norm() - 1.0) > 1e-9:
            raise ValueError("view direction and up must be unit vectors")
        if abs(d.dot(u)) > 1e-9:
            raise ValueError("view direction and up must be orthogonal")


_S3 = math.sqrt(3.0)
VIEW_PRESETS: tuple[ViewPreset, ...] = (
    ViewPreset("front", Vec3(-1.0, 0.0, 0.0), Vec3(0.0, 0.0, 1.0)),
    ViewPreset("left", Vec3(0.0, -1.0, 0.0), Vec3(0.0, 0.0, 1.0)),
    ViewPreset("top", Vec3(0.0, 0.0, -1.0), Vec3(1.0, 0.0, 0.0)),
    ViewPreset(
        "threequarter",
        Vec3(-1.0 / _S3, -1.0 / _S3, -1.0 / _S3),
        Vec3(-1.0 / _S6, -1.0 / _S6, 2.0 / _S6),
    ),
)
VIEW_BY_NAME = {p.name: p for p in VIEW_PRESETS}


class RenderTarget:
    """Pixel dimensions plus the RGBA8 buffer render() fills."""

    def __init__(self, width: int = DEFAULT_SIZE, height: int = DEFAULT_SIZE) -> None:
        if width <= 0 or height <= 0:
            raise ValueError("render target dimensions must be positive")
        if width * height > MAX_PIXELS:
            raise ValueError("render target too large")
        self.width = width
        self.height = height
        self.buffer = bytearray(4 * width * height)


def tree_framing(tree: KinematicTree) -> tuple[Vec3, float]:
    """Shared framing: bounding-sphere center and the viewport half-height
    that leaves a 10% margin around it."""
    origins = body_origins(tree)
    lo = [math.inf] * 3
    hi = [-math.inf] * 3
    for nid in tree.topological_order():
        a, b = primitive_aabb(posed_geom(tree, nid, origins))
        lo = [min(l, v) for l, v in zip(lo, (a.x, a.y, a.z))]
        hi = [max(h, v) for h, v in zip(hi, (b.x, b.y, b.z))]
    center = Vec3((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2)
    radius = math.sqrt(sum((h - l) ** 2 for l, h in zip(lo, hi))) / 2
    if radius < 1e-12:
        radius = 1.0
    return center, radius / FRAME_FILL


def _rotation_matrix(q: Orientation) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _box_raycast(o: np.ndarray, d: np.ndarray, half: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    t_enter = near.max(axis=1)
    t_exit = far.min(axis=1)
    hit = (t_enter <= t_exit) & (t_enter > _HIT_EPS)
    axis = near.argmax(axis=1)
    normal = np.zeros_like(o)
    signs = -np.sign(d)
    normal[np.arange(len(o)), axis] = signs[axis]
    t = np.where(hit, t_enter, np.inf)
    return t, normal


def _ellipsoid_raycast(o: np.ndarray, d: np.ndarray, axes: np.ndarray):
    o2 = o / axes
    d2 = d / axes
    a = float(d2 @ d2)
    b = 2.0 * (o2 @ d2)
    c = (o2 * o2).sum(axis=1) - 1.0
    disc = b * b - 4.0 * a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t = (-b - sq) / (2.0 * a)
    hit = (disc > 0.0) & (t > _HIT_EPS)
    p = o + np.where(hit, t, 0.0)[:, None] * d
    normal = p / (axes * axes)
    length = np.linalg.norm(normal, axis=1, keepdims=True)
    normal = np.where(length > 0, normal / np.maximum(length, 1e-300), 0.0)
    return np.where(hit, t, np.inf), normal


def _capsule_raycast(o: np.ndarray, d: np.ndarray, radius: float, hl: float):
    n = len(o)
    best = np.full(n, np.inf)
    normal = np.zeros((n, 3))

    # cylindrical flank
    a = d[0] * d[0] + d[1] * d[1]
    if a > 1e-30:
        b = 2.0 * (o[:, 0] * d[0] + o[:, 1] * d[1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - radius * radius
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = (-b - sq) / (2.0 * a)
        z = o[:, 2] + t * d[2]
        ok = (disc > 0.0) & (t > _HIT_EPS) & (np.abs(z) <= hl)
        better = ok & (t < best)
        best = np.where(better, t, best)
        p = o + t[:, None] * d
        side = p.copy()
        side[:, 2] = 0.0
        normal = np.where(better[:, None], side / radius, normal)

    # hemispherical caps
    for cz in (hl, -hl):
        oc = o - np.array([0.0, 0.0, cz])
        b = 2.0 * (oc @ d)
        c = (oc * oc).sum(axis=1) - radius * radius
        disc = b * b - 4.0 * c  # |d| = 1
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = (-b - sq) / 2.0
        z = o[:, 2] + t * d[2]
        on_cap = z >= hl if cz > 0 else z <= -hl
        ok = (disc > 0.0) & (t > _HIT_EPS) & on_cap
        better = ok & (t < best)
        best = np.where(better, t, best)
        p = o + t[:, None] * d
        cap_n = (p - np.array([0.0, 0.0, cz])) / radius
        normal = np.where(better[:, None], cap_n, normal)

    return best, normal


def _raycast_posed(posed, origins: np.ndarray, direction: np.ndarray):
    """Ray-cast every pixel ray against one world-posed primitive.
    Returns (t, world normal) with t = inf on miss."""
    rot = _rotation_matrix(posed.world_orient)
    pos = np.array([posed.world_pos.x, posed.world_pos.y, posed.world_pos.z])
    o_local = (origins - pos) @ rot
    d_local = direction @ rot
    shape = posed.shape
    if isinstance(shape, Box):
        h = shape.half_extents
        t, n_local = _box_raycast(o_local, d_local, np.array([h.x, h.y, h.z]))
    elif isinstance(shape, Ellipsoid):
        s = shape.semi_axes
        t, n_local = _ellipsoid_raycast(o_local, d_local, np.array([s.x, s.y, s.z]))
    elif isinstance(shape, Capsule):
        t, n_local = _capsule_raycast(o_local, d_local, shape.radius, shape.half_length)
    else:
        raise TypeError(f"unsupported shape {type(shape).__name__}")
    return t, n_local @ rot.T


def _encode_png(rgba: np.ndarray) -> bytes:
    image = Image.fromarray(rgba, "RGBA")
    out = io.BytesIO()
    image.save(out, format="PNG")
    return out.getvalue()


def render(
    tree: KinematicTree,
    view: ViewPreset,
    target: Optional[RenderTarget] = None,
    framing: Optional[tuple[Vec3, float]] = None,
) -> bytes:
    """Render one orthographic view to PNG bytes (also filling target.buffer)."""
    tree.assert_valid()
    if target is None:
        target = RenderTarget()
    tree_center, tree_half = tree_framing(tree)
    center, half_h = framing if framing is not None else (tree_center, tree_half)
    w, h = target.width, target.height
    half_w = half_h * (w / h)

    d = np.array([view.direction.x, view.direction.y, view.direction.z])
    up = np.array([view.up.x, view.up.y, view.up.z])
    right = np.cross(d, up)
    c = np.array([center.x, center.y, center.z])

    # plane of ray origins strictly behind every geom along the view axis
    tc = np.array([tree_center.x, tree_center.y, tree_center.z])
    back = tree_half * FRAME_FILL + float(np.linalg.norm(c - tc)) + half_h + 1.0

    us = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * half_w
    vs = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * half_h
    origins = (
        c[None, None, :]
        + us[None, :, None] * right[None, None, :]
        + vs[:, None, None] * up[None, None, :]
        - back * d[None, None, :]
    ).reshape(-1, 3)

    n_pix = w * h
    depth = np.full(n_pix, np.inf)
    color = np.ones((n_pix, 4))  # white, opaque background

    light = np.array(LIGHT_DIR)
    tree_origins = body_origins(tree)
    for nid in tree.topological_order():
        node = tree.node(nid)
        posed = posed_geom(tree, nid, tree_origins)
        t, normals = _raycast_posed(posed, origins, d)
        nearer = t < depth
        if not nearer.any():
            continue
        diffuse = np.maximum(0.0, -(normals @ light))
        intensity = AMBIENT + (1.0 - AMBIENT) * diffuse
        rgba = node.geom.color
        shaded = np.empty((n_pix, 4))
        shaded[:, 0] = np.clip(rgba.r * intensity, 0.0, 1.0)
        shaded[:, 1] = np.clip(rgba.g * intensity, 0.0, 1.0)
        shaded[:, 2] = np.clip(rgba.b * intensity, 0.0, 1.0)
        shaded[:, 3] = rgba.a
        depth = np.where(nearer, t, depth)
        color = np.where(nearer[:, None], shaded, color)

    rgba8 = np.clip(np.rint(color * 255.0), 0, 255).astype(np.uint8).reshape(h, w, 4)
    target.buffer[:] = rgba8.tobytes()
    return _encode_png(rgba8)


def render_contact_views(tree: KinematicTree, size: int = DEFAULT_SIZE) -> dict[str, bytes]:
    """All four canonical views under one shared framing."""
    framing = tree_framing(tree)
    return {
        preset.name: render(tree, preset, RenderTarget(size, size), framing)
        for preset in VIEW_PRESETS
    }


def save_views(tree: KinematicTree, directory: str | Path, size: int = DEFAULT_SIZE) -> dict[str, Path]:
    """Write the four canonical views as <view>.png under `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, png in render_contact_views(tree, size).items():
        path = directory / f"{name}.png"
        path.write_bytes(png)
        paths[name] = path
    return paths
