"""Shape math: AABBs, oriented-box SAT, contacts, surface sampling.

Narrow-phase collision is a separating-axis test over candidate axes
(face normals of both shapes plus edge-direction cross products), which is
exact for boxes and convex hulls. Broad-phase is AABB overlap. Contact
normals are minimum-overlap axes, which for resting box contacts equals
the face normal of the supporting face.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateBox, UnknownName
from .transforms import Pose

if TYPE_CHECKING:  # pragma: no cover - import cycle guard
    from .world import WorldState

# Two shapes are "in contact" when separated by no more than this along the
# minimum axis; "in collision" when penetrating deeper than this.
CONTACT_TOL = 1e-4


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxShape:
    """Axis-aligned box in its local frame, centered at the origin."""

    half_extents: np.ndarray

    def __post_init__(self):
        h = np.array(self.half_extents, dtype=np.float64)
        h.flags.writeable = False
        if h.shape != (3,) or np.any(h <= 0):
            raise DegenerateBox(f"bad half extents {h}")
        object.__setattr__(self, "half_extents", h)

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def local_vertices(self) -> np.ndarray:
        h = self.half_extents
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                         dtype=np.float64)
        return signs * h


@dataclass(frozen=True)
class ConvexShape:
    """Convex point set in its local frame; collision uses its hull."""

    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64)
        p.flags.writeable = False
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 4:
            raise DegenerateBox("need at least 4 points for a 3d convex set")
        object.__setattr__(self, "points", p)

    def local_vertices(self) -> np.ndarray:
        return self.points

    def hull(self):
        from scipy.spatial import ConvexHull
        return ConvexHull(np.asarray(self.points))


Shape = BoxShape | ConvexShape


# ---------------------------------------------------------------------------
# AABB
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64)
        hi = np.array(self.max, dtype=np.float64)
        lo.flags.writeable = False
        hi.flags.writeable = False
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi + 1e-12):
            raise DegenerateBox(f"bad aabb [{lo}, {hi}]")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    @property
    def volume(self) -> float:
        return float(np.prod(np.maximum(self.extents, 0.0)))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def overlaps(self, other: "Aabb", tol: float = 0.0) -> bool:
        return bool(np.all(self.min <= other.max + tol) and np.all(other.min <= self.max + tol))

    def contains_point(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    @staticmethod
    def of_points(points) -> "Aabb":
        pts = np.asarray(points, dtype=np.float64)
        return Aabb(pts.min(axis=0), pts.max(axis=0))


def aabb_containment_fraction(inner: Aabb, outer: Aabb) -> float:
    """volume(inner intersect outer) / volume(inner)."""
    if inner.volume <= 0.0:
        raise DegenerateBox("inner box has no volume")
    lo = np.maximum(inner.min, outer.min)
    hi = np.minimum(inner.max, outer.max)
    inter = float(np.prod(np.maximum(hi - lo, 0.0)))
    return inter / inner.volume


# ---------------------------------------------------------------------------
# Separating-axis tests
# ---------------------------------------------------------------------------

def _box_axes(rotation: np.ndarray) -> np.ndarray:
    return rotation.T.copy()  # rows are the box's local axes in world frame


def shape_vertices(shape: Shape, pose: Pose) -> np.ndarray:
    return pose.apply(shape.local_vertices())


def shape_aabb(shape: Shape, pose: Pose) -> Aabb:
    return Aabb.of_points(shape_vertices(shape, pose))


def _candidate_axes(shape_a: Shape, pose_a: Pose, shape_b: Shape, pose_b: Pose) -> np.ndarray:
    if isinstance(shape_a, BoxShape) and isinstance(shape_b, BoxShape):
        ua = _box_axes(pose_a.rotation)
        ub = _box_axes(pose_b.rotation)
        crosses = np.cross(ua[:, None, :], ub[None, :, :]).reshape(-1, 3)
        axes = np.concatenate([ua, ub, crosses], axis=0)
    else:
        axes = [_face_normals(shape_a, pose_a), _face_normals(shape_b, pose_b)]
        ea = _edge_dirs(shape_a, pose_a)
        eb = _edge_dirs(shape_b, pose_b)
        if len(ea) and len(eb):
            axes.append(np.cross(ea[:, None, :], eb[None, :, :]).reshape(-1, 3))
        axes = np.concatenate(axes, axis=0)
    norms = np.linalg.norm(axes, axis=1)
    keep = norms > 1e-9
    return axes[keep] / norms[keep, None]


def _face_normals(shape: Shape, pose: Pose) -> np.ndarray:
    if isinstance(shape, BoxShape):
        return _box_axes(pose.rotation)
    hull = shape.hull()
    return pose.rotate(hull.equations[:, :3])


def _edge_dirs(shape: Shape, pose: Pose) -> np.ndarray:
    if isinstance(shape, BoxShape):
        return _box_axes(pose.rotation)
    hull = shape.hull()
    pts = shape_vertices(shape, pose)
    dirs = set()
    edges = []
    for simplex in hull.simplices:
        for i in range(3):
            a, b = sorted((simplex[i], simplex[(i + 1) % 3]))
            if (a, b) not in dirs:
                dirs.add((a, b))
                edges.append(pts[b] - pts[a])
    return np.asarray(edges) if edges else np.zeros((0, 3))


def separation(shape_a: Shape, pose_a: Pose, shape_b: Shape, pose_b: Pose):
    """Signed separation along the best axis.

    Returns (distance, axis) where distance < 0 means penetration by that
    amount and the unit axis points from shape b toward shape a. The axis is
    the maximum-separation axis (equivalently minimum-overlap when
    penetrating), which is the contact normal for resting contacts.
    """
    va = shape_vertices(shape_a, pose_a)
    vb = shape_vertices(shape_b, pose_b)
    axes = _candidate_axes(shape_a, pose_a, shape_b, pose_b)
    pa = va @ axes.T  # (na, k)
    pb = vb @ axes.T
    # gap along +axis and along -axis; separation is the larger of the two
    gap_pos = pa.min(axis=0) - pb.max(axis=0)   # b below a along axis
    gap_neg = pb.min(axis=0) - pa.max(axis=0)   # a below b along axis
    gaps = np.maximum(gap_pos, gap_neg)
    best = int(np.argmax(gaps))
    axis = axes[best]
    if gap_neg[best] > gap_pos[best]:
        axis = -axis  # orient from b into a
    return float(gaps[best]), axis


def boxes_penetrate(shape_a: Shape, pose_a: Pose, shape_b: Shape, pose_b: Pose,
                    tol: float = CONTACT_TOL) -> bool:
    dist, _ = separation(shape_a, pose_a, shape_b, pose_b)
    return dist < -tol


def contact_between(shape_a: Shape, pose_a: Pose, shape_b: Shape, pose_b: Pose,
                    tol: float = CONTACT_TOL):
    """(point, normal) if the shapes touch within tol, else None.

    The normal points from shape b into shape a. The point is the center of
    the intersection of the two world AABBs, which is exact enough for the
    predicate layer (only the normal is load-bearing).
    """
    dist, axis = separation(shape_a, pose_a, shape_b, pose_b)
    if dist > tol:
        return None
    aa = shape_aabb(shape_a, pose_a)
    ab = shape_aabb(shape_b, pose_b)
    lo = np.maximum(aa.min, ab.min)
    hi = np.minimum(aa.max, ab.max)
    point = np.clip((lo + hi) / 2.0, np.minimum(lo, hi), np.maximum(lo, hi))
    return point, axis


# Vectorized box-vs-box separation for collision checking many pairs at once.

def batched_box_separation(centers_a, rots_a, halves_a, centers_b, rots_b, halves_b) -> np.ndarray:
    """Max separating distance per pair of oriented boxes, (n,) for n pairs.

    Negative values mean penetration depth. Uses the classic 15-axis test.
    """
    ca = np.asarray(centers_a); cb = np.asarray(centers_b)
    ra = np.asarray(rots_a); rb = np.asarray(rots_b)
    ha = np.asarray(halves_a); hb = np.asarray(halves_b)
    n = ca.shape[0]
    ua = np.transpose(ra, (0, 2, 1))  # (n, 3 axes, 3)
    ub = np.transpose(rb, (0, 2, 1))
    crosses = np.cross(ua[:, :, None, :], ub[:, None, :, :]).reshape(n, 9, 3)
    axes = np.concatenate([ua, ub, crosses], axis=1)  # (n, 15, 3)
    norms = np.linalg.norm(axes, axis=2)
    safe = np.maximum(norms, 1e-12)
    axes = axes / safe[:, :, None]
    d = cb - ca
    dist = np.abs(np.einsum("nkj,nj->nk", axes, d))
    proj_a = np.abs(np.einsum("nkj,nij->nki", axes, ua)) @ ha[:, :, None]
    proj_b = np.abs(np.einsum("nkj,nij->nki", axes, ub)) @ hb[:, :, None]
    sep = dist - proj_a[:, :, 0] - proj_b[:, :, 0]
    sep = np.where(norms > 1e-9, sep, -np.inf)  # degenerate cross axes never separate
    return sep.max(axis=1)


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointCloud:
    """Surface samples with outward unit normals, in world frame."""

    points: np.ndarray
    normals: np.ndarray
    owner: str = ""

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64)
        nrm = np.array(self.normals, dtype=np.float64)
        if p.shape != nrm.shape or p.ndim != 2 or p.shape[1] != 3:
            raise ValueError("points and normals must both be (n, 3)")
        lens = np.linalg.norm(nrm, axis=1)
        if p.shape[0] and np.max(np.abs(lens - 1.0)) > 1e-6:
            raise ValueError("normals must be unit length")
        p.flags.writeable = False
        nrm.flags.writeable = False
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return self.points.shape[0]

    def merged_with(self, other: "PointCloud", owner: str = "") -> "PointCloud":
        return PointCloud(np.concatenate([self.points, other.points]),
                          np.concatenate([self.normals, other.normals]),
                          owner or self.owner)


_BOX_FACES = [  # (axis index, sign)
    (0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1),
]


def surface_area(shape: Shape) -> float:
    if isinstance(shape, BoxShape):
        h = shape.half_extents
        return float(8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]))
    return float(shape.hull().area)


def sample_shape_surface(shape: Shape, pose: Pose, n: int, rng: np.random.Generator,
                         owner: str = "") -> PointCloud:
    """n points uniform by surface area, with outward normals, world frame."""
    if isinstance(shape, BoxShape):
        pts, nrm = _sample_box_surface(shape, n, rng)
    else:
        pts, nrm = _sample_hull_surface(shape, n, rng)
    return PointCloud(pose.apply(pts), pose.rotate(nrm), owner)


def _sample_box_surface(shape: BoxShape, n: int, rng: np.random.Generator):
    h = shape.half_extents
    areas = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2],
                      h[0] * h[1], h[0] * h[1]], dtype=np.float64) * 4.0
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    for f, (axis, sign) in enumerate(_BOX_FACES):
        mask = faces == f
        if not np.any(mask):
            continue
        others = [i for i in range(3) if i != axis]
        pts[mask, axis] = sign * h[axis]
        pts[np.ix_(mask, others)] = u[mask] * h[others]
        nrm[mask, axis] = sign
    return pts, nrm


def _sample_hull_surface(shape: ConvexShape, n: int, rng: np.random.Generator):
    hull = shape.hull()
    pts3 = np.asarray(shape.points)
    tris = pts3[hull.simplices]  # (m, 3, 3)
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    areas = np.linalg.norm(cross, axis=1) / 2.0
    # outward orientation from the hull's plane equations
    normals = hull.equations[:, :3]
    idx = rng.choice(len(tris), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.uniform(size=n))[:, None]
    r2 = rng.uniform(size=n)[:, None]
    a, b, c = tris[idx, 0], tris[idx, 1], tris[idx, 2]
    pts = (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c
    return pts, normals[idx]


# ---------------------------------------------------------------------------
# 2D convex polygon helpers (used by settling)
# ---------------------------------------------------------------------------

def clip_convex_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of one convex polygon by another (both CCW)."""
    output = list(np.asarray(subject, dtype=np.float64))
    clip = np.asarray(clip, dtype=np.float64)
    m = len(clip)
    for i in range(m):
        a, b = clip[i], clip[(i + 1) % m]
        edge = b - a
        if len(output) == 0:
            break
        inputs = output
        output = []
        prev = inputs[-1]
        prev_in = _left_of(edge, a, prev)
        for cur in inputs:
            cur_in = _left_of(edge, a, cur)
            if cur_in:
                if not prev_in:
                    output.append(_edge_intersect(a, b, prev, cur))
                output.append(cur)
            elif prev_in:
                output.append(_edge_intersect(a, b, prev, cur))
            prev, prev_in = cur, cur_in
    return np.asarray(output) if output else np.zeros((0, 2))


def _left_of(edge, origin, p) -> bool:
    return edge[0] * (p[1] - origin[1]) - edge[1] * (p[0] - origin[0]) >= -1e-12


def _edge_intersect(a, b, p, q):
    d1 = b - a
    d2 = q - p
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-15:
        return q.copy()
    t = ((p[0] - a[0]) * d2[1] - (p[1] - a[1]) * d2[0]) / denom
    return a + t * d1


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns CCW hull vertices."""
    pts = np.unique(np.round(np.asarray(points, dtype=np.float64), 12), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and np.cross(out[-1] - out[-2], p - out[-2]) <= 1e-15:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def point_in_convex_polygon(p, poly: np.ndarray, tol: float = 1e-9) -> bool:
    poly = np.asarray(poly)
    if len(poly) < 3:
        return False
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        if np.cross(b - a, np.asarray(p) - a) < -tol:
            return False
    return True


# ---------------------------------------------------------------------------
# World-facing queries (world objects are passed in, never imported)
# ---------------------------------------------------------------------------

def aabb_of(world: "WorldState", name: str) -> Aabb:
    """Tight AABB of a link, or the union over a body's links."""
    links = world.resolve_links(name)
    if not links:
        raise UnknownName(name)
    boxes = [shape_aabb(lk.shape, world.shape_pose(lk)) for lk in links]
    out = boxes[0]
    for b in boxes[1:]:
        out = out.union(b)
    return out


def sample_surface(world: "WorldState", part_name: str, n: int, seed: int) -> PointCloud:
    """Uniform-by-area surface samples over a link or a body's links."""
    links = world.resolve_links(part_name)
    if not links:
        raise UnknownName(part_name)
    rng = np.random.default_rng(seed)
    areas = np.array([surface_area(lk.shape) for lk in links])
    counts = rng.multinomial(n, areas / areas.sum())
    clouds = [sample_shape_surface(lk.shape, world.shape_pose(lk), int(c), rng, owner=lk.name)
              for lk, c in zip(links, counts) if c > 0]
    out = clouds[0]
    for c in clouds[1:]:
        out = out.merged_with(c, owner=part_name)
    if len(links) > 1:
        out = PointCloud(out.points, out.normals, owner=part_name)
    return out


def in_collision(world: "WorldState", robot_config, attachment_aware: bool = True,
                 extra_attachment=None) -> bool:
    """True iff the robot (and optionally its grasped link) penetrates the scene.

    Finger/palm contact with the grasped link is exempt; so is the robot
    base resting on the table (contact is not collision, only penetration
    deeper than CONTACT_TOL counts).
    """
    checker = world.collision_checker(attachment_aware=attachment_aware,
                                      extra_attachment=extra_attachment)
    return checker.config_in_collision(np.asarray(robot_config, dtype=np.float64))
