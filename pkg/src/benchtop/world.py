"""Quasi-static rigid/articulated world with contacts, grasping, and settling.

A WorldState is a value: every operation returns a new state and never
mutates its input, so episodes can run in parallel with one world per
worker. Gravity is resolved by projection (settle) rather than integration;
the only dynamic effect (catapult launch) is a scripted analytic arc
installed by the domain as an event hook.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol

import numpy as np

from . import geometry, robot
from .errors import InitialCollision, NoContactAtGrasp, NotArticulated, UnknownDomain, UnknownName
from .geometry import (Aabb, BoxShape, CONTACT_TOL, ConvexShape, Shape, batched_box_separation,
                       clip_convex_polygon, contact_between, convex_hull_2d,
                       point_in_convex_polygon, separation, shape_aabb)
from .transforms import Pose, rotation_about_axis, rotation_between

DT = 0.25                   # 4 Hz control cycle
FLOOR_DROP_MARGIN = 0.01    # below table top minus this = invalid state
FLOOR_Z_OFFSET = 0.5        # dropped bodies come to rest this far below the table
GRASP_CONTACT_TOL = 1e-3    # "closed" means within 1 mm of the commanded width


# ---------------------------------------------------------------------------
# Kinematic structure
# ---------------------------------------------------------------------------

@dataclass
class Link:
    """Named shape hung on a kinematic frame. pose is the world frame pose."""

    name: str
    shape: Shape
    shape_offset: Pose = field(default_factory=Pose.identity)
    pose: Pose = field(default_factory=Pose.identity)
    parent: Optional[str] = None


@dataclass
class Joint:
    kind: str                          # revolute | prismatic | fixed | free
    axis: np.ndarray
    origin: Pose
    value: float
    limits: Optional[tuple]            # (lo, hi); None for fixed/free
    parent_link: str
    child_link: str
    name: str = ""

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        if self.kind in ("revolute", "prismatic"):
            n = np.linalg.norm(a)
            if abs(n - 1.0) > 1e-6:
                raise ValueError(f"joint axis must be unit length, got |a|={n}")
            if self.limits is None:
                raise ValueError("revolute/prismatic joints need limits")
            lo, hi = self.limits
            if not (lo - 1e-9 <= self.value <= hi + 1e-9):
                raise ValueError(f"joint value {self.value} outside [{lo}, {hi}]")
        elif self.kind in ("fixed", "free"):
            if self.limits is not None:
                raise ValueError(f"{self.kind} joints have no limits")
        else:
            raise ValueError(f"unknown joint kind {self.kind!r}")
        self.axis = a
        if not self.name:
            self.name = self.child_link

    def motion(self) -> Pose:
        if self.kind == "revolute":
            return Pose(np.zeros(3), rotation_about_axis(self.axis, self.value))
        if self.kind == "prismatic":
            return Pose(self.axis * self.value, np.eye(3))
        return Pose.identity()

    def clamped(self, value: float) -> float:
        if self.limits is None:
            return value
        return float(np.clip(value, self.limits[0], self.limits[1]))


@dataclass
class Body:
    """Kinematic tree of links rooted at links[0]."""

    name: str
    links: list
    joints: list = field(default_factory=list)
    fixed: bool = True

    def __post_init__(self):
        by_name = {}
        for lk in self.links:
            if lk.name in by_name:
                raise ValueError(f"duplicate link {lk.name!r} in body {self.name!r}")
            by_name[lk.name] = lk
        children = {self.links[0].name}
        for jt in self.joints:
            if jt.parent_link not in by_name or jt.child_link not in by_name:
                raise ValueError(f"joint {jt.name!r} references unknown links")
            if jt.child_link in children:
                raise ValueError(f"link {jt.child_link!r} has two parents")
            children.add(jt.child_link)
            by_name[jt.child_link].parent = jt.parent_link
        if children != set(by_name):
            missing = set(by_name) - children
            raise ValueError(f"links not connected to the tree: {sorted(missing)}")
        self._by_name = by_name
        self.recompute_poses()

    def link(self, name: str) -> Link:
        return self._by_name[name]

    @property
    def root(self) -> Link:
        return self.links[0]

    def joint_by_name(self, name: str) -> Optional[Joint]:
        for jt in self.joints:
            if jt.name == name:
                return jt
        return None

    def joint_with_child(self, link_name: str) -> Optional[Joint]:
        for jt in self.joints:
            if jt.child_link == link_name:
                return jt
        return None

    def descendants(self, link_name: str) -> list:
        """Links strictly below link_name, in declaration order."""
        out = []
        names = {link_name}
        for jt in self.joints:
            if jt.parent_link in names:
                names.add(jt.child_link)
                out.append(self.link(jt.child_link))
        return out

    def children_of(self, link_name: str) -> list:
        return [self.link(jt.child_link) for jt in self.joints if jt.parent_link == link_name]

    def recompute_poses(self):
        """Forward kinematics from the root link pose and joint values."""
        for jt in self.joints:
            parent = self.link(jt.parent_link)
            child = self.link(jt.child_link)
            child.pose = parent.pose * jt.origin * jt.motion()

    def set_root_pose(self, pose: Pose):
        self.links[0].pose = pose
        self.recompute_poses()

    def clone(self) -> "Body":
        links = [Link(lk.name, lk.shape, lk.shape_offset, lk.pose, lk.parent)
                 for lk in self.links]
        joints = [Joint(jt.kind, jt.axis, jt.origin, jt.value, jt.limits,
                        jt.parent_link, jt.child_link, jt.name)
                  for jt in self.joints]
        return Body(self.name, links, joints, self.fixed)


@dataclass(frozen=True)
class Contact:
    link_a: str
    link_b: str
    point: np.ndarray
    normal: np.ndarray            # unit, from b into a


@dataclass(frozen=True)
class Attachment:
    gripper_link: str
    grasped_link: str
    relative: Pose                # gripper frame -> grasped link frame


class ScriptedEvent(Protocol):
    def apply(self, world: "WorldState") -> None: ...  # pragma: no cover


# ---------------------------------------------------------------------------
# WorldState
# ---------------------------------------------------------------------------

class WorldState:
    """Full simulation state. Treat as immutable; operations return copies."""

    def __init__(self, bodies, robot_body, time=0.0, rng_seed=0, domain="",
                 events=(), flags=None, table_top_z=0.0, attachment=None):
        self.bodies: list = list(bodies)
        self.robot: Body = robot_body
        self.attachment: Optional[Attachment] = attachment
        self.time: float = time
        self.rng_seed: int = rng_seed
        self.domain: str = domain
        self.events: tuple = tuple(events)
        self.flags: dict = dict(flags or {})
        self.table_top_z: float = table_top_z
        self.limit_clamped: bool = False
        self._contacts = None
        self._validate_names()

    def _validate_names(self):
        seen = set()
        for body in self.all_bodies():
            for lk in body.links:
                if lk.name in seen:
                    raise ValueError(f"duplicate link name {lk.name!r} in world")
                seen.add(lk.name)

    # -- structure ----------------------------------------------------------

    def all_bodies(self) -> list:
        return self.bodies + [self.robot]

    def body(self, name: str) -> Body:
        for b in self.all_bodies():
            if b.name == name:
                return b
        raise UnknownName(name)

    def find_link(self, name: str):
        for b in self.all_bodies():
            for lk in b.links:
                if lk.name == name:
                    return b, lk
        raise UnknownName(name)

    def resolve_links(self, name: str) -> list:
        """Body name -> all its links; link name -> the link plus descendants."""
        for b in self.all_bodies():
            if b.name == name:
                return list(b.links)
        for b in self.all_bodies():
            for lk in b.links:
                if lk.name == name:
                    return [lk] + b.descendants(name)
        return []

    def shape_pose(self, link: Link) -> Pose:
        return link.pose * link.shape_offset

    def movable_bodies(self) -> list:
        return [b for b in self.bodies if not b.fixed]

    def find_articulation_joint(self, part_name: str):
        """The revolute/prismatic joint driving part_name (walking rootward)."""
        body, link = self.find_link(part_name)
        cur = link.name
        while cur is not None:
            jt = body.joint_with_child(cur)
            if jt is None:
                break
            if jt.kind in ("revolute", "prismatic"):
                return body, jt
            cur = jt.parent_link
        raise NotArticulated(part_name)

    # -- robot accessors ------------------------------------------------------

    @property
    def q(self) -> np.ndarray:
        return np.array([self.robot.joint_by_name(n).value for n in robot.ARM_JOINT_NAMES])

    @property
    def gripper_opening(self) -> float:
        jt = self.robot.joint_by_name("finger_left")
        return 2.0 * (jt.value - robot.FINGER_THICKNESS / 2.0)

    @property
    def robot_base(self) -> Pose:
        return self.robot.root.pose

    def tcp_pose(self) -> Pose:
        return self.robot.link("palm").pose * Pose.from_translation([0, 0, robot.TCP_OFFSET])

    def flange_pose(self) -> Pose:
        return self.robot.link("palm").pose

    # -- contacts -------------------------------------------------------------

    def contacts(self) -> list:
        """All cross-body contacts (pairs of links of different bodies)."""
        if self._contacts is None:
            self._contacts = self._compute_contacts()
        return self._contacts

    def _compute_contacts(self) -> list:
        entries = []
        for body in self.all_bodies():
            for lk in body.links:
                entries.append((body.name, lk, shape_aabb(lk.shape, self.shape_pose(lk))))
        out = []
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                ba, la, aa = entries[i]
                bb, lb, ab = entries[j]
                if ba == bb:
                    continue
                if not aa.overlaps(ab, tol=CONTACT_TOL * 2):
                    continue
                hit = contact_between(la.shape, self.shape_pose(la),
                                      lb.shape, self.shape_pose(lb))
                if hit is not None:
                    point, normal = hit
                    out.append(Contact(la.name, lb.name, point, normal))
        return out

    def contacts_between(self, names_a, names_b) -> list:
        """Contacts with link_a in names_a and link_b in names_b (order fixed)."""
        sa, sb = set(names_a), set(names_b)
        found = []
        for c in self.contacts():
            if c.link_a in sa and c.link_b in sb:
                found.append(c)
            elif c.link_a in sb and c.link_b in sa:
                found.append(Contact(c.link_b, c.link_a, c.point, -c.normal))
        return found

    # -- grasp geometry --------------------------------------------------------

    def links_between_fingers(self):
        """Graspable links overlapping the closing region, nearest first.

        Returns (link, width) pairs where width is the link's extent along
        the closing axis; robot links and fixed single-piece links are skipped.
        """
        flange = self.flange_pose()
        half, center = robot.closing_region(flange, max(self.gripper_opening, 0.01))
        region = BoxShape(half)
        out = []
        for body in self.bodies:
            for lk in body.links:
                if body.fixed and not self._is_articulated_part(body, lk):
                    continue
                dist, _ = separation(region, center, lk.shape, self.shape_pose(lk))
                if dist <= CONTACT_TOL:
                    width = self._extent_along(lk, flange.rotation[:, 0])
                    gap = np.linalg.norm(self.shape_pose(lk).position - center.position)
                    out.append((lk, width, gap))
        out.sort(key=lambda t: t[2])
        return [(lk, w) for lk, w, _ in out]

    def _is_articulated_part(self, body: Body, link: Link) -> bool:
        cur = link.name
        while cur is not None:
            jt = body.joint_with_child(cur)
            if jt is None:
                return False
            if jt.kind in ("revolute", "prismatic"):
                return True
            cur = jt.parent_link
        return False

    def _extent_along(self, link: Link, axis) -> float:
        verts = geometry.shape_vertices(link.shape, self.shape_pose(link))
        proj = verts @ np.asarray(axis)
        return float(proj.max() - proj.min())

    # -- value semantics --------------------------------------------------------

    def clone(self) -> "WorldState":
        new = WorldState.__new__(WorldState)
        new.bodies = [b.clone() for b in self.bodies]
        new.robot = self.robot.clone()
        new.attachment = self.attachment
        new.time = self.time
        new.rng_seed = self.rng_seed
        new.domain = self.domain
        new.events = self.events
        new.flags = copy.deepcopy(self.flags)
        new.table_top_z = self.table_top_z
        new.limit_clamped = False
        new._contacts = None
        return new

    def collision_checker(self, attachment_aware=True, extra_attachment=None):
        from .motion import CollisionChecker
        return CollisionChecker(self, attachment_aware=attachment_aware,
                                extra_attachment=extra_attachment)


# ---------------------------------------------------------------------------
# Robot body construction
# ---------------------------------------------------------------------------

def make_robot_body(base: Pose) -> Body:
    """Arm + gripper as a Body whose FK matches robot.fk_frames exactly."""
    links = [Link("robot_base", BoxShape(robot.BASE_HALF),
                  Pose.from_translation(robot.BASE_OFFSET), base)]
    joints = []
    parent = "robot_base"
    for i, joint_name in enumerate(robot.ARM_JOINT_NAMES):
        link_name, _, offset, half = robot.ARM_LINK_GEOMETRY[i]
        links.append(Link(link_name, BoxShape(half), Pose.from_translation(offset)))
        origin = Pose.identity() if i == 0 else robot._FIXED[i - 1]
        joints.append(Joint("revolute", [0, 0, 1], origin, 0.0,
                            tuple(robot.JOINT_LIMITS[i]), parent, link_name, joint_name))
        parent = link_name
    links.append(Link("palm", BoxShape(robot.PALM_HALF),
                      Pose.from_translation([0, 0, robot.PALM_HALF[2]])))
    joints.append(Joint("fixed", [0, 0, 1], robot._FIXED[5], 0.0, None,
                        "wrist_3", "palm", "palm_mount"))
    t2 = robot.FINGER_THICKNESS / 2
    lims = (t2, robot.MAX_OPENING / 2 + t2)
    for side, ax in (("finger_left", [-1, 0, 0]), ("finger_right", [1, 0, 0])):
        links.append(Link(side, BoxShape(robot.FINGER_HALF),
                          Pose.from_translation([0, 0, robot.FINGER_Z_MID])))
        joints.append(Joint("prismatic", ax, Pose.identity(),
                            robot.MAX_OPENING / 2 + t2, lims, "palm", side, side))
    body = Body("robot", links, joints, fixed=True)
    body.set_root_pose(base)
    return body


def set_arm(world: WorldState, q, opening: Optional[float] = None):
    """In-place arm update on a freshly cloned world (internal helper)."""
    q = np.asarray(q, dtype=np.float64)
    for name, val in zip(robot.ARM_JOINT_NAMES, q):
        jt = world.robot.joint_by_name(name)
        jt.value = jt.clamped(float(val))
    if opening is not None:
        o = float(np.clip(opening, 0.0, robot.MAX_OPENING))
        t2 = robot.FINGER_THICKNESS / 2
        for side in ("finger_left", "finger_right"):
            world.robot.joint_by_name(side).value = o / 2 + t2
    world.robot.recompute_poses()
    _follow_attachment(world)
    world._contacts = None


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def step(world: WorldState, joint_targets: dict, dt: float = DT) -> WorldState:
    """Advance one control cycle toward joint_targets (rate limited).

    Targets outside joint limits are clamped and the result is flagged via
    limit_clamped. The attached link follows the gripper rigidly; scripted
    events fire after the robot moves.
    """
    new = world.clone()
    clamped = False
    for name, target in joint_targets.items():
        if name == robot.GRIPPER_JOINT:
            o = float(target)
            if not (0.0 <= o <= robot.MAX_OPENING):
                clamped = True
                o = float(np.clip(o, 0.0, robot.MAX_OPENING))
            t2 = robot.FINGER_THICKNESS / 2
            for side in ("finger_left", "finger_right"):
                jt = new.robot.joint_by_name(side)
                delta = np.clip((o / 2 + t2) - jt.value,
                                -robot.PRISMATIC_RATE * dt, robot.PRISMATIC_RATE * dt)
                jt.value = jt.clamped(jt.value + float(delta))
            continue
        jt = new.robot.joint_by_name(name)
        if jt is None:
            raise UnknownName(name)
        t = float(target)
        if jt.limits is not None and not (jt.limits[0] <= t <= jt.limits[1]):
            clamped = True
            t = jt.clamped(t)
        rate = robot.REVOLUTE_RATE if jt.kind == "revolute" else robot.PRISMATIC_RATE
        delta = np.clip(t - jt.value, -rate * dt, rate * dt)
        jt.value = jt.clamped(jt.value + float(delta))
    new.robot.recompute_poses()
    _follow_attachment(new)
    for ev in new.events:
        ev.apply(new)
    new.time = world.time + dt
    new.limit_clamped = clamped
    new._contacts = None
    return new


def _follow_attachment(world: WorldState):
    att = world.attachment
    if att is None:
        return
    gripper_pose = world.robot.link(att.gripper_link).pose
    desired = gripper_pose * att.relative
    body, link = world.find_link(att.grasped_link)
    if not body.fixed and link is body.root:
        body.set_root_pose(desired)
        return
    # articulated part: move the rigid subtree, then project the joint value
    old = link.pose
    delta = desired * old.inverse()
    for lk in [link] + body.descendants(link.name):
        lk.pose = delta * lk.pose
    _project_articulation(world, body, link)


def _project_articulation(world: WorldState, body: Body, link: Link):
    """Write the joint value implied by the grasped link's current pose."""
    cur = link.name
    jt = None
    while cur is not None:
        cand = body.joint_with_child(cur)
        if cand is None:
            return
        if cand.kind in ("revolute", "prismatic"):
            jt = cand
            break
        cur = cand.parent_link
    moving_link = body.link(jt.child_link)
    parent_pose = body.link(jt.parent_link).pose
    joint_frame = parent_pose * jt.origin
    rel = joint_frame.inverse() * moving_link.pose
    if jt.kind == "prismatic":
        value = float(np.dot(rel.position, jt.axis))
    else:
        a = jt.axis
        helper = np.array([1.0, 0, 0]) if abs(a[0]) < 0.9 else np.array([0.0, 1, 0])
        u = np.cross(a, helper)
        u /= np.linalg.norm(u)
        w = np.cross(a, u)
        v = rel.rotation @ u
        value = float(np.arctan2(np.dot(v, w), np.dot(v, u)))
    jt.value = jt.clamped(value)


def attach(world: WorldState, gripper_link: str, target_link: str) -> WorldState:
    """Freeze the gripper-to-target relative pose after a successful close."""
    if world.attachment is not None:
        raise ValueError("already holding something")
    body, link = world.find_link(target_link)
    if body.name == "robot":
        raise UnknownName(f"{target_link} is a robot link")
    if body.fixed and not world._is_articulated_part(body, link):
        raise ValueError(f"{target_link} cannot move")
    target_pose = world.shape_pose(link)
    for side in robot.FINGER_LINKS:
        finger = world.robot.link(side)
        dist, _ = separation(finger.shape, world.shape_pose(finger), link.shape, target_pose)
        if dist > GRASP_CONTACT_TOL:
            raise NoContactAtGrasp(f"{side} is {dist * 1000:.1f} mm from {target_link}")
    new = world.clone()
    gripper_pose = new.robot.link(gripper_link).pose
    rel = gripper_pose.inverse() * new.find_link(target_link)[1].pose
    new.attachment = Attachment(gripper_link, target_link, rel)
    return new


def detach(world: WorldState) -> WorldState:
    """Release the attachment and let gravity settle the scene."""
    if world.attachment is None:
        raise ValueError("nothing attached")
    new = world.clone()
    body, link = new.find_link(new.attachment.grasped_link)
    new.attachment = None
    if body.joints:
        body.recompute_poses()  # snap an articulated part back onto its manifold
    return settle(new)


def settle(world: WorldState) -> WorldState:
    """Rest every free body on a support, or drop it to the floor.

    Idempotent, deterministic, and never raises a free body's center of
    mass: bodies are aligned onto their most-downward face, dropped onto the
    highest overlapping horizontal support, and toppled off (pushed
    horizontally, then re-dropped) when their center of mass leaves the
    support polygon.
    """
    new = world.clone()
    held = new.attachment.grasped_link if new.attachment else None
    for _ in range(4):
        changed = False
        order = sorted(new.movable_bodies(),
                       key=lambda b: (shape_aabb(b.root.shape, new.shape_pose(b.root)).min[2],
                                      b.name))
        for body in order:
            if held is not None and any(lk.name == held for lk in body.links):
                continue
            changed |= _settle_body(new, body)
        if not changed:
            break
    new._contacts = None
    return new


def _settle_body(world: WorldState, body: Body) -> bool:
    link = body.root
    if len(body.links) != 1 or not isinstance(link.shape, BoxShape):
        return _drop_only(world, body)
    start = link.pose
    pose = _aligned_flat(start, link.shape)
    for _ in range(6):  # topple chain: at worst block -> table -> floor
        landing = _find_landing(world, body, pose, link.shape)
        if landing is None:
            floor_z = world.table_top_z - FLOOR_Z_OFFSET
            down_half = _down_half_extent(pose, link.shape)
            pose = Pose(np.array([pose.position[0], pose.position[1], floor_z + down_half]),
                        pose.rotation)
            break
        z, patch, centroid, supports = landing
        pose = Pose(np.array([pose.position[0], pose.position[1], z]), pose.rotation)
        com_xy = pose.position[:2]
        if point_in_convex_polygon(com_xy, patch):
            break
        push = com_xy - centroid
        norm = np.linalg.norm(push)
        direction = push / norm if norm > 1e-9 else np.array([1.0, 0.0])
        dist = _push_distance(pose, link.shape, supports, direction)
        pose = Pose(pose.position + np.array([direction[0], direction[1], 0.0]) * dist,
                    pose.rotation)
    moved = not pose.almost_equal(start, tol=1e-9)
    if moved:
        body.set_root_pose(pose)
        world._contacts = None
    return moved


def _aligned_flat(pose: Pose, shape: BoxShape) -> Pose:
    axes = pose.rotation.T  # rows: local axes in world
    normals = np.concatenate([axes, -axes])
    down = np.array([0.0, 0.0, -1.0])
    best = int(np.argmax(normals @ down))
    align = rotation_between(normals[best], down)
    return Pose(pose.position, align @ pose.rotation)


def _down_half_extent(pose: Pose, shape: BoxShape) -> float:
    axes = pose.rotation.T
    proj = np.abs(axes @ np.array([0.0, 0.0, 1.0]))
    return float(np.dot(proj, shape.half_extents))


def _footprint(pose: Pose, shape: BoxShape) -> np.ndarray:
    verts = pose.apply(shape.local_vertices())
    return convex_hull_2d(verts[:, :2])


def _support_top_polygon(world: WorldState, link: Link):
    """(top_z, xy polygon) if the link has a horizontal upward face."""
    sp = world.shape_pose(link)
    if not isinstance(link.shape, BoxShape):
        return None
    cols = sp.rotation.T
    dots = np.abs(cols @ np.array([0.0, 0.0, 1.0]))
    k = int(np.argmax(dots))
    if dots[k] < 0.99:
        return None
    top_z = sp.position[2] + abs(cols[k][2]) * link.shape.half_extents[k]
    verts = sp.apply(link.shape.local_vertices())
    top = verts[verts[:, 2] > top_z - 1e-6]
    if len(top) < 3:
        return None
    return top_z, convex_hull_2d(top[:, :2])


def _find_landing(world: WorldState, body: Body, pose: Pose, shape: BoxShape):
    down_half = _down_half_extent(pose, shape)
    bottom_z = pose.position[2] - down_half
    foot = _footprint(pose, shape)
    candidates = []
    for other in world.all_bodies():
        if other.name in (body.name, "robot"):
            continue
        for lk in other.links:
            top = _support_top_polygon(world, lk)
            if top is None:
                continue
            top_z, poly = top
            if top_z > bottom_z + 1e-6:
                continue
            patch = clip_convex_polygon(foot, poly)
            if geometry.polygon_area(patch) < 1e-8:
                continue
            candidates.append((top_z, patch, poly))
    if not candidates:
        return None
    best_z = max(z for z, _, _ in candidates)
    patches = [p for z, p, _ in candidates if z > best_z - 1e-6]
    supports = [poly for z, _, poly in candidates if z > best_z - 1e-6]
    verts = np.concatenate(patches)
    hull = convex_hull_2d(verts)
    centroid = verts.mean(axis=0)
    return best_z + down_half, hull, centroid, supports


def _push_distance(pose: Pose, shape: BoxShape, supports, direction) -> float:
    """Push far enough that the footprint clears every support polygon."""
    foot = _footprint(pose, shape)
    proj_foot = foot @ direction
    worst = 0.0
    for poly in supports:
        worst = max(worst, float((poly @ direction).max() - proj_foot.min()))
    return worst + 0.002


def _drop_only(world: WorldState, body: Body) -> bool:
    """Fallback for convex/multi-link free bodies: vertical drop, no align."""
    boxes = [shape_aabb(lk.shape, world.shape_pose(lk)) for lk in body.links]
    bb = boxes[0]
    for b in boxes[1:]:
        bb = bb.union(b)
    best = world.table_top_z - FLOOR_Z_OFFSET
    for other in world.all_bodies():
        if other.name in (body.name, "robot"):
            continue
        for lk in other.links:
            top = _support_top_polygon(world, lk)
            if top is None:
                continue
            top_z, poly = top
            if top_z > bb.min[2] + 1e-6:
                continue
            rect = np.array([[bb.min[0], bb.min[1]], [bb.max[0], bb.min[1]],
                             [bb.max[0], bb.max[1]], [bb.min[0], bb.max[1]]])
            if geometry.polygon_area(clip_convex_polygon(rect, poly)) > 1e-8:
                best = max(best, top_z)
    drop = bb.min[2] - best
    if abs(drop) < 1e-9:
        return False
    root = body.root
    body.set_root_pose(Pose(root.pose.position - np.array([0, 0, drop]), root.pose.rotation))
    world._contacts = None
    return True


def is_invalid(world: WorldState) -> bool:
    """True iff any movable link has fallen below the table top."""
    threshold = world.table_top_z - FLOOR_DROP_MARGIN
    for body in world.movable_bodies():
        for lk in body.links:
            if shape_aabb(lk.shape, world.shape_pose(lk)).min[2] < threshold:
                return True
    return False


def scene_summary(world: WorldState) -> str:
    """Bullet-list text encoding of object and part names.

    Top-level objects are "- name" lines; parts are "+ name" indented four
    spaces per level, in declaration order. The robot is not listed, and
    neither are structural sub-links (names containing "/", e.g. the wall
    boxes a hollow container is assembled from).
    """
    lines = []

    def visit(body, link, depth):
        if "/" in link.name:
            return
        if depth == 0:
            lines.append(f"- {link.name}")
        else:
            lines.append(f"{' ' * (4 * depth)}+ {link.name}")
        for child in body.children_of(link.name):
            visit(body, child, depth + 1)

    for body in world.bodies:
        visit(body, body.root, 0)
    return "\n".join(lines)


def parse_scene_summary(text: str) -> list:
    """Inverse of scene_summary: (name, depth) pairs in declaration order."""
    out = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        indent = len(raw) - len(raw.lstrip(" "))
        marker = raw.lstrip(" ")[0]
        name = raw.lstrip(" ")[2:]
        if marker == "-":
            out.append((name, 0))
        elif marker == "+":
            out.append((name, indent // 4))
        else:
            raise ValueError(f"bad summary line {raw!r}")
    return out


def load_scene(domain_spec, seed: int) -> WorldState:
    """Build, randomize, and settle a registered domain's scene."""
    from .domains import make_domain, DomainSpec
    if isinstance(domain_spec, str):
        domain_spec = make_domain(domain_spec)
    elif not isinstance(domain_spec, DomainSpec):
        raise UnknownDomain(str(domain_spec))
    world = domain_spec.build(int(seed))
    world = settle(world)
    world.rng_seed = int(seed)
    world.domain = domain_spec.name
    _check_initial_state(world)
    return world


def _check_initial_state(world: WorldState):
    for body in world.all_bodies():
        for jt in body.joints:
            if jt.limits is not None:
                lo, hi = jt.limits
                if not (lo - 1e-9 <= jt.value <= hi + 1e-9):
                    raise InitialCollision(f"joint {jt.name} outside limits")
    entries = []
    for body in world.all_bodies():
        for lk in body.links:
            entries.append((body.name, lk))
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            ba, la = entries[i]
            bb, lb = entries[j]
            if ba == bb:
                continue
            dist, _ = separation(la.shape, world.shape_pose(la),
                                 lb.shape, world.shape_pose(lb))
            if dist < -CONTACT_TOL * 5:
                raise InitialCollision(
                    f"{la.name} penetrates {lb.name} by {-dist * 1000:.2f} mm")
