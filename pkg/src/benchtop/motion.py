"""IK, joint-space RRT, and articulated-object motion primitives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import robot
from .errors import IkUnreachable, InvalidGoal, JointAtLimit, NotArticulated, PlanTimeout
from .geometry import CONTACT_TOL, BoxShape, batched_box_separation, shape_aabb
from .transforms import Pose, rotation_log

PLAN_RESOLUTION = 0.05      # rad, per-joint spacing of returned waypoints
SHORTCUT_ATTEMPTS = 100
IK_POS_TOL = 2e-3           # m
IK_ROT_TOL = np.deg2rad(1.0)
IK_RESTARTS = 20
IK_ITERS = 100
IK_DAMPING = 0.05
ARC_ANGLE_STEP = np.deg2rad(5.0)
ARC_LINEAR_STEP = 0.01


@dataclass(frozen=True)
class JointConfig:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Path:
    waypoints: list
    resolution: float = PLAN_RESOLUTION


@dataclass(frozen=True)
class ArticulationCommand:
    kind: str          # "revolute-arc" | "prismatic-slide"
    joint: str
    delta: float


# ---------------------------------------------------------------------------
# Collision checking
# ---------------------------------------------------------------------------

class CollisionChecker:
    """Robot-vs-scene penetration test with optional grasped-object awareness.

    Obstacles are snapshotted at construction, so a checker is only valid
    while the non-robot scene is static (one plan / one IK call). Convex
    links are approximated by their oriented bounding box for this test.
    """

    def __init__(self, world, attachment_aware: bool = True, extra_attachment=None):
        self.base = world.robot_base
        self.opening = world.gripper_opening
        att = extra_attachment
        if att is None and attachment_aware and world.attachment is not None:
            att = (world.attachment.gripper_link, world.attachment.grasped_link,
                   world.attachment.relative)
        self.attachment = att if attachment_aware else None
        grasped = set()
        if att is not None:
            _, grasped_name, _ = att
            body, link = world.find_link(grasped_name)
            grasped = {link.name} | {lk.name for lk in body.descendants(link.name)}
        self._grasped_geom = []
        if self.attachment is not None:
            body, link = world.find_link(self.attachment[1])
            gp = world.robot.link(self.attachment[0]).pose
            for lk in [link] + body.descendants(link.name):
                shape = lk.shape if isinstance(lk.shape, BoxShape) else _obb_of(lk.shape)
                rel = gp.inverse() * world.shape_pose(lk)
                self._grasped_geom.append((shape.half_extents, rel))
        centers, rots, halves = [], [], []
        for body in world.bodies:
            for lk in body.links:
                if lk.name in grasped:
                    continue
                shape = lk.shape if isinstance(lk.shape, BoxShape) else _obb_of(lk.shape)
                sp = world.shape_pose(lk)
                centers.append(sp.position)
                rots.append(sp.rotation)
                halves.append(shape.half_extents)
        self.obs_centers = np.asarray(centers).reshape(-1, 3)
        self.obs_rots = np.asarray(rots).reshape(-1, 3, 3)
        self.obs_halves = np.asarray(halves).reshape(-1, 3)

    def _moving_boxes(self, q):
        boxes = robot.collision_boxes(self.base, q, self.opening)
        out = [(half, pose) for _, half, pose in boxes]
        if self.attachment is not None:
            _, _, rel = self.attachment
            flange = robot.flange_pose(self.base, q)
            for half, rel_shape in self._grasped_geom:
                out.append((half, flange * rel_shape))
        return out

    def config_in_collision(self, q) -> bool:
        if len(self.obs_centers) == 0:
            return False
        moving = self._moving_boxes(q)
        n_m, n_o = len(moving), len(self.obs_centers)
        mc = np.asarray([p.position for _, p in moving])
        mr = np.asarray([p.rotation for _, p in moving])
        mh = np.asarray([h for h, _ in moving])
        ca = np.repeat(mc, n_o, axis=0)
        ra = np.repeat(mr, n_o, axis=0)
        ha = np.repeat(mh, n_o, axis=0)
        cb = np.tile(self.obs_centers, (n_m, 1))
        rb = np.tile(self.obs_rots, (n_m, 1, 1))
        hb = np.tile(self.obs_halves, (n_m, 1))
        sep = batched_box_separation(ca, ra, ha, cb, rb, hb)
        return bool(np.min(sep) < -CONTACT_TOL)

    def segment_in_collision(self, q_from, q_to, resolution=PLAN_RESOLUTION) -> bool:
        q_from = np.asarray(q_from)
        q_to = np.asarray(q_to)
        steps = int(np.ceil(np.max(np.abs(q_to - q_from)) / resolution)) + 1
        for t in np.linspace(0.0, 1.0, max(steps, 2)):
            if self.config_in_collision(q_from + t * (q_to - q_from)):
                return True
        return False


def _obb_of(shape) -> BoxShape:
    pts = np.asarray(shape.local_vertices())
    half = (pts.max(axis=0) - pts.min(axis=0)) / 2.0
    return BoxShape(np.maximum(half, 1e-4))


# ---------------------------------------------------------------------------
# Inverse kinematics
# ---------------------------------------------------------------------------

def _pose_error(current: Pose, target: Pose) -> np.ndarray:
    pos = target.position - current.position
    rot = rotation_log(target.rotation @ current.rotation.T)
    return np.concatenate([pos, rot])


def workspace_aabb(world) -> "tuple[np.ndarray, np.ndarray]":
    base = world.robot_base.position
    reach = 0.95
    lo = base + np.array([-reach, -reach, -0.1])
    hi = base + np.array([reach, reach, reach])
    return lo, hi


def solve_ik(world, target: Pose, seed: int = 0,
             q_init: Optional[np.ndarray] = None, restarts: int = IK_RESTARTS) -> JointConfig:
    """Damped-least-squares IK for the TCP with seeded random restarts.

    Accuracy required: 2 mm / 1 degree. Raises IkUnreachable when the target
    is outside the workspace box or no restart converges. Grounding passes a
    small restart count so infeasible candidates fail fast.
    """
    lo, hi = workspace_aabb(world)
    p = target.position
    if np.any(p < lo) or np.any(p > hi):
        raise IkUnreachable(f"target {p} outside workspace")
    base = world.robot_base
    shoulder = base.position + np.array([0.0, 0.0, 0.1625])
    if np.linalg.norm(p - shoulder) > 0.935:   # a2+a3+d5+d6+tool, minus slack
        raise IkUnreachable(f"target {np.round(p, 3)} beyond arm reach")
    rng = np.random.default_rng(seed)
    limits = robot.JOINT_LIMITS
    starts = [np.asarray(q_init if q_init is not None else world.q, dtype=np.float64)]
    for _ in range(max(restarts, 1) - 1):
        starts.append(rng.uniform(-np.pi, np.pi, size=6))
    for q0 in starts:
        q = q0.copy()
        for _ in range(IK_ITERS):
            err = _pose_error(robot.tcp_pose(base, q), target)
            if np.linalg.norm(err[:3]) <= IK_POS_TOL and np.linalg.norm(err[3:]) <= IK_ROT_TOL:
                return JointConfig(np.clip(q, limits[:, 0], limits[:, 1]))
            jac = robot.jacobian(base, q)
            jjt = jac @ jac.T + (IK_DAMPING ** 2) * np.eye(6)
            dq = jac.T @ np.linalg.solve(jjt, err)
            step_norm = np.max(np.abs(dq))
            if step_norm > 0.3:
                dq *= 0.3 / step_norm
            q = np.clip(q + dq, limits[:, 0], limits[:, 1])
            if step_norm < 1e-10:
                break
        err = _pose_error(robot.tcp_pose(base, q), target)
        if np.linalg.norm(err[:3]) <= IK_POS_TOL and np.linalg.norm(err[3:]) <= IK_ROT_TOL:
            return JointConfig(q)
    raise IkUnreachable(f"no IK solution for target at {np.round(p, 3)}")


# ---------------------------------------------------------------------------
# RRT-Connect with shortcut smoothing
# ---------------------------------------------------------------------------

_EXTEND_STEP = 0.25  # rad, nearest-neighbor extension step


def _densify(waypoints, resolution) -> list:
    out = [np.asarray(waypoints[0], dtype=np.float64)]
    for nxt in waypoints[1:]:
        nxt = np.asarray(nxt, dtype=np.float64)
        prev = out[-1]
        steps = int(np.ceil(np.max(np.abs(nxt - prev)) / resolution))
        for t in np.linspace(0.0, 1.0, max(steps, 1) + 1)[1:]:
            out.append(prev + t * (nxt - prev))
    return out


def rrt_plan(world, start, goal, attachment_aware: bool = True, seed: int = 0,
             max_iters: int = 2000, extra_attachment=None) -> Path:
    """Bidirectional RRT with 10% goal bias and grasped-object awareness.

    The returned path is densified to PLAN_RESOLUTION and shortcut-smoothed.
    Raises InvalidGoal when either endpoint is in collision and PlanTimeout
    when max_iters tree extensions fail to connect. extra_attachment lets
    grounding plan with a grasp that has not physically happened yet.
    """
    q_start = np.asarray(start.values if isinstance(start, JointConfig) else start,
                         dtype=np.float64)
    q_goal = np.asarray(goal.values if isinstance(goal, JointConfig) else goal,
                        dtype=np.float64)
    checker = world.collision_checker(attachment_aware=attachment_aware,
                                      extra_attachment=extra_attachment)
    if checker.config_in_collision(q_goal):
        raise InvalidGoal("goal configuration is in collision")
    if checker.config_in_collision(q_start):
        raise InvalidGoal("start configuration is in collision")
    rng = np.random.default_rng(seed)
    if not checker.segment_in_collision(q_start, q_goal):
        return _finish_path([q_start, q_goal], checker, rng)

    limits = robot.JOINT_LIMITS
    lo = np.maximum(limits[:, 0], -np.pi)
    hi = np.minimum(limits[:, 1], np.pi)
    lo = np.minimum(lo, np.minimum(q_start, q_goal) - 0.2)
    hi = np.maximum(hi, np.maximum(q_start, q_goal) + 0.2)
    trees = [{"nodes": [q_start], "parents": [-1]},
             {"nodes": [q_goal], "parents": [-1]}]

    def extend(tree, target):
        nodes = np.asarray(tree["nodes"])
        idx = int(np.argmin(np.max(np.abs(nodes - target), axis=1)))
        near = tree["nodes"][idx]
        delta = target - near
        dist = np.max(np.abs(delta))
        if dist < 1e-9:
            return idx, True
        q_new = target if dist <= _EXTEND_STEP else near + delta * (_EXTEND_STEP / dist)
        if checker.segment_in_collision(near, q_new):
            return None, False
        tree["nodes"].append(q_new)
        tree["parents"].append(idx)
        return len(tree["nodes"]) - 1, bool(dist <= _EXTEND_STEP)

    for it in range(max_iters):
        a, b = trees[it % 2], trees[(it + 1) % 2]
        if rng.uniform() < 0.1:
            sample = b["nodes"][0]  # goal bias: aim at the other tree's root
        else:
            sample = rng.uniform(lo, hi)
        new_idx, _ = extend(a, sample)
        if new_idx is None:
            continue
        # connect: greedily grow the other tree toward the new node
        target = a["nodes"][new_idx]
        while True:
            idx_b, reached = extend(b, target)
            if idx_b is None:
                break
            if reached:
                path_a = _trace(a, new_idx)
                path_b = _trace(b, idx_b)
                if it % 2 == 0:
                    waypoints = path_a[::-1] + path_b
                else:
                    waypoints = path_b[::-1] + path_a
                return _finish_path(waypoints, checker, rng)
    raise PlanTimeout(f"no path after {max_iters} iterations")


def _trace(tree, idx) -> list:
    out = []
    while idx >= 0:
        out.append(tree["nodes"][idx])
        idx = tree["parents"][idx]
    return out


def _finish_path(waypoints, checker, rng) -> Path:
    waypoints = [np.asarray(w, dtype=np.float64) for w in waypoints]
    for _ in range(SHORTCUT_ATTEMPTS):
        if len(waypoints) <= 2:
            break
        i, j = sorted(rng.integers(0, len(waypoints), size=2))
        if j - i < 2:
            continue
        if not checker.segment_in_collision(waypoints[i], waypoints[j]):
            waypoints = waypoints[:i + 1] + waypoints[j:]
    dense = _densify(waypoints, PLAN_RESOLUTION)
    return Path([JointConfig(w) for w in dense], PLAN_RESOLUTION)


# ---------------------------------------------------------------------------
# Articulated-part motion
# ---------------------------------------------------------------------------

def articulate(world, part_name: str, direction: str) -> list:
    """End-effector waypoints that drive part_name's joint to its limit.

    direction "open" targets the upper limit, "close" the lower one. The
    gripper must already be attached to the part or one of its descendants;
    every waypoint preserves the grasp-to-joint relative pose.
    """
    if direction not in ("open", "close"):
        raise ValueError(f"bad direction {direction!r}")
    body, joint = world.find_articulation_joint(part_name)
    att = world.attachment
    if att is None:
        raise NotArticulated(f"not holding {part_name}")
    subtree = {joint.child_link} | {lk.name for lk in body.descendants(joint.child_link)}
    if att.grasped_link not in subtree:
        raise NotArticulated(f"holding {att.grasped_link}, not part of {part_name}")
    lo, hi = joint.limits
    target = hi if direction == "open" else lo
    delta = target - joint.value
    step = ARC_ANGLE_STEP if joint.kind == "revolute" else ARC_LINEAR_STEP
    if abs(delta) < step * 0.2:
        raise JointAtLimit(f"{joint.name} already at {direction} limit")
    n = max(int(np.ceil(abs(delta) / step)), 1)
    gripper_pose = world.tcp_pose()
    grasped_pose = world.find_link(att.grasped_link)[1].pose
    joint_frame = body.link(joint.parent_link).pose * joint.origin
    # grasped link pose expressed in the joint frame, at the current value
    rel_in_joint = joint_frame.inverse() * grasped_pose
    grip_in_link = grasped_pose.inverse() * gripper_pose
    waypoints = []
    for k in range(1, n + 1):
        v = joint.value + delta * k / n
        if joint.kind == "revolute":
            motion = Pose(np.zeros(3), _axis_rot(joint.axis, v - joint.value))
        else:
            motion = Pose(joint.axis * (v - joint.value), np.eye(3))
        link_pose = joint_frame * motion * rel_in_joint
        waypoints.append(link_pose * grip_in_link)
    return waypoints


def _axis_rot(axis, angle):
    from .transforms import rotation_about_axis
    return rotation_about_axis(axis, angle)


def articulation_command(world, part_name: str, direction: str) -> ArticulationCommand:
    body, joint = world.find_articulation_joint(part_name)
    lo, hi = joint.limits
    target = hi if direction == "open" else lo
    kind = "revolute-arc" if joint.kind == "revolute" else "prismatic-slide"
    return ArticulationCommand(kind, joint.name, float(target - joint.value))
