"""Ground task-tree leaves into primitives, execute with verify & retry,
and emit densely labeled trajectories.

Leaves are grounded lazily, at the moment they execute, from the current
world state. After each leaf execution its inferred predicate is evaluated
on (episode-initial, current) states; on failure the leaf is re-grounded
with a re-derived seed and executed again without resetting the world. The
root predicate is checked after every leaf, so episodes stop as soon as the
task is done. Failed episodes are exactly the timed-out and invalid ones.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import motion, robot
from .errors import (GroundingFailed, IkUnreachable, InvalidGoal, JointAtLimit,
                     NoContactAtGrasp, NotArticulated, NoValidGrasp, NoValidPlacement,
                     PlanTimeout)
from .geometry import aabb_of, sample_surface
from .predicate import Call, eval_predicate, iter_calls, pretty_print
from .replay import (LabeledTrajectory, ReplayBuffer, TimestepRecord, filter_success)
from .samplers import sample_grasps, sample_placements
from .transforms import Pose, matrix_to_rot6
from .world import DT, WorldState, attach, detach, is_invalid, load_scene, step

GROUNDING_PENALTY = 5.0          # seconds of budget charged to a failed grounding
PREGRASP_BACKOFF = 0.08          # m along the approach axis
PLACE_APPROACH_LIFT = 0.06       # m above the place pose
RETREAT_LIFT = 0.10              # m after releasing
MAX_GRASP_TRIES = 8              # candidate pairs explored per grounding
MAX_PLACE_TRIES = 6
ACTION_DIM = 10


@dataclass(frozen=True)
class PrimitiveCall:
    """One grounded robot utility invocation; seed recorded for replay."""

    kind: str            # move_to | grasp | place | articulate | gripper
    payload: object
    seed: int = 0
    target: str = ""     # link/body the call operates on, where applicable


def derive_seed(seed: int, path: tuple, retry_count: int) -> int:
    """Stable 63-bit reseed for one leaf retry, replayable in isolation."""
    text = f"{seed}|{'.'.join(map(str, path))}|{retry_count}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


# ---------------------------------------------------------------------------
# Observation / action plumbing (shared with policy rollout)
# ---------------------------------------------------------------------------

def observation_spec(world: WorldState):
    """Tracked bodies (movable, declaration order) and articulated joints."""
    tracked = [b.name for b in world.movable_bodies()]
    joints = []
    for body in world.bodies:
        for jt in body.joints:
            if jt.kind in ("revolute", "prismatic"):
                joints.append((body.name, jt.name))
    return tracked, joints


def observation_vector(world: WorldState, tracked, joints) -> np.ndarray:
    tcp = world.tcp_pose()
    parts = [tcp.position, matrix_to_rot6(tcp.rotation), [world.gripper_opening]]
    inv = tcp.inverse()
    for name in tracked:
        pose = inv * world.body(name).root.pose
        parts.append(pose.position)
        parts.append(matrix_to_rot6(pose.rotation))
    for body_name, joint_name in joints:
        parts.append([world.body(body_name).joint_by_name(joint_name).value])
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])


def action_vector(tcp_target: Pose, grip_close: bool) -> np.ndarray:
    return np.concatenate([tcp_target.position, matrix_to_rot6(tcp_target.rotation),
                           [1.0 if grip_close else 0.0]])


def arm_targets(q) -> dict:
    return dict(zip(robot.ARM_JOINT_NAMES, np.asarray(q, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Grounding
# ---------------------------------------------------------------------------

def articulation_direction(node) -> str:
    """open/close from the leaf's predicate, else from its verbs."""
    if node.success is not None:
        for call in iter_calls(node.success):
            if call.args and call.args[0] == node.object_part:
                if call.builtin == "activated":
                    return "open"
                if call.builtin == "deactivated":
                    return "close"
    text = node.description.lower()
    for verb in ("close", "reset", "lower", "push in"):
        if verb in text:
            return "close"
    return "open"


def _grasp_target_link(world: WorldState, part: str) -> str:
    body, link = world.find_link(part)
    for lk in body.descendants(part):
        if "handle" in lk.name and "/" not in lk.name:
            return lk.name
    return part


def ground_leaf(node, world: WorldState, seed: int = 0) -> list:
    """Compile a leaf into primitive calls using the current state.

    Articulated part: [move_to(pregrasp), grasp, articulate, gripper(open)].
    Rigid pick & place: [move_to, grasp, move_to(approach), place,
    gripper(open)]. Raises GroundingFailed when no sampler candidate is
    reachable and collision-free.
    """
    if node.object_part is None:
        raise GroundingFailed(f"leaf {node.path} has no object part")
    try:
        world.find_articulation_joint(node.object_part)
        articulated = True
    except NotArticulated:
        articulated = False
    try:
        if articulated:
            return _ground_articulated(node, world, seed)
        return _ground_pick_place(node, world, seed)
    except (NoValidGrasp, NoValidPlacement, IkUnreachable, InvalidGoal, PlanTimeout,
            JointAtLimit) as exc:
        raise GroundingFailed(f"{type(exc).__name__}: {exc}") from exc


def _feasible_grasp(world, grasps, checker, rng_seed):
    q_now = world.q
    for idx, g in enumerate(grasps):
        pre = g.pose * Pose.from_translation([0, 0, -PREGRASP_BACKOFF])
        try:
            q_grasp = motion.solve_ik(world, g.pose, seed=rng_seed + idx, q_init=q_now,
                                      restarts=4)
            q_pre = motion.solve_ik(world, pre, seed=rng_seed + idx,
                                    q_init=q_grasp.values, restarts=4)
        except IkUnreachable:
            continue
        if checker.config_in_collision(q_grasp.values):
            continue
        if checker.config_in_collision(q_pre.values):
            continue
        yield g, q_pre, q_grasp


def _ground_articulated(node, world: WorldState, seed: int) -> list:
    direction = articulation_direction(node)
    cmd = motion.articulation_command(world, node.object_part, direction)  # JointAtLimit here
    grasp_link = _grasp_target_link(world, node.object_part)
    cloud = sample_surface(world, grasp_link, 1200, seed)
    grasps = sample_grasps(cloud, robot.MAX_OPENING, k=32, seed=seed + 1)
    checker = world.collision_checker(attachment_aware=False)
    tried = 0
    for g, q_pre, q_grasp in _feasible_grasp(world, grasps, checker, seed + 2):
        tried += 1
        if tried > MAX_GRASP_TRIES:
            break
        try:
            path = motion.rrt_plan(world, world.q, q_pre.values,
                                   attachment_aware=False, seed=seed + 3)
        except (InvalidGoal, PlanTimeout):
            continue
        return [
            PrimitiveCall("move_to", path, seed, grasp_link),
            PrimitiveCall("grasp", g, seed, grasp_link),
            PrimitiveCall("articulate", cmd, seed, node.object_part),
            PrimitiveCall("gripper", "open", seed),
        ]
    raise GroundingFailed(f"no feasible grasp on {grasp_link} for articulation")


def _ground_pick_place(node, world: WorldState, seed: int) -> list:
    pick, place = node.pick_place if node.pick_place else (node.object_part, None)
    if place is None:
        raise GroundingFailed(f"leaf {node.path} has no place target")
    cloud = sample_surface(world, pick, 1200, seed)
    grasps = sample_grasps(cloud, robot.MAX_OPENING, k=32, seed=seed + 1)
    target_cloud = sample_surface(world, place, 1600, seed + 2)
    obj_aabb = aabb_of(world, pick)
    placements = sample_placements(target_cloud, obj_aabb, k=32, seed=seed + 3)
    checker = world.collision_checker(attachment_aware=False)
    pick_link = world.find_link(pick)[1]
    tried = 0
    for g, q_pre, q_grasp in _feasible_grasp(world, grasps, checker, seed + 4):
        tried += 1
        if tried > MAX_GRASP_TRIES:
            break
        # hypothetical attachment: gripper at the candidate, object where it is
        rel = (g.pose * Pose.from_translation([0, 0, -robot.TCP_OFFSET])).inverse() \
            * pick_link.pose
        att = ("palm", pick, rel)
        att_checker = world.collision_checker(extra_attachment=att)
        for p_idx, cand in enumerate(placements[:MAX_PLACE_TRIES]):
            delta = cand.pose.position - obj_aabb.center
            link_target = Pose(pick_link.pose.position + delta, pick_link.pose.rotation)
            tcp_target = link_target * rel.inverse() * Pose.from_translation(
                [0, 0, robot.TCP_OFFSET])
            approach = Pose(tcp_target.position + np.array([0, 0, PLACE_APPROACH_LIFT]),
                            tcp_target.rotation)
            try:
                q_app = motion.solve_ik(world, approach, seed=seed + 5 + p_idx,
                                        q_init=q_grasp.values, restarts=4)
                q_place = motion.solve_ik(world, tcp_target, seed=seed + 5 + p_idx,
                                          q_init=q_app.values, restarts=4)
            except IkUnreachable:
                continue
            if att_checker.config_in_collision(q_app.values):
                continue
            try:
                path = motion.rrt_plan(world, world.q, q_pre.values,
                                       attachment_aware=False, seed=seed + 6)
                transit = motion.rrt_plan(world, q_grasp.values, q_app.values,
                                          attachment_aware=True, seed=seed + 7,
                                          extra_attachment=att)
            except (InvalidGoal, PlanTimeout):
                continue
            return [
                PrimitiveCall("move_to", path, seed, pick),
                PrimitiveCall("grasp", g, seed, pick),
                PrimitiveCall("move_to", transit, seed, place),
                PrimitiveCall("place", cand, seed, pick),
                PrimitiveCall("gripper", "open", seed),
            ]
    raise GroundingFailed(f"no feasible grasp/placement pair for {pick} -> {place}")


# ---------------------------------------------------------------------------
# Episode execution
# ---------------------------------------------------------------------------

class _EpisodeOver(Exception):
    def __init__(self, reason):
        self.reason = reason   # "success" | "timeout" | "invalid_state"


class _PrimitiveFailed(Exception):
    pass


class _Episode:
    def __init__(self, tree, world, budget, seed, retry):
        self.tree = tree
        self.init_world = world
        self.world = world
        self.budget = float(budget)
        self.seed = int(seed)
        self.retry = bool(retry)
        self.tracked, self.joints = observation_spec(world)
        self.records = []
        self.grasp_attempts = 0
        self.failed_grasps = 0
        self.retries = 0
        self.grip_closed = False

    # -- low-level stepping ---------------------------------------------------

    def _labels_for(self, node) -> list:
        labels = []
        path = node.path
        for k in range(len(path), -1, -1):
            labels.append(self.tree.node_at(path[:k]).description)
        return labels

    def do_step(self, node, q_targets, opening=None, tcp_hint=None):
        if self.world.time + DT > self.budget + 1e-9:
            raise _EpisodeOver("timeout")
        targets = arm_targets(q_targets)
        if opening is not None:
            targets[robot.GRIPPER_JOINT] = opening
        commanded = robot.tcp_pose(self.world.robot_base, np.asarray(q_targets)) \
            if tcp_hint is None else tcp_hint
        self.world = step(self.world, targets)
        obs = observation_vector(self.world, self.tracked, self.joints)
        act = action_vector(commanded, self.grip_closed)
        self.records.append(TimestepRecord(
            obs.astype("<f4"), act.astype("<f4"), self._labels_for(node),
            ".".join(map(str, node.path))))
        if is_invalid(self.world):
            raise _EpisodeOver("invalid_state")

    def penalty(self, seconds):
        new = self.world.clone()
        new.time = min(self.world.time + seconds, self.budget)
        self.world = new
        if new.time >= self.budget - 1e-9:
            raise _EpisodeOver("timeout")

    def settle_check_root(self):
        if eval_predicate(self.tree.root.success, self.init_world, self.world):
            raise _EpisodeOver("success")

    # -- primitives -------------------------------------------------------------

    def run_move_to(self, node, path):
        opening = self.world.gripper_opening if self.grip_closed else robot.MAX_OPENING
        for wp in path.waypoints:
            self.do_step(node, wp.values, opening=opening)

    def run_grasp(self, node, cand, target):
        self.grasp_attempts += 1
        pre = cand.pose * Pose.from_translation([0, 0, -PREGRASP_BACKOFF])
        open_w = min(cand.width + 0.02, robot.MAX_OPENING)
        self._cartesian_to(node, pre, cand.pose, substeps=4, opening=open_w)
        # close to the candidate width, then try to latch on
        self.grip_closed = True
        self.do_step(node, self.world.q, opening=cand.width)
        try:
            self.world = attach(self.world, "palm", target)
        except NoContactAtGrasp:
            self.failed_grasps += 1
            self.grip_closed = False
            self.do_step(node, self.world.q, opening=robot.MAX_OPENING)
            raise _PrimitiveFailed(f"grasp missed {target}")

    def run_place(self, node, cand, target):
        att = self.world.attachment
        if att is None:
            raise _PrimitiveFailed("place with nothing attached")
        link = self.world.find_link(att.grasped_link)[1]
        obj_aabb = aabb_of(self.world, target)
        delta = cand.pose.position - obj_aabb.center
        link_target = Pose(link.pose.position + delta, link.pose.rotation)
        tcp_target = link_target * (link.pose.inverse() * self.world.tcp_pose())
        self._cartesian_to(node, self.world.tcp_pose(), tcp_target, substeps=4,
                           opening=self.world.gripper_opening)

    def run_articulate(self, node, cmd):
        body, joint = self.world.find_articulation_joint(node.object_part)
        direction = "open" if cmd.delta > 0 else "close"
        try:
            waypoints = motion.articulate(self.world, node.object_part, direction)
        except (JointAtLimit, NotArticulated) as exc:
            raise _PrimitiveFailed(str(exc))
        opening = self.world.gripper_opening
        q = self.world.q
        for wp in waypoints:
            try:
                q = motion.solve_ik(self.world, wp, seed=1, q_init=q).values
            except IkUnreachable:
                raise _PrimitiveFailed("arc waypoint unreachable")
            self.do_step(node, q, opening=opening, tcp_hint=wp)

    def run_gripper_open(self, node):
        if self.world.attachment is not None:
            self.world = detach(self.world)
        self.grip_closed = False
        self.do_step(node, self.world.q, opening=robot.MAX_OPENING)
        up = Pose(self.world.tcp_pose().position + np.array([0, 0, RETREAT_LIFT]),
                  self.world.tcp_pose().rotation)
        try:
            q = motion.solve_ik(self.world, up, seed=1, q_init=self.world.q)
        except IkUnreachable:
            return
        self.do_step(node, q.values, opening=robot.MAX_OPENING)
        self.do_step(node, q.values, opening=robot.MAX_OPENING)

    def _cartesian_to(self, node, start: Pose, goal: Pose, substeps: int, opening):
        q = self.world.q
        for t in np.linspace(0.0, 1.0, substeps + 1)[1:]:
            pos = start.position * (1 - t) + goal.position * t
            pose = Pose(pos, goal.rotation)
            try:
                q = motion.solve_ik(self.world, pose, seed=2, q_init=q).values
            except IkUnreachable:
                raise _PrimitiveFailed("cartesian segment unreachable")
            self.do_step(node, q, opening=opening, tcp_hint=pose)
        err = np.linalg.norm(self.world.tcp_pose().position - goal.position)
        if err > 0.01:
            raise _PrimitiveFailed(f"cartesian tracking error {err:.3f} m")

    def execute_calls(self, node, calls) -> bool:
        try:
            for call in calls:
                if call.kind == "move_to":
                    self.run_move_to(node, call.payload)
                elif call.kind == "grasp":
                    self.run_grasp(node, call.payload, call.target)
                elif call.kind == "place":
                    self.run_place(node, call.payload, call.target)
                elif call.kind == "articulate":
                    self.run_articulate(node, call.payload)
                elif call.kind == "gripper":
                    if call.payload == "open":
                        self.run_gripper_open(node)
                    else:
                        self.grip_closed = True
                        self.do_step(node, self.world.q, opening=0.0)
                else:
                    raise ValueError(f"unknown primitive {call.kind}")
            return True
        except _PrimitiveFailed:
            self._recover_gripper(node)
            return False

    def _recover_gripper(self, node):
        if self.world.attachment is not None:
            self.world = detach(self.world)
        if self.grip_closed:
            self.grip_closed = False
            try:
                self.do_step(node, self.world.q, opening=robot.MAX_OPENING)
            except _EpisodeOver:
                raise

    # -- tree traversal -----------------------------------------------------------

    def leaf_done(self, node) -> bool:
        return eval_predicate(node.success, self.init_world, self.world)

    def visit(self, node) -> bool:
        """Pre-order execution; returns True if anything was executed."""
        if eval_predicate(node.success, self.init_world, self.world):
            node.status = "succeeded"
            return False
        node.status = "active"
        if node.is_leaf():
            return self.run_leaf(node)
        executed_any = False
        while True:
            executed_this_pass = False
            for child in node.children:
                executed_this_pass |= self.visit(child)
                self.settle_check_root()
            executed_any |= executed_this_pass
            if eval_predicate(node.success, self.init_world, self.world):
                node.status = "succeeded"
                return executed_any
            if not self.retry:
                node.status = "failed"
                return executed_any
            if not executed_this_pass:
                self.penalty(GROUNDING_PENALTY)   # plan defect: drain the budget

    def run_leaf(self, node) -> bool:
        executed = False
        retry_count = 0
        while True:
            if self.world.time >= self.budget - 1e-9:
                raise _EpisodeOver("timeout")
            seed_r = derive_seed(self.seed, node.path, retry_count)
            try:
                calls = ground_leaf(node, self.world, seed_r)
            except GroundingFailed:
                retry_count += 1
                self.retries += 1
                self.penalty(GROUNDING_PENALTY)
                if not self.retry:
                    node.status = "failed"
                    return executed
                continue
            executed = True
            self.execute_calls(node, calls)
            if self.leaf_done(node):
                node.status = "succeeded"
                self.settle_check_root()
                return executed
            self.settle_check_root()
            retry_count += 1
            self.retries += 1
            if not self.retry:
                node.status = "failed"
                return executed

    def finalize(self, reason) -> LabeledTrajectory:
        invalid = reason == "invalid_state"
        success = (not invalid) and eval_predicate(self.tree.root.success,
                                                   self.init_world, self.world)
        failure_reason = None if success else ("invalid_state" if invalid else "timeout")
        predicates = {".".join(map(str, n.path)): pretty_print(n.success)
                      for n in self.tree.root.walk()}
        return LabeledTrajectory(
            self.records, self.tree.root.description, success, failure_reason,
            self.world.domain, self.seed, predicates=predicates,
            grasp_attempts=self.grasp_attempts, failed_grasps=self.failed_grasps,
            retries=self.retries)


def execute_tree(tree, world: WorldState, time_budget: float, seed: int,
                 retry: bool = True) -> LabeledTrajectory:
    """Run the plan to completion, verify-and-retrying each leaf in place."""
    ep = _Episode(tree, world, time_budget, seed, retry)
    reason = "timeout"
    try:
        ep.visit(tree.root)
        reason = "done"
    except _EpisodeOver as over:
        reason = over.reason
    return ep.finalize(reason)


def label_segments(traj: LabeledTrajectory, tree) -> LabeledTrajectory:
    """Recompute per-step labels (leaf description plus every ancestor)."""
    for ts in traj.timesteps:
        path = tuple(int(p) for p in ts.subtask_id.split(".") if p != "")
        labels = []
        for k in range(len(path), -1, -1):
            labels.append(tree.node_at(path[:k]).description)
        ts.labels = labels
    return traj


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def run_episode(domain_name, task, seed, budget=None, retry=True, backend=None,
                variant="train"):
    """One full episode: build scene, plan, execute. Returns the trajectory."""
    from .domains import make_domain
    from .llm import RuleBackend
    from .planner import build_task_tree
    spec = make_domain(domain_name, variant)
    world = load_scene(spec, seed)
    tree = build_task_tree(task, world, backend or RuleBackend())
    traj = execute_tree(tree, world, budget or spec.budget, seed=seed, retry=retry)
    traj.task = task
    return traj


def _episode_star(args):
    return run_episode(*args)


def generate_dataset(domain, episodes: int, budget=None, base_seed: int = 0,
                     workers: int = 1, retry: bool = True, backend=None,
                     min_successes_per_task: Optional[int] = None,
                     variant: str = "train") -> ReplayBuffer:
    """Parallel episodes with seeds base_seed+i, merged by episode index.

    Tasks round-robin over the domain's templates. When
    min_successes_per_task is given, generation halts at the first
    16-episode boundary where every task has reached that count (counted
    over the ordered prefix, so the result does not depend on the worker
    count).
    """
    from .domains import make_domain
    spec = domain if not isinstance(domain, str) else make_domain(domain, variant)
    tasks = spec.tasks
    jobs = [(spec.name, tasks[i % len(tasks)], base_seed + i, budget, retry, backend,
             variant) for i in range(episodes)]
    buffer = ReplayBuffer([], spec.name)
    counts = {t: 0 for t in tasks}
    chunk = 16
    if workers <= 1:
        iterator = map(_episode_star, jobs)
        for i, traj in enumerate(iterator):
            buffer.append(traj)
            if traj.success:
                counts[traj.task] += 1
            if (min_successes_per_task is not None and (i + 1) % chunk == 0
                    and all(c >= min_successes_per_task for c in counts.values())):
                break
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = 0
            while done < len(jobs):
                batch = jobs[done:done + chunk]
                for traj in pool.map(_episode_star, batch):
                    buffer.append(traj)
                    if traj.success:
                        counts[traj.task] += 1
                done += len(batch)
                if (min_successes_per_task is not None
                        and all(c >= min_successes_per_task for c in counts.values())):
                    break
    return buffer
