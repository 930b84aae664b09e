"""Six-revolute-joint serial arm with a parallel-jaw gripper.

Kinematics follow a UR5e-like chain (0.85 m reach) expressed as a product
of per-joint rotations and fixed inter-joint offsets. The gripper is a palm
plus two fingers whose gap is a scalar opening in [0, MAX_OPENING]; the
tool center point sits between the fingertips.
"""
from __future__ import annotations

import numpy as np

from .transforms import Pose, rotation_about_axis

ARM_JOINT_NAMES = ("shoulder_pan", "shoulder_lift", "elbow",
                   "wrist_1", "wrist_2", "wrist_3")
GRIPPER_JOINT = "gripper_opening"

MAX_OPENING = 0.085           # parallel-jaw max gap, meters
FINGER_LENGTH = 0.10
FINGER_THICKNESS = 0.012
FINGER_WIDTH = 0.024
PALM_HALF = np.array([0.045, 0.032, 0.030])
TCP_OFFSET = 0.14             # flange to grasp center along tool z
FINGERTIP_Z = 0.16            # flange to fingertip plane

REVOLUTE_RATE = 1.5           # rad/s command-tracking limit
PRISMATIC_RATE = 0.5          # m/s (also used for the gripper)

# UR5e-style Denavit-Hartenberg constants: (alpha_i, a_i, d_i)
_DH = [
    (np.pi / 2, 0.0, 0.1625),
    (0.0, -0.425, 0.0),
    (0.0, -0.3922, 0.0),
    (np.pi / 2, 0.0, 0.1333),
    (-np.pi / 2, 0.0, 0.0997),
    (0.0, 0.0, 0.0996),
]

JOINT_LIMITS = np.array([[-2 * np.pi, 2 * np.pi]] * 6)

# elbow high, TCP near (0.25, -0.08, 0.43) pointing down; collision-free in
# every shipped domain scene
HOME_CONFIG = np.array([2.0887, -1.8897, 1.5947, 1.6364, 1.3757, 1.5354])


def _dh_fixed(alpha: float, a: float, d: float) -> Pose:
    """Constant part of one DH step: Tz(d) Tx(a) Rx(alpha)."""
    rot = rotation_about_axis([1.0, 0.0, 0.0], alpha)
    return Pose(np.array([0.0, 0.0, d]), np.eye(3)) * Pose(np.array([a, 0.0, 0.0]), rot)


_FIXED = [_dh_fixed(*row) for row in _DH]


def fk_frames(base: Pose, q) -> list[Pose]:
    """Joint frames L_1..L_6 plus the flange frame, 7 poses total."""
    q = np.asarray(q, dtype=np.float64)
    frames = []
    cur = base
    for i in range(6):
        cur = cur * Pose(np.zeros(3), rotation_about_axis([0, 0, 1], q[i]))
        frames.append(cur)
        cur = cur * _FIXED[i]
    frames.append(cur)  # flange
    return frames


def flange_pose(base: Pose, q) -> Pose:
    return fk_frames(base, q)[-1]


def tcp_pose(base: Pose, q) -> Pose:
    return flange_pose(base, q) * Pose.from_translation([0.0, 0.0, TCP_OFFSET])


def tcp_from_flange(flange: Pose) -> Pose:
    return flange * Pose.from_translation([0.0, 0.0, TCP_OFFSET])


def flange_from_tcp(tcp: Pose) -> Pose:
    return tcp * Pose.from_translation([0.0, 0.0, -TCP_OFFSET])


def jacobian(base: Pose, q) -> np.ndarray:
    """Geometric Jacobian of the TCP, 6x6 ([linear; angular] rows)."""
    frames = fk_frames(base, q)
    p_tcp = tcp_from_flange(frames[-1]).position
    jac = np.zeros((6, 6))
    origin = base  # frame of joint i before its rotation is applied
    for i in range(6):
        z = origin.rotation[:, 2]
        jac[:3, i] = np.cross(z, p_tcp - origin.position)
        jac[3:, i] = z
        origin = frames[i] * _FIXED[i]
    return jac


# ---------------------------------------------------------------------------
# Collision geometry: local box shapes hung off the kinematic frames.
# One table shared by the functional fast path (collision_boxes) and the
# Body built for the world (world.make_robot_body), so they cannot diverge.
# ---------------------------------------------------------------------------

ARM_LINK_GEOMETRY = (
    # (link name, frame index after that joint's rotation, local offset, half extents)
    ("shoulder", 0, (0.0, 0.0, 0.10), (0.05, 0.05, 0.06)),
    ("upper_arm", 1, (-0.2125, 0.0, 0.0), (0.2125, 0.045, 0.045)),
    ("forearm", 2, (-0.1961, 0.0, 0.0), (0.1961, 0.04, 0.04)),
    ("wrist_1", 3, (0.0, 0.0, 0.0), (0.035, 0.035, 0.045)),
    ("wrist_2", 4, (0.0, 0.0, 0.0), (0.035, 0.035, 0.05)),
    ("wrist_3", 5, (0.0, 0.0, 0.0), (0.03, 0.03, 0.03)),
)
BASE_OFFSET = (0.0, 0.0, 0.08)
BASE_HALF = (0.055, 0.055, 0.08)
FINGER_HALF = (FINGER_THICKNESS / 2.0, FINGER_WIDTH / 2.0, FINGER_LENGTH / 2.0)
FINGER_Z_MID = 2 * PALM_HALF[2] + FINGER_LENGTH / 2.0


def collision_boxes(base: Pose, q, opening: float):
    """(name, half_extents, world pose) for each robot collision box."""
    frames = fk_frames(base, q)
    flange = frames[-1]
    boxes = [("robot_base", np.array(BASE_HALF), base * Pose.from_translation(BASE_OFFSET))]
    for name, idx, offset, half in ARM_LINK_GEOMETRY:
        boxes.append((name, np.array(half), frames[idx] * Pose.from_translation(offset)))
    boxes.append(("palm", PALM_HALF.copy(),
                  flange * Pose.from_translation([0.0, 0.0, PALM_HALF[2]])))
    gap = opening / 2.0 + FINGER_THICKNESS / 2.0
    boxes.append(("finger_left", np.array(FINGER_HALF),
                  flange * Pose.from_translation([-gap, 0.0, FINGER_Z_MID])))
    boxes.append(("finger_right", np.array(FINGER_HALF),
                  flange * Pose.from_translation([gap, 0.0, FINGER_Z_MID])))
    return boxes


FINGER_LINKS = ("finger_left", "finger_right")
GRIPPER_BODY_LINKS = ("palm", "finger_left", "finger_right")


def closing_region(flange: Pose, opening: float):
    """Oriented box between the finger pads near the tips.

    Anything overlapping this region when the gripper closes is a grasp
    candidate; its extent along local x is the current opening.
    """
    half = np.array([max(opening / 2.0, 1e-4), FINGER_WIDTH / 2.0, 0.035])
    center = flange * Pose.from_translation([0.0, 0.0, TCP_OFFSET])
    return half, center
