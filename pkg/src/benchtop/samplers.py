"""Pseudo-random grasp and placement pose generation.

Grasps come from antipodal point pairs drawn uniformly over the valid pairs
of a surface cloud; placements pair an upward-facing support point with a
uniform offset across the object's bottom face. Both are deterministic in
their seed, which is what makes retries replayable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import robot
from .errors import NoValidGrasp, NoValidPlacement
from .geometry import Aabb, PointCloud
from .transforms import Pose, rotation_about_axis

ANTIPODAL_CONE = np.deg2rad(20.0)
UPWARD_DOT = 0.99            # same constant as the on-top-of predicate
DEFAULT_K = 32
_BATCH = 4096
_MAX_BATCHES = 40


@dataclass(frozen=True)
class GraspCandidate:
    pose: Pose                 # gripper (TCP) frame: x = closing axis, z = approach
    width: float
    contact_points: tuple      # the antipodal pair, world frame
    score: float

    @property
    def approach(self) -> np.ndarray:
        return self.pose.rotation[:, 2]


@dataclass(frozen=True)
class PlaceCandidate:
    pose: Pose                 # target pose of the object's AABB center (rotation = keep)
    support_point: np.ndarray
    support_normal: np.ndarray


def sample_grasps(cloud: PointCloud, gripper_max_opening: float, k: int = DEFAULT_K,
                  seed: int = 0) -> list:
    """k antipodal grasp candidates in draw order, deterministic in seed.

    A valid pair has opposing normals within ANTIPODAL_CONE, a separation at
    most the gripper opening, and the pair axis aligned with both normals.
    Each pair gets a pseudo-random approach direction perpendicular to the
    closing axis, filtered so the gripper never approaches from below and
    never sweeps its palm or fingers through the cloud.
    """
    if len(cloud) == 0:
        raise NoValidGrasp("empty cloud")
    pts = cloud.points
    nrm = cloud.normals
    rng = np.random.default_rng(seed)
    cos_cone = np.cos(ANTIPODAL_CONE)
    n = len(pts)
    out = []
    for _ in range(_MAX_BATCHES):
        ii = rng.integers(0, n, size=_BATCH)
        jj = rng.integers(0, n, size=_BATCH)
        d = pts[jj] - pts[ii]
        widths = np.linalg.norm(d, axis=1)
        ok = (widths > 1e-4) & (widths <= gripper_max_opening)
        ok &= np.einsum("ij,ij->i", nrm[ii], nrm[jj]) <= -cos_cone
        axis = np.zeros_like(d)
        nz = widths > 1e-9
        axis[nz] = d[nz] / widths[nz, None]
        ok &= np.einsum("ij,ij->i", axis, nrm[jj]) >= cos_cone
        ok &= np.einsum("ij,ij->i", axis, nrm[ii]) <= -cos_cone
        for idx in np.nonzero(ok)[0]:
            cand = _grasp_from_pair(pts[ii[idx]], pts[jj[idx]],
                                    float(widths[idx]),
                                    float(-np.dot(nrm[ii[idx]], nrm[jj[idx]])),
                                    pts, rng, gripper_max_opening)
            if cand is not None:
                out.append(cand)
                if len(out) >= k:
                    return out
    if not out:
        raise NoValidGrasp("no antipodal pair fits the gripper")
    return out


def _grasp_from_pair(p1, p2, width, score, cloud_pts, rng, max_opening):
    x = (p2 - p1) / width
    center = (p1 + p2) / 2.0
    helper = np.array([0.0, 0.0, 1.0]) if abs(x[2]) < 0.95 else np.array([1.0, 0.0, 0.0])
    y0 = np.cross(helper, x)
    y0 /= np.linalg.norm(y0)
    z0 = np.cross(x, y0)
    for _ in range(4):
        theta = rng.uniform(0.0, 2 * np.pi)
        z = np.cos(theta) * z0 + np.sin(theta) * y0
        if z[2] > 0.3:       # approach pointing upward: gripper would come from below
            continue
        y = np.cross(z, x)
        rot = np.stack([x, y, z], axis=1)
        pose = Pose(center, rot)
        if _gripper_sweep_clear(pose, width, cloud_pts, max_opening):
            return GraspCandidate(pose, width, (p1.copy(), p2.copy()), score)
    return None


def _gripper_sweep_clear(pose: Pose, width: float, cloud_pts, max_opening) -> bool:
    """No cloud point may intersect the palm or the open fingers."""
    local = (cloud_pts - pose.position) @ pose.rotation
    open_half = min(width + 0.02, max_opening) / 2.0
    # palm: a slab behind the fingers
    palm_lo = -(robot.TCP_OFFSET - 0.0) - 2 * robot.PALM_HALF[2]
    palm_hi = -(robot.FINGER_LENGTH - (robot.FINGERTIP_Z - robot.TCP_OFFSET))
    in_palm = ((np.abs(local[:, 0]) <= robot.PALM_HALF[0] + 1e-4)
               & (np.abs(local[:, 1]) <= robot.PALM_HALF[1] + 1e-4)
               & (local[:, 2] >= palm_lo) & (local[:, 2] <= palm_hi + 1e-4))
    if np.any(in_palm):
        return False
    # fingers: boxes just outside the open gap, reaching down to the fingertips
    tip = robot.FINGERTIP_Z - robot.TCP_OFFSET
    z_lo = tip - robot.FINGER_LENGTH
    in_finger = ((np.abs(local[:, 1]) <= robot.FINGER_WIDTH / 2 + 1e-4)
                 & (local[:, 2] >= z_lo) & (local[:, 2] <= tip)
                 & (np.abs(local[:, 0]) >= open_half - 1e-9)
                 & (np.abs(local[:, 0]) <= open_half + robot.FINGER_THICKNESS + 1e-4))
    return not np.any(in_finger)


def sample_placements(target_cloud: PointCloud, object_aabb: Aabb, k: int = DEFAULT_K,
                      seed: int = 0) -> list:
    """k resting poses on upward-facing support points, deterministic in seed.

    Each candidate pairs a support point (contact normal aligned against
    gravity) with an offset drawn uniformly over the object's bottom-face
    rectangle, then lifts the object so its AABB rests on the support
    without initial penetration. Support points must be locally supported at
    object scale (neighbors in at least 3 quadrants), which rules out wall
    rims and ledge edges.
    """
    if len(target_cloud) == 0:
        raise NoValidPlacement("empty target cloud")
    up = target_cloud.normals[:, 2] > UPWARD_DOT
    pts = target_cloud.points[up]
    nrm = target_cloud.normals[up]
    if len(pts) == 0:
        raise NoValidPlacement("no upward-facing support points")
    rng = np.random.default_rng(seed)
    ext = object_aabb.extents
    center = object_aabb.center
    bottom_dx = ext[0] / 2.0
    bottom_dy = ext[1] / 2.0
    lift = center[2] - object_aabb.min[2]
    radius = max(0.25 * min(ext[0], ext[1]), 0.005)
    all_pts = target_cloud.points
    out = []
    for _ in range(_MAX_BATCHES * k):
        if len(out) >= k:
            break
        i = int(rng.integers(0, len(pts)))
        p = pts[i]
        if not _locally_supported(p, pts, radius):
            continue
        dx = rng.uniform(-bottom_dx, bottom_dx)
        dy = rng.uniform(-bottom_dy, bottom_dy)
        target_center = np.array([p[0] - dx, p[1] - dy, p[2] + lift])
        lo = target_center - ext / 2.0
        hi = target_center + ext / 2.0
        inside = np.all((all_pts > lo + 1e-6) & (all_pts < hi - 1e-6), axis=1)
        if np.any(inside):
            continue
        out.append(PlaceCandidate(Pose(target_center, np.eye(3)), p.copy(), nrm[i].copy()))
    if not out:
        raise NoValidPlacement("no supported placement found")
    return out


def _locally_supported(p, up_pts, radius: float) -> bool:
    d = up_pts - p
    near = (np.abs(d[:, 2]) <= 2e-3) & (np.einsum("ij,ij->i", d[:, :2], d[:, :2]) <= radius ** 2)
    dx = d[near, 0]
    dy = d[near, 1]
    quads = set()
    for x, y in zip(dx, dy):
        if abs(x) < 1e-9 and abs(y) < 1e-9:
            continue
        quads.add((x > 0, y > 0))
    return len(quads) >= 3
