"""Rigid-body poses and rotation utilities.

Poses are immutable values: position (3,) in meters plus a 3x3 rotation
matrix. All constructors validate orthonormality to 1e-6 and freeze the
underlying arrays so a pose can be shared across threads safely.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-6


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Pose:
    """World-frame rigid transform."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        p = _frozen(self.position)
        r = _frozen(self.rotation)
        if p.shape != (3,) or r.shape != (3, 3):
            raise ValueError(f"bad pose shapes {p.shape}, {r.shape}")
        if abs(float(np.linalg.det(r)) - 1.0) > _ORTHO_TOL * 10:
            raise ValueError("rotation determinant is not +1")
        if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_TOL * 10:
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", r)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_translation(xyz) -> "Pose":
        return Pose(np.asarray(xyz, dtype=np.float64), np.eye(3))

    def compose(self, other: "Pose") -> "Pose":
        """self then other, i.e. world_T = self * other."""
        return Pose(self.position + self.rotation @ other.position,
                    self.rotation @ other.rotation)

    def __mul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(-rt @ self.position, rt)

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a stack (n, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.position

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (np.max(np.abs(self.position - other.position)) <= tol
                and np.max(np.abs(self.rotation - other.rotation)) <= tol)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation for a unit axis."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise ValueError("zero axis")
    a = a / n
    k = np.array([[0.0, -a[2], a[1]],
                  [a[2], 0.0, -a[0]],
                  [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_between(v_from, v_to) -> np.ndarray:
    """Smallest rotation taking unit vector v_from onto unit vector v_to."""
    f = np.asarray(v_from, dtype=np.float64)
    t = np.asarray(v_to, dtype=np.float64)
    f = f / np.linalg.norm(f)
    t = t / np.linalg.norm(t)
    c = float(np.dot(f, t))
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        # pick any axis orthogonal to f
        helper = np.array([1.0, 0.0, 0.0]) if abs(f[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(f, helper)
        return rotation_about_axis(axis, np.pi)
    axis = np.cross(f, t)
    angle = np.arctan2(np.linalg.norm(axis), c)
    return rotation_about_axis(axis, angle)


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Z-Y-X intrinsic euler angles."""
    return (rotation_about_axis([0, 0, 1], yaw)
            @ rotation_about_axis([0, 1, 0], pitch)
            @ rotation_about_axis([1, 0, 0], roll))


def rotation_angle(r: np.ndarray) -> float:
    """Magnitude of the axis-angle representation of r."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix."""
    angle = rotation_angle(r)
    if angle < 1e-12:
        return np.zeros(3)
    if abs(angle - np.pi) < 1e-6:
        # near pi: extract axis from the symmetric part
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        # fix signs using off-diagonals
        if m[0, 1] < 0:
            axis[1] = -axis[1]
        if m[0, 2] < 0:
            axis[2] = -axis[2]
        n = np.linalg.norm(axis)
        if n < 1e-12:
            return np.array([np.pi, 0.0, 0.0])
        return axis / n * angle
    vec = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return vec / (2.0 * np.sin(angle)) * angle


def rot6_to_matrix(r6) -> np.ndarray:
    """Recover a rotation matrix from its first two rows (6 numbers).

    Gram-Schmidt on the two rows; the third row is their cross product.
    The result is orthonormal with determinant +1 even for perturbed input.
    """
    v = np.asarray(r6, dtype=np.float64).reshape(6)
    a, b = v[:3], v[3:]
    na = np.linalg.norm(a)
    if na < 1e-12:
        raise ValueError("degenerate first row")
    r0 = a / na
    b = b - np.dot(b, r0) * r0
    nb = np.linalg.norm(b)
    if nb < 1e-12:
        raise ValueError("rows are collinear")
    r1 = b / nb
    r2 = np.cross(r0, r1)
    return np.stack([r0, r1, r2])


def matrix_to_rot6(r: np.ndarray) -> np.ndarray:
    """First two rows of a rotation matrix, flattened."""
    return np.asarray(r, dtype=np.float64)[:2].reshape(6).copy()


def random_rotation_euler(rng: np.random.Generator) -> np.ndarray:
    """Rotation with yaw, pitch, roll each uniform on [-pi, pi)."""
    y, p, r = rng.uniform(-np.pi, np.pi, size=3)
    return rotation_from_euler(y, p, r)
