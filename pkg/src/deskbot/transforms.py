"""Homogeneous transforms, poses and small rotation helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

ORTHO_TOL = 1e-9


def identity() -> np.ndarray:
    return np.eye(4)


def from_rotation_translation(r: np.ndarray, t) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return m


def translation(t) -> np.ndarray:
    return from_rotation_translation(np.eye(3), t)


def from_rpy(translation_xyz, rpy_rad) -> np.ndarray:
    r = Rotation.from_euler("xyz", rpy_rad).as_matrix()
    return from_rotation_translation(r, translation_xyz)


def is_rigid(m: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    """True when m is a proper rigid transform (orthonormal R, det +1, [0,0,0,1] row)."""
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4):
        return False
    if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
        return False
    r = m[:3, :3]
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(r) - 1.0) <= tol


def check_rigid(m: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    if not is_rigid(m, tol):
        raise ValueError("not a rigid transform")
    return np.asarray(m, dtype=float)


def apply(m: np.ndarray, p) -> np.ndarray:
    """Apply a 4x4 transform to a 3-vector (point)."""
    p = np.asarray(p, dtype=float)
    return m[:3, :3] @ p + m[:3, 3]


def invert(m: np.ndarray) -> np.ndarray:
    r = m[:3, :3]
    out = np.eye(4)
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ m[:3, 3]
    return out


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) of the rotation block."""
    return Rotation.from_matrix(np.asarray(m)[:3, :3]).as_quat()


def rotation_angle_between(ra: np.ndarray, rb: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices, radians."""
    rel = Rotation.from_matrix(ra @ rb.T)
    return float(np.linalg.norm(rel.as_rotvec()))


def rotvec_between(r_target: np.ndarray, r_current: np.ndarray) -> np.ndarray:
    """Rotation vector taking r_current onto r_target (world frame)."""
    return Rotation.from_matrix(r_target @ r_current.T).as_rotvec()


@dataclass(frozen=True)
class Pose:
    """End-effector position (m) and orientation as a unit quaternion (x, y, z, w)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-9:
            if n == 0.0 or not np.isfinite(n):
                raise ValueError("orientation quaternion must be normalizable")
            q = q / n
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        return cls(position=np.asarray(m)[:3, 3].copy(), orientation=quat_from_matrix(m))

    def matrix(self) -> np.ndarray:
        r = Rotation.from_quat(self.orientation).as_matrix()
        return from_rotation_translation(r, self.position)
