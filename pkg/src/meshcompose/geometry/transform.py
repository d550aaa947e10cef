"""Uniform-scale similarity transforms acting as ``p -> s * R @ p + t``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

_ORTHO_TOL = 1e-6


def _as_rotation(R) -> np.ndarray:
    R = np.array(R, dtype=np.float64).reshape(3, 3)
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > _ORTHO_TOL or np.linalg.det(R) <= 0:
        raise ValueError(f"not a proper rotation (orthonormality error {err:.3g})")
    if err > 1e-13 or abs(np.linalg.det(R) - 1.0) > 1e-13:
        # snap accumulated drift back onto SO(3)
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] *= -1
            R = U @ Vt
    return R


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues' formula for the axis-angle vector ``w``."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / theta**2) * K @ K


def rotation_angle(R) -> float:
    """Geodesic angle of ``R`` in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_angle_between(R1, R2) -> float:
    # arccos loses precision near zero, go through the rotation vector instead
    return float(np.linalg.norm(Rotation.from_matrix(np.asarray(R1).T @ np.asarray(R2)).as_rotvec()))


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float = 1.0
    rotation: np.ndarray = None
    translation: np.ndarray = None

    def __post_init__(self):
        s = float(self.scale)
        if not np.isfinite(s) or s <= 0:
            raise ValueError(f"scale must be positive, got {s}")
        R = np.eye(3) if self.rotation is None else _as_rotation(self.rotation)
        t = np.zeros(3) if self.translation is None else np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_quaternion(cls, scale, quat_wxyz, translation) -> "SimilarityTransform":
        q = np.array(quat_wxyz, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not n > 0:
            raise ValueError("quaternion must be non-zero")
        if abs(n - 1.0) > 1e-12:
            q = q / n
        w, x, y, z = q
        t = cls(scale, Rotation.from_quat([x, y, z, w]).as_matrix(), translation)
        # keep the given quaternion so that a load/save round trip is lossless
        q = -q if q[0] < 0 else q
        q.setflags(write=False)
        object.__setattr__(t, "_quat", q)
        return t

    @property
    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``[w, x, y, z]`` with ``w >= 0``."""
        q = getattr(self, "_quat", None)
        if q is not None:
            return q.copy()
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if q[0] < 0 else q

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation

    __call__ = apply

    def inverse(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation_quat": [float(v) for v in self.quaternion],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d) -> "SimilarityTransform":
        return cls.from_quaternion(d["scale"], d["rotation_quat"], d["translation"])

    def __repr__(self):
        return (
            f"SimilarityTransform(scale={self.scale:.6g}, "
            f"angle={np.degrees(rotation_angle(self.rotation)):.4g}deg, "
            f"translation={np.array2string(self.translation, precision=4)})"
        )


def compose(t2: SimilarityTransform, t1: SimilarityTransform) -> SimilarityTransform:
    """The transform applying ``t1`` first, then ``t2``."""
    return SimilarityTransform(
        t2.scale * t1.scale,
        t2.rotation @ t1.rotation,
        t2.scale * (t2.rotation @ t1.translation) + t2.translation,
    )


def apply_transform(t: SimilarityTransform, p) -> np.ndarray:
    return t.apply(p)


def transform_errors(estimate: SimilarityTransform, truth: SimilarityTransform, length=1.0):
    """(rotation error in degrees, translation error / length, relative scale error)."""
    rot = np.degrees(rotation_angle_between(estimate.rotation, truth.rotation))
    trans = float(np.linalg.norm(estimate.translation - truth.translation)) / length
    scale = abs(estimate.scale - truth.scale) / truth.scale
    return rot, trans, scale
