"""Rigid motions as 4x4 homogeneous matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

RIGID_TOL = 1e-9


class NotRigidError(ValueError):
    pass


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion ``x -> R @ x + t`` (mm)."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise NotRigidError(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NotRigidError("transform contains non-finite values")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=RIGID_TOL):
            raise NotRigidError("last row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > RIGID_TOL or abs(np.linalg.det(r) - 1.0) > RIGID_TOL:
            raise NotRigidError("rotation block is not orthonormal with det +1")
        m[3] = [0.0, 0.0, 0.0, 1.0]
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_translation(cls, translation) -> "RigidTransform":
        return cls.from_rt(np.eye(3), translation)

    @classmethod
    def from_axis_angle(cls, axis, angle_deg: float, translation=(0.0, 0.0, 0.0),
                        center=None) -> "RigidTransform":
        """Rotation by ``angle_deg`` about ``axis`` (through ``center`` if given)."""
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        rot = Rotation.from_rotvec(np.deg2rad(angle_deg) * axis).as_matrix()
        t = np.asarray(translation, dtype=np.float64)
        if center is not None:
            c = np.asarray(center, dtype=np.float64)
            t = t + c - rot @ c
        return cls.from_rt(rot, t)

    @classmethod
    def from_flat(cls, values) -> "RigidTransform":
        """Build from 16 row-major numbers."""
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != 16:
            raise NotRigidError(f"expected 16 numbers, got {values.size}")
        return cls(_orthonormalize(values.reshape(4, 4)))

    @classmethod
    def random(cls, rng: np.random.Generator, max_angle_deg: float = 180.0,
               max_translation: float = 10.0) -> "RigidTransform":
        axis = rng.normal(size=3)
        angle = rng.uniform(-max_angle_deg, max_angle_deg)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        t = direction * rng.uniform(0.0, max_translation)
        return cls.from_axis_angle(axis, angle, t)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "RigidTransform":
        r = self.rotation
        m = np.eye(4)
        m[:3, :3] = r.T
        m[:3, 3] = -r.T @ self.translation
        return RigidTransform(m)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self @ other``: apply ``other`` first."""
        return RigidTransform(_orthonormalize(self.matrix @ other.matrix))

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return self.compose(other)
        return NotImplemented

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def to_flat(self) -> list[float]:
        return [float(x) for x in self.matrix.ravel()]

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0.0))

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def __repr__(self):
        return f"RigidTransform({np.array2string(self.matrix, precision=6)})"


def _orthonormalize(m: np.ndarray) -> np.ndarray:
    """Project the rotation block back onto SO(3); guards against drift in long products."""
    m = np.array(m, dtype=np.float64)
    r = m[:3, :3]
    if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
        return m  # let the constructor reject it
    u, _, vt = np.linalg.svd(r)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:
        return m
    m[:3, :3] = fixed
    return m
