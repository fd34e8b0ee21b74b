"""Euler-angle viewpoints, rotation matrices and the geodesic error between them.

Convention: a viewpoint ``(azimuth, pitch, roll)`` maps to the rotation

    R = Rz(roll) @ Rx(pitch) @ Rz(azimuth)

(intrinsic ZXZ). Every error value produced by this package depends on this
choice. Angles are radians; degrees only appear in report and record files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
ORTHO_TOL = 1e-12


class InvalidPoseError(ValueError):
    pass


class InvalidRotationError(ValueError):
    pass


def wrap_two_pi(angle: float) -> float:
    """Wrap an angle into [0, 2π)."""
    wrapped = math.fmod(angle, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2π
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped


def wrap_pi(angle: float) -> float:
    """Wrap an angle into (-π, π]."""
    wrapped = math.pi - wrap_two_pi(math.pi - angle)
    return wrapped


@dataclass(frozen=True)
class EulerPose:
    """A viewpoint in radians, canonicalized on construction.

    Azimuth is wrapped to [0, 2π) and roll to (-π, π]. Pitch must already lie
    in [-π/2, π/2]; it is not wrapped because no ZXZ identity folds it back
    into that range.
    """

    azimuth: float
    pitch: float
    roll: float

    def __post_init__(self):
        values = (self.azimuth, self.pitch, self.roll)
        if not all(math.isfinite(float(v)) for v in values):
            raise InvalidPoseError(f"non-finite pose {values}")
        if abs(self.pitch) > math.pi / 2 + 1e-12:
            raise InvalidPoseError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        object.__setattr__(self, "azimuth", wrap_two_pi(float(self.azimuth)))
        object.__setattr__(self, "pitch", float(min(max(self.pitch, -math.pi / 2), math.pi / 2)))
        object.__setattr__(self, "roll", wrap_pi(float(self.roll)))

    @classmethod
    def from_degrees(cls, azimuth: float, pitch: float, roll: float) -> "EulerPose":
        return cls(math.radians(azimuth), math.radians(pitch), math.radians(roll))

    def to_degrees(self) -> tuple[float, float, float]:
        return (math.degrees(self.azimuth), math.degrees(self.pitch), math.degrees(self.roll))


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pose_to_rotation(pose: EulerPose) -> np.ndarray:
    """Rotation matrix ``Rz(roll) @ Rx(pitch) @ Rz(azimuth)`` of a pose."""
    a, p, r = pose.azimuth, pose.pitch, pose.roll
    if not all(math.isfinite(v) for v in (a, p, r)):
        raise InvalidPoseError(f"non-finite pose {(a, p, r)}")
    ca, sa = math.cos(a), math.sin(a)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    # closed-form product of the three elementary rotations
    return np.array(
        [
            [cr * ca - sr * cp * sa, -cr * sa - sr * cp * ca, sr * sp],
            [sr * ca + cr * cp * sa, -sr * sa + cr * cp * ca, -cr * sp],
            [sp * sa, sp * ca, cp],
        ]
    )


def check_rotation(m: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    """Return ``m`` as a float array, raising if it is not a proper rotation."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise InvalidRotationError(f"expected a 3x3 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidRotationError("rotation has non-finite entries")
    if np.max(np.abs(m @ m.T - np.eye(3))) > tol:
        raise InvalidRotationError("matrix is not orthonormal")
    if abs(np.linalg.det(m) - 1.0) > tol:
        raise InvalidRotationError("matrix determinant is not 1")
    return m


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in radians of the relative rotation ``a.T @ b``, in [0, π].

    Equals ``||log(a.T b)||_F / sqrt(2)`` and ``arccos((tr(a.T b) - 1) / 2)``.
    The arccos form loses about 1e-8 rad near zero, so the angle is taken
    with atan2 from the trace (cosine) and the skew part (sine).
    """
    a = check_rotation(a)
    b = check_rotation(b)
    r = a.T @ b
    cos_angle = (np.trace(r) - 1.0) / 2.0
    sin_angle = 0.5 * math.sqrt((r[2, 1] - r[1, 2]) ** 2 + (r[0, 2] - r[2, 0]) ** 2 + (r[1, 0] - r[0, 1]) ** 2)
    return float(math.atan2(sin_angle, cos_angle))


def pose_error(estimate: EulerPose, truth: EulerPose) -> float:
    """Geodesic error between two poses, in radians."""
    return geodesic_distance(pose_to_rotation(estimate), pose_to_rotation(truth))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation drawn from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
