"""
Rotation algebra on SO(3).

Conventions:
- Rotation matrices act on column vectors: v' = R @ v.
- Quaternions are scalar-first (w, x, y, z) and kept in a canonical
  hemisphere so that q and -q have a single representative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateMatrix

# Renormalize only when clearly off the unit sphere; keeps parse/serialize idempotent.
_NORM_SLACK = 1e-14
_SINGULAR_EPS = 1e-12


def _canonical_sign(w: float, x: float, y: float, z: float) -> bool:
    """True when (w, x, y, z) already lies in the canonical hemisphere."""
    if w != 0.0:
        return w > 0.0
    for c in (x, y, z):
        if c != 0.0:
            return c > 0.0
    return True


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        vals = [float(self.w), float(self.x), float(self.y), float(self.z)]
        if not all(np.isfinite(vals)):
            raise ValueError("quaternion components must be finite")
        n = float(np.sqrt(sum(v * v for v in vals)))
        if n == 0.0:
            raise ValueError("zero quaternion")
        if abs(n - 1.0) > _NORM_SLACK:
            vals = [v / n for v in vals]
        if not _canonical_sign(*vals):
            vals = [-v for v in vals]
        for name, v in zip("wxyz", vals):
            object.__setattr__(self, name, v)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q: Sequence[float]) -> "UnitQuaternion":
        return cls(*(float(v) for v in q))

    @classmethod
    def from_matrix(cls, R: np.ndarray) -> "UnitQuaternion":
        return matrix_to_quat(R)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def to_matrix(self) -> np.ndarray:
        return quat_to_matrix(self)


def quat_to_matrix(q: UnitQuaternion) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> UnitQuaternion:
    """Shepperd's method: branch on the largest of w², x², y², z²."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(max(1.0 + tr, 0.0))
        q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif k == 1:
        s = 2.0 * np.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif k == 2:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] + R[1, 1] - R[2, 2], 0.0))
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] - R[1, 1] + R[2, 2], 0.0))
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    return UnitQuaternion(*(float(v) for v in q))


def is_rotation(R: np.ndarray, tol: float = 1e-10) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def skew(v: np.ndarray) -> np.ndarray:
    """[v]_x, so that skew(v) @ u == np.cross(v, u)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def geodesic_angle(a: np.ndarray, b: np.ndarray) -> float:
    """
    Angle in [0, pi] of the rotation taking ``a`` to ``b``.

    Equal to arccos((tr(aᵀb) - 1)/2), but evaluated as atan2 of the sine
    (from the antisymmetric part) and the cosine. arccos has unbounded slope
    at ±1 and turns a 1e-16 trace rounding into a 1e-8 angle error there.
    """
    M = np.asarray(a, dtype=float).T @ np.asarray(b, dtype=float)
    c = np.clip((np.trace(M) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * math.sqrt((M[2, 1] - M[1, 2]) ** 2 + (M[0, 2] - M[2, 0]) ** 2 + (M[1, 0] - M[0, 1]) ** 2)
    return float(math.atan2(s, c))


def chordal_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def angular_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between unit vectors; arccos(<u, v>) evaluated stably as atan2(|u x v|, <u, v>)."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    return float(math.atan2(np.linalg.norm(np.cross(u, v)), np.clip(np.dot(u, v), -1.0, 1.0)))


def rot_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """
    Rodrigues' formula.

    R = I + sin(θ)[a]_x + (1 - cos(θ))[a]_x²

    At θ = π this reduces to 2aaᵀ - I up to a sin(π) ~ 1e-16 skew term.
    """
    a = np.asarray(axis, dtype=float)
    K = skew(a)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def so3_exp(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(rotvec)
    if theta < 1e-15:
        return np.eye(3) + skew(rotvec)
    return rot_about_axis(rotvec / theta, theta)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R, stable across [0, π] via the quaternion route."""
    q = matrix_to_quat(R)
    v = np.array([q.x, q.y, q.z])
    s = np.linalg.norm(v)
    if s < 1e-15:
        return 2.0 * v / q.w
    return 2.0 * np.arctan2(s, q.w) * v / s


def geodesic_midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ so3_exp(0.5 * so3_log(a.T @ b))


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """
    Closest rotation to M in Frobenius norm.

    The orthogonal polar factor U Vᵀ is sign-corrected along the direction of
    the smallest singular value when det(U Vᵀ) < 0.

    Raises:
        DegenerateMatrix: if two or more singular values are below 1e-12.
    """
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M)
    if np.count_nonzero(s < _SINGULAR_EPS) >= 2:
        raise DegenerateMatrix(f"projection onto SO(3) is ambiguous (singular values {s})")
    D = np.eye(3)
    if np.linalg.det(U @ Vt) < 0:
        D[2, 2] = -1.0
    return U @ D @ Vt


def chordal_mean(rotations: Sequence[np.ndarray], weights: Sequence[float] | None = None) -> np.ndarray:
    """Weighted L2-chordal mean: argmin_R Σ w_i ||R - R_i||_F²."""
    Rs = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    if weights is None:
        w = np.ones(len(Rs))
    else:
        w = np.asarray(weights, dtype=float)
    if w.shape != (len(Rs),):
        raise ValueError("one weight per rotation is required")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with at least one positive")
    return nearest_rotation(np.einsum("k,kij->ij", w, Rs))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized 4D Gaussian."""
    q = rng.normal(size=4)
    return quat_to_matrix(UnitQuaternion(*(q / np.linalg.norm(q))))


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_perpendicular(v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random unit vector orthogonal to unit vector ``v``."""
    while True:
        p = rng.normal(size=3)
        p -= np.dot(p, v) * v
        n = np.linalg.norm(p)
        if n > 1e-8:
            return p / n
