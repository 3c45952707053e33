"""Rigid-body math: twists, the exponential map, pose composition and inversion.

Twist 6-vectors are ordered ``(linear, angular)``, i.e. ``xi = (v, w)``, and
``hat(xi) = [[hat(w), v], [0, 0]]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
JOINT_CLASSES = (REVOLUTE, PRISMATIC)

# Below this rotation magnitude the exp coefficients switch to Taylor series.
SMALL_ANGLE = 1e-6


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(w) @ x == cross(w, x)``; batched over leading axes."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]], axis=-1
    )


def _exp_coefficients(phi, small: float = SMALL_ANGLE):
    """``sin(p)/p``, ``(1-cos p)/p^2`` and ``(p-sin p)/p^3`` with a Taylor branch near zero."""
    phi = np.asarray(phi, dtype=np.float64)
    tiny = phi < small
    p = np.where(tiny, 1.0, phi)
    p2 = p * p
    a = np.where(tiny, 1.0 - phi**2 / 6.0, np.sin(p) / p)
    b = np.where(tiny, 0.5 - phi**2 / 24.0, (1.0 - np.cos(p)) / p2)
    c = np.where(tiny, 1.0 / 6.0 - phi**2 / 120.0, (p - np.sin(p)) / (p2 * p))
    return a, b, c


def exp_batch(v, w, theta, small: float = SMALL_ANGLE) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``exp(hat(xi) * theta)`` for arbitrary (unnormalised) twists.

    ``v``, ``w`` have shape (..., 3), ``theta`` shape (...). Returns rotation
    (..., 3, 3) and translation (..., 3).
    """
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    rv = w * theta[..., None]
    tv = v * theta[..., None]
    phi = np.linalg.norm(rv, axis=-1)
    a, b, c = _exp_coefficients(phi, small)
    K = hat(rv)
    K2 = K @ K
    eye = np.eye(3)
    R = eye + a[..., None, None] * K + b[..., None, None] * K2
    V = eye + b[..., None, None] * K + c[..., None, None] * K2
    t = np.einsum("...ij,...j->...i", V, tv)
    return R, t


@dataclass(frozen=True, eq=False)
class Twist:
    """Joint screw with an explicit revolute/prismatic tag."""

    angular: np.ndarray
    linear: np.ndarray
    joint: str = REVOLUTE

    def __post_init__(self):
        w = np.array(self.angular, dtype=np.float64).reshape(3)
        v = np.array(self.linear, dtype=np.float64).reshape(3)
        if self.joint not in JOINT_CLASSES:
            raise ValueError(f"unknown joint class {self.joint!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise ValueError("twist components must be finite")
        w.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "angular", w)
        object.__setattr__(self, "linear", v)

    @classmethod
    def revolute(cls, axis, point, pitch: float = 0.0) -> "Twist":
        """Rotation about the line through ``point`` along ``axis`` (normalised)."""
        w = np.asarray(axis, dtype=np.float64)
        w = w / np.linalg.norm(w)
        q = np.asarray(point, dtype=np.float64)
        return cls(w, -np.cross(w, q) + pitch * w, REVOLUTE)

    @classmethod
    def prismatic(cls, direction) -> "Twist":
        d = np.asarray(direction, dtype=np.float64)
        return cls(np.zeros(3), d / np.linalg.norm(d), PRISMATIC)

    @classmethod
    def from_vector(cls, xi, joint: str = REVOLUTE) -> "Twist":
        xi = np.asarray(xi, dtype=np.float64)
        return cls(xi[3:], xi[:3], joint)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    @property
    def scale(self) -> float:
        """Norm the class invariant pins to one."""
        if self.joint == REVOLUTE:
            return float(np.linalg.norm(self.angular))
        return float(np.linalg.norm(self.linear))

    def is_normalized(self, tol: float = 1e-9) -> bool:
        if self.joint == PRISMATIC and np.linalg.norm(self.angular) > tol:
            return False
        return abs(self.scale - 1.0) <= tol

    def normalized(self) -> "Twist":
        w = self.angular
        if self.joint == PRISMATIC:
            w = np.zeros(3)
        k = self.scale
        if k == 0:
            raise ValueError("cannot normalise a zero twist")
        return Twist(w / k, self.linear / k, self.joint)

    def __eq__(self, other):
        if not isinstance(other, Twist):
            return NotImplemented
        return (
            self.joint == other.joint
            and np.array_equal(self.angular, other.angular)
            and np.array_equal(self.linear, other.linear)
        )

    def __hash__(self):
        return hash((self.joint, self.angular.tobytes(), self.linear.tobytes()))

    def to_dict(self) -> dict:
        return {"joint": self.joint, "angular": self.angular.tolist(), "linear": self.linear.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Twist":
        return cls(d["angular"], d["linear"], d.get("joint", REVOLUTE))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x_a = R x_b + t`` (the homogeneous g_ab)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        R, _ = exp_batch(np.zeros(3), np.asarray(rotvec, dtype=np.float64), np.float64(1.0))
        return cls(R, translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Map point(s) of shape (..., 3) from frame b into frame a."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.all(np.abs(R.T @ R - np.eye(3)) <= tol) and abs(np.linalg.det(R) - 1.0) <= tol)

    def orthonormalized(self) -> "Pose":
        """Project the rotation onto SO(3) (polar decomposition via SVD)."""
        u, _, vt = np.linalg.svd(self.rotation)
        R = u @ vt
        if np.linalg.det(R) < 0:
            u[:, -1] *= -1
            R = u @ vt
        return Pose(R, self.translation)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_list(self) -> list[float]:
        """Row-major rotation followed by translation (12 numbers)."""
        return self.rotation.reshape(-1).tolist() + self.translation.tolist()

    @classmethod
    def from_list(cls, values) -> "Pose":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (12,):
            raise ValueError(f"expected 12 numbers, got shape {values.shape}")
        return cls(values[:9].reshape(3, 3), values[9:])


def exp_twist(xi: Twist, theta: float) -> Pose:
    """Rigid motion of screw ``xi`` by joint value ``theta``."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError("joint value must be finite")
    if not xi.is_normalized(1e-6):
        raise ValueError(f"{xi.joint} twist violates its normalisation invariant")
    if xi.joint == PRISMATIC:
        return Pose(np.eye(3), theta * xi.linear)
    R, t = exp_batch(xi.linear, xi.angular, np.float64(theta))
    return Pose(R, t)


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def adjoint(p: Pose) -> np.ndarray:
    """6x6 adjoint acting on ``(v, w)`` twists: ``hat(Ad xi) = g hat(xi) g^-1``."""
    R, t = p.rotation, p.translation
    ad = np.zeros((6, 6))
    ad[:3, :3] = R
    ad[:3, 3:] = hat(t) @ R
    ad[3:, 3:] = R
    return ad


def curly_hat(xi) -> np.ndarray:
    """Adjoint-algebra matrix ``ad_xi`` for ``xi = (v, w)``; batched."""
    xi = np.asarray(xi, dtype=np.float64)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    wh = hat(xi[..., 3:])
    out[..., :3, :3] = wh
    out[..., :3, 3:] = hat(xi[..., :3])
    out[..., 3:, 3:] = wh
    return out


def left_jacobian(xi) -> np.ndarray:
    """SE(3) left Jacobian: ``exp(hat(xi + d)) ~= exp(hat(J d)) exp(hat(xi))``; batched.

    Evaluated by its power series in ``ad_xi`` (Horner form), truncated once
    terms fall below double precision.
    """
    xi = np.asarray(xi, dtype=np.float64)
    X = curly_hat(xi)
    m = float(np.max(np.abs(X).sum(axis=-1))) if X.size else 0.0
    n_terms = 2
    term = 1.0
    while n_terms < 200:
        term *= m / (n_terms + 1)
        if term < 1e-18:
            break
        n_terms += 1
    eye = np.broadcast_to(np.eye(6), X.shape)
    J = eye.copy()
    for k in range(n_terms, 0, -1):
        J = eye + (X @ J) / (k + 1)
    return J


def so3_log(R) -> np.ndarray:
    """Rotation vector of a rotation matrix (batched)."""
    R = np.asarray(R, dtype=np.float64)
    return Rotation.from_matrix(R.reshape(-1, 3, 3)).as_rotvec().reshape(R.shape[:-2] + (3,))


def so3_left_jacobian_inv(phi_vec) -> np.ndarray:
    """Inverse SO(3) left Jacobian (batched)."""
    pv = np.asarray(phi_vec, dtype=np.float64)
    phi = np.linalg.norm(pv, axis=-1)
    small = phi < 1e-4
    p = np.where(small, 1.0, phi)
    coef = np.where(small, 1.0 / 12.0 + phi**2 / 720.0, 1.0 / p**2 - (1.0 + np.cos(p)) / (2.0 * p * np.sin(p)))
    K = hat(pv)
    return np.eye(3) - 0.5 * K + coef[..., None, None] * (K @ K)


def random_pose(rng: np.random.Generator, max_translation: float = 1.0) -> Pose:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    return Pose(R, rng.uniform(-max_translation, max_translation, size=3))


def random_twist(rng: np.random.Generator, joint: str = REVOLUTE, max_offset: float = 0.5) -> Twist:
    if joint == PRISMATIC:
        return Twist.prismatic(rng.normal(size=3))
    return Twist.revolute(rng.normal(size=3), rng.uniform(-max_offset, max_offset, size=3), rng.uniform(-0.1, 0.1))
