"""Quaternion, rotation and twist algebra for the two-arm closed chain.

Storage conventions used everywhere in the package:

* A quaternion is stored vector-first, ``[v_x, v_y, v_z, s]``.
* A twist is stacked linear-first, ``[v; w]`` (6,).
* ``rotation_from_quaternion`` is the active rotation
  ``A = (2 s^2 - 1) I + 2 s [v x] + 2 v v^T``.
* ``T(theta)`` maps the twist of end-effector 1 to the twist of
  end-effector 2: ``t2 = T t1``, i.e. ``w2 = A^T w1`` and
  ``v2 = A^T (v1 + rho x w1)``.  Equivalently ``w1 = A w2`` and
  ``v1 = A v2 - rho x w1``; the estimators are written in this second form.
* Orientation coordinates are intrinsic X-Y-Z Euler angles and angular
  velocities are expressed in the moving (tool) frame.

All matrices are dense ``numpy`` arrays in row-major storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, RepresentationSingularity

EULER_SINGULAR_MARGIN = 1e-3


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion ``[v; s]``; normalized on construction."""

    v: np.ndarray
    s: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(3)
        s = float(self.s)
        n = math.sqrt(float(v @ v) + s * s)
        if not np.isfinite(n) or n < 1e-300:
            raise InvalidConfig("quaternion must have finite non-zero norm")
        object.__setattr__(self, "v", v / n)
        object.__setattr__(self, "s", s / n)

    @classmethod
    def identity(cls) -> UnitQuaternion:
        return cls(np.zeros(3), 1.0)

    @classmethod
    def from_array(cls, q) -> UnitQuaternion:
        q = np.asarray(q, dtype=float).reshape(4)
        return cls(q[:3], q[3])

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> UnitQuaternion:
        axis = np.asarray(axis, dtype=float).reshape(3)
        axis = axis / np.linalg.norm(axis)
        return cls(math.sin(angle / 2.0) * axis, math.cos(angle / 2.0))

    def as_array(self) -> np.ndarray:
        return np.append(self.v, self.s)

    def conjugate(self) -> UnitQuaternion:
        return UnitQuaternion(-self.v, self.s)

    def canonical(self) -> UnitQuaternion:
        """Representative with non-negative scalar part (first non-zero entry positive at s = 0)."""
        return UnitQuaternion.from_array(canonical_sign(self.as_array()))

    def __mul__(self, other: UnitQuaternion) -> UnitQuaternion:
        # Hamilton product; A(p * q) = A(p) A(q)
        v = self.s * other.v + other.s * self.v + cross(self.v, other.v)
        s = self.s * other.s - float(self.v @ other.v)
        return UnitQuaternion(v, s)


def canonical_sign(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[3] > 0.0:
        return q
    if q[3] < 0.0:
        return -q
    for c in q[:3]:
        if c != 0.0:
            return q if c > 0.0 else -q
    return q


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(3)
        ang = np.asarray(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise InvalidConfig("twist entries must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @classmethod
    def from_vector(cls, t) -> Twist:
        t = np.asarray(t, dtype=float).reshape(6)
        return cls(t[:3], t[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.linear, self.angular))


@dataclass(frozen=True)
class KinematicParams:
    """Unknown closed-chain parameters ``theta = (rho, eta)``."""

    rho: np.ndarray
    eta: UnitQuaternion = field(default_factory=UnitQuaternion.identity)

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))
        if not isinstance(self.eta, UnitQuaternion):
            object.__setattr__(self, "eta", UnitQuaternion.from_array(self.eta))

    @classmethod
    def identity(cls) -> KinematicParams:
        return cls(np.zeros(3), UnitQuaternion.identity())

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.rho, self.eta.as_array()))


def param_error(theta: KinematicParams, theta_hat: KinematicParams) -> np.ndarray:
    """``[rho - rho_hat; vec(eta * conj(eta_hat))]`` with the error quaternion sign-resolved."""
    dq = theta.eta * theta_hat.eta.conjugate()
    vec = dq.v if dq.s >= 0.0 else -dq.v
    return np.concatenate((theta.rho - theta_hat.rho, vec))


def param_error_norm(theta: KinematicParams, theta_hat: KinematicParams) -> float:
    return float(np.linalg.norm(param_error(theta, theta_hat)))


def skew(w) -> np.ndarray:
    x, y, z = float(w[0]), float(w[1]), float(w[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross(a, b) -> np.ndarray:
    """3-vector cross product (``np.cross`` carries heavy per-call overhead)."""
    a0, a1, a2 = float(a[0]), float(a[1]), float(a[2])
    b0, b1, b2 = float(b[0]), float(b[1]), float(b[2])
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def rotation_from_quaternion(eta: UnitQuaternion) -> np.ndarray:
    x, y, z = float(eta.v[0]), float(eta.v[1]), float(eta.v[2])
    s = eta.s
    d = 2.0 * s * s - 1.0
    return np.array(
        [
            [d + 2.0 * x * x, 2.0 * (x * y - s * z), 2.0 * (x * z + s * y)],
            [2.0 * (x * y + s * z), d + 2.0 * y * y, 2.0 * (y * z - s * x)],
            [2.0 * (x * z - s * y), 2.0 * (y * z + s * x), d + 2.0 * z * z],
        ]
    )


def omega_matrix(w1, w2) -> np.ndarray:
    """4x4 symmetric matrix with ``eta^T Omega(w1, w2) eta = w1^T A(eta) w2``.

    Upper-left block ``w2 w1^T + w1 w2^T - (w1.w2) I``, off-diagonal column
    ``w2 x w1`` and corner ``w1.w2``.
    """
    a0, a1, a2 = float(w1[0]), float(w1[1]), float(w1[2])
    b0, b1, b2 = float(w2[0]), float(w2[1]), float(w2[2])
    d = a0 * b0 + a1 * b1 + a2 * b2
    c0, c1, c2 = b1 * a2 - b2 * a1, b2 * a0 - b0 * a2, b0 * a1 - b1 * a0
    o01, o02, o12 = a0 * b1 + a1 * b0, a0 * b2 + a2 * b0, a1 * b2 + a2 * b1
    return np.array(
        [
            [2.0 * a0 * b0 - d, o01, o02, c0],
            [o01, 2.0 * a1 * b1 - d, o12, c1],
            [o02, o12, 2.0 * a2 * b2 - d, c2],
            [c0, c1, c2, d],
        ]
    )


def velocity_transform(theta: KinematicParams) -> np.ndarray:
    """``T(theta) = [[A^T, A^T [rho x]], [0, A^T]]``."""
    at = rotation_from_quaternion(theta.eta).T
    out = np.zeros((6, 6))
    out[:3, :3] = at
    out[:3, 3:] = at @ skew(theta.rho)
    out[3:, 3:] = at
    return out


def transform_twist(theta: KinematicParams, t1: Twist) -> Twist:
    """Twist of end-effector 2 given the twist of end-effector 1."""
    at = rotation_from_quaternion(theta.eta).T
    w2 = at @ t1.angular
    v2 = at @ (t1.linear + cross(theta.rho, t1.angular))
    return Twist(v2, w2)


def inverse_params(theta: KinematicParams) -> KinematicParams:
    """Parameters of the reverse map, ``T(inverse_params(theta)) = T(theta)^-1``."""
    a = rotation_from_quaternion(theta.eta)
    return KinematicParams(-a.T @ theta.rho, theta.eta.conjugate())


def euler_to_matrix(euler) -> np.ndarray:
    """Rotation ``Rx(phi) Ry(theta) Rz(psi)`` for intrinsic X-Y-Z angles."""
    a, b, c = (float(e) for e in euler)
    ca, sa, cb, sb, cc, sc = math.cos(a), math.sin(a), math.cos(b), math.sin(b), math.cos(c), math.sin(c)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]])
    return rx @ ry @ rz


def orientation_rates(euler, euler_rate) -> tuple[np.ndarray, np.ndarray]:
    """``L_o`` with ``euler_rate = L_o @ w_body`` and its time derivative.

    Raises RepresentationSingularity within 1e-3 rad of the middle angle
    reaching +-pi/2.
    """
    b, c = float(euler[1]), float(euler[2])
    db, dc = float(euler_rate[1]), float(euler_rate[2])
    if abs(math.cos(b)) < math.sin(EULER_SINGULAR_MARGIN):
        raise RepresentationSingularity(f"middle Euler angle {b:.6f} rad is at gimbal lock")
    cb, sb, cc, sc = math.cos(b), math.sin(b), math.cos(c), math.sin(c)
    tb = sb / cb
    sec2 = 1.0 / (cb * cb)
    lo = np.array(
        [
            [cc / cb, -sc / cb, 0.0],
            [sc, cc, 0.0],
            [-tb * cc, tb * sc, 1.0],
        ]
    )
    lo_dot = np.array(
        [
            [-sc * dc / cb + cc * sb * db * sec2, -cc * dc / cb - sc * sb * db * sec2, 0.0],
            [cc * dc, -sc * dc, 0.0],
            [-sec2 * cc * db + tb * sc * dc, sec2 * sc * db + tb * cc * dc, 0.0],
        ]
    )
    return lo, lo_dot


def body_rate_matrix(euler) -> np.ndarray:
    """Inverse of ``L_o``: ``w_body = E @ euler_rate``."""
    b, c = float(euler[1]), float(euler[2])
    cb, sb, cc, sc = math.cos(b), math.sin(b), math.cos(c), math.sin(c)
    return np.array([[cb * cc, sc, 0.0], [-cb * sc, cc, 0.0], [sb, 0.0, 1.0]])


def task_rate_map(pose, pose_rate) -> tuple[np.ndarray, np.ndarray]:
    """6x6 ``L = diag(I, L_o)`` and ``L_dot`` for a pose ``[p; euler]``."""
    lo, lo_dot = orientation_rates(pose[3:], pose_rate[3:])
    big = np.eye(6)
    big[3:, 3:] = lo
    big_dot = np.zeros((6, 6))
    big_dot[3:, 3:] = lo_dot
    return big, big_dot
