"""Task-space arm and object dynamics and the reduced-order two-arm model.

The object pose ``x`` (position plus intrinsic XYZ Euler angles) is the
generalized coordinate.  End-effector 1 follows ``x1 = Lambda x + x1_offset``;
end-effector 2 is carried along by the closed chain, ``x2dot = L2 T L1^-1 x1dot``.
Eliminating the grasp forces gives

    Mbar xddot + hbar = u1 + T^T u2 = N u

with ``Mbar = M_o + (M1 + T^T M2 L2 T L1^-1) Lambda`` and
``hbar = h_o + h1 + T^T (h2 + M2 D Lambda xdot)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidConfig, NearSingularJacobian, SingularL
from .rigidmotion import KinematicParams, velocity_transform

JACOBIAN_COND_LIMIT = 1e8
L_COND_LIMIT = 1e12
ORIENTATIONS = {"euler_xyz": kernels.ORIENT_EULER, "identity": kernels.ORIENT_IDENTITY}


def _mat(a, shape, what):
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    if a.shape != shape:
        raise InvalidConfig(f"{what} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidConfig(f"{what} must be finite")
    return a


def _spd_extremes(m: np.ndarray, what: str) -> tuple[float, float]:
    if np.max(np.abs(m - m.T)) > 1e-12 * max(1.0, float(np.max(np.abs(m)))):
        raise InvalidConfig(f"{what} must be symmetric")
    ev = np.linalg.eigvalsh(m)
    if ev[0] <= 0.0:
        raise InvalidConfig(f"{what} must be positive definite")
    return float(ev[0]), float(ev[-1])


def _quad_norm(quad: np.ndarray) -> float:
    # ||q(v)|| <= sqrt(sum_k ||H_k||^2) ||v||^2
    return math.sqrt(sum(float(np.linalg.norm(h, 2)) ** 2 for h in quad))


@dataclass(frozen=True)
class TaskSpaceArm:
    """Synthetic arm in task space.

    ``M(x) = M0 + eps (1 + sin(k.x)) / 2 * B`` and
    ``h(x, xdot) = g0 + cos(k.x) g1 + q(xdot)``, ``q_j = xdot^T H_j xdot``.
    With ``M0, B`` SPD and ``eps >= 0`` the declared bounds below hold for
    every configuration.
    """

    m0: np.ndarray
    modulation: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))
    eps: float = 0.0
    wave: np.ndarray = field(default_factory=lambda: np.zeros(6))
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(6))
    gravity_wave: np.ndarray = field(default_factory=lambda: np.zeros(6))
    quad: np.ndarray = field(default_factory=lambda: np.zeros((6, 6, 6)))

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "m0", _mat(self.m0, (6, 6), "arm M0"))
        set_(self, "modulation", _mat(self.modulation, (6, 6), "arm modulation"))
        set_(self, "wave", _mat(self.wave, (6,), "arm wave vector"))
        set_(self, "gravity", _mat(self.gravity, (6,), "arm gravity"))
        set_(self, "gravity_wave", _mat(self.gravity_wave, (6,), "arm gravity wave"))
        quad = _mat(self.quad, (6, 6, 6), "arm quadratic tensor")
        set_(self, "quad", np.ascontiguousarray(0.5 * (quad + quad.transpose(0, 2, 1))))
        if not self.eps >= 0.0:
            raise InvalidConfig("arm modulation amplitude must be non-negative")
        set_(self, "eps", float(self.eps))
        _spd_extremes(self.m0, "arm M0")
        if self.eps > 0.0:
            ev = np.linalg.eigvalsh(self.modulation)
            if np.max(np.abs(self.modulation - self.modulation.T)) > 1e-12 or ev[0] < 0.0:
                raise InvalidConfig("arm modulation must be symmetric positive semidefinite")

    def packed(self) -> tuple:
        return (self.m0, self.modulation, self.eps, self.wave, self.gravity, self.gravity_wave, self.quad)

    def mass_matrix(self, x) -> np.ndarray:
        return kernels.arm_mass(self.packed(), np.asarray(x, dtype=float))

    def bias(self, x, xdot) -> np.ndarray:
        return kernels.arm_bias(self.packed(), np.asarray(x, dtype=float), np.asarray(xdot, dtype=float))

    @property
    def c_m(self) -> float:
        return _spd_extremes(self.m0, "arm M0")[0]

    @property
    def c_M(self) -> float:
        top = _spd_extremes(self.m0, "arm M0")[1]
        return top + self.eps * float(np.linalg.eigvalsh(self.modulation)[-1]) if self.eps > 0.0 else top

    @property
    def c_g(self) -> float:
        return float(np.linalg.norm(self.gravity) + np.linalg.norm(self.gravity_wave))

    @property
    def c_h(self) -> float:
        return _quad_norm(self.quad)


@dataclass(frozen=True)
class ObjectModel:
    """Rigid payload: constant mass matrix, ``h_o = gravity + q(xdot)``."""

    mass_matrix: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(6))
    quad: np.ndarray = field(default_factory=lambda: np.zeros((6, 6, 6)))

    def __post_init__(self):
        object.__setattr__(self, "mass_matrix", _mat(self.mass_matrix, (6, 6), "object mass matrix"))
        object.__setattr__(self, "gravity", _mat(self.gravity, (6,), "object gravity"))
        quad = _mat(self.quad, (6, 6, 6), "object quadratic tensor")
        object.__setattr__(self, "quad", np.ascontiguousarray(0.5 * (quad + quad.transpose(0, 2, 1))))
        _spd_extremes(self.mass_matrix, "object mass matrix")

    def packed(self) -> tuple:
        return (self.mass_matrix, self.gravity, self.quad)

    def bias(self, xdot) -> np.ndarray:
        return kernels.object_bias(self.packed(), np.asarray(xdot, dtype=float))


@dataclass(frozen=True)
class InterconnectedModel:
    arm1: TaskSpaceArm
    arm2: TaskSpaceArm
    object: ObjectModel
    lambda_matrix: np.ndarray = field(default_factory=lambda: np.eye(6))
    x1_offset: np.ndarray = field(default_factory=lambda: np.zeros(6))
    orientation: str = "euler_xyz"

    def __post_init__(self):
        lam = _mat(self.lambda_matrix, (6, 6), "Lambda")
        if np.linalg.cond(lam) > L_COND_LIMIT:
            raise InvalidConfig("Lambda must be invertible")
        object.__setattr__(self, "lambda_matrix", lam)
        object.__setattr__(self, "x1_offset", _mat(self.x1_offset, (6,), "x1 offset"))
        if self.orientation not in ORIENTATIONS:
            raise InvalidConfig(f"orientation must be one of {sorted(ORIENTATIONS)}")

    def packed(self) -> tuple:
        return (
            self.arm1.packed(),
            self.arm2.packed(),
            self.object.packed(),
            self.lambda_matrix,
            self.x1_offset,
            ORIENTATIONS[self.orientation],
        )


@dataclass(frozen=True)
class ChainState:
    """Kinematic snapshot of the closed chain at one instant."""

    x: np.ndarray
    xdot: np.ndarray
    x1: np.ndarray
    x1dot: np.ndarray
    x2: np.ndarray
    x2dot: np.ndarray
    l1: np.ndarray
    l1dot: np.ndarray
    l1_inv: np.ndarray
    l2: np.ndarray
    l2dot: np.ndarray


def chain_state(model: InterconnectedModel, x, xdot, x2, theta: KinematicParams) -> ChainState:
    """Evaluate arm poses, rates and L maps; ``x2dot`` follows from the true ``theta``."""
    x = np.asarray(x, dtype=float).reshape(6)
    xdot = np.asarray(xdot, dtype=float).reshape(6)
    x2 = np.asarray(x2, dtype=float).reshape(6)
    out = kernels.chain(model.packed(), x, xdot, x2, velocity_transform(theta))
    if out[-1] != kernels.OK:
        raise SingularL("Euler-rate map at gimbal lock")
    x1, x1d, x2d, l1, l1d, l1i, l2, l2d, _ = out
    return ChainState(x, xdot, x1, x1d, x2, x2d, l1, l1d, l1i, l2, l2d)


def initial_arm2_pose(model: InterconnectedModel, x, x2_position, theta: KinematicParams) -> np.ndarray:
    """Pose of end-effector 2 consistent with the grasp rotation ``A(eta)``.

    The orientation is obtained from ``R2 = R1 A`` and converted to intrinsic
    XYZ angles; the position is taken as given (only rates enter the model).
    """
    from scipy.spatial.transform import Rotation

    x1 = model.lambda_matrix @ np.asarray(x, dtype=float) + model.x1_offset
    out = np.empty(6)
    out[:3] = x2_position
    if model.orientation == "identity":
        out[3:] = x1[3:]
        return out
    r1 = Rotation.from_euler("XYZ", x1[3:])
    a = Rotation.from_quat(theta.eta.as_array())
    out[3:] = (r1 * a).as_euler("XYZ")
    return out


@dataclass(frozen=True)
class JointSpaceSnapshot:
    m_prime: np.ndarray
    h_prime: np.ndarray
    jacobian: np.ndarray
    jacobian_dot: np.ndarray
    qdot: np.ndarray


def task_space_from_joint(s: JointSpaceSnapshot) -> tuple[np.ndarray, np.ndarray]:
    """``M = J^-T M' J^-1`` and ``h = J^-T h' - M Jdot qdot`` for a square Jacobian."""
    j = np.asarray(s.jacobian, dtype=float)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise NearSingularJacobian(f"Jacobian must be square, got {j.shape}")
    if np.linalg.cond(j) >= JACOBIAN_COND_LIMIT:
        raise NearSingularJacobian("Jacobian condition number exceeds 1e8")
    j_inv = np.linalg.inv(j)
    m = j_inv.T @ np.asarray(s.m_prime, dtype=float) @ j_inv
    m = 0.5 * (m + m.T)
    h = j_inv.T @ np.asarray(s.h_prime, dtype=float) - m @ (np.asarray(s.jacobian_dot, dtype=float) @ np.asarray(s.qdot, dtype=float))
    return m, h


def grasp_map(theta: KinematicParams) -> np.ndarray:
    """``N(theta) = [I, T^T]`` (6x12)."""
    return np.hstack((np.eye(6), velocity_transform(theta).T))


def q_matrix(rho) -> np.ndarray:
    """``Q(rho) = I + T^T T``, which does not depend on the rotation."""
    return kernels.q_matrix(np.asarray(rho, dtype=float).reshape(3))


def n_pseudoinverse(theta: KinematicParams) -> np.ndarray:
    """``N^+ = [Q^-1; T Q^-1]`` (12x6)."""
    q_inv = np.linalg.solve(q_matrix(theta.rho), np.eye(6))
    return np.vstack((q_inv, velocity_transform(theta) @ q_inv))


def d_matrix(l1, l1dot, l2, l2dot, t) -> np.ndarray:
    """``D = (L2dot T - L2 T L1^-1 L1dot) L1^-1``, so that ``x2ddot = L2 T L1^-1 x1ddot + D x1dot``."""
    l1 = np.asarray(l1, dtype=float)
    if np.linalg.cond(l1) > L_COND_LIMIT:
        raise SingularL("L1 is not invertible")
    l1_inv = np.linalg.inv(l1)
    return (np.asarray(l2dot) @ t - np.asarray(l2) @ t @ l1_inv @ np.asarray(l1dot)) @ l1_inv


@dataclass(frozen=True)
class ModelTerms:
    m1: np.ndarray
    m2: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    m_o: np.ndarray
    h_o: np.ndarray


def model_terms(model: InterconnectedModel, chain: ChainState) -> ModelTerms:
    return ModelTerms(*kernels.terms(model.packed(), chain.x, chain.xdot, chain.x1, chain.x1dot, chain.x2, chain.x2dot))


def combined_dynamics(model: InterconnectedModel, chain: ChainState, theta: KinematicParams, terms: ModelTerms | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(Mbar, hbar)`` of the interconnected system with ``T`` and ``D`` at ``theta``.

    Arm terms are those of the measured chain; only ``T(theta)`` and
    ``D(theta)`` depend on the parameters, so calling this with an estimate
    gives the model-based ``(Mhat, hhat)``.
    """
    if terms is None:
        terms = model_terms(model, chain)
    mbar, hbar, _ = kernels.assemble(
        model.lambda_matrix,
        velocity_transform(theta),
        chain.xdot,
        chain.l1_inv,
        chain.l1dot,
        chain.l2,
        chain.l2dot,
        terms.m1,
        terms.m2,
        terms.h1,
        terms.h2,
        terms.m_o,
        terms.h_o,
    )
    return mbar, hbar


def forward_dynamics(model: InterconnectedModel, chain: ChainState, theta: KinematicParams, u1, u2) -> np.ndarray:
    """Object acceleration ``Mbar^-1 (u1 + T^T u2 - hbar)``; ``Mbar`` is inverted directly."""
    mbar, hbar = combined_dynamics(model, chain, theta)
    t = velocity_transform(theta)
    return np.linalg.solve(mbar, np.asarray(u1) + t.T @ np.asarray(u2) - hbar)


def default_quad(scale: float, phase: float = 0.0) -> np.ndarray:
    """Deterministic symmetric quadratic-velocity tensor with entries of size ``scale``."""
    i, j, k = np.meshgrid(np.arange(6), np.arange(6), np.arange(6), indexing="ij")
    q = scale * np.cos(1.3 * i + 0.7 * (j + k) + 0.4 * j * k + phase)
    return 0.5 * (q + q.transpose(0, 2, 1))
