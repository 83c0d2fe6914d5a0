"""Closed-loop simulation of the self-tuning two-arm controller.

Each step measures both end-effector twists from the true object motion,
updates the attitude and displacement estimators, and integrates the plant
over one fixed step with classical RK4.  The control law is re-evaluated at
every RK4 stage with the estimate held over the step, so the integrated
system is smooth and the integrator keeps its fourth order.  An optional
decimation factor instead holds the command constant over several steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .control import Gains, Reference
from .dynamics import InterconnectedModel, initial_arm2_pose
from .errors import InvalidConfig, SingularL
from .estimation import (
    DEGENERATE_TOL,
    AttitudeEstimatorState,
    DisplacementEstimatorState,
    PeWindow,
    attitude_init,
    attitude_update,
    displacement_init,
    displacement_update,
    pe_check,
)
from .rigidmotion import KinematicParams, Twist, UnitQuaternion, transform_twist, velocity_transform
from .stability import solve_lyapunov

KINDS = {"rotating-axis-sine": 0, "fixed-axis-sine": 1, "rest-to-rest": 2}
MAX_STEPS = 10_000_000


def _vec6(a, what):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (6,):
        raise InvalidConfig(f"{what} must have 6 entries")
    if not np.all(np.isfinite(a)):
        raise InvalidConfig(f"{what} must be finite")
    return a


@dataclass(frozen=True)
class TrajectorySpec:
    """Desired object motion.

    ``rotating-axis-sine``: every channel follows ``a (1 - cos 2 pi f t)``; the
    three angle channels are further multiplied by
    ``[cos(W t), sin(W t), 1]`` so the angular-velocity direction keeps
    turning at the precession rate ``W``.  ``fixed-axis-sine`` uses the same
    profile without precession and only the third angle may move, so the
    body angular velocity keeps one direction.  ``rest-to-rest`` is a quintic
    blend from ``start`` to ``start + amplitude`` over ``duration``.

    ``c_v`` and ``c_a`` bound ``|xdot_d|`` and ``|xddot_d|``; when left as
    None they are set to the densely sampled maxima.
    """

    kind: str = "rotating-axis-sine"
    amplitude: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.05, 0.3, 0.3, 0.3]))
    base_frequency: float = 0.2
    axis_precession_rate: float = 0.7
    duration: float = 20.0
    start: np.ndarray = field(default_factory=lambda: np.zeros(6))
    c_v: float | None = None
    c_a: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"trajectory kind must be one of {sorted(KINDS)}, got {self.kind!r}")
        object.__setattr__(self, "amplitude", _vec6(self.amplitude, "trajectory amplitude"))
        object.__setattr__(self, "start", _vec6(self.start, "trajectory start"))
        if not (self.duration >= 0.0 and np.isfinite(self.duration)):
            raise InvalidConfig("trajectory duration must be non-negative")
        if self.base_frequency < 0.0 or not np.isfinite(self.axis_precession_rate):
            raise InvalidConfig("trajectory frequency must be non-negative and the precession rate finite")
        if self.kind == "fixed-axis-sine" and np.any(self.amplitude[3:5] != 0.0):
            raise InvalidConfig("fixed-axis-sine only moves the last angle; amplitude[3:5] must be zero")
        v_max, a_max = self.sampled_bounds()
        for name, declared, sampled in (("c_v", self.c_v, v_max), ("c_a", self.c_a, a_max)):
            if declared is None:
                object.__setattr__(self, name, sampled)
            elif sampled > float(declared) * (1.0 + 1e-12):
                raise InvalidConfig(f"reference violates {name} = {declared}: sampled maximum {sampled:.6g}")

    def packed(self) -> tuple:
        return (KINDS[self.kind], self.start, self.amplitude, float(self.base_frequency), float(self.axis_precession_rate), float(self.duration))

    def sampled_bounds(self, n: int = 4001) -> tuple[float, float]:
        packed = self.packed()
        v_max = a_max = 0.0
        for t in np.linspace(0.0, max(self.duration, 1e-9), n):
            _, v, a = kernels.reference(packed, t)
            v_max = max(v_max, float(np.linalg.norm(v)))
            a_max = max(a_max, float(np.linalg.norm(a)))
        return v_max, a_max


def generate_reference(spec: TrajectorySpec, t: float) -> Reference:
    if t < 0.0 or t > spec.duration * (1.0 + 1e-12) + 1e-12:
        raise InvalidConfig(f"time {t} outside [0, {spec.duration}]")
    return Reference(*kernels.reference(spec.packed(), float(t)))


@dataclass(frozen=True)
class NoiseSpec:
    twist_noise_std: np.ndarray = field(default_factory=lambda: np.zeros(6))
    seed: int = 0

    def __post_init__(self):
        std = np.broadcast_to(np.asarray(self.twist_noise_std, dtype=float), (6,)).copy()
        if np.any(std < 0.0) or not np.all(np.isfinite(std)):
            raise InvalidConfig("noise standard deviations must be finite and non-negative")
        object.__setattr__(self, "twist_noise_std", std)

    @property
    def active(self) -> bool:
        return bool(np.any(self.twist_noise_std > 0.0))


def synthesize_twists(
    model: InterconnectedModel,
    x,
    xdot,
    theta_true: KinematicParams,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[Twist, Twist]:
    """End-effector twists implied by the object state; noise is added independently to each."""
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    x1 = model.lambda_matrix @ x + model.x1_offset
    x1d = model.lambda_matrix @ xdot
    _, _, l1_inv, status = kernels.task_maps(x1, x1d, 1 if model.orientation == "euler_xyz" else 0)
    if status != kernels.OK:
        raise SingularL("Euler-rate map at gimbal lock")
    t1 = Twist.from_vector(l1_inv @ x1d)
    t2 = transform_twist(theta_true, t1)
    if noise is not None and noise.active:
        rng = rng if rng is not None else np.random.default_rng(noise.seed)
        t1 = Twist.from_vector(t1.as_vector() + rng.normal(size=6) * noise.twist_noise_std)
        t2 = Twist.from_vector(t2.as_vector() + rng.normal(size=6) * noise.twist_noise_std)
    return t1, t2


@dataclass(frozen=True)
class EstimatorSettings:
    mu_attitude: float = 0.9
    mu_displacement: float = 0.9
    p0: float = 100.0
    window: int = 1000
    pe_threshold: float = 1e-3
    sample_interval: float | None = None
    degenerate_tol: float = DEGENERATE_TOL

    def __post_init__(self):
        for name in ("mu_attitude", "mu_displacement"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not self.p0 > 0.0:
            raise InvalidConfig("initial covariance scale must be positive")
        if self.window < 1 or self.pe_threshold <= 0.0:
            raise InvalidConfig("PE window must be positive and the threshold positive")
        if self.sample_interval is not None and not self.sample_interval > 0.0:
            raise InvalidConfig("estimator sample interval must be positive")
        if not self.degenerate_tol > 0.0:
            raise InvalidConfig("degenerate-spectrum tolerance must be positive")


@dataclass(frozen=True)
class SimConfig:
    model: InterconnectedModel
    theta_true: KinematicParams
    theta_initial_guess: KinematicParams
    gains: Gains
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
    dt: float = 1e-3
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    adaptation_enabled: bool = True
    initial_error: np.ndarray = field(default_factory=lambda: np.zeros(6))
    initial_rate_error: np.ndarray = field(default_factory=lambda: np.zeros(6))
    arm2_position: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.0, 0.0]))
    control_decimation: int = 1

    def __post_init__(self):
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise InvalidConfig(f"dt must be positive, got {self.dt}")
        if self.trajectory.duration / self.dt > MAX_STEPS:
            raise InvalidConfig("duration / dt exceeds 1e7 steps")
        if self.control_decimation < 1:
            raise InvalidConfig("control decimation must be a positive integer")
        object.__setattr__(self, "initial_error", _vec6(self.initial_error, "initial error"))
        object.__setattr__(self, "initial_rate_error", _vec6(self.initial_rate_error, "initial rate error"))
        a = np.asarray(self.arm2_position, dtype=float).reshape(-1)
        if a.shape != (3,):
            raise InvalidConfig("arm2 position must have 3 entries")
        object.__setattr__(self, "arm2_position", a)

    @property
    def steps(self) -> int:
        return int(round(self.trajectory.duration / self.dt))


def _names(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


LOG_HEADER = (
    ["t"]
    + _names("x", 6)
    + _names("xd", 6)
    + _names("e", 6)
    + _names("edot", 6)
    + _names("etah", 4)
    + _names("rhoh", 3)
    + ["theta_err", "u1_norm", "u2_norm", "pe_lambda_min", "V", "g_norm", "pe_flag", "degen_flag"]
)
TWIST_HEADER = ["t", "v1x", "v1y", "v1z", "w1x", "w1y", "w1z", "v2x", "v2y", "v2z", "w2x", "w2y", "w2z"]
_COL = {name: i for i, name in enumerate(LOG_HEADER)}


@dataclass
class SimLog:
    """Per-step records in the run-log column order, plus the measured twists."""

    data: np.ndarray
    twists: np.ndarray
    halt_reason: str | None = None

    def column(self, name: str) -> np.ndarray:
        return self.data[:, _COL[name]]

    def block(self, prefix: str, n: int) -> np.ndarray:
        i = _COL[f"{prefix}0"]
        return self.data[:, i : i + n]

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def x(self) -> np.ndarray:
        return self.block("x", 6)

    @property
    def e(self) -> np.ndarray:
        return self.block("e", 6)

    @property
    def edot(self) -> np.ndarray:
        return self.block("edot", 6)

    @property
    def z(self) -> np.ndarray:
        return np.hstack((self.e, self.edot))

    @property
    def z_norm(self) -> np.ndarray:
        return np.linalg.norm(self.z, axis=1)

    @property
    def eta_hat(self) -> np.ndarray:
        return self.block("etah", 4)

    @property
    def rho_hat(self) -> np.ndarray:
        return self.block("rhoh", 3)

    @property
    def theta_err(self) -> np.ndarray:
        return self.column("theta_err")

    def final_theta_hat(self) -> KinematicParams:
        return KinematicParams(self.rho_hat[-1], UnitQuaternion.from_array(self.eta_hat[-1]))

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass
class SimState:
    k: int
    y: np.ndarray
    theta_hat: KinematicParams
    attitude: AttitudeEstimatorState
    displacement: DisplacementEstimatorState
    window: PeWindow
    u1_hold: np.ndarray = field(default_factory=lambda: np.zeros(6))
    u2_hold: np.ndarray = field(default_factory=lambda: np.zeros(6))


class Simulator:
    """Holds the packed, immutable parts of a run; ``step`` advances a SimState."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.model = config.model.packed()
        self.orient = kernels.ORIENT_EULER if config.model.orientation == "euler_xyz" else kernels.ORIENT_IDENTITY
        self.t_true = velocity_transform(config.theta_true)
        self.rho_true = config.theta_true.rho
        self.q_true = config.theta_true.eta.as_array()
        self.gains = (config.gains.gp, config.gains.gd)
        self.g_stacked = config.gains.stacked
        self.ref = config.trajectory.packed()
        self.p = solve_lyapunov(config.gains.closed_loop())
        self.rng = np.random.default_rng(config.noise.seed)
        self.noise_std = config.noise.twist_noise_std if config.noise.active else None
        self.h = config.estimator.sample_interval or config.dt

    def initial_state(self) -> SimState:
        c = self.config
        xd, vd, _ = kernels.reference(self.ref, 0.0)
        x0 = xd + c.initial_error
        x2 = initial_arm2_pose(c.model, x0, c.arm2_position, c.theta_true)
        y = np.concatenate((x0, vd + c.initial_rate_error, x2))
        est = c.estimator
        guess = c.theta_initial_guess
        return SimState(
            k=0,
            y=y,
            theta_hat=guess,
            attitude=attitude_init(guess.eta, est.mu_attitude, self.h),
            displacement=displacement_init(guess.rho, est.p0 * np.eye(3), est.mu_displacement, self.h),
            window=PeWindow(est.window, est.pe_threshold),
        )

    def measure(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``[v1; w1]`` and ``[v2; w2]`` at plant state ``y``."""
        x, xdot = y[:6], y[6:12]
        lam = self.config.model.lambda_matrix
        x1 = lam @ x + self.config.model.x1_offset
        x1d = lam @ xdot
        _, _, l1_inv, status = kernels.task_maps(x1, x1d, self.orient)
        if status != kernels.OK:
            raise SingularL("Euler-rate map at gimbal lock")
        t1 = l1_inv @ x1d
        t2 = self.t_true @ t1
        if self.noise_std is not None:
            t1 = t1 + self.rng.normal(size=6) * self.noise_std
            t2 = t2 + self.rng.normal(size=6) * self.noise_std
        return t1, t2

    def step(self, state: SimState) -> tuple[SimState, np.ndarray, np.ndarray, str | None]:
        """Measure, update estimates, evaluate the command and integrate one step.

        Returns the next state, the log row for ``state.k``, the twist row and
        a halt message (None unless the integration hit the Euler
        singularity).  At the final index nothing is integrated.
        """
        c = self.config
        t = state.k * c.dt
        y = state.y
        t1, t2 = self.measure(y)
        attitude, displacement, theta_hat = state.attitude, state.displacement, state.theta_hat
        window = state.window
        window.push(t1[3:])
        if c.adaptation_enabled:
            attitude = attitude_update(attitude, t1[3:], t2[3:], c.estimator.degenerate_tol)
            displacement = displacement_update(displacement, attitude.eta_hat, t1[:3], t2[:3], t1[3:])
            theta_hat = KinematicParams(displacement.rho_hat, attitude.eta_hat)
        _, pe_lambda = pe_check(window)

        q = theta_hat.eta.as_array()
        t_hat = kernels.velocity_transform(theta_hat.rho, q)
        q_hat = kernels.q_matrix(theta_hat.rho)
        last = state.k >= c.steps
        continuous = c.control_decimation == 1
        u1_hold, u2_hold = state.u1_hold, state.u2_hold
        if not continuous and state.k % c.control_decimation == 0:
            _dy, _ub, u1_hold, u2_hold, _xdd, hold_status = kernels.rhs(
                t, y, self.model, self.t_true, t_hat, q_hat, self.gains, self.ref, u1_hold, u2_hold, True
            )
            if hold_status != kernels.OK:
                raise SingularL("Euler-rate map at gimbal lock")
        if last:
            _dy, _ub, u1, u2, xdd, status = kernels.rhs(
                t, y, self.model, self.t_true, t_hat, q_hat, self.gains, self.ref, u1_hold, u2_hold, continuous
            )
            y_new = y
        else:
            y_new, _ub, u1, u2, xdd, status = kernels.rk4_step(
                t, y, c.dt, self.model, self.t_true, t_hat, q_hat, self.gains, self.ref, u1_hold, u2_hold, continuous
            )
        xd, vd, ad = kernels.reference(self.ref, t)
        e = y[:6] - xd
        edot = y[6:12] - vd
        z = np.concatenate((e, edot))
        g = xdd - ad + self.g_stacked @ z
        row = np.concatenate(
            (
                [t],
                y[:6],
                xd,
                e,
                edot,
                q,
                theta_hat.rho,
                [
                    kernels.param_error_norm(self.rho_true, self.q_true, theta_hat.rho, q),
                    math.sqrt(float(u1 @ u1)),
                    math.sqrt(float(u2 @ u2)),
                    pe_lambda,
                    math.sqrt(max(float(z @ self.p @ z), 0.0)),
                    math.sqrt(float(g @ g)),
                    1.0 if pe_lambda > window.threshold else 0.0,
                    1.0 if (c.adaptation_enabled and attitude.degenerate) else 0.0,
                ],
            )
        )
        twist_row = np.concatenate(([t], t1, t2))
        halt = None if status == kernels.OK else f"Euler-rate map at gimbal lock within step from t = {t:.6f}"
        new_state = SimState(state.k if last else state.k + 1, y_new, theta_hat, attitude, displacement, window, u1_hold, u2_hold)
        return new_state, row, twist_row, halt

    def run(self) -> SimLog:
        n = self.config.steps + 1
        data = np.empty((n, len(LOG_HEADER)))
        twists = np.empty((n, len(TWIST_HEADER)))
        state = self.initial_state()
        halt = None
        filled = 0
        for k in range(n):
            try:
                state, row, twist_row, halt = self.step(state)
            except SingularL as exc:
                halt = f"{exc} at t = {k * self.config.dt:.6f}"
                break
            data[k] = row
            twists[k] = twist_row
            filled = k + 1
            if halt:
                break
        return SimLog(data[:filled].copy() if halt else data, twists[:filled].copy() if halt else twists, halt)


def step(state: SimState, simulator: Simulator) -> SimState:
    """One loop iteration; raises SingularL instead of returning a halt message."""
    new_state, _row, _twist, halt = simulator.step(state)
    if halt:
        raise SingularL(halt)
    return new_state


def run(config: SimConfig) -> SimLog:
    """Deterministic closed-loop run; a SingularL halt is reported in ``halt_reason``."""
    return Simulator(config).run()
