"""Lyapunov margins for the tracking error under parameter-estimation error.

With ``zdot = F z + g`` and ``||g|| <= (k0 + k1 |z| + k2 |z|^2) |theta_tilde|``,
``V = sqrt(z^T P z)`` (``P F + F^T P = -I``) obeys
``Vdot <= -sigma V + b / sqrt(lambda_min) |theta_tilde|`` inside ``|z| <= r_z``.
The constants entering ``k0, k1, k2`` are sampled over an operating region
and a parameter ball; they are estimates, not certified bounds.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .control import Gains
from .dynamics import InterconnectedModel, initial_arm2_pose
from .errors import InfeasibleBounds, InvalidConfig, NonPositiveSigma, NotHurwitz
from .rigidmotion import KinematicParams, UnitQuaternion, param_error_norm, velocity_transform

HURWITZ_MARGIN = 1e-9


def solve_lyapunov(f) -> np.ndarray:
    """Symmetric ``P > 0`` with ``P F + F^T P = -I``."""
    f = np.atleast_2d(np.asarray(f, dtype=float))
    if f.shape[0] != f.shape[1]:
        raise InvalidConfig("Lyapunov matrix must be square")
    abscissa = float(np.max(np.linalg.eigvals(f).real))
    if abscissa >= -HURWITZ_MARGIN:
        raise NotHurwitz(f"spectral abscissa {abscissa:.3e} is not negative")
    p = scipy.linalg.solve_continuous_lyapunov(f.T, -np.eye(f.shape[0]))
    return 0.5 * (p + p.T)


def lyapunov_value(z, p) -> float:
    z = np.asarray(z, dtype=float)
    return math.sqrt(max(float(z @ p @ z), 0.0))


# ---------------------------------------------------------------------------
# sampled constants


@dataclass(frozen=True)
class BoundConstants:
    c_m: float
    c_M: float
    c_g: float
    c_h: float
    c_v: float
    c_a: float
    cbar_m: float
    cbar_M: float
    cbar_g: float
    cbar_h: float
    c_n: float
    c_t: float
    c_d: float
    c_lambda: float
    c_l: float
    eps_t: float
    eps_d: float

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0.0):
                raise InvalidConfig(f"bound constant {k} must be finite and non-negative, got {v}")
        if self.c_m <= 0.0 or self.cbar_m <= 0.0:
            raise InvalidConfig("mass-matrix lower bounds must be positive")
        if self.c_m > self.c_M or self.cbar_m > self.cbar_M:
            raise InvalidConfig("lower mass bound exceeds upper bound")


@dataclass(frozen=True)
class OperatingRegion:
    """Box of object poses, box of arm-2 positions and a ball of object velocities."""

    pose_center: np.ndarray = field(default_factory=lambda: np.zeros(6))
    pose_halfwidth: np.ndarray = field(default_factory=lambda: np.full(6, 0.3))
    arm2_position: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.0, 0.0]))
    arm2_halfwidth: float = 0.3
    speed: float = 1.0

    def __post_init__(self):
        for name, shape in (("pose_center", (6,)), ("pose_halfwidth", (6,)), ("arm2_position", (3,))):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != shape:
                raise InvalidConfig(f"{name} must have shape {shape}")
            object.__setattr__(self, name, a)
        if np.any(self.pose_halfwidth < 0.0) or self.arm2_halfwidth < 0.0 or self.speed < 0.0:
            raise InvalidConfig("operating-region extents must be non-negative")


def sample_params(theta: KinematicParams, radius: float, rng: np.random.Generator) -> KinematicParams:
    """Uniform draw from the ball ``|param_error(theta', theta)| <= radius``."""
    d = rng.normal(size=6)
    d *= radius * rng.uniform() ** (1.0 / 6.0) / np.linalg.norm(d)
    dv = d[3:]
    nv = float(np.linalg.norm(dv))
    if nv > 1.0:
        dv = dv / nv
        nv = 1.0
    dq = UnitQuaternion(dv, math.sqrt(1.0 - nv * nv))
    return KinematicParams(theta.rho + d[:3], dq * theta.eta)


def _sigma_extremes(m: np.ndarray) -> tuple[float, float]:
    s = np.linalg.svd(m, compute_uv=False)
    return float(s[-1]), float(s[0])


def estimate_constants(
    model: InterconnectedModel,
    theta_nominal: KinematicParams,
    radius: float,
    ref_bounds: tuple[float, float],
    samples: int = 2000,
    region: OperatingRegion | None = None,
    rng: np.random.Generator | None = None,
) -> BoundConstants:
    """Sampled estimates of every constant in the growth bound of ``g``.

    Configurations come from ``region`` with the chain closed at
    ``theta_nominal``; estimates ``theta_hat`` come from the ball of the given
    radius around it.  ``h`` bounds are affine envelopes in ``|xdot|^2``:
    ``c_g`` is the largest zero-velocity norm and ``c_h`` the largest excess
    per unit ``|xdot|^2``.
    """
    if not (radius > 0.0 and np.isfinite(radius)):
        raise InvalidConfig(f"parameter-ball radius must be positive, got {radius}")
    if samples < 1000:
        raise InvalidConfig("at least 1000 samples are required")
    region = region or OperatingRegion()
    rng = rng or np.random.default_rng(0)
    c_v, c_a = (float(v) for v in ref_bounds)
    packed = model.packed()
    lam = model.lambda_matrix
    t_nom = velocity_transform(theta_nominal)

    c_m, c_M = math.inf, 0.0
    cbar_m, cbar_M = math.inf, 0.0
    c_n = c_t = c_d = c_l = eps_t = eps_d = 0.0
    h_zero, hbar_zero = 0.0, 0.0
    records = []

    for _ in range(samples):
        x = region.pose_center + rng.uniform(-1.0, 1.0, 6) * region.pose_halfwidth
        direction = rng.normal(size=6)
        speed = region.speed * rng.uniform() ** (1.0 / 6.0)
        xdot = speed * direction / np.linalg.norm(direction)
        x2 = initial_arm2_pose(model, x, region.arm2_position + rng.uniform(-1.0, 1.0, 3) * region.arm2_halfwidth, theta_nominal)
        x1, x1d, x2d, l1, l1d, l1i, l2, l2d, status = kernels.chain(packed, x, xdot, x2, t_nom)
        if status != kernels.OK:
            continue
        m1, m2, h1, h2, mo, ho = kernels.terms(packed, x, xdot, x1, x1d, x2, x2d)
        for m in (m1, m2):
            ev = np.linalg.eigvalsh(0.5 * (m + m.T))
            c_m = min(c_m, float(ev[0]))
            c_M = max(c_M, float(ev[-1]))
        theta_a = sample_params(theta_nominal, radius, rng)
        theta_b = sample_params(theta_nominal, radius, rng)
        t_a = velocity_transform(theta_a)
        t_b = velocity_transform(theta_b)
        d_nom = kernels.d_matrix(l1i, l1d, l2, l2d, t_nom)
        mb, hb, d_a = kernels.assemble(lam, t_a, xdot, l1i, l1d, l2, l2d, m1, m2, h1, h2, mo, ho)
        d_b = kernels.d_matrix(l1i, l1d, l2, l2d, t_b)
        smin, smax = _sigma_extremes(mb)
        cbar_m = min(cbar_m, smin)
        cbar_M = max(cbar_M, smax)
        q_inv = np.linalg.inv(kernels.q_matrix(theta_a.rho))
        c_n = max(c_n, float(np.linalg.norm(np.vstack((q_inv, t_a @ q_inv)), 2)))
        c_t = max(c_t, float(np.linalg.norm(t_a, 2)), float(np.linalg.norm(t_nom, 2)))
        c_d = max(c_d, float(np.linalg.norm(d_a, 2)), float(np.linalg.norm(d_nom, 2)))
        c_l = max(c_l, float(np.linalg.norm(l2, 2) * np.linalg.norm(l1i, 2)))
        for ta, da, pa, tb, db, pb in ((t_nom, d_nom, theta_nominal, t_a, d_a, theta_a), (t_a, d_a, theta_a, t_b, d_b, theta_b)):
            dist = param_error_norm(pa, pb)
            if dist > 1e-12:
                eps_t = max(eps_t, float(np.linalg.norm(ta - tb, 2)) / dist)
                eps_d = max(eps_d, float(np.linalg.norm(da - db, 2)) / dist)
        s2 = float(xdot @ xdot)
        h_norm = max(float(np.linalg.norm(h1)), float(np.linalg.norm(h2)), float(np.linalg.norm(ho)))
        records.append((s2, h_norm, float(np.linalg.norm(hb))))
        # zero-velocity bias at the same configuration anchors the affine envelope
        zero = np.zeros(6)
        x1z, x1dz, x2dz = kernels.chain(packed, x, zero, x2, t_nom)[:3]
        z1, z2, zh1, zh2, zmo, zho = kernels.terms(packed, x, zero, x1z, x1dz, x2, x2dz)
        h_zero = max(h_zero, float(np.linalg.norm(zh1)), float(np.linalg.norm(zh2)), float(np.linalg.norm(zho)))
        _mbz, hbz, _dz = kernels.assemble(lam, t_a, zero, l1i, np.zeros((6, 6)), l2, np.zeros((6, 6)), z1, z2, zh1, zh2, zmo, zho)
        hbar_zero = max(hbar_zero, float(np.linalg.norm(hbz)))

    if not records:
        raise InvalidConfig("operating region lies entirely in the Euler singularity")
    rec = np.array(records)
    moving = rec[:, 0] > 1e-12
    c_h = float(np.max(np.maximum(rec[moving, 1] - h_zero, 0.0) / rec[moving, 0])) if np.any(moving) else 0.0
    cbar_h = float(np.max(np.maximum(rec[moving, 2] - hbar_zero, 0.0) / rec[moving, 0])) if np.any(moving) else 0.0
    return BoundConstants(
        c_m=c_m,
        c_M=c_M,
        c_g=h_zero,
        c_h=c_h,
        c_v=c_v,
        c_a=c_a,
        cbar_m=cbar_m,
        cbar_M=cbar_M,
        cbar_g=hbar_zero,
        cbar_h=cbar_h,
        c_n=c_n,
        c_t=c_t,
        c_d=c_d,
        c_lambda=float(np.linalg.norm(lam, 2)),
        c_l=c_l,
        eps_t=eps_t,
        eps_d=eps_d,
    )


def kappa_bounds(c: BoundConstants, gain_norm: float) -> tuple[float, float, float]:
    """Coefficients of ``|g| <= (k0 + k1 |z| + k2 |z|^2) |theta_tilde|``."""
    et, ed = c.eps_t, c.eps_d
    share = c.c_n + 2.0 * c.c_l * c.c_lambda * c.c_t
    k0 = (
        et * c.c_M * c.c_a * share
        + et * c.c_g
        + et * c.c_h * c.c_v
        + (et + ed) * c.c_M * c.c_d * c.c_lambda * c.c_v
        + et * c.c_n * c.cbar_g
    ) / c.c_m
    k1 = (et * c.c_M * share * gain_norm + (et + ed) * c.c_M * c.c_d * c.c_lambda + et * c.c_n * c.cbar_h * c.c_v) / c.c_m
    k2 = (c.c_h + c.c_n * c.cbar_h) * et / c.c_m
    return k0, k1, k2


# ---------------------------------------------------------------------------
# report and envelope


@dataclass(frozen=True)
class StabilityReport:
    p_matrix: np.ndarray
    lambda_min: float
    lambda_max: float
    gamma: float
    kappa0: float
    kappa1: float
    kappa2: float
    sigma: float
    b: float
    r_z: float
    r_theta: float
    r_theta_bound: float
    sigma_bound: float
    admissible: bool
    sigma_positive: bool
    alpha: float = 1.0
    r_z_fallback: bool = False

    def summary(self) -> dict:
        """Scalar fields plus the condition number of ``P``; suitable for JSON."""
        out = {k: v for k, v in asdict(self).items() if k != "p_matrix"}
        out["p_condition"] = self.gamma
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in out.items()}

    def to_text(self) -> str:
        return "".join(f"{k}: {v!r}\n" for k, v in self.summary().items())


def stability_report(
    gains: Gains,
    kappas: tuple[float, float, float],
    r_theta_initial: float,
    alpha: float = 1.0,
    r_z: float | None = None,
) -> StabilityReport:
    """Margins for the given gains and growth coefficients.

    ``r_theta = alpha * r_theta_initial`` is the assumed bound on the
    parameter error.  ``r_z`` defaults to ``k0 / k2``; when ``k2 = 0`` the
    caller must supply it, otherwise InfeasibleBounds is raised.
    """
    if alpha <= 0.0 or r_theta_initial < 0.0:
        raise InvalidConfig("alpha must be positive and the initial parameter error non-negative")
    k0, k1, k2 = (float(k) for k in kappas)
    p = solve_lyapunov(gains.closed_loop())
    ev = np.linalg.eigvalsh(p)
    lmin, lmax = float(ev[0]), float(ev[-1])
    gamma = lmax / lmin
    fallback = False
    if k2 > 0.0:
        rz = k0 / k2
        bound = 1.0 / (2.0 * lmax * (k1 + gamma * (k0 + k2)))
    else:
        if r_z is None:
            raise InfeasibleBounds("kappa2 = 0 leaves r_z undefined; supply r_z explicitly")
        rz = float(r_z)
        fallback = True
        denom = lmax * lmax * k0 + lmax * lmin * k1 * rz
        bound = math.inf if denom == 0.0 else 0.5 * lmin * rz / denom
    r_theta = alpha * r_theta_initial
    sigma = 1.0 / (2.0 * lmax) - k1 * r_theta
    b = lmax * (k2 * rz * rz + k0)
    sigma_bound = math.inf if k1 == 0.0 else 1.0 / (2.0 * k1 * lmax)
    return StabilityReport(
        p_matrix=p,
        lambda_min=lmin,
        lambda_max=lmax,
        gamma=gamma,
        kappa0=k0,
        kappa1=k1,
        kappa2=k2,
        sigma=sigma,
        b=b,
        r_z=rz,
        r_theta=r_theta,
        r_theta_bound=bound,
        sigma_bound=sigma_bound,
        admissible=bool(r_theta <= bound),
        sigma_positive=bool(sigma > 0.0),
        alpha=alpha,
        r_z_fallback=fallback,
    )


@dataclass(frozen=True)
class Envelope:
    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


def ultimate_bound_envelope(z0_norm: float, report: StabilityReport, times, theta_trace) -> Envelope:
    """``sqrt(gamma) |z0| e^{-sigma t} + (b / lambda_min) int_0^t e^{-sigma (t - s)} |theta_tilde(s)| ds``.

    The convolution is integrated with the trapezoidal rule on the sample grid
    of ``theta_trace``.
    """
    if report.sigma <= 0.0:
        raise NonPositiveSigma(f"sigma = {report.sigma:.3e} is not positive")
    t = np.asarray(times, dtype=float)
    th = np.asarray(theta_trace, dtype=float)
    if t.shape != th.shape or t.ndim != 1 or t.size == 0:
        raise InvalidConfig("times and theta trace must be equal-length 1-D arrays")
    sigma = report.sigma
    conv = np.zeros_like(t)
    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        decay = math.exp(-sigma * dt)
        conv[k] = decay * conv[k - 1] + 0.5 * dt * (decay * th[k - 1] + th[k])
    values = math.sqrt(report.gamma) * z0_norm * np.exp(-sigma * (t - t[0])) + (report.b / report.lambda_min) * conv
    return Envelope(t, values)
