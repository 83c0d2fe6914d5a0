"""Cascaded online estimators for the relative grasp pose.

The attitude estimator accumulates the 4x4 data matrix ``Gamma`` from pairs of
angular velocities and takes its dominant eigenvector as the quaternion
estimate.  The displacement estimator is a forgetting-factor recursive
least-squares filter on the linear velocities, run with the current attitude
estimate.  Measurement pairs follow the package convention
``w1 = A w2`` and ``v1 = A v2 - rho x w1`` (see :mod:`cooptune.rigidmotion`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import InvalidConfig, NotSymmetric
from .rigidmotion import UnitQuaternion, canonical_sign, omega_matrix, rotation_from_quaternion, skew

COND_LIMIT = 1e12
DEGENERATE_TOL = 1e-9
_EYE3 = np.eye(3)


def forgetting_factor(mu: float, h: float) -> float:
    if h <= 0.0:
        raise InvalidConfig(f"sample interval must be positive, got {h}")
    if not 0.0 <= mu < 1.0:
        raise InvalidConfig(f"forgetting rate must lie in [0, 1), got {mu}")
    return math.exp(-mu * h)


# ---------------------------------------------------------------------------
# symmetric eigen-solver


@njit(cache=True)
def _jacobi(a: np.ndarray, v: np.ndarray, max_sweeps: int) -> None:
    """In-place cyclic Jacobi on symmetric ``a``; rotations accumulate into the columns of ``v``."""
    n = a.shape[0]
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    fro = math.sqrt(fro)
    if fro == 0.0:
        return
    tol = 1e-17 * fro
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if math.sqrt(off) <= tol:
            return
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                tau = (aqq - app) / (2.0 * apq)
                t = 1.0 / (abs(tau) + math.sqrt(1.0 + tau * tau))
                if tau < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    if r != p and r != q:
                        arp = a[r, p]
                        arq = a[r, q]
                        nrp = c * arp - s * arq
                        nrq = s * arp + c * arq
                        a[r, p] = nrp
                        a[p, r] = nrp
                        a[r, q] = nrq
                        a[q, r] = nrq
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq


@njit(cache=True)
def _eigen_desc(m: np.ndarray, basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    work = basis.T @ m @ basis
    work = 0.5 * (work + work.T)
    v = basis.copy()
    _jacobi(work, v, 50)
    vals = np.diag(work).copy()
    order = np.argsort(-vals)
    return vals[order], v[:, order]


def symmetric_eigen(m: np.ndarray, basis: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of a small symmetric matrix by cyclic Jacobi sweeps.

    ``basis`` is an optional orthonormal warm start (e.g. the previous
    eigenvectors); the matrix is first rotated into it so that only a few
    sweeps remain. Eigenvalues are returned in descending order with the
    eigenvectors as columns.
    """
    m = np.ascontiguousarray(m, dtype=float)
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise NotSymmetric("matrix is not symmetric within 1e-10")
    if basis is None:
        basis = np.eye(m.shape[0])
    return _eigen_desc(m, np.ascontiguousarray(basis, dtype=float))


def max_eigenpair(m: np.ndarray) -> tuple[float, np.ndarray]:
    """Algebraically largest eigenvalue and a unit eigenvector."""
    vals, vecs = symmetric_eigen(m)
    vec = vecs[:, 0]
    return float(vals[0]), vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# attitude


@dataclass(frozen=True)
class AttitudeEstimatorState:
    gamma: np.ndarray
    eta_hat: UnitQuaternion
    lambda_max: float
    varrho: float
    step_index: int = 0
    degenerate: bool = False
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(4), repr=False)
    basis: np.ndarray = field(default_factory=lambda: np.eye(4), repr=False, compare=False)


def attitude_init(eta0: UnitQuaternion, mu: float, h: float) -> AttitudeEstimatorState:
    """Start from ``Gamma_0 = eta0 eta0^T`` whose top eigenpair is ``(1, eta0)``."""
    varrho = forgetting_factor(mu, h)
    q = eta0.as_array()
    gamma = np.outer(q, q)
    vals, vecs = symmetric_eigen(gamma)
    return AttitudeEstimatorState(
        gamma=gamma,
        eta_hat=eta0,
        lambda_max=1.0,
        varrho=varrho,
        eigenvalues=vals,
        basis=vecs,
    )


@njit(cache=True)
def _attitude_step(gamma, varrho, w1, w2, basis):
    # Gamma <- varrho Gamma + Omega(w1, w2), then all eigenpairs warm-started from basis
    a0, a1, a2 = w1[0], w1[1], w1[2]
    b0, b1, b2 = w2[0], w2[1], w2[2]
    d = a0 * b0 + a1 * b1 + a2 * b2
    om = np.empty((4, 4))
    om[0, 0] = 2.0 * a0 * b0 - d
    om[1, 1] = 2.0 * a1 * b1 - d
    om[2, 2] = 2.0 * a2 * b2 - d
    om[3, 3] = d
    om[0, 1] = om[1, 0] = a0 * b1 + a1 * b0
    om[0, 2] = om[2, 0] = a0 * b2 + a2 * b0
    om[1, 2] = om[2, 1] = a1 * b2 + a2 * b1
    om[0, 3] = om[3, 0] = b1 * a2 - b2 * a1
    om[1, 3] = om[3, 1] = b2 * a0 - b0 * a2
    om[2, 3] = om[3, 2] = b0 * a1 - b1 * a0
    g = varrho * gamma + om
    vals, vecs = _eigen_desc(g, basis)
    return g, vals, vecs


def attitude_update(state: AttitudeEstimatorState, w1, w2, degenerate_tol: float = DEGENERATE_TOL) -> AttitudeEstimatorState:
    """Fold one angular-velocity pair into ``Gamma`` and re-solve its top eigenpair.

    ``degenerate`` is set when the two largest eigenvalues are closer than
    ``degenerate_tol * max(1, lambda_max)``: the data collected so far do not
    pin down the rotation.
    """
    basis = state.basis
    if state.step_index % 256 == 255:
        # warm-start basis drifts by roundoff over many updates
        basis, _ = np.linalg.qr(basis)
    gamma, vals, vecs = _attitude_step(
        state.gamma, state.varrho, np.asarray(w1, dtype=float), np.asarray(w2, dtype=float), np.ascontiguousarray(basis)
    )
    q = vecs[:, 0]
    q = canonical_sign(q / math.sqrt(float(q @ q)))
    lam = float(vals[0])
    degenerate = bool(vals[0] - vals[1] <= degenerate_tol * max(1.0, abs(lam)))
    return AttitudeEstimatorState(
        gamma=gamma,
        eta_hat=UnitQuaternion.from_array(q),
        lambda_max=lam,
        varrho=state.varrho,
        step_index=state.step_index + 1,
        degenerate=degenerate,
        eigenvalues=vals,
        basis=vecs,
    )


# ---------------------------------------------------------------------------
# displacement and generic forgetting RLS


def _require_spd(p: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise InvalidConfig(f"{what} must be square")
    if np.max(np.abs(p - p.T)) > 1e-12 * max(1.0, float(np.max(np.abs(p)))):
        raise InvalidConfig(f"{what} must be symmetric")
    if np.linalg.eigvalsh(p)[0] <= 0.0:
        raise InvalidConfig(f"{what} must be positive definite")
    return p


def _cond_spd(s: np.ndarray, varrho: float) -> float:
    # s = varrho*I + W P W^T has lambda_min >= varrho; trace/varrho bounds the
    # condition number, the exact value is only computed when that bound is large
    bound = float(np.trace(s)) / varrho
    if bound <= COND_LIMIT:
        return bound
    ev = np.linalg.eigvalsh(s)
    return float(ev[-1] / ev[0]) if ev[0] > 0.0 else math.inf


@dataclass(frozen=True)
class DisplacementEstimatorState:
    rho_hat: np.ndarray
    p_matrix: np.ndarray
    varrho: float
    skipped: bool = False


def displacement_init(rho0, p0, mu: float, h: float) -> DisplacementEstimatorState:
    p0 = _require_spd(p0, "initial covariance")
    return DisplacementEstimatorState(np.asarray(rho0, dtype=float).reshape(3).copy(), p0.copy(), forgetting_factor(mu, h))


@njit(cache=True)
def _displacement_step(rho, p, varrho, a, v1, v2, w1):
    wx = np.zeros((3, 3))
    wx[0, 1] = -w1[2]
    wx[0, 2] = w1[1]
    wx[1, 0] = w1[2]
    wx[1, 2] = -w1[0]
    wx[2, 0] = -w1[1]
    wx[2, 1] = w1[0]
    pw = p @ wx
    s = varrho * np.eye(3) - wx @ pw
    bound = (s[0, 0] + s[1, 1] + s[2, 2]) / varrho
    k = -pw @ np.linalg.inv(s)
    innovation = v1 - a @ v2 - wx @ rho
    rho_new = rho + k @ innovation
    p_new = (np.eye(3) - k @ wx) @ p / varrho
    return rho_new, 0.5 * (p_new + p_new.T), s, bound


def displacement_update(state: DisplacementEstimatorState, eta_hat: UnitQuaternion, v1, v2, w1) -> DisplacementEstimatorState:
    """One forgetting RLS step for ``rho``.

    Gain ``K = -P [w1x] (varrho I - [w1x] P [w1x])^-1``, estimate
    ``rho += K (v1 - A(eta_hat) v2 - w1 x rho)`` and covariance
    ``P = (I - K [w1x]) P / varrho``.  When the inverted matrix has a
    condition number above 1e12 the sample is skipped and ``skipped`` is set.
    """
    rho, p_new, s, bound = _displacement_step(
        state.rho_hat,
        state.p_matrix,
        state.varrho,
        rotation_from_quaternion(eta_hat),
        np.asarray(v1, dtype=float),
        np.asarray(v2, dtype=float),
        np.asarray(w1, dtype=float),
    )
    # s = varrho I + W P W^T has lambda_min >= varrho, so trace / varrho bounds its condition number
    if bound > COND_LIMIT and _cond_spd(s, state.varrho) > COND_LIMIT:
        return replace(state, skipped=True)
    return DisplacementEstimatorState(rho, p_new, state.varrho)


@dataclass(frozen=True)
class RlsState:
    a_hat: np.ndarray
    p_matrix: np.ndarray
    skipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "a_hat", np.asarray(self.a_hat, dtype=float).reshape(-1))
        object.__setattr__(self, "p_matrix", _require_spd(self.p_matrix, "covariance"))
        if self.p_matrix.shape[0] != self.a_hat.shape[0]:
            raise InvalidConfig("covariance and parameter dimensions differ")


def rls_update(state: RlsState, w, y, varrho: float) -> RlsState:
    """Generic forgetting-factor RLS: ``K = P W^T (varrho I + W P W^T)^-1``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    p = state.p_matrix
    if w.shape != (y.shape[0], p.shape[0]):
        raise InvalidConfig(f"regressor shape {w.shape} does not match y {y.shape} and P {p.shape}")
    s = varrho * np.eye(y.shape[0]) + w @ p @ w.T
    if _cond_spd(s, varrho) > COND_LIMIT:
        return replace(state, skipped=True)
    k = p @ w.T @ np.linalg.inv(s)
    a_hat = state.a_hat + k @ (y - w @ state.a_hat)
    p_new = (np.eye(p.shape[0]) - k @ w) @ p / varrho
    p_new = 0.5 * (p_new + p_new.T)
    return RlsState(a_hat, p_new)


# ---------------------------------------------------------------------------
# persistent excitation


class PeWindow:
    """Ring buffer of the last ``capacity`` angular-velocity samples."""

    def __init__(self, capacity: int, threshold: float):
        if capacity < 1:
            raise InvalidConfig("PE window capacity must be a positive integer")
        if threshold <= 0.0:
            raise InvalidConfig("PE threshold must be positive")
        self.capacity = int(capacity)
        self.threshold = float(threshold)
        self._buf = np.zeros((self.capacity, 3))
        self._count = 0
        self._next = 0

    def __len__(self) -> int:
        return self._count

    def push(self, w) -> None:
        self._buf[self._next] = w
        self._next = (self._next + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)

    @property
    def samples(self) -> np.ndarray:
        if self._count < self.capacity:
            return self._buf[: self._count].copy()
        return np.roll(self._buf, -self._next, axis=0)


@njit(cache=True)
def _pe_matrix(w):
    pi = np.zeros((3, 3))
    for r in range(w.shape[0]):
        a, b, c = w[r, 0], w[r, 1], w[r, 2]
        pi[0, 0] += b * b + c * c
        pi[1, 1] += a * a + c * c
        pi[2, 2] += a * a + b * b
        pi[0, 1] -= a * b
        pi[0, 2] -= a * c
        pi[1, 2] -= b * c
    pi[1, 0] = pi[0, 1]
    pi[2, 0] = pi[0, 2]
    pi[2, 1] = pi[1, 2]
    vals, _ = _eigen_desc(pi, np.eye(3))
    return pi, vals[2]


def pe_check(window: PeWindow) -> tuple[np.ndarray, float]:
    """``Pi = sum -[w x]^2`` over the window and its smallest eigenvalue."""
    if len(window) == 0:
        raise InvalidConfig("PE window is empty")
    pi, lam = _pe_matrix(window._buf[: window._count])
    return pi, float(lam)


def pe_satisfied(window: PeWindow) -> bool:
    return pe_check(window)[1] > window.threshold


def pe_windows(omegas: np.ndarray, window: int) -> tuple[np.ndarray, bool]:
    """Smallest eigenvalue of ``Pi`` over consecutive non-overlapping windows.

    Only full windows are scored; a record shorter than one window yields a
    single truncated window.  The second value reports that truncation.
    """
    omegas = np.ascontiguousarray(np.asarray(omegas, dtype=float).reshape(-1, 3))
    if window < 1:
        raise InvalidConfig("PE window must be a positive integer")
    if omegas.shape[0] == 0:
        raise InvalidConfig("no angular-velocity samples")
    if omegas.shape[0] < window:
        return np.array([_pe_matrix(omegas)[1]]), True
    n_full = omegas.shape[0] // window
    return np.array([_pe_matrix(omegas[i * window : (i + 1) * window])[1] for i in range(n_full)]), False


def twist_residuals(eta: UnitQuaternion, rho: np.ndarray, v1, w1, v2, w2) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample residuals ``w1 - A w2`` and ``v1 - A v2 + rho x w1`` (rows)."""
    a = rotation_from_quaternion(eta)
    e_w = np.asarray(w1) - np.asarray(w2) @ a.T
    e_v = np.asarray(v1) - np.asarray(v2) @ a.T + np.cross(np.asarray(rho), np.asarray(w1))
    return e_w, e_v


@dataclass(frozen=True)
class CalibrationResult:
    eta_hat: UnitQuaternion
    rho_hat: np.ndarray
    residual_rms_w: float
    residual_rms_v: float
    pe_lambdas: np.ndarray
    pe_truncated: bool
    pe_ok: bool
    degenerate: bool
    skipped: int


def calibrate_offline(
    twists: np.ndarray,
    eta0: UnitQuaternion,
    rho0,
    mu_attitude: float,
    mu_displacement: float,
    p0: float,
    h: float,
    window: int,
    threshold: float,
    degenerate_tol: float = DEGENERATE_TOL,
) -> CalibrationResult:
    """Run both estimators over a twist log with columns ``[t, v1, w1, v2, w2]``."""
    twists = np.asarray(twists, dtype=float)
    if twists.ndim != 2 or twists.shape[1] != 13 or twists.shape[0] == 0:
        raise InvalidConfig("twist log must have rows of 13 values")
    v1, w1, v2, w2 = twists[:, 1:4], twists[:, 4:7], twists[:, 7:10], twists[:, 10:13]
    att = attitude_init(eta0, mu_attitude, h)
    disp = displacement_init(rho0, p0 * np.eye(3), mu_displacement, h)
    skipped = 0
    for k in range(twists.shape[0]):
        att = attitude_update(att, w1[k], w2[k], degenerate_tol)
        disp = displacement_update(disp, att.eta_hat, v1[k], v2[k], w1[k])
        skipped += int(disp.skipped)
    e_w, e_v = twist_residuals(att.eta_hat, disp.rho_hat, v1, w1, v2, w2)
    lambdas, truncated = pe_windows(w1, window)
    return CalibrationResult(
        eta_hat=att.eta_hat,
        rho_hat=disp.rho_hat,
        residual_rms_w=float(np.sqrt(np.mean(np.sum(e_w * e_w, axis=1)))),
        residual_rms_v=float(np.sqrt(np.mean(np.sum(e_v * e_v, axis=1)))),
        pe_lambdas=lambdas,
        pe_truncated=truncated,
        pe_ok=bool(np.all(lambdas > threshold)),
        degenerate=att.degenerate,
        skipped=skipped,
    )
