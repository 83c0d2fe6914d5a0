"""Self-tuning inverse-dynamics control with minimum-norm force sharing.

The required net generalized force is
``ubar = Mhat (xddot_d - Gd edot - Gp e) + hhat`` with the model evaluated at
the current parameter estimate.  It is split between the arms by the
generalized inverse of ``N(theta_hat)``: ``u1 = Qhat^-1 ubar``, ``u2 = That u1``.
Since ``Q = I + T^T T`` has every eigenvalue at least 1 the split exists for
any estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import ChainState, InterconnectedModel, ModelTerms, combined_dynamics, model_terms, n_pseudoinverse
from .errors import InvalidConfig, NotHurwitz
from .rigidmotion import KinematicParams, velocity_transform

HURWITZ_MARGIN = 1e-9


def closed_loop_matrix(gp, gd) -> np.ndarray:
    """``F = [[0, I], [-Gp, -Gd]]``; raises NotHurwitz unless every eigenvalue has real part < -1e-9."""
    gp = np.asarray(gp, dtype=float)
    gd = np.asarray(gd, dtype=float)
    n = gp.shape[0]
    f = np.zeros((2 * n, 2 * n))
    f[:n, n:] = np.eye(n)
    f[n:, :n] = -gp
    f[n:, n:] = -gd
    abscissa = float(np.max(np.linalg.eigvals(f).real))
    if abscissa >= -HURWITZ_MARGIN:
        raise NotHurwitz(f"closed-loop spectral abscissa {abscissa:.3e} is not negative")
    return f


@dataclass(frozen=True)
class Gains:
    """PD feedback gains; checked for symmetry, a Hurwitz error matrix and positive definiteness."""

    gp: np.ndarray
    gd: np.ndarray

    def __post_init__(self):
        for name in ("gp", "gd"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (6, 6) or not np.all(np.isfinite(m)):
                raise InvalidConfig(f"{name} must be a finite 6x6 matrix")
            if np.max(np.abs(m - m.T)) > 1e-12 * max(1.0, float(np.max(np.abs(m)))):
                raise InvalidConfig(f"{name} must be symmetric")
            object.__setattr__(self, name, np.ascontiguousarray(m))
        closed_loop_matrix(self.gp, self.gd)
        for name in ("gp", "gd"):
            if np.linalg.eigvalsh(getattr(self, name))[0] <= 0.0:
                raise InvalidConfig(f"{name} must be positive definite")

    @classmethod
    def diagonal(cls, kp, kd) -> Gains:
        return cls(np.diag(np.broadcast_to(np.asarray(kp, dtype=float), (6,))), np.diag(np.broadcast_to(np.asarray(kd, dtype=float), (6,))))

    @property
    def stacked(self) -> np.ndarray:
        """``G = [Gp, Gd]`` (6x12)."""
        return np.hstack((self.gp, self.gd))

    def closed_loop(self) -> np.ndarray:
        return closed_loop_matrix(self.gp, self.gd)


@dataclass(frozen=True)
class TrackingError:
    e: np.ndarray
    edot: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.concatenate((self.e, self.edot))


@dataclass(frozen=True)
class Reference:
    x: np.ndarray
    xdot: np.ndarray
    xddot: np.ndarray


@dataclass(frozen=True)
class ControlCommand:
    u1: np.ndarray
    u2: np.ndarray
    u_bar: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate((self.u1, self.u2))


def tracking_error(chain: ChainState, ref: Reference) -> TrackingError:
    return TrackingError(chain.x - ref.x, chain.xdot - ref.xdot)


def control_law(
    chain: ChainState,
    ref: Reference,
    theta_hat: KinematicParams,
    gains: Gains,
    model: InterconnectedModel,
    terms: ModelTerms | None = None,
) -> ControlCommand:
    mhat, hhat = combined_dynamics(model, chain, theta_hat, terms)
    that = velocity_transform(theta_hat)
    qhat = kernels.q_matrix(theta_hat.rho)
    ubar, u1, u2 = kernels.control(
        (gains.gp, gains.gd), mhat, hhat, that, qhat, chain.x, chain.xdot,
        np.asarray(ref.x, dtype=float), np.asarray(ref.xdot, dtype=float), np.asarray(ref.xddot, dtype=float),
    )
    return ControlCommand(u1, u2, ubar)


def perturbation_term(
    chain: ChainState,
    ref: Reference,
    theta: KinematicParams,
    theta_hat: KinematicParams,
    gains: Gains,
    model: InterconnectedModel,
) -> np.ndarray:
    """``g(z, t)`` of ``zdot = F z + g``: zeros on top,
    ``Mbar^-1 ((Ntil Mhat - Mtil)(xddot_d - G z) - htil + Ntil hhat)`` below,
    with ``Ntil = N Nhat^+ - I`` and the tilde quantities taken as true minus estimated.
    """
    terms = model_terms(model, chain)
    mbar, hbar = combined_dynamics(model, chain, theta, terms)
    mhat, hhat = combined_dynamics(model, chain, theta_hat, terms)
    n_true = np.hstack((np.eye(6), velocity_transform(theta).T))
    n_til = n_true @ n_pseudoinverse(theta_hat) - np.eye(6)
    z = tracking_error(chain, ref).z
    v = np.asarray(ref.xddot, dtype=float) - gains.stacked @ z
    g = np.zeros(12)
    g[6:] = np.linalg.solve(mbar, (n_til @ mhat - (mbar - mhat)) @ v - (hbar - hhat) + n_til @ hhat)
    return g
