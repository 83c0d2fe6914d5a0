import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cooptune.control import Gains
from cooptune.errors import InfeasibleBounds, InvalidConfig, NonPositiveSigma, NotHurwitz
from cooptune.rigidmotion import param_error_norm
from cooptune.stability import (
    BoundConstants,
    OperatingRegion,
    estimate_constants,
    kappa_bounds,
    lyapunov_value,
    sample_params,
    solve_lyapunov,
    stability_report,
    ultimate_bound_envelope,
)

CONSTS = BoundConstants(
    c_m=1.0, c_M=5.0, c_g=30.0, c_h=2.0, c_v=0.5, c_a=1.0, cbar_m=2.0, cbar_M=12.0, cbar_g=80.0, cbar_h=6.0,
    c_n=0.7, c_t=1.5, c_d=0.4, c_lambda=1.0, c_l=1.2, eps_t=1.3, eps_d=0.9,
)


def kron_lyapunov(f):
    n = f.shape[0]
    big = np.kron(np.eye(n), f.T) + np.kron(f.T, np.eye(n))
    return np.linalg.solve(big, -np.eye(n).reshape(-1)).reshape(n, n)


def test_lyapunov_scalar_closed_form():
    # p f + f p = -1  ->  p = -1 / (2 f)
    np.testing.assert_allclose(solve_lyapunov([[-2.0]]), [[0.25]])


def test_lyapunov_against_kronecker(gains):
    f = gains.closed_loop()
    p = solve_lyapunov(f)
    np.testing.assert_allclose(p, kron_lyapunov(f), atol=1e-10)
    np.testing.assert_allclose(p @ f + f.T @ p, -np.eye(12), atol=1e-10)
    assert np.linalg.eigvalsh(p)[0] > 0.0
    with pytest.raises(NotHurwitz):
        solve_lyapunov(np.eye(3))


def test_lyapunov_value():
    assert lyapunov_value([3.0, 4.0], np.eye(2)) == pytest.approx(5.0)


def test_bound_constants_validation():
    with pytest.raises(InvalidConfig):
        replace(CONSTS, c_m=0.0)
    with pytest.raises(InvalidConfig):
        replace(CONSTS, c_m=10.0)
    with pytest.raises(InvalidConfig):
        replace(CONSTS, eps_t=-1.0)


def test_kappa_bounds_formulas():
    c = CONSTS
    g = 3.0
    share = c.c_n + 2 * c.c_l * c.c_lambda * c.c_t
    k0 = (c.eps_t * c.c_M * c.c_a * share + c.eps_t * c.c_g + c.eps_t * c.c_h * c.c_v
          + (c.eps_t + c.eps_d) * c.c_M * c.c_d * c.c_lambda * c.c_v + c.eps_t * c.c_n * c.cbar_g) / c.c_m
    k1 = (c.eps_t * c.c_M * share * g + (c.eps_t + c.eps_d) * c.c_M * c.c_d * c.c_lambda
          + c.eps_t * c.c_n * c.cbar_h * c.c_v) / c.c_m
    k2 = (c.c_h + c.c_n * c.cbar_h) * c.eps_t / c.c_m
    np.testing.assert_allclose(kappa_bounds(c, g), (k0, k1, k2), rtol=1e-14)
    assert kappa_bounds(replace(c, eps_t=0.0, eps_d=0.0), g) == (0.0, 0.0, 0.0)


def test_report_closed_forms(gains):
    kappas = (2.0, 3.0, 0.5)
    rep = stability_report(gains, kappas, 1e-4, alpha=2.0)
    p = solve_lyapunov(gains.closed_loop())
    ev = np.linalg.eigvalsh(p)
    lmin, lmax = ev[0], ev[-1]
    assert rep.lambda_min == pytest.approx(lmin) and rep.gamma == pytest.approx(lmax / lmin)
    assert rep.r_z == pytest.approx(4.0)
    assert rep.r_theta == pytest.approx(2e-4)
    # general bound lmin r_z / (2 lmax (lmax k0 + lmin k1 r_z + lmax k2 r_z^2)) evaluated at r_z = k0/k2
    k0, k1, k2 = kappas
    rz = k0 / k2
    general = lmin * rz / (2 * lmax * (lmax * k0 + lmin * k1 * rz + lmax * k2 * rz * rz))
    assert rep.r_theta_bound == pytest.approx(general, rel=1e-12)
    assert rep.r_theta_bound == pytest.approx(1.0 / (2 * lmax * (k1 + rep.gamma * (k0 + k2))), rel=1e-12)
    assert rep.sigma == pytest.approx(1.0 / (2 * lmax) - k1 * 2e-4)
    assert rep.b == pytest.approx(lmax * (k2 * rz**2 + k0))
    assert rep.admissible == (rep.r_theta <= rep.r_theta_bound)
    text = rep.to_text()
    assert "kappa0: " in text and "admissible: " in text


def test_report_admissibility_flips(gains):
    rep = stability_report(gains, (2.0, 3.0, 0.5), 1e-6)
    assert rep.admissible and rep.sigma_positive
    assert not stability_report(gains, (2.0, 3.0, 0.5), 10.0).admissible


def test_report_kappa2_zero(gains):
    with pytest.raises(InfeasibleBounds):
        stability_report(gains, (1.0, 1.0, 0.0), 1e-3)
    rep = stability_report(gains, (1.0, 1.0, 0.0), 1e-3, r_z=2.0)
    assert rep.r_z_fallback and rep.r_z == 2.0
    with pytest.raises(InvalidConfig):
        stability_report(gains, (1.0, 1.0, 1.0), 1e-3, alpha=0.0)


@given(st.floats(0.0, 0.5), st.floats(0.0, 2.0))
def test_envelope_constant_parameter_error(theta_c, z0):
    gains = Gains.diagonal(25.0, 10.0)
    rep = stability_report(gains, (2.0, 3.0, 0.5), 1e-6)
    t = np.linspace(0.0, 5.0, 2001)
    env = ultimate_bound_envelope(z0, rep, t, np.full_like(t, theta_c))
    s = rep.sigma
    exact = math.sqrt(rep.gamma) * z0 * np.exp(-s * t) + rep.b / rep.lambda_min * theta_c * (1.0 - np.exp(-s * t)) / s
    # trapezoid convolution: relative error O((sigma dt)^2), well under 1e-6 on this grid
    np.testing.assert_allclose(env.values, exact, rtol=1e-6, atol=1e-12)
    assert env(2.5) == pytest.approx(np.interp(2.5, t, exact), rel=1e-6, abs=1e-12)


def test_envelope_rejects_nonpositive_sigma(gains):
    rep = stability_report(gains, (2.0, 1e6, 0.5), 1.0)
    assert not rep.sigma_positive
    with pytest.raises(NonPositiveSigma):
        ultimate_bound_envelope(1.0, rep, [0.0, 1.0], [0.0, 0.0])


@given(st.floats(1e-6, 0.5), st.integers(0, 2**32 - 1))
def test_sample_params_in_ball(theta_true, radius, seed):
    th = sample_params(theta_true, radius, np.random.default_rng(seed))
    assert param_error_norm(th, theta_true) <= radius * (1 + 1e-9)


def test_estimate_constants(model, theta_true):
    with pytest.raises(InvalidConfig):
        estimate_constants(model, theta_true, 0.05, (0.5, 1.0), samples=999)
    with pytest.raises(InvalidConfig):
        estimate_constants(model, theta_true, 0.0, (0.5, 1.0))
    region = OperatingRegion(speed=0.5)
    c = estimate_constants(model, theta_true, 0.05, (0.5, 1.0), samples=1000, region=region)
    # sampled extremes stay inside the declared arm bounds
    lo = min(model.arm1.c_m, model.arm2.c_m)
    hi = max(model.arm1.c_M, model.arm2.c_M)
    assert lo - 1e-12 <= c.c_m <= c.c_M <= hi + 1e-12
    assert c.c_n <= 1.0 + 1e-12  # singular values of N^+ never exceed 1
    assert c.c_lambda == pytest.approx(1.0)
    assert c.eps_t > 0.0 and c.eps_d > 0.0
    again = estimate_constants(model, theta_true, 0.05, (0.5, 1.0), samples=1000, region=region)
    assert again == c
