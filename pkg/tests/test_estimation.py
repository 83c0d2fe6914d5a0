import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cooptune.errors import InvalidConfig
from cooptune.estimation import (
    PeWindow,
    RlsState,
    attitude_init,
    attitude_update,
    calibrate_offline,
    displacement_init,
    displacement_update,
    forgetting_factor,
    max_eigenpair,
    pe_check,
    pe_satisfied,
    pe_windows,
    rls_update,
    symmetric_eigen,
    twist_residuals,
)
from cooptune.rigidmotion import (
    KinematicParams,
    Twist,
    UnitQuaternion,
    omega_matrix,
    param_error_norm,
    rotation_from_quaternion,
    skew,
    transform_twist,
)

THETA = KinematicParams([0.1, -0.2, 0.3], UnitQuaternion.from_axis_angle([1.0, 2.0, 3.0], np.pi / 6))


def rich_twists(n, rng, theta=THETA, h=1e-2):
    """Twist log rows [t, v1, w1, v2, w2] with a turning angular-velocity direction."""
    rows = np.empty((n, 13))
    for k in range(n):
        t = k * h
        w1 = np.array([math.cos(0.7 * t), math.sin(0.7 * t), 0.5]) * (1.0 + 0.3 * math.sin(2.0 * t))
        v1 = np.array([0.2 * math.sin(t), 0.1, -0.3 * math.cos(1.3 * t)])
        t2 = transform_twist(theta, Twist(v1, w1))
        rows[k] = np.concatenate(([t], v1, w1, t2.linear, t2.angular))
    return rows


def test_forgetting_factor():
    assert forgetting_factor(0.5, 0.01) == pytest.approx(math.exp(-0.005))
    assert forgetting_factor(0.0, 0.01) == 1.0
    for mu, h in ((-0.1, 0.01), (1.0, 0.01), (0.5, 0.0)):
        with pytest.raises(InvalidConfig):
            forgetting_factor(mu, h)


sym4 = arrays(np.float64, (4, 4), elements=st.floats(-5.0, 5.0)).map(lambda a: a + a.T)


@given(sym4)
def test_symmetric_eigen_against_numpy(m):
    vals, vecs = symmetric_eigen(m)
    ref = np.linalg.eigvalsh(m)[::-1]
    scale = 1.0 + np.abs(m).max()
    np.testing.assert_allclose(vals, ref, atol=1e-10 * scale)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(m @ vecs, vecs * vals, atol=1e-9 * scale)


def test_max_eigenpair():
    m = np.diag([1.0, 4.0, 2.0, 3.0])
    lam, v = max_eigenpair(m)
    assert lam == pytest.approx(4.0)
    assert abs(v[1]) == pytest.approx(1.0)


def test_attitude_init_top_pair():
    eta0 = UnitQuaternion.from_axis_angle([0, 1, 0], 0.4)
    s = attitude_init(eta0, 0.1, 1e-3)
    assert s.lambda_max == pytest.approx(1.0)
    np.testing.assert_allclose(s.gamma, np.outer(eta0.as_array(), eta0.as_array()))


def test_attitude_gamma_recursion_and_convergence():
    rng = np.random.default_rng(0)
    data = rich_twists(600, rng)
    # fast forgetting so the Gamma_0 prior has faded after 600 samples
    mu, h = 0.9, 0.1
    s = attitude_init(UnitQuaternion.identity(), mu, h)
    varrho = math.exp(-mu * h)
    explicit = s.gamma.copy()
    for row in data:
        s = attitude_update(s, row[4:7], row[10:13])
        explicit = varrho * explicit + omega_matrix(row[4:7], row[10:13])
    np.testing.assert_allclose(s.gamma, explicit, rtol=1e-12, atol=1e-12)
    assert param_error_norm(THETA, KinematicParams(THETA.rho, s.eta_hat)) < 1e-8
    assert s.eta_hat.s >= 0.0
    assert not s.degenerate
    # the estimate is the top eigenvector of Gamma
    lam, v = max_eigenpair(s.gamma)
    assert abs(abs(v @ s.eta_hat.as_array()) - 1.0) < 1e-12
    assert s.lambda_max == pytest.approx(lam, rel=1e-12)


def test_attitude_degenerate_on_fixed_axis():
    s = attitude_init(UnitQuaternion.identity(), 0.9, 1.0)
    axis = np.array([0.3, -0.2, 0.9])
    a = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    for k in range(400):
        w2 = axis * (1.0 + math.sin(0.05 * k))
        s = attitude_update(s, a @ w2, w2)
    assert s.degenerate


def test_displacement_converges_with_true_attitude():
    data = rich_twists(800, np.random.default_rng(1))
    s = displacement_init(np.zeros(3), 100.0 * np.eye(3), 0.9, 0.1)
    for row in data:
        s = displacement_update(s, THETA.eta, row[1:4], row[7:10], row[4:7])
    np.testing.assert_allclose(s.rho_hat, THETA.rho, atol=1e-10)
    np.testing.assert_allclose(s.p_matrix, s.p_matrix.T)
    assert np.linalg.eigvalsh(s.p_matrix)[0] > 0.0


def test_displacement_batch_oracle():
    # with no forgetting the recursion is batch least squares with a P0 prior
    rng = np.random.default_rng(2)
    p0, rho0 = 10.0, np.array([0.5, 0.5, -0.5])
    s = displacement_init(rho0, p0 * np.eye(3), 0.0, 1e-3)
    a_mat = np.eye(3) / p0
    rhs = rho0 / p0
    eta = THETA.eta
    for _ in range(60):
        w1 = rng.normal(size=3)
        v2 = rng.normal(size=3)
        v1 = rng.normal(size=3)
        s = displacement_update(s, eta, v1, v2, w1)
        wx = skew(w1)
        y = v1 - rotation_from_quaternion(eta) @ v2
        a_mat += wx.T @ wx
        rhs += wx.T @ y
    np.testing.assert_allclose(s.rho_hat, np.linalg.solve(a_mat, rhs), atol=1e-9)


def test_displacement_rejects_bad_covariance():
    with pytest.raises(InvalidConfig):
        displacement_init(np.zeros(3), -np.eye(3), 0.1, 1e-3)
    with pytest.raises(InvalidConfig):
        displacement_init(np.zeros(3), np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), 0.1, 1e-3)


def test_displacement_skips_ill_conditioned():
    s = displacement_init(np.zeros(3), 1e14 * np.eye(3), 0.0, 1e-3)
    out = displacement_update(s, UnitQuaternion.identity(), np.ones(3), np.zeros(3), np.array([1.0, 0.0, 0.0]))
    assert out.skipped
    np.testing.assert_array_equal(out.rho_hat, s.rho_hat)


def test_rls_matches_weighted_batch():
    rng = np.random.default_rng(3)
    varrho = 0.97
    a_true = np.array([1.0, -2.0, 0.5, 3.0])
    p0 = 1e3
    s = RlsState(np.zeros(4), p0 * np.eye(4))
    ws, ys = [], []
    for _ in range(80):
        w = rng.normal(size=(2, 4))
        y = w @ a_true + 0.01 * rng.normal(size=2)
        s = rls_update(s, w, y, varrho)
        ws.append(w)
        ys.append(y)
    n = len(ws)
    lhs = varrho**n * np.eye(4) / p0
    rhs = np.zeros(4)
    for k, (w, y) in enumerate(zip(ws, ys)):
        wt = varrho ** (n - 1 - k)
        lhs += wt * w.T @ w
        rhs += wt * w.T @ y
    np.testing.assert_allclose(s.a_hat, np.linalg.solve(lhs, rhs), atol=1e-8)


def test_rls_shape_check():
    s = RlsState(np.zeros(2), np.eye(2))
    with pytest.raises(InvalidConfig):
        rls_update(s, np.ones((1, 3)), [1.0], 1.0)


def test_pe_window_ring_buffer():
    w = PeWindow(3, 1e-3)
    for k in range(5):
        w.push([k, 0.0, 0.0])
    assert len(w) == 3
    np.testing.assert_array_equal(w.samples[:, 0], [2.0, 3.0, 4.0])
    with pytest.raises(InvalidConfig):
        PeWindow(0, 1e-3)
    with pytest.raises(InvalidConfig):
        PeWindow(5, 0.0)
    with pytest.raises(InvalidConfig):
        pe_check(PeWindow(5, 1e-3))


@given(arrays(np.float64, (20, 3), elements=st.floats(-3.0, 3.0)))
@settings(max_examples=50)
def test_pe_matrix_oracle(ws):
    win = PeWindow(20, 1e-3)
    for w in ws:
        win.push(w)
    pi, lam = pe_check(win)
    ref = sum(-skew(w) @ skew(w) for w in ws)
    np.testing.assert_allclose(pi, ref, atol=1e-9)
    assert lam == pytest.approx(np.linalg.eigvalsh(ref)[0], abs=1e-9)
    assert lam >= -1e-9


def test_pe_fixed_axis_fails():
    win = PeWindow(100, 1e-3)
    for k in range(100):
        win.push(np.array([0.0, 0.0, 1.0 + math.sin(k)]))
    assert not pe_satisfied(win)
    win2 = PeWindow(100, 1e-3)
    for row in rich_twists(100, None):
        win2.push(row[4:7])
    assert pe_satisfied(win2)


def test_pe_windows_counts_and_truncation():
    ws = rich_twists(250, None)[:, 4:7]
    lam, truncated = pe_windows(ws, 100)
    assert lam.shape == (2,) and not truncated
    lam, truncated = pe_windows(ws[:40], 100)
    assert lam.shape == (1,) and truncated
    with pytest.raises(InvalidConfig):
        pe_windows(np.zeros((0, 3)), 10)


def test_twist_residuals_vanish_on_truth():
    data = rich_twists(50, None)
    e_w, e_v = twist_residuals(THETA.eta, THETA.rho, data[:, 1:4], data[:, 4:7], data[:, 7:10], data[:, 10:13])
    assert np.abs(e_w).max() < 1e-14 and np.abs(e_v).max() < 1e-14


def test_calibrate_offline_recovers_theta():
    data = rich_twists(1500, None)
    res = calibrate_offline(data, UnitQuaternion.identity(), np.zeros(3), 0.9, 0.9, 100.0, 0.1, 500, 1e-3)
    assert param_error_norm(THETA, KinematicParams(res.rho_hat, res.eta_hat)) < 1e-7
    assert res.pe_ok and not res.degenerate
    assert res.residual_rms_v < 1e-7
    assert res.pe_lambdas.shape == (3,)


def test_calibrate_offline_rejects_bad_shape():
    with pytest.raises(InvalidConfig):
        calibrate_offline(np.zeros((5, 12)), UnitQuaternion.identity(), np.zeros(3), 0.5, 0.5, 1.0, 1e-2, 5, 1e-3)
