"""Compiled numerical kernels shared by the public API and the simulator.

Every formula evaluated inside the closed loop lives here once: Euler-rate
maps, ``T``, ``D``, the reduced-order model assembly, the reference generator,
the control law and the fixed-step RK4 step.  Functions return integer status
codes instead of raising; the Python wrappers translate them.

Packed argument layouts
-----------------------
arm    : (m0, bmod, eps, kvec, g0, g1, quad)   quad is (6, 6, 6)
obj    : (mass, gravity, quad)
model  : (arm1, arm2, obj, lam, x1_offset, orient)   orient 1 = XYZ Euler, 0 = identity
ref    : (kind, start, amp, freq, precess, duration) kind 0 rotating, 1 fixed, 2 rest-to-rest
gains  : (gp, gd)
state y: [x (6), xdot (6), x2 (6)]
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
SINGULAR_L = 1
SINGULAR_M = 2

ORIENT_IDENTITY = 0
ORIENT_EULER = 1

_SING_COS = math.sin(1e-3)


# Small dense helpers.  Explicit loops beat BLAS dispatch at these sizes.


@njit(cache=True)
def mm(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.zeros((n, p))
    for i in range(n):
        for k in range(m):
            aik = a[i, k]
            if aik != 0.0:
                for j in range(p):
                    out[i, j] += aik * b[k, j]
    return out


@njit(cache=True)
def mv(a, x):
    n, m = a.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(m):
            acc += a[i, k] * x[k]
        out[i] = acc
    return out


@njit(cache=True)
def mtv(a, x):
    """``a.T @ x``."""
    n, m = a.shape
    out = np.zeros(m)
    for k in range(n):
        xk = x[k]
        for i in range(m):
            out[i] += a[k, i] * xk
    return out


@njit(cache=True)
def dot(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        acc += a[i] * b[i]
    return acc


@njit(cache=True)
def solve(a, b):
    """Gaussian elimination with partial pivoting; returns (x, ok)."""
    n = a.shape[0]
    m = a.copy()
    x = b.copy()
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(m[i, j]))
    for c in range(n):
        piv = c
        best = abs(m[c, c])
        for r in range(c + 1, n):
            if abs(m[r, c]) > best:
                best = abs(m[r, c])
                piv = r
        if best <= 1e-300 or best <= 1e-15 * scale:
            return x, False
        if piv != c:
            for j in range(n):
                tmp = m[c, j]
                m[c, j] = m[piv, j]
                m[piv, j] = tmp
            tmp = x[c]
            x[c] = x[piv]
            x[piv] = tmp
        for r in range(c + 1, n):
            f = m[r, c] / m[c, c]
            if f != 0.0:
                for j in range(c, n):
                    m[r, j] -= f * m[c, j]
                x[r] -= f * x[c]
    for c in range(n - 1, -1, -1):
        acc = x[c]
        for j in range(c + 1, n):
            acc -= m[c, j] * x[j]
        x[c] = acc / m[c, c]
    return x, True


@njit(cache=True)
def skew3(w):
    out = np.zeros((3, 3))
    out[0, 1] = -w[2]
    out[0, 2] = w[1]
    out[1, 0] = w[2]
    out[1, 2] = -w[0]
    out[2, 0] = -w[1]
    out[2, 1] = w[0]
    return out


@njit(cache=True)
def rot(q):
    x, y, z, s = q[0], q[1], q[2], q[3]
    d = 2.0 * s * s - 1.0
    a = np.empty((3, 3))
    a[0, 0] = d + 2.0 * x * x
    a[0, 1] = 2.0 * (x * y - s * z)
    a[0, 2] = 2.0 * (x * z + s * y)
    a[1, 0] = 2.0 * (x * y + s * z)
    a[1, 1] = d + 2.0 * y * y
    a[1, 2] = 2.0 * (y * z - s * x)
    a[2, 0] = 2.0 * (x * z - s * y)
    a[2, 1] = 2.0 * (y * z + s * x)
    a[2, 2] = d + 2.0 * z * z
    return a


@njit(cache=True)
def velocity_transform(rho, q):
    at = rot(q).T.copy()
    t = np.zeros((6, 6))
    t[:3, :3] = at
    t[:3, 3:] = mm(at, skew3(rho))
    t[3:, 3:] = at
    return t


@njit(cache=True)
def param_error_norm(rho, q, rho_hat, q_hat):
    """Norm of ``[rho - rho_hat; vec(q * conj(q_hat))]`` (sign of the error quaternion is irrelevant)."""
    x1, y1, z1, s1 = q[0], q[1], q[2], q[3]
    x2, y2, z2, s2 = -q_hat[0], -q_hat[1], -q_hat[2], q_hat[3]
    vx = s1 * x2 + s2 * x1 + y1 * z2 - z1 * y2
    vy = s1 * y2 + s2 * y1 + z1 * x2 - x1 * z2
    vz = s1 * z2 + s2 * z1 + x1 * y2 - y1 * x2
    acc = vx * vx + vy * vy + vz * vz
    for i in range(3):
        d = rho[i] - rho_hat[i]
        acc += d * d
    return math.sqrt(acc)


@njit(cache=True)
def euler_maps(e, rate):
    """(L_o, L_o_dot, L_o^-1, status) for intrinsic XYZ angles, body-frame rates."""
    b = e[1]
    c = e[2]
    cb = math.cos(b)
    lo = np.zeros((3, 3))
    lod = np.zeros((3, 3))
    loi = np.zeros((3, 3))
    if abs(cb) < _SING_COS:
        return lo, lod, loi, SINGULAR_L
    sb = math.sin(b)
    cc = math.cos(c)
    sc = math.sin(c)
    tb = sb / cb
    sec2 = 1.0 / (cb * cb)
    db = rate[1]
    dc = rate[2]
    lo[0, 0] = cc / cb
    lo[0, 1] = -sc / cb
    lo[1, 0] = sc
    lo[1, 1] = cc
    lo[2, 0] = -tb * cc
    lo[2, 1] = tb * sc
    lo[2, 2] = 1.0
    lod[0, 0] = -sc * dc / cb + cc * sb * db * sec2
    lod[0, 1] = -cc * dc / cb - sc * sb * db * sec2
    lod[1, 0] = cc * dc
    lod[1, 1] = -sc * dc
    lod[2, 0] = -sec2 * cc * db + tb * sc * dc
    lod[2, 1] = sec2 * sc * db + tb * cc * dc
    loi[0, 0] = cb * cc
    loi[0, 1] = sc
    loi[1, 0] = -cb * sc
    loi[1, 1] = cc
    loi[2, 0] = sb
    loi[2, 2] = 1.0
    return lo, lod, loi, OK


@njit(cache=True)
def task_maps(pose, rate, orient):
    """6x6 (L, L_dot, L^-1, status) with L = diag(I, L_o)."""
    big = np.eye(6)
    big_dot = np.zeros((6, 6))
    big_inv = np.eye(6)
    if orient == 0:
        return big, big_dot, big_inv, OK
    lo, lod, loi, status = euler_maps(pose[3:], rate[3:])
    big[3:, 3:] = lo
    big_dot[3:, 3:] = lod
    big_inv[3:, 3:] = loi
    return big, big_dot, big_inv, status


@njit(cache=True)
def quad_form(quad, v):
    out = np.empty(6)
    for k in range(6):
        out[k] = dot(v, mv(quad[k], v))
    return out


@njit(cache=True)
def arm_mass(arm, x):
    m0, bmod, eps, kvec = arm[0], arm[1], arm[2], arm[3]
    return m0 + (eps * 0.5 * (1.0 + math.sin(dot(kvec, x)))) * bmod


@njit(cache=True)
def arm_bias(arm, x, xdot):
    kvec, g0, g1, quad = arm[3], arm[4], arm[5], arm[6]
    return g0 + math.cos(dot(kvec, x)) * g1 + quad_form(quad, xdot)


@njit(cache=True)
def object_bias(obj, xdot):
    return obj[1] + quad_form(obj[2], xdot)


@njit(cache=True)
def chain(model, x, xdot, x2, t_true):
    """Arm task coordinates and rate maps; x2dot follows the true closed-chain map."""
    lam, off, orient = model[3], model[4], model[5]
    x1 = mv(lam, x) + off
    x1d = mv(lam, xdot)
    l1, l1d, l1i, s1 = task_maps(x1, x1d, orient)
    l2, _unused, _unused2, s2 = task_maps(x2, np.zeros(6), orient)
    status = OK
    if s1 != OK or s2 != OK:
        status = SINGULAR_L
    x2d = mv(l2, mv(t_true, mv(l1i, x1d)))
    _l2, l2d, _l2i, _s = task_maps(x2, x2d, orient)
    return x1, x1d, x2d, l1, l1d, l1i, l2, l2d, status


@njit(cache=True)
def terms(model, x, xdot, x1, x1d, x2, x2d):
    arm1, arm2, obj = model[0], model[1], model[2]
    m1 = arm_mass(arm1, x1)
    m2 = arm_mass(arm2, x2)
    h1 = arm_bias(arm1, x1, x1d)
    h2 = arm_bias(arm2, x2, x2d)
    return m1, m2, h1, h2, obj[0], object_bias(obj, xdot)


@njit(cache=True)
def d_matrix(l1i, l1d, l2, l2d, t):
    # time derivative of L2 T L1^-1 at constant T
    return mm(mm(l2d, t) - mm(mm(l2, t), mm(l1i, l1d)), l1i)


@njit(cache=True)
def assemble(lam, t, xdot, l1i, l1d, l2, l2d, m1, m2, h1, h2, mo, ho):
    """Reduced-order ``(Mbar, hbar, D)`` of the object plus both arms at a given T."""
    d = d_matrix(l1i, l1d, l2, l2d, t)
    tt = t.T.copy()
    mbar = mo + mm(m1 + mm(mm(tt, m2), mm(mm(l2, t), l1i)), lam)
    hbar = ho + h1 + mv(tt, h2 + mv(m2, mv(d, mv(lam, xdot))))
    return mbar, hbar, d


@njit(cache=True)
def q_matrix(rho):
    s = skew3(rho)
    q = np.zeros((6, 6))
    for i in range(3):
        q[i, i] = 2.0
        q[3 + i, 3 + i] = 2.0
    q[:3, 3:] = s
    q[3:, :3] = -s
    q[3:, 3:] -= mm(s, s)
    return q


@njit(cache=True)
def reference(ref, t):
    kind, start, amp, freq, precess, duration = ref
    xd = start.copy()
    v = np.zeros(6)
    a = np.zeros(6)
    if kind == 2:
        if duration <= 0.0:
            return xd, v, a
        tau = min(max(t / duration, 0.0), 1.0)
        p = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)
        dp = 30.0 * tau * tau * (1.0 - tau) ** 2 / duration
        ddp = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau) / (duration * duration)
        if t >= duration:
            dp = 0.0
            ddp = 0.0
        for k in range(6):
            xd[k] += amp[k] * p
            v[k] = amp[k] * dp
            a[k] = amp[k] * ddp
        return xd, v, a
    w = 2.0 * math.pi * freq
    s = 1.0 - math.cos(w * t)
    ds = w * math.sin(w * t)
    dds = w * w * math.cos(w * t)
    for k in range(3):
        xd[k] += amp[k] * s
        v[k] = amp[k] * ds
        a[k] = amp[k] * dds
    if kind == 1:
        for k in range(3, 6):
            xd[k] += amp[k] * s
            v[k] = amp[k] * ds
            a[k] = amp[k] * dds
        return xd, v, a
    cp = math.cos(precess * t)
    sp = math.sin(precess * t)
    dirs = np.array([cp, sp, 1.0])
    ddirs = np.array([-precess * sp, precess * cp, 0.0])
    dddirs = np.array([-precess * precess * cp, -precess * precess * sp, 0.0])
    for i in range(3):
        k = 3 + i
        xd[k] += amp[k] * s * dirs[i]
        v[k] = amp[k] * (ds * dirs[i] + s * ddirs[i])
        a[k] = amp[k] * (dds * dirs[i] + 2.0 * ds * ddirs[i] + s * dddirs[i])
    return xd, v, a


@njit(cache=True)
def control(gains, mhat, hhat, that, qhat, x, xdot, xd, vd, ad):
    """Inverse-dynamics law: ubar = Mhat (a_d - Gd edot - Gp e) + hhat, u1 = Qhat^-1 ubar, u2 = That u1."""
    gp, gd = gains
    e = x - xd
    edot = xdot - vd
    ubar = mv(mhat, ad - mv(gd, edot) - mv(gp, e)) + hhat
    u1, _ok = solve(qhat, ubar)
    u2 = mv(that, u1)
    return ubar, u1, u2


@njit(cache=True)
def rhs(t, y, model, t_true, t_hat, q_hat, gains, ref, u1_hold, u2_hold, continuous):
    """Closed-loop derivative. Returns (dy, ubar, u1, u2, xddot, status)."""
    x = y[:6]
    xdot = y[6:12]
    x2 = y[12:]
    x1, x1d, x2d, l1, l1d, l1i, l2, l2d, status = chain(model, x, xdot, x2, t_true)
    dy = np.zeros(18)
    z6 = np.zeros(6)
    if status != OK:
        return dy, z6, z6, z6, z6, status
    m1, m2, h1, h2, mo, ho = terms(model, x, xdot, x1, x1d, x2, x2d)
    lam = model[3]
    mbar, hbar, _d = assemble(lam, t_true, xdot, l1i, l1d, l2, l2d, m1, m2, h1, h2, mo, ho)
    if continuous:
        mhat, hhat, _dh = assemble(lam, t_hat, xdot, l1i, l1d, l2, l2d, m1, m2, h1, h2, mo, ho)
        xd, vd, ad = reference(ref, t)
        ubar, u1, u2 = control(gains, mhat, hhat, t_hat, q_hat, x, xdot, xd, vd, ad)
    else:
        u1 = u1_hold
        u2 = u2_hold
        ubar = u1 + mtv(t_hat, u2)
    xdd, ok = solve(mbar, u1 + mtv(t_true, u2) - hbar)
    if not ok:
        return dy, ubar, u1, u2, xdd, SINGULAR_M
    dy[:6] = xdot
    dy[6:12] = xdd
    dy[12:] = x2d
    return dy, ubar, u1, u2, xdd, OK


@njit(cache=True)
def rk4_step(t, y, dt, model, t_true, t_hat, q_hat, gains, ref, u1_hold, u2_hold, continuous):
    """Classical 4th-order step; also returns the first-stage (ubar, u1, u2, xddot)."""
    k1, ubar, u1, u2, xdd, s1 = rhs(t, y, model, t_true, t_hat, q_hat, gains, ref, u1_hold, u2_hold, continuous)
    if s1 != OK:
        return y, ubar, u1, u2, xdd, s1
    k2, _a, _b, _c, _d, s2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1, model, t_true, t_hat, q_hat, gains, ref, u1_hold, u2_hold, continuous)
    k3, _a, _b, _c, _d, s3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2, model, t_true, t_hat, q_hat, gains, ref, u1_hold, u2_hold, continuous)
    k4, _a, _b, _c, _d, s4 = rhs(t + dt, y + dt * k3, model, t_true, t_hat, q_hat, gains, ref, u1_hold, u2_hold, continuous)
    status = max(max(s2, s3), s4)
    y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y_new, ubar, u1, u2, xdd, status
