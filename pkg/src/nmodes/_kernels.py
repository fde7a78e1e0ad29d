"""Numba kernels for planar chain models and their compiled integrator.

Positions are complex numbers ``x + i z``.  ``kind`` selects the segment
kinematics: ``PCC`` (constant-curvature arc subtending ``q``) or ``RIGID``
(straight link rotated by ``q`` at its proximal joint).
"""

import cmath
import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

PCC, RIGID = 0, 1

def _series_table(terms=10):
    # I_k(x) = sum_m (i x)^m / (m! (m + k + 1)), split into even/odd m
    even = np.empty((3, terms))
    odd = np.empty((3, terms))
    for k in range(3):
        for j in range(terms):
            even[k, j] = (-1) ** j / (math.factorial(2 * j) * (2 * j + k + 1))
            odd[k, j] = (-1) ** j / (math.factorial(2 * j + 1) * (2 * j + k + 2))
    return even, odd


_EVEN, _ODD = _series_table()


@njit(cache=True)
def _horner(coef, y):
    acc = 0.0
    for j in range(coef.size - 1, -1, -1):
        acc = acc * y + coef[j]
    return acc


@njit(cache=True)
def _arc_moments(x):
    # int_0^1 u^k exp(i x u) du for k = 0, 1, 2; the series branch avoids 0/0
    if abs(x) < 1.0:
        y = x * x
        i0 = complex(_horner(_EVEN[0], y), x * _horner(_ODD[0], y))
        i1 = complex(_horner(_EVEN[1], y), x * _horner(_ODD[1], y))
        i2 = complex(_horner(_EVEN[2], y), x * _horner(_ODD[2], y))
        return i0, i1, i2
    e = complex(math.cos(x), math.sin(x))
    m = -1j / x  # 1 / (i x)
    i0 = (e - 1.0) * m
    i1 = (e - i0) * m
    i2 = (e - 2.0 * i1) * m
    return i0, i1, i2


@njit(cache=True)
def _local(kind, q, sigma, seg_len):
    """Segment-frame displacement at arc ``sigma`` and its q-derivatives."""
    if kind == RIGID:
        e = cmath.exp(1j * q)
        return sigma * e, 1j * sigma * e, -sigma * e
    r = sigma / seg_len
    i0, i1, i2 = _arc_moments(q * r)
    return sigma * i0, 1j * sigma * r * i1, -sigma * r * r * i2


@njit(cache=True)
def chain_eval(q, qd, kind, seg_len, sig, wts, gvec, kq, M, c, grad):
    """Fill ``M``, ``c`` and ``grad`` (= grad V) in place; return the raw potential."""
    n = q.size
    return _chain_eval(q, qd, kind, seg_len, sig, wts, gvec, kq, M, c, grad,
                       np.empty((10, n), np.complex128), np.empty((3, n)))


@njit(cache=True)
def _chain_eval(q, qd, kind, seg_len, sig, wts, gvec, kq, M, c, grad, cwork, rwork):
    # cwork (10, n) and rwork (3, n) are scratch, so the integrator can reuse them
    n = q.size
    G = sig.shape[1]
    R = cwork[0]
    p_start = cwork[1]
    p_end = cwork[2]
    rd1 = cwork[3]
    a_prev = cwork[4]
    beta = cwork[5]
    iS1s = cwork[6]
    A0s = cwork[7]
    A1s = cwork[8]
    rot = cwork[9]
    thd_seg = rwork[0]
    S0s = rwork[1]
    S2s = rwork[2]
    thd = 0.0
    P = 0j
    acc = 0j
    Rk = -1j + 0j
    for k in range(n):
        ek = complex(math.cos(q[k]), math.sin(q[k]))
        rot[k] = ek
        R[k] = Rk
        p_start[k] = P
        a_prev[k] = acc
        thd_seg[k] = thd
        if kind == RIGID:
            D = seg_len[k] * ek
            D1 = 1j * D
            D2 = -D
        else:
            D, D1, D2 = _local(kind, q[k], seg_len[k], seg_len[k])
        rd1[k] = Rk * D1
        P = P + Rk * D
        p_end[k] = P
        acc = acc + Rk * (-thd * thd * D + 2j * thd * D1 * qd[k] + D2 * qd[k] * qd[k])
        thd += qd[k]
        Rk = Rk * ek  # frame of the next segment

    # For a node p in segment k the Jacobian column of a proximal segment j < k
    # is i p + beta_j, so node sums reduce to a few moments per segment.
    for j in range(n):
        beta[j] = -1j * p_end[j] + rd1[j]
    for i in range(n):
        c[i] = 0.0
        grad[i] = 0.0
        for j in range(n):
            M[i, j] = 0.0
    V = 0.0
    gc = np.conj(gvec)
    for k in range(n):
        Rk = R[k]
        ek = rot[k]
        t = thd_seg[k]
        u = qd[k]
        S0 = 0.0
        S1 = 0j
        S2 = 0.0
        T0 = 0j
        T1 = 0j
        T2 = 0.0
        A0 = 0j
        A1 = 0j
        AK = 0j
        for g in range(G):
            w = wts[k, g]
            sg = sig[k, g]
            if kind == RIGID:
                d = sg * ek
                d1 = 1j * d
                d2 = -d
            else:
                d, d1, d2 = _local(kind, q[k], sg, seg_len[k])
            p = p_start[k] + Rk * d
            Jk = Rk * d1
            a = a_prev[k] + Rk * (-t * t * d + 2j * t * d1 * u + d2 * u * u)
            pc = np.conj(p)
            S0 += w
            S1 += w * p
            S2 += w * (p.real * p.real + p.imag * p.imag)
            T0 += w * Jk
            T1 += w * pc * Jk
            T2 += w * (Jk.real * Jk.real + Jk.imag * Jk.imag)
            A0 += w * a
            A1 += w * pc * a
            AK += w * np.conj(Jk) * a
        V -= (gc * S1).real
        M[k, k] += T2
        c[k] += AK.real
        grad[k] -= (gc * T0).real
        for i in range(k):
            M[k, i] += (-1j * T1 + np.conj(beta[i]) * T0).real
        iS1s[k] = 1j * S1
        A0s[k] = A0
        A1s[k] = A1
        S0s[k] = S0
        S2s[k] = S2

    # contributions of all distal segments k > i, accumulated from the tip
    Z = 0j
    W = 0.0
    C2 = 0.0
    ZA0 = 0j
    ZA1 = 0j
    for i in range(n - 2, -1, -1):
        Z += iS1s[i + 1]
        W += S0s[i + 1]
        C2 += S2s[i + 1]
        ZA0 += A0s[i + 1]
        ZA1 += A1s[i + 1]
        bi = np.conj(beta[i])
        c[i] += (-1j * ZA1 + bi * ZA0).real
        grad[i] -= (gc * (Z + beta[i] * W)).real
        cZ = np.conj(Z)
        x = (bi * Z).real + C2
        for j in range(i + 1):
            M[i, j] += x + (cZ * beta[j]).real + W * (bi * beta[j]).real
    for i in range(n):
        for j in range(i):
            M[j, i] = M[i, j]
        grad[i] += kq[i] * q[i]
        V += 0.5 * kq[i] * q[i] * q[i]
    return V


@njit(cache=True)
def _cholesky_solve(M, b, out, L, y):
    # L (n, n) and y (n,) are scratch; L's diagonal holds reciprocal pivots
    n = b.size
    for j in range(n):
        s = M[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        inv = 1.0 / math.sqrt(s)
        L[j, j] = inv
        for i in range(j + 1, n):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s * inv
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s * L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s * L[i, i]
    return True


@njit(cache=True)
def chain_rhs_batch(Y, kind, seg_len, sig, wts, gvec, kq, out):
    """Accelerations for a batch of states; returns the first singular row or -1."""
    return _rhs_batch(Y, kind, seg_len, sig, wts, gvec, kq, out, _workspace(seg_len.size))


@njit(cache=True)
def _workspace(n):
    return np.empty((2 * n + 7, n)), np.empty((10, n), np.complex128)


@njit(cache=True)
def _rhs_batch(Y, kind, seg_len, sig, wts, gvec, kq, out, work):
    B = Y.shape[0]
    n = seg_len.size
    real, cwork = work
    M = real[:n]
    L = real[n:2 * n]
    c = real[2 * n]
    grad = real[2 * n + 1]
    qdd = real[2 * n + 2]
    ytmp = real[2 * n + 3]
    rwork = real[2 * n + 4:]
    for b in range(B):
        q = Y[b, :n]
        qd = Y[b, n:]
        _chain_eval(q, qd, kind, seg_len, sig, wts, gvec, kq, M, c, grad, cwork, rwork)
        for i in range(n):
            c[i] = -(c[i] + grad[i])
        if not _cholesky_solve(M, c, qdd, L, ytmp):
            return b
        out[b, :n] = qd
        out[b, n:] = qdd
    return -1


@njit(cache=True)
def chain_points(q, kind, seg_len, s_arr, P, J):
    n = q.size
    bounds = np.empty(n + 1)
    bounds[0] = 0.0
    for k in range(n):
        bounds[k + 1] = bounds[k] + seg_len[k]
    R = np.empty(n, np.complex128)
    p_start = np.empty(n, np.complex128)
    p_end = np.empty(n, np.complex128)
    rd1 = np.empty(n, np.complex128)
    th = 0.0
    acc = 0j
    for k in range(n):
        R[k] = -1j * cmath.exp(1j * th)
        p_start[k] = acc
        D, D1, _ = _local(kind, q[k], seg_len[k], seg_len[k])
        rd1[k] = R[k] * D1
        acc = acc + R[k] * D
        p_end[k] = acc
        th += q[k]
    for m in range(s_arr.size):
        s = s_arr[m]
        k = 0
        while k < n - 1 and s > bounds[k + 1]:
            k += 1
        d, d1, _ = _local(kind, q[k], s - bounds[k], seg_len[k])
        p = p_start[k] + R[k] * d
        P[m] = p
        for j in range(n):
            if j < k:
                J[m, j] = 1j * (p - p_end[j]) + rd1[j]
            elif j == k:
                J[m, j] = R[k] * d1
            else:
                J[m, j] = 0j




# ---------------------------------------------------------------------------
# DOP853 with the same tableau, error norm and step controller as scipy's
# solve_ivp(method="DOP853"); steps are clipped to land on output times.
# ---------------------------------------------------------------------------
_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)

OK, TOO_SMALL_STEP, NON_FINITE, SINGULAR_MASS = 0, 1, 2, 3


@njit(cache=True)
def _flat_rhs(y, width, kind, seg_len, sig, wts, gvec, kq, out, work):
    Y = y.reshape((y.size // width, width))
    O = out.reshape((y.size // width, width))
    return _rhs_batch(Y, kind, seg_len, sig, wts, gvec, kq, O, work) < 0


@njit(cache=True)
def _rms(v):
    return math.sqrt(np.sum(v * v) / v.size)


@njit(cache=True)
def chain_dop853(y0, width, t_out, rtol, atol, kind, seg_len, sig, wts, gvec, kq):
    """Integrate from ``t = 0``; returns ``(states at t_out, status, n_steps)``."""
    N = y0.size
    K = np.empty((_NS + 1, N))
    out = np.empty((t_out.size, N))
    y = y0.copy()
    t = 0.0
    f = np.empty(N)
    work = _workspace(seg_len.size)
    if not _flat_rhs(y, width, kind, seg_len, sig, wts, gvec, kq, f, work):
        return out, SINGULAR_MASS, 0
    j = 0
    while j < t_out.size and t_out[j] <= 0.0:
        out[j] = y
        j += 1
    if j == t_out.size:
        return out, OK, 0

    # initial step (Hairer, Norsett & Wanner II.4), as in scipy
    t_end = t_out[-1]
    scale = atol + np.abs(y) * rtol
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, t_end)
    f1 = np.empty(N)
    if not _flat_rhs(y + h0 * f, width, kind, seg_len, sig, wts, gvec, kq, f1, work):
        return out, SINGULAR_MASS, 0
    d2 = _rms((f1 - f) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    h_abs = min(100 * h0, h1, t_end)

    y_new = np.empty(N)
    ytmp = np.empty(N)
    n_steps = 0
    while j < t_out.size:
        target = t_out[j]
        min_step = 10 * abs(np.nextafter(t, np.inf) - t)
        rejected = False
        while True:
            if h_abs < min_step:
                return out, TOO_SMALL_STEP, n_steps
            h = h_abs
            clipped = False
            if t + h >= target:
                h = target - t
                clipped = True
            K[0] = f
            # explicit loops: array expressions here would allocate per stage
            for s in range(1, _NS):
                for i in range(N):
                    acc = 0.0
                    for m in range(s):
                        acc += _A[s, m] * K[m, i]
                    ytmp[i] = y[i] + h * acc
                if not _flat_rhs(ytmp, width, kind, seg_len, sig, wts, gvec, kq, K[s], work):
                    return out, SINGULAR_MASS, n_steps
            for i in range(N):
                acc = 0.0
                for m in range(_NS):
                    acc += _B[m] * K[m, i]
                y_new[i] = y[i] + h * acc
            if not _flat_rhs(y_new, width, kind, seg_len, sig, wts, gvec, kq, K[_NS], work):
                return out, SINGULAR_MASS, n_steps
            e5 = 0.0
            e3 = 0.0
            for i in range(N):
                sc = atol + max(abs(y[i]), abs(y_new[i])) * rtol
                a5 = 0.0
                a3 = 0.0
                for m in range(_NS + 1):
                    a5 += _E5[m] * K[m, i]
                    a3 += _E3[m] * K[m, i]
                e5 += (a5 / sc) ** 2
                e3 += (a3 / sc) ** 2
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h * e5 / math.sqrt((e5 + 0.01 * e3) * N)
            if err < 1.0:
                factor = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** (-1.0 / 8.0))
                if rejected:
                    factor = min(1.0, factor)
                h_new = h * factor
                if clipped:
                    h_new = max(h_new, min(h_abs, h * 10.0))
                h_abs = h_new
                break
            h_abs = h * max(0.2, 0.9 * err ** (-1.0 / 8.0))
            rejected = True
        n_steps += 1
        if not np.all(np.isfinite(y_new)):
            return out, NON_FINITE, n_steps
        t = target if clipped else t + h
        y[:] = y_new
        f[:] = K[_NS]
        while j < t_out.size and t_out[j] <= t:
            out[j] = y
            j += 1
    return out, OK, n_steps
