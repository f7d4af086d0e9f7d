"""Compiled Dormand-Prince loop for ``integrator.integrate``.

The gradients follow the formulas of the ``potential`` classes (including the
anchored log-sum-exp gradient near its minimizer); the pure-Python loop in
``integrator`` remains the path for potentials without a kernel here, and the
two are tested against each other.
"""

import functools

import numpy as np
from numba import njit

from ._kernels import _gamma_overt, _gamma_power, _gamma_shifted, _gamma_tab, pack_damping
from .potential import Huber, LeastSquares, LogSumExp, Quadratic, Zero

OK, UNDERFLOW, DIVERGED, BUDGET = range(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 6))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_D = np.array([
    -12715105075 / 11282082432, 0.0, 87487479700 / 32700410799, -10690763975 / 1880347072,
    701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423,
])


def pack(p):
    """(kind, mat, vec, aux1, aux2, aux3, scal) or ``None`` when there is no kernel."""
    e2, e1 = np.zeros((1, 1)), np.zeros(1)
    if type(p) is Zero:
        return 0, e2, e1, e1, e1, e1, 0.0
    if type(p) is Quadratic:
        return 1, np.ascontiguousarray(p.A), p.b.copy(), e1, e1, e1, 0.0
    if type(p) is LeastSquares:
        return 2, np.ascontiguousarray(p.M), p.y.copy(), e1, e1, e1, 0.0
    if type(p) is LogSumExp:
        return (3, np.ascontiguousarray(p.rows), p.offsets.copy(), p.argmin_witness.copy(),
                p._wstar.copy(), p._gstar.copy(), p._near)
    if type(p) is Huber:
        return 4, e2, p.center.copy(), e1, e1, e1, p.delta
    return None


@njit(cache=True)
def _g_zero(mat, vec, a1, a2, a3, scal, x, n, out, work):
    for i in range(n):
        out[i] = 0.0


@njit(cache=True)
def _g_quad(mat, vec, a1, a2, a3, scal, x, n, out, work):
    for j in range(n):
        acc = -vec[j]
        for i in range(n):
            acc += x[i] * mat[i, j]
        out[j] = acc


@njit(cache=True)
def _g_lsq(mat, vec, a1, a2, a3, scal, x, n, out, work):
    m = mat.shape[0]
    for r in range(m):
        acc = -vec[r]
        for j in range(n):
            acc += x[j] * mat[r, j]
        work[r] = acc
    for j in range(n):
        acc = 0.0
        for r in range(m):
            acc += work[r] * mat[r, j]
        out[j] = acc


@njit(cache=True)
def _g_lse(mat, vec, a1, a2, a3, scal, x, n, out, work):
    m = mat.shape[0]
    near = True
    for r in range(m):
        acc = 0.0
        for j in range(n):
            acc += (x[j] - a1[j]) * mat[r, j]
        work[r] = acc
        if abs(acc) > scal:
            near = False
    if near:
        s = 0.0
        for r in range(m):
            work[r] = np.expm1(work[r])
            s += a2[r] * work[r]
        for j in range(n):
            acc = 0.0
            for r in range(m):
                acc += a2[r] * (work[r] - s) / (1.0 + s) * mat[r, j]
            out[j] = a3[j] + acc
        return
    zmax = -np.inf
    for r in range(m):
        acc = vec[r]
        for j in range(n):
            acc += x[j] * mat[r, j]
        work[r] = acc
        zmax = max(zmax, acc)
    tot = 0.0
    for r in range(m):
        work[r] = np.exp(work[r] - zmax)
        tot += work[r]
    for j in range(n):
        acc = 0.0
        for r in range(m):
            acc += work[r] / tot * mat[r, j]
        out[j] = acc


@njit(cache=True)
def _g_huber(mat, vec, a1, a2, a3, scal, x, n, out, work):
    for i in range(n):
        out[i] = min(max(x[i] - vec[i], -scal), scal)


_GRADS = (_g_zero, _g_quad, _g_lsq, _g_lse, _g_huber)
_GAMMAS = (_gamma_overt, _gamma_shifted, _gamma_power, _gamma_tab)


def _make_loop(grad, gam):
    @njit
    def f(mat, vec, a1, a2, a3, scal, par, kt, kg, t, y, n, out, g, work):
        grad(mat, vec, a1, a2, a3, scal, y, n, g, work)
        gm = gam(par, kt, kg, t)
        for i in range(n):
            out[i] = y[n + i]
            out[n + i] = -gm * y[n + i] - g[i]

    @njit
    def rms(e, y, z, rtol, atol):
        acc = 0.0
        for i in range(e.size):
            sc = atol + rtol * max(abs(y[i]), abs(z[i]))
            acc += (e[i] / sc) ** 2
        return np.sqrt(acc / e.size)

    @njit
    def loop(mat, vec, a1, a2, a3, scal, par, kt, kg, t0, T, y0, rtol, atol, step_cap, inv_sqrt_l,
             max_steps, C, A, E, D, safety, min_factor, max_factor, beta, expo):
        m = y0.size
        n = m // 2
        g = np.empty(n)
        work = np.empty(max(mat.shape[0], 1))
        k = np.empty((7, m))
        yi = np.empty(m)
        err_vec = np.empty(m)
        cap = 1024
        nodes = np.empty(cap)
        values = np.empty((cap, m))
        coeffs = np.empty((cap, 5, m))
        t = t0
        y = y0.copy()
        nodes[0] = t
        values[0] = y
        f(mat, vec, a1, a2, a3, scal, par, kt, kg, t, y, n, k[0], g, work)
        nfev = 1

        # initial step (Hairer, Norsett & Wanner)
        hmax = step_cap * min(1.0 / gam(par, kt, kg, t), inv_sqrt_l)
        d0 = 0.0
        d1 = 0.0
        for i in range(m):
            sc = atol + rtol * abs(y[i])
            d0 += (y[i] / sc) ** 2
            d1 += (k[0, i] / sc) ** 2
        d0 = np.sqrt(d0 / m)
        d1 = np.sqrt(d1 / m)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h0 = min(h0, hmax)
        for i in range(m):
            yi[i] = y[i] + h0 * k[0, i]
        f(mat, vec, a1, a2, a3, scal, par, kt, kg, t + h0, yi, n, k[1], g, work)
        nfev += 1
        d2 = 0.0
        for i in range(m):
            sc = atol + rtol * abs(y[i])
            d2 += ((k[1, i] - k[0, i]) / sc) ** 2
        d2 = np.sqrt(d2 / m) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100 * h0, h1, hmax)

        n_acc = 0
        n_rej = 0
        fac_old = 1e-4
        rejected_last = False
        nonfinite_last = False
        while t < T:
            hmax = step_cap * min(1.0 / gam(par, kt, kg, t), inv_sqrt_l)
            h = min(h, hmax, T - t)
            if h < 1e-14 * t:
                status = DIVERGED if nonfinite_last else UNDERFLOW
                return status, t, n_acc, n_rej, nfev, nodes[:n_acc + 1], values[:n_acc + 1], coeffs[:n_acc]
            for s in range(1, 7):
                for i in range(m):
                    acc = 0.0
                    for j in range(s):
                        acc += A[s, j] * k[j, i]
                    yi[i] = y[i] + h * acc
                f(mat, vec, a1, a2, a3, scal, par, kt, kg, t + C[s] * h, yi, n, k[s], g, work)
            nfev += 6
            finite = True
            for i in range(m):
                acc = 0.0
                for j in range(7):
                    acc += E[j] * k[j, i]
                err_vec[i] = h * acc
                if not np.isfinite(yi[i]):
                    finite = False
            err = rms(err_vec, y, yi, rtol, atol)
            nonfinite_last = not finite or not np.isfinite(err)
            if nonfinite_last:
                n_rej += 1
                h *= min_factor
                rejected_last = True
                continue
            if err <= 1.0:
                if err == 0.0:
                    fac = max_factor
                else:
                    fac = safety * err ** (-expo) * fac_old ** beta
                fac = min(max_factor, max(min_factor, fac))
                if rejected_last:
                    fac = min(fac, 1.0)
                if n_acc + 1 >= cap:
                    cap *= 2
                    nn = np.empty(cap)
                    nn[:n_acc + 1] = nodes[:n_acc + 1]
                    nv = np.empty((cap, m))
                    nv[:n_acc + 1] = values[:n_acc + 1]
                    nc = np.empty((cap, 5, m))
                    nc[:n_acc] = coeffs[:n_acc]
                    nodes, values, coeffs = nn, nv, nc
                for i in range(m):
                    ydiff = yi[i] - y[i]
                    bspl = h * k[0, i] - ydiff
                    acc = 0.0
                    for j in range(7):
                        acc += D[j] * k[j, i]
                    coeffs[n_acc, 0, i] = y[i]
                    coeffs[n_acc, 1, i] = ydiff
                    coeffs[n_acc, 2, i] = bspl
                    coeffs[n_acc, 3, i] = ydiff - h * k[6, i] - bspl
                    coeffs[n_acc, 4, i] = h * acc
                t_new = t + h
                if T - t_new <= 1e-13 * T:
                    t_new = T
                t = t_new
                for i in range(m):
                    y[i] = yi[i]
                    k[0, i] = k[6, i]
                n_acc += 1
                nodes[n_acc] = t
                values[n_acc] = y
                fac_old = max(err, 1e-4)
                h *= fac
                rejected_last = False
                if n_acc >= max_steps:
                    return BUDGET, t, n_acc, n_rej, nfev, nodes[:n_acc + 1], values[:n_acc + 1], coeffs[:n_acc]
            else:
                h *= max(min_factor, safety * err ** (-expo))
                n_rej += 1
                rejected_last = True
        return OK, t, n_acc, n_rej, nfev, nodes[:n_acc + 1], values[:n_acc + 1], coeffs[:n_acc]

    return loop


@functools.lru_cache(maxsize=None)
def _loop_for(gk, dk):
    return _make_loop(_GRADS[gk], _GAMMAS[dk])


def available(p, d):
    try:
        pack_damping(d)
    except TypeError:
        return False
    return pack(p) is not None


def run(p, d, t0, T, y0, rtol, atol, step_cap, inv_sqrt_l, max_steps, control):
    """Run the compiled loop; ``control`` is (safety, min_factor, max_factor, beta, expo)."""
    gk, *pargs = pack(p)
    dk, par, kt, kg = pack_damping(d)
    loop = _loop_for(gk, dk)
    return loop(*pargs, par, kt, kg, float(t0), float(T), np.ascontiguousarray(y0, dtype=float),
                float(rtol), float(atol), float(step_cap), float(inv_sqrt_l), int(max_steps),
                _C, _A, _E, _D, *control)
