"""Compiled fixed-step RK4 loop for the reference integrator.

The gradient and damping formulas here are written out independently of
``potential`` and ``damping`` (plain softmax, no anchoring) so the reference
does not share code paths with the adaptive solver it checks.
"""

import functools

import numpy as np
from numba import njit

from .damping import OverT, PowerLaw, Shifted, Tabulated
from .potential import Huber, LeastSquares, LogSumExp, Quadratic, Zero

_ZERO, _QUAD, _LSQ, _LSE, _HUBER = range(5)
_OVERT, _SHIFTED, _POWER, _TAB = range(4)


def pack_potential(p):
    empty2 = np.zeros((1, 1))
    empty1 = np.zeros(1)
    if isinstance(p, Zero):
        return _ZERO, empty2, empty1, 0.0
    if isinstance(p, Quadratic):
        return _QUAD, np.ascontiguousarray(p.A), p.b.copy(), 0.0
    if isinstance(p, LeastSquares):
        return _LSQ, np.ascontiguousarray(p.M), p.y.copy(), 0.0
    if isinstance(p, LogSumExp):
        return _LSE, np.ascontiguousarray(p.rows), p.offsets.copy(), 0.0
    if isinstance(p, Huber):
        return _HUBER, empty2, p.center.copy(), p.delta
    raise TypeError(f"no compiled kernel for {type(p).__name__}")


def pack_damping(d):
    empty = np.zeros(1)
    if isinstance(d, OverT):
        return _OVERT, np.array([d.K, 0.0, 0.0]), empty, empty
    if isinstance(d, Shifted):
        return _SHIFTED, np.array([d.K, d.a, 0.0]), empty, empty
    if isinstance(d, PowerLaw):
        return _POWER, np.array([d.K, 0.0, d.alpha]), empty, empty
    if isinstance(d, Tabulated):
        return _TAB, np.array([d.K_tail, 0.0, 0.0]), d.knots_t.copy(), d.knots_gamma.copy()
    raise TypeError(f"no compiled kernel for {type(d).__name__}")


@njit(cache=True)
def _grad_zero(mat, vec, scal, x, n, out, work):
    for i in range(n):
        out[i] = 0.0


@njit(cache=True)
def _grad_quad(mat, vec, scal, x, n, out, work):
    for i in range(n):
        acc = -vec[i]
        for j in range(n):
            acc += mat[i, j] * x[j]
        out[i] = acc


@njit(cache=True)
def _grad_lsq(mat, vec, scal, x, n, out, work):
    m = mat.shape[0]
    for r in range(m):
        acc = -vec[r]
        for j in range(n):
            acc += mat[r, j] * x[j]
        work[r] = acc
    for i in range(n):
        acc = 0.0
        for r in range(m):
            acc += mat[r, i] * work[r]
        out[i] = acc


@njit(cache=True)
def _grad_lse(mat, vec, scal, x, n, out, work):
    m = mat.shape[0]
    zmax = -np.inf
    for r in range(m):
        acc = vec[r]
        for j in range(n):
            acc += mat[r, j] * x[j]
        work[r] = acc
        zmax = max(zmax, acc)
    tot = 0.0
    for r in range(m):
        work[r] = np.exp(work[r] - zmax)
        tot += work[r]
    for i in range(n):
        acc = 0.0
        for r in range(m):
            acc += work[r] * mat[r, i]
        out[i] = acc / tot


@njit(cache=True)
def _grad_huber(mat, vec, scal, x, n, out, work):
    for i in range(n):
        out[i] = min(max(x[i] - vec[i], -scal), scal)


@njit(cache=True)
def _gamma_overt(par, kt, kg, t):
    return par[0] / t


@njit(cache=True)
def _gamma_shifted(par, kt, kg, t):
    return par[0] / (par[1] + t)


@njit(cache=True)
def _gamma_power(par, kt, kg, t):
    return par[0] * t ** (-par[2])


@njit(cache=True)
def _gamma_tab(par, kt, kg, t):
    last = kt.size - 1
    if t >= kt[last]:
        return par[0] / t
    lo, hi = 0, last
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if kt[mid] <= t:
            lo = mid
        else:
            hi = mid
    w = (t - kt[lo]) / (kt[hi] - kt[lo])
    return kg[lo] + w * (kg[hi] - kg[lo])


def _make_loop(grad, gam):
    @njit
    def loop(mat, vec, scal, par, kt, kg, y0, out_t, counts):
        m = y0.size
        n = m // 2
        res = np.empty((out_t.size, m))
        y = y0.copy()
        res[0] = y
        ks = np.empty((4, m))
        tmp = np.empty(m)
        g = np.empty(n)
        work = np.empty(max(mat.shape[0], 1))
        for seg in range(counts.size):
            a = out_t[seg]
            nsub = counts[seg]
            h = (out_t[seg + 1] - a) / nsub
            for s in range(nsub):
                t = a + s * h
                for stage in range(4):
                    if stage == 0:
                        ts, c = t, 0.0
                    elif stage == 3:
                        ts, c = t + h, h
                    else:
                        ts, c = t + 0.5 * h, 0.5 * h
                    if stage == 0:
                        for i in range(m):
                            tmp[i] = y[i]
                    else:
                        for i in range(m):
                            tmp[i] = y[i] + c * ks[stage - 1, i]
                    grad(mat, vec, scal, tmp, n, g, work)
                    gm = gam(par, kt, kg, ts)
                    for i in range(n):
                        ks[stage, i] = tmp[n + i]
                        ks[stage, n + i] = -gm * tmp[n + i] - g[i]
                for i in range(m):
                    y[i] += h / 6.0 * (ks[0, i] + 2.0 * ks[1, i] + 2.0 * ks[2, i] + ks[3, i])
            res[seg + 1] = y
        return res

    return loop


_GRADS = {_ZERO: _grad_zero, _QUAD: _grad_quad, _LSQ: _grad_lsq, _LSE: _grad_lse, _HUBER: _grad_huber}
_GAMMAS = {_OVERT: _gamma_overt, _SHIFTED: _gamma_shifted, _POWER: _gamma_power, _TAB: _gamma_tab}


@functools.lru_cache(maxsize=None)
def _loop_for(pk, dk):
    return _make_loop(_GRADS[pk], _GAMMAS[dk])


def rk4_run(pk, mat, vec, scal, dk, par, kt, kg, y0, out_t, counts):
    """Advance ``y0`` with ``counts[i]`` equal RK4 steps across each output gap."""
    return _loop_for(pk, dk)(mat, vec, scal, par, kt, kg, y0, out_t, counts)
