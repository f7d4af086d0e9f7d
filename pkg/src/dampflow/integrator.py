"""Time integration of  x'' + gamma(t) x' + grad Phi(x) = 0  on [t0, T].

The adaptive solver is the Dormand-Prince 5(4) pair with a PI step-size
controller and Hairer's 4th-order continuous extension for dense output.
``reference_integrate`` is a classical fixed-step RK4 used as an independent
oracle; its inner loop is compiled with numba (see ``_kernels``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _dopri
from .damping import Damping
from .potential import DimensionError, Potential

__all__ = [
    "IntegrationError",
    "DivergenceError",
    "StepBudgetExceeded",
    "DenseOutput",
    "Trajectory",
    "rhs",
    "log_schedule",
    "integrate",
    "reference_integrate",
]


class IntegrationError(RuntimeError):
    """The adaptive solver could not continue past ``t``."""

    def __init__(self, message, t):
        super().__init__(f"{message} at t={t:.17g}")
        self.t = t


class DivergenceError(IntegrationError):
    """The state became non-finite."""


class StepBudgetExceeded(ValueError):
    pass


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_A_ROWS = [np.array(r) for r in _A]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Hairer's dense output coefficients
_D = np.array([
    -12715105075 / 11282082432, 0.0, 87487479700 / 32700410799, -10690763975 / 1880347072,
    701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423,
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA


@dataclass(frozen=True)
class DenseOutput:
    """Piecewise quartic interpolant over accepted steps.

    ``coeffs[k]`` holds Hairer's five continuous-extension vectors for the
    step ``[nodes[k], nodes[k+1]]``; ``values[k]`` is the accepted state at
    ``nodes[k]``.
    """

    nodes: np.ndarray
    values: np.ndarray
    coeffs: np.ndarray

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nodes = self.nodes
        if np.any(t < nodes[0] - 1e-12 * abs(nodes[0])) or np.any(t > nodes[-1] + 1e-12 * abs(nodes[-1])):
            raise ValueError("dense output queried outside the integration range")
        k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)
        h = nodes[k + 1] - nodes[k]
        th = ((t - nodes[k]) / h)[:, None]
        r = self.coeffs[k]
        out = r[:, 0] + th * (r[:, 1] + (1 - th) * (r[:, 2] + th * (r[:, 3] + (1 - th) * r[:, 4])))
        at_left = t == nodes[k]
        at_right = t == nodes[k + 1]
        out[at_left] = self.values[k[at_left]]
        out[at_right] = self.values[k[at_right] + 1]
        return out


@dataclass(frozen=True)
class Trajectory:
    """Solution samples at the output schedule.

    ``x`` and ``v`` have shape ``(len(t), n)``. ``dense`` is present for
    adaptive runs and gives the state at any time in ``[t[0], t[-1]]``.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    n_accepted: int
    n_rejected: int
    rel_tol: float | None
    abs_tol: float | None
    method: str
    n_rhs: int = 0
    dense: DenseOutput | None = field(default=None, repr=False)

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def t0(self):
        return float(self.t[0])

    @property
    def T(self):
        return float(self.t[-1])

    def state_at(self, t):
        """(x, v) at arbitrary times via dense output."""
        if self.dense is None:
            raise ValueError("trajectory has no dense output")
        y = self.dense(t)
        n = self.dim
        return y[:, :n], y[:, n:]

    def write_csv(self, path):
        n = self.dim
        header = ["t"] + [f"x_{i}" for i in range(n)] + [f"v_{i}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for ti, xi, vi in zip(self.t, self.x, self.v):
                w.writerow([repr(float(ti))] + [repr(float(a)) for a in xi] + [repr(float(a)) for a in vi])

    @classmethod
    def read_csv(cls, path):
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        n = (data.shape[1] - 1) // 2
        return cls(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:], 0, 0, None, None, "csv")


def rhs(t, x, v, p: Potential, d: Damping):
    """(dx, dv) = (v, -gamma(t) v - grad Phi(x))."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise DimensionError("x and v must have the same shape")
    return v.copy(), -d.gamma(t) * v - p.gradient(x)


def log_schedule(t0, T, points_per_decade=200):
    """Log-spaced output times from t0 to T inclusive."""
    n = max(2, int(math.ceil(points_per_decade * math.log10(T / t0))) + 1)
    ts = np.geomspace(t0, T, n)
    ts[0], ts[-1] = t0, T
    return ts


def _initial_step(f, t0, y0, f0, rtol, atol, hmax):
    sc = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, hmax)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, hmax)


def integrate(
    p: Potential,
    d: Damping,
    x0,
    v0,
    t0: float | None = None,
    T: float = 1e4,
    rel_tol: float = 1e-9,
    abs_tol: float = 1e-12,
    output_times=None,
    points_per_decade: int = 200,
    step_cap: float = 0.2,
    max_steps: int = 5_000_000,
    compiled: bool | None = None,
) -> Trajectory:
    """Adaptive Dormand-Prince integration with dense output.

    Besides the error controller, each step is capped at
    ``step_cap * min(1/gamma(t), 1/sqrt(L))`` where ``L`` is the gradient's
    Lipschitz constant. Without the cap, once the state falls below
    ``abs_tol`` the controller lets the step grow to the edge of the stability
    region and the decaying solution stalls at the tolerance floor.

    The step loop runs compiled for the built-in potential and damping
    families; ``compiled=False`` forces the pure-Python loop, which is also
    used for any other ``Potential`` or ``Damping`` subclass.

    Raises
    ------
    IntegrationError
        If the step size underflows below ``1e-14 * t``.
    DivergenceError
        If the state becomes non-finite.
    """
    t0 = d.t0 if t0 is None else float(t0)
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    if t0 < d.t0 * (1 - 1e-12):
        raise ValueError("t0 precedes the damping's domain")
    if not T > t0:
        raise ValueError("need T > t0")
    if not (rel_tol > 0 and abs_tol > 0):
        raise ValueError("tolerances must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    n = p.dim
    if x0.shape != (n,) or v0.shape != (n,):
        raise DimensionError(f"initial state must have dimension {n}")
    if output_times is None:
        output_times = log_schedule(t0, T, points_per_decade)
    out_t = np.asarray(output_times, dtype=float)
    if out_t[0] != t0 or out_t[-1] > T or np.any(np.diff(out_t) <= 0):
        raise ValueError("output times must start at t0, increase strictly and stay within [t0, T]")

    inv_sqrt_l = 1.0 / math.sqrt(p.lipschitz) if p.lipschitz > 0 else math.inf
    y0 = np.concatenate([x0, v0])
    if compiled is None:
        compiled = _dopri.available(p, d)
    elif compiled and not _dopri.available(p, d):
        raise ValueError(f"no compiled kernel for {type(p).__name__} with {type(d).__name__}")
    if compiled:
        control = (SAFETY, MIN_FACTOR, MAX_FACTOR, _BETA, _EXPO)
        status, t_end, n_acc, n_rej, nfev, nodes, values, coeffs = _dopri.run(
            p, d, t0, T, y0, rel_tol, abs_tol, step_cap, inv_sqrt_l, max_steps, control)
    else:
        status, t_end, n_acc, n_rej, nfev, nodes, values, coeffs = _python_loop(
            p, d, t0, T, y0, rel_tol, abs_tol, step_cap, inv_sqrt_l, max_steps)
    if status == _dopri.UNDERFLOW:
        raise IntegrationError("step size underflow", t_end)
    if status == _dopri.DIVERGED:
        raise DivergenceError("non-finite state", t_end)
    if status == _dopri.BUDGET:
        raise IntegrationError("step budget exhausted", t_end)

    dense = DenseOutput(np.asarray(nodes), np.asarray(values), np.asarray(coeffs))
    ys = dense(out_t)
    ys[0] = y0
    return Trajectory(out_t, ys[:, :n].copy(), ys[:, n:].copy(), n_acc, n_rej, rel_tol, abs_tol,
                      "dopri5", nfev, dense)


def _python_loop(p, d, t0, T, y0, rel_tol, abs_tol, step_cap, inv_sqrt_l, max_steps):
    n = p.dim
    grad, gam = p.gradient, d.scalar_gamma

    def f(t, y):
        out = np.empty(2 * n)
        out[:n] = y[n:]
        out[n:] = -gam(t) * y[n:] - grad(y[:n])
        return out

    def hmax(t):
        return step_cap * min(1.0 / gam(t), inv_sqrt_l)

    def stop(status):
        return (status, t, n_acc, n_rej, nfev, np.array(nodes), np.array(values),
                np.array(coeffs).reshape(-1, 5, 2 * n))

    t = t0
    y = y0.copy()
    k = np.empty((7, 2 * n))
    k[0] = f(t, y)
    nfev = 1
    h = _initial_step(f, t, y, k[0], rel_tol, abs_tol, hmax(t))
    nfev += 1
    nodes, values, coeffs = [t], [y.copy()], []
    n_acc = n_rej = 0
    fac_old = 1e-4
    rejected_last = False
    nonfinite_last = False

    while t < T:
        h = min(h, hmax(t), T - t)
        if h < 1e-14 * t:
            return stop(_dopri.DIVERGED if nonfinite_last else _dopri.UNDERFLOW)
        for i in range(1, 7):
            yi = y + h * (_A_ROWS[i] @ k[:i])
            k[i] = f(t + _C[i] * h, yi)
        nfev += 6
        y_new = yi  # stage 7 is evaluated at the propagated solution (FSAL)
        err_vec = h * (_E @ k)
        sc = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = math.sqrt(float(np.mean((err_vec / sc) ** 2)))
        nonfinite_last = not (np.all(np.isfinite(y_new)) and math.isfinite(err))
        if nonfinite_last:
            n_rej += 1
            h *= MIN_FACTOR
            rejected_last = True
            continue
        if err <= 1.0:
            fac = MAX_FACTOR if err == 0 else SAFETY * err**-_EXPO * fac_old**_BETA
            fac = min(MAX_FACTOR, max(MIN_FACTOR, fac))
            if rejected_last:
                fac = min(fac, 1.0)
            ydiff = y_new - y
            bspl = h * k[0] - ydiff
            coeffs.append(np.stack([y, ydiff, bspl, ydiff - h * k[6] - bspl, h * (_D @ k)]))
            t_new = t + h
            if T - t_new <= 1e-13 * T:
                t_new = T
            t, y = t_new, y_new
            nodes.append(t)
            values.append(y.copy())
            k[0] = k[6]
            fac_old = max(err, 1e-4)
            h *= fac
            n_acc += 1
            rejected_last = False
            if n_acc >= max_steps:
                return stop(_dopri.BUDGET)
        else:
            h *= max(MIN_FACTOR, SAFETY * err**-_EXPO)
            n_rej += 1
            rejected_last = True
    return stop(_dopri.OK)


def reference_integrate(
    p: Potential,
    d: Damping,
    x0,
    v0,
    t0: float | None = None,
    T: float = 100.0,
    h: float = 1e-5,
    output_times=None,
    points_per_decade: int = 200,
    max_steps: int = 20_000_000,
) -> Trajectory:
    """Classical fixed-step RK4.

    Each gap between consecutive output times is covered by the smallest
    number of equal steps not exceeding ``h``, so samples are exact RK4
    values with no interpolation.
    """
    from . import _kernels

    t0 = d.t0 if t0 is None else float(t0)
    if not h > 0:
        raise ValueError("h must be positive")
    if output_times is None:
        output_times = log_schedule(t0, T, points_per_decade)
    out_t = np.asarray(output_times, dtype=float)
    if out_t[0] != t0 or np.any(np.diff(out_t) <= 0):
        raise ValueError("output times must start at t0 and increase strictly")
    counts = np.ceil(np.diff(out_t) / h * (1 - 1e-12)).astype(np.int64)
    counts = np.maximum(counts, 1)
    total = int(counts.sum())
    if total > max_steps:
        raise StepBudgetExceeded(f"{total} RK4 steps requested, budget is {max_steps}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    if x0.shape != (p.dim,) or v0.shape != (p.dim,):
        raise DimensionError(f"initial state must have dimension {p.dim}")
    pk = _kernels.pack_potential(p)
    dk = _kernels.pack_damping(d)
    ys = _kernels.rk4_run(*pk, *dk, np.concatenate([x0, v0]), out_t, counts)
    if not np.all(np.isfinite(ys)):
        bad = int(np.argmax(~np.all(np.isfinite(ys), axis=1)))
        raise DivergenceError("non-finite state", float(out_t[bad]))
    n = p.dim
    return Trajectory(out_t, ys[:, :n].copy(), ys[:, n:].copy(), total, 0, None, None, "rk4", 4 * total)
