"""Lyapunov quantities along a trajectory and the checks built on them.

For a trajectory of  x'' + gamma(t) x' + grad Phi(x) = 0  and a minimizer
``x*`` the module evaluates

* the energy ``W = |x'|^2 / 2 + Phi(x) - min Phi`` and ``t^2 W``,
* the anchored distance ``h = |x - x*|^2 / 2`` and ``h' = <x', x - x*>``,
* running integrals of ``s W``, ``[(s gamma)']_+ h``, ``[h']_+`` and
  ``s |x'|^2``,

and checks the identities and inequalities that link them in integrated
form. ``h''`` is never differenced numerically: the equation of motion gives
``h'' = |x'|^2 - <gamma x' + grad Phi(x), x - x*>``.

Integrals use composite Simpson quadrature on a grid made of the solver's
accepted-step nodes, the output samples and the landmarks ``T/10`` and
``T/2``, with every interval split into panels whose interior points come
from the dense output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from .damping import Certificate, Damping
from .integrator import Trajectory
from .potential import Potential

__all__ = [
    "HypothesisUnmet",
    "ProofConstants",
    "DiagnosticSeries",
    "energy",
    "evaluation_grid",
    "anchored_series",
    "proof_constants",
    "constants_for",
    "energy_dissipation_residual",
    "energy_monotonicity",
    "distance_identity_residual",
    "energy_bound_gap",
    "energy_bound_margin",
    "scaled_energy_identity_residual",
    "integrated_bound_margin",
    "gronwall_bound_check",
    "fubini_tail_check",
    "scaled_energy_variation",
    "decay_report",
    "opial_convergence_check",
]

ANCHOR_GRAD_TOL = 1e-8
PANELS_PER_STEP = 2


class HypothesisUnmet(ValueError):
    """The damping certificate does not support the requested check."""


def energy(p: Potential, x, v):
    """W = |v|^2 / 2 + Phi(x) - min Phi, clamped at 0 when within rounding of it."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    w = 0.5 * np.sum(v * v, axis=-1) + p.excess(x)
    w = np.where((w < 0) & (w > -1e-12), 0.0, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class _Grid:
    """States on the quadrature grid.

    Points ``0, 2, 4, ...`` are panel endpoints, odd points are panel
    midpoints; ``samples`` indexes the trajectory's output times.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    grad: np.ndarray
    excess: np.ndarray
    gamma: np.ndarray
    tgp_pos: np.ndarray
    samples: np.ndarray
    landmarks: dict

    @property
    def W(self):
        return 0.5 * np.sum(self.v * self.v, axis=1) + self.excess

    @property
    def speed2(self):
        return np.sum(self.v * self.v, axis=1)

    def endpoint(self, t):
        """Index of the panel endpoint closest to ``t``."""
        ends = self.t[::2]
        return 2 * int(np.argmin(np.abs(ends - t)))


def _cumulative_simpson(t, f):
    """Running Simpson integral at the panel endpoints of a midpoint grid."""
    return cumulative_simpson(f, x=t, initial=0.0)[::2]


def _hermite_mid(t, x, v, acc):
    """Midpoint states from cubic Hermite interpolation (no dense output)."""
    h = np.diff(t)[:, None]
    xm = 0.5 * (x[:-1] + x[1:]) + h / 8.0 * (v[:-1] - v[1:])
    vm = 0.5 * (v[:-1] + v[1:]) + h / 8.0 * (acc[:-1] - acc[1:])
    return xm, vm


def evaluation_grid(traj: Trajectory, p: Potential, d: Damping, panels_per_step: int = PANELS_PER_STEP) -> _Grid:
    """Build the quadrature grid for ``traj`` and evaluate the anchor-free fields."""
    t0, T = traj.t0, traj.T
    marks = [m for m in (T / 10.0, T / 2.0) if t0 < m < T]
    if traj.dense is not None:
        nodes = traj.dense.nodes
        nodes = nodes[(nodes >= t0) & (nodes <= T)]
        ends = np.unique(np.concatenate([nodes, traj.t, marks]))
        frac = np.arange(2 * panels_per_step) / (2 * panels_per_step)
        fine = (ends[:-1, None] + np.diff(ends)[:, None] * frac).reshape(-1)
        fine = np.append(fine, T)
        x, v = traj.state_at(fine)
    else:
        ends = np.unique(np.concatenate([traj.t, marks]))
        xs = np.array([np.interp(ends, traj.t, col) for col in traj.x.T]).T
        vs = np.array([np.interp(ends, traj.t, col) for col in traj.v.T]).T
        acc = -d.gamma(ends)[:, None] * vs - p.gradient(xs)
        xm, vm = _hermite_mid(ends, xs, vs, acc)
        n = p.dim
        x = np.empty((2 * ends.size - 1, n))
        v = np.empty_like(x)
        x[::2], x[1::2] = xs, xm
        v[::2], v[1::2] = vs, vm
        fine = np.empty(2 * ends.size - 1)
        fine[::2] = ends
        fine[1::2] = 0.5 * (ends[:-1] + ends[1:])
    # exact sample states wherever the grid hits an output time
    pos = np.searchsorted(fine, traj.t)
    x[pos] = traj.x
    v[pos] = traj.v
    landmarks = {}
    for m in marks:
        landmarks[m] = int(np.searchsorted(fine, m))
    return _Grid(
        t=fine,
        x=x,
        v=v,
        grad=p.gradient(x),
        excess=np.maximum(p.excess(x), 0.0),
        gamma=d.gamma(fine),
        tgp_pos=d.t_gamma_prime_pos(fine),
        samples=pos,
        landmarks=landmarks,
    )


@dataclass(frozen=True)
class DiagnosticSeries:
    """Diagnostic time series at the trajectory's output times.

    ``int_*`` fields are running integrals from ``t0``: ``int_sW`` of ``s W``,
    ``int_EQh`` of ``[(s gamma)']_+ h``, ``int_hp_pos`` of ``[h']_+`` and
    ``int_s_speed2`` of ``s |x'|^2``.
    """

    anchor: np.ndarray
    t: np.ndarray
    W: np.ndarray
    t2W: np.ndarray
    h: np.ndarray
    h_prime: np.ndarray
    speed2: np.ndarray
    int_sW: np.ndarray
    int_EQh: np.ndarray
    int_hp_pos: np.ndarray
    int_s_speed2: np.ndarray
    grid: _Grid

    KEYS = ("t", "W", "t2W", "h", "h_prime", "speed2", "int_sW", "int_EQh", "int_hp_pos", "int_s_speed2")

    def to_ndjson(self) -> str:
        cols = [getattr(self, k) for k in self.KEYS]
        lines = []
        for row in zip(*cols):
            lines.append(json.dumps({k: float(val) for k, val in zip(self.KEYS, row)}))
        return "\n".join(lines) + "\n"

    def write_ndjson(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_ndjson())

    def grid_values(self, name):
        """Fine-grid values of an anchor-dependent field or running integral."""
        return self._fine[name]


def _check_anchor(p: Potential, anchor):
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    if anchor.shape != (p.dim,):
        raise ValueError(f"anchor must have dimension {p.dim}")
    g = float(np.linalg.norm(p.gradient(anchor)))
    if g > ANCHOR_GRAD_TOL:
        raise ValueError(f"anchor is not a minimizer: |grad Phi| = {g:.3e}")
    return anchor


def anchored_series(traj: Trajectory, p: Potential, d: Damping, anchor, grid: _Grid | None = None) -> DiagnosticSeries:
    """All diagnostic series for one minimizer ``anchor``.

    Raises
    ------
    ValueError
        If ``|grad Phi(anchor)| > 1e-8``.
    """
    anchor = _check_anchor(p, anchor)
    g = evaluation_grid(traj, p, d) if grid is None else grid
    r = g.x - anchor
    h = 0.5 * np.sum(r * r, axis=1)
    hp = np.sum(g.v * r, axis=1)
    W = g.W
    s2 = g.speed2
    ends = slice(0, None, 2)

    def running(f):
        # defined at panel endpoints; midpoints stay NaN
        full = np.full_like(g.t, np.nan)
        full[ends] = _cumulative_simpson(g.t, f)
        return full

    fine = {
        "h": h,
        "h_prime": hp,
        "int_sW": running(g.t * W),
        "int_EQh": running(g.tgp_pos * h),
        "int_hp_pos": running(np.maximum(hp, 0.0)),
        "int_s_speed2": running(g.t * s2),
    }
    idx = g.samples
    t = g.t[idx]
    series = DiagnosticSeries(
        anchor=anchor,
        t=t,
        W=W[idx],
        t2W=t * t * W[idx],
        h=h[idx],
        h_prime=hp[idx],
        speed2=s2[idx],
        int_sW=fine["int_sW"][idx],
        int_EQh=fine["int_EQh"][idx],
        int_hp_pos=fine["int_hp_pos"][idx],
        int_s_speed2=fine["int_s_speed2"][idx],
        grid=g,
    )
    object.__setattr__(series, "_fine", fine)
    return series


@dataclass(frozen=True)
class ProofConstants:
    """Constants of the integrated energy bound.

    ``a_coef = 1 - 3/k`` and ``b_coef = 3/(2k) - 1/(k - 1 - eps)``.
    ``offset`` is the constant that actually bounds the integrated inequality
    at every ``t >= t0``; ``offset_printed`` drops the boundary term
    ``t0 gamma(t0) h(t0)`` from integrating ``-s (h'' + gamma h')`` by parts,
    and is kept for reference only.
    """

    k: float
    eps: float
    a_coef: float
    b_coef: float
    offset_printed: float
    offset: float

    def to_dict(self):
        return {
            "K": self.k,
            "epsilon": self.eps,
            "A": self.a_coef,
            "B": self.b_coef,
            "offset_printed": self.offset_printed,
            "offset": self.offset,
        }


def proof_constants(k: float, t0: float, W0: float, h0: float, hp0: float, gamma0: float,
                    eps: float | None = None) -> ProofConstants:
    """Constants for the integrated bound; ``eps`` defaults to ``(k - 3)/6``."""
    if eps is None:
        eps = (k - 3.0) / 6.0
    a = 1.0 - 3.0 / k
    b = 1.5 / k - 1.0 / (k - 1.0 - eps)
    printed = 1.5 / k * t0 * t0 * W0 + t0 * hp0 - h0
    return ProofConstants(k, eps, a, b, printed, printed + t0 * gamma0 * h0)


def constants_for(series: DiagnosticSeries, d: Damping, cert: Certificate, eps: float | None = None) -> ProofConstants:
    t0 = float(series.t[0])
    return proof_constants(cert.k_inf, t0, float(series.W[0]), float(series.h[0]), float(series.h_prime[0]),
                           float(d.gamma(t0)), eps)


def _grid(traj, p, d, grid):
    return evaluation_grid(traj, p, d) if grid is None else grid


def energy_dissipation_residual(traj: Trajectory, p: Potential, d: Damping, grid: _Grid | None = None) -> float:
    """max_i |W(t_{i+1}) - W(t_i) + int gamma |x'|^2| / (1 + W(t_i)) over output samples."""
    g = _grid(traj, p, d, grid)
    loss = _cumulative_simpson(g.t, g.gamma * g.speed2)
    W = g.W
    i = g.samples
    lost = loss[i // 2]
    res = np.abs(np.diff(W[i]) + np.diff(lost)) / (1.0 + W[i][:-1])
    return float(res.max()) if res.size else 0.0


def energy_monotonicity(traj: Trajectory, p: Potential) -> float:
    """Largest increase of W between consecutive samples, relative to 1 + W."""
    W = energy(p, traj.x, traj.v)
    if W.size < 2:
        return 0.0
    return float(np.max(np.diff(W) / (1.0 + W[:-1])))


def distance_identity_residual(series: DiagnosticSeries) -> float:
    """Integrated check of  h'' + gamma h' = |x'|^2 + <grad Phi(x), x* - x>.

    Compares ``h'(t) - h'(t0)`` with the integral of the right-hand side minus
    ``gamma h'``; the residual at each sample is divided by
    ``1 + |h'(t0)| + int |integrand|``.
    """
    g = series.grid
    r = g.x - series.anchor
    hp = series.grid_values("h_prime")
    f = g.speed2 - np.sum(g.grad * r, axis=1) - g.gamma * hp
    rhs = _cumulative_simpson(g.t, f)
    scale = 1.0 + abs(hp[0]) + _cumulative_simpson(g.t, np.abs(f))
    i = g.samples // 2
    res = np.abs(series.h_prime - series.h_prime[0] - rhs[i]) / scale[i]
    return float(res.max())


def energy_bound_gap(series: DiagnosticSeries) -> np.ndarray:
    """``3/2 |x'|^2 - h'' - gamma h' - W`` at every sample.

    Algebraically this is the convexity gap
    ``<grad Phi(x), x - x*> - (Phi(x) - Phi(x*))``, so it is never negative
    for convex potentials.
    """
    g = series.grid
    i = g.samples
    r = g.x[i] - series.anchor
    v = g.v[i]
    s2 = series.speed2
    gam = g.gamma[i]
    hpp = s2 - np.sum((gam[:, None] * v + g.grad[i]) * r, axis=1)
    return 1.5 * s2 - hpp - gam * series.h_prime - series.W


def energy_bound_margin(series: DiagnosticSeries) -> float:
    """min over samples of ``energy_bound_gap / (1 + W)``."""
    return float(np.min(energy_bound_gap(series) / (1.0 + series.W)))


def scaled_energy_identity_residual(series: DiagnosticSeries) -> float:
    """Integrated check of  (t^2 W)' = 2 t W - t^2 gamma |x'|^2.

    Residual at each sample divided by ``1 + t0^2 W(t0) + int |integrand|``.
    """
    g = series.grid
    f = 2.0 * g.t * g.W - g.t * g.t * g.gamma * g.speed2
    rhs = _cumulative_simpson(g.t, f)
    scale = 1.0 + series.t2W[0] + _cumulative_simpson(g.t, np.abs(f))
    i = g.samples // 2
    res = np.abs(series.t2W - series.t2W[0] - rhs[i]) / scale[i]
    return float(res.max())


def _require_k(cert: Certificate, c: ProofConstants):
    if not cert.exceeds_three:
        raise HypothesisUnmet(f"inf t*gamma = {cert.k_inf:.6g} does not exceed 3")
    if not c.eps < (c.k - 3.0) / 3.0 or not c.eps > 0:
        raise HypothesisUnmet("epsilon must lie in (0, (K-3)/3)")


def integrated_bound_margin(series: DiagnosticSeries, c: ProofConstants, cert: Certificate) -> float:
    """min over samples of
    ``offset + int [(s gamma)']_+ h - (A int s W + B t^2 W + eps h)``.

    Raises
    ------
    HypothesisUnmet
        If the certificate's K does not exceed 3 or eps is out of range.
    """
    _require_k(cert, c)
    lhs = c.a_coef * series.int_sW + c.b_coef * series.t2W + c.eps * series.h
    rhs = c.offset + series.int_EQh
    return float(np.min(rhs - lhs))


def gronwall_bound_check(series: DiagnosticSeries, c: ProofConstants, variation_integral: float,
                         cert: Certificate | None = None) -> dict:
    """Compare sup h with ``(offset/eps) exp(variation_integral/eps)``.

    The verdict is ``"inapplicable"`` when the offset is negative, where the
    bound cannot hold; both numbers are still reported.
    """
    if cert is not None:
        _require_k(cert, c)
        if not cert.finite_variation:
            raise HypothesisUnmet("positive part of (t*gamma)' is not integrable")
    sup_h = float(np.max(series.grid_values("h")))
    growth = math.exp(variation_integral / c.eps)
    bound = c.offset / c.eps * growth
    out = {
        "sup_h": sup_h,
        "bound": bound,
        "bound_printed": c.offset_printed / c.eps * growth,
    }
    if c.offset < 0:
        out["verdict"] = "inapplicable"
    else:
        out["verdict"] = "pass" if sup_h <= bound * (1 + 1e-6) else "fail"
    return out


def fubini_tail_check(series: DiagnosticSeries, cert: Certificate) -> dict:
    """int [h']_+ over [t0, T] against
    ``(t0 |h'(t0)| + int s |x'|^2) / (K - 1)``."""
    if not cert.exceeds_three:
        raise HypothesisUnmet(f"inf t*gamma = {cert.k_inf:.6g} does not exceed 3")
    k = cert.k_inf
    lhs = float(series.int_hp_pos[-1])
    rhs = float((series.t[0] * abs(series.h_prime[0]) + series.int_s_speed2[-1]) / (k - 1.0))
    return {"lhs": lhs, "rhs": rhs, "verdict": "pass" if lhs <= rhs * (1 + 1e-6) else "fail"}


def scaled_energy_variation(series: DiagnosticSeries) -> float:
    """Total variation of t^2 W over the last decade of samples, relative to max t^2 W."""
    top = float(np.max(series.t2W))
    if top == 0:
        return 0.0
    tail = series.t2W[series.t >= series.t[-1] / 10.0]
    return float(np.sum(np.abs(np.diff(tail))) / top)


def decay_report(series: DiagnosticSeries, window: float = 0.25) -> dict:
    """Desk-scale indicators that t^2 W(t) tends to 0.

    ``slope`` is the least-squares slope of log W against log t over the
    trailing ``window`` fraction of the log-time span (``None`` when W
    vanishes there); ``t2W_ratio`` is t^2 W(T) / t^2 W(T/10);
    ``sW_tail_ratio`` is int_{T/2}^T s W / int_{t0}^{T/2} s W;
    ``m_estimate`` is t^2 W(T).

    Raises
    ------
    ValueError
        If the series spans less than two decades or the window holds fewer
        than three samples.
    """
    t = series.t
    if not 0 < window <= 1:
        raise ValueError("window must be in (0, 1]")
    if t[-1] / t[0] < 100.0 * (1 - 1e-12):
        raise ValueError("decay report needs at least two decades of samples")
    lo = math.exp(math.log(t[-1]) - window * math.log(t[-1] / t[0]))
    sel = t >= lo * (1 - 1e-12)
    if sel.sum() < 3:
        raise ValueError("window too short")
    W = series.W[sel]
    pos = W > 0
    slope = None
    if pos.sum() >= 3:
        slope = float(np.polyfit(np.log(t[sel][pos]), np.log(W[pos]), 1)[0])

    g = series.grid
    T = float(t[-1])
    int_sW = series.grid_values("int_sW")
    t2W_grid = g.t * g.t * g.W
    i10 = g.landmarks.get(T / 10.0, g.endpoint(T / 10.0))
    i2 = g.landmarks.get(T / 2.0, g.endpoint(T / 2.0))
    m = float(series.t2W[-1])
    ref = float(t2W_grid[i10])
    head = float(int_sW[i2])
    tail = float(int_sW[-1] - int_sW[i2])
    return {
        "slope": slope,
        "t2W_end": m,
        "t2W_ratio": m / ref if ref > 0 else 0.0,
        "sW_tail_ratio": tail / head if head > 0 else 0.0,
        "m_estimate": m,
    }


def opial_convergence_check(traj: Trajectory, p: Potential, anchors, window: float = 0.5,
                            osc_tol: float = 1e-4, gap_tol: float = 1e-6, disp_tol: float = 1e-4) -> dict:
    """Evidence that x(t) converges to a minimizer.

    For each anchor, the oscillation (max - min) of |x(t) - x*| over the last
    ``window`` fraction of [t0, T] must stay below ``osc_tol (1 + |x*|)``;
    the limit candidate x(T) must satisfy Phi(x(T)) - min Phi <= ``gap_tol``
    and |x(T) - x(T/2)| <= ``disp_tol``.

    Raises
    ------
    ValueError
        With no anchors, or a single anchor when the argmin is not a point.
    """
    anchors = [np.asarray(a, dtype=float).reshape(-1) for a in anchors]
    need = 1 if p.argmin_basis is None else 2
    if len(anchors) < need:
        raise ValueError(f"need at least {need} anchor(s) in the argmin")
    for a in anchors:
        _check_anchor(p, a)
    t = traj.t
    T = traj.T
    sel = t >= T - window * (T - traj.t0)
    osc = []
    for a in anchors:
        dist = np.linalg.norm(traj.x[sel] - a, axis=1)
        osc.append(float(dist.max() - dist.min()))
    x_end = traj.x[-1]
    if traj.dense is not None:
        x_half = traj.state_at(T / 2.0)[0][0]
    else:
        x_half = np.array([np.interp(T / 2.0, t, col) for col in traj.x.T])
    gap = float(max(p.excess(x_end), 0.0))
    disp = float(np.linalg.norm(x_end - x_half))
    ok = all(o <= osc_tol * (1 + np.linalg.norm(a)) for o, a in zip(osc, anchors))
    ok = ok and gap <= gap_tol and disp <= disp_tol
    return {
        "limit_candidate": x_end.copy(),
        "per_anchor_oscillation": osc,
        "phi_gap": gap,
        "displacement": disp,
        "verdict": "pass" if ok else "fail",
    }
