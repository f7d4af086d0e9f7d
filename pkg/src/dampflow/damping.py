"""Vanishing damping coefficients gamma(t) on [t0, inf).

Each family exposes gamma, t*gamma, (t*gamma)', the cumulative integral
Gamma(t, s) = int_s^t gamma, and a certificate for the two hypotheses the
asymptotic analysis needs:

* t*gamma(t) >= K > 3 on [t0, inf)   (``exceeds_three``)
* the positive part of (t*gamma)' is integrable   (``finite_variation``)
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from .potential import UnsupportedQuery

__all__ = [
    "Damping",
    "OverT",
    "Shifted",
    "PowerLaw",
    "Tabulated",
    "Certificate",
    "gamma",
    "t_gamma_prime_pos",
    "certify",
    "big_gamma",
    "tail_kernel_check",
    "from_config",
]

_T_TOL = 1e-12


class Damping:
    kind = "abstract"
    K: float
    t0: float

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0 * (1 - _T_TOL)):
            raise ValueError(f"t must be >= t0={self.t0}")
        return t

    def gamma(self, t):
        raise NotImplementedError

    def t_gamma(self, t):
        return self._check(t) * self.gamma(t)

    def scalar_gamma(self, t: float) -> float:
        """gamma at a single time, without domain checks (solver hot path)."""
        return float(self.gamma(t))

    def t_gamma_prime(self, t):
        raise NotImplementedError

    def t_gamma_prime_pos(self, t):
        return np.maximum(self.t_gamma_prime(t), 0.0)

    def big_gamma(self, s, t):
        raise NotImplementedError

    def with_K(self, K: float) -> "Damping":
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        return []


class OverT(Damping):
    """gamma(t) = K / t."""

    kind = "over_t"

    def __init__(self, K, t0=1.0):
        if not t0 > 0:
            raise ValueError("t0 must be positive")
        self.K, self.t0 = float(K), float(t0)

    def gamma(self, t):
        return self.K / self._check(t)

    def scalar_gamma(self, t):
        return self.K / t

    def t_gamma(self, t):
        return np.full_like(self._check(t), self.K, dtype=float)

    def t_gamma_prime(self, t):
        return np.zeros_like(self._check(t), dtype=float)

    def big_gamma(self, s, t):
        return self.K * np.log(np.asarray(t, dtype=float) / np.asarray(s, dtype=float))

    def with_K(self, K):
        return OverT(K, self.t0)

    def to_config(self):
        return {"kind": self.kind, "K": self.K, "t0": self.t0}


class Shifted(Damping):
    """gamma(t) = K / (a + t), defined for t0 > -a."""

    kind = "shifted"

    def __init__(self, K, a, t0=1.0):
        if not t0 > 0 or not t0 + a > 0:
            raise ValueError("need t0 > 0 and t0 > -a")
        self.K, self.a, self.t0 = float(K), float(a), float(t0)

    def gamma(self, t):
        return self.K / (self.a + self._check(t))

    def scalar_gamma(self, t):
        return self.K / (self.a + t)

    def t_gamma_prime(self, t):
        t = self._check(t)
        return self.K * self.a / (self.a + t) ** 2

    def big_gamma(self, s, t):
        return self.K * np.log((self.a + np.asarray(t, dtype=float)) / (self.a + np.asarray(s, dtype=float)))

    def with_K(self, K):
        return Shifted(K, self.a, self.t0)

    def to_config(self):
        return {"kind": self.kind, "K": self.K, "a": self.a, "t0": self.t0}


class PowerLaw(Damping):
    """gamma(t) = K / t**alpha with alpha in [0, 1).

    Decays slower than K/t, so t*gamma grows without bound and the
    variation hypothesis fails; runs on this family are exploratory.
    """

    kind = "power_law"

    def __init__(self, K, alpha, t0=1.0):
        if not 0 <= alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if not t0 > 0:
            raise ValueError("t0 must be positive")
        self.K, self.alpha, self.t0 = float(K), float(alpha), float(t0)

    def gamma(self, t):
        return self.K * self._check(t) ** (-self.alpha)

    def scalar_gamma(self, t):
        return self.K * t ** (-self.alpha)

    def t_gamma_prime(self, t):
        return self.K * (1 - self.alpha) * self._check(t) ** (-self.alpha)

    def big_gamma(self, s, t):
        p = 1 - self.alpha
        s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
        return self.K * (t**p - s**p) / p

    def with_K(self, K):
        return PowerLaw(K, self.alpha, self.t0)

    def to_config(self):
        return {"kind": self.kind, "K": self.K, "alpha": self.alpha, "t0": self.t0}


class Tabulated(Damping):
    """Piecewise-linear gamma through knots (t_i, gamma_i).

    Past the last knot t*gamma is held at its final value, i.e. gamma decays
    like K/t there. That tail is an assumption, not data, so certificates for
    this family carry ``tail_known=False``.
    """

    kind = "tabulated"

    def __init__(self, knots_t, knots_gamma, t0=None, source=None):
        kt = np.asarray(knots_t, dtype=float).reshape(-1)
        kg = np.asarray(knots_gamma, dtype=float).reshape(-1)
        if kt.size < 2 or kt.shape != kg.shape:
            raise ValueError("need at least two (t, gamma) knots")
        if np.any(np.diff(kt) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(kg <= 0):
            raise ValueError("tabulated gamma must be positive")
        self.knots_t, self.knots_gamma = kt, kg
        self.t0 = float(kt[0] if t0 is None else t0)
        if not kt[0] <= self.t0 < kt[-1] or self.t0 <= 0:
            raise ValueError("t0 must be positive and lie inside the knot range")
        self.K_tail = float(kt[-1] * kg[-1])
        self.source = source

    @property
    def K(self):
        return self.K_tail

    def _slopes(self):
        return np.diff(self.knots_gamma) / np.diff(self.knots_t)

    def gamma(self, t):
        t = self._check(t)
        inside = np.interp(t, self.knots_t, self.knots_gamma)
        return np.where(t <= self.knots_t[-1], inside, self.K_tail / t)

    def t_gamma_prime(self, t):
        t = self._check(t)
        slopes = self._slopes()
        idx = np.clip(np.searchsorted(self.knots_t, t, side="right") - 1, 0, slopes.size - 1)
        inside = np.interp(t, self.knots_t, self.knots_gamma) + t * slopes[idx]
        return np.where(t < self.knots_t[-1], inside, 0.0)

    def _primitive(self, t):
        # int_{t_first}^t gamma, exact for the piecewise-linear interpolant plus the K/t tail
        kt, kg = self.knots_t, self.knots_gamma
        seg = np.concatenate([[0.0], np.cumsum(0.5 * (kg[1:] + kg[:-1]) * np.diff(kt))])
        t = np.asarray(t, dtype=float)
        tc = np.minimum(t, kt[-1])
        idx = np.clip(np.searchsorted(kt, tc, side="right") - 1, 0, kt.size - 2)
        g_at = np.interp(tc, kt, kg)
        inner = seg[idx] + 0.5 * (kg[idx] + g_at) * (tc - kt[idx])
        tail = self.K_tail * np.log(np.maximum(t, kt[-1]) / kt[-1])
        return inner + tail

    def big_gamma(self, s, t):
        return self._primitive(t) - self._primitive(s)

    def breakpoints(self):
        return self.knots_t.tolist()

    def with_K(self, K):
        scale = K / self.K_tail
        return Tabulated(self.knots_t, self.knots_gamma * scale, self.t0)

    def to_config(self):
        if self.source is not None:
            return {"kind": self.kind, "csv": str(self.source), "t0": self.t0}
        return {"kind": self.kind, "knots": [[a, b] for a, b in zip(self.knots_t, self.knots_gamma)], "t0": self.t0}

    @classmethod
    def from_csv(cls, path, t0=None):
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(rec[0]), float(rec[1])))
                except ValueError:
                    continue  # header line
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], t0=t0, source=Path(path))


@dataclass(frozen=True)
class Certificate:
    """Admissibility of a damping family.

    ``k_inf`` is inf t*gamma(t) over [t0, inf); ``variation_integral`` is the
    integral of the positive part of (t*gamma)' over the same range (may be
    ``inf``).
    """

    k_inf: float
    exceeds_three: bool
    variation_integral: float
    finite_variation: bool
    method: str
    tail_known: bool = True

    def holds(self) -> bool:
        return self.exceeds_three and self.finite_variation

    def to_dict(self):
        d = asdict(self)
        if math.isinf(self.variation_integral):
            d["variation_integral"] = "inf"
        return d


def gamma(d: Damping, t):
    return d.gamma(t)


def t_gamma_prime_pos(d: Damping, t):
    return d.t_gamma_prime_pos(t)


def big_gamma(d: Damping, s, t):
    if np.any(np.asarray(s) > np.asarray(t)):
        raise ValueError("need s <= t")
    d._check(s)
    return d.big_gamma(s, t)


def _make(k_inf, integral, method, tail_known=True):
    return Certificate(
        k_inf=float(k_inf),
        exceeds_three=bool(k_inf > 3),
        variation_integral=float(integral),
        finite_variation=bool(math.isfinite(integral)),
        method=method,
        tail_known=tail_known,
    )


def _powerlaw_divergence(d: PowerLaw, n_probes=6):
    # quadrature over growing horizons must track K*(T^p - t0^p), which is unbounded
    p = 1 - d.alpha
    for k in range(1, n_probes + 1):
        T = d.t0 * 10.0**k
        q, _ = integrate.quad(lambda u: d.t_gamma_prime_pos(d.t0 * math.exp(u)) * d.t0 * math.exp(u),
                              0.0, math.log(T / d.t0), epsabs=0, epsrel=1e-11, limit=200)
        lower = d.K * (T**p - d.t0**p)
        if q < lower * (1 - 1e-8):
            return q
    return math.inf


def _tabulated_k_inf(d: Tabulated):
    kt, kg = d.knots_t, d.knots_gamma
    slopes = d._slopes()
    best = d.K_tail
    for i in range(slopes.size):
        lo, hi = max(kt[i], d.t0), kt[i + 1]
        if hi <= lo:
            continue
        # t*gamma = t*(g_i + m (t - t_i)) is quadratic; check ends and vertex
        cands = [lo, hi]
        m = slopes[i]
        if m != 0:
            vertex = (m * kt[i] - kg[i]) / (2 * m)
            if lo < vertex < hi:
                cands.append(vertex)
        for c in cands:
            best = min(best, c * (kg[i] + m * (c - kt[i])))
    return best


def _tabulated_rise(d: Tabulated):
    # t*gamma is quadratic on each segment, so the positive part of its
    # derivative integrates to the sum of rises between the segment ends and vertex
    kt, kg = d.knots_t, d.knots_gamma
    slopes = d._slopes()
    total = 0.0
    for i in range(slopes.size):
        lo, hi = max(kt[i], d.t0), kt[i + 1]
        if hi <= lo:
            continue
        m = slopes[i]
        pts = [lo, hi]
        if m != 0:
            vertex = (m * kt[i] - kg[i]) / (2 * m)
            if lo < vertex < hi:
                pts.insert(1, vertex)
        vals = [c * (kg[i] + m * (c - kt[i])) for c in pts]
        total += sum(max(b - a, 0.0) for a, b in zip(vals, vals[1:]))
    return total


def certify(d: Damping) -> Certificate:
    if isinstance(d, OverT):
        return _make(d.K, 0.0, "closed_form")
    if isinstance(d, Shifted):
        if d.a > 0:
            # t*gamma increases towards K; infimum at t0
            return _make(d.K * d.t0 / (d.a + d.t0), d.K * d.a / (d.a + d.t0), "closed_form")
        return _make(d.K, 0.0, "closed_form")
    if isinstance(d, PowerLaw):
        return _make(d.K * d.t0 ** (1 - d.alpha), _powerlaw_divergence(d), "quadrature+tail_bound")
    if isinstance(d, Tabulated):
        return _make(_tabulated_k_inf(d), _tabulated_rise(d), "closed_form", tail_known=False)
    raise TypeError(f"cannot certify {type(d).__name__}")


def tail_kernel_check(d: Damping, s: float, K: float | None = None, decades: float = 3.0):
    """Compare int_s^inf exp(-Gamma(t, s)) dt with the bound s/(K-1).

    The integral is computed by adaptive quadrature over [s, s*10**decades]
    (in log-time) plus the tail beyond, bounded using gamma >= K/t. That tail
    bound is exact for gamma = K/t. Returns ``(numeric, bound)``.
    """
    d._check(s)
    if K is None:
        K = certify(d).k_inf
    if not K > 1:
        raise UnsupportedQuery("kernel bound needs K > 1")
    span = decades * math.log(10.0)

    def integrand(u):
        t = s * math.exp(u)
        return math.exp(-float(d.big_gamma(s, t))) * t

    brk = [math.log(b / s) for b in d.breakpoints() if s < b < s * math.exp(span)]
    head, _ = integrate.quad(integrand, 0.0, span, points=brk or None, epsabs=0, epsrel=1e-13, limit=400)
    cut = s * math.exp(span)
    tail = math.exp(-float(d.big_gamma(s, cut))) * cut / (K - 1)
    return head + tail, s / (K - 1)


def from_config(cfg: dict, base_dir: Path | None = None) -> Damping:
    kind = cfg.get("kind")
    t0 = cfg.get("t0")
    kw = {} if t0 is None else {"t0": float(t0)}
    if kind == "over_t":
        return OverT(cfg["K"], **kw)
    if kind == "shifted":
        return Shifted(cfg["K"], cfg["a"], **kw)
    if kind == "power_law":
        return PowerLaw(cfg["K"], cfg["alpha"], **kw)
    if kind == "tabulated":
        if "csv" in cfg:
            path = Path(cfg["csv"])
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            return Tabulated.from_csv(path, t0=t0)
        knots = np.asarray(cfg["knots"], dtype=float)
        return Tabulated(knots[:, 0], knots[:, 1], t0=t0)
    raise ValueError(f"unknown damping kind {kind!r}")
