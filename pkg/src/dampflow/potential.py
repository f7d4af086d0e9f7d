"""Convex, continuously differentiable potentials on R^n.

Every potential knows its value, analytic gradient, minimum value and a
description of its set of minimizers. ``excess(x)`` returns
``value(x) - min_value`` without the cancellation that a plain subtraction
suffers once ``x`` is within ~1e-8 of a minimizer; the energy diagnostics
rely on it to follow decays over many orders of magnitude.

All evaluation methods accept a single point of shape ``(n,)`` or a batch of
shape ``(m, n)``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "UnsupportedQuery",
    "Potential",
    "Quadratic",
    "LeastSquares",
    "LogSumExp",
    "Huber",
    "Zero",
    "value",
    "gradient",
    "check_gradient_fd",
    "check_convexity_gap",
    "distance_to_argmin",
    "from_config",
    "catalog",
]

_PSD_TOL = 1e-12
_RANK_TOL = 1e-10


class DimensionError(ValueError):
    """Point dimension does not match the potential."""


class UnsupportedQuery(ValueError):
    """The potential carries no information to answer the query."""


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


def _null_basis(mat, tol=_RANK_TOL):
    """Orthonormal basis (columns) of the null space of ``mat``."""
    n = mat.shape[1]
    if mat.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(mat)
    scale = max(1.0, s[0]) if s.size else 1.0
    rank = int(np.sum(s > tol * scale))
    return vt[rank:].T.copy()


class Potential:
    """Base class. Subclasses set ``dim``, ``min_value``, ``argmin_witness``,
    ``argmin_basis`` (``None`` for a singleton argmin) and ``lipschitz``."""

    kind = "abstract"
    dim: int
    min_value: float
    argmin_witness: np.ndarray | None
    argmin_basis: np.ndarray | None
    lipschitz: float

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def excess(self, x):
        return self.value(x) - self.min_value

    def to_config(self) -> dict:
        raise NotImplementedError

    @property
    def argmin_affine(self):
        if self.argmin_basis is None or self.argmin_witness is None:
            return None
        return self.argmin_witness, self.argmin_basis

    def auto_anchors(self) -> list[np.ndarray]:
        """Witness minimizer plus, for an affine argmin, witness +/- each basis vector."""
        if self.argmin_witness is None:
            return []
        base = self.argmin_witness
        anchors = [base.copy()]
        if self.argmin_basis is not None:
            for col in self.argmin_basis.T:
                anchors.append(base + col)
                anchors.append(base - col)
        return anchors

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class Quadratic(Potential):
    """Phi(x) = 1/2 x^T A x - b^T x with A symmetric positive semidefinite.

    ``b`` must lie in the range of ``A``; otherwise Phi is unbounded below.
    A rank-deficient ``A`` gives an affine set of minimizers.
    """

    kind = "quadratic"

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        self.dim = A.shape[0]
        b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float).reshape(-1)
        if b.shape != (self.dim,):
            raise DimensionError("b has the wrong dimension")
        self.A = 0.5 * (A + A.T)
        self.b = b
        evals, evecs = np.linalg.eigh(self.A)
        scale = max(1.0, abs(evals[-1]))
        if evals[0] < -_PSD_TOL * scale:
            raise ValueError(f"A is not positive semidefinite (eigenvalue {evals[0]:.3g})")
        keep = evals > _RANK_TOL * scale
        coords = (evecs[:, keep].T @ b) / evals[keep]
        xstar = evecs[:, keep] @ coords
        if np.linalg.norm(self.A @ xstar - b) > 1e-9 * (1.0 + np.linalg.norm(b)):
            raise ValueError("b is not in the range of A: the potential has no minimizer")
        self.argmin_witness = xstar
        self.argmin_basis = evecs[:, ~keep].copy() if not keep.all() else None
        self.min_value = float(-0.5 * b @ xstar)
        self.lipschitz = float(max(evals[-1], 0.0))

    def value(self, x):
        x = _as_points(x, self.dim)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x) - x @ self.b

    def gradient(self, x):
        x = _as_points(x, self.dim)
        return x @ self.A - self.b

    def excess(self, x):
        d = _as_points(x, self.dim) - self.argmin_witness
        return 0.5 * np.einsum("...i,ij,...j->...", d, self.A, d)

    def to_config(self):
        return {"kind": self.kind, "A": self.A.tolist(), "b": self.b.tolist()}


class LeastSquares(Potential):
    """Phi(x) = 1/2 ||M x - y||^2."""

    kind = "least_squares"

    def __init__(self, M, y):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape != (M.shape[0],):
            raise DimensionError("y must have one entry per row of M")
        self.M, self.y = M, y
        self.dim = M.shape[1]
        xstar, *_ = np.linalg.lstsq(M, y, rcond=None)
        self.argmin_witness = xstar
        basis = _null_basis(M)
        self.argmin_basis = basis if basis.shape[1] else None
        resid = M @ xstar - y
        self.min_value = float(0.5 * resid @ resid)
        s = np.linalg.svd(M, compute_uv=False)
        self.lipschitz = float(s[0] ** 2) if s.size else 0.0

    def value(self, x):
        r = _as_points(x, self.dim) @ self.M.T - self.y
        return 0.5 * np.sum(r * r, axis=-1)

    def gradient(self, x):
        r = _as_points(x, self.dim) @ self.M.T - self.y
        return r @ self.M

    def excess(self, x):
        r = (_as_points(x, self.dim) - self.argmin_witness) @ self.M.T
        return 0.5 * np.sum(r * r, axis=-1)

    def to_config(self):
        return {"kind": self.kind, "M": self.M.tolist(), "y": self.y.tolist()}


def _phi2(d):
    """(exp(d) - 1 - d) / d^2, accurate for small |d|."""
    d = np.asarray(d, dtype=float)
    small = np.abs(d) < 1e-3
    out = np.empty_like(d)
    ds = d[small]
    out[small] = 0.5 + ds * (1.0 / 6 + ds * (1.0 / 24 + ds / 120))
    db = d[~small]
    out[~small] = (np.expm1(db) - db) / (db * db)
    return out


class LogSumExp(Potential):
    """Phi(x) = log sum_i exp(<a_i, x> + b_i).

    The minimizer has no closed form; it is computed once at construction by
    damped gradient descent (Armijo backtracking) until the gradient norm drops
    to ``gtol``. Near that point value, excess and gradient are evaluated in a
    form anchored at the stored minimizer so they keep relative accuracy as
    x approaches it.
    """

    kind = "log_sum_exp"
    _near = 0.5

    def __init__(self, rows, offsets=None, gtol=1e-12, max_iter=200_000):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        self.rows = rows
        self.dim = rows.shape[1]
        offsets = np.zeros(rows.shape[0]) if offsets is None else np.asarray(offsets, dtype=float).reshape(-1)
        if offsets.shape != (rows.shape[0],):
            raise DimensionError("one offset per row required")
        self.offsets = offsets
        self.lipschitz = float(np.max(np.sum(rows * rows, axis=1)))
        xstar = self._descend(gtol, max_iter)
        self.argmin_witness = xstar
        basis = _null_basis(rows)
        self.argmin_basis = basis if basis.shape[1] else None
        self.min_value = float(self._plain_value(xstar))
        z = rows @ xstar + offsets
        w = np.exp(z - z.max())
        self._wstar = w / w.sum()
        self._gstar = self._wstar @ rows

    def _plain_value(self, x):
        z = x @ self.rows.T + self.offsets
        zmax = np.max(z, axis=-1, keepdims=True)
        return np.squeeze(zmax, -1) + np.log(np.sum(np.exp(z - zmax), axis=-1))

    def _plain_gradient(self, x):
        z = x @ self.rows.T + self.offsets
        w = np.exp(z - np.max(z, axis=-1, keepdims=True))
        w /= np.sum(w, axis=-1, keepdims=True)
        return w @ self.rows

    def _descend(self, gtol, max_iter):
        x = np.zeros(self.dim)
        step = 1.0 / max(self.lipschitz, 1e-300)
        f = self._plain_value(x)
        for _ in range(max_iter):
            g = self._plain_gradient(x)
            gn2 = g @ g
            if np.sqrt(gn2) <= gtol:
                return x
            t = 2.0 * step
            while True:
                trial = x - t * g
                ft = self._plain_value(trial)
                if ft <= f - 0.5 * t * gn2 or t < 1e-3 * step:
                    break
                t *= 0.5
            x, f = trial, ft
        raise ValueError("log-sum-exp potential has no attainable minimizer (descent did not converge)")

    def _anchored(self, x):
        d = (x - self.argmin_witness) @ self.rows.T
        return d, np.max(np.abs(d), axis=-1) <= self._near

    def value(self, x):
        return self._plain_value(_as_points(x, self.dim))

    def excess(self, x):
        x = _as_points(x, self.dim)
        d, near = self._anchored(x)
        lin = (x - self.argmin_witness) @ self._gstar
        s = lin + np.sum(self._wstar * d * d * _phi2(d), axis=-1)
        return np.where(near, np.log1p(s), self._plain_value(x) - self.min_value)

    def gradient(self, x):
        x = _as_points(x, self.dim)
        d, near = self._anchored(x)
        em1 = np.expm1(np.minimum(d, self._near))
        s = np.sum(self._wstar * em1, axis=-1, keepdims=True)
        anchored = self._gstar + ((self._wstar * (em1 - s)) / (1.0 + s)) @ self.rows
        return np.where(near[..., None], anchored, self._plain_gradient(x))

    def to_config(self):
        return {"kind": self.kind, "rows": self.rows.tolist(), "offsets": self.offsets.tolist()}


class Huber(Potential):
    """Separable Huber loss around ``center``, quadratic for |r_i| <= delta.

    C^1 with a 1-Lipschitz gradient; the gradient clamps to +/-delta outside
    the quadratic region.
    """

    kind = "huber"

    def __init__(self, delta, center):
        if not delta > 0:
            raise ValueError("delta must be positive")
        self.delta = float(delta)
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.dim = self.center.size
        self.argmin_witness = self.center.copy()
        self.argmin_basis = None
        self.min_value = 0.0
        self.lipschitz = 1.0

    def value(self, x):
        r = np.abs(_as_points(x, self.dim) - self.center)
        quad = r <= self.delta
        per = np.where(quad, 0.5 * r * r, self.delta * (r - 0.5 * self.delta))
        return np.sum(per, axis=-1)

    def gradient(self, x):
        return np.clip(_as_points(x, self.dim) - self.center, -self.delta, self.delta)

    def excess(self, x):
        return self.value(x)

    def to_config(self):
        return {"kind": self.kind, "delta": self.delta, "center": self.center.tolist()}


class Zero(Potential):
    """Phi = 0; every point is a minimizer."""

    kind = "zero"

    def __init__(self, dim):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        self.argmin_witness = np.zeros(self.dim)
        self.argmin_basis = np.eye(self.dim)
        self.min_value = 0.0
        self.lipschitz = 0.0

    def value(self, x):
        x = _as_points(x, self.dim)
        return np.zeros(x.shape[:-1])

    def gradient(self, x):
        return np.zeros_like(_as_points(x, self.dim))

    def excess(self, x):
        return self.value(x)

    def to_config(self):
        return {"kind": self.kind, "dim": self.dim}


def value(p: Potential, x):
    return p.value(x)


def gradient(p: Potential, x):
    return p.gradient(x)


def check_gradient_fd(p: Potential, x, step: float = 1e-5) -> float:
    """Largest coordinate-wise error between the analytic gradient and a
    central difference, relative to ``max(1, |g_i|)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = _as_points(x, p.dim).reshape(-1)
    g = p.gradient(x)
    worst = 0.0
    for i in range(p.dim):
        e = np.zeros(p.dim)
        e[i] = step
        fd = (p.value(x + e) - p.value(x - e)) / (2 * step)
        worst = max(worst, abs(fd - g[i]) / max(1.0, abs(g[i])))
    return float(worst)


def check_convexity_gap(p: Potential, x, y) -> float:
    """Phi(y) - Phi(x) - <grad Phi(x), y - x>; non-negative for convex Phi."""
    x = _as_points(x, p.dim)
    y = _as_points(y, p.dim)
    return float(p.value(y) - p.value(x) - p.gradient(x) @ (y - x))


def distance_to_argmin(p: Potential, x) -> float:
    x = _as_points(x, p.dim)
    if p.argmin_witness is None:
        raise UnsupportedQuery(f"{p.kind} potential has no argmin description")
    r = x - p.argmin_witness
    if p.argmin_basis is not None:
        r = r - (r @ p.argmin_basis) @ p.argmin_basis.T
    return float(np.linalg.norm(r, axis=-1))


def from_config(cfg: dict) -> Potential:
    """Build a potential from its config descriptor (kind tag + parameters)."""
    kind = cfg.get("kind")
    if kind == "quadratic":
        return Quadratic(cfg["A"], cfg.get("b"))
    if kind == "least_squares":
        return LeastSquares(cfg["M"], cfg["y"])
    if kind == "log_sum_exp":
        return LogSumExp(cfg["rows"], cfg.get("offsets"))
    if kind == "huber":
        return Huber(cfg["delta"], cfg["center"])
    if kind == "zero":
        return Zero(cfg["dim"])
    raise ValueError(f"unknown potential kind {kind!r}")


def catalog() -> dict[str, Potential]:
    """Named representatives of every potential family, used by the
    gradient and convexity property checks."""
    return {
        "quadratic_identity_2d": Quadratic(np.eye(2)),
        "quadratic_spd_3d": Quadratic([[3.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.0]], [1.0, -2.0, 0.5]),
        "quadratic_degenerate": Quadratic(np.diag([1.0, 0.0])),
        "least_squares_full_rank": LeastSquares([[1.0, 2.0], [0.5, -1.0], [2.0, 0.3]], [1.0, 0.0, -1.0]),
        "least_squares_rank_deficient": LeastSquares([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]], [1.0, 1.0]),
        "log_sum_exp_1d": LogSumExp([[1.0], [-1.0]], [0.0, 0.0]),
        "log_sum_exp_2d": LogSumExp([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], [0.3, -0.2, 0.1]),
        "log_sum_exp_symmetric": LogSumExp([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
        "huber_2d": Huber(1.0, [0.5, -0.5]),
        "zero_2d": Zero(2),
    }
