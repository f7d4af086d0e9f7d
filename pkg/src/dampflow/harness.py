"""Scenario configuration, runs, sweeps and oracle comparisons.

A scenario is a single JSON document::

    {
      "id": "quadratic-1d-K4",
      "potential": {"kind": "quadratic", "A": [[1.0]], "b": [0.0]},
      "damping": {"kind": "over_t", "K": 4.0},
      "x0": [1.0], "v0": [0.0],
      "t0": 1.0, "T": 10000.0,
      "rel_tol": 1e-9, "abs_tol": 1e-12,
      "anchors": "auto",
      "points_per_decade": 200
    }

``run_scenario`` writes ``trajectory.csv``, one ``diagnostics_<i>.ndjson``
per anchor, ``report.json`` and ``timing.json`` into the output directory.
Everything except ``timing.json`` is a deterministic function of the config.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .damping import Certificate, Damping, certify, tail_kernel_check
from .damping import from_config as damping_from_config
from .integrator import IntegrationError, integrate, log_schedule, reference_integrate
from .potential import Potential, UnsupportedQuery, distance_to_argmin
from .potential import from_config as potential_from_config

__all__ = [
    "ScenarioConfig",
    "RunReport",
    "run_scenario",
    "sweep_K",
    "explore_limit_case",
    "compare_oracle",
    "bundled_scenarios",
    "bundled_path",
    "evaluate_checks",
    "write_table",
    "CHECK_NAMES",
    "EXIT_OK",
    "EXIT_CHECK_FAILED",
    "EXIT_INTEGRATION_FAILED",
]

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INTEGRATION_FAILED = 0, 2, 3

PASS, FAIL = "pass", "fail"
SKIPPED = "skipped(hypothesis unmet)"
INAPPLICABLE = "inapplicable"
NOT_EVALUATED = "not evaluated"

OUTSIDE = "outside theorem hypotheses"
LIMIT_BANNER = "exploratory: limit case K = 3, " + OUTSIDE

# thresholds of the o(1/t^2) indicators
SLOPE_MAX = -2.05
T2W_RATIO_MAX = 0.9
SW_TAIL_MAX = 0.2

STATEMENTS = {
    "energy_nonincreasing": "W(t) = |x'|^2/2 + Phi(x) - min Phi is non-increasing",
    "energy_dissipation_residual": "W' = -gamma |x'|^2",
    "distance_identity_residual": "h'' + gamma h' = |x'|^2 + <grad Phi(x), x* - x>",
    "energy_bound_margin": "W <= 3/2 |x'|^2 - h'' - gamma h'",
    "scaled_energy_identity_residual": "(t^2 W)' = 2 t W - t^2 gamma |x'|^2",
    "integrated_bound_margin": "A int s W + B t^2 W + eps h <= C + int [(s gamma)']_+ h",
    "gronwall_bound": "sup h <= (C/eps) exp((1/eps) int [(s gamma)']_+)",
    "fubini_tail_bound": "int [h']_+ <= (t0 |h'(t0)| + int s |x'|^2) / (K - 1)",
    "tail_kernel_bound": "int_s^inf exp(-Gamma(t, s)) dt <= s / (K - 1)",
    "scaled_energy_settles": "t^2 W(t) has a limit as t -> inf",
    "decay_slope": "W(t) = o(1/t^2): log-log slope of W",
    "decay_t2W_ratio": "W(t) = o(1/t^2): t^2 W(T) / t^2 W(T/10)",
    "decay_sW_tail_ratio": "int t W < inf: tail share of int s W",
    "opial_convergence": "x(t) converges to a minimizer of Phi",
}
CHECK_NAMES = tuple(STATEMENTS)


@dataclass
class ScenarioConfig:
    id: str
    potential: dict
    damping: dict
    x0: list
    v0: list
    t0: float | None = None
    T: float = 1e4
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    anchors: str | list = "auto"
    points_per_decade: int = 200
    output_dir: str | None = None
    base_dir: Path | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "ScenarioConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__ and k != "base_dir"}
        missing = {"id", "potential", "damping", "x0", "v0"} - set(known)
        if missing:
            raise ValueError(f"scenario is missing {sorted(missing)}")
        cfg = cls(**known, base_dir=base_dir)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def to_dict(self) -> dict:
        out = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__ if k != "base_dir"}
        if out["output_dir"] is None:
            del out["output_dir"]
        return out

    def build(self) -> tuple[Potential, Damping]:
        p = potential_from_config(self.potential)
        dcfg = dict(self.damping)
        if self.t0 is not None and "t0" not in dcfg:
            dcfg["t0"] = self.t0
        return p, damping_from_config(dcfg, self.base_dir)

    def start_time(self, d: Damping) -> float:
        return d.t0 if self.t0 is None else float(self.t0)

    def validate(self):
        p, d = self.build()
        t0 = self.start_time(d)
        if not t0 > 0:
            raise ValueError("t0 must be positive")
        if not self.T > t0:
            raise ValueError("need T > t0")
        if len(self.x0) != p.dim or len(self.v0) != p.dim:
            raise ValueError(f"x0 and v0 must have dimension {p.dim}")
        if self.anchors != "auto":
            for a in self.anchors:
                if len(a) != p.dim:
                    raise ValueError(f"anchors must have dimension {p.dim}")

    def with_damping(self, d: Damping, suffix: str) -> "ScenarioConfig":
        new = copy.deepcopy(self)
        new.damping = d.to_config()
        new.id = f"{self.id}{suffix}"
        new.output_dir = None
        return new

    def resolve_anchors(self, p: Potential) -> list[np.ndarray]:
        if self.anchors == "auto":
            return p.auto_anchors()
        return [np.asarray(a, dtype=float) for a in self.anchors]


@dataclass
class RunReport:
    scenario: str
    status: str
    certificate: Certificate
    checks: list
    banner: str | None = None
    constants: list = field(default_factory=list)
    decay: dict | None = None
    opial: dict | None = None
    steps: dict = field(default_factory=dict)
    error: str | None = None
    wall_seconds: float = 0.0

    @property
    def exit_code(self) -> int:
        if self.status != "ok":
            return EXIT_INTEGRATION_FAILED
        if any(c["verdict"] == FAIL for c in self.checks):
            return EXIT_CHECK_FAILED
        return EXIT_OK

    def check(self, name) -> dict:
        for c in self.checks:
            if c["name"] == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        """JSON-ready report; wall-clock time is kept out so reports are reproducible."""
        return {
            "scenario": self.scenario,
            "status": self.status,
            "banner": self.banner,
            "exit_code": self.exit_code,
            "certificate": self.certificate.to_dict(),
            "constants": self.constants,
            "checks": self.checks,
            "decay": self.decay,
            "opial": self.opial,
            "steps": self.steps,
            "error": self.error,
        }


def _finite(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _entry(name, value, tolerance, comparison, verdict=None):
    if verdict is None:
        if comparison == "<=":
            verdict = PASS if value <= tolerance else FAIL
        else:
            verdict = PASS if value >= tolerance else FAIL
    return {
        "name": name,
        "value": _finite(value),
        "tolerance": tolerance,
        "comparison": comparison,
        "verdict": verdict,
        "statement": STATEMENTS[name],
    }


def _skip(name, tolerance, comparison, value=None, verdict=SKIPPED):
    return _entry(name, value, tolerance, comparison, verdict)


def _ratio(a, b):
    if b > 0:
        return a / b
    return 0.0 if a <= 0 else math.inf


def evaluate_checks(traj, p: Potential, d: Damping, cert: Certificate, anchors) -> tuple[list, list, dict, dict, list]:
    """All checks for one trajectory.

    Returns ``(checks, constants, decay, opial, series)`` where ``series``
    holds one ``DiagnosticSeries`` per anchor.
    """
    grid = dg.evaluation_grid(traj, p, d)
    admissible = cert.holds()
    checks = [
        _entry("energy_nonincreasing", dg.energy_monotonicity(traj, p), 1e-12, "<="),
        _entry("energy_dissipation_residual", dg.energy_dissipation_residual(traj, p, d, grid), 1e-6, "<="),
    ]
    series = [dg.anchored_series(traj, p, d, a, grid) for a in anchors]
    consts = [dg.constants_for(s, d, cert) for s in series]
    constants = [{"anchor": s.anchor.tolist(), **c.to_dict()} for s, c in zip(series, consts)]

    if not series:
        for name, tol, cmp in [("distance_identity_residual", 1e-6, "<="), ("energy_bound_margin", -1e-8, ">="),
                               ("scaled_energy_identity_residual", 1e-6, "<="),
                               ("integrated_bound_margin", -1e-6, ">="), ("gronwall_bound", 1 + 1e-6, "<="),
                               ("fubini_tail_bound", 1 + 1e-6, "<=")]:
            checks.append(_skip(name, tol, cmp))
    else:
        checks.append(_entry("distance_identity_residual",
                             max(dg.distance_identity_residual(s) for s in series), 1e-6, "<="))
        checks.append(_entry("energy_bound_margin", min(dg.energy_bound_margin(s) for s in series), -1e-8, ">="))
        checks.append(_entry("scaled_energy_identity_residual",
                             dg.scaled_energy_identity_residual(series[0]), 1e-6, "<="))
        if cert.exceeds_three:
            worst = min(dg.integrated_bound_margin(s, c, cert) / (1 + abs(c.offset)) for s, c in zip(series, consts))
            checks.append(_entry("integrated_bound_margin", worst, -1e-6, ">="))
        else:
            checks.append(_skip("integrated_bound_margin", -1e-6, ">="))
        if admissible:
            results = [dg.gronwall_bound_check(s, c, cert.variation_integral, cert) for s, c in zip(series, consts)]
            applicable = [r for r in results if r["verdict"] != INAPPLICABLE]
            if applicable:
                ratio = max(_ratio(r["sup_h"], r["bound"]) for r in applicable)
                checks.append(_entry("gronwall_bound", ratio, 1 + 1e-6, "<="))
            else:
                checks.append(_skip("gronwall_bound", 1 + 1e-6, "<=", verdict=INAPPLICABLE))
            for r, c in zip(results, constants):
                c["gronwall"] = {k: _finite(v) if k != "verdict" else v for k, v in r.items()}
        else:
            checks.append(_skip("gronwall_bound", 1 + 1e-6, "<="))
        if cert.exceeds_three:
            fub = [dg.fubini_tail_check(s, cert) for s in series]
            checks.append(_entry("fubini_tail_bound", max(_ratio(r["lhs"], r["rhs"]) for r in fub), 1 + 1e-6, "<="))
            for r, c in zip(fub, constants):
                c["fubini"] = {k: _finite(v) if k != "verdict" else v for k, v in r.items()}
        else:
            checks.append(_skip("fubini_tail_bound", 1 + 1e-6, "<="))

    if cert.exceeds_three:
        worst = 0.0
        for s in (traj.t0, math.sqrt(traj.t0 * traj.T), traj.T):
            numeric, bound = tail_kernel_check(d, s, cert.k_inf)
            worst = max(worst, numeric / bound)
        checks.append(_entry("tail_kernel_bound", worst, 1 + 1e-8, "<="))
    else:
        checks.append(_skip("tail_kernel_bound", 1 + 1e-8, "<="))

    decay = None
    if series:
        try:
            decay = dg.decay_report(series[0])
        except ValueError as exc:
            decay = {"error": str(exc)}
    gate = None if admissible else SKIPPED
    if series and "error" not in decay:
        checks.append(_entry("scaled_energy_settles", dg.scaled_energy_variation(series[0]), 0.1, "<=", gate))
        slope = decay["slope"]
        if slope is None:
            # W vanishes on the window: trivially o(1/t^2)
            checks.append(_entry("decay_slope", None, SLOPE_MAX, "<=", gate or PASS))
        else:
            checks.append(_entry("decay_slope", slope, SLOPE_MAX, "<=", gate))
        checks.append(_entry("decay_t2W_ratio", decay["t2W_ratio"], T2W_RATIO_MAX, "<=", gate))
        checks.append(_entry("decay_sW_tail_ratio", decay["sW_tail_ratio"], SW_TAIL_MAX, "<=", gate))
        decay = {k: _finite(v) for k, v in decay.items()}
    else:
        for name, tol in [("scaled_energy_settles", 0.1), ("decay_slope", SLOPE_MAX),
                          ("decay_t2W_ratio", T2W_RATIO_MAX), ("decay_sW_tail_ratio", SW_TAIL_MAX)]:
            checks.append(_skip(name, tol, "<=", verdict=gate or NOT_EVALUATED))

    opial = None
    if anchors:
        res = dg.opial_convergence_check(traj, p, anchors)
        limit = res["limit_candidate"]
        try:
            dist = distance_to_argmin(p, limit)
        except UnsupportedQuery:
            dist = None
        tols = [1e-4 * (1 + np.linalg.norm(a)) for a in anchors]
        score = max([o / t for o, t in zip(res["per_anchor_oscillation"], tols)]
                    + [res["phi_gap"] / 1e-6, res["displacement"] / 1e-4])
        opial = {
            "limit_candidate": limit.tolist(),
            "distance_to_argmin": dist,
            "per_anchor_oscillation": res["per_anchor_oscillation"],
            "phi_gap": res["phi_gap"],
            "displacement": res["displacement"],
            "verdict": res["verdict"],
        }
        checks.append(_entry("opial_convergence", score, 1.0, "<=", gate))
    else:
        checks.append(_skip("opial_convergence", 1.0, "<="))
    return checks, constants, decay, opial, series


def _not_evaluated() -> list:
    out = []
    for name in CHECK_NAMES:
        out.append({"name": name, "value": None, "tolerance": None, "comparison": None,
                    "verdict": NOT_EVALUATED, "statement": STATEMENTS[name]})
    return out


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def run_scenario(cfg: ScenarioConfig, out_dir=None, write: bool = True, banner: str | None = None) -> RunReport:
    """Certify, integrate, evaluate every check and persist the artifacts.

    Integration failures do not raise: the report carries status
    ``"integration_failure"``, every check is ``"not evaluated"`` and
    ``exit_code`` is 3.
    """
    start = time.perf_counter()
    p, d = cfg.build()
    cert = certify(d)
    if banner is None and not cert.holds():
        banner = "exploratory: " + OUTSIDE
    t0 = cfg.start_time(d)
    anchors = cfg.resolve_anchors(p)
    out = None
    if write:
        out = Path(out_dir or cfg.output_dir or Path("runs") / cfg.id)
        out.mkdir(parents=True, exist_ok=True)
    try:
        traj = integrate(p, d, cfg.x0, cfg.v0, t0=t0, T=cfg.T, rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol,
                         points_per_decade=cfg.points_per_decade)
    except IntegrationError as exc:
        report = RunReport(cfg.id, "integration_failure", cert, _not_evaluated(), banner=banner,
                           error=str(exc), steps={"failed_at": exc.t})
        report.wall_seconds = time.perf_counter() - start
        if out is not None:
            _dump_json(report.to_dict(), out / "report.json")
            _dump_json({"wall_seconds": report.wall_seconds}, out / "timing.json")
        return report

    checks, constants, decay, opial, series = evaluate_checks(traj, p, d, cert, anchors)
    steps = {"accepted": traj.n_accepted, "rejected": traj.n_rejected, "rhs_evaluations": traj.n_rhs,
             "samples": int(traj.t.size)}
    report = RunReport(cfg.id, "ok", cert, checks, banner=banner, constants=constants, decay=decay,
                       opial=opial, steps=steps)
    if out is not None:
        traj.write_csv(out / "trajectory.csv")
        for i, s in enumerate(series):
            s.write_ndjson(out / f"diagnostics_{i}.ndjson")
    report.wall_seconds = time.perf_counter() - start
    if out is not None:
        _dump_json(report.to_dict(), out / "report.json")
        _dump_json({"wall_seconds": report.wall_seconds}, out / "timing.json")
    return report


SWEEP_COLUMNS = ("K", "label", "status", "slope", "t2W_end", "t2W_ratio", "sW_tail_ratio", "displacement")


def _sweep_row(cfg: ScenarioConfig, K: float, out_dir):
    p, d = cfg.build()
    dk = d.with_K(K)
    sub = cfg.with_damping(dk, f"-K{K:g}")
    cert = certify(dk)
    label = "admissible" if cert.holds() else OUTSIDE
    row = dict.fromkeys(SWEEP_COLUMNS)
    row.update(K=K, label=label)
    target = None if out_dir is None else Path(out_dir) / sub.id
    report = run_scenario(sub, target, write=out_dir is not None)
    row["status"] = report.status
    if report.status == "ok":
        dec = report.decay or {}
        row.update(slope=dec.get("slope"), t2W_end=dec.get("t2W_end"), t2W_ratio=dec.get("t2W_ratio"),
                   sW_tail_ratio=dec.get("sW_tail_ratio"))
        if report.opial is not None:
            row["displacement"] = report.opial["displacement"]
    return row


def sweep_K(base: ScenarioConfig, K_values, workers: int = 1, out_dir=None) -> list[dict]:
    """One run per K reusing ``base``; rows with K_inf <= 3 are labeled as
    outside the theorem's hypotheses but still executed.

    Writes ``sweep.csv`` into ``out_dir`` when given.
    """
    K_values = [float(k) for k in K_values]
    if any(k <= 0 for k in K_values):
        raise ValueError("K values must be positive")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, [base] * len(K_values), K_values, [out_dir] * len(K_values)))
    else:
        rows = [_sweep_row(base, k, out_dir) for k in K_values]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_table(rows, Path(out_dir) / "sweep.csv")
    return rows


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in SWEEP_COLUMNS})


def explore_limit_case(base: ScenarioConfig, out_dir=None, write: bool = True) -> RunReport:
    """Run ``base`` with its damping rescaled to K = 3, under an exploratory banner."""
    _, d = base.build()
    cfg = base.with_damping(d.with_K(3.0), "-K3")
    return run_scenario(cfg, out_dir, write=write, banner=LIMIT_BANNER)


def compare_oracle(cfg: ScenarioConfig, h: float = 1e-5, horizon: float = 100.0) -> dict:
    """Sup-norm gap between the adaptive solver and fixed-step RK4 on
    ``[t0, min(T, horizon)]``, over positions and velocities at the shared
    log-spaced sample times."""
    p, d = cfg.build()
    t0 = cfg.start_time(d)
    T = min(cfg.T, horizon)
    if not T > t0:
        raise ValueError("oracle horizon must exceed t0")
    times = log_schedule(t0, T, cfg.points_per_decade)
    a = integrate(p, d, cfg.x0, cfg.v0, t0=t0, T=T, rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol, output_times=times)
    r = reference_integrate(p, d, cfg.x0, cfg.v0, t0=t0, T=T, h=h, output_times=times)
    gap = np.max(np.abs(np.hstack([a.x - r.x, a.v - r.v])), axis=1)
    i = int(np.argmax(gap))
    scale = 1.0 + np.max(np.linalg.norm(r.x, axis=1))
    return {"sup_error": float(gap[i]), "at_t": float(times[i]), "horizon": T, "h": h,
            "state_scale": float(scale), "rk4_steps": r.n_accepted}


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled scenario (``name`` with or without ``.json``)."""
    if not name.endswith(".json"):
        name += ".json"
    path = Path(str(resources.files("dampflow") / "scenarios" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario {name}")
    return path


def bundled_scenarios() -> dict[str, ScenarioConfig]:
    root = Path(str(resources.files("dampflow") / "scenarios"))
    out = {}
    for path in sorted(root.glob("*.json")):
        cfg = ScenarioConfig.from_json(path)
        out[cfg.id] = cfg
    return out
