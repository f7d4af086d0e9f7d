"""The acceptance suite: ten criteria over the bundled scenarios.

``AcceptanceSuite`` runs each bundled scenario once (artifacts go into a work
directory) and reuses the reports across criteria. Each ``criterion_<n>``
method returns an ``Outcome``; ``run_all`` evaluates all of them.
"""

from __future__ import annotations

import filecmp
import json
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .damping import OverT, PowerLaw, Shifted, certify, tail_kernel_check
from .diagnostics import energy
from .harness import bundled_scenarios, compare_oracle, run_scenario
from .integrator import integrate, reference_integrate
from .potential import Zero, catalog, check_convexity_gap, check_gradient_fd

__all__ = ["Outcome", "AcceptanceSuite", "TITLES"]

TITLES = {
    1: "stationary invariance",
    2: "closed-form free flow",
    3: "energy dissipation",
    4: "energy and distance identities",
    5: "proof inequalities",
    6: "decay and convergence indicators",
    7: "damping certification",
    8: "oracle agreement",
    9: "gradient and convexity oracles",
    10: "determinism",
}

# scenarios whose indicators criterion 6 examines
INDICATOR_SCENARIOS = (
    "quadratic-1d-K4", "quadratic-2d-K4", "quadratic-2d-K10",
    "degenerate-quadratic-K4", "degenerate-quadratic-K10",
    "least-squares-K4", "least-squares-K10",
    "logsumexp-K4", "logsumexp-K10",
)


@dataclass
class Outcome:
    number: int
    passed: bool
    detail: str

    @property
    def title(self):
        return TITLES[self.number]

    def line(self):
        return f"criterion {self.number:2d} [{'PASS' if self.passed else 'FAIL'}] {self.title}: {self.detail}"


def _free_flow_exact(t):
    return 1.0 + (1.0 - t**-3.0) / 3.0


class AcceptanceSuite:
    def __init__(self, workdir=None, seed: int = 20240601):
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="dampflow-acceptance-")
            workdir = self._tmp.name
        self.workdir = Path(workdir)
        self.seed = seed
        self.scenarios = bundled_scenarios()
        self._reports = {}

    def report(self, sid):
        if sid not in self._reports:
            cfg = self.scenarios[sid]
            self._reports[sid] = run_scenario(cfg, self.workdir / "first" / sid)
        return self._reports[sid]

    def reports(self):
        return {sid: self.report(sid) for sid in self.scenarios}

    def criterion_1(self) -> Outcome:
        cfg = self.scenarios["stationary"]
        p, d = cfg.build()
        traj = integrate(p, d, cfg.x0, cfg.v0, T=cfg.T)
        xmax = float(np.max(np.linalg.norm(traj.x, axis=1)))
        wmax = float(np.max(np.abs(energy(p, traj.x, traj.v))))
        ok = xmax <= 1e-9 and wmax <= 1e-12 and self.report("stationary").exit_code == 0
        return Outcome(1, ok, f"max|x| = {xmax:.2e}, max W = {wmax:.2e}")

    def criterion_2(self) -> Outcome:
        p, d = Zero(1), OverT(4.0)
        short = integrate(p, d, [1.0], [1.0], T=1e3)
        err = float(np.max(np.abs(short.x[:, 0] - _free_flow_exact(short.t))))
        rep = self.report("free-flow-K4")
        x_end = np.loadtxt(self.workdir / "first" / "free-flow-K4" / "trajectory.csv", delimiter=",",
                           skiprows=1, ndmin=2)[-1, 1]
        slope = rep.decay["slope"]
        fub = rep.constants[0]["fubini"]
        ok = (err <= 1e-8 and abs(x_end - 4.0 / 3.0) <= 1e-6 and abs(slope + 8.0) <= 0.01
              and abs(fub["lhs"] - 7.0 / 18.0) <= 1e-4 and abs(fub["rhs"] - 7.0 / 18.0) <= 1e-4
              and fub["lhs"] <= fub["rhs"] * (1 + 1e-6))
        return Outcome(2, ok, f"sup err {err:.2e}, x(T)-4/3 = {x_end - 4 / 3:.1e}, slope {slope:.4f}, "
                              f"fubini {fub['lhs']:.6f} <= {fub['rhs']:.6f}")

    def criterion_3(self) -> Outcome:
        worst_inc, worst_res, bad = 0.0, 0.0, []
        for sid, rep in self.reports().items():
            inc = rep.check("energy_nonincreasing")
            res = rep.check("energy_dissipation_residual")
            worst_inc = max(worst_inc, inc["value"])
            worst_res = max(worst_res, res["value"])
            if inc["verdict"] != "pass" or res["value"] > 1e-6:
                bad.append(sid)
        return Outcome(3, not bad, f"max W increase {worst_inc:.1e}, max residual {worst_res:.1e}"
                                   + (f"; failing {bad}" if bad else ""))

    def criterion_4(self) -> Outcome:
        worst = {"distance_identity_residual": 0.0, "scaled_energy_identity_residual": 0.0}
        bad = []
        for sid, rep in self.reports().items():
            for name in worst:
                v = rep.check(name)["value"]
                worst[name] = max(worst[name], v)
                if v > 1e-6:
                    bad.append((sid, name))
        return Outcome(4, not bad, f"distance identity {worst['distance_identity_residual']:.1e}, "
                                   f"scaled energy identity {worst['scaled_energy_identity_residual']:.1e}"
                                   + (f"; failing {bad}" if bad else ""))

    def criterion_5(self) -> Outcome:
        bad = []
        worst_eb, worst_ib, worst_k = math.inf, math.inf, 0.0
        for sid, rep in self.reports().items():
            eb = rep.check("energy_bound_margin")["value"]
            worst_eb = min(worst_eb, eb)
            if eb < -1e-8:
                bad.append((sid, "energy_bound_margin"))
            if rep.certificate.exceeds_three:
                ib = rep.check("integrated_bound_margin")
                worst_ib = min(worst_ib, ib["value"])
                if ib["verdict"] != "pass":
                    bad.append((sid, "integrated_bound_margin"))
                kb = rep.check("tail_kernel_bound")
                worst_k = max(worst_k, kb["value"])
                if kb["verdict"] != "pass":
                    bad.append((sid, "tail_kernel_bound"))
        shifted = self.report("shifted-K5-a1-t0-10")
        if not (shifted.certificate.exceeds_three and shifted.check("integrated_bound_margin")["verdict"] == "pass"):
            bad.append(("shifted-K5-a1-t0-10", "integrated_bound_margin"))
        eq_term = _final_eqh(self.workdir / "first" / "shifted-K5-a1-t0-10")
        if not eq_term > 0:
            bad.append(("shifted-K5-a1-t0-10", "variation term is zero"))
        exact = []
        for K, s in ((4.0, 2.0), (10.0, 1.0), (4.0, 7.5)):
            num, bound = tail_kernel_check(OverT(K), s)
            exact.append(abs(num - bound) / bound)
        if max(exact) > 1e-8:
            bad.append(("OverT", "kernel equality"))
        return Outcome(5, not bad, f"min energy-bound margin {worst_eb:.1e}, min integrated margin {worst_ib:.2e}, "
                                   f"max kernel ratio {worst_k:.10f}, K/t equality gap {max(exact):.1e}, "
                                   f"shifted variation term {eq_term:.3e}" + (f"; failing {bad}" if bad else ""))

    def criterion_6(self) -> Outcome:
        bad, slopes = [], []
        for sid in INDICATOR_SCENARIOS:
            rep = self.report(sid)
            for name in ("decay_slope", "decay_t2W_ratio", "decay_sW_tail_ratio", "opial_convergence"):
                if rep.check(name)["verdict"] != "pass":
                    bad.append((sid, name))
            op = rep.opial
            if op["phi_gap"] > 1e-6 or op["displacement"] > 1e-4 or max(op["per_anchor_oscillation"]) > 1e-4:
                bad.append((sid, "opial tolerances"))
            slopes.append(rep.decay["slope"])
        dists = []
        for sid in ("degenerate-quadratic-K4", "degenerate-quadratic-K10"):
            dist = self.report(sid).opial["distance_to_argmin"]
            dists.append(dist)
            if dist > 1e-4:
                bad.append((sid, "distance to argmin"))
        return Outcome(6, not bad, f"{len(INDICATOR_SCENARIOS)} scenarios, slopes in [{min(slopes):.2f}, "
                                   f"{max(slopes):.2f}], degenerate limit distance {max(dists):.1e}"
                                   + (f"; failing {bad}" if bad else ""))

    def criterion_7(self) -> Outcome:
        c1 = certify(OverT(4.0))
        c2 = certify(Shifted(5.0, 1.0, t0=10.0))
        c3 = certify(PowerLaw(2.0, 0.5))
        c4 = certify(OverT(2.0))
        ok = (c1.k_inf == 4.0 and c1.variation_integral == 0.0 and c1.exceeds_three and c1.finite_variation
              and abs(c2.k_inf - 50 / 11) <= 1e-9 and abs(c2.variation_integral - 5 / 11) <= 1e-9
              and not c3.finite_variation and not c4.exceeds_three)
        return Outcome(7, ok, f"Shifted K_inf {c2.k_inf:.10f}, variation {c2.variation_integral:.10f}; "
                              f"power law variation {c3.variation_integral}; K=2 exceeds 3: {c4.exceeds_three}")

    def criterion_8(self) -> Outcome:
        worst, where, bad = 0.0, None, []
        for sid, cfg in self.scenarios.items():
            res = compare_oracle(cfg, h=1e-5)
            if res["sup_error"] > worst:
                worst, where = res["sup_error"], sid
            if res["sup_error"] > 1e-7:
                bad.append(sid)
        ratios = rk4_order_ratios()
        order_ok = all(12.8 <= r <= 19.2 for r in ratios)
        ok = not bad and order_ok
        return Outcome(8, ok, f"max adaptive/RK4 gap {worst:.2e} ({where}); error ratios on halving h "
                              + ", ".join(f"{r:.2f}" for r in ratios) + (f"; failing {bad}" if bad else ""))

    def criterion_9(self) -> Outcome:
        rng = np.random.default_rng(self.seed)
        worst_fd, worst_gap = 0.0, math.inf
        for name, p in catalog().items():
            for _ in range(10):
                worst_fd = max(worst_fd, check_gradient_fd(p, rng.normal(scale=2.0, size=p.dim), 1e-5))
            for _ in range(100):
                x, y = rng.normal(scale=2.0, size=(2, p.dim))
                gap = check_convexity_gap(p, x, y)
                worst_gap = min(worst_gap, gap / (1 + abs(p.value(y))))
        ok = worst_fd <= 1e-6 and worst_gap >= -1e-10
        return Outcome(9, ok, f"max FD error {worst_fd:.1e}, min normalized convexity gap {worst_gap:.1e}")

    def criterion_10(self) -> Outcome:
        bad = []
        for sid, cfg in self.scenarios.items():
            self.report(sid)
            first = self.workdir / "first" / sid
            second = self.workdir / "second" / sid
            run_scenario(cfg, second)
            names = sorted(f.name for f in first.iterdir() if f.name != "timing.json")
            if names != sorted(f.name for f in second.iterdir() if f.name != "timing.json"):
                bad.append(sid)
                continue
            _, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
            if mismatch or errors:
                bad.append(sid)
        return Outcome(10, not bad, f"{len(self.scenarios)} scenarios re-run, artifacts byte-identical"
                       if not bad else f"differing artifacts in {bad}")

    def run_all(self) -> list[Outcome]:
        return [getattr(self, f"criterion_{n}")() for n in TITLES]


def rk4_order_ratios(pairs=((1e-2, 5e-3), (5e-3, 2.5e-3))) -> list[float]:
    """Error ratios of fixed-step RK4 on the free-flow closed form when h is halved.

    Output times are spaced 0.1 apart on [1, 10] so every h divides the gaps
    and the step really halves.
    """
    p, d = Zero(1), OverT(4.0)
    times = np.linspace(1.0, 10.0, 91)
    exact = _free_flow_exact(times)
    out = []
    for h1, h2 in pairs:
        e = []
        for h in (h1, h2):
            r = reference_integrate(p, d, [1.0], [1.0], T=10.0, h=h, output_times=times)
            e.append(float(np.max(np.abs(r.x[:, 0] - exact))))
        out.append(e[0] / e[1])
    return out


def _final_eqh(run_dir: Path) -> float:
    with open(run_dir / "diagnostics_0.ndjson") as fh:
        last = fh.read().strip().splitlines()[-1]
    return float(json.loads(last)["int_EQh"])
