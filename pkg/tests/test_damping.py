import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampflow.damping import (
    OverT,
    PowerLaw,
    Shifted,
    Tabulated,
    big_gamma,
    certify,
    from_config,
    gamma,
    t_gamma_prime_pos,
    tail_kernel_check,
)
from dampflow.potential import UnsupportedQuery

FAMILIES = [
    OverT(4.0),
    OverT(10.0),
    Shifted(5.0, 1.0, t0=10.0),
    Shifted(5.0, -0.5),
    PowerLaw(2.0, 0.5),
    Tabulated([1.0, 2.0, 5.0, 20.0], [5.0, 2.2, 0.9, 0.25]),
]


def test_gamma_examples():
    assert gamma(OverT(4.0), 2.0) == 2.0
    assert gamma(Shifted(5.0, 1.0), 9.0) == 0.5
    assert gamma(PowerLaw(2.0, 0.5), 4.0) == 1.0


def test_gamma_rejects_times_before_start():
    for d in FAMILIES:
        with pytest.raises(ValueError):
            gamma(d, d.t0 / 2)
        with pytest.raises(ValueError):
            t_gamma_prime_pos(d, d.t0 / 2)


def test_positive_part_examples():
    for t in (1.0, 3.0, 1e6):
        assert t_gamma_prime_pos(OverT(4.0), t) == 0.0
    assert t_gamma_prime_pos(Shifted(5.0, 1.0), 9.0) == pytest.approx(0.05, rel=1e-14)
    assert t_gamma_prime_pos(PowerLaw(2.0, 0.5), 4.0) == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.kind)
def test_derivative_matches_finite_differences(d):
    for t in np.geomspace(d.t0 * 1.01, d.t0 * 1e3, 17):
        if any(abs(t - b) < 1e-3 * t for b in d.breakpoints()):
            continue
        step = 1e-6 * t
        fd = (d.t_gamma(t + step) - d.t_gamma(t - step)) / (2 * step)
        assert float(d.t_gamma_prime(t)) == pytest.approx(float(fd), rel=1e-6, abs=1e-9)


def test_certify_examples():
    c = certify(OverT(4.0))
    assert (c.k_inf, c.exceeds_three, c.variation_integral, c.finite_variation) == (4.0, True, 0.0, True)
    assert c.method == "closed_form"

    c = certify(Shifted(5.0, 1.0, t0=10.0))
    assert c.k_inf == pytest.approx(50 / 11, abs=1e-9)
    assert c.variation_integral == pytest.approx(5 / 11, abs=1e-9)
    assert c.exceeds_three and c.finite_variation

    c = certify(PowerLaw(2.0, 0.5))
    assert c.k_inf == 2.0
    assert not c.exceeds_three
    assert math.isinf(c.variation_integral) and not c.finite_variation
    assert c.to_dict()["variation_integral"] == "inf"

    assert not certify(OverT(2.0)).exceeds_three


def test_shifted_admissibility_depends_on_start():
    # K t0/(a+t0) falls below three for an early start
    assert not certify(Shifted(5.0, 1.0, t0=1.0)).exceeds_three
    assert certify(Shifted(5.0, 1.0, t0=10.0)).exceeds_three


def test_tabulated_certificate():
    d = Tabulated([1.0, 2.0, 4.0, 8.0], [5.0, 2.0, 1.0, 0.5])
    c = certify(d)
    assert not c.tail_known
    # t*gamma: 5 at t=1, then 4 on [2, 8]; the minimum over [1, 2] is at an endpoint
    assert c.k_inf == pytest.approx(4.0, rel=1e-12)
    # t*gamma is quadratic per segment and rises by 1/3, 1/2 and 1/2 before each vertex
    assert c.variation_integral == pytest.approx(4 / 3, rel=1e-12)
    from scipy import integrate

    pts = [4 / 3, 2.0, 3.0, 4.0, 6.0]
    q, _ = integrate.quad(d.t_gamma_prime_pos, 1.0, 8.0, points=pts, epsabs=1e-14, epsrel=1e-13)
    assert c.variation_integral == pytest.approx(q, rel=1e-10)

    bump = Tabulated([1.0, 2.0, 4.0], [4.0, 3.0, 1.0])
    # t*gamma = 5t - t^2 throughout, rising from 4 to its peak 6.25 at t = 2.5
    assert certify(bump).variation_integral == pytest.approx(2.25, rel=1e-12)
    assert certify(bump).k_inf == pytest.approx(4.0)


def test_tabulated_rejects_bad_knots(tmp_path):
    with pytest.raises(ValueError):
        Tabulated([1.0, 3.0, 2.0], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        Tabulated([1.0, 2.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        Tabulated([1.0], [1.0])


def test_tabulated_csv(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("t,gamma\n1,4\n2,2\n4,1\n")
    d = Tabulated.from_csv(path)
    assert d.gamma(3.0) == pytest.approx(1.5)
    assert d.gamma(8.0) == pytest.approx(0.5)
    cfg = d.to_config()
    assert from_config(cfg).gamma(3.0) == pytest.approx(1.5)
    rel = from_config({"kind": "tabulated", "csv": "g.csv"}, base_dir=tmp_path)
    assert rel.gamma(2.0) == pytest.approx(2.0)


def test_big_gamma_examples():
    assert big_gamma(OverT(4.0), 1.0, math.e) == pytest.approx(4.0, rel=1e-15)
    for d in FAMILIES:
        assert big_gamma(d, d.t0 * 2, d.t0 * 2) == 0.0
    assert big_gamma(Shifted(5.0, 1.0), 9.0, 19.0) == pytest.approx(5 * math.log(2), rel=1e-14)
    with pytest.raises(ValueError):
        big_gamma(OverT(4.0), 3.0, 2.0)


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.kind)
def test_big_gamma_matches_quadrature(d):
    from scipy import integrate

    s, t = d.t0 * 1.5, d.t0 * 40
    q, _ = integrate.quad(lambda u: float(d.gamma(u)), s, t, points=[b for b in d.breakpoints() if s < b < t] or None,
                          epsabs=0, epsrel=1e-12, limit=200)
    assert float(big_gamma(d, s, t)) == pytest.approx(q, rel=1e-10)


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.kind)
@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 6), b=st.floats(0, 6), c=st.floats(0, 6))
def test_big_gamma_additivity(d, a, b, c):
    s, u, t = sorted(d.t0 * 10.0 ** np.array([a, b, c]))
    whole = float(big_gamma(d, s, t))
    parts = float(big_gamma(d, s, u)) + float(big_gamma(d, u, t))
    assert parts == pytest.approx(whole, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.kind)
def test_certificate_consistency_on_log_grid(d):
    k_inf = certify(d).k_inf
    t = np.geomspace(d.t0, d.t0 * 1e8, 1000)
    assert np.all(d.t_gamma(t) >= k_inf - 1e-9)


def test_kernel_examples():
    num, bound = tail_kernel_check(OverT(4.0), 2.0, 4.0)
    assert bound == pytest.approx(2 / 3, rel=1e-15)
    assert num == pytest.approx(2 / 3, rel=1e-8)
    num, bound = tail_kernel_check(OverT(10.0), 1.0, 10.0)
    assert num == pytest.approx(1 / 9, rel=1e-8)
    assert bound == pytest.approx(1 / 9, rel=1e-15)
    num, bound = tail_kernel_check(Shifted(5.0, 1.0, t0=10.0), 10.0, 50 / 11)
    assert bound == pytest.approx(10 / (50 / 11 - 1), rel=1e-12)
    assert num <= bound * (1 + 1e-8)


def test_kernel_needs_k_above_one():
    with pytest.raises(UnsupportedQuery):
        tail_kernel_check(OverT(1.0), 1.0)


@pytest.mark.parametrize("d", [d for d in FAMILIES if certify(d).exceeds_three], ids=lambda d: d.kind)
@settings(max_examples=20, deadline=None)
@given(e=st.floats(0, 4))
def test_kernel_bound_property(d, e):
    s = d.t0 * 10.0**e
    num, bound = tail_kernel_check(d, s)
    assert num <= bound * (1 + 1e-8)


def test_config_round_trip():
    for d in FAMILIES:
        e = from_config(d.to_config())
        t = np.geomspace(d.t0, d.t0 * 100, 7)
        np.testing.assert_allclose(e.gamma(t), d.gamma(t), rtol=1e-15)
    with pytest.raises(ValueError):
        from_config({"kind": "constant"})


def test_with_k_rescales():
    assert OverT(4.0).with_K(10.0).gamma(2.0) == 5.0
    d = Tabulated([1.0, 2.0, 4.0], [4.0, 2.0, 1.0]).with_K(8.0)
    assert certify(d).k_inf == pytest.approx(8.0)
