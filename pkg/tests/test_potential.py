import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampflow.potential import (
    DimensionError,
    Huber,
    LeastSquares,
    LogSumExp,
    Quadratic,
    UnsupportedQuery,
    Zero,
    catalog,
    check_convexity_gap,
    check_gradient_fd,
    distance_to_argmin,
    from_config,
    gradient,
    value,
)

CATALOG = catalog()
NAMES = sorted(CATALOG)

coords = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False)


def points(dim):
    return st.lists(coords, min_size=dim, max_size=dim).map(np.array)


def test_value_examples():
    assert value(Quadratic(np.eye(2)), [3.0, 4.0]) == 12.5
    assert value(Zero(3), [1.0, -2.0, 7.0]) == 0.0
    lse = LogSumExp([[1.0], [-1.0]], [0.0, 0.0])
    brute = math.log(math.exp(0.0) + math.exp(-0.0))
    assert value(lse, [0.0]) == pytest.approx(brute, rel=1e-15)
    assert value(lse, [0.0]) == pytest.approx(0.693147, abs=1e-6)


def test_gradient_examples():
    np.testing.assert_array_equal(gradient(Quadratic(np.eye(2)), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_array_equal(gradient(Zero(2), [3.0, 4.0]), [0.0, 0.0])
    np.testing.assert_array_equal(gradient(Huber(1.0, [0.0]), [2.0]), [1.0])
    assert check_gradient_fd(Huber(1.0, [0.0]), [2.0], 1e-5) <= 1e-8


def test_dimension_mismatch_rejected():
    for p in CATALOG.values():
        with pytest.raises(DimensionError):
            p.value(np.zeros(p.dim + 1))
        with pytest.raises(DimensionError):
            p.gradient(np.zeros(p.dim + 1))


def test_fd_examples(rng):
    assert check_gradient_fd(Quadratic(np.eye(2)), [3.0, 4.0], 1e-5) <= 1e-8
    assert check_gradient_fd(Zero(2), [3.0, 4.0], 1e-5) == 0.0
    for name in ("log_sum_exp_1d", "log_sum_exp_2d", "log_sum_exp_symmetric"):
        p = CATALOG[name]
        for _ in range(10):
            assert check_gradient_fd(p, rng.normal(size=p.dim), 1e-5) <= 1e-6
    with pytest.raises(ValueError):
        check_gradient_fd(Zero(1), [0.0], 0.0)


def test_convexity_gap_examples():
    assert check_convexity_gap(Quadratic(np.eye(1)), [1.0], [3.0]) == pytest.approx(2.0, abs=1e-15)
    for p in CATALOG.values():
        x = np.linspace(-1, 1, p.dim)
        assert check_convexity_gap(p, x, x) == pytest.approx(0.0, abs=1e-15)
    assert check_convexity_gap(Zero(2), [1.0, 2.0], [-3.0, 0.5]) == 0.0


def test_distance_examples():
    assert distance_to_argmin(Quadratic(np.eye(2)), [3.0, 4.0]) == pytest.approx(5.0)
    assert distance_to_argmin(Quadratic(np.diag([1.0, 0.0])), [3.0, 4.0]) == pytest.approx(3.0)
    for p in CATALOG.values():
        assert distance_to_argmin(p, p.argmin_witness) == pytest.approx(0.0, abs=1e-12)


def test_distance_without_argmin_is_unsupported():
    p = Quadratic(np.eye(1))
    p.argmin_witness = None
    with pytest.raises(UnsupportedQuery):
        distance_to_argmin(p, [1.0])


def test_non_psd_and_unbounded_quadratics_rejected():
    with pytest.raises(ValueError):
        Quadratic([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError):
        Quadratic(np.diag([1.0, 0.0]), [0.0, 1.0])
    with pytest.raises(ValueError):
        Quadratic([[1.0, 2.0], [0.0, 1.0]])


def test_lse_without_minimizer_rejected():
    with pytest.raises(ValueError):
        LogSumExp([[1.0], [2.0]], max_iter=2000)


def test_degenerate_argmin_is_affine():
    p = Quadratic(np.diag([1.0, 0.0]))
    base, basis = p.argmin_affine
    np.testing.assert_allclose(np.abs(basis[:, 0]), [0.0, 1.0], atol=1e-15)
    assert len(p.auto_anchors()) == 3
    assert Quadratic(np.eye(2)).argmin_affine is None


def test_least_squares_residual_min_value():
    p = LeastSquares([[1.0], [1.0]], [0.0, 2.0])
    assert p.min_value == pytest.approx(1.0)
    np.testing.assert_allclose(p.argmin_witness, [1.0])


def test_excess_keeps_precision_near_minimizer():
    for name in ("quadratic_spd_3d", "least_squares_full_rank", "log_sum_exp_2d"):
        p = CATALOG[name]
        direction = np.ones(p.dim) / math.sqrt(p.dim)
        for scale in (1e-6, 1e-12, 1e-18):
            x = p.argmin_witness + scale * direction
            ex = p.excess(x)
            assert ex >= 0
            # leading behaviour is quadratic in the displacement
            assert ex <= 10 * p.lipschitz * scale**2


def test_config_round_trip():
    for p in CATALOG.values():
        q = from_config(p.to_config())
        x = np.linspace(-1.5, 2.0, p.dim)
        assert q.value(x) == pytest.approx(p.value(x), rel=1e-14, abs=1e-14)
        np.testing.assert_allclose(q.gradient(x), p.gradient(x), rtol=1e-13, atol=1e-14)
    with pytest.raises(ValueError):
        from_config({"kind": "cubic"})


def test_batch_evaluation_matches_pointwise(rng):
    for p in CATALOG.values():
        xs = rng.normal(size=(5, p.dim))
        np.testing.assert_allclose(p.value(xs), [p.value(x) for x in xs], rtol=1e-14)
        np.testing.assert_allclose(p.gradient(xs), [p.gradient(x) for x in xs], rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("name", NAMES)
def test_witness_is_first_order_optimal(name):
    p = CATALOG[name]
    x = p.argmin_witness
    assert np.linalg.norm(p.gradient(x)) <= 1e-9 * (1 + np.linalg.norm(x))
    assert p.value(x) == pytest.approx(p.min_value, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("name", NAMES)
@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_convexity_property(name, data):
    p = CATALOG[name]
    x = data.draw(points(p.dim))
    y = data.draw(points(p.dim))
    assert check_convexity_gap(p, x, y) >= -1e-10 * (1 + abs(p.value(y)))


@pytest.mark.parametrize("name", NAMES)
@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_min_value_is_lower_bound(name, data):
    p = CATALOG[name]
    x = data.draw(points(p.dim))
    assert p.value(x) >= p.min_value - 1e-10
    assert p.excess(x) >= -1e-10


@pytest.mark.parametrize("name", NAMES)
@settings(max_examples=10, deadline=None)
@given(data=st.data())
def test_gradient_matches_finite_differences(name, data):
    p = CATALOG[name]
    x = data.draw(points(p.dim))
    if isinstance(p, Huber):
        # the Hessian jumps where |x_i - c_i| = delta; stay clear of the kink
        r = np.abs(x - p.center) - p.delta
        x = np.where(np.abs(r) < 1e-3, x + 1e-2, x)
    assert check_gradient_fd(p, x, 1e-5) <= 1e-6
