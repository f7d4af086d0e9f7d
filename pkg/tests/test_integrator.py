import numpy as np
import pytest

from dampflow.damping import OverT, Shifted, Tabulated
from dampflow.integrator import (
    DivergenceError,
    IntegrationError,
    StepBudgetExceeded,
    Trajectory,
    integrate,
    log_schedule,
    reference_integrate,
    rhs,
)
from dampflow.potential import DimensionError, LogSumExp, Potential, Quadratic, Zero


def free_flow(t):
    return 1 + (1 - t**-3.0) / 3


class Cubic(Potential):
    """Phi(x) = -x^4/4, not convex; solutions blow up in finite time."""

    dim = 1
    min_value = -np.inf
    argmin_witness = None
    lipschitz = 0.0

    def value(self, x):
        return -0.25 * np.asarray(x)[..., 0] ** 4

    def gradient(self, x):
        return -np.asarray(x, dtype=float) ** 3


class Edge(Cubic):
    """Gradient -sqrt(2 - x), undefined (NaN) past x = 2."""

    def gradient(self, x):
        with np.errstate(invalid="ignore"):
            return -np.sqrt(2 - np.asarray(x, dtype=float))


class Scaled(Quadratic):
    """A Quadratic subclass, which has no compiled kernel."""


def test_rhs_examples():
    dx, dv = rhs(2.0, [1.0], [0.0], Quadratic(np.eye(1)), OverT(4.0))
    assert dx.tolist() == [0.0] and dv.tolist() == [-1.0]
    dx, dv = rhs(1.0, [0.0], [1.0], Zero(1), OverT(4.0))
    assert dx.tolist() == [1.0] and dv.tolist() == [-4.0]
    dx, dv = rhs(3.0, [0.0, 0.0], [0.0, 0.0], Quadratic(np.eye(2)), OverT(4.0))
    assert not dx.any() and not dv.any()
    with pytest.raises(DimensionError):
        rhs(1.0, [0.0, 0.0], [0.0], Zero(2), OverT(4.0))


def test_input_validation():
    p, d = Zero(1), OverT(4.0)
    with pytest.raises(ValueError):
        integrate(p, d, [1.0], [1.0], t0=0.0, T=10.0)
    with pytest.raises(ValueError):
        integrate(p, d, [1.0], [1.0], T=1.0)
    with pytest.raises(ValueError):
        integrate(p, d, [1.0], [1.0], T=10.0, rel_tol=0.0)
    with pytest.raises(DimensionError):
        integrate(p, d, [1.0, 2.0], [1.0, 2.0], T=10.0)
    with pytest.raises(ValueError):
        integrate(p, d, [1.0], [1.0], T=10.0, output_times=[1.0, 5.0, 3.0])
    with pytest.raises(ValueError):
        integrate(Scaled(np.eye(1)), d, [1.0], [1.0], T=10.0, compiled=True)


def test_log_schedule():
    ts = log_schedule(1.0, 1e4)
    assert ts.size == 801
    assert ts[0] == 1.0 and ts[-1] == 1e4
    assert np.all(np.diff(np.log10(ts)) == pytest.approx(1 / 200))


def test_stationary_solution():
    traj = integrate(Quadratic(np.eye(2)), OverT(4.0), [0.0, 0.0], [0.0, 0.0], T=1e3)
    assert np.abs(traj.x).max() <= 1e-9
    assert traj.t[0] == 1.0 and traj.t[-1] == 1e3
    assert np.all(np.diff(traj.t) > 0)


def test_free_flow_closed_form():
    traj = integrate(Zero(1), OverT(4.0), [1.0], [1.0], T=1e3)
    assert np.abs(traj.x[:, 0] - free_flow(traj.t)).max() <= 1e-8
    assert np.abs(traj.v[:, 0] - traj.t**-4.0).max() <= 1e-8
    assert traj.x[-1, 0] == pytest.approx(4 / 3, abs=1e-6)


def test_first_sample_is_initial_condition():
    x0, v0 = np.array([0.3, -1.7]), np.array([0.1, 0.25])
    traj = integrate(Quadratic([[2.0, 0.5], [0.5, 1.0]]), OverT(4.0), x0, v0, T=50.0)
    assert np.array_equal(traj.x[0], x0) and np.array_equal(traj.v[0], v0)


def test_adaptive_matches_reference():
    p, d = Quadratic(np.eye(1)), OverT(4.0)
    ts = log_schedule(1.0, 100.0, 50)
    a = integrate(p, d, [1.0], [0.0], T=100.0, output_times=ts)
    r = reference_integrate(p, d, [1.0], [0.0], T=100.0, h=1e-5, output_times=ts)
    assert np.abs(a.x - r.x).max() <= 1e-7
    assert np.abs(a.v - r.v).max() <= 1e-7


@pytest.mark.parametrize("case", ["quadratic", "logsumexp", "shifted", "tabulated"])
def test_compiled_and_python_loops_agree(case):
    p = Quadratic([[2.0, 0.5], [0.5, 1.0]])
    d = OverT(4.0)
    x0, v0 = [1.0, -1.0], [0.0, 0.5]
    if case == "logsumexp":
        p = LogSumExp([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [0.0, 0.0, 0.0, 0.0])
    elif case == "shifted":
        d = Shifted(5.0, 1.0, t0=10.0)
    elif case == "tabulated":
        d = Tabulated([1.0, 2.0, 5.0, 20.0], [5.0, 2.2, 0.9, 0.25])
    T = d.t0 * 30
    a = integrate(p, d, x0, v0, T=T, compiled=True)
    b = integrate(p, d, x0, v0, T=T, compiled=False)
    if case == "tabulated":
        # interpolation rounding differs in the last bit, which can flip a step decision
        atol = 1e-8
    else:
        assert a.n_accepted == b.n_accepted and a.n_rejected == b.n_rejected
        atol = 1e-12
    np.testing.assert_allclose(a.x, b.x, rtol=0, atol=atol)
    np.testing.assert_allclose(a.v, b.v, rtol=0, atol=atol)


def test_python_loop_for_custom_potential():
    traj = integrate(Scaled(np.eye(1)), OverT(4.0), [1.0], [0.0], T=100.0)
    ref = integrate(Quadratic(np.eye(1)), OverT(4.0), [1.0], [0.0], T=100.0)
    np.testing.assert_allclose(traj.x, ref.x, rtol=0, atol=1e-12)


def test_dense_output_reproduces_nodes():
    traj = integrate(Zero(1), OverT(4.0), [1.0], [1.0], T=10.0)
    dense = traj.dense
    np.testing.assert_array_equal(dense(dense.nodes), dense.values)
    mids = 0.5 * (dense.nodes[1:] + dense.nodes[:-1])
    x, v = traj.state_at(mids)
    assert np.abs(x[:, 0] - free_flow(mids)).max() <= 1e-9
    with pytest.raises(ValueError):
        dense([11.0])


def test_csv_round_trip(tmp_path):
    traj = integrate(Quadratic([[2.0, 0.5], [0.5, 1.0]]), OverT(4.0), [1.0, -1.0], [0.0, 0.5], T=20.0)
    path = tmp_path / "traj.csv"
    traj.write_csv(path)
    assert path.read_text().splitlines()[0] == "t,x_0,x_1,v_0,v_1"
    back = Trajectory.read_csv(path)
    np.testing.assert_array_equal(back.t, traj.t)
    np.testing.assert_array_equal(back.x, traj.x)
    np.testing.assert_array_equal(back.v, traj.v)


def test_step_budget_reported():
    with pytest.raises(IntegrationError, match="budget"):
        integrate(Zero(1), OverT(4.0), [1.0], [1.0], T=1e3, max_steps=10)


def test_finite_time_blowup_is_reported():
    # a smooth blow-up drives the step size to underflow before values overflow
    with pytest.raises(IntegrationError) as info:
        integrate(Cubic(), OverT(4.0), [2.0], [0.0], T=100.0)
    assert 1.0 < info.value.t < 100.0


def test_non_finite_state_is_divergence():
    with pytest.raises(DivergenceError) as info:
        integrate(Edge(), OverT(4.0), [0.0], [1.0], T=100.0)
    assert 1.0 < info.value.t < 100.0


def test_stiff_potential_underflows():
    with pytest.raises(IntegrationError) as info:
        integrate(Quadratic([[1e30]]), OverT(4.0), [1.0], [0.0], T=10.0, step_cap=1e30)
    assert "t=" in str(info.value)


def test_reference_free_flow_accuracy():
    ts = np.linspace(1.0, 10.0, 91)
    r = reference_integrate(Zero(1), OverT(4.0), [1.0], [1.0], T=10.0, h=1e-4, output_times=ts)
    assert np.abs(r.x[:, 0] - free_flow(ts)).max() <= 1e-10


def test_reference_stationary_exact():
    r = reference_integrate(Quadratic(np.eye(2)), OverT(4.0), [0.0, 0.0], [0.0, 0.0], T=10.0, h=1e-3)
    assert not r.x.any() and not r.v.any()


def test_reference_fourth_order():
    ts = np.linspace(1.0, 10.0, 91)

    def err(h):
        r = reference_integrate(Zero(1), OverT(4.0), [1.0], [1.0], T=10.0, h=h, output_times=ts)
        return np.abs(r.x[:, 0] - free_flow(ts)).max()

    for h in (1e-2, 5e-3):
        assert err(h) / err(h / 2) == pytest.approx(16.0, rel=0.2)


def test_reference_budget():
    with pytest.raises(StepBudgetExceeded):
        reference_integrate(Zero(1), OverT(4.0), [1.0], [1.0], T=100.0, h=1e-5, max_steps=1000)
    with pytest.raises(ValueError):
        reference_integrate(Zero(1), OverT(4.0), [1.0], [1.0], T=10.0, h=0.0)


def test_deterministic():
    args = (LogSumExp([[1.0, 0.5], [-1.0, 0.2], [0.1, -1.0]], [0.0, 0.3, -0.2]), OverT(4.0), [1.0, 1.0], [0.0, 0.0])
    a = integrate(*args, T=100.0)
    b = integrate(*args, T=100.0)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
