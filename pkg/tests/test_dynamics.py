import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from klopt import dynamics as dyn
from klopt.dynamics import Constant, DynamicsParams, PolyDecay
from klopt.klcore import HSpec, PhiSpec


def params(alpha=2.0, beta=1.0, mu=1.0, a=1.0, d=1.0, tau=0.0, h=None, phi=None):
    return DynamicsParams(a, d, h or HSpec.power(beta), phi or PhiSpec.power(alpha, mu), tau, 1.0)


# ---- recursion and stationary points -----------------------------------------------


def test_recursion_step_formula():
    p = params(alpha=2.0, beta=1.0, mu=1.0, a=0.5, d=2.0)
    delta, eta, b = 0.3, 0.1, 4
    expected = delta + 0.5 * eta**2 * delta - 0.5 * eta * 2.0 * delta + 2.0 * eta**2 / b
    assert dyn.recursion_step(p, delta, eta, b) == pytest.approx(expected, rel=1e-15)


def test_stationary_point_closed_form_alpha2():
    p = params(alpha=2.0, beta=1.0, mu=1.0, a=1.0, d=1.0)
    eta = 0.1
    assert dyn.stationary_point(p, eta) == pytest.approx(eta / (1.0 - eta), rel=1e-14)
    with pytest.raises(ValueError):
        dyn.stationary_point(params(alpha=2.0, beta=1.0, mu=0.5, a=1.0), 0.6)


@given(st.floats(1.0, 2.0), st.floats(0.2, 1.0), st.floats(1e-4, 0.3),
       st.floats(0.0, 2.0), st.floats(1e-3, 2.0), st.integers(1, 8))
def test_stationary_point_is_a_fixed_point(alpha, beta, eta, a, d, b):
    p = params(alpha=alpha, beta=beta, mu=1.0, a=a, d=d)
    gamma = alpha * beta
    if abs(gamma - 2.0) < 1e-9 and a * eta >= 1.0:
        return
    r = dyn.stationary_point(p, eta, b)
    assert r > 0
    lhs = a * eta * p.h(r) + d * eta / b
    assert lhs == pytest.approx(0.5 * p.phi.sq(r), rel=1e-9)
    # the equality recursion leaves r unchanged
    assert dyn.recursion_step(p, r, eta, b) == pytest.approx(r, rel=1e-9)


@given(st.floats(1e-4, 0.5))
def test_stationary_point_nonpower(eta):
    for phi, h in ((PhiSpec.sqrt_t_log(), HSpec.log1p()), (PhiSpec.min_lin_sqrt(), HSpec.power(1.0))):
        p = DynamicsParams(0.1, 1.0, h, phi)
        r = dyn.stationary_point(p, eta)
        assert 0.1 * eta * h(r) + eta == pytest.approx(0.5 * phi.sq(r), rel=1e-9)


def test_stationary_point_scales_like_eta():
    # for alpha = 2, beta = 1 and small eta, r(eta) ~ d eta / mu
    p = params(alpha=2.0, beta=1.0, mu=2.0, a=1.0, d=3.0)
    r = dyn.stationary_point(p, 1e-6)
    assert r == pytest.approx(3.0 * 1e-6 / 2.0, rel=1e-5)


# ---- the rate table ------------------------------------------------------------------


def test_predicted_rates():
    r = dyn.corollary1_rate(2.0, 1.0, 0.5)
    assert (r.branch, r.zeta, r.predicted_slope) == ("i", 1.0, 1.5)
    r = dyn.corollary1_rate(1.0, 1.0, 0.0)
    assert r.branch == "ii-a"
    assert r.zeta == pytest.approx(2 / 3) and r.predicted_slope == pytest.approx(1 / 3)
    # threshold gamma / (4 - alpha - gamma) = 1 / 2 for alpha = beta = 1
    assert dyn.corollary1_rate(1.0, 1.0, 0.5).branch == "ii-a"
    r = dyn.corollary1_rate(1.0, 1.0, 0.51)
    assert r.branch == "ii-b" and r.predicted_slope == pytest.approx(0.5)
    assert dyn.corollary1_rate(1.4, 1.1 / 1.4, 0.9, branch="ii-a").predicted_slope == \
        pytest.approx(1.4 * 1.9 / 2.6)
    with pytest.raises(ValueError):
        dyn.corollary1_rate(1.0, 1.0, 0.0, branch="iii")


@given(st.floats(1.0, 1.99), st.floats(0.1, 1.0), st.floats(0.0, 3.0))
def test_branches_agree_at_threshold(alpha, beta, tau):
    gamma = alpha * beta
    thr = gamma / (4 - alpha - gamma)
    a = dyn.corollary1_rate(alpha, beta, thr, branch="ii-a")
    b = dyn.corollary1_rate(alpha, beta, thr, branch="ii-b")
    assert a.predicted_slope == pytest.approx(b.predicted_slope, rel=1e-9)
    assert a.zeta == pytest.approx(b.zeta, rel=1e-9, abs=1e-12)
    # the auto branch is the slower of the two rates
    auto = dyn.corollary1_rate(alpha, beta, tau)
    ia = dyn.corollary1_rate(alpha, beta, tau, branch="ii-a")
    ib = dyn.corollary1_rate(alpha, beta, tau, branch="ii-b")
    assert auto.predicted_slope == pytest.approx(min(ia.predicted_slope, ib.predicted_slope))


# ---- simulation --------------------------------------------------------------------------


def test_simulate_accounting():
    p = params(alpha=2.0, tau=0.5)
    tr = dyn.simulate(p, PolyDecay(0.5, 1.0), 100, T=3)
    b = np.maximum(1, np.floor(np.arange(1, 101) ** 0.5)).astype(int)
    assert np.array_equal(tr.batch, b)
    assert np.array_equal(tr.cum_cost, np.cumsum(3 * b))
    np.testing.assert_allclose(tr.eta, 0.5 / np.arange(1, 101))


def test_simulate_matches_recursion_step():
    p = params(alpha=1.5, beta=0.5)
    tr = dyn.simulate(p, PolyDecay(0.1, 0.6), 50)
    delta = 1.0
    for k in range(1, 51):
        delta = dyn.recursion_step(p, delta, 0.1 * k**-0.6, 1)
        assert tr.delta[k - 1] == pytest.approx(delta, rel=1e-13)
    assert tr.clamp_events == 0


def test_noiseless_quadratic_dynamics_is_geometric():
    p = params(alpha=2.0, mu=1.0, a=0.0, d=0.0, h=HSpec.zero())
    tr = dyn.simulate(p, Constant(0.5), 20)
    np.testing.assert_allclose(tr.delta, 0.5 ** np.arange(1, 21), rtol=1e-14)


def test_clamp_guard_counts_overshoot():
    p = params(alpha=2.0, mu=1.0)
    tr = dyn.simulate(p, Constant(3.0), 20)
    assert tr.clamp_events > 0
    assert np.all(tr.delta >= 0)


@pytest.mark.parametrize("alpha,beta,tau", [(2.0, 1.0, 0.0), (1.0, 1.0, 0.0), (1.5, 1.0, 2.0)])
def test_dynamics_slopes_match_rate(alpha, beta, tau):
    rate = dyn.corollary1_rate(alpha, beta, tau)
    p = params(alpha=alpha, beta=beta, tau=tau)
    sched = PolyDecay(0.5, rate.zeta)
    T = dyn.default_inner_length(p, sched, 100_000, rate.predicted_slope)
    tr = dyn.simulate(p, sched, 100_000, T=T)
    assert dyn.fit_loglog_slope(tr, 1e3).slope == pytest.approx(-rate.predicted_slope, abs=0.1)


def test_sqrt_t_log_example_with_cube_root_stepsizes():
    # the contraction scales like eta^(3/2) here, so zeta = 2/3 balances it and gives k^-1/3
    p = DynamicsParams(1.0, 1.0, HSpec.log1p(), PhiSpec.sqrt_t_log())
    tr = dyn.simulate(p, PolyDecay(0.5, 2.0 / 3.0), 100_000)
    assert dyn.fit_loglog_slope(tr, 1e3).slope == pytest.approx(-1.0 / 3.0, abs=0.05)


def test_restart_inner_length():
    assert dyn.restart_inner_length(1.0, 0.5) == 4
    assert dyn.restart_inner_length(0.0, 2.0) == 1
    with pytest.raises(ValueError):
        dyn.restart_inner_length(1.0, 0.0)


def test_theorem1_residual_alpha2():
    # omega_k = k * eta * mu for h = 0 and phi^2 = 2 mu t
    p = params(alpha=2.0, mu=2.0, a=0.0, h=HSpec.zero())
    assert dyn.theorem1_residual(p, 0.01, 100) == pytest.approx(100 * 0.01 * 2.0)


def test_sample_cost():
    tr = dyn.simulate(params(alpha=2.0), PolyDecay(0.5, 1.0), 1000)
    c = dyn.sample_cost(tr, tr.delta[500])
    assert c == tr.cum_cost[np.nonzero(tr.delta <= tr.delta[500])[0][0]]
    miss = dyn.sample_cost(tr, 0.0)
    assert not miss and miss.final_delta == tr.delta[-1]


# ---- fits and persistence ----------------------------------------------------------------


@given(st.floats(-3.0, -0.05), st.floats(0.1, 10.0))
def test_fit_recovers_exact_power_law(slope, scale):
    x = np.arange(1, 2001, dtype=float)
    fit = dyn.fit_loglog(x, scale * x**slope, 10)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_needs_points():
    with pytest.raises(ValueError):
        dyn.fit_loglog(np.arange(1, 10.0), np.ones(9))


def test_default_window():
    assert dyn.default_window(100) == 100
    assert dyn.default_window(100_000) == 20_000


def test_trace_csv_roundtrip(tmp_path):
    tr = dyn.simulate(params(alpha=1.5, beta=0.5), PolyDecay(0.3, 0.7), 200)
    tr.to_csv(tmp_path / "a.csv")
    back = dyn.Trace.from_csv(tmp_path / "a.csv")
    assert np.array_equal(back.delta, tr.delta)
    assert np.array_equal(back.cum_cost, tr.cum_cost)
    back.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    raw = (tmp_path / "a.csv").read_bytes()
    assert raw.startswith(b"k,delta,eta,batch,cum_cost\n") and b"\r" not in raw


# ---- tightness -----------------------------------------------------------------------------


@pytest.mark.parametrize("eps", [0.0, 0.2, 0.5, 0.8])
def test_greedy_slope(eps):
    tr = dyn.tightness_simulate(1.0, 1.0, eps, 2, 100_000)
    assert dyn.fit_loglog_slope(tr, 1e3).slope == pytest.approx(-(1 - eps) / (1 + eps), abs=0.05)


@given(st.floats(0.0, 0.9), st.floats(0.1, 1.0))
def test_greedy_closed_form(eps, r0):
    A = dyn.greedy_constant(1.0, 1.0, eps)
    tr = dyn.tightness_simulate(1.0, 1.0, eps, 2, 30, r0=r0)
    r = r0
    for k in range(30):
        r = r * (1 - A * r ** (2 / (1 - eps) - 1))
        assert tr.delta[k] == pytest.approx(r, rel=1e-10)


@given(st.floats(0.0, 0.9), st.floats(1e-2, 10.0), st.floats(0.0, 1.5))
def test_greedy_is_pointwise_optimal(eps, c0, zeta):
    g = dyn.tightness_simulate(1.0, 1.0, eps, 2, 300)
    s = dyn.tightness_simulate(1.0, 1.0, eps, 2, 300, mode="schedule", schedule=PolyDecay(c0, zeta))
    assert np.all(g.delta <= s.delta * (1 + 1e-12))


@pytest.mark.parametrize("eps", [0.2, 0.5])
def test_two_phase_final_value_rate(eps):
    # the schedule depends on the horizon K, so the rate is read off r_K across horizons
    Ks = np.unique(np.geomspace(1e3, 1e5, 8).astype(int))
    r = [dyn.tightness_simulate(1.0, 1.0, eps, 2, int(K), mode="two_phase").delta[-1] for K in Ks]
    slope = dyn.fit_loglog(Ks.astype(float), np.array(r), min_points=3).slope
    assert slope == pytest.approx(-(1 - eps) / (1 + eps), abs=0.05)


def test_greedy_rejects_large_stepsize():
    with pytest.raises(ValueError):
        dyn.tightness_simulate(1.0, 1.0, 0.2, 2, 10, r0=100.0)


def test_schedule_search_never_beats_greedy():
    cands = dyn.random_schedule_search(1.0, 1.0, 0.2, 10, 20_000, 1e3, seed=3)
    assert len(cands) == 10
    assert max(c.gain for c in cands) <= 1e-9
    assert sum(isinstance(c.schedule, Constant) for c in cands) == 2


def test_exponent_gain():
    ref = dyn.tightness_simulate(1.0, 1.0, 0.2, 2, 2000)
    half = dyn.Trace(ref.k, 0.5 * ref.delta, ref.eta, ref.batch, ref.cum_cost)
    gain = dyn.exponent_gain(half, ref, 100)
    assert gain == pytest.approx(math.log(2) / math.log(100))
