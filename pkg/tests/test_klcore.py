import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from klopt.klcore import (DomainError, HSpec, PLSpec, PhiSpec, cosh1d, cosh_sin_nonconvex,
                          dist_bound_ratio, finite_sum_shifted, grad_check, make_function,
                          pl_params_power_abs, power_abs, quadratic, separable_compose, verify_pl)

alphas = st.floats(1.0, 2.0)
mus = st.floats(1e-3, 10.0)
ts = st.floats(1e-6, 1e3)


def fd(f, t, h=1e-6):
    return (f(t + h * t) - f(t - h * t)) / (2 * h * t)


# ---- phi and h --------------------------------------------------------------


def test_power_phi_values():
    phi = PhiSpec.power(2.0, 0.5)
    assert phi(4.0) == pytest.approx(2.0)
    assert PhiSpec.power(1.0, 2.0)(3.0) == pytest.approx(2.0 * 3.0)
    assert phi(0.0) == 0.0


def test_min_lin_sqrt_and_sqrt_t_log_values():
    m = PhiSpec.min_lin_sqrt()
    assert m(0.25) == 0.25 and m(4.0) == 2.0 and m(1.0) == 1.0
    s = PhiSpec.sqrt_t_log()
    assert s(math.e - 1.0) == pytest.approx(math.sqrt(math.e - 1.0))


@given(alphas, mus, ts)
def test_power_phi_deriv_matches_finite_difference(alpha, mu, t):
    phi = PhiSpec.power(alpha, mu)
    assert phi.deriv(t) == pytest.approx(fd(phi, t), rel=1e-5)


@given(ts)
def test_nonpower_phi_deriv_matches_finite_difference(t):
    s = PhiSpec.sqrt_t_log()
    assert s.deriv(t) == pytest.approx(fd(s, t), rel=1e-5)
    m = PhiSpec.min_lin_sqrt()
    if abs(t - 1.0) > 1e-3:
        assert m.deriv(t) == pytest.approx(fd(m, t), rel=1e-5)


@given(st.sampled_from([PhiSpec.power(1.0, 0.5), PhiSpec.power(1.5, 2.0), PhiSpec.power(2.0, 1.0),
                        PhiSpec.min_lin_sqrt(), PhiSpec.sqrt_t_log()]), ts)
def test_sq_and_sq_deriv_consistent(phi, t):
    assert phi.sq(t) == pytest.approx(phi(t) ** 2, rel=1e-12)
    if not (phi.kind == "minlinsqrt" and abs(t - 1.0) < 1e-3):
        assert phi.sq_deriv(t) == pytest.approx(2 * phi(t) * phi.deriv(t), rel=1e-9)


def test_sq_deriv_finite_at_zero():
    assert PhiSpec.power(2.0, 0.5).sq_deriv(0.0) == 1.0
    assert PhiSpec.power(1.0, 0.5).sq_deriv(0.0) == 0.0
    assert PhiSpec.sqrt_t_log().sq_deriv(0.0) == 0.0


def test_phi_domain_errors():
    with pytest.raises(DomainError):
        PhiSpec.power(2.5, 1.0)
    with pytest.raises(DomainError):
        PhiSpec.power(0.9, 1.0)
    with pytest.raises(DomainError):
        PhiSpec.power(1.5, 0.0)
    with pytest.raises(DomainError):
        PhiSpec.power(1.5, 1.0)(-1.0)
    with pytest.raises(DomainError):
        PhiSpec.power(1.5, 1.0).deriv(0.0)


@given(ts)
def test_h_variants(t):
    assert HSpec.zero()(t) == 0.0
    assert HSpec.power(1.0)(t) == t
    assert HSpec.power(0.5)(t) == pytest.approx(math.sqrt(t))
    assert HSpec.log1p()(t) == pytest.approx(math.log1p(t))
    assert HSpec.log1p().deriv(t) == pytest.approx(fd(HSpec.log1p(), t), rel=1e-5)


def test_h_domain():
    with pytest.raises(DomainError):
        HSpec.power(1.5)
    with pytest.raises(DomainError):
        HSpec.log1p()(-0.1)


def test_pl_params_power_abs():
    pl = pl_params_power_abs(1.0, 3.0)
    assert pl.alpha == 1.5 and pl.mu == 4.5
    pl = pl_params_power_abs(1.0, 2.0)
    assert pl.alpha == 2.0 and pl.mu == 2.0
    with pytest.raises(DomainError):
        pl_params_power_abs(1.0, 1.0)


# ---- test functions -------------------------------------------------------------


ALL_FUNCTIONS = [
    quadratic(1.0),
    quadratic(0.5, 4, 3.0),
    power_abs(1.0, 3.0, 5.0),
    power_abs(2.0, 4.0, 3.0),
    cosh1d(5.0),
    cosh_sin_nonconvex(5.0),
    separable_compose([power_abs(1.0, 3.0), power_abs(2.0, 3.0)]),
]


@pytest.mark.parametrize("fn", ALL_FUNCTIONS, ids=lambda f: f"{f.name}{f.dim}")
def test_pl_inequality_and_gradients_on_grid(fn):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-4.0, 4.0, size=(300, fn.dim))
    assert verify_pl(fn, pts) >= 1.0 - 1e-9
    assert grad_check(fn, pts) <= 1e-6
    assert fn.gap(np.zeros(fn.dim)) == pytest.approx(0.0, abs=1e-15)


def test_cosh1d_matches_textbook_form():
    fn = cosh1d()
    for x in (-3.0, -0.1, 0.0, 2.5):
        assert fn.f([x]) == pytest.approx(math.cosh(x) - 1.0, rel=1e-12, abs=1e-300)
    # near 0 the naive form cancels; compare with the Taylor series instead
    assert fn.f([1e-8]) == pytest.approx(0.5e-16, rel=1e-12)
    assert fn.lipschitz_L == math.cosh(5.0)


@given(st.floats(-5.0, 5.0))
def test_cosh1d_pl_tight_form(x):
    # sinh^2 x >= 2 mu (cosh x - 1) with mu = 1/2 is the identity (cosh x + 1) >= 1
    fn = cosh1d()
    g = fn.grad([x])[0]
    assert abs(g) >= math.sqrt(2 * fn.pl.mu) * fn.f([x]) * (1 - 1e-12) - 1e-300


def test_power_abs_lipschitz_on_box():
    fn = power_abs(1.0, 3.0, 5.0)
    assert fn.lipschitz_L == 30.0
    assert fn.pl.alpha == 1.5


def test_separable_compose_constants():
    a, b = power_abs(1.0, 3.0, 5.0), power_abs(2.0, 3.0, 5.0)
    s = separable_compose([a, b])
    assert s.dim == 2
    assert s.pl.mu == pytest.approx(min(a.pl.mu, b.pl.mu) / 2)
    assert s.lipschitz_L == pytest.approx(max(a.lipschitz_L, b.lipschitz_L) / 2)
    x = np.array([1.0, -2.0])
    assert s.f(x) == pytest.approx((a.f(x[:1]) + b.f(x[1:])) / 2)


def test_separable_compose_rejects_mixed_powers():
    with pytest.raises(DomainError):
        separable_compose([power_abs(1.0, 3.0), quadratic(1.0)])


@given(st.lists(st.floats(-3.0, 3.0), min_size=2, max_size=2))
def test_finite_sum_mean_is_base_exactly(x):
    base = quadratic(1.0, 2, 2.0)
    fs = finite_sum_shifted(base, 64, seed=3, curvature_spread=0.4)
    x = np.array(x)
    comps = fs.component_grads(x, np.arange(64))
    np.testing.assert_allclose(comps.mean(axis=0), base.grad(x), rtol=1e-13, atol=1e-13)


def test_finite_sum_shifts_sum_to_zero_exactly():
    fs = finite_sum_shifted(power_abs(), 1024, seed=0, curvature_spread=0.3)
    assert np.all(np.sum(fs.shifts, axis=0) == 0.0)
    assert np.sum(fs.scales) == 1024.0
    with pytest.raises(ValueError):
        fs.shifts[0, 0] = 1.0
    assert finite_sum_shifted(power_abs(), 1024, seed=0).component_lipschitz() == 30.0


def test_distance_bound_quadratic_equality_and_power_abs():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-5, 5, size=(200, 1))
    assert dist_bound_ratio(quadratic(1.0), pts) == pytest.approx(1.0, abs=1e-12)
    assert dist_bound_ratio(power_abs(1.0, 4.0), pts) <= 1.0 + 1e-12
    with pytest.raises(DomainError):
        dist_bound_ratio(cosh1d(), pts)


def test_make_function():
    assert make_function("cosh1d", R=3.0).lipschitz_L == math.cosh(3.0)
    with pytest.raises(DomainError):
        make_function("rosenbrock")


def test_grad_check_detects_wrong_gradient():
    fn = quadratic(1.0)
    bad = type(fn)(**{**fn.__dict__, "grad": lambda x: 1.01 * np.asarray(x, dtype=float)})
    assert grad_check(bad, [[3.0]]) > 1e-3


def test_plspec_validates():
    with pytest.raises(DomainError):
        PLSpec(2.5, 1.0)
