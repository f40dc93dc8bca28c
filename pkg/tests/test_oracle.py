import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from klopt.klcore import HSpec, cosh1d, finite_sum_shifted, power_abs, quadratic
from klopt.oracle import (AdditiveGaussian, FiniteSumSampling, GradOracle, make_rng,
                          verify_avg_smoothness, verify_es)


def test_rng_streams_reproducible_and_distinct():
    a = make_rng(7, 0).random(5)
    assert np.array_equal(a, make_rng(7, 0).random(5))
    assert not np.array_equal(a, make_rng(7, 1).random(5))
    assert not np.array_equal(a, make_rng(8, 0).random(5))


def test_gaussian_oracle_unbiased():
    fn = quadratic(1.0, 2, 2.0)
    o = GradOracle(fn, AdditiveGaussian(1.0), seed=0)
    x = np.array([1.0, -2.0])
    N = 100_000
    mean = np.mean([o.sample_grad(x, 1)[0] for _ in range(N)], axis=0)
    sigma, d = 1.0, 2
    assert np.linalg.norm(mean - fn.grad(x)) <= 3 * sigma * math.sqrt(d / N)


@pytest.mark.parametrize("b", [1, 4, 64])
def test_batch_mean_variance(b):
    fn = cosh1d()
    o = GradOracle(fn, AdditiveGaussian(2.0), seed=b)
    x = np.array([0.3])
    g = np.array([o.sample_grad(x, b)[0][0] for _ in range(20_000)])
    # sample variance of a Gaussian has relative sd sqrt(2/N) ~ 1%
    assert g.var(ddof=1) == pytest.approx(2.0 / b, rel=0.05)


def test_cost_accounting():
    fn = quadratic(1.0)
    o = GradOracle(fn, AdditiveGaussian(1.0), seed=0)
    _, c = o.sample_grad([1.0], 5)
    pd = o.sample_pair_diff([1.0], [0.5], 3)
    assert c == 5 and pd.cost == 6 and o.samples_used == 11


def test_gaussian_pair_difference_is_exact():
    fn = cosh1d()
    o = GradOracle(fn, AdditiveGaussian(3.0), seed=1)
    pd = o.sample_pair_diff([1.0], [0.2], 1)
    np.testing.assert_allclose(pd.delta_tilde, fn.grad([1.0]) - fn.grad([0.2]), atol=1e-14)


def test_full_batch_is_exact_gradient():
    fs = finite_sum_shifted(power_abs(), 128, seed=0, curvature_spread=0.2)
    o = GradOracle(fs, FiniteSumSampling(), seed=0)
    g, c = o.sample_grad([0.7], 128)
    assert c == 128
    np.testing.assert_allclose(g, fs.grad([0.7]), rtol=1e-13)


@given(st.integers(1, 32), st.floats(-3, 3))
def test_finite_sum_sampling_draws_components(b, x):
    fs = finite_sum_shifted(quadratic(1.0), 32, seed=2)
    o = GradOracle(fs, FiniteSumSampling(replace=False), seed=b)
    g, _ = o.sample_grad([x], b)
    # every component gradient is x + z_i, so the mean is x + mean of b distinct shifts
    assert np.min(fs.shifts) + x - 1e-12 <= g[0] <= np.max(fs.shifts) + x + 1e-12


def test_errors():
    fs = finite_sum_shifted(quadratic(1.0), 8, seed=0)
    with pytest.raises(ValueError):
        GradOracle(quadratic(1.0), FiniteSumSampling())
    o = GradOracle(fs, FiniteSumSampling(replace=False))
    with pytest.raises(ValueError):
        o.sample_grad([0.0], 9)
    with pytest.raises(ValueError):
        o.sample_grad([0.0], 0)
    with pytest.raises(ValueError):
        AdditiveGaussian(-1.0)


def test_analytic_constants():
    q = quadratic(1.0, 3, 2.0)
    o = GradOracle(q, AdditiveGaussian(0.5))
    assert o.variance_trace() == 1.5
    assert o.es_constants() == (0.0, 1.0, 1.5)
    assert o.avg_smoothness() == 0.0
    fs = finite_sum_shifted(q, 16, seed=0)
    ofs = GradOracle(fs, FiniteSumSampling())
    assert ofs.variance_trace() == pytest.approx(np.mean(np.sum(fs.shifts**2, axis=1)))
    assert ofs.avg_smoothness() == 0.0


def test_verify_es_accepts_true_constants_and_rejects_small_ones():
    q = quadratic(1.0, 2, 2.0)
    o = GradOracle(q, AdditiveGaussian(1.0), seed=0)
    A, B, C = o.es_constants()
    pts = [[1.0, 1.0], [0.0, 0.0]]
    assert verify_es(o, pts, A, B, C, HSpec.zero(), 2, 2000)
    assert not verify_es(o, pts, A, B, C / 4, HSpec.zero(), 2, 2000)
    with pytest.raises(ValueError):
        verify_es(o, pts, A, B, C, HSpec.zero(), 2, 999)


def test_verify_avg_smoothness():
    fs = finite_sum_shifted(quadratic(1.0, 2, 2.0), 32, seed=0, curvature_spread=0.5)
    o = GradOracle(fs, FiniteSumSampling(), seed=0)
    x, y = [1.0, 0.0], [0.0, 0.5]
    assert verify_avg_smoothness(o, x, y, 2, 2000)
    assert verify_avg_smoothness(o, x, y, 2, 2000, L_script=o.avg_smoothness())
    assert not verify_avg_smoothness(o, x, y, 2, 2000, L_script=0.1 * o.avg_smoothness())
    with pytest.raises(ValueError):
        verify_avg_smoothness(o, x, x, 1)
