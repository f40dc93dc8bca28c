import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klopt.optimizers import PagerStage
from klopt.oracle import make_rng
from klopt.rlpg import (PagePgSchedule, SgdPgSchedule, SoftmaxPolicy, TabularMdp, Trajectory,
                        enumerate_return, exact_policy_gradient, exact_return,
                        finite_difference_gradient, gpomdp, gpomdp_samples, importance_weight,
                        load_mdp, optimal_values, random_mdp, run_pg, sample_trajectories,
                        save_mdp)


def one_state(gamma=0.5, H=4, R=(1.0, 1.0)):
    return TabularMdp(1, 2, np.ones((1, 2, 1)), np.array([R]), gamma, np.ones(1), H)


def test_constant_reward_is_geometric_sum():
    m = one_state(0.5, 4)
    pol = SoftmaxPolicy(np.array([[0.3, -1.0]]))
    assert exact_return(m, pol) == pytest.approx(1 + 0.5 + 0.25 + 0.125, abs=1e-15)
    assert np.allclose(exact_policy_gradient(m, pol), 0.0, atol=1e-14)


def test_antisymmetric_rewards_zero_at_uniform():
    m = one_state(0.9, 3, R=(1.0, -1.0))
    assert exact_return(m, SoftmaxPolicy(np.zeros((1, 2)))) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_enumeration_matches_forward_and_fd(seed):
    m = random_mdp(2, 2, 3, 0.9, seed)
    theta = np.random.default_rng(seed).normal(size=(2, 2))
    pol = SoftmaxPolicy(theta)
    assert enumerate_return(m, pol) == pytest.approx(exact_return(m, pol), abs=1e-12)
    g = exact_policy_gradient(m, pol, "enumerate")
    assert np.allclose(g, finite_difference_gradient(m, pol), atol=1e-7)
    # softmax gradients have zero row sums; adding a constant to a row changes nothing
    assert np.allclose(g.sum(axis=1), 0.0, atol=1e-12)
    shifted = SoftmaxPolicy(theta + np.array([[3.0], [-2.0]]))
    assert exact_return(m, shifted) == pytest.approx(exact_return(m, pol), abs=1e-12)


def test_gpomdp_zero_reward_and_h1_reinforce():
    m = one_state(0.9, 3, R=(0.0, 0.0))
    pol = SoftmaxPolicy(np.array([[0.2, 0.1]]))
    tb = sample_trajectories(m, pol, 5, make_rng(0, 0))
    assert np.all(gpomdp(tb, pol, 0.9) == 0.0)
    # H = 1: the estimator is r(s, a) * grad log pi(a|s)
    t = Trajectory(np.array([0]), np.array([1]), np.array([-1.0]))
    assert np.allclose(gpomdp(t, pol, 0.9), -1.0 * pol.grad_log(0, 1))


def test_gpomdp_unbiased_within_three_se():
    m = load_mdp()
    theta = np.random.default_rng(3).normal(size=(m.S, m.A))
    pol = SoftmaxPolicy(theta)
    samples = gpomdp_samples(sample_trajectories(m, pol, 40_000, make_rng(1, 0)), pol, m.gamma)
    exact = exact_policy_gradient(m, pol)
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    z = np.abs(samples.mean(axis=0) - exact) / np.maximum(se, 1e-12)
    assert np.max(z) <= 4.5  # max over S*A coordinates


def test_importance_weights():
    m = load_mdp()
    theta = np.random.default_rng(0).normal(size=(m.S, m.A))
    tb = sample_trajectories(m, SoftmaxPolicy(theta), 2000, make_rng(0, 1))
    assert np.allclose(importance_weight(tb, theta, theta), 1.0)
    assert np.allclose(importance_weight(tb, theta + 5.0, theta), 1.0)
    other = theta + 0.1 * np.random.default_rng(1).normal(size=theta.shape)
    w = importance_weight(tb, theta, other)
    assert abs(w.mean() - 1.0) <= 4 * w.std(ddof=1) / np.sqrt(len(w))
    assert np.all(importance_weight(tb, theta, other, omega_max=1.01) <= 1.01)


def test_save_load_roundtrip(tmp_path):
    m = random_mdp(3, 2, 5, 0.95, 4)
    save_mdp(m, tmp_path / "m.txt", comment="test")
    m2 = load_mdp(tmp_path / "m.txt")
    assert np.array_equal(m.P, m2.P) and np.array_equal(m.R, m2.R)
    assert (m.S, m.A, m.H, m.gamma) == (m2.S, m2.A, m2.H, m2.gamma)


def test_fixture_optimum_is_attained_by_stationary_policy():
    m = load_mdp()
    J, acts = optimal_values(m)
    assert np.all(acts == acts[0])
    theta = np.full((m.S, m.A), -30.0)
    theta[np.arange(m.S), acts[0]] = 30.0
    assert exact_return(m, SoftmaxPolicy(theta)) == pytest.approx(J, abs=1e-9)


def test_invalid_mdp_rejected():
    with pytest.raises(ValueError):
        TabularMdp(1, 2, np.full((1, 2, 1), 0.9), np.zeros((1, 2)), 0.5, np.ones(1), 2)
    with pytest.raises(ValueError):
        TabularMdp(1, 2, np.ones((1, 2, 1)), np.zeros((1, 2)), 1.0, np.ones(1), 2)


def test_page_p1_matches_sgd():
    m = load_mdp()
    b = 8
    sgd = run_pg(m, "sgd", SgdPgSchedule(0.5, 0.0, b, 30), [0])[0]
    page = run_pg(m, "page", PagePgSchedule(PagerStage(0.5, 30, 1.0, b, b), b), [0])[0]
    # PAGE with p = 1 redraws every step; the seed draw is the first SGD batch
    assert np.allclose(page.J_exact, sgd.J_exact, atol=1e-12)
    assert np.array_equal(page.cum_trajectories, sgd.cum_trajectories + b)


def test_zero_learning_rate_flat():
    m = load_mdp()
    tr = run_pg(m, "sgd", SgdPgSchedule(0.0, 0.0, 4, 10), [0])[0]
    assert np.all(tr.J_exact == tr.J_exact[0])
    assert list(tr.cum_trajectories) == list(range(0, 44, 4))


def test_stop_level_and_reach():
    m = load_mdp()
    J0 = exact_return(m, SoftmaxPolicy(np.zeros((m.S, m.A))))
    tr = run_pg(m, "sgd", SgdPgSchedule(1.0, 0.0, 16, 2000), [0], stop_level=J0 + 1e-3)[0]
    assert tr.J_exact[-1] >= J0 + 1e-3 and np.all(tr.J_exact[:-1] < J0 + 1e-3)
    assert tr.trajectories_to_reach(J0 + 1e-3) == tr.cum_trajectories[-1]
    assert tr.trajectories_to_reach(1e9) is None
