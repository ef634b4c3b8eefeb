import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from immkit.amm import (PROBABILITY_FLOOR, BankState, amm_init, amm_step, fuse,
                        update_mode_probabilities)
from immkit.errors import DegenerateLikelihoods, NotAProbabilityVector
from immkit.kalman import run_filter
from immkit.linalg import is_psd
from immkit.models import GaussianState, StateSpaceModel, ca_model, cv_model, make_model_set
from immkit.simulation import make_rng, simulate_trajectory


def scalar(name="s", q=1.0):
    return StateSpaceModel(A=[[1.0]], B=[[1.0]], H=[[1.0]], Q=[[q]], R=[[1.0]], name=name)


def test_init_projects_fused_state(paper_set):
    bank = amm_init(paper_set, GaussianState(np.zeros(3), np.diag([1.0, 2.0, 3.0])), [0.5, 0.5])
    np.testing.assert_array_equal(bank.per_model[0].mean, [0.0, 0.0])
    np.testing.assert_array_equal(bank.per_model[0].cov, np.diag([1.0, 2.0]))
    np.testing.assert_array_equal(bank.per_model[1].cov, np.diag([1.0, 2.0, 3.0]))


def test_init_degenerate_prior_is_valid(paper_set):
    bank = amm_init(paper_set, GaussianState(np.zeros(3), np.eye(3)), [1.0, 0.0])
    np.testing.assert_array_equal(bank.mu, [1.0, 0.0])


def test_init_rejects_non_probability(paper_set):
    with pytest.raises(NotAProbabilityVector):
        amm_init(paper_set, GaussianState(np.zeros(3), np.eye(3)), [0.6, 0.6])


def test_init_defaults_to_uniform(paper_set):
    bank = amm_init(paper_set, GaussianState(np.zeros(3), np.eye(3)))
    np.testing.assert_array_equal(bank.mu, [0.5, 0.5])


def test_equal_likelihoods_cancel():
    mu = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(update_mode_probabilities(mu, [-3.0, -3.0, -3.0]), mu, rtol=1e-15)


def test_recursion_hand_value():
    out = update_mode_probabilities([0.5, 0.5], np.log([2.0, 1.0]))
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], rtol=1e-15)


def test_zero_prior_stays_at_floor():
    out = update_mode_probabilities([1.0, 0.0], [-50.0, 10.0])
    assert out[1] == PROBABILITY_FLOOR
    assert out.sum() == pytest.approx(1.0, abs=1e-15)


def test_extreme_log_likelihoods_do_not_underflow():
    out = update_mode_probabilities([0.5, 0.5], [-1e5, -1e5 - 2.0])
    np.testing.assert_allclose(out, [1 / (1 + np.exp(-2)), np.exp(-2) / (1 + np.exp(-2))])


def test_all_zero_likelihoods_raise():
    with pytest.raises(DegenerateLikelihoods):
        update_mode_probabilities([0.5, 0.5], [-np.inf, -np.inf])


@settings(max_examples=100)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6),
       st.lists(st.floats(-800.0, 50.0), min_size=6, max_size=6))
def test_mode_update_stays_on_simplex(raw, logs):
    raw = np.array(raw) + 1e-3
    mu = raw / raw.sum()
    out = update_mode_probabilities(mu, logs[:mu.size])
    assert abs(out.sum() - 1.0) <= 1e-12
    assert np.all(out >= PROBABILITY_FLOOR)


def test_fuse_single_model_is_lifted_estimate():
    ms = make_model_set([cv_model()], [[1.0]])
    s = GaussianState([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
    est = fuse(ms, BankState((s,), np.array([1.0]), 0))
    np.testing.assert_array_equal(est.state.mean, s.mean)
    np.testing.assert_array_equal(est.state.cov, s.cov)


def test_fuse_identical_estimates_has_no_spread():
    ms = make_model_set([scalar("a"), scalar("b")], np.eye(2))
    s = GaussianState([1.5], [[0.7]])
    est = fuse(ms, BankState((s, s), np.array([0.3, 0.7]), 0))
    assert est.state.mean[0] == pytest.approx(1.5)
    assert est.state.cov[0, 0] == pytest.approx(0.7, rel=1e-15)


def test_fuse_spread_of_means():
    ms = make_model_set([scalar("a"), scalar("b")], np.eye(2))
    a, b = GaussianState([1.0], [[1.0]]), GaussianState([-1.0], [[1.0]])
    est = fuse(ms, BankState((a, b), np.array([0.5, 0.5]), 0))
    assert est.state.mean[0] == 0.0
    assert est.state.cov[0, 0] == 2.0


def test_fuse_mixed_dimensions_spread_is_psd(paper_set, rng):
    for _ in range(20):
        cv = GaussianState(rng.normal(size=2), np.diag(rng.uniform(0.1, 2, 2)))
        ca = GaussianState(rng.normal(size=3), np.diag(rng.uniform(0.1, 2, 3)))
        mu = rng.dirichlet([1, 1])
        est = fuse(paper_set, BankState((cv, ca), mu, 0))
        weighted = mu[0] * paper_set.lifts[0] @ cv.cov @ paper_set.lifts[0].T + mu[1] * ca.cov
        assert is_psd(est.state.cov - weighted)


def test_single_model_bank_equals_kalman_filter(rng):
    m = cv_model()
    ms = make_model_set([m], [[1.0]])
    init = GaussianState([0.0, 1.0], np.eye(2))
    ys = rng.normal(size=(60, 1)).cumsum(axis=0)
    kf = run_filter(m, init, ys)
    bank = amm_init(ms, init)
    for y, ref in zip(ys, kf):
        bank, est = amm_step(ms, bank, y)
        np.testing.assert_array_equal(est.state.mean, ref.mean)
        np.testing.assert_array_equal(est.state.cov, ref.cov)
        assert est.mu[0] == 1.0


def test_identical_models_keep_prior():
    ms = make_model_set([cv_model(), cv_model()], np.eye(2))
    bank = amm_init(ms, GaussianState(np.zeros(2), np.eye(2)), [0.3, 0.7])
    for y in np.linspace(0, 5, 30):
        bank, _ = amm_step(ms, bank, [y])
    np.testing.assert_array_equal(bank.mu, [0.3, 0.7])


def test_degenerate_measurement_surfaces_and_leaves_bank(paper_set):
    bank = amm_init(paper_set, GaussianState(np.zeros(3), np.eye(3)))
    with pytest.raises(DegenerateLikelihoods):
        amm_step(paper_set, bank, [1e200])
    np.testing.assert_array_equal(bank.mu, [0.5, 0.5])
    assert bank.time_index == 0


@pytest.mark.parametrize("true_model", [0, 1])
def test_converges_to_true_model(paper_set, true_model):
    hits = 0
    for seed in range(20):
        truth, ys = simulate_trajectory(paper_set, [true_model] * 100, np.zeros(3), make_rng(seed))
        bank = amm_init(paper_set, GaussianState(np.zeros(3), np.eye(3)))
        for y in ys[1:]:
            bank, _ = amm_step(paper_set, bank, y)
            if bank.mu[true_model] > 0.99:
                hits += 1
                break
    assert hits >= 19
