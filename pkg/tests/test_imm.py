import numpy as np
import pytest

from immkit.amm import BankState, amm_init, amm_step
from immkit.imm import imm_step, mix_estimates, mixing_weights, predict_mode_probabilities
from immkit.kalman import run_filter
from immkit.linalg import is_psd
from immkit.models import GaussianState, StateSpaceModel, cv_model, make_model_set
from immkit.simulation import PAPER_TRANSITION, make_rng, schedule_modes, simulate_trajectory

P = np.array(PAPER_TRANSITION)


def scalar(name, q):
    return StateSpaceModel(A=[[1.0]], B=[[1.0]], H=[[1.0]], Q=[[q]], R=[[1.0]], name=name)


def test_identity_transition_keeps_mu():
    mu = np.array([0.2, 0.8])
    np.testing.assert_array_equal(predict_mode_probabilities(np.eye(2), mu), mu)


def test_builtin_transition_prediction():
    np.testing.assert_allclose(predict_mode_probabilities(P, [1.0, 0.0]), [0.75, 0.25])


def test_identical_rows_give_row():
    p = np.array([[0.2, 0.8], [0.2, 0.8]])
    for mu in ([1.0, 0.0], [0.3, 0.7]):
        np.testing.assert_allclose(predict_mode_probabilities(p, mu), [0.2, 0.8], rtol=1e-15)


def test_mixing_weights_identity():
    mw = mixing_weights(np.eye(3), [0.2, 0.3, 0.5])
    np.testing.assert_array_equal(mw.w, np.eye(3))


def test_mixing_weights_uniform_mu():
    mw = mixing_weights(P, [0.5, 0.5])
    np.testing.assert_allclose(mw.mu_pred, [0.5, 0.5])
    np.testing.assert_allclose(mw.w, P, rtol=1e-15)


def test_mixing_weights_certain_mode():
    mw = mixing_weights(P, [1.0, 0.0])
    np.testing.assert_allclose(mw.w[:, 0], [1.0, 0.0])
    np.testing.assert_allclose(mw.w[:, 1], [1.0, 0.0])


def test_mixing_guard_on_vanishing_prediction():
    p = np.array([[1.0, 0.0], [0.5, 0.5]])
    mw = mixing_weights(p, [1.0, 0.0])
    assert mw.mu_pred[1] == 0.0
    np.testing.assert_allclose(mw.w[:, 1], [0.0, 1.0])
    np.testing.assert_allclose(mw.w.sum(axis=0), 1.0, atol=1e-12)


def test_mix_identity_weights_round_trip(paper_set, rng):
    cv = GaussianState(rng.normal(size=2), np.diag([1.0, 2.0]))
    ca = GaussianState(rng.normal(size=3), np.diag([1.0, 2.0, 3.0]))
    bank = BankState((cv, ca), np.array([0.4, 0.6]), 0)
    out = mix_estimates(paper_set, bank, mixing_weights(np.eye(2), bank.mu))
    for got, ref in zip(out, (cv, ca)):
        np.testing.assert_allclose(got.mean, ref.mean, rtol=1e-15)
        np.testing.assert_allclose(got.cov, ref.cov, rtol=1e-15)


def test_mix_identical_estimates():
    ms = make_model_set([scalar("a", 1.0), scalar("b", 2.0)], P)
    s = GaussianState([0.4], [[1.3]])
    out = mix_estimates(ms, BankState((s, s), np.array([0.5, 0.5]), 0), mixing_weights(P, [0.5, 0.5]))
    for got in out:
        assert got.mean[0] == pytest.approx(0.4)
        assert got.cov[0, 0] == pytest.approx(1.3)


def test_mix_spread_term():
    ms = make_model_set([scalar("a", 1.0), scalar("b", 2.0)], P)
    bank = BankState((GaussianState([0.0], [[1.0]]), GaussianState([2.0], [[1.0]])), np.array([0.5, 0.5]), 0)
    out = mix_estimates(ms, bank, mixing_weights(np.full((2, 2), 0.5), bank.mu))
    assert out[0].mean[0] == 1.0
    assert out[0].cov[0, 0] == 2.0


def test_single_model_imm_is_kalman(rng):
    m = cv_model()
    ms = make_model_set([m], [[1.0]])
    init = GaussianState([0.0, 0.0], np.eye(2))
    ys = rng.normal(size=(80, 1)).cumsum(axis=0)
    ref = run_filter(m, init, ys)
    bank = amm_init(ms, init)
    for y, r in zip(ys, ref):
        bank, est = imm_step(ms, bank, y)
        np.testing.assert_array_equal(est.state.mean, r.mean)
        np.testing.assert_array_equal(est.state.cov, r.cov)
        np.testing.assert_array_equal(est.mu, [1.0])


def test_identity_transition_matches_amm_filters(paper_set):
    ms = make_model_set(paper_set.models, np.eye(2))
    _, ys = simulate_trajectory(ms, schedule_modes([(0, 0), (30, 1)], 60), np.zeros(3), make_rng(5))
    init = GaussianState(np.zeros(3), np.eye(3))
    a = i = amm_init(ms, init)
    for y in ys:
        a, _ = amm_step(ms, a, y)
        i, est = imm_step(ms, i, y)
        for sa, si in zip(a.per_model, i.per_model):
            np.testing.assert_allclose(si.mean, sa.mean, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(si.cov, sa.cov, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(i.mu, a.mu, rtol=1e-9)


def test_paper_scenario_invariants(paper_set):
    modes = schedule_modes([(0, 0), (50, 1), (100, 0)], 150)
    _, ys = simulate_trajectory(paper_set, modes, np.zeros(3), make_rng(11))
    bank = amm_init(paper_set, GaussianState(np.zeros(3), np.eye(3)))
    for y in ys:
        prev = bank.mu
        w = mixing_weights(paper_set.transition, prev)
        np.testing.assert_allclose(w.w.sum(axis=0), 1.0, atol=1e-12)
        bank, est = imm_step(paper_set, bank, y)
        assert abs(bank.mu.sum() - 1.0) <= 1e-12
        assert np.all(est.mu_pred >= 0.25 * prev.min())
        assert is_psd(est.state.cov)
