import numpy as np
import pytest

from immkit import simulation
from immkit.errors import DegenerateLikelihoods, DimensionMismatch, InvalidParameter
from immkit.metrics import nees
from immkit.models import GaussianState, ca_model, cv_model, make_model_set
from immkit.simulation import (PAPER_TRANSITION, child_seed, make_rng, mix64, paper_scenario,
                               run_monte_carlo, run_single, sample_mode_sequence,
                               schedule_modes, simulate_trajectory)


def quiet_set():
    return make_model_set([cv_model(sigma_w2=0.0), ca_model(sigma_w2=0.0)], PAPER_TRANSITION)


def test_mix64_reference_value():
    # first output of the reference SplitMix64 generator seeded with 0
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


def test_child_seeds_are_distinct():
    seeds = {child_seed(7, j) for j in range(10_000)}
    assert len(seeds) == 10_000


def test_absorbing_chain():
    modes = sample_mode_sequence(np.eye(2), [1.0, 0.0], 50, make_rng(0))
    assert np.all(modes == 0)


def test_alternating_chain():
    modes = sample_mode_sequence([[0.0, 1.0], [1.0, 0.0]], [1.0, 0.0], 20, make_rng(0))
    np.testing.assert_array_equal(modes, np.arange(20) % 2)


def test_chain_statistics():
    n = 100_000
    p = np.array(PAPER_TRANSITION)
    modes = sample_mode_sequence(p, [0.5, 0.5], n, make_rng(42))
    assert abs(np.mean(modes == 1) - 0.5) < 0.01
    for j in range(2):
        src = modes[:-1] == j
        m = src.sum()
        for i in range(2):
            freq = np.sum(src & (modes[1:] == i)) / m
            sigma = np.sqrt(p[j, i] * (1 - p[j, i]) / m)
            assert abs(freq - p[j, i]) <= 3 * sigma


def test_schedule_modes():
    np.testing.assert_array_equal(schedule_modes([(0, 1), (3, 0)], 5), [1, 1, 1, 0, 0])


def test_uniform_motion():
    truth, ys = simulate_trajectory(quiet_set(), [0] * 10, np.array([0.0, 1.0, 0.0]), make_rng(1))
    np.testing.assert_allclose(truth[:, 0], np.arange(10.0), atol=1e-12)
    assert ys.shape == (10, 1)


def test_constant_acceleration():
    truth, _ = simulate_trajectory(quiet_set(), [1] * 10, np.array([0.0, 0.0, 1.0]), make_rng(1))
    k = np.arange(10.0)
    np.testing.assert_allclose(truth[:, 0], k * k / 2, atol=1e-12)


def test_switch_to_cv_zeroes_acceleration(paper_set):
    modes = schedule_modes([(0, 1), (20, 0)], 40)
    truth, _ = simulate_trajectory(paper_set, modes, np.array([0.0, 0.0, 1.0]), make_rng(4))
    assert np.all(truth[:20, 2] != 0.0)
    assert np.all(truth[20:, 2] == 0.0)


def test_trajectory_rejects_bad_modes(paper_set):
    with pytest.raises(DimensionMismatch):
        simulate_trajectory(paper_set, [0, 2], np.zeros(3), make_rng(0))
    with pytest.raises(DimensionMismatch):
        simulate_trajectory(paper_set, [0, 1], np.zeros(2), make_rng(0))


def test_noise_free_estimators_are_exact(monkeypatch):
    sc = paper_scenario(initial_truth=np.array([1.0, 0.5, 0.0]),
                        initial_estimate=GaussianState([1.0, 0.5, 0.0], np.eye(3)), n_steps=120)

    def silent(scenario, seed, tm):
        K = scenario.n_steps
        return schedule_modes(scenario.mode_schedule, K), np.zeros((K, tm.q)), np.zeros((K, tm.d))

    monkeypatch.setattr(simulation, "_draw_run", silent)
    rep = run_monte_carlo(sc, runs=3, master_seed=0)
    for name in rep.estimators:
        assert np.all(rep.position_rmse(name) < 1e-9), name


def test_single_run_report_matches_trace():
    sc = paper_scenario(n_steps=60)
    rep = run_monte_carlo(sc, runs=1, master_seed=9)
    tr = run_single(sc, child_seed(9, 0))
    for name, est in tr.estimates.items():
        err = tr.truth @ est.lift - est.mean
        np.testing.assert_allclose(rep.rmse[name], np.abs(err), rtol=1e-12, atol=1e-14)
        ref = [nees((m, c), x) for m, c, x in zip(est.mean, est.cov, tr.truth @ est.lift)]
        np.testing.assert_allclose(rep.nees[name], ref, rtol=1e-9)
    np.testing.assert_array_equal(rep.mode_probabilities["imm"], tr.estimates["imm"].mu)


def test_run_trace_shapes():
    tr = run_single(paper_scenario(n_steps=30), 5)
    assert tr.truth.shape == (30, 3) and tr.modes.shape == (30,) and tr.measurements.shape == (30, 1)
    assert tr.estimates["kf:0"].mean.shape == (30, 2)
    assert tr.estimates["imm"].mean.shape == (30, 3)


def test_monte_carlo_is_deterministic():
    sc = paper_scenario(n_steps=80)
    a = run_monte_carlo(sc, runs=150, master_seed=3)
    b = run_monte_carlo(sc, runs=150, master_seed=3)
    for name in a.estimators:
        assert a.rmse[name].tobytes() == b.rmse[name].tobytes()
        assert a.nees[name].tobytes() == b.nees[name].tobytes()
    assert a.mode_probabilities["imm"].tobytes() == b.mode_probabilities["imm"].tobytes()


def test_backends_give_same_report():
    sc = paper_scenario(n_steps=60)
    a = run_monte_carlo(sc, runs=20, master_seed=1, backend="python")
    b = run_monte_carlo(sc, runs=20, master_seed=1, backend="auto")
    for name in a.estimators:
        np.testing.assert_allclose(a.rmse[name], b.rmse[name], rtol=1e-9)


def test_markov_scenario_runs():
    rep = run_monte_carlo(paper_scenario(n_steps=50, mode_schedule=None), runs=20, master_seed=2)
    assert rep.modes is None
    mu = rep.mode_probabilities["imm"]
    np.testing.assert_allclose(mu.sum(axis=1), 1.0, atol=1e-12)


def test_report_invariants():
    rep = run_monte_carlo(paper_scenario(n_steps=50), runs=30, master_seed=4)
    for name in rep.estimators:
        assert np.all(rep.rmse[name] >= 0) and np.all(rep.nees[name] >= 0)
    assert set(rep.intervals) == {2, 3}


def test_failed_runs_are_excluded(monkeypatch):
    sc = paper_scenario(n_steps=40, estimators=("imm",))
    original = simulation._Estimator.run
    calls = {"n": 0}

    def flaky(self, ys):
        calls["n"] += 1
        if calls["n"] == 2:
            raise DegenerateLikelihoods("injected")
        return original(self, ys)

    monkeypatch.setattr(simulation._Estimator, "run", flaky)
    rep = run_monte_carlo(sc, runs=5, master_seed=1)
    assert rep.runs_ok == 4 and rep.failure_count == 1
    assert rep.failures[0][:2] == (1, "imm")
    assert np.all(np.isfinite(rep.nees["imm"]))


@pytest.mark.parametrize("kw", [dict(n_steps=0), dict(mode_schedule=((5, 0),)),
                                dict(mode_schedule=((0, 0), (0, 1))), dict(estimators=("kf:5",)),
                                dict(estimators=("ukf",))])
def test_scenario_validation(kw):
    with pytest.raises(InvalidParameter):
        paper_scenario(**kw)
