import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qucrl.errors import DoubleConsumption, InvalidHorizon, InvalidParams, MixedKeys, StaleBuffer
from qucrl.mdp import Mdp, riverswim
from qucrl.quantum import (
    EstimatorConfig,
    QuantumSample,
    SampleBuffer,
    error_bound,
    experiment_budget,
    is_vacuous,
    oracle_step,
    qbounded_estimate,
)
from qucrl.verify import estimator_errors, reference_row


def point_mass_mdp(S=5, target=3):
    P = np.zeros((S, 1, S))
    P[:, 0, target] = 1.0
    return Mdp(P, np.zeros((S, 1)))


def samples_for(row, count, s=0, a=0):
    P = np.zeros((s + 1, a + 1, len(row)))
    P[s, a] = row
    return [QuantumSample(s, a, t, P) for t in range(count)]


# -- oracle ----------------------------------------------------------------

def test_point_mass_transition():
    mdp = point_mass_mdp()
    rng = np.random.default_rng(0)
    for t in range(20):
        s2, reward, sample = oracle_step(mdp, 1, 0, t, rng)
        assert s2 == 3 and reward == 0.0 and not sample.consumed


def test_oracle_is_seeded():
    env = riverswim(6)
    a = oracle_step(env, 2, 1, 7, np.random.default_rng(5))
    b = oracle_step(env, 2, 1, 7, np.random.default_rng(5))
    assert a[0] == b[0] and a[2].id == b[2].id == (2, 1, 7)


def test_oracle_frequencies_match_row():
    env = riverswim(6)
    rng = np.random.default_rng(11)
    draws = [oracle_step(env, 2, 1, t, rng)[0] for t in range(100_000)]
    freq = np.bincount(draws, minlength=6) / len(draws)
    assert np.max(np.abs(freq - env.P[2, 1])) <= 0.01


def test_oracle_registers_samples_and_validates_indices():
    env = riverswim(3)
    buf = SampleBuffer()
    rng = np.random.default_rng(0)
    for t in range(5):
        oracle_step(env, 1, 1, t, rng, buf)
    assert buf.count(1, 1) == 5 and len(buf) == 5
    with pytest.raises(InvalidParams):
        oracle_step(env, 3, 0, 0, rng)


def test_buffer_size_equals_oracle_calls():
    env = riverswim(4)
    rng = np.random.default_rng(1)
    buf = SampleBuffer()
    s = 0
    for t in range(300):
        a = int(rng.integers(2))
        s, _, _ = oracle_step(env, s, a, t, rng, buf)
    assert len(buf) == 300


# -- budget ----------------------------------------------------------------

def test_budget_examples():
    cfg = EstimatorConfig()
    assert experiment_budget(0, 10_000, 6, cfg) == 0
    assert experiment_budget(100, 10_000, 6, cfg) == 31
    assert experiment_budget(100, 10_000, 6, EstimatorConfig(c=1e6)) == 0


def test_budget_formula_by_hand():
    cost = math.sqrt(math.log(10_000 * math.sqrt(6)))
    assert cost == pytest.approx(3.179, abs=1e-3)
    assert math.floor(100 / cost) == 31


def test_budget_rejects_short_horizon():
    with pytest.raises(InvalidHorizon):
        experiment_budget(3, 1, 6, EstimatorConfig())


def test_budget_never_exceeds_samples_for_small_c():
    assert experiment_budget(50, 10, 2, EstimatorConfig(c=0.01)) == 50


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 10**7), st.integers(1, 50),
       st.floats(0.01, 100.0))
def test_budget_bounds_and_monotonicity(nu, T, S, c):
    cfg = EstimatorConfig(c=c)
    n = experiment_budget(nu, T, S, cfg)
    assert 0 <= n <= nu
    assert experiment_budget(nu + 1, T, S, cfg) >= n


def test_config_validation():
    with pytest.raises(InvalidParams):
        EstimatorConfig(c=0)
    with pytest.raises(InvalidParams):
        EstimatorConfig(L2=1.5)
    with pytest.raises(InvalidParams):
        EstimatorConfig(noise_mode="loud")


# -- estimator -------------------------------------------------------------

def test_below_threshold_returns_zero_and_consumes_all():
    samples = samples_for([0.2, 0.8], 5)
    est = qbounded_estimate(samples, 0, 0.05, EstimatorConfig(), np.random.default_rng(0))
    np.testing.assert_array_equal(est, [0.0, 0.0])
    assert all(s.consumed for s in samples)


def test_zero_noise_returns_the_row():
    row = np.eye(4)[2]
    est = qbounded_estimate(samples_for(row, 1), 50, 0.05,
                            EstimatorConfig(noise_mode="zero_noise"), np.random.default_rng(0))
    np.testing.assert_array_equal(est, row)


def test_conforming_noise_meets_bound_in_95_percent():
    S, delta, n = 6, 0.05, 64
    bound = math.log(S / delta) / n
    assert bound == pytest.approx(0.0748, abs=1e-4)
    err = estimator_errors(reference_row(S, 3), n, delta, 2000, np.random.default_rng(2))
    assert np.mean(err <= bound) >= 0.95


def test_adversarial_noise_sits_on_the_bound():
    row = np.full(4, 0.25)
    cfg = EstimatorConfig(noise_mode="adversarial_at_bound")
    est = qbounded_estimate(samples_for(row, 1), 100, 0.1, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(np.abs(est - row), error_bound(100, 0.1, 4), rtol=1e-12)


def test_output_clipped_to_unit_box():
    row = np.array([1.0, 0.0])
    cfg = EstimatorConfig(noise_mode="adversarial_at_bound")
    rng = np.random.default_rng(0)
    for _ in range(20):
        est = qbounded_estimate(samples_for(row, 1), 6, 0.4, cfg, rng)
        assert np.all(np.abs(est) <= 1.0)


def test_second_measurement_is_an_error():
    samples = samples_for([0.5, 0.5], 3)
    rng = np.random.default_rng(0)
    qbounded_estimate(samples, 10, 0.1, EstimatorConfig(), rng)
    with pytest.raises(DoubleConsumption):
        qbounded_estimate(samples, 10, 0.1, EstimatorConfig(), rng)
    with pytest.raises(DoubleConsumption):
        samples[0]._measure()


def test_mixed_pairs_rejected_without_consuming():
    P = np.full((2, 1, 2), 0.5)
    samples = [QuantumSample(0, 0, 0, P), QuantumSample(1, 0, 1, P)]
    with pytest.raises(MixedKeys):
        qbounded_estimate(samples, 5, 0.1, EstimatorConfig(), np.random.default_rng(0))
    assert not any(s.consumed for s in samples)


def test_delta_must_be_a_probability():
    with pytest.raises(InvalidParams):
        qbounded_estimate(samples_for([1.0], 1), 5, 1.0, EstimatorConfig(),
                          np.random.default_rng(0))


def test_vacuity_threshold():
    assert is_vacuous(4, 0.05, 6)       # log(120) = 4.79
    assert not is_vacuous(5, 0.05, 6)


def test_stale_buffer_detected():
    buf = SampleBuffer(epoch=2)
    buf.check_epoch(2)
    with pytest.raises(StaleBuffer):
        buf.check_epoch(3)


# -- properties ------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 300), st.floats(0.001, 0.9),
       st.sampled_from(["conforming_random", "zero_noise", "adversarial_at_bound"]),
       st.integers(0, 2**32 - 1))
def test_collapse_property(count, n, delta, mode, seed):
    rng = np.random.default_rng(seed)
    row = rng.dirichlet(np.ones(3))
    samples = samples_for(row, count)
    est = qbounded_estimate(samples, n, delta, EstimatorConfig(noise_mode=mode), rng)
    assert all(s.consumed for s in samples)
    assert est.shape == (3,) and np.all(np.abs(est) <= 1.0)
    with pytest.raises(DoubleConsumption):
        qbounded_estimate(samples, n, delta, EstimatorConfig(), rng)


@pytest.mark.parametrize("S", [3, 6])
@pytest.mark.parametrize("delta", [0.3, 0.1, 0.02])
@pytest.mark.parametrize("n", [20, 80])
def test_guarantee_conformance_grid(S, delta, n):
    trials = 2000
    err = estimator_errors(reference_row(S, 7), n, delta, trials, np.random.default_rng(n + S))
    rate = np.mean(err > error_bound(n, delta, S))
    assert rate <= delta + 3 * math.sqrt(delta * (1 - delta) / trials)


@pytest.mark.parametrize("n", [20, 40, 160])
def test_median_error_halves_when_n_doubles(n):
    rng = np.random.default_rng(n)
    row = reference_row(5, 1)
    m1 = np.median(estimator_errors(row, n, 0.1, 2000, rng))
    m2 = np.median(estimator_errors(row, 2 * n, 0.1, 2000, rng))
    assert 0.5 / 1.3 <= m2 / m1 <= 0.5 * 1.3
