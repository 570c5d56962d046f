import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from rjtune.diagnostics import (ReplicateEstimates, Truth, effective_sample_size,
                                empirical_acf, global_measure, integrated_autocorrelation_time,
                                mad_metrics, mean_standard_error, sample_mode, summarize)
from rjtune.target import ModelPrior, TargetSpec


def ar1(phi, size, seed):
    e = np.random.default_rng(seed).standard_normal(size)
    return signal.lfilter([1.0], [1.0, -phi], e)


def brute_global(est, truth):
    """Oracle transcribed independently from the displayed formula."""
    N = len(est.k_hat)
    dk = np.array([min(abs(k - m) for m in truth.modes) for k in est.k_hat], float)
    dm = np.abs(est.mu_hat - truth.mu)
    ds = np.abs(est.sigma_hat - truth.sigma)
    r = lambda d: (d.sum() / N) / math.sqrt((d ** 2).sum() / (N - 1))
    return r(dk) + 0.5 * (r(dm) + r(ds))


def test_sample_mode_ties_to_smallest():
    assert sample_mode([3, 3, 3]) == 3
    assert sample_mode([4, 2, 4, 2, 5]) == 2


def test_summarize_simple_traces():
    prior = ModelPrior(7)
    s = summarize(SimpleNamespace(k=np.array([3, 3, 3]), x1=np.zeros(3)), prior)
    assert (s.k_mode_hat, s.mu_hat, s.sigma_hat) == (3, 0.0, 0.0)
    with pytest.raises(ValueError):
        summarize(SimpleNamespace(k=np.array([], int), x1=np.array([])), prior)
    with pytest.raises(ValueError):
        summarize(SimpleNamespace(k=np.array([9]), x1=np.zeros(1)), prior)


def test_summarize_exact_samples():
    t = TargetSpec.build(7, 1.5, 2.0)
    gen = np.random.default_rng(3)
    m = 100_000
    k = t.prior.sample(gen, m)
    x1 = t.density.sample(gen, m)
    s = summarize(SimpleNamespace(k=k, x1=x1), t.prior)
    se = 2.0 / math.sqrt(m)
    assert abs(s.mu_hat - 1.5) < 3 * se
    assert abs(s.sigma_hat - 2.0) < 3 * 2.0 / math.sqrt(2 * m)
    assert s.k_mode_hat == 3
    assert s.ess["x1"] == pytest.approx(m, rel=0.1)
    counts = np.bincount(k)
    assert s.k_mode_hat == int(np.flatnonzero(counts == counts.max())[0])


def test_empirical_acf():
    with pytest.raises(ValueError):
        empirical_acf(np.ones(100), 5)
    with pytest.raises(ValueError):
        empirical_acf(np.arange(5.0), 5)
    alt = np.tile([1.0, -1.0], 500)
    assert empirical_acf(alt, 1)[1] == pytest.approx(-1.0, abs=2e-3)
    rho = empirical_acf(ar1(0.8, 1_000_000, 0), 3)
    assert rho[0] == 1.0
    assert abs(rho[1] - 0.8) < 0.01


def test_acf_matches_direct_sum():
    x = np.random.default_rng(1).standard_normal(500)
    d = x - x.mean()
    direct = [np.dot(d[:500 - s], d[s:]) / np.dot(d, d) for s in range(6)]
    np.testing.assert_allclose(empirical_acf(x, 5), direct, atol=1e-12)


def test_iat():
    iid = np.random.default_rng(2).standard_normal(100_000)
    assert integrated_autocorrelation_time(iid) == pytest.approx(1.0, abs=0.1)
    x = ar1(0.8, 1_000_000, 3)
    tau = integrated_autocorrelation_time(x)
    assert abs(tau / 9.0 - 1) < 0.15
    sub = x[:: int(math.ceil(tau))]
    assert integrated_autocorrelation_time(sub) == pytest.approx(1.0, abs=0.3)
    assert effective_sample_size(x) == pytest.approx(x.size / tau)
    with pytest.raises(ValueError):
        integrated_autocorrelation_time(np.zeros(10))
    with pytest.raises(ValueError):
        integrated_autocorrelation_time(np.ones(5000))


def test_mean_standard_error_ar1():
    x = ar1(0.5, 200_000, 4)
    se = mean_standard_error(x)
    # stationary var 1/(1-phi^2), IAT (1+phi)/(1-phi)
    expected = math.sqrt((1 / 0.75) * 3 / x.size)
    assert se == pytest.approx(expected, rel=0.1)
    assert mean_standard_error(np.ones(2000)) == 0.0


def test_mad_examples():
    truth = Truth((7,), 0.0, 1.0)
    exact = ReplicateEstimates([7] * 4, [0.0] * 4, [1.0] * 4)
    assert mad_metrics(exact, truth).__dict__ == {"k": 0.0, "mu": 0.0, "sigma": 0.0}
    half = ReplicateEstimates([7, 8, 7, 6], [0.0] * 4, [1.0] * 4)
    assert mad_metrics(half, truth).k == 0.5
    bimodal = Truth((6, 7), 0.0, 1.0)
    assert mad_metrics(ReplicateEstimates([6, 7, 8, 5], [0] * 4, [1] * 4), bimodal).k == 0.5
    with pytest.raises(ValueError):
        mad_metrics(ReplicateEstimates([7], [0.0], [1.0]), truth)
    with pytest.raises(ValueError):
        ReplicateEstimates([7, 7], [0.0], [1.0, 1.0])


def test_truth_for_target():
    assert Truth.for_target(TargetSpec.build(20, 1.0, 2.0)) == Truth((7,), 1.0, 2.0)


def test_global_measure_examples():
    truth = Truth((7,), 0.0, 1.0)
    N = 10_000
    const = ReplicateEstimates([8] * N, [0.3] * N, [1.2] * N)
    gm, flags = global_measure(const, truth)
    assert gm == pytest.approx(2 * math.sqrt((N - 1) / N), rel=1e-12)
    assert not flags
    # a single outlier in the k block gives about 1/sqrt(N)
    k = [7] * (N - 1) + [20]
    gm2, _ = global_measure(ReplicateEstimates(k, [0.3] * N, [1.2] * N), truth)
    r_k = gm2 - 0.5 * 2 * math.sqrt((N - 1) / N)
    assert r_k == pytest.approx(math.sqrt(N - 1) / N, rel=1e-9)
    gm3, flags3 = global_measure(ReplicateEstimates([7] * 5, [0.1, -0.2, 0.3, 0, 1],
                                                    [1, 1.1, 0.9, 1, 1.2]), truth)
    assert flags3 == ["zero_deviation_k"]
    assert gm3 >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 300))
def test_global_measure_matches_oracle_and_is_permutation_invariant(seed, N):
    gen = np.random.default_rng(seed)
    truth = Truth((6, 7), 0.5, 1.5)
    est = ReplicateEstimates(gen.integers(1, 14, N), gen.normal(0.5, 0.1, N),
                             gen.normal(1.5, 0.1, N))
    gm, flags = global_measure(est, truth)
    if flags:
        return
    assert gm == pytest.approx(brute_global(est, truth), abs=1e-12)
    perm = gen.permutation(N)
    shuffled = ReplicateEstimates(est.k_hat[perm], est.mu_hat[perm], est.sigma_hat[perm])
    assert global_measure(shuffled, truth)[0] == pytest.approx(gm, abs=1e-12)
    m = mad_metrics(est, truth)
    assert m.mu == pytest.approx(np.mean([abs(v - 0.5) for v in est.mu_hat]), abs=1e-14)
