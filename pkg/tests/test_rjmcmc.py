import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rjtune.rjmcmc import (ChainState, MoveConfig, MoveKind, accept_probability, birth_log_ratio,
                           birth_move, death_log_ratio, death_move, reversibility_identity_check,
                           run_chain, step, update_log_ratio, update_move)
from rjtune.rng import RngHandle
from rjtune.target import DensitySpec, TargetSpec


@pytest.fixture
def t7():
    return TargetSpec.build(7)


def test_move_config_validation():
    cfg = MoveConfig(0.4, 2.0, 2.38)
    assert sum(cfg.g) == pytest.approx(1.0)
    assert cfg.g[1] / cfg.g[2] == pytest.approx(2.0)
    for bad in (dict(tau=0.0), dict(tau=1.0), dict(tau=1.2), dict(A=1.5),
                dict(A=math.inf), dict(ell=0.0)):
        with pytest.raises(ValueError):
            cfg.replace(**bad)


def test_update_ratio_examples():
    t = TargetSpec.build(7)
    x = np.random.default_rng(0).standard_normal(10)
    assert accept_probability(update_log_ratio(t, x, x)) == 1.0
    # single site, X=0 -> Y=1
    f = DensitySpec.normal()
    assert math.exp(f.log_f(1.0) - f.log_f(0.0)) == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert accept_probability(-0.5) == pytest.approx(0.6065306597126334, abs=1e-15)


def test_birth_ratio_at_mode_and_boundary(t7):
    cfg = MoveConfig(0.415, 2.0, 2.38)
    assert accept_probability(birth_log_ratio(t7, cfg, 3, 0.3)) == pytest.approx(
        0.9285714285714286 / 2, abs=1e-12)
    assert round(accept_probability(birth_log_ratio(t7, cfg, 3, 0.3)), 4) == 0.4643
    assert birth_log_ratio(t7, cfg, 5, 0.3) == -math.inf


def test_death_ratio(t7):
    cfg = MoveConfig(0.415, 2.0, 2.38)
    assert death_log_ratio(t7, cfg, 1, 0.0) == -math.inf
    for k in range(2, 6):
        assert accept_probability(death_log_ratio(t7, cfg, k, 0.7)) == 1.0
    # a forced prior ratio of 0.4 with A = 2 gives 0.8
    assert accept_probability(math.log(0.4) + math.log(2.0)) == pytest.approx(0.8)


def test_moves_leave_state_consistent(t7):
    cfg = MoveConfig(0.415, 2.0, 2.38)
    gen = np.random.default_rng(5)
    s = ChainState.at(t7, 3, gen.standard_normal(10))
    s2, out = birth_move(t7, cfg, s, gen)
    if out.accepted:
        assert s2.k == 4 and np.array_equal(s2.x[:-1], s.x)
    s3, out = death_move(t7, cfg, s, gen)
    assert out.accepted and s3.k == 2 and np.array_equal(s3.x, s.x[:-1])
    assert s3.log_density_sum == pytest.approx(t7.log_f_sum(s3.x))
    s4, out = update_move(t7, cfg, s, gen)
    assert s4.k == s.k
    assert s4.log_density_sum == pytest.approx(t7.log_f_sum(s4.x))


def test_birth_at_kmax_and_death_at_one_rejected(t7):
    cfg = MoveConfig(0.415, 2.0, 2.38)
    gen = np.random.default_rng(1)
    top = ChainState.at(t7, 5, np.zeros(12))
    for _ in range(50):
        s, out = birth_move(t7, cfg, top, gen)
        assert not out.accepted and out.log_accept_ratio == -math.inf and s is top
    bottom = ChainState.at(t7, 1, np.zeros(8))
    for _ in range(50):
        s, out = death_move(t7, cfg, bottom, gen)
        assert not out.accepted and s is bottom


def test_step_thresholds(t7):
    cfg = MoveConfig(1 - 1e-9, 2.0, 2.38)
    s = ChainState.at(t7, 3, np.zeros(10))
    gen = np.random.default_rng(0)
    kinds = {step(t7, cfg, s, gen)[1].move_kind for _ in range(200)}
    assert kinds == {MoveKind.UPDATE}


def test_python_and_compiled_paths_agree(t7):
    cfg = MoveConfig(0.415, 2.0, 2.38)
    a = run_chain(t7, cfg, "from_target", 3000, 100, RngHandle(9), engine="python")
    b = run_chain(t7, cfg, "from_target", 3000, 100, RngHandle(9), engine="compiled")
    for name in ("k", "x1", "move_kind", "accepted", "counts"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_allclose(a.log_accept_ratio, b.log_accept_ratio, rtol=1e-12, atol=1e-12)


def test_custom_proposal_runs_python_path():
    t = TargetSpec.build(20, astar=2.0, q=DensitySpec.normal(0.0, 1.5))
    cfg = MoveConfig.for_target(t, 0.4)
    tr = run_chain(t, cfg, "from_target", 2000, 0, RngHandle(4))
    assert tr.iterations == 2000
    assert tr.acceptance_rate(MoveKind.BIRTH) > 0


def test_run_chain_invariants(t7):
    cfg = MoveConfig(0.3, 2.0, 2.38)
    tr = run_chain(t7, cfg, "from_target", 20_000, 0, RngHandle(2))
    steps = np.diff(np.concatenate([[tr.k0], tr.k]))
    assert set(np.unique(steps)) <= {-1, 0, 1}
    assert tr.counts[:, 0].sum() == tr.iterations
    assert np.all(tr.counts[:, 1] <= tr.counts[:, 0])
    assert tr.death_auto_accept_violations() == 0
    # update moves never change k
    assert np.all(steps[tr.move_kind == MoveKind.UPDATE] == 0)
    # move-type frequencies within 3 binomial standard errors
    for kind, g in zip(MoveKind, cfg.g):
        se = math.sqrt(g * (1 - g) / tr.iterations)
        assert abs(tr.proposed(kind) / tr.iterations - g) < 3 * se


def test_empty_trace_and_bad_args(t7):
    cfg = MoveConfig(0.3, 2.0, 2.38)
    tr = run_chain(t7, cfg, "from_target", 50, 50, RngHandle(0))
    assert tr.iterations == 0 and tr.counts.sum() == 0
    with pytest.raises(ValueError):
        run_chain(t7, cfg, "from_target", 10, 20)
    with pytest.raises(ValueError):
        run_chain(t7, cfg, ChainState(3, np.zeros(4), 0.0), 10)
    with pytest.raises(ValueError):
        run_chain(t7, cfg, "warm", 10)


def test_tau_near_one_rarely_switches(t7):
    tr = run_chain(t7, MoveConfig(0.999, 2.0, 2.38), "from_target", 10_000, 0, RngHandle(1))
    assert tr.proposed(MoveKind.UPDATE) > 0.99 * tr.iterations
    assert tr.switch_rate() < 0.01


def test_same_seed_same_stream(t7):
    cfg = MoveConfig(0.415, 2.0, 2.38)
    a = run_chain(t7, cfg, "cold", 5000, 500, RngHandle(3, 1))
    b = run_chain(t7, cfg, "cold", 5000, 500, RngHandle(3, 1))
    c = run_chain(t7, cfg, "cold", 5000, 500, RngHandle(3, 2))
    assert np.array_equal(a.x1, b.x1) and np.array_equal(a.k, b.k)
    assert not np.array_equal(a.x1, c.x1)


def test_cached_density_sum_tracks_recomputation():
    t = TargetSpec.build(20)
    cfg = MoveConfig(0.415, 2.0, 2.38)
    tr = run_chain(t, cfg, "from_target", 40_000, 0, RngHandle(8), snapshot_every=10_000,
                   refresh_every=10**9)
    assert len(tr.snapshots) == 4
    s = tr.final_state
    assert abs(s.log_density_sum - t.log_f_sum(s.x)) < 1e-8


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([7, 20, 100]), st.integers(0, 2**32 - 1), st.floats(-10.0, 10.0))
def test_reversibility_identity(n, seed, u):
    t = TargetSpec.build(n)
    cfg = MoveConfig(0.415, 2.0, 2.38)
    gen = np.random.default_rng(seed)
    k = int(gen.integers(1, t.kmax))
    x = gen.standard_normal(t.dim(k))
    assert reversibility_identity_check(t, cfg, k, x, u) < 1e-10


def test_reversibility_tail_and_custom_q():
    t = TargetSpec.build(20)
    cfg = MoveConfig(0.415, 2.0, 2.38)
    x = np.zeros(t.dim(5))
    for u in (10.0, -10.0):
        assert reversibility_identity_check(t, cfg, 5, x, u) < 1e-8
    tq = TargetSpec.build(20, astar=2.0, q=DensitySpec.normal(0.3, 1.4))
    cq = MoveConfig.for_target(tq, 0.3)
    for u in (-3.0, 0.0, 2.5):
        assert reversibility_identity_check(tq, cq, 4, np.ones(tq.dim(4)), u) < 1e-8
    with pytest.raises(ValueError):
        reversibility_identity_check(t, cfg, t.kmax, np.zeros(t.dim(t.kmax)), 0.0)
