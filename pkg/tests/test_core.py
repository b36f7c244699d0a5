import math

import numpy as np
import pytest

from helpers import random_spd, straight_line_prox_spider
from spider3p.core import (MSchedule, RunConfig, control_variate_telescoping_check,
                           counters_at, counters_closed_form, draw_stop_time, exact_delta,
                           gamma_star, plan_complexity, run_3p_spider, theorem1_rhs)
from spider3p.exceptions import ConfigError, NumericalError, OracleError
from spider3p.oracles import GradientOracle, LinearOracle, LipschitzData, ZeroNoise, stream
from spider3p.prox import EllipsoidIndicator, Identity, Zero


def quadratic_toy(n=8, q=3, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    P = np.stack([random_spd(rng, q, 0.5, 1.5) for _ in range(n)])
    s_star = rng.standard_normal(q)
    oracle = LinearOracle.quadratic(P, s_star, noise=noise)
    L_i = np.linalg.eigvalsh(P)[:, -1]
    lip = LipschitzData(L_i, float(np.linalg.eigvalsh(P.mean(axis=0))[-1]))
    return oracle, s_star, lip


# -- step size, counters, plan ------------------------------------------------


def test_gamma_star_examples():
    assert gamma_star(1, 1, 1, 1, 4, 4) == pytest.approx(1 / 3, rel=1e-15)
    assert gamma_star(0.5, 2, 3, 1.5, 16, 16) == pytest.approx(0.5 / 9, rel=1e-15)
    assert gamma_star(1, 1, 2.0, 1e-12, 4, 1) == pytest.approx(0.5, rel=1e-9)
    with pytest.raises(ConfigError):
        gamma_star(0, 1, 1, 1, 1, 1)


def test_counter_closed_forms():
    assert counters_closed_form(2, 3, 4, 10, 5) == (8, 68, 340)
    assert counters_closed_form(1, 0, 4, 10, 5) == (1, 10, 50)


def test_plan_examples():
    p = plan_complexity(100, 0.1)
    assert (p.b, p.k_in, p.k_out, p.m) == (10, 10, 1, 10)
    assert (p.N_P, p.N_A, p.N_MC) == (11, 300, 3000)
    p = plan_complexity(1, 1 - 1e-12)
    assert (p.b, p.k_in, p.k_out, p.m) == (1, 1, 1, 1)
    p = plan_complexity(10_000, 0.01)
    assert (p.b, p.k_in, p.k_out, p.m) == (100, 100, 1, 100)
    with pytest.raises(ConfigError):
        plan_complexity(10, 0.0)


def test_stop_time_trivial_and_uniform():
    assert draw_stop_time(1, 0, np.random.default_rng(0)) == (1, 0)
    rng = np.random.default_rng(1)
    draws = np.array([draw_stop_time(3, 4, rng) for _ in range(100_000)])
    cells = np.zeros((3, 5))
    np.add.at(cells, (draws[:, 0] - 1, draws[:, 1]), 1)
    np.testing.assert_allclose(cells / len(draws), 1 / 15, atol=0.005)
    assert abs(np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]) <= 0.01


def test_m_schedule():
    sched = MSchedule([(1, 4), (9, 64)])
    assert [sched(t) for t in (1, 8, 9, 20)] == [4, 4, 64, 64]
    assert not sched.is_constant
    assert MSchedule(7)(3) == 7
    with pytest.raises(ConfigError):
        MSchedule([(2, 4)])


# -- theorem bound evaluator --------------------------------------------------


def test_theorem_bound_examples():
    kw = dict(v_min=0.5, v_max=2.0, L_Wdot=3.0, L=1.5)
    tb = theorem1_rhs(3, 4, 4, 5, C_v=1.0, W_g_gap=1.0, **kw)
    assert tb.mean_inner_1 == pytest.approx(2 / 5, rel=1e-15)
    tb0 = theorem1_rhs(3, 4, 4, 5, C_v=0.0, W_g_gap=2.0, **kw)
    A = 3.0 + 2 * 1.5 * 2.0 * 1.0
    assert tb0.bound_step == pytest.approx(2 * A * 2.0 / (0.25 * 3 * 5), rel=1e-14)
    z = theorem1_rhs(3, 4, 4, 5, C_v=0.0, W_g_gap=0.0, **kw)
    assert z.bound_step == 0.0 and z.bound_delta == 0.0
    assert tb.gamma_star == pytest.approx(gamma_star(0.5, 2.0, 3.0, 1.5, 4, 4))


def test_theorem_bound_monotone_in_inputs():
    base = dict(k_out=5, k_in=4, b=4, m_schedule=8, v_min=1.0, v_max=1.0, L_Wdot=1.0, L=1.0)
    lo = theorem1_rhs(**base, C_v=1.0, W_g_gap=1.0)
    hi = theorem1_rhs(**base, C_v=2.0, W_g_gap=1.0)
    assert hi.bound_step > lo.bound_step and hi.bound_delta > lo.bound_delta


# -- engine -------------------------------------------------------------------


def test_exact_full_batch_is_gradient_iteration():
    oracle, s_star, _ = quadratic_toy()
    n = oracle.n
    cfg = RunConfig(k_out=4, k_in=5, b=n, gamma=0.3, sampling="without_replacement", seed=1)
    traj = run_3p_spider(cfg, ZeroNoise(oracle), Identity(3), Zero())
    s = traj.state(1, 0).copy()
    for r in range(1, len(traj.t)):
        if traj.k[r] == 0:
            np.testing.assert_array_equal(traj.states[r], traj.states[r - 1])
            continue
        s = s + 0.3 * oracle.exact(np.arange(n), s).mean(axis=0)
        np.testing.assert_allclose(traj.states[r], s, atol=1e-12)


def test_exact_full_batch_control_equals_mean_field():
    oracle, _, _ = quadratic_toy()
    cfg = RunConfig(k_out=2, k_in=4, b=oracle.n, gamma=0.3, sampling="without_replacement")
    traj = run_3p_spider(cfg, ZeroNoise(oracle), Identity(3), Zero())
    for t in (1, 2):
        for k in range(1, 5):
            h = oracle.exact(np.arange(oracle.n), traj.state(t, k - 1)).mean(axis=0)
            np.testing.assert_allclose(traj.control[traj.index(t, k)], h, atol=1e-10)


def test_quadratic_toy_converges_with_gamma_star():
    oracle, s_star, lip = quadratic_toy()
    cfg = RunConfig(k_out=50, k_in=3, b=2, gamma="star", seed=4)
    traj = run_3p_spider(cfg, ZeroNoise(oracle), Identity(3), Zero(), lip)
    errs = np.linalg.norm(traj.states[traj.k == 3] - s_star, axis=1)
    assert errs[-1] <= 1e-6
    ratios = errs[1:20] / errs[:19]
    assert np.all(ratios < 1.0)


def test_reduction_to_prox_spider():
    rng = np.random.default_rng(7)
    n, q = 6, 10
    A = np.stack([-random_spd(rng, q, 0.5, 1.5) for _ in range(n)])
    c = rng.standard_normal((n, q))
    oracle = LinearOracle(A, c)
    g = EllipsoidIndicator(np.eye(q), 0.5)
    cfg = RunConfig(k_out=3, k_in=4, b=3, gamma=0.2, seed=5)
    traj = run_3p_spider(cfg, ZeroNoise(oracle), Identity(q), g)

    def prox(y):
        nrm = np.linalg.norm(y)
        return y if nrm**2 <= 0.5 else y * math.sqrt(0.5) / nrm

    ref = straight_line_prox_spider(lambda i, s: A[i] @ s + c[i], prox, n, np.zeros(q), 0.2,
                                    3, 4, traj.batches.tolist())
    np.testing.assert_allclose(traj.states, np.array(ref), atol=1e-12)


def test_counters_at_every_step(toy):
    oracle = toy[2]
    cfg = RunConfig(k_out=3, k_in=2, b=3, gamma=0.2, m_schedule=[(1, 2), (3, 5)], seed=2)
    traj = run_3p_spider(cfg, oracle, oracle.preconditioner(), oracle.regularizer())
    for t in range(1, 4):
        for k in range(3):
            assert tuple(traj.counters[traj.index(t, k)]) == counters_at(
                t, k, 2, 3, oracle.n, cfg.m_schedule)
    cfg = RunConfig(k_out=3, k_in=2, b=3, gamma=0.2, m_schedule=4)
    traj = run_3p_spider(cfg, oracle, oracle.preconditioner(), oracle.regularizer())
    assert tuple(traj.counters[-1]) == counters_closed_form(3, 2, 3, oracle.n, 4)


def test_subsampled_refresh_counters(toy):
    oracle = toy[2]
    cfg = RunConfig(k_out=3, k_in=2, b=2, gamma=0.2, m_schedule=3, refresh=3)
    traj = run_3p_spider(cfg, oracle, oracle.preconditioner(), oracle.regularizer())
    assert traj.counters[-1, 1] == 3 * (3 + 2 * 2 * 2)
    assert not cfg.theorem_compatible


def test_determinism_and_feasibility(toy):
    oracle = toy[2]
    g = oracle.regularizer()
    cfg = RunConfig(k_out=3, k_in=3, b=2, gamma=5.0, m_schedule=2, seed=11)
    a = run_3p_spider(cfg, oracle, oracle.preconditioner(), g)
    b = run_3p_spider(cfg, oracle, oracle.preconditioner(), g)
    for field in ("states", "control", "delta_hat", "counters", "batches"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    assert a.stop_time == b.stop_time
    quads = np.einsum("ij,jk,ik->i", a.states, g.Omega, a.states)
    assert np.all(quads <= g.radius * (1 + 1e-9))


def test_telescoping_audit(toy):
    oracle = toy[2]
    cfg = RunConfig(k_out=3, k_in=4, b=2, gamma=0.5, m_schedule=4, seed=3)
    traj = run_3p_spider(cfg, oracle, oracle.preconditioner(), oracle.regularizer())
    assert control_variate_telescoping_check(traj) <= 1e-10
    assert control_variate_telescoping_check(traj, oracle) <= 1e-10
    r0, r1 = traj.index(2, 0), traj.index(2, 1)
    np.testing.assert_array_equal(traj.control[r1], traj.control[r0] + traj.increments[r1])


def test_noise_sensitivity_monotone_in_m():
    oracle, _, lip = quadratic_toy(noise=1.0)
    finals = []
    for m in (1, 4, 16, 64):
        vals = []
        for seed in range(50):
            cfg = RunConfig(k_out=5, k_in=3, b=2, gamma="star", m_schedule=m, seed=seed)
            vals.append(run_3p_spider(cfg, oracle, Identity(3), Zero(), lip).delta_hat[-1])
        finals.append(np.mean(vals))
    assert all(x >= y for x, y in zip(finals, finals[1:]))


def test_exact_delta_at_stop_time(toy):
    oracle = toy[2]
    pre, g = oracle.preconditioner(), oracle.regularizer()
    cfg = RunConfig(k_out=2, k_in=3, b=2, gamma=0.4, m_schedule=2, seed=6, exact_delta=True,
                    exact_delta_stride=2)
    traj = run_3p_spider(cfg, oracle, pre, g)
    r = traj.at_stop_time()
    assert not math.isnan(traj.delta_exact[r])
    tau, K = traj.stop_time
    assert traj.delta_exact[r] == exact_delta(traj, oracle, pre, g, tau, K)
    assert np.sum(~np.isnan(traj.delta_exact)) >= 4


class _Failing(GradientOracle):
    has_exact = has_mc = True
    n, dim = 3, 2

    def exact(self, idx, s):
        return np.zeros((len(idx), 2))

    def mc(self, idx, s, m, rng):
        out = np.zeros((len(idx), 2))
        if np.any(s != 0):
            out[0, 0] = np.nan
        return out + 1.0


def test_non_finite_oracle_reports_coordinates():
    cfg = RunConfig(k_out=2, k_in=2, b=1, gamma=0.1)
    with pytest.raises(OracleError) as err:
        run_3p_spider(cfg, _Failing(), Identity(2), Zero())
    # the first inner step stays at the origin, the second one moves away
    assert err.value.where[:2] == (1, 2)


def test_zero_step_moving_the_iterate_is_an_error():
    # a prox that always shifts its input breaks the zero-step transition
    from spider3p.prox import GenericProx
    shift = GenericProx(lambda B, gamma, s: s + 1.0, lambda s: 0.0)
    oracle, _, _ = quadratic_toy()
    with pytest.raises(NumericalError):
        run_3p_spider(RunConfig(k_out=2, k_in=1, b=1, gamma=0.1), ZeroNoise(oracle),
                      Identity(3), shift)


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(k_out=0, k_in=1, b=1)
    with pytest.raises(ConfigError):
        RunConfig(k_out=1, k_in=1, b=1, gamma="fast")
    with pytest.raises(ConfigError):
        run_3p_spider(RunConfig(k_out=1, k_in=1, b=1), ZeroNoise(quadratic_toy()[0]),
                      Identity(3), Zero())


def test_streams_are_distinct_by_coordinate():
    a = stream(0, 2, 1, 1, 0).random(4)
    b = stream(0, 2, 1, 1, 1).random(4)
    c = stream(1, 2, 1, 1, 0).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
