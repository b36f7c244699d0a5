"""The 3P-SPIDER engine, its step-size rule, complexity accounting and bounds.

Notation follows the usual SPIDER layout: ``k_out`` outer epochs, each
starting with a refresh of the control variate and followed by ``k_in``
inner steps. Inner step ``k -> k+1`` of epoch ``t``:

    S_{t,k+1}     = S_{t,k} + b^{-1} sum_{i in B_{t,k+1}} (hhat_i^{t,k} - hhat_i^{t,k-1})
    S_hat_{t,k+1} = Prox_{B(S_hat_{t,k}), gamma g}(S_hat_{t,k} + gamma S_{t,k+1})

with both Monte Carlo approximations recomputed on independent streams.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .exceptions import CapabilityError, ConfigError, NumericalError, OracleError
from .oracles import MinibatchSampler, mean_field, stream
from .prox import default_init, prox_fixed_point_residual, weighted_prox

# stream roles
BATCH, REFRESH, INNER, STOP, REFRESH_BATCH = 0, 1, 2, 3, 4


def _ceil(x):
    # guard against 10.000000000000002-style rounding in closed-form plans
    return int(math.ceil(x * (1 - 1e-12)))


class MSchedule:
    """Piecewise-constant Monte Carlo budget keyed by the outer index.

    ``MSchedule([(1, 32), (10, 160)])`` uses ``m = 32`` for epochs 1..9 and
    ``m = 160`` from epoch 10 on. An int gives a constant schedule.
    """

    def __init__(self, spec):
        if isinstance(spec, MSchedule):
            spec = spec.pieces
        if isinstance(spec, (int, np.integer)):
            spec = [(1, int(spec))]
        pieces = sorted((int(t), int(m)) for t, m in spec)
        if not pieces or pieces[0][0] != 1:
            raise ConfigError("m schedule must start at epoch 1")
        if any(m < 1 for _, m in pieces):
            raise ConfigError("Monte Carlo budgets must be positive")
        self.pieces = pieces

    def __call__(self, t, k=None):
        m = self.pieces[0][1]
        for start, value in self.pieces:
            if t >= start:
                m = value
        return m

    @property
    def is_constant(self):
        return len({m for _, m in self.pieces}) == 1

    def to_json(self):
        return [list(p) for p in self.pieces]

    def __repr__(self):
        return f"MSchedule({self.pieces})"


@dataclass
class RunConfig:
    """Settings of one 3P-SPIDER run.

    ``gamma`` is a positive float or the string ``"star"`` (the Theorem-1 step
    size, which needs Lipschitz data at run time). ``refresh=None`` is the full
    refresh over all ``n`` indices; an int ``b'`` refreshes from a minibatch of
    that size instead.
    """

    k_out: int
    k_in: int
    b: int
    gamma: Union[float, str] = "star"
    gamma_t0: float = 0.0
    m_schedule: Union[int, list, MSchedule] = 1
    refresh: Optional[int] = None
    sampling: str = "with_replacement"
    seed: int = 0
    init: Optional[np.ndarray] = None
    exact_delta: bool = False
    exact_delta_stride: int = 0

    def __post_init__(self):
        if self.k_out < 1 or self.k_in < 0 or self.b < 1:
            raise ConfigError("k_out >= 1, k_in >= 0 and b >= 1 are required")
        if isinstance(self.gamma, str):
            if self.gamma != "star":
                raise ConfigError(f"unknown gamma rule {self.gamma!r}")
        elif not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.gamma_t0 < 0:
            raise ConfigError("gamma_t0 must be nonnegative")
        if self.refresh is not None and self.refresh < 1:
            raise ConfigError("subsampled refresh size must be positive")
        self.m_schedule = MSchedule(self.m_schedule)

    @property
    def theorem_compatible(self):
        return self.refresh is None and self.gamma_t0 == 0.0


@dataclass
class Trajectory:
    """Record of a run, one entry per ``(t, k)``.

    Arrays are indexed by record number; for 3P-SPIDER record
    ``(t - 1) * (k_in + 1) + k`` holds ``(t, k)`` for ``k = 0..k_in``.
    ``counters`` columns are ``(N_P, N_A, N_MC)`` after the record point.
    ``delta_exact`` is NaN where the exact residual was not evaluated.
    """

    t: np.ndarray
    k: np.ndarray
    states: np.ndarray
    delta_hat: np.ndarray
    gamma: np.ndarray
    m: np.ndarray
    counters: np.ndarray
    delta_exact: np.ndarray
    wall_ms: np.ndarray
    k_out: int = 0
    k_in: int = 0
    n: int = 0
    stop_time: Optional[tuple] = None
    epoch_start: Optional[np.ndarray] = None
    control: Optional[np.ndarray] = None
    increments: Optional[np.ndarray] = None
    batches: Optional[np.ndarray] = None
    seed: int = 0
    algorithm: str = "3p-spider"
    info: dict = field(default_factory=dict)

    def index(self, t, k):
        return (t - 1) * (self.k_in + 1) + k

    def state(self, t, k):
        """``S_hat_{t,k}``; ``k = -1`` gives the epoch's starting point."""
        if k == -1:
            return self.epoch_start[t - 1]
        return self.states[self.index(t, k)]

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def sq_norms(self):
        return np.einsum("ij,ij->i", self.states, self.states)

    @property
    def cumulative_inner(self):
        return (self.t - 1) * self.k_in + self.k

    def epoch_end_delta_hat(self):
        return self.delta_hat[self.k == self.k_in]

    def at_stop_time(self):
        tau, K = self.stop_time
        return self.index(tau, K)


# ----------------------------------------------------------------------------
# Step size, stop time, complexity
# ----------------------------------------------------------------------------


def gamma_star(v_min, v_max, L_Wdot, L, k_in, b):
    """Step size ``v_min / (L_Wdot + 2 L v_max sqrt(k_in / b))``."""
    for name, v in (("v_min", v_min), ("v_max", v_max), ("L_Wdot", L_Wdot),
                    ("k_in", k_in), ("b", b)):
        if not v > 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    if L < 0:
        raise ConfigError("L must be nonnegative")
    return v_min / (L_Wdot + 2.0 * L * v_max * math.sqrt(k_in) / math.sqrt(b))


def draw_stop_time(k_out, k_in, rng):
    """Uniform ``(tau, K)`` on ``{1..k_out} x {0..k_in}``, independent coordinates."""
    if k_out < 1 or k_in < 0:
        raise ConfigError("k_out >= 1 and k_in >= 0 required")
    tau = int(rng.integers(1, k_out + 1))
    K = int(rng.integers(0, k_in + 1))
    return tau, K


def counters_closed_form(k_out, k_in, b, n, m):
    """``(N_P, N_A, N_MC)`` of a full-refresh run with constant budget ``m``."""
    n_p = k_out * (k_in + 1)
    n_a = k_out * (n + 2 * b * k_in)
    return n_p, n_a, m * n_a


def counters_at(t, k, k_in, b, n, m_schedule):
    """Closed-form counters after record point ``(t, k)`` of a full-refresh run."""
    m_schedule = MSchedule(m_schedule)
    n_p = (t - 1) * (k_in + 1) + 1 + k
    n_a = (t - 1) * (n + 2 * b * k_in) + n + 2 * b * k
    n_mc = sum(m_schedule(u) * (n + 2 * b * k_in) for u in range(1, t))
    n_mc += m_schedule(t) * (n + 2 * b * k)
    return n_p, n_a, n_mc


@dataclass(frozen=True)
class ComplexityPlan:
    b: int
    k_in: int
    k_out: int
    m: int
    N_P: int
    N_A: int
    N_MC: int


def plan_complexity(n, epsilon):
    """Parameters ``b = k_in = ceil(sqrt n)``, ``k_out = ceil(1/(sqrt(n) eps))``, ``m = ceil(1/eps)``."""
    if n < 1:
        raise ConfigError("n must be positive")
    if not 0 < epsilon < 1:
        raise ConfigError("epsilon must lie in (0, 1)")
    root = math.sqrt(n)
    b = k_in = _ceil(root)
    k_out = max(1, _ceil(1.0 / (root * epsilon)))
    m = max(1, _ceil(1.0 / epsilon))
    n_p, n_a, n_mc = counters_closed_form(k_out, k_in, b, n, m)
    return ComplexityPlan(b, k_in, k_out, m, n_p, n_a, n_mc)


# ----------------------------------------------------------------------------
# Engine
# ----------------------------------------------------------------------------


def resolve_gamma(config, precond, lipschitz):
    if config.gamma == "star":
        if lipschitz is None:
            raise ConfigError("gamma='star' needs Lipschitz data")
        return gamma_star(precond.v_min, precond.v_max, lipschitz.L_Wdot, lipschitz.L,
                          max(config.k_in, 1), config.b)
    return float(config.gamma)


def _mc(oracle, idx, s, m, rng, where):
    try:
        out = oracle.mc(idx, s, m, rng)
    except OracleError as exc:
        raise OracleError(str(exc), where=where) from exc
    except NumericalError as exc:
        raise OracleError(str(exc), where=where) from exc
    if not np.all(np.isfinite(out)):
        raise OracleError("oracle returned non-finite values", where=where)
    return out


def run_3p_spider(config, oracle, precond, reg, lipschitz=None, callback=None):
    """Run 3P-SPIDER and return its :class:`Trajectory`.

    Parameters
    ----------
    config : RunConfig
    oracle : GradientOracle
        Needs Monte Carlo evaluation; wrap an exact oracle in
        :class:`~spider3p.oracles.ZeroNoise` for the noiseless algorithm.
    precond : Preconditioner
    reg : Regularizer
    lipschitz : LipschitzData, optional
        Required when ``config.gamma == "star"``.
    callback : callable, optional
        Called as ``callback(t, k, state)`` after each record point.

    Notes
    -----
    Every epoch ``t`` refreshes the control variate at ``S_hat_{t,-1}``, moves
    to ``S_hat_{t,0}`` with step ``gamma_t0`` (for ``t = 1`` the step is 0, so
    ``S_hat_{1,0}`` is the projection of the initial point), then runs
    ``k_in`` inner steps. This gives ``k_out (k_in + 1)`` prox calls and
    ``k_out (n + 2 b k_in)`` per-index evaluations.
    """
    if not oracle.has_mc:
        raise CapabilityError("run_3p_spider needs a Monte Carlo evaluator (see ZeroNoise)")
    cfg = config
    n, q = oracle.n, oracle.dim
    k_out, k_in, b = cfg.k_out, cfg.k_in, cfg.b
    gamma = resolve_gamma(cfg, precond, lipschitz)
    sampler = MinibatchSampler(n, b, cfg.sampling)
    refresh_sampler = None
    if cfg.refresh is not None:
        refresh_sampler = MinibatchSampler(n, cfg.refresh, cfg.sampling)
    seed = cfg.seed
    stop_time = draw_stop_time(k_out, k_in, stream(seed, STOP))

    if cfg.init is None:
        s_init = default_init(precond, reg, q)
    else:
        s_init = np.asarray(cfg.init, dtype=float).copy()
        if s_init.shape != (q,):
            raise ConfigError(f"init has shape {s_init.shape}, expected ({q},)")

    n_rec = k_out * (k_in + 1)
    states = np.empty((n_rec, q))
    control = np.empty((n_rec, q))
    increments = np.zeros((n_rec, q))
    delta_hat = np.zeros(n_rec)
    gammas = np.zeros(n_rec)
    ms = np.zeros(n_rec, dtype=np.int64)
    counters = np.zeros((n_rec, 3), dtype=np.int64)
    delta_exact = np.full(n_rec, np.nan)
    wall = np.zeros(n_rec)
    batches = np.zeros((k_out, k_in, b), dtype=np.int64)
    epoch_start = np.empty((k_out, q))
    tt = np.repeat(np.arange(1, k_out + 1), k_in + 1)
    kk = np.tile(np.arange(k_in + 1), k_out)

    n_p = n_a = n_mc = 0
    t0 = time.perf_counter()
    s_prev_epoch = s_init
    all_idx = np.arange(n)

    for t in range(1, k_out + 1):
        m = cfg.m_schedule(t)
        epoch_start[t - 1] = s_prev_epoch
        # refresh at S_hat_{t,-1}
        where = (t, -1, None)
        if refresh_sampler is None:
            idx = all_idx
        else:
            idx = refresh_sampler.sample(stream(seed, REFRESH_BATCH, t))
        S = _mc(oracle, idx, s_prev_epoch, m, stream(seed, REFRESH, t), where).mean(axis=0)
        n_a += len(idx)
        n_mc += len(idx) * m
        g0 = 0.0 if t == 1 else cfg.gamma_t0
        B = precond.matrix(s_prev_epoch)
        s_cur = weighted_prox(B, g0, reg, s_prev_epoch + g0 * S)
        n_p += 1
        d = s_cur - s_prev_epoch
        dd = float(d @ d)
        if g0 > 0:
            delta_hat_0 = dd / g0**2
        elif dd <= 1e-24 * max(1.0, float(s_prev_epoch @ s_prev_epoch)):
            delta_hat_0 = 0.0
        elif t == 1:
            # infeasible initial point projected onto dom(g): not a 0/0 ratio
            delta_hat_0 = 0.0
        else:
            raise NumericalError(f"zero step moved the iterate at epoch {t}")
        r = (t - 1) * (k_in + 1)
        states[r] = s_cur
        control[r] = S
        delta_hat[r] = delta_hat_0
        gammas[r] = g0
        ms[r] = m
        counters[r] = (n_p, n_a, n_mc)
        wall[r] = (time.perf_counter() - t0) * 1e3
        if callback is not None:
            callback(t, 0, s_cur)

        s_old = s_prev_epoch
        for k in range(k_in):
            where = (t, k + 1, None)
            batch = sampler.sample(stream(seed, BATCH, t, k + 1))
            batches[t - 1, k] = batch
            h_new = _mc(oracle, batch, s_cur, m, stream(seed, INNER, t, k + 1, 0), where)
            h_old = _mc(oracle, batch, s_old, m, stream(seed, INNER, t, k + 1, 1), where)
            inc = (h_new - h_old).mean(axis=0)
            S = S + inc
            n_a += 2 * b
            n_mc += 2 * b * m
            B = precond.matrix(s_cur)
            s_new = weighted_prox(B, gamma, reg, s_cur + gamma * S)
            n_p += 1
            if not np.all(np.isfinite(s_new)):
                raise NumericalError(f"non-finite iterate at (t={t}, k={k + 1})")
            d = s_new - s_cur
            r = (t - 1) * (k_in + 1) + k + 1
            states[r] = s_new
            control[r] = S
            increments[r] = inc
            delta_hat[r] = float(d @ d) / gamma**2
            gammas[r] = gamma
            ms[r] = m
            counters[r] = (n_p, n_a, n_mc)
            wall[r] = (time.perf_counter() - t0) * 1e3
            if callback is not None:
                callback(t, k + 1, s_new)
            s_old, s_cur = s_cur, s_new
        s_prev_epoch = s_cur

    traj = Trajectory(
        t=tt, k=kk, states=states, delta_hat=delta_hat, gamma=gammas, m=ms,
        counters=counters, delta_exact=delta_exact, wall_ms=wall,
        k_out=k_out, k_in=k_in, n=n, stop_time=stop_time,
        epoch_start=epoch_start, control=control, increments=increments,
        batches=batches, seed=seed, algorithm="3p-spider",
        info={"gamma": gamma, "b": b, "sampling": cfg.sampling,
              "m_schedule": cfg.m_schedule.to_json(), "refresh": cfg.refresh,
              "gamma_t0": cfg.gamma_t0})

    if cfg.exact_delta:
        if not oracle.has_exact:
            raise CapabilityError("exact residuals need an exact evaluator")
        points = {stop_time}
        if cfg.exact_delta_stride > 0:
            for r in range(0, n_rec, cfg.exact_delta_stride):
                points.add((int(tt[r]), int(kk[r])))
        for (t, k) in sorted(points):
            traj.delta_exact[traj.index(t, k)] = exact_delta(traj, oracle, precond, reg, t, k)
    return traj


def exact_delta(traj, oracle, precond, reg, t, k, gamma=None):
    """Exact residual ``Delta_{t,k}`` from a recorded trajectory.

    Uses ``S_hat_{t,k-1}`` as the base point and ``B(S_hat_{t,k})``. Record
    points with a zero step (``k = 0`` under the default transition) are
    normalized with the inner step size of the run.
    """
    s_prev = traj.state(t, k - 1)
    s_eval = traj.state(t, k)
    if gamma is None:
        gamma = traj.gamma[traj.index(t, k)]
        if gamma == 0:
            gamma = traj.info["gamma"]
    return prox_fixed_point_residual(s_prev, s_eval, gamma,
                                     lambda s: mean_field(oracle, s), precond, reg)


def control_variate_telescoping_check(traj, oracle=None):
    """Audit the control-variate recursion; returns the max discrepancy.

    The recorded ``S_{t,k} - S_{t,0}`` is compared (infinity norm) with the sum
    of the increments. When ``oracle`` is given, each increment is recomputed
    from the recorded batch and the run's RNG streams, so the check does not
    trust the recorded increments either.
    """
    worst = 0.0
    k_in = traj.k_in
    m_of = traj.m
    for t in range(1, traj.k_out + 1):
        base = traj.control[traj.index(t, 0)]
        acc = np.zeros_like(base)
        for k in range(1, k_in + 1):
            r = traj.index(t, k)
            if oracle is None:
                inc = traj.increments[r]
            else:
                batch = traj.batches[t - 1, k - 1]
                m = int(m_of[r])
                h_new = oracle.mc(batch, traj.state(t, k - 1), m,
                                  stream(traj.seed, INNER, t, k, 0))
                h_old = oracle.mc(batch, traj.state(t, k - 2), m,
                                  stream(traj.seed, INNER, t, k, 1))
                inc = (h_new - h_old).mean(axis=0)
            acc = acc + inc
            worst = max(worst, float(np.abs(traj.control[r] - base - acc).max()))
    return worst


# ----------------------------------------------------------------------------
# Theorem-1 bounds
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremBounds:
    bound_step: float
    bound_delta: float
    gamma_star: float
    mean_inner_1: float
    mean_inner_2: float
    reading: str = ("second inequality: the first brace factor multiplies the "
                    "step-difference expectation only")


def theorem1_rhs(k_out, k_in, b, m_schedule, v_min, v_max, L_Wdot, L, C_v, W_g_gap):
    """Right-hand sides of both Theorem-1 inequalities divided by their multipliers.

    Returns bounds on ``E[||S_hat_{tau,K} - S_hat_{tau,K-1}||^2 / gamma^2]``
    (``bound_step``) and on ``E[Delta_{tau,K}]`` (``bound_delta``), for a run with
    ``gamma = gamma_star``, full refresh, zero transition step and Monte Carlo
    budget ``m_{t,k} = m_schedule(t)``. The stop-time averages
    ``E[(k_in - K) / m_{tau,K+1}]`` and ``E[(k_in - K) / m_{tau,K}]`` are exact
    averages over the uniform grid. ``bound_delta`` substitutes ``bound_step``
    for the step-difference expectation.
    """
    if k_in < 1:
        raise ConfigError("the bound needs k_in >= 1")
    if W_g_gap < 0 or C_v < 0:
        raise ConfigError("W_g_gap and C_v must be nonnegative")
    if not L > 0:
        raise ConfigError("L must be positive")
    sched = MSchedule(m_schedule)
    root = math.sqrt(k_in / b)
    A = L_Wdot + 2.0 * L * v_max * root
    g_star = v_min / A
    e1 = e2 = 0.0
    for tau in range(1, k_out + 1):
        m = sched(tau)
        for K in range(k_in + 1):
            e1 += (k_in - K) / m
            e2 += (k_in - K) / m
    cells = k_out * (k_in + 1)
    e1 /= cells
    e2 /= cells
    rhs1 = W_g_gap / (k_out * (1 + k_in)) + C_v * v_max / (2 * L) / math.sqrt(k_in * b) * e1
    bound_step = rhs1 * 2.0 * A / v_min**2
    ratio = v_max / v_min
    factor = 1.0 / (L_Wdot / (L * v_min) + 2 * ratio * root)
    factor *= 1.0 / L + ratio**2 * g_star * root
    rhs2 = factor * bound_step + ratio**2 * C_v / L / math.sqrt(b * k_in) * e2
    bound_delta = rhs2 * (2.0 / v_min * A + L * root)
    return TheoremBounds(bound_step, bound_delta, g_star, e1, e2)
