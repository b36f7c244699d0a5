"""Per-index gradient oracles, minibatch sampling and Monte Carlo error statistics.

An oracle exposes the preconditioned per-index fields ``h_i(s)`` exactly
(:meth:`GradientOracle.exact`) and/or through Monte Carlo averages of a
statistic ``H_i(Z)`` with ``Z ~ pi_{i,s}`` (:meth:`GradientOracle.mc`). Both
methods are batched over an index array; indices are 0-based.

Randomness always comes from an explicit :class:`numpy.random.Generator`.
:func:`stream` builds counter-based streams keyed by integer tuples, so any
``(seed, role, t, k, side)`` coordinate gets its own reproducible stream.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import CapabilityError, ConfigError


def stream(seed, *key):
    """Independent generator for the integer coordinate ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class GradientOracle:
    """Base class. Subclasses set ``n``, ``dim`` and the capability flags."""

    n: int
    dim: int
    has_exact = False
    has_mc = False
    has_variance = False

    def exact(self, idx, s):
        """Rows ``h_i(s)`` for ``i in idx``, shape ``(len(idx), dim)``."""
        raise CapabilityError(f"{type(self).__name__} has no exact evaluator")

    def mc(self, idx, s, m, rng):
        """Rows ``m^{-1} sum_r H_i(Z_r)`` with fresh i.i.d. ``Z_r ~ pi_{i,s}``."""
        raise CapabilityError(f"{type(self).__name__} has no Monte Carlo evaluator")

    def variance(self, idx, s):
        """``E ||H_i(Z) - h_i(s)||^2`` under ``pi_{i,s}``, shape ``(len(idx),)``."""
        raise CapabilityError(f"{type(self).__name__} has no variance evaluator")

    def eval_exact(self, i, s):
        return self.exact(np.array([i]), s)[0]

    def eval_mc(self, i, s, m, rng):
        return self.mc(np.array([i]), s, m, rng)[0]


class ZeroNoise(GradientOracle):
    """Wrap an exact oracle so that Monte Carlo calls return the exact value.

    The ``m`` argument is still honored by the complexity counters of the
    engine, which makes this the ``m -> infinity`` surrogate.
    """

    has_exact = True
    has_mc = True
    has_variance = True

    def __init__(self, oracle):
        if not oracle.has_exact:
            raise CapabilityError("ZeroNoise needs an oracle with an exact evaluator")
        self.base = oracle
        self.n = oracle.n
        self.dim = oracle.dim

    def exact(self, idx, s):
        return self.base.exact(idx, s)

    def mc(self, idx, s, m, rng):
        return self.base.exact(idx, s)

    def variance(self, idx, s):
        return np.zeros(len(idx))


class LinearOracle(GradientOracle):
    """Affine fields ``h_i(s) = A_i s + c_i`` with optional Gaussian noise.

    The Monte Carlo statistic is ``H_i(z) = A_i s + c_i + z`` with
    ``z ~ N(0, noise^2 I)``, so the per-index variance is ``dim * noise^2``.
    Handy for quadratic toys: ``A_i = -P_i`` and ``c_i = P_i s_star`` give a
    fixed point at ``s_star``.
    """

    has_exact = True
    has_variance = True

    def __init__(self, A, c, noise=0.0):
        A = np.asarray(A, dtype=float)
        c = np.asarray(c, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2] or c.shape != A.shape[:2]:
            raise ConfigError("expected A of shape (n, q, q) and c of shape (n, q)")
        self.A, self.c = A, c
        self.n, self.dim = c.shape
        self.noise = float(noise)
        self.has_mc = True

    @classmethod
    def quadratic(cls, P, s_star, noise=0.0):
        P = np.asarray(P, dtype=float)
        return cls(-P, np.einsum("nij,j->ni", P, s_star), noise=noise)

    def exact(self, idx, s):
        idx = np.asarray(idx)
        return self.A[idx] @ s + self.c[idx]

    def mc(self, idx, s, m, rng):
        out = self.exact(idx, s)
        if self.noise > 0:
            z = rng.standard_normal((len(out), int(m), self.dim))
            out = out + self.noise * z.mean(axis=1)
        return out

    def variance(self, idx, s):
        return np.full(len(idx), self.dim * self.noise**2)


@dataclass
class LipschitzData:
    """Lipschitz constants of the per-index fields and of ``grad W``.

    ``aggregation`` chooses how the per-index constants enter the step-size
    rule: ``"max"`` (default, conservative) or ``"rms"``. ``L_override``
    replaces the aggregate entirely.
    """

    L_i: np.ndarray
    L_Wdot: float
    aggregation: str = "max"
    L_override: Optional[float] = None

    def __post_init__(self):
        self.L_i = np.atleast_1d(np.asarray(self.L_i, dtype=float))
        if self.aggregation not in ("max", "rms"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if not (np.all(self.L_i > 0) and self.L_Wdot > 0):
            raise ConfigError("Lipschitz constants must be positive")

    @property
    def L(self):
        if self.L_override is not None:
            return float(self.L_override)
        if self.aggregation == "max":
            return float(self.L_i.max())
        return float(np.sqrt(np.mean(self.L_i**2)))


@dataclass
class MinibatchSampler:
    n: int
    b: int
    mode: str = "with_replacement"

    def __post_init__(self):
        if self.n < 1 or self.b < 1:
            raise ConfigError("n and b must be positive")
        if self.mode not in ("with_replacement", "without_replacement"):
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if self.mode == "without_replacement" and self.b > self.n:
            raise ConfigError(f"batch size {self.b} exceeds n = {self.n} without replacement")

    def sample(self, rng):
        if self.mode == "with_replacement":
            return rng.integers(0, self.n, size=self.b)
        return rng.choice(self.n, size=self.b, replace=False)


def sample_minibatch(sampler, rng):
    """Draw one minibatch of ``sampler.b`` indices in ``0..n-1``."""
    return sampler.sample(as_generator(rng))


def mean_field(oracle, s):
    """``h(s) = n^{-1} sum_i h_i(s)``, summed in index order."""
    if not oracle.has_exact:
        raise CapabilityError("mean_field needs an exact evaluator")
    return oracle.exact(np.arange(oracle.n), np.asarray(s, dtype=float)).mean(axis=0)


def eta_error(oracle, batch, s_curr, s_prev, m, rng, shared=False):
    """Monte Carlo perturbation of one control-variate increment.

    Returns ``b^{-1} sum_{i in batch} (hhat_i(s_curr) - hhat_i(s_prev) - h_i(s_curr) + h_i(s_prev))``.
    The two Monte Carlo evaluations use independent child streams of ``rng``;
    ``shared=True`` replays the same stream for both (a diagnostic only).
    """
    if not (oracle.has_exact and oracle.has_mc):
        raise CapabilityError("eta_error needs both exact and Monte Carlo evaluators")
    rng = as_generator(rng)
    batch = np.asarray(batch)
    if shared:
        state = rng.bit_generator.state
        hc = oracle.mc(batch, s_curr, m, rng)
        rng.bit_generator.state = state
        hp = oracle.mc(batch, s_prev, m, rng)
    else:
        r_curr, r_prev = rng.spawn(2)
        hc = oracle.mc(batch, s_curr, m, r_curr)
        hp = oracle.mc(batch, s_prev, m, r_prev)
    ex = oracle.exact(batch, s_curr) - oracle.exact(batch, s_prev)
    return (hc - hp - ex).mean(axis=0)


def eta_replicates(oracle, sampler, s_curr, s_prev, m, reps, rng):
    """``reps`` independent draws of the perturbation, batch selection included.

    All batches are evaluated in one vectorized oracle call per state, which is
    equivalent to ``reps`` separate calls of :func:`eta_error` with fresh
    batches. Returns an array of shape ``(reps, dim)``.
    """
    rng = as_generator(rng)
    b = sampler.b
    idx = np.concatenate([sampler.sample(rng) for _ in range(reps)])
    r_curr, r_prev = rng.spawn(2)
    diff = oracle.mc(idx, s_curr, m, r_curr) - oracle.mc(idx, s_prev, m, r_prev)
    diff -= oracle.exact(idx, s_curr) - oracle.exact(idx, s_prev)
    return diff.reshape(reps, b, -1).mean(axis=1)


def estimate_cv(oracle, states):
    """Largest value of ``2 n^{-1} sum_i Var_{pi_{i,s}}(H_i)`` over ``states``.

    This is a lower surrogate of the supremum over the whole domain; pass
    states that cover the feasible set (visited iterates, boundary points)
    when the value feeds a bound.
    """
    if not oracle.has_variance:
        raise CapabilityError("estimate_cv needs a per-index variance evaluator")
    idx = np.arange(oracle.n)
    best = 0.0
    for s in states:
        v = 2.0 * float(np.mean(oracle.variance(idx, np.asarray(s, dtype=float))))
        best = max(best, v)
    return best

