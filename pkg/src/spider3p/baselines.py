"""Reference algorithms: Prox-Online-EM and deterministic prox-gradient.

Both return a :class:`~spider3p.core.Trajectory` with one record per iteration
``t = 1..T`` (``k`` is always 0) so the harness can treat all runs alike.
"""
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import BATCH, INNER, Trajectory, _mc
from .exceptions import CapabilityError, ConfigError, NumericalError
from .oracles import MinibatchSampler, mean_field, stream
from .prox import default_init, weighted_prox


@dataclass
class OnlineConfig:
    """Prox-Online-EM settings.

    ``decay="constant"`` uses ``gamma_t = gamma``; ``decay="inverse"`` uses
    ``gamma_t = gamma / t``.
    """

    T: int
    b: int
    gamma: float = 0.1
    m: int = 1
    seed: int = 0
    decay: str = "constant"
    sampling: str = "with_replacement"
    init: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.T < 1 or self.b < 1 or self.m < 1:
            raise ConfigError("T, b and m must be positive")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.decay not in ("constant", "inverse"):
            raise ConfigError(f"unknown decay {self.decay!r}")

    def step(self, t):
        return self.gamma if self.decay == "constant" else self.gamma / t


def _empty(T, q):
    return dict(
        t=np.arange(1, T + 1), k=np.zeros(T, dtype=np.int64), states=np.empty((T, q)),
        delta_hat=np.zeros(T), gamma=np.zeros(T), m=np.zeros(T, dtype=np.int64),
        counters=np.zeros((T, 3), dtype=np.int64), delta_exact=np.full(T, np.nan),
        wall_ms=np.zeros(T))


def run_prox_online_em(config, oracle, precond, reg):
    """``S_{t+1} = Prox_{B(S_t), gamma g}(S_t + gamma b^{-1} sum_{i in B_{t+1}} hhat_i(S_t))``.

    Fresh batch and fresh Monte Carlo draws at every iteration.
    """
    if not oracle.has_mc:
        raise CapabilityError("Prox-Online-EM needs a Monte Carlo evaluator")
    cfg = config
    q = oracle.dim
    sampler = MinibatchSampler(oracle.n, cfg.b, cfg.sampling)
    s = default_init(precond, reg, q) if cfg.init is None else np.asarray(cfg.init, float).copy()
    rec = _empty(cfg.T, q)
    t0 = time.perf_counter()
    init = s.copy()
    for t in range(1, cfg.T + 1):
        gamma = cfg.step(t)
        batch = sampler.sample(stream(cfg.seed, BATCH, t, 1))
        hb = _mc(oracle, batch, s, cfg.m, stream(cfg.seed, INNER, t, 1, 0), (t, 0, None))
        s_new = weighted_prox(precond.matrix(s), gamma, reg, s + gamma * hb.mean(axis=0))
        if not np.all(np.isfinite(s_new)):
            raise NumericalError(f"non-finite iterate at t={t}")
        d = s_new - s
        r = t - 1
        rec["states"][r] = s_new
        rec["delta_hat"][r] = float(d @ d) / gamma**2
        rec["gamma"][r] = gamma
        rec["m"][r] = cfg.m
        rec["counters"][r] = (t, t * cfg.b, t * cfg.b * cfg.m)
        rec["wall_ms"][r] = (time.perf_counter() - t0) * 1e3
        s = s_new
    return Trajectory(**rec, k_out=cfg.T, k_in=0, n=oracle.n, seed=cfg.seed,
                      algorithm="prox-online-em",
                      info={"init": init, "b": cfg.b, "gamma": cfg.gamma, "decay": cfg.decay})


def run_full_prox_gradient(T, gamma, oracle, precond, reg, init=None, tol=0.0, objective=None):
    """Deterministic ``S_{t+1} = Prox_{B(S_t), gamma g}(S_t + gamma h(S_t))``.

    Stops early once ``Delta_hat_t <= tol`` (never when ``tol = 0``). ``objective`` (a callable on
    states) is evaluated at the final state and stored in ``info["objective"]``.
    """
    if not oracle.has_exact:
        raise CapabilityError("full prox-gradient needs an exact evaluator")
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    q = oracle.dim
    s = default_init(precond, reg, q) if init is None else np.asarray(init, float).copy()
    start = s.copy()
    rec = _empty(T, q)
    t0 = time.perf_counter()
    last = T
    for t in range(1, T + 1):
        s_new = weighted_prox(precond.matrix(s), gamma, reg, s + gamma * mean_field(oracle, s))
        if not np.all(np.isfinite(s_new)):
            raise NumericalError(f"non-finite iterate at t={t}")
        d = s_new - s
        r = t - 1
        rec["states"][r] = s_new
        rec["delta_hat"][r] = float(d @ d) / gamma**2
        rec["gamma"][r] = gamma
        rec["counters"][r] = (t, t * oracle.n, 0)
        rec["wall_ms"][r] = (time.perf_counter() - t0) * 1e3
        s = s_new
        if tol > 0 and rec["delta_hat"][r] <= tol:
            last = t
            break
    rec = {key: value[:last] for key, value in rec.items()}
    info = {"init": start, "gamma": gamma, "iterations": last}
    if objective is not None:
        info["objective"] = float(objective(s))
    return Trajectory(**rec, k_out=last, k_in=0, n=oracle.n, algorithm="full-prox-gradient",
                      info=info)
