"""3P-SPIDER against Prox-Online-EM at a matched budget.

Both methods draw b fresh rows per step; SPIDER adds one full pass per
epoch and a control variate between refreshes.  We compare the median
residual proxy Delta_hat over replications.
"""
import math

import numpy as np

from spider3p import OnlineConfig, RunConfig, run_3p_spider, run_prox_online_em
from spider3p.harness import build_problem, epoch_budget_quantiles

problem = build_problem({"synthetic": {"n": 400, "d": 6, "seed": 7, "theta_norm": 5.0,
                                       "x_scale": 5.0},
                         "sigma2": 0.1, "tau": 0.005})

cfg = dict(k_out=6, k_in=20, b=20, gamma="star", m_schedule=16)
spider = [run_3p_spider(RunConfig(**cfg, seed=r), problem.oracle, problem.precond,
                        problem.reg, problem.lipschitz) for r in range(1, 9)]
print("gamma* =", spider[0].info["gamma"])
print("final (N_P, N_A, N_MC):", spider[0].counters[-1])

# Online-EM with batch 2b spends as many rows per step as one SPIDER inner step
T = math.ceil(spider[0].counters[-1, 1] / 40)
online = [run_prox_online_em(OnlineConfig(T=T, b=40, gamma=0.1, m=16, seed=r),
                             problem.oracle, problem.precond, problem.reg)
          for r in range(1, 9)]

print(" t   SPIDER q50   Online q50")
for row in epoch_budget_quantiles(spider, online):
    print(f"{row['t']:2d}   {row['spider_q50']:.4g}   {row['online_q50']:.4g}")

ends = np.median([tr.epoch_end_delta_hat() for tr in spider], axis=0)
print("epoch-end medians:", np.round(ends, 3))
