"""The latent logistic model and its two gradient oracles.

Each row has a Gaussian latent variable observed through a logistic link.
The mean field h_i(s) is a tilted Gaussian expectation: an exact
Gauss-Hermite evaluation and a Monte Carlo one from a rejection sampler.
"""
import numpy as np

from spider3p import MinibatchSampler, estimate_cv, mean_field
from spider3p.logistic import ModelParams, generate_synthetic, make_oracles
from spider3p.oracles import eta_replicates

rng = np.random.default_rng(1)
data, theta_star = generate_synthetic(200, 4, 0.1, rng, theta_norm=2.0)
params = ModelParams(sigma2=0.1, tau=0.05)
oracle = make_oracles(data, params)
print("n, d =", data.n, data.d, " labels +1:", int((data.Y == 1).sum()))

# Omega shapes the feasible set and the preconditioner
om = oracle.omega
print("eigenvalues of Omega:", np.round(np.linalg.eigvalsh(om.Omega), 4))

s = oracle.regularizer().radial_projection(rng.standard_normal(4)) * 0.5
exact = oracle.exact([0, 1, 2], s)
mc = oracle.mc([0, 1, 2], s, 20_000, rng)
print("exact h_i:\n", exact)
print("MC h_i, m = 20000:\n", mc)

# grad W(s) = -Omega h(s), checked against the objective by central differences
eps = 1e-5
fd = np.array([(oracle.objective(s + eps * e) - oracle.objective(s - eps * e)) / (2 * eps)
               for e in np.eye(4)])
print("finite differences:", fd)
print("-Omega h(s):       ", -om.Omega @ mean_field(oracle, s))

# the SPIDER error eta has mean 0 and variance of order C_v / (b m)
cv = estimate_cv(oracle, [s, np.zeros(4)])
for m in (4, 16, 64):
    eta = eta_replicates(oracle, MinibatchSampler(data.n, 4), s, np.zeros(4), m, 4000, rng)
    print(f"m = {m:3d}  E|eta|^2 = {np.mean(np.sum(eta**2, 1)):.5f}"
          f"  C_v/(bm) = {cv / (4 * m):.5f}")
