"""Independent reference implementations used as test oracles."""
import math

import numpy as np
from scipy.special import expit

from spider3p.logistic import Dataset, ModelParams, generate_synthetic, make_oracles


def random_spd(rng, q, lo=0.5, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((q, q)))
    return (Q * rng.uniform(lo, hi, q)) @ Q.T


def brute_force_projection(B, Omega, radius, s, steps=100_000, tol=1e-15):
    """Projected gradient on (x - s)^T B (x - s) / 2 over {x^T Omega x <= radius}.

    Works in the Omega-metric, where projecting onto the ellipsoid is a radial
    rescaling. Exits early once an iteration moves the point by less than
    ``tol`` (relative), far below the 1e-6 agreement the tests ask for.
    """
    M = np.linalg.solve(Omega, B)
    step = 1.0 / max(np.linalg.eigvals(M).real)
    x = np.array(s, dtype=float)
    for _ in range(steps):
        y = x - step * M @ (x - s)
        qy = y @ Omega @ y
        if qy > radius:
            y *= math.sqrt(radius / qy)
        if np.abs(y - x).max() <= tol * max(1.0, np.abs(x).max()):
            x = y
            break
        x = y
    return x


def kkt_residual(B, Omega, s, out):
    """Infinity-norm residual of B (s - out) = lam Omega out and the fitted lam."""
    lhs = B @ (s - out)
    direction = Omega @ out
    lam = float(lhs @ direction / (direction @ direction))
    return float(np.abs(lhs - lam * direction).max()), lam


def trapezoid_tilted_mean(mu, a, sigma2, points=1_000_001, width=12.0):
    """E[z] under sigmoid(a z) N(z; mu, sigma2) by a fine trapezoid rule."""
    sd = math.sqrt(sigma2)
    z = np.linspace(mu - width * sd, mu + width * sd, points)
    w = expit(a * z) * np.exp(-0.5 * ((z - mu) / sd) ** 2)
    return np.trapezoid(z * w, z) / np.trapezoid(w, z)


def trapezoid_success(mu, a, sigma2, points=1_000_001, width=12.0):
    """E[sigmoid(a z)] with z ~ N(mu, sigma2), trapezoid rule."""
    sd = math.sqrt(sigma2)
    z = np.linspace(mu - width * sd, mu + width * sd, points)
    w = expit(a * z) * np.exp(-0.5 * ((z - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    return np.trapezoid(w, z)


def toy_problem(n=4, d=2, seed=11, sigma2=0.1, tau=1.0):
    rng = np.random.default_rng(seed)
    data, theta = generate_synthetic(n, d, sigma2, rng)
    params = ModelParams(sigma2, tau)
    return data, params, make_oracles(data, params)


def straight_line_prox_spider(h_i, prox, n, s0, gamma, k_out, k_in, batches):
    """Plain SPIDER with a prox step and exact per-index fields.

    ``batches[t][k]`` lists the indices of inner step ``k`` of epoch ``t``.
    Returns the list of iterates in record order ``(t, k)``, ``k = 0..k_in``.
    """
    out = []
    s_start = prox(s0)
    for t in range(k_out):
        S = sum(h_i(i, s_start) for i in range(n)) / n
        s_hat = s_start
        s_prev = s_start
        out.append(s_hat)
        for k in range(k_in):
            batch = batches[t][k]
            S = S + sum(h_i(i, s_hat) - h_i(i, s_prev) for i in batch) / len(batch)
            s_prev = s_hat
            s_hat = prox(s_hat + gamma * S)
            out.append(s_hat)
        s_start = s_hat
    return out
