"""Logistic regression with Gaussian latent predictors, in expectation space.

Each observation ``Y_i`` in {-1, +1} has success probability
``E[sigmoid(<X_i, Z_i>)]`` with latent ``Z_i ~ N_d(theta, sigma2 I)``. Writing
``u_i = X_i / ||X_i||`` the likelihood only involves the scalar
``z = <u_i, Z_i> ~ N(mu_i, sigma2)`` with ``mu_i = <u_i, theta>``, and the
conditional law of ``z`` given ``Y_i`` is the tilted Gaussian

    p_i(z; theta)  propto  sigmoid(a_i z) N(z; mu_i, sigma2),   a_i = Y_i ||X_i||.

EM runs in the expectation space ``s`` with ``theta = Omega s``; the
preconditioned field is

    h_i(s) = u_i E_{p_i(.; Omega s)}[z] / sigma2 - s,

its mean ``h`` satisfies ``grad W(s) = -Omega h(s)`` for ``W(s) = F(Omega s)``,
so the preconditioner is ``B = Omega``.
"""
import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, log_expit, logsumexp

from .exceptions import ConfigError, NumericalError, OracleError
from .oracles import GradientOracle, LipschitzData
from .prox import ConstantSPD, EllipsoidIndicator

DEFAULT_NODES = 64
SAMPLER_CAP = 10**6


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.shape != (X.shape[0],):
            raise ConfigError(f"X must be (n, d) and Y (n,), got {X.shape} and {Y.shape}")
        if X.shape[0] < 1:
            raise ConfigError("dataset has no rows")
        if not np.all(np.isfinite(X)):
            raise ConfigError("X has non-finite entries")
        bad = np.flatnonzero(~np.isin(Y, (-1.0, 1.0)))
        if bad.size:
            raise ConfigError(f"labels must be -1 or 1 (rows {(bad + 1).tolist()[:10]})")
        norms = np.linalg.norm(X, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ConfigError(f"zero-norm covariate rows: {(zero + 1).tolist()[:10]}")
        for name, value in (("X", X), ("Y", Y), ("norms", norms), ("U", X / norms[:, None])):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def slopes(self):
        """Logistic slopes ``a_i = Y_i ||X_i||``."""
        return self.Y * self.norms


@dataclass(frozen=True)
class ModelParams:
    sigma2: float = 0.1
    tau: float = 1.0

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.tau > 0):
            raise ConfigError("sigma2 and tau must be positive")


@dataclass(frozen=True)
class OmegaMatrix:
    Omega: np.ndarray
    inverse: np.ndarray
    cholesky: np.ndarray
    eigenvalues: np.ndarray

    @property
    def lambda_min(self):
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self):
        return float(self.eigenvalues[-1])


def compute_omega(dataset, params):
    """``Omega = ((sigma2 n)^{-1} sum_i u_i u_i^T + 2 tau I)^{-1}``."""
    U = dataset.U
    prec = U.T @ U / (params.sigma2 * dataset.n) + 2.0 * params.tau * np.eye(dataset.d)
    prec = 0.5 * (prec + prec.T)
    L = np.linalg.cholesky(prec)
    Linv = np.linalg.solve(L, np.eye(dataset.d))
    Omega = Linv.T @ Linv
    Omega = 0.5 * (Omega + Omega.T)
    eig = np.linalg.eigvalsh(Omega)
    if eig[0] <= 0:
        raise NumericalError("Omega is not positive definite")
    return OmegaMatrix(Omega, prec, np.linalg.cholesky(Omega), eig)


def theta_of(omega, s):
    return omega.Omega @ s


def penalty_R(theta, omega):
    """``R(theta) = theta^T Omega^{-1} theta / 2``."""
    return 0.5 * float(theta @ omega.inverse @ theta)


# ----------------------------------------------------------------------------
# Tilted posterior: quadrature and exact sampling
# ----------------------------------------------------------------------------


_GH_CACHE = {}


def gauss_hermite(nodes):
    if nodes not in _GH_CACHE:
        x, w = hermgauss(nodes)
        _GH_CACHE[nodes] = (x, np.log(w) - 0.5 * math.log(math.pi))
    return _GH_CACHE[nodes]


def _log_weights(mu, a, sigma2, nodes):
    """Nodes ``z_ij`` and log-weights of the tilted density on the N(mu, sigma2) base."""
    x, logw = gauss_hermite(nodes)
    z = mu[:, None] + math.sqrt(2.0 * sigma2) * x[None, :]
    return z, logw[None, :] + log_expit(a[:, None] * z)


def posterior_moments(mu, a, sigma2, nodes=DEFAULT_NODES):
    """Mean and variance of ``p(z) propto sigmoid(a z) N(z; mu, sigma2)``, vectorized."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), mu.shape)
    z, lw = _log_weights(mu, a, sigma2, nodes)
    norm = logsumexp(lw, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalError("quadrature weights underflowed")
    p = np.exp(lw - norm)
    mean = np.sum(p * z, axis=1)
    var = np.sum(p * (z - mean[:, None]) ** 2, axis=1)
    return mean, var


def log_success_probability(mu, a, sigma2, nodes=DEFAULT_NODES):
    """``log E_{N(mu, sigma2)}[sigmoid(a z)]`` per row."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), mu.shape)
    _, lw = _log_weights(mu, a, sigma2, nodes)
    return logsumexp(lw, axis=1)


def sample_tilted(mu, a, sigma2, m, rng, cap=SAMPLER_CAP):
    """Exact draws from the tilted posteriors by rejection, shape ``(len(mu), m)``.

    Proposals come from ``N(mu_i, sigma2)`` and are accepted with probability
    ``sigmoid(a_i z)``. Every pending slot gets one proposal per round; a slot
    still empty after ``cap`` rounds raises :class:`OracleError`.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), mu.shape)
    sd = math.sqrt(sigma2)
    out = np.empty((mu.size, int(m)))
    rows = np.repeat(np.arange(mu.size), m)
    pending = np.arange(rows.size)
    flat = out.reshape(-1)
    rounds = 0
    while pending.size:
        if rounds >= cap:
            bad = np.unique(rows[pending])
            raise OracleError(
                f"rejection sampler exceeded {cap} rounds for rows {bad[:10].tolist()}")
        r = rows[pending]
        z = mu[r] + sd * rng.standard_normal(pending.size)
        ok = rng.random(pending.size) < expit(a[r] * z)
        flat[pending[ok]] = z[ok]
        pending = pending[~ok]
        rounds += 1
    return out


def acceptance_floor(mu, a, sigma2):
    """Lower bound on the acceptance rate, ``sigmoid(-|a| (|mu| + 3 sigma)) / 2``.

    The proposal puts more than half of its mass on ``|z| <= |mu| + 3 sigma``,
    where the acceptance probability is at least ``sigmoid(-|a| (|mu| + 3 sigma))``.
    """
    return 0.5 * expit(-np.abs(a) * (np.abs(mu) + 3 * math.sqrt(sigma2)))


# ----------------------------------------------------------------------------
# The model
# ----------------------------------------------------------------------------


class LatentLogistic(GradientOracle):
    """Oracle of the latent logistic model in expectation space.

    ``exact`` uses Gauss-Hermite quadrature (``nodes`` points), ``mc`` the
    rejection sampler, ``variance`` the quadrature posterior variance scaled by
    ``||u_i||^2 / sigma2^2 = 1 / sigma2^2``.
    """

    has_exact = True
    has_mc = True
    has_variance = True

    def __init__(self, dataset, params, omega=None, nodes=DEFAULT_NODES):
        if nodes < 16:
            raise ConfigError("at least 16 quadrature nodes are required")
        self.dataset = dataset
        self.params = params
        self.omega = omega if omega is not None else compute_omega(dataset, params)
        self.nodes = int(nodes)
        self.n = dataset.n
        self.dim = dataset.d
        self._a = dataset.slopes
        self._U = dataset.U

    def _mu(self, idx, s):
        return self._U[idx] @ (self.omega.Omega @ s)

    def posterior_mean(self, idx, s):
        idx = np.asarray(idx)
        mean, _ = posterior_moments(self._mu(idx, s), self._a[idx], self.params.sigma2, self.nodes)
        return mean

    def exact(self, idx, s):
        idx = np.asarray(idx)
        s = np.asarray(s, dtype=float)
        ez = self.posterior_mean(idx, s)
        return self._U[idx] * (ez / self.params.sigma2)[:, None] - s

    def mc(self, idx, s, m, rng):
        idx = np.asarray(idx)
        s = np.asarray(s, dtype=float)
        z = sample_tilted(self._mu(idx, s), self._a[idx], self.params.sigma2, m, rng)
        return self._U[idx] * (z.mean(axis=1) / self.params.sigma2)[:, None] - s

    def variance(self, idx, s):
        idx = np.asarray(idx)
        _, var = posterior_moments(self._mu(idx, s), self._a[idx], self.params.sigma2, self.nodes)
        return var / self.params.sigma2**2

    # problem pieces -------------------------------------------------------

    def preconditioner(self):
        return ConstantSPD(self.omega.Omega)

    def regularizer(self):
        return constraint_set(self.omega, self.params.tau)

    def objective(self, s):
        """``W(s) = F(Omega s)``."""
        return objective_F(self.omega.Omega @ s, self.dataset, self.params,
                           self.nodes, omega=self.omega)

    def lipschitz(self):
        return lipschitz_constants(self.dataset, self.params, self.omega)


def h_i_quadrature(i, s, dataset, params, omega, nodes=DEFAULT_NODES):
    """Per-index field ``u_i E[z] / sigma2 - s`` with ``E[z]`` by quadrature."""
    if nodes < 16:
        raise ConfigError("at least 16 quadrature nodes are required")
    s = np.asarray(s, dtype=float)
    mu = dataset.U[i] @ (omega.Omega @ s)
    try:
        mean, _ = posterior_moments(np.array([mu]), np.array([dataset.slopes[i]]),
                                    params.sigma2, nodes)
    except NumericalError as exc:
        raise NumericalError(f"{exc} (row {i}, s={s.tolist()})") from exc
    return dataset.U[i] * mean[0] / params.sigma2 - s


def sample_posterior(i, theta, dataset, params, rng):
    """One exact draw from ``p_i(.; theta)``."""
    mu = np.array([dataset.U[i] @ theta])
    return float(sample_tilted(mu, dataset.slopes[i:i + 1], params.sigma2, 1, rng)[0, 0])


def make_oracles(dataset, params, omega=None, nodes=DEFAULT_NODES):
    return LatentLogistic(dataset, params, omega, nodes)


def constraint_set(omega, tau):
    """``K = {s : s^T Omega s <= ln 4 / (tau lambda_min(Omega))}`` as an indicator."""
    if omega.lambda_min <= 0:
        raise ConfigError("Omega must be positive definite")
    return EllipsoidIndicator(omega.Omega, math.log(4.0) / (tau * omega.lambda_min))


def objective_F(theta, dataset, params, nodes=DEFAULT_NODES, omega=None):
    """Penalized normalized negative log-likelihood.

    Per row, ``-log int sigmoid(a_i z) exp(mu_i z / sigma2 - z^2 / (2 sigma2)) dz``
    is evaluated on the Gauss-Hermite grid of ``N(mu_i, sigma2)``; adding
    ``R(theta)`` and the Gaussian normalization ``log sqrt(2 pi sigma2)`` gives
    ``-n^{-1} sum_i log P_theta(Y_i) + tau ||theta||^2``, so ``F(0) = ln 2``.
    """
    theta = np.asarray(theta, dtype=float)
    if omega is None:
        omega = compute_omega(dataset, params)
    mu = dataset.U @ theta
    sigma2 = params.sigma2
    log_p = log_success_probability(mu, dataset.slopes, sigma2, nodes)
    if not np.all(np.isfinite(log_p)):
        raise NumericalError("likelihood quadrature underflowed")
    log_integral = log_p + mu**2 / (2 * sigma2) + 0.5 * math.log(2 * math.pi * sigma2)
    return float(-np.mean(log_integral) + penalty_R(theta, omega)
                 + 0.5 * math.log(2 * math.pi * sigma2))


def lipschitz_constants(dataset, params, omega):
    """Lipschitz data of the model.

    The Hessian of ``W`` lies between ``2 tau Omega^2`` and ``Omega`` because the
    tilted posterior variance never exceeds ``sigma2`` (the logistic factor is
    log-concave), hence ``L_Wdot = lambda_max(Omega)``. The Jacobian of
    ``h_i`` is ``c u_i u_i^T Omega - I`` with ``c in [0, 1/sigma2]``; its norm is
    convex in ``c``, so ``L_i`` is the larger of the two endpoint norms.
    """
    U = dataset.U
    d = dataset.d
    J = np.einsum("ni,nj->nij", U, U @ omega.Omega) / params.sigma2 - np.eye(d)[None]
    L_i = np.maximum(1.0, np.linalg.norm(J, ord=2, axis=(1, 2)))
    return LipschitzData(L_i=L_i, L_Wdot=omega.lambda_max)


# ----------------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------------


def generate_synthetic(n, d, sigma2, rng, theta_norm=1.0, x_scale=1.0, theta_star=None):
    """Synthetic dataset from the generative model.

    Covariate rows are standard normal vectors normalized to norm ``x_scale``;
    ``theta_star`` defaults to a uniform direction of norm ``theta_norm``.
    Returns ``(dataset, theta_star)``.
    """
    if n < 1 or d < 1:
        raise ConfigError("n and d must be positive")
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    if theta_star is None:
        direction = rng.standard_normal(d)
        theta_star = theta_norm * direction / np.linalg.norm(direction)
    theta_star = np.asarray(theta_star, dtype=float)
    X = rng.standard_normal((n, d))
    X *= x_scale / np.linalg.norm(X, axis=1, keepdims=True)
    Z = theta_star + math.sqrt(sigma2) * rng.standard_normal((n, d))
    p = expit(np.einsum("ij,ij->i", X, Z))
    Y = np.where(rng.random(n) < p, 1.0, -1.0)
    return Dataset(X, Y), theta_star


def save_dataset(path, dataset):
    """Write the CSV format: header ``y,x1..xd``, one row per observation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{j + 1}" for j in range(dataset.d)])
        for y, x in zip(dataset.Y, dataset.X):
            w.writerow([str(int(y))] + [repr(float(v)) for v in x])


def load_dataset(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header != ["y"] + [f"x{j + 1}" for j in range(d)]:
        raise ConfigError(f"{path}: header must be y,x1..xd, got {','.join(header)}")
    Y, X = [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise ConfigError(f"{path}:{line_no}: expected {d + 1} fields, got {len(row)}")
        try:
            y = float(row[0])
            x = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_no}: {exc}") from None
        if y not in (-1.0, 1.0):
            raise ConfigError(f"{path}:{line_no}: label must be -1 or 1")
        if not any(x):
            raise ConfigError(f"{path}:{line_no}: zero-norm covariate row")
        Y.append(y)
        X.append(x)
    if not Y:
        raise ConfigError(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(Y))


def save_sidecar(path, seed, theta_star, spec):
    with open(path, "w") as fh:
        json.dump({"seed": seed, "theta_star": [float(v) for v in theta_star],
                   "spec": spec}, fh, indent=2, sort_keys=True)
        fh.write("\n")
