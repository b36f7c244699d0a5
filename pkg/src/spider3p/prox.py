"""Preconditioners, regularizers and the weighted proximal operator.

The weighted proximal operator of a regularizer ``g`` is

    Prox_{B, gamma g}(s) = argmin_{s'} gamma * g(s') + 1/2 (s' - s)^T B (s' - s)

for a symmetric positive definite matrix ``B``. The fixed points of
``s -> Prox_{B(s), gamma g}(s + gamma h(s))`` are the stationary points of the
composite problem, and the squared, step-normalized distance to a fixed point
(:func:`prox_fixed_point_residual`) is the stationarity measure used throughout.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .exceptions import ConfigError, NumericalError, ProxConvergenceError

SPD_RTOL = 1e-10


def _check_spd(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigError(f"{name} has non-finite entries")
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.T).max() > SPD_RTOL * scale:
        raise ConfigError(f"{name} is not symmetric")
    M = 0.5 * (M + M.T)
    eig = np.linalg.eigvalsh(M)
    if eig[0] <= SPD_RTOL * max(abs(eig[-1]), 1e-300):
        raise ConfigError(f"{name} is not positive definite (min eigenvalue {eig[0]:.3e})")
    return M, eig


# ----------------------------------------------------------------------------
# Preconditioners
# ----------------------------------------------------------------------------


class Preconditioner:
    """Map ``s -> B(s)`` with spectrum contained in ``[v_min, v_max]``."""

    v_min: float
    v_max: float
    dim: int

    def matrix(self, s):
        raise NotImplementedError

    @property
    def is_constant(self):
        return False


class Identity(Preconditioner):
    def __init__(self, dim):
        if dim < 1:
            raise ConfigError("dimension must be positive")
        self.dim = int(dim)
        self.v_min = self.v_max = 1.0
        self._eye = np.eye(self.dim)
        self._eye.setflags(write=False)

    def matrix(self, s=None):
        return self._eye

    @property
    def is_constant(self):
        return True

    def __repr__(self):
        return f"Identity({self.dim})"


class ConstantSPD(Preconditioner):
    """Constant SPD preconditioner ``B(s) = M``.

    The spectral bounds default to the extreme eigenvalues of ``M``; when
    given explicitly they must enclose the spectrum (relative tolerance 1e-10).
    The Cholesky factor and inverse are computed once.
    """

    def __init__(self, M, v_min=None, v_max=None):
        M, eig = _check_spd(M, "preconditioner")
        self.dim = M.shape[0]
        self.v_min = float(eig[0]) if v_min is None else float(v_min)
        self.v_max = float(eig[-1]) if v_max is None else float(v_max)
        if not 0 < self.v_min <= self.v_max:
            raise ConfigError("spectral bounds must satisfy 0 < v_min <= v_max")
        tol = SPD_RTOL * eig[-1]
        if eig[0] < self.v_min - tol or eig[-1] > self.v_max + tol:
            raise ConfigError(
                f"spectrum [{eig[0]:.6g}, {eig[-1]:.6g}] not inside "
                f"[{self.v_min:.6g}, {self.v_max:.6g}]")
        self.M = M
        self.eigenvalues = eig
        self.cholesky = np.linalg.cholesky(M)
        self.inverse = scipy.linalg.cho_solve((self.cholesky, True), np.eye(self.dim))
        self.inverse = 0.5 * (self.inverse + self.inverse.T)
        for a in (self.M, self.cholesky, self.inverse):
            a.setflags(write=False)

    def matrix(self, s=None):
        return self.M

    @property
    def is_constant(self):
        return True

    def __repr__(self):
        return f"ConstantSPD(dim={self.dim}, v_min={self.v_min:.4g}, v_max={self.v_max:.4g})"


class Callback(Preconditioner):
    """State-dependent preconditioner given by a callable.

    SPD-ness and the spectral bounds are the caller's promise; pass
    ``validate=True`` to check every returned matrix (slow, for debugging).
    """

    def __init__(self, fn, dim, v_min, v_max, validate=False):
        if not 0 < v_min <= v_max:
            raise ConfigError("spectral bounds must satisfy 0 < v_min <= v_max")
        self.fn = fn
        self.dim = int(dim)
        self.v_min = float(v_min)
        self.v_max = float(v_max)
        self.validate = validate

    def matrix(self, s):
        B = np.asarray(self.fn(s), dtype=float)
        if self.validate:
            B, eig = _check_spd(B, "B(s)")
            tol = SPD_RTOL * eig[-1]
            if eig[0] < self.v_min - tol or eig[-1] > self.v_max + tol:
                raise NumericalError("B(s) spectrum outside the declared bounds")
        return B


# ----------------------------------------------------------------------------
# Regularizers
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RootFinderOptions:
    """Tolerances of the multiplier search in the general-B ellipsoid prox."""

    rtol: float = 1e-12
    max_iter: int = 200
    growth: float = 4.0


class Regularizer:
    is_indicator = False

    def value(self, s):
        raise NotImplementedError

    def prox(self, B, gamma, s):
        raise NotImplementedError

    def contains(self, s):
        return np.isfinite(self.value(s))


class Zero(Regularizer):
    """``g = 0`` on the whole space."""

    def value(self, s):
        return 0.0

    def prox(self, B, gamma, s):
        return np.array(s, dtype=float, copy=True)

    def __repr__(self):
        return "Zero()"


class EllipsoidIndicator(Regularizer):
    """Characteristic function of ``K = {s : s^T Omega s <= radius}``."""

    is_indicator = True

    def __init__(self, Omega, radius, options=None):
        Omega, _ = _check_spd(Omega, "Omega")
        if not radius > 0:
            raise ConfigError("radius must be positive")
        self.Omega = Omega
        self.Omega.setflags(write=False)
        self.radius = float(radius)
        self.options = options or RootFinderOptions()

    def quad(self, s):
        return float(s @ self.Omega @ s)

    def value(self, s):
        return 0.0 if self.quad(s) <= self.radius * (1 + 1e-12) else np.inf

    def radial_projection(self, s):
        """Projection onto K in the Omega-metric (a radial rescaling)."""
        q = self.quad(s)
        if q <= self.radius:
            return np.array(s, dtype=float, copy=True)
        return s * np.sqrt(self.radius / q)

    def proportional_factor(self, B):
        """Return c when ``B == c * Omega`` (to rounding), else None."""
        c = np.trace(B) / np.trace(self.Omega)
        if c > 0 and np.abs(B - c * self.Omega).max() <= 1e-12 * np.abs(B).max():
            return c
        return None

    def prox(self, B, gamma, s):
        # gamma plays no role: gamma * indicator is the same indicator
        s = np.asarray(s, dtype=float)
        if self.quad(s) <= self.radius:
            return s.copy()
        B = np.asarray(B, dtype=float)
        if self.proportional_factor(B) is not None:
            return self.radial_projection(s)
        return self._kkt_projection(B, s)

    def _kkt_projection(self, B, s):
        # Pencil (B, Omega): V^T Omega V = I, V^T B V = diag(mu). The KKT point
        # s' = (B + lam Omega)^{-1} B s becomes diagonal in that basis.
        mu, V = scipy.linalg.eigh(B, self.Omega)
        c = mu * (V.T @ (self.Omega @ s))
        r = self.radius
        opts = self.options

        def phi(lam):
            w = c / (mu + lam)
            return float(w @ w) - r, float(-2.0 * np.sum(w * w / (mu + lam)))

        lo, hi = 0.0, float(mu.max())
        f_hi, _ = phi(hi)
        n_grow = 0
        while f_hi > 0:
            lo, hi = hi, hi * opts.growth
            f_hi, _ = phi(hi)
            n_grow += 1
            if n_grow > 2000:
                raise ProxConvergenceError("could not bracket the multiplier", (lo, hi))
        lam = lo
        tol = opts.rtol * r
        for _ in range(opts.max_iter):
            f, df = phi(lam)
            if abs(f) <= tol:
                break
            if f > 0:
                lo = lam
            else:
                hi = lam
            step = lam - f / df if df < 0 else np.nan
            lam = step if lo < step < hi else 0.5 * (lo + hi)
        else:
            f, _ = phi(lam)
            if abs(f) > tol:
                raise ProxConvergenceError(
                    f"multiplier search did not reach |phi| <= {tol:.3e} "
                    f"in {opts.max_iter} iterations", (lo, hi))
        out = V @ (c / (mu + lam))
        return out

    def __repr__(self):
        return f"EllipsoidIndicator(dim={self.Omega.shape[0]}, radius={self.radius:.6g})"


class GenericProx(Regularizer):
    """User-supplied regularizer: ``prox_fn(B, gamma, s)`` and ``value_fn(s)``."""

    def __init__(self, prox_fn, value_fn, is_indicator=False):
        self.prox_fn = prox_fn
        self.value_fn = value_fn
        self.is_indicator = is_indicator

    def value(self, s):
        return float(self.value_fn(s))

    def prox(self, B, gamma, s):
        return np.asarray(self.prox_fn(B, gamma, s), dtype=float)


# ----------------------------------------------------------------------------
# Operations
# ----------------------------------------------------------------------------


def weighted_prox(B, gamma, g, s):
    """Evaluate ``Prox_{B, gamma g}(s)``.

    Parameters
    ----------
    B : ndarray (q, q)
        SPD weighting matrix, typically ``precond.matrix(state)``.
    gamma : float
        Nonnegative step size. For indicator regularizers the result does not
        depend on it; ``gamma = 0`` gives the B-weighted projection onto dom(g).
    g : Regularizer
    s : ndarray (q,)
    """
    if gamma < 0:
        raise ConfigError("gamma must be nonnegative")
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise NumericalError("prox input has non-finite entries")
    return g.prox(B, gamma, s)


def prox_fixed_point_residual(s_prev, s_eval, gamma, h, precond, g):
    """Squared step-normalized fixed-point residual.

    Returns ``||Prox_{B(s_eval), gamma g}(s_prev + gamma h(s_prev)) - s_prev||^2 / gamma^2``
    where ``h`` is the exact mean field (a callable). With ``B = I`` and
    ``g = 0`` this is ``||h(s_prev)||^2``.
    """
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    s_prev = np.asarray(s_prev, dtype=float)
    B = precond.matrix(s_eval)
    out = weighted_prox(B, gamma, g, s_prev + gamma * np.asarray(h(s_prev)))
    d = out - s_prev
    return float(d @ d) / gamma**2


def default_init(precond, g, dim: Optional[int] = None, s0=None):
    """Weighted projection of ``s0`` (default 0) onto dom(g)."""
    if s0 is None:
        s0 = np.zeros(dim if dim is not None else precond.dim)
    s0 = np.asarray(s0, dtype=float)
    return weighted_prox(precond.matrix(s0), 0.0, g, s0)

