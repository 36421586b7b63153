"""Stationary and nonstationary (Paciorek-Stein) Matern covariances.

Local kernels are isotropic, ``Sigma_i = rho_i**2 * I_2``, so for two sites

    C_ij = sigma_i sigma_j * rho_i rho_j / ((rho_i**2 + rho_j**2) / 2)
           * 2**(1 - nu) / Gamma(nu) * x**nu K_nu(x),
    x    = 2 sqrt(nu Q_ij),   Q_ij = |s_i - s_j|**2 / ((rho_i**2 + rho_j**2) / 2).

With constant parameters this is the ordinary Matern in the ``2 sqrt(nu) d / rho``
scaling. Half-integer smoothness uses closed forms; everything else goes
through :func:`scipy.special.kv`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, kv

from .errors import DomainError, DuplicateLocations, NotPositiveDefinite, ValidationError
from .field_store import as_coords

NU_MAX = 3.0
_X_UNDERFLOW = 700.0


@dataclass(frozen=True)
class LocalParams:
    rho: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if rho.shape != sigma2.shape:
            raise ValidationError("rho and sigma2 must have the same length")
        _check_positive(rho, "rho")
        _check_positive(sigma2, "sigma2")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "sigma2", sigma2)

    def __len__(self):
        return self.rho.shape[0]

    @classmethod
    def constant(cls, n, rho, sigma2):
        return cls(np.full(n, float(rho)), np.full(n, float(sigma2)))


@dataclass(frozen=True)
class KernelConfig:
    nu: float = 1.5
    nugget: float = 0.0

    def __post_init__(self):
        _check_nu(self.nu)
        if not (self.nugget >= 0 and math.isfinite(self.nugget)):
            raise DomainError(f"nugget must be a nonnegative finite number, got {self.nugget}")


def _check_positive(a, name):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DomainError(f"{name} must be positive and finite")


def _check_nu(nu):
    if not (0 < nu <= NU_MAX and math.isfinite(nu)):
        raise DomainError(f"smoothness nu must lie in (0, {NU_MAX}], got {nu}")


def matern_correlation(x, nu):
    """Normalised Matern shape ``2**(1-nu)/Gamma(nu) * x**nu * K_nu(x)``; equals 1 at 0."""
    x = np.asarray(x, dtype=float)
    if nu == 0.5:
        return np.exp(-x)
    if nu == 1.5:
        return (1.0 + x) * np.exp(-x)
    if nu == 2.5:
        return (1.0 + x + x * x / 3.0) * np.exp(-x)
    out = np.zeros_like(x)
    zero = x == 0
    out[zero] = 1.0
    live = ~zero & (x < _X_UNDERFLOW)
    xl = x[live]
    # log form keeps x**nu finite where K_nu(x) is tiny
    with np.errstate(divide="ignore"):
        logk = np.log(kv(nu, xl))
    out[live] = np.exp((1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(xl) + logk)
    return out


def matern_stationary(d, nu, rho, sigma2):
    _check_nu(nu)
    _check_positive(rho, "rho")
    _check_positive(sigma2, "sigma2")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise DomainError("distance must be nonnegative")
    x = 2.0 * math.sqrt(nu) * d / rho
    out = sigma2 * matern_correlation(x, nu)
    return float(out) if out.ndim == 0 else out


def sq_distances(a, b):
    a = as_coords(a)
    b = as_coords(b)
    dx = a[:, 0][:, None] - b[:, 0][None, :]
    dy = a[:, 1][:, None] - b[:, 1][None, :]
    return dx * dx + dy * dy


def ns_correlation(coords_a, rho_a, coords_b, rho_b, nu, d2=None):
    """Nonstationary Matern correlation block (unit marginal variance).

    Pass a precomputed ``d2`` from :func:`sq_distances` to skip the geometry.
    """
    rho_a = np.asarray(rho_a, dtype=float)
    rho_b = np.asarray(rho_b, dtype=float)
    if d2 is None:
        d2 = sq_distances(coords_a, coords_b)
    ra2 = (rho_a * rho_a)[:, None]
    rb2 = (rho_b * rho_b)[None, :]
    half_sum = (ra2 + rb2) / 2.0
    prefactor = rho_a[:, None] * rho_b[None, :] / half_sum
    q = d2 / half_sum
    x = 2.0 * np.sqrt(nu * q)
    return prefactor * matern_correlation(x, nu)


def ns_cov(si, sj, params_i, params_j, nu):
    """Covariance between two sites; ``params_*`` are ``(rho, sigma2)`` pairs."""
    rho_i, s2_i = params_i
    rho_j, s2_j = params_j
    _check_nu(nu)
    _check_positive([rho_i, rho_j], "rho")
    _check_positive([s2_i, s2_j], "sigma2")
    r = ns_correlation(si, [rho_i], sj, [rho_j], nu)[0, 0]
    return float(math.sqrt(s2_i) * math.sqrt(s2_j) * r)


def build_cov_matrix(locs, params: LocalParams, config: KernelConfig = KernelConfig()):
    coords = as_coords(locs)
    if coords.shape[0] != len(params):
        raise ValidationError(f"{coords.shape[0]} locations but {len(params)} parameter pairs")
    if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
        raise DuplicateLocations("covariance locations must be distinct")
    sd = np.sqrt(params.sigma2)
    cov = ns_correlation(coords, params.rho, coords, params.rho, config.nu)
    cov *= sd[:, None]
    cov *= sd[None, :]
    cov[np.diag_indices_from(cov)] = params.sigma2 + config.nugget
    return cov


def chol_with_jitter(a, max_rel_jitter=1e-4):
    """Lower Cholesky factor of ``a + jitter * I`` with the smallest jitter that works.

    Jitter ladder: 0, then ``1e-10 * mean(diag)`` growing tenfold up to
    ``max_rel_jitter * mean(diag)``. Returns ``(L, jitter)``.
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(a)))
    if not (scale > 0 and math.isfinite(scale)):
        raise NotPositiveDefinite("matrix has a nonpositive or non-finite mean diagonal")
    eye = np.eye(a.shape[0])
    rel = 1e-10
    while rel <= max_rel_jitter * (1 + 1e-9):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(a + jitter * eye), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise NotPositiveDefinite(f"matrix not positive definite even with jitter {max_rel_jitter:g} * mean(diag)")
