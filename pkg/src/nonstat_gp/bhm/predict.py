"""Posterior-predictive kriging from retained draws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ..covariance import chol_with_jitter, ns_correlation, sq_distances
from ..errors import NoSamples, ValidationError
from ..field_store import as_coords
from ..transfer import TransferCoefficients, params_from_hats
from .sampler import PosteriorSamples

Z95 = 1.96


@dataclass(frozen=True)
class PredictiveSummary:
    days: np.ndarray
    coords: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    between_var: np.ndarray
    within_var: np.ndarray


def predict(samples: PosteriorSamples, new_coords, new_days, new_design, new_rho_hat, new_s2_hat,
            thin=1, include_nugget=True) -> PredictiveSummary:
    """Gaussian summary of the posterior predictive at ``(day, location)`` pairs.

    For each retained draw the spatial effect at new sites is kriged from the
    sampled ``w`` under that draw's covariance, the draw's ``beta_t`` gives the
    mean and ``tau2`` is added to the variance. Draws are pooled with the law of
    total variance.
    """
    if len(samples) == 0:
        raise NoSamples("posterior sample set is empty")
    coords = as_coords(new_coords)
    m = coords.shape[0]
    days = np.asarray(new_days)
    X = np.atleast_2d(np.asarray(new_design, dtype=float))
    if X.shape[0] != m or days.shape[0] != m:
        raise ValidationError("new locations, days and design rows must align")
    lookup = {int(t): j for j, t in enumerate(samples.times.tolist())}
    try:
        tcol = np.array([lookup[int(d)] for d in days], dtype=int)
    except KeyError as exc:
        raise ValidationError(f"day {exc.args[0]} has no sampled coefficients") from None
    rho_hat_new = np.asarray(new_rho_hat, dtype=float)
    s2_hat_new = np.asarray(new_s2_hat, dtype=float)

    # distinct prediction sites share one kriging solve across days
    uniq, site_of = np.unique(coords, axis=0, return_inverse=True)
    site_of = site_of.ravel()
    first = np.zeros(uniq.shape[0], dtype=int)
    first[site_of[::-1]] = np.arange(m)[::-1]
    rho_hat_u, s2_hat_u = rho_hat_new[first], s2_hat_new[first]

    d2_ss = sq_distances(samples.site_coords, samples.site_coords)
    d2_us = sq_distances(uniq, samples.site_coords)
    draws = np.arange(0, len(samples), max(1, int(thin)))
    means = np.empty((draws.size, m))
    variances = np.empty((draws.size, m))
    cache_key, cache = None, None
    for k, r in enumerate(draws):
        coef = TransferCoefficients.from_array(samples.coef[r])
        nu = float(samples.nu[r])
        key = (coef.a1, coef.b1, nu)
        if key != cache_key:
            p_site = params_from_hats(coef, samples.site_rho_hat, samples.site_s2_hat)
            p_new = params_from_hats(coef, rho_hat_u, s2_hat_u)
            r_ss = ns_correlation(None, p_site.rho, None, p_site.rho, nu, d2=d2_ss)
            chol, _ = chol_with_jitter(r_ss)
            r_us = ns_correlation(None, p_new.rho, None, p_site.rho, nu, d2=d2_us)
            # A = L^-1 R_su; kriging weights in correlation units
            a = solve_triangular(chol, r_us.T, lower=True, check_finite=False)
            reduction = np.einsum("ij,ij->j", a, a)
            cache_key, cache = key, (chol, r_us, reduction)
        chol, r_us, reduction = cache
        sd_site = np.exp(0.5 * (coef.a2 + coef.b2 * np.log(samples.site_s2_hat)))
        sd_new = np.exp(0.5 * (coef.a2 + coef.b2 * np.log(s2_hat_u)))
        alpha = cho_solve((chol, True), samples.w[r] / sd_site)
        krig = sd_new * (r_us @ alpha)
        var_w = np.maximum(sd_new ** 2 * (1.0 - reduction), 0.0)
        mu = np.einsum("ij,ij->i", X, samples.beta[r][tcol])
        means[k] = mu + krig[site_of]
        variances[k] = var_w[site_of] + (samples.tau2[r] if include_nugget else 0.0)
    mean = means.mean(axis=0)
    between = means.var(axis=0)
    within = variances.mean(axis=0)
    sd = np.sqrt(between + within)
    return PredictiveSummary(days, coords, mean, sd, mean - Z95 * sd, mean + Z95 * sd, between, within)
