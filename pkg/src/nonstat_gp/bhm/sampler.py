"""Metropolis-within-Gibbs sampler for the hierarchical model.

One sweep updates, in order: each ``beta_t`` (conjugate normal), the spatial
effect ``w`` (conjugate normal, drawn with Matheron's rule so that only the
well-conditioned matrix ``C + diag(tau2 / n_j)`` is inverted), ``tau2`` and
``omega2`` (conjugate inverse-gamma), the transfer coefficients one at a
time by random-walk Metropolis, and finally ``nu`` by random-walk Metropolis
on ``logit(nu / nu_max)``. Proposal scales adapt during burn-in only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ..covariance import chol_with_jitter, ns_correlation, sq_distances
from ..errors import ChainDiverged, NotPositiveDefinite, ValidationError
from ..transfer import LOG_CLAMP, TransferCoefficients
from .model import McmcState, ModelSpec, ObservationData, fitted_mean

_LOG_2PI = math.log(2.0 * math.pi)
ALL_BLOCKS = ("beta", "w", "tau2", "omega2", "coef", "nu")
COEF_NAMES = ("a1", "b1", "a2", "b2")


@dataclass
class PosteriorSamples:
    """Retained draws (burn-in removed) plus what prediction needs to reuse them."""

    beta: np.ndarray          # (R, T, K)
    w: np.ndarray             # (R, n_sites)
    tau2: np.ndarray
    omega2: np.ndarray
    coef: np.ndarray          # (R, 4) columns a1, b1, a2, b2
    nu: np.ndarray
    acceptance: dict
    seed: int
    niter: int
    burnin: int
    spec: ModelSpec
    site_coords: np.ndarray
    site_rho_hat: np.ndarray
    site_s2_hat: np.ndarray
    times: np.ndarray
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.tau2.shape[0]

    def coef_means(self):
        return dict(zip(COEF_NAMES, self.coef.mean(axis=0)))


def _initial_state(data: ObservationData, spec: ModelSpec):
    T, K = data.n_times, data.n_covariates
    beta = np.zeros((T, K))
    for t, idx in enumerate(data.by_time()):
        if idx.size:
            beta[t] = np.linalg.lstsq(data.X[idx], data.y[idx], rcond=None)[0]
    resid = data.y - fitted_mean(beta, data)
    var = float(np.var(resid)) or 1.0
    log_rho, log_s2 = np.log(data.site_rho_hat), np.log(data.site_s2_hat)
    if spec.stationary:
        coef = TransferCoefficients(float(log_rho.mean()), 0.0, math.log(var / 2), 0.0)
    else:
        coef = TransferCoefficients(0.0, 1.0, 0.0, 1.0)
    tau2 = spec.tau2_fixed if spec.tau2_fixed is not None else var / 2
    omega2 = max(float(np.mean(beta ** 2)), 1e-2)
    nu = spec.nu_fixed if spec.nu_fixed is not None else min(spec.nu_init, 0.9 * spec.nu_max)
    return McmcState(beta, np.zeros(data.n_sites), tau2, omega2, coef, nu)


class Sampler:
    """Single chain. ``update`` restricts which blocks move (others stay frozen)."""

    def __init__(self, data: ObservationData, spec: ModelSpec, seed=0, initial_state=None, update=ALL_BLOCKS):
        unknown = set(update) - set(ALL_BLOCKS)
        if unknown:
            raise ValidationError(f"unknown update blocks {sorted(unknown)}")
        self.data = data
        self.spec = spec
        self.seed = int(seed)
        self.rng = np.random.default_rng(np.random.PCG64(self.seed))
        self.update = tuple(b for b in ALL_BLOCKS if b in update)
        if spec.nu_fixed is not None and "nu" in self.update:
            self.update = tuple(b for b in self.update if b != "nu")
        self.state = initial_state.copy() if initial_state is not None else _initial_state(data, spec)
        if spec.stationary:
            c = self.state.coef
            self.state.coef = TransferCoefficients(c.a1, 0.0, c.a2, 0.0)
        self.coef_names = ("a1", "a2") if spec.stationary else COEF_NAMES
        self.steps = {name: 0.1 for name in self.coef_names}
        self.steps["nu"] = 0.3
        self._accepts = {name: 0 for name in self.steps}
        self._tries = {name: 0 for name in self.steps}

        self._d2 = sq_distances(data.site_coords, data.site_coords)
        self._log_rho_hat = np.log(data.site_rho_hat)
        self._log_s2_hat = np.log(data.site_s2_hat)
        self._counts = data.site_counts()
        self._by_time = data.by_time()
        corr = self._correlation(self.state.coef.a1, self.state.coef.b1, self.state.nu)
        sd = self._sd(self.state.coef.a2, self.state.coef.b2)
        if corr is None or sd is None:
            raise NotPositiveDefinite("initial covariance parameters are not usable")
        self._corr, self._sdv = corr, sd

    # covariance pieces ------------------------------------------------

    def _correlation(self, a1, b1, nu):
        eta = a1 + b1 * self._log_rho_hat
        if np.any(np.abs(eta) > LOG_CLAMP):
            return None
        rho = np.exp(eta)
        r = ns_correlation(None, rho, None, rho, nu, d2=self._d2)
        try:
            chol, _ = chol_with_jitter(r)
        except NotPositiveDefinite:
            return None
        return r, chol, float(np.log(np.diag(chol)).sum())

    def _sd(self, a2, b2):
        eta = a2 + b2 * self._log_s2_hat
        if np.any(np.abs(eta) > LOG_CLAMP):
            return None
        return np.exp(0.5 * eta)

    def _gp_logdensity(self, corr, sd, w=None):
        w = self.state.w if w is None else w
        _, chol, half_logdet = corr
        z = solve_triangular(chol, w / sd, lower=True, check_finite=False)
        return float(-np.log(sd).sum() - half_logdet - 0.5 * z @ z - 0.5 * w.shape[0] * _LOG_2PI)

    def current_params(self):
        sd = self._sdv
        return self._corr[0], sd

    # Gibbs blocks -----------------------------------------------------

    def step_beta(self):
        s, d = self.state, self.data
        K = d.n_covariates
        for t, idx in enumerate(self._by_time):
            X = d.X[idx]
            r = d.y[idx] - s.w[d.site[idx]]
            prec = X.T @ X / s.tau2 + np.eye(K) / s.omega2
            chol = np.linalg.cholesky(prec)
            mean = cho_solve((chol, True), X.T @ r / s.tau2)
            s.beta[t] = mean + solve_triangular(chol.T, self.rng.standard_normal(K), lower=False)

    def step_w(self):
        s, d = self.state, self.data
        n = d.n_sites
        resid = d.y - fitted_mean(s.beta, d)
        ybar = np.bincount(d.site, weights=resid, minlength=n) / self._counts
        noise = s.tau2 / self._counts
        r, chol_r, _ = self._corr
        sd = self._sdv
        prior_draw = sd * (chol_r @ self.rng.standard_normal(n))
        eps = np.sqrt(noise) * self.rng.standard_normal(n)
        cov = r * sd[:, None] * sd[None, :]
        sys = cov.copy()
        sys[np.diag_indices(n)] += noise
        chol_sys, _ = chol_with_jitter(sys)
        s.w = prior_draw + cov @ cho_solve((chol_sys, True), ybar - prior_draw - eps)

    def step_variances(self):
        s, d, spec = self.state, self.data, self.spec
        if "tau2" in self.update and spec.tau2_fixed is None:
            resid = d.y - fitted_mean(s.beta, d) - s.w[d.site]
            shape = spec.ig_shape + 0.5 * resid.size
            scale = spec.ig_scale + 0.5 * float(resid @ resid)
            s.tau2 = scale / self.rng.gamma(shape)
        if "omega2" in self.update:
            b = s.beta.ravel()
            shape = spec.ig_shape + 0.5 * b.size
            scale = spec.ig_scale + 0.5 * float(b @ b)
            s.omega2 = scale / self.rng.gamma(shape)

    # Metropolis blocks ------------------------------------------------

    def _coef_logprior(self, value):
        return -0.5 * (value / self.spec.coef_prior_sd) ** 2

    def step_coef(self):
        s = self.state
        current = self._gp_logdensity(self._corr, self._sdv)
        for name in self.coef_names:
            old = getattr(s.coef, name)
            new = old + self.steps[name] * self.rng.standard_normal()
            vals = s.coef.as_array()
            vals[COEF_NAMES.index(name)] = new
            coef = TransferCoefficients.from_array(vals)
            corr, sd = self._corr, self._sdv
            if name in ("a1", "b1"):
                corr = self._correlation(coef.a1, coef.b1, s.nu)
            else:
                sd = self._sd(coef.a2, coef.b2)
            self._tries[name] += 1
            if corr is None or sd is None:
                continue
            proposed = self._gp_logdensity(corr, sd)
            log_ratio = proposed + self._coef_logprior(new) - current - self._coef_logprior(old)
            if math.log(self.rng.uniform()) < log_ratio:
                s.coef, self._corr, self._sdv, current = coef, corr, sd, proposed
                self._accepts[name] += 1

    def step_nu(self):
        s, numax = self.state, self.spec.nu_max
        eta = math.log(s.nu / (numax - s.nu))
        eta_new = eta + self.steps["nu"] * self.rng.standard_normal()
        nu_new = numax / (1.0 + math.exp(-eta_new))
        self._tries["nu"] += 1
        if not 0 < nu_new < numax:
            return
        corr = self._correlation(s.coef.a1, s.coef.b1, nu_new)
        if corr is None:
            return
        # uniform prior on nu -> log Jacobian log(nu) + log(nu_max - nu)
        log_ratio = (self._gp_logdensity(corr, self._sdv) + math.log(nu_new) + math.log(numax - nu_new)
                     - self._gp_logdensity(self._corr, self._sdv) - math.log(s.nu) - math.log(numax - s.nu))
        if math.log(self.rng.uniform()) < log_ratio:
            s.nu, self._corr = nu_new, corr
            self._accepts["nu"] += 1

    # driver -----------------------------------------------------------

    def sweep(self):
        if "beta" in self.update:
            self.step_beta()
        if "w" in self.update:
            self.step_w()
        self.step_variances()
        if "coef" in self.update:
            self.step_coef()
        if "nu" in self.update:
            self.step_nu()

    def _adapt(self):
        lo, hi = self.spec.target_accept
        for name in self.steps:
            if self._tries[name] == 0:
                continue
            rate = self._accepts[name] / self._tries[name]
            if rate < lo:
                self.steps[name] *= 0.7
            elif rate > hi:
                self.steps[name] *= 1.4
            self._accepts[name] = self._tries[name] = 0

    def _check(self, it):
        s = self.state
        ok = (np.all(np.isfinite(s.beta)) and np.all(np.isfinite(s.w)) and math.isfinite(s.tau2)
              and math.isfinite(s.omega2) and s.tau2 > 0 and s.omega2 > 0 and math.isfinite(s.nu))
        if not ok:
            raise ChainDiverged(f"non-finite state at iteration {it}", iteration=it)

    def run(self, niter):
        if niter < 1:
            raise ValidationError("niter must be positive")
        burn = int(math.floor(self.spec.burnin * niter))
        keep = niter - burn
        d = self.data
        out_beta = np.empty((keep, d.n_times, d.n_covariates))
        out_w = np.empty((keep, d.n_sites))
        out_tau2, out_omega2, out_nu = np.empty(keep), np.empty(keep), np.empty(keep)
        out_coef = np.empty((keep, 4))
        every = self.spec.adapt_every
        for it in range(niter):
            if it == burn:
                for name in self.steps:
                    self._accepts[name] = self._tries[name] = 0
            try:
                self.sweep()
            except (np.linalg.LinAlgError, NotPositiveDefinite) as exc:
                raise ChainDiverged(f"iteration {it}: {exc}", iteration=it) from exc
            self._check(it)
            if it < burn and (it + 1) % every == 0:
                self._adapt()
            if it >= burn:
                k = it - burn
                s = self.state
                out_beta[k], out_w[k] = s.beta, s.w
                out_tau2[k], out_omega2[k], out_nu[k] = s.tau2, s.omega2, s.nu
                out_coef[k] = s.coef.as_array()
        acceptance = {name: (self._accepts[name] / self._tries[name] if self._tries[name] else float("nan"))
                      for name in self.steps}
        return PosteriorSamples(out_beta, out_w, out_tau2, out_omega2, out_coef, out_nu, acceptance,
                                self.seed, niter, burn, self.spec, d.site_coords.copy(),
                                d.site_rho_hat.copy(), d.site_s2_hat.copy(), d.times.copy())


def sample_posterior(data: ObservationData, spec: ModelSpec, niter, seed=0, initial_state=None,
                     update=ALL_BLOCKS) -> PosteriorSamples:
    return Sampler(data, spec, seed, initial_state, update).run(niter)
