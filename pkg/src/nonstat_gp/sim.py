"""Simulation study: nonstationary truth, reference field, corner missingness.

The domain ``[1, 100]^2`` carries a 40 x 40 grid split into four horizontal
bands (bottom to top) with reference parameters ``rho0`` and ``sigma2_0``. The
reference field is drawn with those parameters; the true field uses
``log(theta) = a + b log(theta0)`` plus a linear mean in the coordinates and
unit-variance noise. Training sites come from the upper-left and lower-right
quadrants only.

A second, application-style synthetic study exercises the EOF covariate
path with sampled smoothness and spatial cross-validation.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .bhm import ModelSpec, build_observations, design_matrix, predict, sample_posterior
from .covariance import KernelConfig, LocalParams, build_cov_matrix, chol_with_jitter
from .eof import compute_eofs, detrend_by_eofs
from .errors import NonstatGPError
from .field_store import MonitorSet, SpaceTimeField
from .scoring import ScoreTable, combine_tables, score_table
from .window_mle import estimates_at, fit_all_windows, partition

log = logging.getLogger(__name__)

PARTIAL = "partial-missing"
ALL_MISSING = "all-missing"


@dataclass(frozen=True)
class SimConfig:
    n_grid: int = 40
    domain: tuple = (1.0, 100.0)
    n_days: int = 4
    rho0: tuple = (15.0, 10.0, 5.0, 2.5)
    sigma2_0: tuple = (2.0, 3.0, 7.0, 10.0)
    nu: float = 1.5
    transfer_a: float = 0.5
    transfer_b: float = 1.0
    noise_var: float = 1.0
    mean_coef: tuple = (0.05, 0.1)
    n_replicates: int = 5
    train_fraction: float = 0.25
    window_size: float = 25.0
    niter: int = 2000
    burnin: float = 0.15
    predict_thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if len(self.rho0) != len(self.sigma2_0):
            raise ValueError("rho0 and sigma2_0 need one entry per band")
        if min(self.rho0) <= 0 or min(self.sigma2_0) <= 0 or self.noise_var < 0:
            raise ValueError("simulation parameters must be positive")
        if self.n_grid % len(self.rho0) or self.n_grid % 2:
            raise ValueError("grid size must split evenly into bands and quadrants")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")

    @classmethod
    def full_scale(cls, **kw):
        return cls(**{"n_replicates": 50, "niter": 10_000, **kw})

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def grid_coords(config: SimConfig):
    """Cell centres ordered by ``(lat, lon)`` like loaded fields."""
    axis = np.linspace(*config.domain, config.n_grid)
    lon, lat = np.meshgrid(axis, axis)
    return np.column_stack([lon.ravel(), lat.ravel()])


def band_index(config: SimConfig):
    rows = np.repeat(np.arange(config.n_grid), config.n_grid)
    return rows // (config.n_grid // len(config.rho0))


def quadrant_labels(config: SimConfig):
    """Per-cell stratum: upper-left and lower-right quadrants are partially observed."""
    half = config.n_grid // 2
    iy, ix = np.divmod(np.arange(config.n_grid ** 2), config.n_grid)
    upper, left = iy >= half, ix < half
    partial = (upper & left) | (~upper & ~left)
    return np.where(partial, PARTIAL, ALL_MISSING)


def reference_params(config: SimConfig):
    b = band_index(config)
    return LocalParams(np.asarray(config.rho0)[b], np.asarray(config.sigma2_0)[b])


def truth_params(config: SimConfig):
    ref = reference_params(config)
    a, b = config.transfer_a, config.transfer_b
    return LocalParams(np.exp(a + b * np.log(ref.rho)), np.exp(a + b * np.log(ref.sigma2)))


@lru_cache(maxsize=8)
def _cov_factor(config: SimConfig, which):
    params = reference_params(config) if which == "reference" else truth_params(config)
    cov = build_cov_matrix(grid_coords(config), params, KernelConfig(nu=config.nu))
    return chol_with_jitter(cov)[0]


def _streams(seed):
    ref, truth, design, chains = np.random.SeedSequence(seed).spawn(4)
    return ref, truth, design, chains


def simulate_reference(config: SimConfig, seed=None) -> SpaceTimeField:
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(_streams(seed)[0])
    chol = _cov_factor(config, "reference")
    z = rng.standard_normal((chol.shape[0], config.n_days))
    return SpaceTimeField(grid_coords(config), np.arange(1, config.n_days + 1), chol @ z, _spacing(config))


def _spacing(config):
    lo, hi = config.domain
    return (hi - lo) / (config.n_grid - 1)


def truth_components(config: SimConfig, seed=None):
    """``(mean, w, noise)`` with shapes ``(n, T)``, ``(n,)`` and ``(n, T)``."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(_streams(seed)[1])
    coords = grid_coords(config)
    chol = _cov_factor(config, "truth")
    w = chol @ rng.standard_normal(chol.shape[0])
    noise = math.sqrt(config.noise_var) * rng.standard_normal((coords.shape[0], config.n_days))
    mean = coords @ np.asarray(config.mean_coef)
    return np.repeat(mean[:, None], config.n_days, axis=1), w, noise


def simulate_truth(config: SimConfig, seed=None, with_w=True, with_noise=True) -> SpaceTimeField:
    mean, w, noise = truth_components(config, seed)
    values = mean + (w[:, None] if with_w else 0.0) + (noise if with_noise else 0.0)
    return SpaceTimeField(grid_coords(config), np.arange(1, config.n_days + 1), values, _spacing(config))


def _monitors(field: SpaceTimeField, cells):
    T = field.p
    days = np.tile(field.times, cells.size)
    coords = np.repeat(field.coords[cells], T, axis=0)
    return MonitorSet(days, coords, field.values[cells].ravel())


def sample_design(config: SimConfig, seed=None, truth: SpaceTimeField | None = None):
    """Training monitors, test monitors, and the stratum label of each test record."""
    seed = config.seed if seed is None else seed
    truth = simulate_truth(config, seed) if truth is None else truth
    rng = np.random.default_rng(_streams(seed)[2])
    labels = quadrant_labels(config)
    half = config.n_grid // 2
    iy, ix = np.divmod(np.arange(config.n_grid ** 2), config.n_grid)
    quadrant = 2 * (iy >= half) + (ix >= half)
    train = []
    for q in (2, 1):  # upper-left, lower-right
        cells = np.flatnonzero(quadrant == q)
        k = int(round(config.train_fraction * cells.size))
        train.append(np.sort(rng.choice(cells, size=k, replace=False)))
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(truth.n), train)
    strata = np.repeat(labels[test], truth.p)
    return _monitors(truth, train), _monitors(truth, test), strata


@dataclass
class ReplicateResult:
    replicate: int
    seed: int
    table: ScoreTable
    coef_ns: dict
    coef_s: dict
    acceptance_ns: dict
    estimates: object = None
    predictions: dict = field(default_factory=dict)


def _model_specs(config: SimConfig):
    ns = ModelSpec(covariates="coordinates", num_eofs=0, include_reference_covariate=False,
                   nu_fixed=config.nu, burnin=config.burnin)
    return ns, replace(ns, stationary=True)


def fit_reference_windows(config: SimConfig, reference: SpaceTimeField):
    grid = partition(reference, config.window_size)
    return grid, fit_all_windows(reference, grid, nu=config.nu)


def run_replicate(config: SimConfig, replicate=0, keep_predictions=False) -> ReplicateResult:
    seed = config.seed + replicate
    reference = simulate_reference(config, seed)
    truth = simulate_truth(config, seed)
    train, test, strata = sample_design(config, seed, truth)
    grid, estimates = fit_reference_windows(config, reference)
    spec_ns, spec_s = _model_specs(config)
    chain_seed = int(_streams(seed)[3].generate_state(1)[0])
    new_hat = estimates_at(estimates, grid, test.coords)
    table = ScoreTable()
    out = {}
    for label, spec in (("NS", spec_ns), ("S", spec_s)):
        data = build_observations(train, spec, estimates, grid)
        samples = sample_posterior(data, spec, config.niter, seed=chain_seed)
        X = design_matrix(spec, None, None, test.coords, test.days)
        pred = predict(samples, test.coords, test.days, X, *new_hat, thin=config.predict_thin)
        score_table(pred.mean, pred.sd, test.values, strata, pred.lower95, pred.upper95, label=label, table=table)
        out[label] = (samples, pred)
    result = ReplicateResult(replicate, seed, table, out["NS"][0].coef_means(), out["S"][0].coef_means(),
                             out["NS"][0].acceptance, estimates)
    if keep_predictions:
        result.predictions = {k: v[1] for k, v in out.items()}
        result.predictions["test"] = (test, strata)
    return result


@dataclass
class StudyResult:
    config: SimConfig
    table: ScoreTable
    replicates: list
    failures: list

    def coef_summary(self):
        """Mean and sd across replicates of the NS posterior means of a1, b1, a2, b2."""
        names = ("a1", "b1", "a2", "b2")
        vals = np.array([[r.coef_ns[n] for n in names] for r in self.replicates])
        return {n: (float(vals[:, i].mean()), float(vals[:, i].std())) for i, n in enumerate(names)}


def run_study(config: SimConfig, threads=1) -> StudyResult:
    def one(r):
        try:
            return run_replicate(config, r)
        except NonstatGPError as exc:
            log.error("replicate %d failed: %s", r, exc)
            return exc

    reps = range(config.n_replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, reps))
    else:
        results = [one(r) for r in reps]
    ok = [r for r in results if isinstance(r, ReplicateResult)]
    failures = [(i, str(r)) for i, r in enumerate(results) if not isinstance(r, ReplicateResult)]
    if not ok:
        raise NonstatGPError(f"all {config.n_replicates} replicates failed")
    return StudyResult(config, combine_tables([r.table for r in ok]), ok, failures)


# application-style synthetic study -------------------------------------------


@dataclass(frozen=True)
class AppConfig:
    """Synthetic stand-in for a gridded model output plus monitor network."""

    lon_range: tuple = (-100.0, -90.0)
    lat_range: tuple = (30.0, 36.0)
    spacing: float = 0.25
    n_ref_days: int = 24
    n_obs_days: int = 3
    num_eofs: int = 7
    n_sites: int = 120
    n_folds: int = 10
    ref_nu: float = 1.0
    window_size: float = 2.0
    niter: int = 600
    burnin: float = 0.15
    seed: int = 0


def _app_grid(cfg: AppConfig):
    lons = np.arange(cfg.lon_range[0], cfg.lon_range[1] + 1e-9, cfg.spacing)
    lats = np.arange(cfg.lat_range[0], cfg.lat_range[1] + 1e-9, cfg.spacing)
    lon, lat = np.meshgrid(lons, lats)
    return np.column_stack([lon.ravel(), lat.ravel()])


def _app_local_params(cfg: AppConfig, coords):
    # range grows to the east, variance peaks mid-domain
    u = (coords[:, 0] - cfg.lon_range[0]) / (cfg.lon_range[1] - cfg.lon_range[0])
    rho = 0.4 + 1.2 * u
    s2 = 0.3 + 0.7 * np.exp(-((u - 0.5) / 0.25) ** 2)
    return LocalParams(rho, s2)


def simulate_application(cfg: AppConfig):
    """Reference field (planted large-scale patterns plus nonstationary small-scale
    noise) and a monitor set driven by it. Returns ``(field, monitors, truth_params)``."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    coords = _app_grid(cfg)
    n = coords.shape[0]
    u = (coords[:, 0] - coords[:, 0].mean()) / np.ptp(coords[:, 0])
    v = (coords[:, 1] - coords[:, 1].mean()) / np.ptp(coords[:, 1])
    patterns = np.column_stack([np.cos(np.pi * (k + 1) * u / 2 + k) * np.cos(np.pi * (k % 3 + 1) * v / 2)
                                for k in range(cfg.num_eofs)])
    weights = 3.0 / np.sqrt(np.arange(1, cfg.num_eofs + 1))
    days = cfg.n_ref_days
    pcs = rng.standard_normal((days, cfg.num_eofs)) * weights
    params = _app_local_params(cfg, coords)
    chol = chol_with_jitter(build_cov_matrix(coords, params, KernelConfig(nu=cfg.ref_nu)))[0]
    small = chol @ rng.standard_normal((n, days))
    base = 10.0 + 2.0 * v
    ref = base[:, None] + patterns @ pcs.T + small
    field = SpaceTimeField(coords, np.arange(1, days + 1), ref, cfg.spacing)

    true_params = LocalParams(np.exp(0.5 + np.log(params.rho)), np.exp(0.5 + np.log(params.sigma2)))
    sites = np.sort(rng.choice(n, size=cfg.n_sites, replace=False))
    chol_w = chol_with_jitter(build_cov_matrix(coords[sites], LocalParams(true_params.rho[sites],
                                                                          true_params.sigma2[sites]),
                                               KernelConfig(nu=cfg.ref_nu)))[0]
    w = chol_w @ rng.standard_normal(sites.size)
    obs_days = np.arange(1, cfg.n_obs_days + 1)
    y = 0.9 * ref[sites][:, :cfg.n_obs_days] + w[:, None] + 0.3 * rng.standard_normal((sites.size, cfg.n_obs_days))
    monitors = MonitorSet(np.tile(obs_days, sites.size), np.repeat(coords[sites], cfg.n_obs_days, axis=0),
                          y.ravel())
    return field, monitors, true_params


def run_application_style(cfg: AppConfig):
    """EOF detrend, window fits, k-fold spatial CV of NS versus S with sampled nu."""
    field, monitors, _ = simulate_application(cfg)
    basis = compute_eofs(field, cfg.num_eofs)
    resid = detrend_by_eofs(field, basis)
    grid = partition(resid, cfg.window_size)
    estimates = fit_all_windows(resid, grid, nu=cfg.ref_nu)
    spec_ns = ModelSpec(num_eofs=cfg.num_eofs, include_reference_covariate=True, nu_fixed=None,
                        burnin=cfg.burnin)
    spec_s = replace(spec_ns, stationary=True)
    site_coords, site_of = monitors.sites()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    fold_of_site = rng.permutation(np.arange(site_coords.shape[0]) % cfg.n_folds)
    fold = fold_of_site[site_of]
    tables = []
    for k in range(cfg.n_folds):
        train, test = monitors.subset(fold != k), monitors.subset(fold == k)
        table = ScoreTable()
        hats = estimates_at(estimates, grid, test.coords)
        for label, spec in (("NS", spec_ns), ("S", spec_s)):
            data = build_observations(train, spec, estimates, grid, basis=basis, field=field)
            samples = sample_posterior(data, spec, cfg.niter, seed=cfg.seed * 1000 + k)
            X = design_matrix(spec, basis, field, test.coords, test.days)
            pred = predict(samples, test.coords, test.days, X, *hats)
            score_table(pred.mean, pred.sd, test.values, None, pred.lower95, pred.upper95, label=label,
                        table=table)
        tables.append(table)
    return combine_tables(tables), basis, estimates
