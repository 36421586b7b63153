"""Model specification, design matrices and the joint log-posterior."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from ..covariance import KernelConfig, LocalParams, build_cov_matrix, chol_with_jitter
from ..eof import EofBasis, eofs_at
from ..errors import GeometryMismatch, NotPositiveDefinite, ValidationError
from ..field_store import MonitorSet, SpaceTimeField, as_coords, nearest_cells
from ..transfer import TransferCoefficients
from ..window_mle import WindowEstimates, WindowGrid, estimates_at

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Hierarchical model settings.

    ``covariates`` is ``"eof"`` (EOF values plus optionally the reference
    value at the nearest cell) or ``"coordinates"`` (raw ``(s1, s2)``, as in
    the simulation study). ``stationary`` clamps ``b1 = b2 = 0``.
    """

    num_eofs: int = 7
    include_reference_covariate: bool = True
    covariates: str = "eof"
    ig_shape: float = 0.1
    ig_scale: float = 0.1
    coef_prior_sd: float = 10.0
    nu_max: float = 3.0
    nu_fixed: float | None = None
    nu_init: float = 1.5
    tau2_fixed: float | None = None
    stationary: bool = False
    burnin: float = 0.15
    adapt_every: int = 50
    target_accept: tuple = (0.25, 0.45)

    def __post_init__(self):
        if self.num_eofs < 0:
            raise ValidationError("num_eofs must be >= 0")
        if self.covariates not in ("eof", "coordinates"):
            raise ValidationError(f"unknown covariate mode {self.covariates!r}")
        if min(self.ig_shape, self.ig_scale, self.coef_prior_sd, self.nu_max) <= 0:
            raise ValidationError("prior hyperparameters must be positive")
        if not 0 <= self.burnin < 1:
            raise ValidationError("burn-in fraction must lie in [0, 1)")
        if self.nu_fixed is not None and not 0 < self.nu_fixed <= self.nu_max:
            raise ValidationError("nu_fixed outside (0, nu_max]")
        if self.covariates == "eof" and self.num_eofs == 0 and not self.include_reference_covariate:
            raise ValidationError("mean model has no covariates")

    @property
    def n_covariates(self):
        if self.covariates == "coordinates":
            return 2
        return self.num_eofs + int(self.include_reference_covariate)

    def to_dict(self):
        d = asdict(self)
        d["target_accept"] = list(self.target_accept)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "target_accept" in d:
            d["target_accept"] = tuple(d["target_accept"])
        return cls(**d)


def _day_columns(field: SpaceTimeField, days):
    lookup = {int(t): j for j, t in enumerate(field.times.tolist())}
    try:
        return np.array([lookup[int(d)] for d in np.atleast_1d(days)], dtype=int)
    except KeyError as exc:
        raise GeometryMismatch(f"day {exc.args[0]} not present in the reference field") from None


def design_matrix(spec: ModelSpec, basis: EofBasis | None, field: SpaceTimeField | None, coords, days):
    """Covariate rows ``[e_1(s), ..., e_M(s), x_t(s)]`` (or ``[s1, s2]``)."""
    coords = as_coords(coords)
    if spec.covariates == "coordinates":
        return coords.copy()
    if field is None:
        raise ValidationError("EOF covariates need the reference field")
    cols = []
    if spec.num_eofs:
        if basis is None or basis.num_eofs < spec.num_eofs:
            raise GeometryMismatch("EOF basis missing or has too few patterns")
        cols.append(eofs_at(basis, field, coords, np.arange(1, spec.num_eofs + 1)))
    if spec.include_reference_covariate:
        cells = nearest_cells(field, coords)
        cols.append(field.values[cells, _day_columns(field, days)][:, None])
    return np.hstack(cols)


def design_row(spec, basis, field, s, t):
    return design_matrix(spec, basis, field, s, [t])[0]


@dataclass
class ObservationData:
    """Monitor records arranged for the sampler.

    ``site`` and ``tidx`` map each record to a row of ``site_coords`` and an
    entry of ``times``; ``X`` holds the covariate row of each record.
    """

    y: np.ndarray
    X: np.ndarray
    site: np.ndarray
    tidx: np.ndarray
    site_coords: np.ndarray
    times: np.ndarray
    site_rho_hat: np.ndarray
    site_s2_hat: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.site = np.asarray(self.site, dtype=int)
        self.tidx = np.asarray(self.tidx, dtype=int)
        if not (self.y.shape[0] == self.X.shape[0] == self.site.shape[0] == self.tidx.shape[0]):
            raise ValidationError("observation arrays have inconsistent lengths")
        if self.n_sites < 2:
            raise ValidationError("at least 2 observation sites are required")

    @property
    def n_sites(self):
        return self.site_coords.shape[0]

    @property
    def n_times(self):
        return self.times.shape[0]

    @property
    def n_covariates(self):
        return self.X.shape[1]

    def by_time(self):
        """Record indices for each time slot."""
        if "by_time" not in self._cache:
            self._cache["by_time"] = [np.flatnonzero(self.tidx == t) for t in range(self.n_times)]
        return self._cache["by_time"]

    def site_counts(self):
        return np.bincount(self.site, minlength=self.n_sites)


def build_observations(monitors: MonitorSet, spec: ModelSpec, estimates: WindowEstimates, grid: WindowGrid,
                       basis: EofBasis | None = None, field: SpaceTimeField | None = None) -> ObservationData:
    site_coords, site_of = monitors.sites()
    times, tidx = np.unique(monitors.days, return_inverse=True)
    X = design_matrix(spec, basis, field, monitors.coords, monitors.days)
    rho_hat, s2_hat = estimates_at(estimates, grid, site_coords)
    return ObservationData(monitors.values, X, site_of, tidx.ravel(), site_coords, times, rho_hat, s2_hat)


@dataclass
class McmcState:
    beta: np.ndarray
    w: np.ndarray
    tau2: float
    omega2: float
    coef: TransferCoefficients
    nu: float

    def copy(self):
        return McmcState(self.beta.copy(), self.w.copy(), self.tau2, self.omega2, self.coef, self.nu)


def fitted_mean(beta, data: ObservationData):
    return np.einsum("ij,ij->i", data.X, beta[data.tidx])


def data_loglik(state: McmcState, data: ObservationData):
    resid = data.y - fitted_mean(state.beta, data) - state.w[data.site]
    n = resid.shape[0]
    return float(-0.5 * n * (_LOG_2PI + math.log(state.tau2)) - 0.5 * resid @ resid / state.tau2)


def gp_logdensity(w, chol):
    z = solve_triangular(chol, w, lower=True, check_finite=False)
    return float(-np.log(np.diag(chol)).sum() - 0.5 * z @ z - 0.5 * w.shape[0] * _LOG_2PI)


def inv_gamma_logpdf(x, shape, scale):
    return shape * math.log(scale) - gammaln(shape) - (shape + 1) * math.log(x) - scale / x


def beta_gradient(state: McmcState, data: ObservationData):
    """Gradient of the log-posterior with respect to ``beta`` (shape ``T x K``)."""
    resid = data.y - fitted_mean(state.beta, data) - state.w[data.site]
    grad = np.zeros_like(state.beta)
    np.add.at(grad, data.tidx, data.X * resid[:, None] / state.tau2)
    return grad - state.beta / state.omega2


def log_posterior(state: McmcState, data: ObservationData, spec: ModelSpec, params: LocalParams, parts=False):
    """Unnormalised joint log-posterior; ``-inf`` if the GP covariance cannot be factorised."""
    out = {"data": data_loglik(state, data)}
    try:
        cov = build_cov_matrix(data.site_coords, params, KernelConfig(nu=state.nu))
        chol, _ = chol_with_jitter(cov)
        out["gp"] = gp_logdensity(state.w, chol)
    except NotPositiveDefinite:
        out["gp"] = -math.inf
    b = state.beta.ravel()
    out["beta"] = float(-0.5 * b.size * (_LOG_2PI + math.log(state.omega2)) - 0.5 * b @ b / state.omega2)
    out["variances"] = inv_gamma_logpdf(state.omega2, spec.ig_shape, spec.ig_scale)
    if spec.tau2_fixed is None:
        out["variances"] += inv_gamma_logpdf(state.tau2, spec.ig_shape, spec.ig_scale)
    coef = state.coef.as_array()
    if spec.stationary:
        coef = coef[[0, 2]]
    sd = spec.coef_prior_sd
    out["coef"] = float(np.sum(-0.5 * (coef / sd) ** 2 - math.log(sd) - 0.5 * _LOG_2PI))
    if spec.nu_fixed is None:
        out["nu"] = -math.log(spec.nu_max) if 0 < state.nu < spec.nu_max else -math.inf
    total = sum(out.values())
    return (total, out) if parts else total
