"""Moving-window maximum-likelihood estimates of local Matern parameters.

The domain's bounding box is tiled with adjacent square windows. Inside each
window the time columns of the (detrended) reference field are treated as
independent replicates of a zero-mean stationary Matern field, and
``(rho, sigma2)`` are fitted by Nelder-Mead in log space with smoothness held
fixed.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .covariance import chol_with_jitter, matern_correlation, sq_distances
from .errors import NoConvergedWindows, NotPositiveDefinite, ParseError, TooFewCells, ValidationError
from .field_store import SpaceTimeField, as_coords

log = logging.getLogger(__name__)

MIN_CELLS = 4
RELATIVE_NUGGET = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class WindowGrid:
    x0: float
    y0: float
    size: float
    nx: int
    ny: int
    assignment: np.ndarray

    @property
    def n_windows(self):
        return self.nx * self.ny

    @property
    def bounds(self):
        """``(W, 4)`` array of ``lon_min, lon_max, lat_min, lat_max`` in window order."""
        iy, ix = np.divmod(np.arange(self.n_windows), self.nx)
        lon_min = self.x0 + ix * self.size
        lat_min = self.y0 + iy * self.size
        return np.column_stack([lon_min, lon_min + self.size, lat_min, lat_min + self.size])

    @property
    def centers(self):
        b = self.bounds
        return np.column_stack([(b[:, 0] + b[:, 1]) / 2, (b[:, 2] + b[:, 3]) / 2])

    def cells_of(self, w):
        return np.flatnonzero(self.assignment == w)

    def window_of(self, points):
        """Window index for arbitrary points; outside points go to the nearest window."""
        pts = as_coords(points)
        b = self.bounds
        dx = np.maximum(np.maximum(b[None, :, 0] - pts[:, 0, None], 0), pts[:, 0, None] - b[None, :, 1])
        dy = np.maximum(np.maximum(b[None, :, 2] - pts[:, 1, None], 0), pts[:, 1, None] - b[None, :, 3])
        return np.argmin(dx * dx + dy * dy, axis=1)


def _axis_index(u, n):
    # cells on a shared edge belong to the lower window
    k = np.ceil(u - _EDGE_TOL) - 1
    return np.clip(k, 0, n - 1).astype(int)


def partition(field_or_coords, size=2.0) -> WindowGrid:
    if not size > 0:
        raise ValidationError(f"window size must be positive, got {size}")
    coords = field_or_coords.coords if isinstance(field_or_coords, SpaceTimeField) else as_coords(field_or_coords)
    x0, y0 = coords.min(axis=0)
    x1, y1 = coords.max(axis=0)
    nx = max(1, int(math.ceil((x1 - x0) / size - _EDGE_TOL)))
    ny = max(1, int(math.ceil((y1 - y0) / size - _EDGE_TOL)))
    ix = _axis_index((coords[:, 0] - x0) / size, nx)
    iy = _axis_index((coords[:, 1] - y0) / size, ny)
    return WindowGrid(float(x0), float(y0), float(size), nx, ny, iy * nx + ix)


@dataclass(frozen=True)
class WindowEstimates:
    rho_hat: np.ndarray
    sigma2_hat: np.ndarray
    n_cells: np.ndarray
    loglik: np.ndarray
    converged: np.ndarray
    fallback: np.ndarray  # source window id, -1 when the window kept its own fit
    nu: float = 1.5

    def __len__(self):
        return self.rho_hat.shape[0]


def _window_cov(d2, rho, sigma2, nu, nugget):
    x = 2.0 * math.sqrt(nu) * np.sqrt(d2) / rho
    cov = sigma2 * matern_correlation(x, nu)
    cov[np.diag_indices_from(cov)] += nugget
    return cov


def window_loglik(residuals, locs, rho, sigma2, nu, nugget=0.0, d2=None):
    """Gaussian log-likelihood of replicated zero-mean columns under a stationary Matern."""
    z = np.asarray(residuals, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    k, t = z.shape
    if k < 2:
        raise TooFewCells(f"window log-likelihood needs at least 2 cells, got {k}")
    if not (rho > 0 and sigma2 > 0):
        raise ValidationError("rho and sigma2 must be positive")
    if d2 is None:
        d2 = sq_distances(locs, locs)
    chol, _ = chol_with_jitter(_window_cov(d2, rho, sigma2, nu, nugget))
    white = solve_triangular(chol, z, lower=True, check_finite=False)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return float(-0.5 * (t * logdet + np.sum(white * white) + k * t * _LOG_2PI))


@dataclass(frozen=True)
class WindowFit:
    rho_hat: float
    sigma2_hat: float
    converged: bool
    loglik: float
    at_bound: bool = False


def fit_window(residuals, locs, nu=1.5, nugget_mode="relative", min_cells=MIN_CELLS, diagonal=None):
    """Maximise :func:`window_loglik` over ``(log rho, log sigma2)``.

    Three simplex starts are tried and the best optimum kept. ``converged`` is
    false when the final simplex is wider than 1e-6 in log space or when the
    range sits on its lower bound (no detectable correlation).
    """
    z = np.asarray(residuals, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    coords = as_coords(locs)
    k = z.shape[0]
    if k < max(min_cells, 2):
        raise TooFewCells(f"window has {k} cells, need at least {max(min_cells, 2)}")
    var = float(np.mean(z * z))
    if not var > 0:
        return WindowFit(float("nan"), float("nan"), False, float("nan"))
    nugget = RELATIVE_NUGGET * var if nugget_mode == "relative" else float(nugget_mode)
    d2 = sq_distances(coords, coords)
    if diagonal is None:
        diagonal = float(np.hypot(*np.ptp(coords, axis=0)))
    pos = d2[d2 > 0]
    min_sep = math.sqrt(pos.min()) if pos.size else diagonal
    lo = np.array([math.log(min_sep / 100.0), math.log(var * 1e-4)])
    hi = np.array([math.log(max(diagonal, min_sep) * 100.0), math.log(var * 1e4)])

    def objective(theta):
        try:
            return -window_loglik(z, coords, math.exp(theta[0]), math.exp(theta[1]), nu, nugget, d2=d2)
        except NotPositiveDefinite:
            return np.inf

    starts = [(diagonal / 4, var), (diagonal / 10, var), (diagonal / 2, var / 2)]
    best = None
    for rho0, s20 in starts:
        x0 = np.clip([math.log(rho0), math.log(s20)], lo, hi)
        res = minimize(objective, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000, "maxfev": 8000})
        simplex = res.final_simplex[0]
        diameter = float(np.max(np.abs(simplex[:, None, :] - simplex[None, :, :]).sum(axis=-1)))
        if best is None or res.fun < best[0].fun:
            best = (res, diameter)
    res, diameter = best
    log_rho, log_s2 = res.x
    at_bound = bool(log_rho <= lo[0] + 1e-6)
    # numerically uncorrelated: the likelihood is flat in rho below this point
    if matern_correlation(2.0 * math.sqrt(nu) * min_sep / math.exp(log_rho), nu) < 1e-8:
        log_rho, at_bound = lo[0], True
    converged = bool(np.isfinite(res.fun) and diameter < 1e-6 and not at_bound)
    return WindowFit(math.exp(log_rho), math.exp(log_s2), converged, float(-res.fun), at_bound)


def fit_all_windows(field: SpaceTimeField, grid: WindowGrid, nu=1.5, min_cells=MIN_CELLS, threads=1):
    values = field.values
    bounds = grid.bounds
    diag = grid.size * math.sqrt(2.0)

    def one(w):
        cells = grid.cells_of(w)
        if cells.size < max(min_cells, 2):
            return cells.size, None
        try:
            return cells.size, fit_window(values[cells], field.coords[cells], nu, min_cells=min_cells, diagonal=diag)
        except (TooFewCells, NotPositiveDefinite) as exc:
            log.warning("window %d fit failed: %s", w, exc)
            return cells.size, None

    ids = range(grid.n_windows)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(w) for w in ids]

    n_win = grid.n_windows
    rho = np.full(n_win, np.nan)
    s2 = np.full(n_win, np.nan)
    ll = np.full(n_win, np.nan)
    n_cells = np.zeros(n_win, dtype=int)
    conv = np.zeros(n_win, dtype=bool)
    for w, (count, fit) in enumerate(results):
        n_cells[w] = count
        if fit is not None:
            rho[w], s2[w], ll[w], conv[w] = fit.rho_hat, fit.sigma2_hat, fit.loglik, fit.converged
    good = np.flatnonzero(conv)
    if good.size == 0:
        raise NoConvergedWindows("no window produced a converged fit")
    fallback = np.full(n_win, -1, dtype=int)
    centers = grid.centers
    for w in np.flatnonzero(~conv):
        d2 = ((centers[good] - centers[w]) ** 2).sum(axis=1)
        src = int(good[np.argmin(d2)])
        rho[w], s2[w], fallback[w] = rho[src], s2[src], src
        log.info("window %d (%d cells, bounds %s) inherits estimates of window %d",
                 w, n_cells[w], np.round(bounds[w], 6).tolist(), src)
    return WindowEstimates(rho, s2, n_cells, ll, conv, fallback, nu)


def estimates_at(estimates: WindowEstimates, grid: WindowGrid, points):
    w = grid.window_of(points)
    return estimates.rho_hat[w], estimates.sigma2_hat[w]


def estimate_at(estimates: WindowEstimates, grid: WindowGrid, s):
    rho, s2 = estimates_at(estimates, grid, s)
    return float(rho[0]), float(s2[0])


WINDOW_COLUMNS = ("window_id", "lon_min", "lon_max", "lat_min", "lat_max", "rho_hat", "sigma2_hat",
                  "n_cells", "converged", "fallback")


def write_windows_csv(path, grid: WindowGrid, estimates: WindowEstimates):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WINDOW_COLUMNS)
        for w, b in enumerate(grid.bounds):
            writer.writerow([w, *(repr(float(v)) for v in b), repr(float(estimates.rho_hat[w])),
                             repr(float(estimates.sigma2_hat[w])), int(estimates.n_cells[w]),
                             int(estimates.converged[w]), int(estimates.fallback[w])])


def read_windows_csv(path, nu=1.5):
    """Rebuild the window tiling and estimates written by :func:`write_windows_csv`.

    The per-cell assignment is not stored; it is left empty.
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if not rows or tuple(rows[0].keys()) != WINDOW_COLUMNS:
        raise ParseError(f"{path}: not a windows file")
    try:
        b = np.array([[float(r[c]) for c in WINDOW_COLUMNS[1:5]] for r in rows])
        rho = np.array([float(r["rho_hat"]) for r in rows])
        s2 = np.array([float(r["sigma2_hat"]) for r in rows])
        n_cells = np.array([int(r["n_cells"]) for r in rows])
        conv = np.array([bool(int(r["converged"])) for r in rows])
        fb = np.array([int(r["fallback"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    size = b[0, 1] - b[0, 0]
    nx = np.unique(b[:, 0]).size
    ny = np.unique(b[:, 2]).size
    grid = WindowGrid(float(b[:, 0].min()), float(b[:, 2].min()), float(size), nx, ny, np.empty(0, dtype=int))
    return grid, WindowEstimates(rho, s2, n_cells, np.full(len(rows), np.nan), conv, fb, nu)
