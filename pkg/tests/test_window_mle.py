import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from nonstat_gp.covariance import matern_stationary
from nonstat_gp.errors import NoConvergedWindows, TooFewCells, ValidationError
from nonstat_gp.field_store import SpaceTimeField
from nonstat_gp.window_mle import (WindowEstimates, estimate_at, estimates_at, fit_all_windows, fit_window,
                                   partition, read_windows_csv, window_loglik, write_windows_csv)

from conftest import lattice


def matern_draws(coords, rho, sigma2, nu, n_rep, rng):
    d = np.hypot(*(coords[:, None, :] - coords[None, :, :]).transpose(2, 0, 1))
    cov = matern_stationary(d, nu, rho, sigma2) + 1e-10 * sigma2 * np.eye(len(coords))
    return np.linalg.cholesky(cov) @ rng.standard_normal((len(coords), n_rep))


def test_partition_counts():
    grid = partition(lattice(5, 3, 1.0), size=2.0)  # lon 0..4, lat 0..2
    assert (grid.nx, grid.ny) == (2, 1)
    assert grid.n_windows == 2
    big = partition(lattice(40, 40, 99 / 39, 1.0, 1.0), size=25.0)
    assert big.n_windows == 16
    assert np.bincount(big.assignment).min() > 0


def test_shared_edge_goes_to_lower_window():
    coords = np.array([[0.0, 0.0], [2.0, 0.0], [4.0, 0.0], [2.0, 2.0]])
    grid = partition(coords, size=2.0)
    # x = 2 sits on the edge between windows 0 and 1; y = 2 is the top edge of row 0
    assert grid.assignment.tolist() == [0, 0, 1, 0]


def test_partition_covers_each_cell_once(rng):
    coords = rng.uniform(-3, 11, (300, 2))
    grid = partition(coords, size=1.7)
    b = grid.bounds[grid.assignment]
    assert np.all((b[:, 0] <= coords[:, 0] + 1e-9) & (coords[:, 0] <= b[:, 1] + 1e-9))
    assert np.all((b[:, 2] <= coords[:, 1] + 1e-9) & (coords[:, 1] <= b[:, 3] + 1e-9))


def test_partition_rejects_bad_size():
    with pytest.raises(ValidationError):
        partition(lattice(3, 3, 1.0), size=0.0)


def test_loglik_against_scipy(rng):
    coords = rng.uniform(0, 10, (15, 2))
    z = rng.normal(size=(15, 3))
    d = np.hypot(*(coords[:, None, :] - coords[None, :, :]).transpose(2, 0, 1))
    cov = matern_stationary(d, 1.5, 3.0, 2.0)
    expect = sum(multivariate_normal(np.zeros(15), cov).logpdf(z[:, t]) for t in range(3))
    assert window_loglik(z, coords, 3.0, 2.0, 1.5) == pytest.approx(expect, rel=1e-10)


def test_loglik_independent_limit(rng):
    coords = lattice(4, 4, 10.0)
    z = rng.normal(size=16)
    # correlation at 10 units with rho = 1e-3 underflows, leaving sigma2 * I
    assert window_loglik(z, coords, 1e-3, 2.5, 0.5) == pytest.approx(norm(0, math.sqrt(2.5)).logpdf(z).sum(), rel=1e-12)


def test_loglik_replicates_add(rng):
    coords = rng.uniform(0, 5, (10, 2))
    z = rng.normal(size=(10, 4))
    parts = sum(window_loglik(z[:, t], coords, 2.0, 1.0, 1.5) for t in range(4))
    assert window_loglik(z, coords, 2.0, 1.0, 1.5) == pytest.approx(parts, rel=1e-12)


def test_loglik_too_few_cells():
    with pytest.raises(TooFewCells):
        window_loglik([1.0], [[0.0, 0.0]], 1.0, 1.0, 1.5)
    with pytest.raises(TooFewCells):
        fit_window(np.ones((3, 2)), lattice(3, 1, 1.0))


def test_fit_recovers_parameters(rng):
    coords = lattice(12, 12, 1.0)
    z = matern_draws(coords, 3.0, 2.0, 1.5, 30, rng)
    fit = fit_window(z, coords, nu=1.5)
    assert fit.converged
    assert abs(math.log(fit.rho_hat / 3.0)) < 0.15
    assert abs(math.log(fit.sigma2_hat / 2.0)) < 0.25


def test_fit_is_a_maximum(rng):
    coords = lattice(8, 8, 1.0)
    z = matern_draws(coords, 2.0, 1.0, 1.5, 5, rng)
    fit = fit_window(z, coords)
    var = float(np.mean(z * z))
    ll = lambda r, s: window_loglik(z, coords, r, s, 1.5, nugget=1e-6 * var)
    for dr, ds in [(1.02, 1), (0.98, 1), (1, 1.02), (1, 0.98)]:
        assert ll(fit.rho_hat * dr, fit.sigma2_hat * ds) <= fit.loglik + 1e-8


def test_white_noise_hits_lower_bound(rng):
    coords = lattice(8, 8, 1.0)
    fit = fit_window(rng.normal(size=(64, 20)), coords)
    assert fit.at_bound and not fit.converged
    assert fit.rho_hat == pytest.approx(1.0 / 100)


def test_scale_invariance(rng):
    coords = lattice(9, 9, 1.0)
    z = matern_draws(coords, 2.5, 1.5, 1.5, 8, rng)
    base = fit_window(z, coords)
    c = 2.0
    scaled = fit_window(c * z, c * coords)
    assert scaled.rho_hat == pytest.approx(c * base.rho_hat, rel=1e-4)
    assert scaled.sigma2_hat == pytest.approx(c * c * base.sigma2_hat, rel=1e-4)


def _two_window_field(rng, right_noise=False):
    coords = lattice(16, 8, 1.0)  # lon 0..15, lat 0..7
    z = matern_draws(coords, 2.0, 1.0, 1.5, 10, rng)
    if right_noise:
        z[coords[:, 0] > 8] = rng.normal(size=(int((coords[:, 0] > 8).sum()), 10))
    return SpaceTimeField(coords, np.arange(10), z, 1.0)


def test_fallback_to_nearest_converged(rng):
    field = _two_window_field(rng, right_noise=True)
    grid = partition(field, size=8.0)
    assert grid.n_windows == 2
    est = fit_all_windows(field, grid)
    assert est.converged.tolist() == [True, False]
    assert est.fallback.tolist() == [-1, 0]
    assert est.rho_hat[1] == est.rho_hat[0] and est.sigma2_hat[1] == est.sigma2_hat[0]


def test_no_converged_windows(rng):
    coords = lattice(8, 8, 1.0)
    field = SpaceTimeField(coords, np.arange(10), rng.normal(size=(64, 10)), 1.0)
    # every 2x2 window has 4 cells, fewer than the 5 required
    with pytest.raises(NoConvergedWindows):
        fit_all_windows(field, partition(field, size=1.5), min_cells=5)


def test_threads_do_not_change_results(rng):
    field = _two_window_field(rng)
    grid = partition(field, size=4.0)
    a = fit_all_windows(field, grid, threads=1)
    b = fit_all_windows(field, grid, threads=3)
    np.testing.assert_array_equal(a.rho_hat, b.rho_hat)
    np.testing.assert_array_equal(a.sigma2_hat, b.sigma2_hat)


def test_estimate_lookup():
    grid = partition(lattice(5, 5, 1.0), size=2.0)
    n = grid.n_windows
    est = WindowEstimates(np.arange(1.0, n + 1), 10 * np.arange(1.0, n + 1), np.ones(n, int),
                          np.zeros(n), np.ones(n, bool), -np.ones(n, int))
    assert estimate_at(est, grid, [0.5, 0.5]) == (1.0, 10.0)
    assert estimate_at(est, grid, [3.5, 0.5]) == (2.0, 20.0)
    # outside the box falls back to the nearest window
    assert estimate_at(est, grid, [100.0, -5.0]) == (2.0, 20.0)
    rho, s2 = estimates_at(est, grid, [[0.5, 3.5], [3.5, 3.5]])
    assert rho.tolist() == [3.0, 4.0]


def test_csv_round_trip(tmp_path, rng):
    field = _two_window_field(rng)
    grid = partition(field, size=4.0)
    est = fit_all_windows(field, grid)
    path = tmp_path / "windows.csv"
    write_windows_csv(path, grid, est)
    grid2, est2 = read_windows_csv(path)
    assert (grid2.nx, grid2.ny, grid2.size) == (grid.nx, grid.ny, grid.size)
    np.testing.assert_array_equal(est2.rho_hat, est.rho_hat)
    np.testing.assert_array_equal(est2.sigma2_hat, est.sigma2_hat)
    np.testing.assert_array_equal(grid2.bounds, grid.bounds)
    pts = rng.uniform(0, 15, (20, 2))
    np.testing.assert_array_equal(grid2.window_of(pts), grid.window_of(pts))
