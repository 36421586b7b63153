import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from nonstat_gp.errors import DomainError, EmptyInput, StratumMismatch
from nonstat_gp.scoring import (OVERALL, combine_tables, coverage95, crps_gaussian, expected_abs_error_gaussian,
                                log_loss_gaussian, rmse, score_table)


def crps_quadrature(mu, sd, y):
    """Definition: integral of (F(x) - 1{x >= y})^2 dx."""
    f = lambda x: (norm.cdf(x, mu, sd) - (x >= y)) ** 2
    lo, hi = min(mu, y) - 12 * sd, max(mu, y) + 12 * sd
    return integrate.quad(f, lo, y, epsabs=1e-13, limit=200)[0] + integrate.quad(f, y, hi, epsabs=1e-13, limit=200)[0]


def test_crps_standard_normal_at_mean():
    # (sqrt(2) - 1) / sqrt(pi), frozen at 20 digits
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.23369497725510906893, rel=1e-14)


@pytest.mark.parametrize("mu,sd,y", [(0, 1, 0.3), (2.0, 0.5, -1.0), (-3, 4, 10), (0.1, 1e-3, 0.1005), (5, 2, 5)])
def test_crps_matches_definition(mu, sd, y):
    assert crps_gaussian(mu, sd, y) == pytest.approx(crps_quadrature(mu, sd, y), rel=1e-8, abs=1e-12)


def test_log_loss_at_mean():
    assert log_loss_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.91893853320467274178, rel=1e-15)
    assert log_loss_gaussian(1.0, 2.0, 3.0) == pytest.approx(-norm(1, 2).logpdf(3.0), rel=1e-14)


@settings(max_examples=200)
@given(mu=st.floats(-100, 100), sd=st.floats(1e-3, 100), y=st.floats(-100, 100))
def test_crps_bounded_by_expected_abs_error(mu, sd, y):
    c = crps_gaussian(mu, sd, y)
    assert 0 <= c <= expected_abs_error_gaussian(mu, sd, y) + 1e-12
    # E|X-y| - CRPS = E|X-X'|/2 = sd/sqrt(pi)
    assert expected_abs_error_gaussian(mu, sd, y) - c == pytest.approx(sd / math.sqrt(math.pi), rel=1e-6,
                                                                       abs=1e-9 * (1 + abs(y - mu)))


def test_expected_abs_error_monte_carlo(rng):
    x = rng.normal(1.0, 2.0, 400_000)
    assert expected_abs_error_gaussian(1.0, 2.0, 2.5) == pytest.approx(np.abs(x - 2.5).mean(), rel=5e-3)


def test_crps_is_proper(rng):
    # expected score under the truth N(0,1) is lowest for the true forecast
    y = rng.standard_normal(200_000)
    truth = crps_gaussian(0.0, 1.0, y).mean()
    for mu, sd in [(0.2, 1.0), (0.0, 0.8), (0.0, 1.3), (-0.3, 1.1)]:
        assert crps_gaussian(mu, sd, y).mean() > truth
        assert log_loss_gaussian(mu, sd, y).mean() > log_loss_gaussian(0.0, 1.0, y).mean()


def test_nominal_coverage(rng):
    y = rng.standard_normal(100_000)
    cov = coverage95(np.full_like(y, -1.96), np.full_like(y, 1.96), y)
    assert abs(cov - 0.95) < 4 * math.sqrt(0.95 * 0.05 / y.size)


def test_rmse_and_coverage_basics():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2.0))
    assert coverage95([0, 0], [1, 1], [1.0, 1.5]) == 0.5
    with pytest.raises(EmptyInput):
        rmse([], [])
    with pytest.raises(StratumMismatch):
        rmse([1.0], [1.0, 2.0])


def test_bad_sd():
    with pytest.raises(DomainError):
        crps_gaussian(0.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        log_loss_gaussian([0.0, 0.0], [1.0, -1.0], [0.0, 0.0])


def test_table_strata_add_up(rng):
    n = 60
    mean, sd, y = rng.normal(size=n), rng.uniform(0.5, 2, n), rng.normal(size=n)
    strata = np.array(["a", "b", "c"])[rng.integers(0, 3, n)]
    table = score_table(mean, sd, y, strata, label="NS")
    rows = [table.get("NS", s) for s in ("a", "b", "c")]
    total = table.get("NS", OVERALL)
    assert sum(r.n for r in rows) == total.n == n
    assert sum(r.crps for r in rows) == pytest.approx(total.crps, rel=1e-12)
    assert sum(r.log_loss for r in rows) == pytest.approx(total.log_loss, rel=1e-12)
    assert math.sqrt(sum(r.rmse ** 2 * r.n for r in rows) / n) == pytest.approx(total.rmse, rel=1e-12)
    assert total.crps == pytest.approx(crps_gaussian(mean, sd, y).sum(), rel=1e-12)
    assert table.strata() == ["a", "b", "c", OVERALL]


def test_table_default_interval():
    t = score_table([0.0, 0.0], [1.0, 1.0], [1.95, 1.97])
    assert t.get("model").coverage95 == 0.5


def test_table_mismatch():
    with pytest.raises(StratumMismatch):
        score_table([0.0], [1.0], [0.0, 1.0])
    with pytest.raises(StratumMismatch):
        score_table([0.0], [1.0], [0.0], strata=["a", "b"])


def test_combine_matches_pooled(rng):
    parts = [(rng.normal(size=k), rng.uniform(0.5, 2, k), rng.normal(size=k)) for k in (10, 25)]
    tables = [score_table(m, s, y, label="S") for m, s, y in parts]
    pooled = score_table(*(np.concatenate(a) for a in zip(*parts)), label="S")
    got, want = combine_tables(tables).get("S"), pooled.get("S")
    for name in ("log_loss", "crps", "rmse", "coverage95"):
        assert getattr(got, name) == pytest.approx(getattr(want, name), rel=1e-12)


def test_csv(tmp_path):
    t = score_table([0.0, 1.0], [1.0, 1.0], [0.0, 0.0], ["x", "y"], label="NS")
    score_table([0.0, 1.0], [2.0, 2.0], [0.0, 0.0], ["x", "y"], label="S", table=t)
    path = tmp_path / "scores.csv"
    t.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "model,stratum,n,log_loss,crps,rmse,coverage95"
    assert len(lines) == 7
