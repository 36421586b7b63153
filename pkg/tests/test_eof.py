import warnings

import numpy as np
import pytest

from conftest import lattice
from nonstat_gp.eof import center_rows, compute_eofs, detrend_by_eofs, eof_at, eofs_at
from nonstat_gp.errors import DegenerateField, GeometryMismatch, IndexOutOfRange, RankDeficientWarning
from nonstat_gp.field_store import Location, SpaceTimeField


def make_field(values, nx=None):
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    coords = lattice(n, 1) if nx is None else lattice(nx, n // nx)
    return SpaceTimeField(coords, np.arange(1, p + 1), values)


def test_center_rows_basic():
    anom, means = center_rows(make_field([[1.0, 3.0]]))
    assert anom.tolist() == [[-1.0, 1.0]]
    assert means.tolist() == [2.0]


def test_center_constant_and_random(rng):
    anom, _ = center_rows(make_field(np.full((3, 4), 7.5)))
    assert np.all(anom == 0)
    vals = rng.normal(size=(5, 4)) * 100
    anom, _ = center_rows(make_field(vals))
    assert np.all(np.abs(anom.sum(axis=1)) <= 1e-12 * 4 * np.abs(vals).max())


def test_center_needs_two_times():
    with pytest.raises(DegenerateField):
        center_rows(make_field([[1.0], [2.0]]))


def test_rank_one(rng):
    u = rng.normal(size=20)
    v = rng.normal(size=6)
    v -= v.mean()
    basis = compute_eofs(make_field(np.outer(u, v) + 3.0), 1)
    e = basis.eofs[:, 0]
    target = u / np.linalg.norm(u)
    assert min(np.abs(e - target).max(), np.abs(e + target).max()) < 1e-10
    assert basis.variance_explained == pytest.approx([1.0], abs=1e-12)
    assert np.abs(e).argmax() == np.argmax(e)


def test_zero_anomaly_flags_rank_deficiency():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        basis = compute_eofs(make_field(np.ones((6, 3))), 2)
    assert basis.rank_deficient
    assert np.all(basis.singular_values == 0)
    assert any(issubclass(w.category, RankDeficientWarning) for w in caught)


def planted_field(rng, n=400, p=40, m=7, share=0.70):
    """Field whose anomaly has m orthogonal patterns carrying ``share`` of the variance."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    t, _ = np.linalg.qr(rng.normal(size=(p, p)) - 0)
    # temporal vectors orthogonal to the constant so centring leaves them alone
    ones = np.ones((p, 1)) / np.sqrt(p)
    tt = t - ones @ (ones.T @ t)
    tt, _ = np.linalg.qr(tt)
    tt = tt[:, :p - 1]
    lead = np.linspace(3.0, 1.5, m)
    rest = np.full(p - 1 - m, 1.0)
    lead *= np.sqrt(share / (1 - share) * (rest ** 2).sum() / (lead ** 2).sum())
    s = np.concatenate([lead, rest])
    anomaly = q[:, :p - 1] * s @ tt.T
    return make_field(anomaly + rng.normal(size=(n, 1)), nx=20), s


def test_planted_spectrum(rng):
    field, s = planted_field(rng)
    basis = compute_eofs(field, 7)
    assert basis.variance_explained.sum() == pytest.approx(0.70, abs=1e-10)
    assert basis.variance_fractions.sum() == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(basis.singular_values[:39], np.sort(s)[::-1], rtol=1e-10)


@pytest.mark.filterwarnings("ignore::nonstat_gp.errors.RankDeficientWarning")
def test_basis_invariants(rng):
    field = make_field(rng.normal(size=(30, 8)) + rng.normal(size=(30, 1)) * 5, nx=6)
    basis = compute_eofs(field, 8)
    e = basis.eofs
    np.testing.assert_allclose(e.T @ e, np.eye(8), atol=1e-10)
    assert np.all(np.diff(basis.singular_values) <= 1e-12)
    anom, _ = center_rows(field)
    recon = (e * basis.singular_values) @ basis.pcs.T
    assert np.linalg.norm(anom - recon) <= 1e-8 * np.linalg.norm(anom)
    # largest-magnitude entry of each pattern is positive
    idx = np.abs(e).argmax(axis=0)
    assert np.all(e[idx, np.arange(8)] > 0)
    flipped = basis.variance_explained.copy()
    assert np.array_equal(compute_eofs(field.with_values(-field.values), 8).variance_explained.round(12),
                          flipped.round(12))


def test_eof_lookup(rng):
    field = make_field(rng.normal(size=(12, 5)), nx=4)
    basis = compute_eofs(field, 3)
    assert eof_at(basis, field, Location(2.0, 1.0), 2) == basis.eofs[6, 1]
    assert eof_at(basis, field, Location(2.2, 0.9), 3) == basis.eofs[6, 2]
    assert eofs_at(basis, field, [[0.0, 0.0]]).shape == (1, 3)
    with pytest.raises(IndexOutOfRange):
        eof_at(basis, field, Location(0.0, 0.0), 4)


def test_detrend_projection(rng):
    field, _ = planted_field(rng, n=100, p=12, m=3)
    basis = compute_eofs(field, 3)
    resid = detrend_by_eofs(field, basis).values
    ips = basis.eofs.T @ resid
    assert np.abs(ips).max() < 1e-8 * np.abs(resid).max()
    again = detrend_by_eofs(field.with_values(resid), basis).values
    np.testing.assert_allclose(again, resid, atol=1e-10)


def test_detrend_in_span_and_zero_modes(rng):
    u = np.linalg.qr(rng.normal(size=(50, 2)))[0]
    v = rng.normal(size=(2, 6))
    field = make_field(u @ v + 4.0, nx=10)
    basis = compute_eofs(field, 2)
    assert np.abs(detrend_by_eofs(field, basis).values).max() < 1e-10
    anom, _ = center_rows(field)
    np.testing.assert_array_equal(detrend_by_eofs(field, basis.truncate(0)).values, anom)


def test_geometry_mismatch(rng):
    a = make_field(rng.normal(size=(6, 3)))
    b = SpaceTimeField(a.coords + 1.0, a.times, a.values)
    with pytest.raises(GeometryMismatch):
        detrend_by_eofs(b, compute_eofs(a, 1))
