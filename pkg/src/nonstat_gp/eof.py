"""Empirical orthogonal functions of a gridded reference field.

The field is stored space-in-rows, time-in-columns. Rows are centred by their
time mean and the anomaly matrix is decomposed with a thin SVD; the leading
left singular vectors are the spatial patterns used as mean covariates and
for detrending before the local covariance fits.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateField, GeometryMismatch, IndexOutOfRange, RankDeficientWarning, ValidationError
from .field_store import SpaceTimeField, nearest_cells

DEFAULT_NUM_EOFS = 7


@dataclass(frozen=True)
class EofBasis:
    """Leading EOFs plus the full singular spectrum.

    Attributes
    ----------
    eofs : (n, M) array
        Orthonormal spatial patterns, one per column.
    singular_values : (r,) array
        All singular values of the anomaly matrix, nonincreasing.
    pcs : (p, M) array
        Principal components (right singular vectors).
    row_means : (n,) array
        Time mean of each location.
    variance_explained : (M,) array
        ``lambda_m**2 / sum(lambda**2)`` for the retained patterns.
    coords : (n, 2) array
        Geometry the basis was computed on.
    """

    eofs: np.ndarray
    singular_values: np.ndarray
    pcs: np.ndarray
    row_means: np.ndarray
    variance_explained: np.ndarray
    coords: np.ndarray
    rank_deficient: bool = False

    @property
    def num_eofs(self):
        return self.eofs.shape[1]

    @property
    def variance_fractions(self):
        """Variance fraction of every one of the ``r`` singular terms."""
        power = self.singular_values ** 2
        total = power.sum()
        if total == 0:
            return np.zeros_like(power)
        return power / total

    def truncate(self, m):
        if not 0 <= m <= self.num_eofs:
            raise IndexOutOfRange(f"cannot keep {m} of {self.num_eofs} EOFs")
        return EofBasis(self.eofs[:, :m], self.singular_values, self.pcs[:, :m], self.row_means,
                        self.variance_explained[:m], self.coords, self.rank_deficient)


def center_rows(field: SpaceTimeField):
    if field.p < 2:
        raise DegenerateField(f"need at least 2 time points to centre rows, got {field.p}")
    means = field.values.mean(axis=1)
    return field.values - means[:, None], means


def _flip_signs(u, v):
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def compute_eofs(field: SpaceTimeField, num_eofs=DEFAULT_NUM_EOFS) -> EofBasis:
    anomaly, means = center_rows(field)
    r = min(anomaly.shape)
    if not 0 <= num_eofs <= r:
        raise ValidationError(f"num_eofs must lie in [0, {r}], got {num_eofs}")
    u, s, vt = np.linalg.svd(anomaly, full_matrices=False)
    u, v = _flip_signs(u, vt.T)
    power = s ** 2
    total = power.sum()
    frac = power / total if total > 0 else np.zeros_like(power)
    deficient = False
    if num_eofs > 0 and (s[0] == 0 or s[num_eofs - 1] <= 1e-12 * s[0]):
        deficient = True
        warnings.warn(f"singular value {num_eofs} is numerically zero; trailing EOFs are arbitrary",
                      RankDeficientWarning, stacklevel=2)
    return EofBasis(u[:, :num_eofs], s, v[:, :num_eofs], means, frac[:num_eofs],
                    field.coords.copy(), deficient)


def _check_geometry(basis, field):
    if basis.coords.shape != field.coords.shape or not np.array_equal(basis.coords, field.coords):
        raise GeometryMismatch("EOF basis was computed on a different set of locations")


def eof_at(basis: EofBasis, field: SpaceTimeField, s, m) -> float:
    """Value of EOF ``m`` (1-based) at the grid cell nearest to ``s``."""
    return float(eofs_at(basis, field, s, [m])[0, 0])


def eofs_at(basis: EofBasis, field: SpaceTimeField, points, ms=None) -> np.ndarray:
    _check_geometry(basis, field)
    ms = np.arange(1, basis.num_eofs + 1) if ms is None else np.asarray(ms, dtype=int)
    if ms.size and (ms.min() < 1 or ms.max() > basis.num_eofs):
        raise IndexOutOfRange(f"EOF index outside 1..{basis.num_eofs}")
    cells = nearest_cells(field, points)
    return basis.eofs[np.ix_(cells, ms - 1)]


def detrend_by_eofs(field: SpaceTimeField, basis: EofBasis) -> SpaceTimeField:
    """Anomaly field with its projection on the retained EOFs removed."""
    _check_geometry(basis, field)
    anomaly, _ = center_rows(field)
    e = basis.eofs
    resid = anomaly - e @ (e.T @ anomaly)
    return field.with_values(resid)
