"""Gridded space-time fields, sparse monitor records and their CSV files.

Both file kinds use the long layout ``day,lon,lat,value`` (UTF-8, ``.``
decimals, lines starting with ``#`` ignored). Coordinates are handled as
``(n, 2)`` arrays of ``(lon, lat)`` and all distances are Euclidean in those
coordinates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DuplicateRecord, EmptyInput, MissingCell, ParseError, ValidationError

HEADER = ("day", "lon", "lat", "value")


@dataclass(frozen=True)
class Location:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValidationError(f"non-finite location ({self.lon}, {self.lat})")

    def check_geographic(self):
        if not (-360.0 <= self.lon <= 360.0 and -90.0 <= self.lat <= 90.0):
            raise ValidationError(f"location ({self.lon}, {self.lat}) outside geographic bounds")
        return self

    def as_array(self):
        return np.array([self.lon, self.lat], dtype=float)


def as_coords(locs) -> np.ndarray:
    """Coerce a Location, a sequence of Locations or an array into ``(n, 2)``."""
    if isinstance(locs, Location):
        return locs.as_array()[None, :]
    if isinstance(locs, np.ndarray):
        arr = np.asarray(locs, dtype=float)
    else:
        locs = list(locs)
        if locs and isinstance(locs[0], Location):
            arr = np.array([[l.lon, l.lat] for l in locs], dtype=float)
        else:
            arr = np.asarray(locs, dtype=float)
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(f"expected (n, 2) coordinates, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class SpaceTimeField:
    """Complete field on ``n`` locations by ``p`` times.

    ``coords[i]`` is the ``(lon, lat)`` of row ``i`` of ``values``; ``times``
    labels the columns.
    """

    coords: np.ndarray
    times: np.ndarray
    values: np.ndarray
    grid_spacing: float | None = None

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1, 2)
        values = np.array(self.values, dtype=float)
        times = np.array(self.times)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape != (coords.shape[0], times.shape[0]):
            raise ValidationError(
                f"values shape {values.shape} does not match {coords.shape[0]} locations x {times.shape[0]} times")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(coords)):
            raise ValidationError("field contains missing or non-finite entries")
        if len({(x, y) for x, y in coords}) != coords.shape[0]:
            raise ValidationError("field locations are not unique")
        for arr in (coords, values, times):
            arr.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def p(self):
        return self.times.shape[0]

    @property
    def locations(self):
        return [Location(float(x), float(y)) for x, y in self.coords]

    def with_values(self, values):
        return SpaceTimeField(self.coords, self.times, values, self.grid_spacing)


@dataclass(frozen=True)
class MonitorSet:
    """Point observations ``y_t(s)``; record order follows the source."""

    days: np.ndarray
    coords: np.ndarray
    values: np.ndarray
    _site_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        days = np.asarray(self.days)
        coords = np.array(self.coords, dtype=float).reshape(-1, 2)
        values = np.array(self.values, dtype=float).ravel()
        if not (days.shape[0] == coords.shape[0] == values.shape[0]):
            raise ValidationError("monitor arrays have inconsistent lengths")
        if not np.all(np.isfinite(values)):
            raise ValidationError("monitor values must be finite")
        keys = set()
        for d, (x, y) in zip(days.tolist(), coords.tolist()):
            key = (d, x, y)
            if key in keys:
                raise DuplicateRecord(f"duplicate record for day={d}, lon={x}, lat={y}")
            keys.add(key)
        for arr in (days, coords, values):
            arr.setflags(write=False)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    def sites(self):
        """Distinct sites in order of first appearance and each record's site index."""
        if "sites" not in self._site_cache:
            index = {}
            site_of = np.empty(len(self), dtype=int)
            for k, (x, y) in enumerate(self.coords.tolist()):
                site_of[k] = index.setdefault((x, y), len(index))
            site_coords = np.array(list(index.keys()), dtype=float).reshape(-1, 2)
            self._site_cache["sites"] = (site_coords, site_of)
        return self._site_cache["sites"]

    @property
    def n_sites(self):
        return self.sites()[0].shape[0]

    def unique_days(self):
        return np.unique(self.days)

    def subset(self, mask):
        mask = np.asarray(mask)
        return MonitorSet(self.days[mask], self.coords[mask], self.values[mask])


def _read_rows(path):
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            raise EmptyInput(f"{path}: no header")
        header = tuple(h.strip().lower() for h in header)
        if header != HEADER:
            raise ParseError(f"{path}: expected header {','.join(HEADER)}, got {','.join(header)}")
        for row in reader:
            lineno = reader.line_num + 1
            if len(row) != 4:
                raise ParseError(f"{path}: row {lineno} has {len(row)} fields")
            try:
                day = int(row[0])
                lon, lat, value = (float(v) for v in row[1:])
            except ValueError as exc:
                raise ParseError(f"{path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in (lon, lat, value)):
                raise ParseError(f"{path}: row {lineno} has a non-finite entry")
            rows.append((day, lon, lat, value))
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return rows


def _regular_spacing(coords):
    lons = np.unique(coords[:, 0])
    lats = np.unique(coords[:, 1])
    if lons.size * lats.size != coords.shape[0] or lons.size < 2 or lats.size < 2:
        return None
    dx, dy = np.diff(lons), np.diff(lats)
    if np.ptp(dx) > 1e-9 * dx.mean() or np.ptp(dy) > 1e-9 * dy.mean():
        return None
    if abs(dx.mean() - dy.mean()) > 1e-9 * dx.mean():
        return None
    return float(dx.mean())


def load_gridded_csv(path, geographic=False) -> SpaceTimeField:
    rows = _read_rows(path)
    cells = {}
    days = set()
    for day, lon, lat, value in rows:
        days.add(day)
        per_cell = cells.setdefault((lat, lon), {})
        if day in per_cell:
            raise DuplicateRecord(f"{path}: duplicate cell day={day}, lon={lon}, lat={lat}")
        per_cell[day] = value
    days = sorted(days)
    keys = sorted(cells)
    values = np.empty((len(keys), len(days)))
    for i, key in enumerate(keys):
        per_cell = cells[key]
        for j, day in enumerate(days):
            try:
                values[i, j] = per_cell[day]
            except KeyError:
                raise MissingCell(f"{path}: cell lon={key[1]}, lat={key[0]} missing on day {day}") from None
    coords = np.array([(lon, lat) for lat, lon in keys], dtype=float)
    if geographic:
        for lon, lat in coords:
            Location(lon, lat).check_geographic()
    return SpaceTimeField(coords, np.array(days), values, _regular_spacing(coords))


def load_monitor_csv(path, geographic=False) -> MonitorSet:
    rows = _read_rows(path)
    days = np.array([r[0] for r in rows])
    coords = np.array([(r[1], r[2]) for r in rows], dtype=float)
    values = np.array([r[3] for r in rows], dtype=float)
    if geographic:
        for lon, lat in coords:
            Location(lon, lat).check_geographic()
    return MonitorSet(days, coords, values)


def _write_long(path, days, coords, values):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for d, (x, y), v in zip(days, coords, values):
            writer.writerow((int(d), repr(float(x)), repr(float(y)), repr(float(v))))


def write_gridded_csv(path, field: SpaceTimeField):
    n, p = field.values.shape
    days = np.tile(field.times, n)
    coords = np.repeat(field.coords, p, axis=0)
    _write_long(path, days, coords, field.values.ravel())


def write_monitor_csv(path, monitors: MonitorSet):
    _write_long(path, monitors.days, monitors.coords, monitors.values)


def nearest_cells(field_or_coords, points) -> np.ndarray:
    """Index of the nearest grid location for each query point (ties: lowest index)."""
    grid = field_or_coords.coords if isinstance(field_or_coords, SpaceTimeField) else as_coords(field_or_coords)
    if grid.shape[0] == 0:
        raise EmptyInput("empty field")
    pts = as_coords(points)
    out = np.empty(pts.shape[0], dtype=int)
    step = max(1, 2_000_000 // grid.shape[0])
    for start in range(0, pts.shape[0], step):
        chunk = pts[start:start + step]
        d2 = ((chunk[:, None, :] - grid[None, :, :]) ** 2).sum(axis=-1)
        out[start:start + step] = np.argmin(d2, axis=1)
    return out


def nearest_cell(field_or_coords, s) -> int:
    return int(nearest_cells(field_or_coords, s)[0])
