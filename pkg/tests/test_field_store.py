import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import lattice
from nonstat_gp.errors import DuplicateRecord, EmptyInput, MissingCell, ParseError, ValidationError
from nonstat_gp.field_store import (Location, MonitorSet, SpaceTimeField, load_gridded_csv, load_monitor_csv,
                                    nearest_cell, nearest_cells, write_gridded_csv, write_monitor_csv)
from nonstat_gp.sim import SimConfig, simulate_reference


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_round_trip_sim_field(tmp_path):
    field = simulate_reference(SimConfig(), seed=3)
    write_gridded_csv(tmp_path / "f.csv", field)
    back = load_gridded_csv(tmp_path / "f.csv")
    assert (back.n, back.p) == (1600, 4)
    np.testing.assert_array_equal(back.values, field.values)
    np.testing.assert_array_equal(back.coords, field.coords)
    assert back.grid_spacing == pytest.approx(99 / 39)


def test_single_cell(tmp_path):
    f = load_gridded_csv(write(tmp_path / "one.csv", "day,lon,lat,value\n1,0,0,0\n"))
    assert f.values.tolist() == [[0.0]]
    assert f.grid_spacing is None


def test_missing_cell(tmp_path):
    text = "day,lon,lat,value\n1,0,0,1\n1,1,0,2\n2,0,0,3\n"
    with pytest.raises(MissingCell):
        load_gridded_csv(write(tmp_path / "m.csv", text))


def test_ordering_and_comments(tmp_path):
    text = "# produced by hand\nday,lon,lat,value\n2,5,1,4\n1,5,1,3\n2,0,2,2\n1,0,2,1\n"
    f = load_gridded_csv(write(tmp_path / "o.csv", text))
    assert f.coords.tolist() == [[5.0, 1.0], [0.0, 2.0]]
    assert f.times.tolist() == [1, 2]
    assert f.values.tolist() == [[3.0, 4.0], [1.0, 2.0]]


@pytest.mark.parametrize("text, exc", [
    ("", EmptyInput),
    ("day,lon,lat,value\n", EmptyInput),
    ("day,lon,lat\n1,0,0\n", ParseError),
    ("day,lon,lat,value\n1,0,0,abc\n", ParseError),
    ("day,lon,lat,value\n1,0,0\n", ParseError),
])
def test_gridded_parse_errors(tmp_path, text, exc):
    with pytest.raises(exc):
        load_gridded_csv(write(tmp_path / "bad.csv", text))


def test_monitor_csv(tmp_path):
    text = "day,lon,lat,value\n1,0.5,0.5,1.0\n1,2,3,2.0\n2,-1,4,3.5\n"
    m = load_monitor_csv(write(tmp_path / "m.csv", text))
    assert len(m) == 3
    assert m.values.tolist() == [1.0, 2.0, 3.5]
    assert m.n_sites == 3
    write_monitor_csv(tmp_path / "back.csv", m)
    again = load_monitor_csv(tmp_path / "back.csv")
    np.testing.assert_array_equal(again.values, m.values)


def test_monitor_duplicate(tmp_path):
    text = "day,lon,lat,value\n1,0,0,1\n1,0,0,2\n"
    with pytest.raises(DuplicateRecord):
        load_monitor_csv(write(tmp_path / "d.csv", text))


def test_monitor_nan(tmp_path):
    with pytest.raises(ParseError):
        load_monitor_csv(write(tmp_path / "n.csv", "day,lon,lat,value\n1,0,0,NaN\n"))


def test_geographic_bounds(tmp_path):
    with pytest.raises(ValidationError):
        load_monitor_csv(write(tmp_path / "g.csv", "day,lon,lat,value\n1,0,95,1\n"), geographic=True)
    Location(-100.0, 35.0).check_geographic()


def test_monitor_sites_shared_across_days():
    m = MonitorSet([1, 2, 1], [[0, 0], [0, 0], [1, 1]], [1.0, 2.0, 3.0])
    coords, site_of = m.sites()
    assert coords.tolist() == [[0, 0], [1, 1]]
    assert site_of.tolist() == [0, 0, 1]


def test_field_rejects_duplicates():
    with pytest.raises(ValidationError):
        SpaceTimeField([[0, 0], [0, 0]], [1], [[1.0], [2.0]])


def brute_nearest(grid, s):
    best, idx = np.inf, -1
    for i, g in enumerate(grid):
        d = (g[0] - s[0]) ** 2 + (g[1] - s[1]) ** 2
        if d < best:
            best, idx = d, i
    return idx


def test_nearest_cell_examples():
    grid = lattice(3, 2)
    assert nearest_cell(grid, Location(2.0, 1.0)) == 5
    assert nearest_cell(grid, Location(0.5, 0.0)) == 0
    assert nearest_cell(grid, Location(10.0, -4.0)) == brute_nearest(grid, (10.0, -4.0)) == 2


@settings(max_examples=60, deadline=None)
@given(nx=st.integers(1, 8), ny=st.integers(1, 8), spacing=st.floats(0.1, 5.0),
       pts=st.lists(st.tuples(st.floats(-20, 40), st.floats(-20, 40)), min_size=1, max_size=10))
def test_nearest_cell_matches_scan(nx, ny, spacing, pts):
    grid = lattice(nx, ny, spacing)
    got = nearest_cells(grid, np.array(pts))
    assert got.tolist() == [brute_nearest(grid, p) for p in pts]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False).map(lambda v: float(f"{v:.12g}")), min_size=4, max_size=4))
def test_round_trip_is_exact(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("rt") / "f.csv"
    field = SpaceTimeField(lattice(2, 1), [1, 2], np.array(vals).reshape(2, 2))
    write_gridded_csv(path, field)
    np.testing.assert_array_equal(load_gridded_csv(path).values, field.values)
