import numpy as np
import pytest

from weakkam.grid import (GridError, GridField, GridSpec, interpolate, read_field, write_field,
                          write_field_csv)


@pytest.mark.parametrize("n", [8, 24, 100])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(GridError):
        GridSpec(1, n)


def test_grid_memory_guard():
    GridSpec(2, 2048)
    with pytest.raises(GridError):
        GridSpec(2, 4096)


def test_interpolation_reproduces_nodes_and_is_periodic(rng):
    for dim in (1, 2):
        g = GridSpec(dim, 16)
        vals = rng.normal(size=g.shape)
        pts = g.flat_points()
        assert np.array_equal(interpolate(vals, pts), vals.ravel())
        # dyadic points, so that x + 1 is representable exactly
        x = rng.integers(0, 2 ** 30, (50, dim)) / 2 ** 30
        assert np.array_equal(interpolate(vals, x), interpolate(vals, x + 1.0))
        assert np.array_equal(interpolate(vals, x), interpolate(vals, x - 2.0))
        x = rng.random((50, dim))
        assert np.allclose(interpolate(vals, x), interpolate(vals, x - 3.0), atol=1e-13)


def test_interpolation_exact_for_bilinear():
    g = GridSpec(2, 16)
    P = g.points()
    vals = 1.0 + 2.0 * P[..., 0] + 3.0 * P[..., 1] + 4.0 * P[..., 0] * P[..., 1]
    x = np.array([[0.3, 0.2], [0.51, 0.77]])
    exact = 1.0 + 2.0 * x[:, 0] + 3.0 * x[:, 1] + 4.0 * x[:, 0] * x[:, 1]
    assert np.allclose(interpolate(vals, x), exact, atol=1e-13)


def test_field_lipschitz_and_sup():
    g = GridSpec(1, 64)
    f = GridField(g, np.sin(2 * np.pi * g.axis()))
    assert f.lipschitz() == pytest.approx(2 * np.pi, rel=1e-2)
    assert f.sup() == pytest.approx(1.0)


@pytest.mark.parametrize("dim,n", [(1, 32), (2, 16)])
def test_binary_round_trip(tmp_path, rng, dim, n):
    g = GridSpec(dim, n)
    f = GridField(g, rng.normal(size=g.shape), {"lam": 0.05, "c": 1.25})
    write_field(tmp_path / "f.wkf", f)
    raw = (tmp_path / "f.wkf").read_bytes()
    assert raw[:4] == b"WKF1"
    assert len(raw) == 4 + 4 + 4 + 8 + 8 + 8 * g.size
    back = read_field(tmp_path / "f.wkf")
    assert back.grid == g
    assert np.array_equal(back.values, f.values)
    assert back.meta["lam"] == 0.05 and back.meta["c"] == 1.25


def test_read_rejects_corrupt_files(tmp_path):
    (tmp_path / "bad.wkf").write_bytes(b"XXXX" + bytes(24))
    with pytest.raises(GridError):
        read_field(tmp_path / "bad.wkf")
    g = GridSpec(1, 16)
    write_field(tmp_path / "short.wkf", GridField(g, np.zeros(16)))
    data = (tmp_path / "short.wkf").read_bytes()[:-8]
    (tmp_path / "short.wkf").write_bytes(data)
    with pytest.raises(GridError):
        read_field(tmp_path / "short.wkf")


def test_csv_export(tmp_path):
    g = GridSpec(2, 16)
    write_field_csv(tmp_path / "f.csv", GridField(g, np.ones(g.shape)))
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "i,j,x,y,value"
    assert len(lines) == 1 + 256
