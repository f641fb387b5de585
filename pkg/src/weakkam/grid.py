"""Uniform periodic grids, fields on them, and their file formats."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"WKF1"
_HEADER = struct.Struct("<4sIIdd")
MAX_NODES = 2 ** 22


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """``n`` nodes per axis on the unit torus in ``dim`` dimensions."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.dim}")
        if self.n < 16 or self.n & (self.n - 1):
            raise GridError(f"n must be a power of two >= 16, got {self.n}")
        if self.n ** self.dim > MAX_NODES:
            raise GridError(f"{self.n}^{self.dim} nodes exceeds the limit of {MAX_NODES}")

    @property
    def dx(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    def points(self) -> np.ndarray:
        """Node coordinates of shape ``shape + (dim,)``."""
        axes = [self.axis()] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def flat_points(self) -> np.ndarray:
        return self.points().reshape(-1, self.dim)

    def node_of(self, x) -> int:
        """Flat index of the node nearest to ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint(np.mod(x, 1.0) * self.n).astype(int) % self.n
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def coords_of(self, flat: int) -> np.ndarray:
        return np.array(np.unravel_index(int(flat), self.shape), dtype=float) * self.dx


@dataclass
class GridField:
    grid: GridSpec
    values: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy(), dict(self.meta))

    def with_values(self, values, **meta) -> "GridField":
        m = dict(self.meta)
        m.update(meta)
        return GridField(self.grid, values, m)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __call__(self, x) -> np.ndarray:
        return interpolate(self.values, x)

    def lipschitz(self) -> float:
        """Largest adjacent-node difference divided by the spacing."""
        best = 0.0
        for ax in range(self.grid.dim):
            d = np.abs(np.roll(self.values, -1, axis=ax) - self.values)
            best = max(best, float(d.max()))
        return best / self.grid.dx


def interpolate(values: np.ndarray, x) -> np.ndarray:
    """Periodic multilinear interpolation of nodal ``values`` at points ``x``.

    ``x`` has shape ``(..., d)`` (or ``(...)`` when d = 1).
    """
    values = np.asarray(values)
    d = values.ndim
    n = values.shape[0]
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    s = np.mod(x, 1.0) * n
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    i0 %= n
    i1 = (i0 + 1) % n
    if d == 1:
        return (1 - f[..., 0]) * values[i0[..., 0]] + f[..., 0] * values[i1[..., 0]]
    a, b = f[..., 0], f[..., 1]
    return ((1 - a) * (1 - b) * values[i0[..., 0], i0[..., 1]]
            + a * (1 - b) * values[i1[..., 0], i0[..., 1]]
            + (1 - a) * b * values[i0[..., 0], i1[..., 1]]
            + a * b * values[i1[..., 0], i1[..., 1]])


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def write_field(path, fld: GridField) -> None:
    """Binary layout: ``WKF1``, d and n as uint32, lambda and c as float64,
    then the values as little-endian float64 in C order."""
    lam = float(fld.meta.get("lam", 0.0))
    c = float(fld.meta.get("c", 0.0))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, fld.grid.dim, fld.grid.n, lam, c))
        fh.write(np.ascontiguousarray(fld.values, dtype="<f8").tobytes())


def read_field(path) -> GridField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise GridError(f"{path}: truncated header")
    magic, d, n, lam, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise GridError(f"{path}: bad magic {magic!r}")
    grid = GridSpec(d, n)
    body = raw[_HEADER.size:]
    if len(body) != 8 * grid.size:
        raise GridError(f"{path}: expected {grid.size} values, found {len(body) // 8}")
    vals = np.frombuffer(body, dtype="<f8").astype(float)
    return GridField(grid, vals, {"lam": lam, "c": c})


def write_field_csv(path, fld: GridField) -> None:
    g = fld.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if g.dim == 1:
            w.writerow(["i", "x", "value"])
            for i, v in enumerate(fld.values):
                w.writerow([i, repr(i * g.dx), repr(float(v))])
        else:
            w.writerow(["i", "j", "x", "y", "value"])
            for i in range(g.n):
                for j in range(g.n):
                    w.writerow([i, j, repr(i * g.dx), repr(j * g.dx),
                                repr(float(fld.values[i, j]))])
