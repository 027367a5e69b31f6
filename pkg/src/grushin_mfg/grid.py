"""Truncated space-time lattice and field serialization.

Fields are plain numpy arrays: a spatial field has shape ``(n1, n2)`` with
axis 0 along x1, a time field has shape ``(nt + 1, n1, n2)`` with slice k
at time ``k * dt``. The grid carries the geometry; functions in the solver
modules take ``(grid, values)`` pairs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["Grid", "dump_field_csv", "load_field_csv", "dump_field_binary",
           "load_field_binary"]

_MAGIC = b"GMFG"
_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered lattice on [-L, L]^2 x [0, T].

    dx1 = 2L/n1, dx2 = 2L/n2, dt = T/nt; cell (i, j) is centered at
    (-L + (i + 1/2) dx1, -L + (j + 1/2) dx2).
    """

    L: float
    n1: int
    n2: int
    T: float = 0.0
    nt: int = 0

    def __post_init__(self):
        if self.L <= 0 or self.n1 < 2 or self.n2 < 2:
            raise ValueError("need L > 0 and at least 2 cells per axis")
        if self.nt < 0 or self.T < 0:
            raise ValueError("time extent cannot be negative")

    @property
    def dx1(self) -> float:
        return 2.0 * self.L / self.n1

    @property
    def dx2(self) -> float:
        return 2.0 * self.L / self.n2

    @property
    def dt(self) -> float:
        return self.T / self.nt if self.nt else 0.0

    @property
    def cell_area(self) -> float:
        return self.dx1 * self.dx2

    @property
    def x1(self) -> np.ndarray:
        return -self.L + (np.arange(self.n1) + 0.5) * self.dx1

    @property
    def x2(self) -> np.ndarray:
        return -self.L + (np.arange(self.n2) + 0.5) * self.dx2

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    @property
    def n_cells(self) -> int:
        return self.n1 * self.n2

    def meshgrid(self):
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def points(self) -> np.ndarray:
        """Cell centers as an (n1*n2, 2) array in row-major cell order."""
        return _points_cached(self)

    def spatial(self) -> "Grid":
        """The same spatial lattice with the time axis stripped."""
        return Grid(self.L, self.n1, self.n2)

    def contains(self, p) -> bool:
        x, y = float(p[0]), float(p[1])
        return -self.L <= x <= self.L and -self.L <= y <= self.L

    def cell_of(self, p):
        """Indices of the cell containing point p (clipped to the box edge)."""
        i = int(np.clip((p[0] + self.L) / self.dx1, 0, self.n1 - 1))
        j = int(np.clip((p[1] + self.L) / self.dx2, 0, self.n2 - 1))
        return i, j

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.L, self.n1 * factor, self.n2 * factor, self.T,
                    self.nt * factor if self.nt else 0)


@lru_cache(maxsize=32)
def _points_cached(grid: Grid) -> np.ndarray:
    X1, X2 = grid.meshgrid()
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    pts.setflags(write=False)
    return pts


def _as_time_field(grid, values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    if values.shape[1:] != (grid.n1, grid.n2):
        raise ValueError(f"field shape {values.shape} does not match grid "
                         f"({grid.n1}, {grid.n2})")
    return values


def dump_field_csv(path, grid: Grid, values, times=None):
    """Write ``t,x1,x2,value`` rows in row-major cell order."""
    values = _as_time_field(grid, values)
    if times is None:
        times = grid.times if values.shape[0] == grid.nt + 1 else np.zeros(values.shape[0])
    X1, X2 = grid.meshgrid()
    with open(path, "w") as f:
        f.write("t,x1,x2,value\n")
        for k in range(values.shape[0]):
            t = times[k]
            for x1v, x2v, v in zip(X1.ravel(), X2.ravel(), values[k].ravel()):
                f.write(f"{t:.12g},{x1v:.12g},{x2v:.12g},{v:.17g}\n")


def load_field_csv(path):
    """Read a field CSV back into (times, array of shape (k, n1, n2))."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1)
    times = np.unique(raw[:, 0])
    x1 = np.unique(raw[:, 1])
    x2 = np.unique(raw[:, 2])
    vals = raw[:, 3].reshape(len(times), len(x1), len(x2))
    return times, vals


def dump_field_binary(path, grid: Grid, values):
    """4-byte magic then a 32-byte header (version, n1, n2, nt little-endian
    int32; L, T little-endian float64) followed by raw float64 cell data."""
    values = _as_time_field(grid, values)
    header = _MAGIC + struct.pack("<iiii", _VERSION, grid.n1, grid.n2, grid.nt)
    header += struct.pack("<dd", grid.L, grid.T)
    with open(path, "wb") as f:
        f.write(header)
        f.write(values.astype("<f8").tobytes())


def load_field_binary(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError("not a field dump: bad magic")
        version, n1, n2, nt = struct.unpack("<iiii", f.read(16))
        if version != _VERSION:
            raise ValueError(f"unsupported dump version {version}")
        L, T = struct.unpack("<dd", f.read(16))
        data = np.frombuffer(f.read(), dtype="<f8")
    grid = Grid(L, n1, n2, T, nt)
    return grid, data.reshape(-1, n1, n2)
