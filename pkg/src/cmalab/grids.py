"""Uniform grids on flat tori, boxes and torus x [0, 1], plus field containers and dumps."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import PreconditionError

MAGIC = b"CMAF"
FORMAT_VERSION = 1
KIND_CODES = {"torus": 0, "box": 1, "product": 2}
MIN_TORUS_RESOLUTION = 8


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    resolution: int
    periodic: bool

    @property
    def spacing(self) -> float:
        if self.periodic:
            return (self.hi - self.lo) / self.resolution
        return (self.hi - self.lo) / (self.resolution - 1)

    @property
    def coords(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.resolution)


class Grid:
    """Tensor-product grid of real axes grouped into complex coordinates.

    ``pairs[k] = (ix, iy)`` names the real axes carrying Re z_k and Im z_k;
    ``iy`` may be None for a coordinate whose imaginary direction is suppressed
    (functions are then constant along it).
    """

    kind = "grid"

    def __init__(self, axes: Sequence[Axis], pairs: Sequence[tuple[int, int | None]]):
        self.axes = tuple(axes)
        self.pairs = tuple(pairs)

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.resolution for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(a.coords for a in self.axes), indexing="ij"))

    @cached_property
    def z(self) -> np.ndarray:
        """Complex coordinates, shape ``(n,) + shape``."""
        out = []
        for ix, iy in self.pairs:
            y = self.mesh[iy] if iy is not None else 0.0
            out.append(self.mesh[ix] + 1j * y)
        return np.array(out)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for a, ax in enumerate(self.axes):
            if ax.periodic:
                continue
            sl = [slice(None)] * self.ndim
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = -1
            mask[tuple(sl)] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def near_boundary_mask(self) -> np.ndarray:
        """Interior points with a boundary point among their axis neighbours."""
        mask = np.zeros(self.shape, dtype=bool)
        b = self.boundary_mask
        for a, ax in enumerate(self.axes):
            if ax.periodic:
                continue
            mask |= np.roll(b, 1, a) | np.roll(b, -1, a)
        return mask & self.interior_mask

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "resolution": list(self.shape),
            "lo": [a.lo for a in self.axes],
            "hi": [a.hi for a in self.axes],
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.kind == other.kind and self.axes == other.axes \
            and self.pairs == other.pairs

    def __hash__(self) -> int:
        return hash((self.kind, self.axes, self.pairs))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, shape={self.shape})"


class TorusGrid(Grid):
    """C^n / Lambda for a rectangular lattice; axis order x1, y1, x2, y2, ..."""

    kind = "torus"

    def __init__(self, n: int, periods: Sequence[float] | float, resolution: Sequence[int] | int,
                 origin: Sequence[float] | float = 0.0):
        periods = _expand(periods, 2 * n, float)
        resolution = _expand(resolution, 2 * n, int)
        origin = _expand(origin, 2 * n, float)
        if any(p <= 0 for p in periods):
            raise ValueError("periods must be positive")
        if any(r < MIN_TORUS_RESOLUTION for r in resolution):
            raise ValueError(f"torus resolution must be >= {MIN_TORUS_RESOLUTION} per axis")
        axes = [Axis(o, o + p, r, True) for o, p, r in zip(origin, periods, resolution)]
        super().__init__(axes, [(2 * k, 2 * k + 1) for k in range(n)])

    @property
    def periods(self) -> tuple[float, ...]:
        return tuple(a.hi - a.lo for a in self.axes)

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))


class BoxGrid(Grid):
    """Product of closed intervals in C^n; resolution counts points including both ends."""

    kind = "box"

    def __init__(self, n: int, bounds: Sequence[tuple[float, float]], resolution: Sequence[int] | int):
        bounds = list(bounds)
        if len(bounds) != 2 * n:
            raise ValueError("need one (lo, hi) interval per real axis")
        resolution = _expand(resolution, 2 * n, int)
        if any(r < 3 for r in resolution):
            raise ValueError("box resolution must be >= 3 per axis")
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError("empty interval")
        axes = [Axis(float(lo), float(hi), r, False) for (lo, hi), r in zip(bounds, resolution)]
        super().__init__(axes, [(2 * k, 2 * k + 1) for k in range(n)])

    @property
    def bounds(self) -> list[tuple[float, float]]:
        return [(a.lo, a.hi) for a in self.axes]


class ProductGrid(Grid):
    """Base torus times t in [0, 1]; the extra complex coordinate is w = t + i s with s suppressed."""

    kind = "product"

    def __init__(self, base: TorusGrid, t_resolution: int):
        if t_resolution < 2:
            raise ValueError("t_resolution must be >= 2")
        self.base = base
        self.t_resolution = t_resolution
        axes = list(base.axes) + [Axis(0.0, 1.0, t_resolution + 1, False)]
        super().__init__(axes, list(base.pairs) + [(base.ndim, None)])

    @property
    def t(self) -> np.ndarray:
        return self.axes[-1].coords


def _expand(value, count: int, typ):
    if np.isscalar(value):
        return [typ(value)] * count
    value = [typ(v) for v in value]
    if len(value) != count:
        raise ValueError(f"expected {count} values, got {len(value)}")
    return value


class NonPeriodicError(PreconditionError):
    """A function sampled on a torus is not periodic."""


class ScalarField:
    """Real values on every grid point."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            values = values.reshape(grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid: Grid, f: Callable[..., np.ndarray], periodic_tol: float = 1e-9) -> ScalarField:
        """Sample ``f(*mesh)``; on periodic axes, reject functions that do not repeat."""
        vals = np.broadcast_to(np.asarray(f(*grid.mesh), dtype=float), grid.shape).copy()
        for a, ax in enumerate(grid.axes):
            if not ax.periodic:
                continue
            shifted = list(grid.mesh)
            shifted[a] = shifted[a] + (ax.hi - ax.lo)
            other = np.broadcast_to(np.asarray(f(*shifted), dtype=float), grid.shape)
            if np.abs(other - vals).max() > periodic_tol * max(1.0, np.abs(vals).max()):
                raise NonPeriodicError(f"function is not periodic along axis {a}")
        return cls(grid, vals)

    @classmethod
    def zeros(cls, grid: Grid) -> ScalarField:
        return cls(grid, np.zeros(grid.shape))

    def copy(self) -> ScalarField:
        return ScalarField(self.grid, self.values.copy())

    def __repr__(self) -> str:
        return f"ScalarField({self.grid!r})"


class Form11Field:
    """Per-point Hermitian n x n matrices (a real (1,1)-form in coordinates)."""

    def __init__(self, grid: Grid, values, valid: np.ndarray | None = None, check: bool = True):
        values = np.asarray(values, dtype=complex)
        n = grid.n
        if values.shape == (n, n):
            values = np.broadcast_to(values, grid.shape + (n, n)).copy()
        if values.shape != grid.shape + (n, n):
            raise ValueError("form values must have shape grid.shape + (n, n)")
        if check and np.any(values != np.conj(np.swapaxes(values, -1, -2))):
            raise ValueError("form values must be exactly Hermitian")
        self.grid = grid
        self.values = values
        self.valid = np.ones(grid.shape, dtype=bool) if valid is None else valid

    @classmethod
    def identity(cls, grid: Grid) -> Form11Field:
        return cls(grid, np.eye(grid.n))

    @classmethod
    def constant(cls, grid: Grid, matrix) -> Form11Field:
        return cls(grid, np.asarray(matrix))

    def det(self) -> np.ndarray:
        return np.linalg.det(self.values).real

    def __add__(self, other: Form11Field) -> Form11Field:
        return Form11Field(self.grid, self.values + other.values, self.valid & other.valid, check=False)


# --- binary and CSV dumps ---------------------------------------------------

def write_field(path, field: ScalarField) -> None:
    """Write ``field`` in the CMAF binary format (all little-endian).

    Header: b"CMAF", u32 version, u32 grid kind (0 torus, 1 box, 2 product),
    u32 n, u32 number of real axes d, d x u32 resolutions, d x f64 lower
    bounds, d x f64 upper bounds (for periodic axes hi - lo is the period).
    Payload: row-major f64 values, last real axis fastest.
    """
    g = field.grid
    d = g.ndim
    head = MAGIC + struct.pack("<IIII", FORMAT_VERSION, KIND_CODES[g.kind], g.n, d)
    head += struct.pack(f"<{d}I", *g.shape)
    head += struct.pack(f"<{d}d", *(a.lo for a in g.axes))
    head += struct.pack(f"<{d}d", *(a.hi for a in g.axes))
    Path(path).write_bytes(head + np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> tuple[dict, np.ndarray]:
    """Read a CMAF dump; returns (header dict, values array)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a CMAF field dump")
    version, kind, n, d = struct.unpack_from("<IIII", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported CMAF version {version}")
    off = 20
    shape = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    lo = struct.unpack_from(f"<{d}d", raw, off)
    off += 8 * d
    hi = struct.unpack_from(f"<{d}d", raw, off)
    off += 8 * d
    values = np.frombuffer(raw, dtype="<f8", offset=off).reshape(shape).copy()
    kinds = {v: k for k, v in KIND_CODES.items()}
    header = {"kind": kinds[kind], "n": n, "resolution": list(shape), "lo": list(lo), "hi": list(hi)}
    return header, values


def write_csv(path, field: ScalarField) -> None:
    g = field.grid
    names = []
    for k, (ix, iy) in enumerate(g.pairs):
        names.append(f"x{k + 1}" if iy is not None or g.kind != "product" or k < g.n - 1 else "t")
        if iy is not None:
            names.append(f"y{k + 1}")
    cols = [m.ravel() for m in g.mesh]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["value"])
        for row in zip(*cols, field.values.ravel()):
            w.writerow([repr(float(v)) for v in row])
