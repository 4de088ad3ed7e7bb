"""Uniform Cartesian grids, grid functions, indicator sets, and file I/O.

Everything downstream treats a grid function as piecewise constant on
cells: values live at cell centers, a cell has volume ``h**dim``, and a
non-periodic function is extended by zero outside its box.  This makes
rearrangement an exact permutation of cell values and keeps every L^p
norm exactly permutation invariant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "GridFunction",
    "IndicatorSet",
    "FracParams",
    "FormatError",
    "ShapeMismatchError",
    "NonFiniteError",
    "measure",
    "lp_norm",
    "save",
    "load",
    "to_csv",
]


class FormatError(ValueError):
    """Malformed or unreadable file header."""


class ShapeMismatchError(FormatError):
    """Declared shape does not match the payload length."""


class NonFiniteError(ValueError):
    """NaN or Inf where finite values are required."""


def _as_tuple(x, dim, kind=float):
    if np.isscalar(x):
        return (kind(x),) * dim
    t = tuple(kind(v) for v in x)
    if len(t) != dim:
        raise ValueError(f"expected {dim} entries, got {len(t)}")
    return t


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on a box, optionally periodic.

    ``origin`` is the lower corner of the box; the center of cell ``i``
    along an axis sits at ``origin + (i + 1/2) * spacing``.  Spacing is a
    single scalar shared by all axes.
    """

    dim: int
    shape: tuple
    origin: tuple
    spacing: float
    periodic: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        object.__setattr__(self, "shape", _as_tuple(self.shape, self.dim, int))
        object.__setattr__(self, "origin", _as_tuple(self.origin, self.dim, float))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "periodic", bool(self.periodic))
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if any(n < 2 for n in self.shape):
            raise ValueError("every axis needs at least 2 cells")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def lengths(self) -> tuple:
        return tuple(n * self.spacing for n in self.shape)

    @property
    def center(self) -> tuple:
        """Geometric center of the box (may fall between cells)."""
        return tuple(o + 0.5 * L for o, L in zip(self.origin, self.lengths))

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing

    def coordinates(self) -> list:
        """Cell-center coordinate arrays, one per axis, meshgrid-shaped."""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        if self.dim == 1:
            return axes
        return list(np.meshgrid(*axes, indexing="ij"))

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.shape))


def _frozen_array(values, shape, dtype):
    arr = np.array(values, dtype=dtype)
    if arr.shape != tuple(shape):
        raise ValueError(f"values shape {arr.shape} does not match grid {tuple(shape)}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridFunction:
    """Real-valued function sampled at the cell centers of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, self.grid.shape, np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("grid function values must be finite")
        object.__setattr__(self, "values", arr)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Piecewise-constant evaluation at arbitrary points.

        Points outside the box evaluate to zero (the zero-extension
        convention); on a periodic grid they wrap instead.
        """
        pts = np.asarray(points, dtype=np.float64)
        if self.grid.dim == 1 and pts.ndim >= 1 and pts.shape[-1] != 1:
            pts = pts[..., np.newaxis]
        idx = []
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for a in range(self.grid.dim):
            ia = np.floor((pts[..., a] - self.grid.origin[a]) / self.grid.spacing)
            ia = ia.astype(np.int64)
            if self.grid.periodic:
                ia = np.mod(ia, self.grid.shape[a])
            else:
                inside &= (ia >= 0) & (ia < self.grid.shape[a])
                ia = np.clip(ia, 0, self.grid.shape[a] - 1)
            idx.append(ia)
        out = self.values[tuple(idx)]
        return np.where(inside, out, 0.0)


@dataclass(frozen=True)
class IndicatorSet:
    """Binary mask on a grid representing a measurable set."""

    grid: Grid
    mask: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.mask, self.grid.shape, bool)
        object.__setattr__(self, "mask", arr)

    def to_function(self) -> GridFunction:
        return GridFunction(self.grid, self.mask.astype(np.float64))

    @property
    def cell_count(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class FracParams:
    """Fractional parameters (N, s, p) and the constants derived from them."""

    N: int
    s: float
    p: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be a positive integer")
        if not (0.0 < self.s < 1.0):
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.p < 1.0 or not math.isfinite(self.p):
            raise ValueError(f"p must lie in [1, inf), got {self.p}")

    @property
    def C_Ns(self) -> float:
        """Normalizing constant of the singular-integral fractional Laplacian.

        ``C = 4^s * s * Gamma(N/2 + s) / (pi^(N/2) * Gamma(1 - s))``, the
        unique constant for which the singular integral, the Fourier
        multiplier ``|xi|^(2s)``, and the semigroup realization agree.
        Equivalently ``4^s Gamma(N/2+s) / (pi^(N/2) |Gamma(-s)|)``.
        """
        n, s = self.N, self.s
        return 4.0**s * s * math.gamma(n / 2.0 + s) / (math.pi ** (n / 2.0) * math.gamma(1.0 - s))

    @property
    def omega_N(self) -> float:
        """Volume of the unit ball in dimension N."""
        return math.pi ** (self.N / 2.0) / math.gamma(self.N / 2.0 + 1.0)

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def p_star(self) -> float:
        """Critical Sobolev exponent N p / (N - s p); only defined for sp < N."""
        if self.sp >= self.N:
            raise ValueError(f"p_star undefined: s*p = {self.sp} >= N = {self.N}")
        return self.N * self.p / (self.N - self.sp)

    @property
    def kernel_exponent(self) -> float:
        return self.N + self.sp


def measure(obj) -> float:
    """Discrete Lebesgue measure: (number of true cells) * h^N."""
    if isinstance(obj, IndicatorSet):
        return obj.cell_count * obj.grid.cell_volume
    raise TypeError("measure expects an IndicatorSet")


def lp_norm(u: GridFunction, p) -> float:
    """L^p norm with cell-volume weights; ``p = inf`` gives the max norm."""
    vals = u.values
    if p == np.inf or p == math.inf:
        return float(np.max(np.abs(vals))) if vals.size else 0.0
    p = float(p)
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    hN = u.grid.cell_volume
    return float(np.sum(np.abs(vals) ** p) * hN) ** (1.0 / p)


_HEADER_KEYS = {"kind", "dim", "shape", "origin", "spacing", "periodic"}


def save(obj, path) -> None:
    """Write a GridFunction or IndicatorSet: JSON header line + float64 payload.

    The payload is little-endian, row-major; masks are stored as 0.0/1.0.
    ``load(save(x)) `` round-trips bit-identically.
    """
    if isinstance(obj, GridFunction):
        kind, values = "function", obj.values
        grid = obj.grid
    elif isinstance(obj, IndicatorSet):
        kind, values = "mask", obj.mask.astype(np.float64)
        grid = obj.grid
    else:
        raise TypeError("save expects a GridFunction or IndicatorSet")
    header = {
        "kind": kind,
        "dim": grid.dim,
        "shape": list(grid.shape),
        "origin": list(grid.origin),
        "spacing": grid.spacing,
        "periodic": grid.periodic,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load(path):
    """Read a file written by :func:`save`; returns the matching type."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing header line")
    try:
        header = json.loads(raw[:nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or not _HEADER_KEYS.issubset(header):
        raise FormatError(f"header must carry the fields {sorted(_HEADER_KEYS)}")
    if header["kind"] not in ("function", "mask"):
        raise FormatError(f"unknown kind {header['kind']!r}")
    grid = Grid(
        dim=int(header["dim"]),
        shape=header["shape"],
        origin=header["origin"],
        spacing=header["spacing"],
        periodic=header["periodic"],
    )
    payload = raw[nl + 1 :]
    expected = grid.n_cells * 8
    if len(payload) != expected:
        raise ShapeMismatchError(
            f"shape {grid.shape} needs {expected} payload bytes, file has {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("payload contains non-finite values")
    if header["kind"] == "mask":
        if not np.all((values == 0.0) | (values == 1.0)):
            raise ValueError("mask payload must contain only 0.0 and 1.0")
        return IndicatorSet(grid, values.astype(bool))
    return GridFunction(grid, values.copy())


def to_csv(obj, path) -> None:
    """CSV export: one row per cell, coordinates first, value last."""
    if isinstance(obj, IndicatorSet):
        obj = obj.to_function()
    if not isinstance(obj, GridFunction):
        raise TypeError("to_csv expects a GridFunction or IndicatorSet")
    coords = obj.grid.coordinates()
    names = ["x", "y"][: obj.grid.dim]
    cols = [c.ravel() for c in coords] + [obj.values.ravel()]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(names + ["value"]) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
