"""Mask and grid constructors for the built-in test shapes."""

from __future__ import annotations

import math

import numpy as np

from .grid import Grid, IndicatorSet
from .rearrange import cell_ranking

__all__ = [
    "make_grid",
    "interval",
    "intervals",
    "disk",
    "square",
    "rectangle",
    "lshape",
    "ellipse",
    "dumbbell",
    "ranked_ball",
]


def make_grid(dim: int, h: float, box, periodic: bool = False) -> Grid:
    """Grid covering ``box`` = (lo, hi) per axis with spacing h.

    The upper edge is rounded outward so the box is fully covered.
    """
    if dim == 1 and np.isscalar(box[0]):
        box = (box,)
    shape, origin = [], []
    for lo, hi in box:
        n = int(round((hi - lo) / h))
        if abs(n * h - (hi - lo)) > 1e-9 * h:
            n = int(math.ceil((hi - lo) / h - 1e-12))
        shape.append(n)
        origin.append(lo)
    return Grid(dim=dim, shape=tuple(shape), origin=tuple(origin),
                spacing=h, periodic=periodic)


def interval(grid: Grid, a: float, b: float) -> IndicatorSet:
    x = grid.axis_centers(0)
    return IndicatorSet(grid, (x > a) & (x < b))


def intervals(grid: Grid, pieces) -> IndicatorSet:
    x = grid.axis_centers(0)
    mask = np.zeros(grid.shape, dtype=bool)
    for a, b in pieces:
        mask |= (x > a) & (x < b)
    return IndicatorSet(grid, mask)


def _coords(grid: Grid):
    if grid.dim != 2:
        raise ValueError("this shape needs a 2D grid")
    return grid.coordinates()


def disk(grid: Grid, radius: float, center=(0.0, 0.0)) -> IndicatorSet:
    X, Y = _coords(grid)
    return IndicatorSet(grid, (X - center[0]) ** 2 + (Y - center[1]) ** 2 < radius**2)


def square(grid: Grid, side: float, center=(0.0, 0.0)) -> IndicatorSet:
    X, Y = _coords(grid)
    return IndicatorSet(
        grid, (np.abs(X - center[0]) < side / 2) & (np.abs(Y - center[1]) < side / 2)
    )


def rectangle(grid: Grid, width: float, height: float, center=(0.0, 0.0)) -> IndicatorSet:
    X, Y = _coords(grid)
    return IndicatorSet(
        grid, (np.abs(X - center[0]) < width / 2) & (np.abs(Y - center[1]) < height / 2)
    )


def lshape(grid: Grid, size: float, center=(0.0, 0.0)) -> IndicatorSet:
    """L-shaped region: a square with its upper-right quadrant removed."""
    X, Y = _coords(grid)
    x, y = X - center[0], Y - center[1]
    full = (np.abs(x) < size / 2) & (np.abs(y) < size / 2)
    notch = (x > 0) & (y > 0)
    return IndicatorSet(grid, full & ~notch)


def ellipse(grid: Grid, a: float, b: float, center=(0.0, 0.0)) -> IndicatorSet:
    X, Y = _coords(grid)
    return IndicatorSet(
        grid, ((X - center[0]) / a) ** 2 + ((Y - center[1]) / b) ** 2 < 1.0
    )


def dumbbell(grid: Grid, radius: float, separation: float,
             neck: float) -> IndicatorSet:
    """Two disks of the given radius joined by a rectangular neck."""
    X, Y = _coords(grid)
    left = (X + separation / 2) ** 2 + Y**2 < radius**2
    right = (X - separation / 2) ** 2 + Y**2 < radius**2
    bar = (np.abs(X) < separation / 2) & (np.abs(Y) < neck / 2)
    return IndicatorSet(grid, left | right | bar)


def ranked_ball(grid: Grid, cell_count: int) -> IndicatorSet:
    """Centered quasi-ball holding exactly ``cell_count`` cells."""
    order = cell_ranking(grid)
    mask = np.zeros(grid.n_cells, dtype=bool)
    mask[order[:cell_count]] = True
    return IndicatorSet(grid, mask.reshape(grid.shape))
