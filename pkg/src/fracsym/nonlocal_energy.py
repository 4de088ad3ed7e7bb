"""Singular-kernel double-sum energies on grids.

The central object is an offset-indexed kernel table: on a uniform grid
the kernel value between two cells depends only on the index offset, so
every double sum over cell pairs collapses to a contraction of the
table against per-offset difference statistics.  Three quadrature
refinements keep the midpoint rule honest near the kernel singularity
and at the box boundary:

* offsets with ``max|delta| <= 2`` use the kernel averaged over one
  level of 4-per-axis cell subdivision (the exact-coincidence subpair
  cannot occur for distinct cells and is guarded against anyway);
* for zero-extended (non-periodic) functions the interaction with the
  complement of the box is added in closed form in 1D and by an
  exact-in-radius angular quadrature in 2D;
* on periodic grids the kernel is evaluated at the minimum-image
  displacement and truncated there (no image sums).

Sums are reduced with numpy's pairwise summation in a fixed offset
order; the optional thread pool (``FRACSYM_THREADS``) splits the offset
list into fixed chunks, so results are independent of thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .grid import FracParams, Grid, GridFunction, IndicatorSet
from .quadrature import QuadratureSpec, TruncationError

__all__ = [
    "KernelSpec",
    "EnergyReport",
    "gagliardo_seminorm",
    "fractional_perimeter",
    "heat_slice_energy",
    "subordinated_seminorm",
    "subordination_constant",
    "riesz_triple",
    "riesz_fractional_gradient",
    "riesz_dirichlet_energy",
    "riesz_calibration",
    "kernel_offset_table",
    "exterior_cell_weights",
    "pair_power_sum",
]

_NEAR_RADIUS = 2       # offsets refined by subcell averaging, in max-norm
_ANGULAR_NODES = 720   # angular resolution of the 2D exterior quadrature


def thread_count() -> int:
    """Worker threads for offset loops; FRACSYM_THREADS, 0 = auto."""
    raw = os.environ.get("FRACSYM_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        return 1
    if k == 0:
        return min(8, os.cpu_count() or 1)
    return max(1, k)


# ---------------------------------------------------------------------------
# kernel specification


def _euclidean(z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(z * z, axis=-1))


def _lq_norm(q: float):
    if q == np.inf:
        return lambda z: np.max(np.abs(z), axis=-1)
    if q < 1:
        raise ValueError("lq kernels need q >= 1")

    def norm(z):
        return np.sum(np.abs(z) ** q, axis=-1) ** (1.0 / q)

    return norm


def _matrix_norm(mat: np.ndarray):
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix kernel needs a square matrix")
    if not np.allclose(mat, mat.T):
        raise ValueError("matrix kernel needs a symmetric matrix")
    if np.any(np.linalg.eigvalsh(mat) <= 0):
        raise ValueError("matrix kernel needs a positive definite matrix")

    def norm(z):
        return np.sqrt(np.einsum("...i,ij,...j->...", z, mat, z))

    return norm


@dataclass(frozen=True)
class KernelSpec:
    """Interaction kernel ``K(z) = norm(z)**(-exponent)``.

    ``norm`` must behave like a norm: positively 1-homogeneous, even,
    and positive away from the origin (spot checked on probe vectors).
    ``token`` is a hashable identity used to cache offset tables; custom
    evaluators carry ``token=None`` and are rebuilt per call.
    """

    kind: str
    exponent: float
    norm: object = None
    token: tuple = ("iso",)

    @classmethod
    def isotropic(cls, exponent: float) -> "KernelSpec":
        return cls(kind="isotropic", exponent=float(exponent))

    @classmethod
    def lq(cls, q: float, exponent: float) -> "KernelSpec":
        return cls(kind="anisotropic", exponent=float(exponent),
                   norm=_lq_norm(float(q)), token=("lq", float(q)))

    @classmethod
    def matrix(cls, mat, exponent: float) -> "KernelSpec":
        mat = np.asarray(mat, dtype=np.float64)
        return cls(kind="anisotropic", exponent=float(exponent),
                   norm=_matrix_norm(mat), token=("mat", mat.tobytes(), mat.shape))

    @classmethod
    def custom(cls, norm, exponent: float) -> "KernelSpec":
        return cls(kind="anisotropic", exponent=float(exponent), norm=norm, token=None)

    def norm_fn(self):
        return self.norm if self.norm is not None else _euclidean

    def validate(self, dim: int) -> None:
        rng = np.random.default_rng(12345)
        probes = rng.standard_normal((16, dim))
        norm = self.norm_fn()
        n1 = np.asarray(norm(probes), dtype=np.float64)
        n2 = np.asarray(norm(2.0 * probes), dtype=np.float64)
        nm = np.asarray(norm(-probes), dtype=np.float64)
        if np.any(n1 <= 0):
            raise ValueError("kernel norm must be positive away from the origin")
        if np.max(np.abs(n2 - 2.0 * n1) / n1) > 1e-12:
            raise ValueError("kernel norm is not 1-homogeneous")
        if np.max(np.abs(nm - n1) / n1) > 1e-12:
            raise ValueError("kernel norm is not symmetric")


@dataclass(frozen=True)
class EnergyReport:
    """Energy value plus quadrature diagnostics.

    ``near_diagonal_fraction`` is the share of the p-th power sum coming
    from the refined near-diagonal offsets, ``tail_fraction`` the share
    contributed by the analytic exterior (zero-extension) term.
    """

    value: float
    near_diagonal_fraction: float
    pair_count: int
    tail_fraction: float = 0.0


# ---------------------------------------------------------------------------
# offset geometry and kernel tables

_SUB_OFFSETS = np.array([-3.0, -1.0, 1.0, 3.0]) / 8.0  # subcell centers, units of h
_SUB_DIFFS = np.array([-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75])
_SUB_WEIGHTS = np.array([1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0]) / 16.0


def _offset_axes(grid: Grid):
    """Per-axis signed cell offsets of the table layout.

    Non-periodic tables cover offsets ``-(n-1) .. n-1`` per axis;
    periodic tables cover the ``n`` offset classes with minimum-image
    signed representatives.
    """
    axes = []
    for n in grid.shape:
        if grid.periodic:
            o = np.arange(n)
            axes.append(((o + n // 2) % n) - n // 2)
        else:
            axes.append(np.arange(-(n - 1), n))
    return axes


def _offset_grids(grid: Grid):
    axes = _offset_axes(grid)
    if grid.dim == 1:
        return [axes[0].astype(np.float64)]
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return [g0.astype(np.float64), g1.astype(np.float64)]


def offset_distance2(grid: Grid) -> np.ndarray:
    """Squared physical displacement for every table offset."""
    comps = _offset_grids(grid)
    d2 = sum(c * c for c in comps) * grid.spacing**2
    return d2


def _center_index(grid: Grid):
    if grid.periodic:
        return (0,) * grid.dim
    return tuple(n - 1 for n in grid.shape)


def kernel_offset_table(grid: Grid, kernel: KernelSpec, refine: bool = True):
    """Offset-indexed kernel table with near-diagonal subcell averaging.

    Returns ``(table, near_mask)``.  The zero offset is set to 0 (cells
    never interact with themselves: the integrand vanishes there for
    piecewise-constant functions).
    """
    kernel.validate(grid.dim)
    norm = kernel.norm_fn()
    h = grid.spacing
    comps = _offset_grids(grid)
    disp = np.stack([c * h for c in comps], axis=-1)
    dist = np.asarray(norm(disp), dtype=np.float64)
    center = _center_index(grid)
    dist[center] = 1.0  # placeholder, zeroed below
    if np.any(dist <= 0):
        raise ValueError("kernel norm produced non-positive values off the origin")
    table = dist ** (-kernel.exponent)

    near_mask = np.ones(table.shape, dtype=bool)
    for c in comps:
        near_mask &= np.abs(c) <= _NEAR_RADIUS
    near_mask[center] = False

    if refine:
        idx = np.argwhere(near_mask)
        base = disp[tuple(idx.T)]  # (m, dim) displacements
        if grid.dim == 1:
            deltas = (_SUB_DIFFS * h)[:, None]
            weights = _SUB_WEIGHTS
        else:
            d0, d1 = np.meshgrid(_SUB_DIFFS * h, _SUB_DIFFS * h, indexing="ij")
            deltas = np.stack([d0.ravel(), d1.ravel()], axis=-1)
            weights = np.outer(_SUB_WEIGHTS, _SUB_WEIGHTS).ravel()
        pts = base[:, None, :] + deltas[None, :, :]
        r = np.asarray(norm(pts), dtype=np.float64)
        if np.any(r <= 0):  # coincident subpair: cannot happen for distinct cells
            raise ValueError("subcell refinement hit a zero displacement")
        refined = (r ** (-kernel.exponent)) @ weights
        table[tuple(idx.T)] = refined

    table[center] = 0.0
    return table, near_mask


_TABLE_CACHE: dict = {}
_TABLE_CACHE_MAX = 32


def _cached_table(grid: Grid, kernel: KernelSpec, refine: bool = True):
    if kernel.token is None:
        return kernel_offset_table(grid, kernel, refine)
    key = (grid.shape, grid.origin, grid.spacing, grid.periodic,
           kernel.exponent, kernel.token, refine)
    hit = _TABLE_CACHE.get(key)
    if hit is None:
        if len(_TABLE_CACHE) >= _TABLE_CACHE_MAX:
            _TABLE_CACHE.pop(next(iter(_TABLE_CACHE)))
        hit = kernel_offset_table(grid, kernel, refine)
        _TABLE_CACHE[key] = hit
    return hit


# ---------------------------------------------------------------------------
# exterior (zero-extension) tail


def _ray_exit_distance(points: np.ndarray, grid: Grid, theta: np.ndarray) -> np.ndarray:
    """Distance from interior points to the box boundary along angles theta."""
    a = np.array(grid.origin)
    b = a + np.array(grid.lengths)
    c, s = np.cos(theta), np.sin(theta)
    out = np.full((theta.size, points.shape[0]), np.inf)
    for axis, trig in ((0, c), (1, s)):
        with np.errstate(divide="ignore"):
            hi = (b[axis] - points[:, axis])[None, :] / trig[:, None]
            lo = (a[axis] - points[:, axis])[None, :] / trig[:, None]
        t = np.where(trig[:, None] > 0, hi, np.where(trig[:, None] < 0, lo, np.inf))
        out = np.minimum(out, t)
    return out


def exterior_cell_weights(grid: Grid, kernel: KernelSpec) -> np.ndarray:
    """Per-cell weight of the interaction with the box complement.

    Entry ``i`` approximates ``int_{cell_i} int_{box^c} K(x-y) dy dx``:
    exact in 1D (closed-form double integral), exact in the radial
    variable with an angular midpoint rule in 2D.  For ``alpha >= 1``
    the exact integral diverges on the cells touching the box boundary;
    those fall back to the midpoint value (box adequacy is the caller's
    responsibility, so boundary cells are expected to carry ~0 mass).
    """
    if grid.periodic:
        raise ValueError("exterior weights only make sense for non-periodic grids")
    norm = kernel.norm_fn()
    alpha = kernel.exponent - grid.dim
    if alpha <= 0:
        raise ValueError("kernel exponent must exceed the dimension")
    h = grid.spacing
    if grid.dim == 1:
        a, b = grid.origin[0], grid.origin[0] + grid.lengths[0]
        nu = float(np.asarray(norm(np.array([[1.0]]))))
        edges = a + np.arange(grid.shape[0] + 1) * h
        x1, x2 = edges[:-1], edges[1:]

        def cell_int(dist1, dist2):
            # integral over a cell of dist**(-alpha), dist2 > dist1 >= 0
            with np.errstate(divide="ignore"):
                if alpha == 1.0:
                    out = np.log(dist2 / dist1)
                else:
                    out = (dist2 ** (1.0 - alpha) - dist1 ** (1.0 - alpha)) / (1.0 - alpha)
            # boundary cell: exact value when it converges, midpoint otherwise
            boundary = (0.5 * (dist1 + dist2)) ** (-alpha) * (dist2 - dist1)
            if alpha < 1.0:
                boundary = dist2 ** (1.0 - alpha) / (1.0 - alpha)
            return np.where(dist1 > 0, out, boundary)

        left = cell_int(x1 - a, x2 - a)
        right = cell_int(b - x2, b - x1)
        return (left + right) * nu ** (-kernel.exponent) / alpha

    theta = (np.arange(_ANGULAR_NODES) + 0.5) * (2.0 * np.pi / _ANGULAR_NODES)
    dtheta = 2.0 * np.pi / _ANGULAR_NODES
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    nu = np.asarray(norm(dirs), dtype=np.float64)  # per-angle directional norm
    xs, ys = grid.coordinates()
    pts = np.stack([xs.ravel(), ys.ravel()], axis=-1)
    total = np.zeros(pts.shape[0])
    chunk = 90
    for k0 in range(0, theta.size, chunk):
        sl = slice(k0, k0 + chunk)
        rho = _ray_exit_distance(pts, grid, theta[sl])
        total += (nu[sl, None] ** (-kernel.exponent) * rho ** (-alpha)).sum(axis=0)
    total *= dtheta / alpha
    return (total * grid.cell_volume).reshape(grid.shape)


# ---------------------------------------------------------------------------
# pair sums


def _chunks(seq, size):
    return [seq[k : k + size] for k in range(0, len(seq), size)]


def _run_chunked(jobs, worker):
    """Apply worker to chunks in a fixed order; thread count never changes results."""
    nthreads = thread_count()
    chunks = _chunks(jobs, max(1, len(jobs) // max(1, 4 * nthreads)))
    if nthreads == 1 or len(chunks) == 1:
        parts = [worker(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            parts = list(pool.map(worker, chunks))
    return [p for part in parts for p in part]


def _loop_sum_1d(values: np.ndarray, table: np.ndarray, p: float, periodic: bool):
    n = values.size
    offsets = list(range(1, n))

    def worker(offs):
        out = []
        for o in offs:
            if periodic:
                d = np.abs(values - np.roll(values, -o))
                out.append(table[o] * float(np.sum(d**p)))
            else:
                d = np.abs(values[: n - o] - values[o:])
                out.append(2.0 * table[n - 1 + o] * float(np.sum(d**p)))
        return out

    return float(np.sum(_run_chunked(offsets, worker)))


def _loop_sum_2d(values: np.ndarray, table: np.ndarray, p: float, periodic: bool):
    n0, n1 = values.shape
    if periodic:
        i1 = np.arange(n1)
        class_idx = (i1[None, :] - i1[:, None]) % n1   # class of j1 - i1
        da_list = list(range(n0))
    else:
        i1 = np.arange(n1)
        class_idx = (i1[:, None] - i1[None, :]) + n1 - 1  # offset i1 - j1
        da_list = list(range(n0))
    row_block = max(1, 4_000_000 // (n1 * n1))

    def worker(das):
        out = []
        for da in das:
            if periodic:
                kmat = table[da][class_idx]
                rolled = np.roll(values, -da, axis=0)
                acc = 0.0
                for r0 in range(0, n0, row_block):
                    av = values[r0 : r0 + row_block]
                    bv = rolled[r0 : r0 + row_block]
                    d = np.abs(av[:, :, None] - bv[:, None, :]) ** p
                    acc += float(np.einsum("rij,ij->", d, kmat))
                out.append(acc)
            else:
                kmat = table[n0 - 1 + da][class_idx]
                w = 1.0 if da == 0 else 2.0
                acc = 0.0
                for r0 in range(0, n0 - da, row_block):
                    r1 = min(r0 + row_block, n0 - da)
                    av = values[r0:r1]
                    bv = values[r0 + da : r1 + da]
                    d = np.abs(av[:, :, None] - bv[:, None, :]) ** p
                    acc += float(np.einsum("rij,ij->", d, kmat))
                out.append(w * acc)
        return out

    return float(np.sum(_run_chunked(da_list, worker)))


def _conv_same(table: np.ndarray, arr: np.ndarray, periodic: bool) -> np.ndarray:
    """(K * arr)_i = sum_j table[i - j] arr_j under the table layout."""
    if periodic:
        return np.real(np.fft.ifftn(np.fft.fftn(table) * np.fft.fftn(arr)))
    return fftconvolve(table, arr, mode="valid")


def _fft_sum(values: np.ndarray, table: np.ndarray, periodic: bool):
    """sum_{i != j} (u_i - u_j)^2 K_{i-j}; also exact for |.|^1 on 0/1 data."""
    ones = np.ones_like(values)
    s = _conv_same(table, ones, periodic)
    ku = _conv_same(table, values, periodic)
    return 2.0 * float(np.sum(values * values * s) - np.sum(values * ku))


def pair_power_sum(values: np.ndarray, grid: Grid, table: np.ndarray, p: float) -> float:
    """Raw double sum ``sum_{i != j} |u_i - u_j|^p table[i-j]`` (no h factors).

    Uses the FFT identity for p = 2 and for p = 1 on 0/1 data, the
    offset loop otherwise.
    """
    binary = p == 1.0 and np.all((values == 0.0) | (values == 1.0))
    if p == 2.0 or binary:
        return _fft_sum(values, table, grid.periodic)
    if grid.dim == 1:
        return _loop_sum_1d(values, table, p, grid.periodic)
    return _loop_sum_2d(values, table, p, grid.periodic)


def _near_table(table: np.ndarray, near_mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(table)
    out[near_mask] = table[near_mask]
    return out


def _tail_power_sum(u: GridFunction, kernel: KernelSpec, p: float) -> float:
    """Zero-extension tail: 2 sum_i |u_i|^p * (cell x box-complement weight)."""
    if u.grid.periodic:
        return 0.0
    weights = exterior_cell_weights(u.grid, kernel)
    vals = np.abs(u.values) ** p
    return 2.0 * float(np.sum(vals * weights))


def gagliardo_seminorm(u: GridFunction, params: FracParams,
                       kernel: KernelSpec | None = None) -> EnergyReport:
    """Gagliardo seminorm ``[u]_{W^{s,p}}`` (isotropic or anisotropic kernel).

    Non-periodic functions are zero-extended outside their box; periodic
    ones interact through minimum-image displacements only.
    """
    if params.N != u.grid.dim:
        raise ValueError(f"params.N = {params.N} but grid dim = {u.grid.dim}")
    if kernel is None:
        kernel = KernelSpec.isotropic(params.kernel_exponent)
    elif abs(kernel.exponent - params.kernel_exponent) > 1e-12 * params.kernel_exponent:
        raise ValueError("kernel exponent does not match N + s*p")
    table, near_mask = _cached_table(u.grid, kernel)
    h2n = u.grid.cell_volume**2
    pair = pair_power_sum(u.values, u.grid, table, params.p) * h2n
    near = pair_power_sum(u.values, u.grid, _near_table(table, near_mask), params.p) * h2n
    tail = _tail_power_sum(u, kernel, params.p)
    total = pair + tail
    n_tot = u.grid.n_cells
    return EnergyReport(
        value=total ** (1.0 / params.p) if total > 0 else 0.0,
        near_diagonal_fraction=near / total if total > 0 else 0.0,
        pair_count=n_tot * n_tot - n_tot,
        tail_fraction=tail / total if total > 0 else 0.0,
    )


def fractional_perimeter(E: IndicatorSet, s: float) -> float:
    """Fractional perimeter: half the W^{s,1} seminorm of the indicator."""
    if not (0.0 < s < 1.0):
        raise ValueError(f"s must lie in (0, 1), got {s}")
    params = FracParams(N=E.grid.dim, s=s, p=1.0)
    return 0.5 * gagliardo_seminorm(E.to_function(), params).value


def heat_slice_energy(u: GridFunction, t: float, p: float) -> float:
    """Gaussian-kernel slice ``I_t[u] = sum |u_i-u_j|^p exp(-t |x_i-x_j|^2) h^{2N}``.

    The kernel is smooth, so no near-diagonal refinement is applied; the
    box must be large enough that exterior interactions are negligible.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if p < 1:
        raise ValueError("p must be >= 1")
    table = np.exp(-t * offset_distance2(u.grid))
    table[_center_index(u.grid)] = 0.0
    return pair_power_sum(u.values, u.grid, table, p) * u.grid.cell_volume**2


def subordination_constant(N: int, s: float, p: float) -> float:
    """Closed form of ``|z|^{N+sp} * int_0^inf G_t(z) t^{-1-sp/2} dt``.

    Evaluates to ``2^{sp} Gamma((N+sp)/2) / pi^{N/2}``; the same Gamma
    integral converts the Gaussian-slice representation back into the
    power kernel.
    """
    sp = s * p
    return 2.0**sp * math.gamma((N + sp) / 2.0) / math.pi ** (N / 2.0)


def _offset_profile(u: GridFunction, p: float):
    """Difference statistics per offset: ``c_o = sum_i |u_i - u_{i+o}|^p``.

    Offsets inside the near-diagonal radius are expanded over the
    subcell displacement distribution, so a Gaussian-mixture evaluation
    of the profile reproduces the refined kernel table exactly.
    Returns flat arrays (squared displacement, weight).
    """
    vals = u.values
    grid = u.grid
    h = grid.spacing
    d2, c = [], []

    def push(delta, weight):
        # delta: signed cell offset vector; weight: accumulated |du|^p mass
        if weight == 0.0:
            return
        if max(abs(d) for d in delta) <= _NEAR_RADIUS:
            base = np.array(delta, dtype=np.float64) * h
            if grid.dim == 1:
                sub = base[0] + _SUB_DIFFS * h
                d2.extend(sub * sub)
                c.extend(weight * _SUB_WEIGHTS)
            else:
                s0 = base[0] + _SUB_DIFFS * h
                s1 = base[1] + _SUB_DIFFS * h
                dd = (s0 * s0)[:, None] + (s1 * s1)[None, :]
                ww = np.outer(_SUB_WEIGHTS, _SUB_WEIGHTS)
                d2.extend(dd.ravel())
                c.extend(weight * ww.ravel())
        else:
            d2.append(float(sum((d * h) ** 2 for d in delta)))
            c.append(weight)

    if grid.dim == 1:
        n = vals.size
        for o in range(1, n):
            if grid.periodic:
                delta = ((o + n // 2) % n) - n // 2
                push((delta,), float(np.sum(np.abs(vals - np.roll(vals, -o)) ** p)))
            else:
                push((o,), 2.0 * float(np.sum(np.abs(vals[: n - o] - vals[o:]) ** p)))
        return np.array(d2), np.array(c)

    n0, n1 = vals.shape
    if grid.periodic:
        for da in range(n0):
            ra = np.roll(vals, -da, axis=0)
            dda = ((da + n0 // 2) % n0) - n0 // 2
            for db in range(n1):
                if da == 0 and db == 0:
                    continue
                ddb = ((db + n1 // 2) % n1) - n1 // 2
                diff = np.abs(vals - np.roll(ra, -db, axis=1))
                push((dda, ddb), float(np.sum(diff**p)))
    else:
        for da in range(n0):
            av, bv = vals[: n0 - da], vals[da:]
            for db in range(-(n1 - 1), n1):
                if da == 0 and db <= 0:
                    continue
                if db >= 0:
                    diff = np.abs(av[:, : n1 - db] - bv[:, db:])
                else:
                    diff = np.abs(av[:, -db:] - bv[:, : n1 + db])
                push((da, db), 2.0 * float(np.sum(diff**p)))
    return np.array(d2), np.array(c)


def subordinated_seminorm(u: GridFunction, params: FracParams,
                          t_quadrature: QuadratureSpec | None = None) -> float:
    """Gagliardo seminorm through the Gaussian-slice time integral.

    ``[u]^p = int_0^inf I_t[u] t^{(N+sp)/2 - 1} dt / Gamma((N+sp)/2)``,
    evaluated on a log-spaced t-grid with an analytic small-t head term.
    The slices carry the same near-diagonal subcell average as the
    direct double sum, and the zero-extension tail is added in the same
    closed form, so the result converges to ``gagliardo_seminorm`` as
    the t-grid is refined.  Raises :class:`TruncationError` when the
    declared grid cannot meet its tolerance.
    """
    if params.N != u.grid.dim:
        raise ValueError(f"params.N = {params.N} but grid dim = {u.grid.dim}")
    if t_quadrature is None:
        h2 = u.grid.spacing**2
        t_quadrature = QuadratureSpec(t_min=1e-7, t_max=60.0 / h2, nodes=400)
    alpha = (params.N + params.sp) / 2.0
    d2, c = _offset_profile(u, params.p)
    if not np.any(c):
        return 0.0
    t, w = t_quadrature.nodes_weights()
    integrand = t ** (alpha - 1.0) * (np.exp(-np.outer(t, d2)) @ c)
    body = float(np.sum(w * integrand))
    # analytic head (I_t ~ I_0 as t -> 0) and exact sub-Gaussian upper tail
    head = float(np.sum(c)) * t_quadrature.t_min**alpha / alpha
    from scipy.special import gammaincc

    tail = math.gamma(alpha) * float(
        np.sum(c * d2 ** (-alpha) * gammaincc(alpha, t_quadrature.t_max * d2))
    )
    total = body + head + tail
    # node-density check: trapezoid on every other node, Richardson-style
    t_h, f_h = t[::2], integrand[::2]
    w_h = t_h * 2.0 * math.log(t[1] / t[0])
    w_h[0] *= 0.5
    w_h[-1] *= 0.5
    rel = abs(body - float(np.sum(w_h * f_h))) / (3.0 * total) if total > 0 else 0.0
    head_res = float(np.sum(c * d2)) * t_quadrature.t_min ** (alpha + 1.0) / (alpha + 1.0)
    rel += head_res / total if total > 0 else 0.0
    if rel > t_quadrature.rtol:
        raise TruncationError(
            f"t-grid [{t_quadrature.t_min:g}, {t_quadrature.t_max:g}] with "
            f"{t_quadrature.nodes} nodes leaves an estimated relative quadrature "
            f"error of {rel:.3e} (tolerance {t_quadrature.rtol:g})",
            estimate=rel,
        )
    kernel = KernelSpec.isotropic(params.kernel_exponent)
    value_p = total * u.grid.cell_volume**2 / math.gamma(alpha)
    value_p += _tail_power_sum(u, kernel, params.p)
    return value_p ** (1.0 / params.p)


# ---------------------------------------------------------------------------
# Riesz rearrangement triple product


def riesz_triple(f: GridFunction, g: GridFunction, h: GridFunction) -> float:
    """Double sum ``sum_{i,j} f_i g(x_i - x_j) h_j h^{2N}``.

    ``g`` is evaluated piecewise-constantly at cell-center differences
    (zero outside its own box), so it may live on a different grid.
    """
    if f.grid != h.grid:
        raise ValueError("f and h must share a grid")
    for fn in (f, g, h):
        if np.any(fn.values < 0):
            raise ValueError("riesz_triple requires non-negative functions")
    grid = f.grid
    comps = _offset_grids(grid)
    disp = np.stack([c * grid.spacing for c in comps], axis=-1)
    table = g.sample(disp)
    conv = _conv_same(table, h.values, grid.periodic)
    return float(np.sum(f.values * conv)) * grid.cell_volume**2


# ---------------------------------------------------------------------------
# Riesz fractional gradient


def _half_space_offsets(shape):
    """Lexicographically positive offsets (one per +/- pair)."""
    if len(shape) == 1:
        return [(o,) for o in range(1, shape[0])]
    out = []
    for da in range(shape[0]):
        for db in range(-(shape[1] - 1), shape[1]):
            if da == 0 and db <= 0:
                continue
            out.append((da, db))
    return out


def _shifted(values: np.ndarray, offset, sign: int) -> np.ndarray:
    """Zero-extended shift ``u(x + sign*offset*h)`` as an array over the grid."""
    out = np.zeros_like(values)
    src, dst = [], []
    for n, o in zip(values.shape, offset):
        o = sign * o
        if abs(o) >= n:
            return out
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = values[tuple(src)]
    return out


def _exterior_vector_field(grid: Grid, s: float) -> list:
    """Components of ``int_{box^c} (x-y) |x-y|^{-(N+s+1)} dy`` per cell."""
    if grid.dim == 1:
        a, b = grid.origin[0], grid.origin[0] + grid.lengths[0]
        x = grid.axis_centers(0)
        return [((x - a) ** (-s) - (b - x) ** (-s)) / s]
    theta = (np.arange(_ANGULAR_NODES) + 0.5) * (2.0 * np.pi / _ANGULAR_NODES)
    dtheta = 2.0 * np.pi / _ANGULAR_NODES
    xs, ys = grid.coordinates()
    pts = np.stack([xs.ravel(), ys.ravel()], axis=-1)
    ex = np.zeros(pts.shape[0])
    ey = np.zeros(pts.shape[0])
    chunk = 90
    for k0 in range(0, theta.size, chunk):
        sl = slice(k0, k0 + chunk)
        rho = _ray_exit_distance(pts, grid, theta[sl])
        w = rho ** (-s)
        ex -= (np.cos(theta[sl])[:, None] * w).sum(axis=0)
        ey -= (np.sin(theta[sl])[:, None] * w).sum(axis=0)
    scale = dtheta / s
    return [ex.reshape(grid.shape) * scale, ey.reshape(grid.shape) * scale]


_SELF_MOMENT_CACHE: dict = {}


def _square_cell_moment(s: float) -> float:
    """``int_{[-1/2,1/2]^2} z_1^2 |z|^{-(3+s)} dz`` on the unit cell (cached)."""
    key = round(s, 12)
    if key not in _SELF_MOMENT_CACHE:
        m = 400
        zz = (np.arange(m) + 0.5) / m - 0.5
        z0, z1 = np.meshgrid(zz, zz, indexing="ij")
        r = np.sqrt(z0 * z0 + z1 * z1)
        _SELF_MOMENT_CACHE[key] = float(np.sum(z0 * z0 * r ** (-(3.0 + s)))) / m**2
    return _SELF_MOMENT_CACHE[key]


def _riesz_vector_weights(grid: Grid, s: float):
    """Per half-space offset vector weights ``int_{cell} z K(z) dz``.

    Exact in 1D; in 2D the near-diagonal offsets use the subcell-average
    of the integrand and the rest the midpoint value.
    """
    h = grid.spacing
    if grid.dim == 1:
        d = np.arange(1, grid.shape[0], dtype=np.float64)
        w = ((d - 0.5) ** (-s) - (d + 0.5) ** (-s)) * h ** (-s) / s
        return [((int(dd),), (float(ww),)) for dd, ww in zip(d, w)]
    out = []
    exponent = grid.dim + s + 1.0
    for o in _half_space_offsets(grid.shape):
        base = np.array(o, dtype=np.float64) * h
        if max(abs(d) for d in o) <= _NEAR_RADIUS:
            s0 = base[0] + _SUB_DIFFS * h
            s1 = base[1] + _SUB_DIFFS * h
            z0, z1 = np.meshgrid(s0, s1, indexing="ij")
            r = np.sqrt(z0 * z0 + z1 * z1)
            ww = np.outer(_SUB_WEIGHTS, _SUB_WEIGHTS)
            k = r ** (-exponent)
            vec = (float(np.sum(ww * z0 * k)) * h * h,
                   float(np.sum(ww * z1 * k)) * h * h)
        else:
            r = math.sqrt(float(np.sum(base * base)))
            k = r ** (-exponent) * h * h
            vec = (base[0] * k, base[1] * k)
        out.append((o, vec))
    return out


def riesz_fractional_gradient(u: GridFunction, s: float, mu: float | None = None) -> list:
    """Riesz fractional gradient, one GridFunction per component.

    The principal value pairs each offset with its mirror, so the odd
    kernel cancels the locally linear part of u exactly.  Offsets carry
    cell-integrated kernel weights, the omitted self cell contributes a
    gradient term with a closed-form moment, and the interaction with
    the box complement (u = 0 there) is added analytically.
    """
    if not (0.0 < s < 1.0):
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if u.grid.periodic:
        raise ValueError("the Riesz gradient is defined for zero-extended functions")
    if mu is None:
        mu = riesz_calibration(u.grid, s)
    grid = u.grid
    h = grid.spacing
    vals = u.values
    comps = [np.zeros_like(vals) for _ in range(grid.dim)]
    weighted = _riesz_vector_weights(grid, s)

    def worker(items):
        partial = [np.zeros_like(vals) for _ in range(grid.dim)]
        for o, vec in items:
            diff = _shifted(vals, o, +1) - _shifted(vals, o, -1)
            for a in range(grid.dim):
                if vec[a] != 0.0:
                    partial[a] += vec[a] * diff
        return [partial]

    for partial in _run_chunked(weighted, worker):
        for a in range(grid.dim):
            comps[a] += partial[a]

    # self cell: int_{cell} (u(x) - u(x+z)) (-z) K(z) dz ~ grad u * moment
    if grid.dim == 1:
        moment = 2.0 * (0.5 * h) ** (1.0 - s) / (1.0 - s)
    else:
        moment = _square_cell_moment(s) * h ** (1.0 - s)
    grads = np.gradient(vals, h) if grid.dim == 2 else [np.gradient(vals, h)]

    ext = _exterior_vector_field(grid, s)
    out = []
    for a in range(grid.dim):
        comp = comps[a] + moment * grads[a] + vals * ext[a]
        out.append(GridFunction(grid, mu * comp))
    return out


def _padded(u: GridFunction, factor: int) -> GridFunction:
    """Embed u in a ``factor``-times larger box (zero fill, aligned cells)."""
    grid = u.grid
    shape = tuple(factor * n for n in grid.shape)
    offs = tuple(((factor - 1) * n) // 2 for n in grid.shape)
    origin = tuple(o - k * grid.spacing for o, k in zip(grid.origin, offs))
    big = Grid(grid.dim, shape, origin, grid.spacing, periodic=False)
    vals = np.zeros(shape)
    sl = tuple(slice(k, k + n) for k, n in zip(offs, grid.shape))
    vals[sl] = u.values
    return GridFunction(big, vals)


def _monopole_energy_tail(u: GridFunction, big: Grid, s: float, p: float, mu: float) -> float:
    """Energy of ``grad^s u`` beyond the padded box from its monopole decay.

    Far away ``|grad^s u| ~ mu * (int u) * |x - centroid|^{-(N+s)}``; the
    power integral over the box complement is closed-form in 1D and an
    exact-in-radius angular quadrature in 2D.
    """
    total_mass = float(np.sum(u.values)) * u.grid.cell_volume
    if total_mass == 0.0:
        return 0.0
    amp = (mu * abs(total_mass)) ** p
    n, beta = big.dim, p * (big.dim + s)
    coords = u.grid.coordinates()
    centroid = [float(np.sum(c * u.values) / np.sum(u.values)) for c in coords]
    if n == 1:
        a, b = big.origin[0], big.origin[0] + big.lengths[0]
        left, right = centroid[0] - a, b - centroid[0]
        return amp * (left ** (1.0 - beta) + right ** (1.0 - beta)) / (beta - 1.0)
    theta = (np.arange(_ANGULAR_NODES) + 0.5) * (2.0 * np.pi / _ANGULAR_NODES)
    pt = np.array([centroid])
    rho = _ray_exit_distance(pt, big, theta)[:, 0]
    return amp * float(np.sum(rho ** (2.0 - beta))) * (2.0 * np.pi / _ANGULAR_NODES) / (beta - 2.0)


def riesz_dirichlet_energy(u: GridFunction, s: float, p: float,
                           mu: float | None = None) -> float:
    """``int |grad^s u|^p dx`` with the same calibration constant as the gradient.

    The gradient of a zero-extended function decays like a power of the
    distance, so the energy integral runs over a padded box and the
    remainder is added from the monopole asymptotics.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if mu is None:
        mu = riesz_calibration(u.grid, s)
    factor = 3 if u.grid.dim == 1 else 2
    big = _padded(u, factor)
    grads = riesz_fractional_gradient(big, s, mu=mu)
    mag2 = sum(g.values**2 for g in grads)
    inner = float(np.sum(mag2 ** (p / 2.0)) * big.grid.cell_volume)
    return inner + _monopole_energy_tail(u, big.grid, s, p, mu)


_RIESZ_CACHE: dict = {}


def riesz_calibration(grid: Grid, s: float) -> float:
    """Gradient constant fixed so the p = 2 energy equals the squared seminorm.

    The proportionality between ``int |grad^s u|^2`` and ``[u]_{H^s}^2``
    is exact in the continuum; calibrating on a reference Gaussian on
    the same grid pins the discrete constant once per (grid, s).
    """
    key = (grid.shape, grid.origin, grid.spacing, grid.periodic, float(s))
    if key in _RIESZ_CACHE:
        return _RIESZ_CACHE[key]
    coords = grid.coordinates()
    center = grid.center
    r2 = sum((c - cc) ** 2 for c, cc in zip(coords, center))
    ref = GridFunction(grid, np.exp(-r2))
    seminorm = gagliardo_seminorm(ref, FracParams(N=grid.dim, s=s, p=2.0)).value
    raw = riesz_dirichlet_energy(ref, s, 2.0, mu=1.0)
    mu = seminorm / math.sqrt(raw)
    _RIESZ_CACHE[key] = mu
    return mu
