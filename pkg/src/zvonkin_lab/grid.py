"""Uniform periodic space-time lattices and functions sampled on them.

The whole lab works on the periodic box ``[-L, L)^d`` crossed with a uniform
time partition of ``[0, T]``.  Lattice points sit at cell centres by default
(``shift=0.5``) so that coefficients with a singularity at the origin are never
evaluated at it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft as sfft

RANKS = ("scalar", "vector", "matrix")


class GridError(ValueError):
    """Invalid lattice parameters or incompatible lattice functions."""


class SampleError(ValueError):
    """An analytic function produced non-finite lattice samples."""


@dataclass(frozen=True)
class Grid:
    d: int
    L: float
    Nx: int
    T: float
    Nt: int
    shift: float = 0.5

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"dimension d must be 1, 2 or 3, got {self.d}")
        if self.Nx < 8:
            raise GridError(f"Nx must be >= 8, got {self.Nx}")
        if self.Nx % 2:
            raise GridError(f"Nx must be even, got {self.Nx}")
        if self.Nt < 1:
            raise GridError(f"Nt must be >= 1, got {self.Nt}")
        if not self.L > 0:
            raise GridError(f"L must be > 0, got {self.L}")
        if not self.T > 0:
            raise GridError(f"T must be > 0, got {self.T}")
        if not 0.0 <= self.shift < 1.0:
            raise GridError(f"shift must lie in [0, 1), got {self.shift}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.Nx

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.Nx,) * self.d

    @property
    def spatial_axes(self) -> tuple[int, ...]:
        """Axes of a ``(time, *space, *components)`` array holding space."""
        return tuple(range(1, self.d + 1))

    def axis(self) -> np.ndarray:
        return -self.L + (np.arange(self.Nx) + self.shift) * self.h

    def points(self) -> np.ndarray:
        """Lattice coordinates, shape ``(Nx,)*d + (d,)``."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt + 1)

    def offsets(self) -> np.ndarray:
        """Minimal-image lattice displacements from index 0, shape ``(Nx,)*d + (d,)``.

        These are the displacements used for convolution kernels, so the
        kernel is centred at index 0 regardless of ``shift``.
        """
        j = np.arange(self.Nx)
        ax = (j - self.Nx * (j >= self.Nx // 2)) * self.h
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def frequencies(self) -> np.ndarray:
        """Box frequencies ``xi`` of the discrete Fourier basis, shape ``(Nx,)*d + (d,)``."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.Nx, d=self.h)
        mesh = np.meshgrid(*([k] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map coordinates periodically into ``[-L, L)``."""
        return (np.asarray(x) + self.L) % (2.0 * self.L) - self.L

    def inside(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= -self.L) & (x < self.L), axis=-1)

    def time_index(self, t: float) -> int:
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise GridError(f"time {t} is not on the lattice (dt={self.dt})")
        return k

    def refined(self, factor: int = 2, time_factor: int | None = None) -> "Grid":
        tf = factor if time_factor is None else time_factor
        return Grid(self.d, self.L, self.Nx * factor, self.T, self.Nt * tf, self.shift)

    def with_time(self, T: float, Nt: int) -> "Grid":
        return Grid(self.d, self.L, self.Nx, T, Nt, self.shift)


def build_grid(d: int, L: float, Nx: int, T: float, Nt: int, shift: float = 0.5) -> Grid:
    """Validated lattice constructor; raises :class:`GridError` naming the violated bound."""
    return Grid(int(d), float(L), int(Nx), float(T), int(Nt), float(shift))


def _component_shape(rank: str, d: int) -> tuple[int, ...]:
    if rank == "scalar":
        return ()
    if rank == "vector":
        return (d,)
    if rank == "matrix":
        return (d, d)
    raise GridError(f"rank must be one of {RANKS}, got {rank!r}")


@dataclass(frozen=True, eq=False)
class GridFn:
    """Function on the lattice.

    ``values`` has shape ``(nt, *spatial, *components)`` with ``nt`` equal to 1
    for a static function and ``Nt + 1`` for a time-dependent one.
    """

    grid: Grid
    values: np.ndarray
    rank: str = "scalar"
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        comp = _component_shape(self.rank, self.grid.d)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[1:] != self.grid.spatial_shape + comp:
            raise GridError(
                f"values shape {vals.shape} incompatible with grid {self.grid.spatial_shape} "
                f"and rank {self.rank}"
            )
        if vals.shape[0] not in (1, self.grid.Nt + 1):
            raise GridError(f"time axis must have length 1 or Nt+1={self.grid.Nt + 1}, got {vals.shape[0]}")
        if not self._checked and not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise SampleError(f"non-finite value at index {tuple(int(i) for i in bad)}")
        if vals is self.values and vals.flags.writeable:
            vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def time_dependent(self) -> bool:
        return self.values.shape[0] > 1

    @property
    def ncomp(self) -> int:
        return int(np.prod(_component_shape(self.rank, self.grid.d), dtype=int))

    def slice(self, k: int) -> np.ndarray:
        """Spatial values at time index ``k`` (static functions ignore ``k``)."""
        return self.values[k if self.time_dependent else 0]

    def series(self) -> np.ndarray:
        """Values broadcast to all ``Nt + 1`` time slices (a view for static functions)."""
        if self.time_dependent:
            return self.values
        return np.broadcast_to(self.values, (self.grid.Nt + 1,) + self.values.shape[1:])

    def with_values(self, values: np.ndarray) -> "GridFn":
        return GridFn(self.grid, values, self.rank)

    def component(self, *idx: int) -> "GridFn":
        sl = (slice(None),) * (1 + self.grid.d) + tuple(idx)
        return GridFn(self.grid, self.values[sl], "scalar")

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _coerce(self, other):
        if isinstance(other, GridFn):
            if other.grid != self.grid or other.rank != self.rank:
                raise GridError("GridFn operands live on different grids or ranks")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._coerce(other))

    def __mul__(self, other):
        return self.with_values(self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def sample(fn: Callable, grid: Grid, rank: str = "scalar", time_dependent: bool = False) -> GridFn:
    """Sample an analytic function on the lattice.

    ``fn(x)`` (or ``fn(t, x)`` when ``time_dependent``) receives coordinates of
    shape ``(..., d)`` and returns values of shape ``(...,) + components``.
    Scalars broadcast.
    """
    comp = _component_shape(rank, grid.d)
    x = grid.points()
    target = grid.spatial_shape + comp
    if time_dependent:
        vals = np.stack([np.broadcast_to(np.asarray(fn(t, x), dtype=float), target) for t in grid.times()])
    else:
        vals = np.broadcast_to(np.asarray(fn(x), dtype=float), target)[None]
    vals = np.array(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(vals))[0])
        raise SampleError(f"analytic function is not finite at lattice index {bad}")
    return GridFn(grid, vals, rank, _checked=True)


def constant(grid: Grid, c: float = 1.0) -> GridFn:
    return GridFn(grid, np.full((1,) + grid.spatial_shape, float(c)), "scalar")


@dataclass(frozen=True)
class Mollifier:
    shape: str = "gaussian-truncated"
    eps: float = 0.1

    def __post_init__(self):
        if self.shape not in ("gaussian-truncated", "polynomial-bump"):
            raise ValueError(f"unknown mollifier shape {self.shape!r}")
        if not self.eps > 0:
            raise ValueError("mollifier width must be positive")

    def support_radius(self, d: int) -> float:
        """Kernel support radius in dimension ``d``.

        The bump ``(1 - s^2)^3`` on a ball of radius ``R`` has per-axis variance
        ``R^2 / (d + 8)``, so ``R = sqrt(d + 8) eps`` matches the Gaussian's ``eps^2``.
        """
        return 4.0 * self.eps if self.shape == "gaussian-truncated" else math.sqrt(d + 8.0) * self.eps

    def profile(self, r: np.ndarray, d: int) -> np.ndarray:
        """Unnormalized radial profile; both shapes have per-axis standard deviation eps."""
        r = np.asarray(r, dtype=float)
        R = self.support_radius(d)
        if self.shape == "gaussian-truncated":
            return np.where(r <= R, np.exp(-0.5 * (r / self.eps) ** 2), 0.0)
        s = r / R
        return np.where(s < 1.0, (1.0 - s * s) ** 3, 0.0)

    def kernel(self, grid: Grid) -> np.ndarray:
        """Lattice kernel centred at index 0 with discrete mass ``sum * h^d = 1``."""
        r = np.linalg.norm(grid.offsets(), axis=-1)
        k = self.profile(r, grid.d)
        return k / (k.sum() * grid.cell_volume)


def mollify(f: GridFn, m: Mollifier) -> GridFn:
    """Periodic discrete convolution ``f * rho_eps`` on every time slice and component."""
    grid = f.grid
    if m.eps < grid.h:
        warnings.warn(f"mollifier width {m.eps} is below the lattice spacing {grid.h}", stacklevel=2)
    khat = sfft.fftn(m.kernel(grid) * grid.cell_volume)
    axes = grid.spatial_axes
    fhat = sfft.fftn(f.values, axes=axes)
    shape = (1,) + khat.shape + (1,) * (f.values.ndim - 1 - grid.d)
    out = sfft.ifftn(fhat * khat.reshape(shape), axes=axes).real
    return GridFn(grid, out, f.rank)


def bump_profile(s: np.ndarray) -> np.ndarray:
    """Smooth radial step: 1 on ``[0, 1]``, 0 on ``[2, inf)``, built from ``exp(-1/t)`` glue."""
    s = np.asarray(s, dtype=float)

    def glue(t):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    a = glue(2.0 - s)
    b = glue(s - 1.0)
    return a / (a + b)


def cutoff_values(grid: Grid, z, r: float) -> np.ndarray:
    """Spatial array of ``chi_r^z`` using minimal-image distances to ``z``."""
    z = np.asarray(z, dtype=float).reshape(grid.d)
    diff = grid.wrap(grid.points() - z)
    return bump_profile(np.linalg.norm(diff, axis=-1) / r)


def cutoff(grid: Grid, z, r: float) -> GridFn:
    """Static cutoff ``chi_r^z``: 1 on ``|x - z| <= r``, 0 beyond ``2r``."""
    if not r > 0:
        raise GridError("cutoff radius must be positive")
    if r >= grid.L / 2:
        raise GridError(f"cutoff radius {r} >= L/2 = {grid.L / 2} would wrap onto itself")
    return GridFn(grid, cutoff_values(grid, z, r)[None], "scalar")


def _ball_kernels(grid: Grid, R: float) -> list[np.ndarray]:
    r = np.linalg.norm(grid.offsets(), axis=-1)
    kmax = int(math.floor(R / grid.h + 1e-9))
    out = []
    for k in range(1, kmax + 1):
        ball = (r <= k * grid.h * (1.0 + 1e-9)).astype(float)
        out.append(ball / ball.sum())
    return out


def local_maximal(f: GridFn, R: float) -> GridFn:
    """Local Hardy-Littlewood maximal function on the lattice.

    Maximum over lattice balls of radii ``k*h``, ``k = 0..floor(R/h)``, of the
    ball average of ``f``; ``k = 0`` stands for the small-radius limit.
    """
    grid = f.grid
    if f.rank != "scalar":
        raise GridError("local_maximal needs a scalar function")
    if R < grid.h:
        raise GridError(f"radius R={R} is below the lattice spacing h={grid.h}")
    if np.any(f.values < 0):
        raise ValueError("local_maximal expects a nonnegative function; pass |f|")
    axes = grid.spatial_axes
    fhat = sfft.fftn(f.values, axes=axes)
    out = f.values.copy()
    for kern in _ball_kernels(grid, R):
        avg = sfft.ifftn(fhat * sfft.fftn(kern)[None], axes=axes).real
        np.maximum(out, avg, out=out)
    return GridFn(grid, out, "scalar")


def centered_gradient(values: np.ndarray, grid: Grid, first_spatial_axis: int = 1) -> np.ndarray:
    """Centred differences along every spatial axis; the new trailing axis indexes the direction."""
    h = grid.h
    grads = [
        (np.roll(values, -1, axis=first_spatial_axis + i) - np.roll(values, 1, axis=first_spatial_axis + i)) / (2 * h)
        for i in range(grid.d)
    ]
    return np.stack(grads, axis=-1)


def interpolate(values: np.ndarray, grid: Grid, x: np.ndarray, periodic: bool = True, fill=None) -> np.ndarray:
    """Multilinear interpolation of a static lattice field at arbitrary points.

    ``values`` has shape ``(Nx,)*d + comp``; ``x`` has shape ``(..., d)``.
    Returns shape ``x.shape[:-1] + comp``.  With ``periodic=False`` points
    outside the box receive ``fill`` (broadcast to ``comp``).
    """
    d, Nx, h = grid.d, grid.Nx, grid.h
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    comp = values.shape[d:]
    pts = x.reshape(-1, d)
    flat = values.reshape((Nx ** d,) + comp)
    s = (pts + grid.L) / h - grid.shift
    i0 = np.floor(s).astype(np.int64)
    w = s - i0
    out = np.zeros((pts.shape[0],) + comp)
    strides = [Nx ** (d - 1 - a) for a in range(d)]
    for corner in range(2 ** d):
        idx = np.zeros(pts.shape[0], dtype=np.int64)
        wt = np.ones(pts.shape[0])
        for a in range(d):
            bit = (corner >> a) & 1
            idx += ((i0[:, a] + bit) % Nx) * strides[a]
            wt *= w[:, a] if bit else 1.0 - w[:, a]
        out += wt.reshape((-1,) + (1,) * len(comp)) * flat[idx]
    if not periodic:
        inside = grid.inside(pts)
        if not np.all(inside):
            out[~inside] = 0.0 if fill is None else fill
    return out.reshape(lead + comp)


# -- snapshot files ---------------------------------------------------------

def dump_gridfn(f: GridFn, path) -> None:
    """Write ``gridfn v1 d Nx Nt rank`` header then row-major little-endian float64 values."""
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(f"gridfn v1 {g.d} {g.Nx} {g.Nt} {f.rank}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_gridfn(path, grid: Grid) -> GridFn:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) != 6 or header[:2] != ["gridfn", "v1"]:
        raise GridError(f"not a gridfn v1 file: {' '.join(header)!r}")
    d, Nx, Nt, rank = int(header[2]), int(header[3]), int(header[4]), header[5]
    if (d, Nx, Nt) != (grid.d, grid.Nx, grid.Nt):
        raise GridError(f"file lattice (d={d}, Nx={Nx}, Nt={Nt}) does not match the given grid")
    data = np.frombuffer(payload, dtype="<f8")
    per_slice = Nx ** d * int(np.prod(_component_shape(rank, d), dtype=int))
    if data.size % per_slice or data.size // per_slice not in (1, Nt + 1):
        raise GridError("payload length does not match the header")
    shape = (data.size // per_slice,) + grid.spatial_shape + _component_shape(rank, d)
    return GridFn(grid, data.reshape(shape).astype(float), rank)
