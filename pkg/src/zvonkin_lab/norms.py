"""Bessel-potential and localized space-time norms on the periodic lattice.

The localized norm of a space-time function ``f`` is

    sup_z ( int_{t0}^{t1} || chi_r^z f(t) ||_{alpha,p}^q dt )^{1/q}

with ``||g||_{alpha,p} = ||(I - Delta)^{alpha/2} g||_p`` evaluated by a Fourier
multiplier.  For ``alpha = 0`` the inner norm is a correlation of ``|f|^p``
with ``chi_r^p`` so every lattice point is a candidate centre; otherwise the
centres run over a coarser lattice of stride at most ``r/2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sfft

from .grid import Grid, GridError, GridFn, Mollifier, bump_profile, cutoff_values, local_maximal, mollify

INF = math.inf


@dataclass(frozen=True)
class NormParams:
    """Parameters of a localized norm.  ``q = math.inf`` selects the sup-in-time norm."""

    alpha: float = 0.0
    p: float = 2.0
    q: float = 2.0
    t0: float = 0.0
    t1: float | None = None
    r: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.q > 1:
            raise ValueError(f"q must exceed 1, got {self.q}")
        if not self.r > 0:
            raise ValueError(f"localization radius must be positive, got {self.r}")

    def window(self, grid: Grid) -> tuple[float, float]:
        t1 = grid.T if self.t1 is None else self.t1
        return self.t0, t1

    def replace(self, **kw) -> "NormParams":
        data = asdict(self)
        data.update(kw)
        return NormParams(**data)


@dataclass
class NormReport:
    value: float
    argmax_z: np.ndarray
    params: dict
    table: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_dict(self) -> dict:
        params = {k: (None if v == INF else v) if isinstance(v, float) else v for k, v in self.params.items()}
        if self.params.get("q") == INF:
            params["q"] = "inf"
        return {"value": float(self.value), "argmax_z": [float(v) for v in self.argmax_z], "params": params}


def lp_norm(values: np.ndarray, grid: Grid, p: float) -> np.ndarray:
    """Lattice ``L^p`` norm over the trailing ``d`` axes."""
    axes = tuple(range(-grid.d, 0))
    a = np.abs(values)
    if p == INF:
        return a.max(axis=axes)
    return (np.sum(a ** p, axis=axes) * grid.cell_volume) ** (1.0 / p)


def bessel_symbol(grid: Grid, alpha: float) -> np.ndarray:
    xi2 = np.sum(grid.frequencies() ** 2, axis=-1)
    return (1.0 + xi2) ** (alpha / 2.0)


def bessel_apply(values: np.ndarray, grid: Grid, alpha: float) -> np.ndarray:
    """Apply ``(I - Delta)^{alpha/2}`` over the trailing ``d`` axes."""
    if alpha == 0:
        return np.asarray(values, dtype=float)
    axes = tuple(range(-grid.d, 0))
    return sfft.ifftn(sfft.fftn(values, axes=axes) * bessel_symbol(grid, alpha), axes=axes).real


def _require_scalar(f: GridFn):
    if f.rank != "scalar":
        raise GridError(f"expected a scalar function, got rank {f.rank!r}; apply the norm componentwise")


def bessel_norm(f: GridFn, alpha: float, p: float) -> float:
    """``||(I - Delta)^{alpha/2} f||_p`` of a static scalar lattice function."""
    _require_scalar(f)
    if f.time_dependent:
        raise GridError("bessel_norm takes a static function; use bessel_norm_series per slice")
    return float(lp_norm(bessel_apply(f.values[0], f.grid, alpha), f.grid, p))


def bessel_norm_series(f: GridFn, alpha: float, p: float) -> np.ndarray:
    _require_scalar(f)
    return lp_norm(bessel_apply(f.values, f.grid, alpha), f.grid, p)


def _magnitude(f: GridFn) -> np.ndarray:
    if f.rank == "scalar":
        return np.abs(f.values)
    axes = tuple(range(1 + f.grid.d, f.values.ndim))
    return np.sqrt(np.sum(f.values ** 2, axis=axes))


def _window_slices(f: GridFn, np_: NormParams):
    """Time slices inside the window and their quadrature weights.

    Returns ``(index_array, weights)``; static functions give a single slice
    with weight ``t1 - t0``.
    """
    grid = f.grid
    t0, t1 = np_.window(grid)
    if not t1 > t0:
        raise ValueError(f"empty time window [{t0}, {t1}]")
    if not f.time_dependent:
        return np.array([0]), np.array([t1 - t0])
    k0, k1 = grid.time_index(t0), grid.time_index(t1)
    if k1 <= k0:
        raise ValueError(f"empty time window [{t0}, {t1}] on the lattice")
    if np_.q == INF:
        idx = np.arange(k0, k1 + 1)
        return idx, np.ones(idx.size)
    idx = np.arange(k0, k1)
    return idx, np.full(idx.size, grid.dt)


def _combine_time(per_slice: np.ndarray, weights: np.ndarray, q: float) -> np.ndarray:
    """Combine norms along axis 0 by left-endpoint ``L^q`` quadrature (max for ``q = inf``)."""
    if q == INF:
        return per_slice.max(axis=0)
    w = weights.reshape((-1,) + (1,) * (per_slice.ndim - 1))
    return np.sum(per_slice ** q * w, axis=0) ** (1.0 / q)


def _z_lattice(grid: Grid, r: float) -> np.ndarray:
    m = int(math.ceil(4.0 * grid.L / r))
    ax = -grid.L + np.arange(m) * (2.0 * grid.L / m)
    mesh = np.meshgrid(*([ax] * grid.d), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, grid.d)


def localized_slices_alpha0(f: GridFn, p: float, r: float) -> np.ndarray:
    """``||chi_r^z f(t)||_p`` for every slice ``t`` and every lattice centre ``z``.

    Shape ``(nt,) + spatial``; entry ``[k, j]`` is the norm with ``z`` equal to lattice point ``j``.
    """
    return _alpha0_table(_magnitude(f), f.grid, p, r)


def _alpha0_table(mag: np.ndarray, grid: Grid, p: float, r: float) -> np.ndarray:
    if r >= grid.L / 2:
        raise GridError(f"localization radius {r} >= L/2")
    g = mag ** p
    kern = bump_profile(np.linalg.norm(grid.offsets(), axis=-1) / r) ** p
    axes = grid.spatial_axes
    corr = sfft.ifftn(sfft.fftn(g, axes=axes) * sfft.fftn(kern)[None], axes=axes).real
    return (np.maximum(corr, 0.0) * grid.cell_volume) ** (1.0 / p)


def _argmax_tied(vals: np.ndarray, zs: np.ndarray, grid: Grid, rtol: float = 1e-10) -> int:
    """Index of the maximum; among (near-)ties the candidate closest to the tied set's centroid.

    A cutoff equal to 1 on ``B_r`` makes every centre covering the support a maximizer;
    the centroid rule reports the middle of that plateau instead of its first lattice point.
    """
    top = vals.max()
    tied = np.flatnonzero(vals >= top * (1 - rtol))
    if tied.size == 1:
        return int(tied[0])
    base = zs[tied[0]]
    rel = grid.wrap(zs[tied] - base)
    centre = base + rel.mean(axis=0)
    return int(tied[np.argmin(np.linalg.norm(grid.wrap(zs[tied] - centre), axis=-1))])


def localized_norm(f: GridFn, np_: NormParams, keep_table: bool = False) -> NormReport:
    """Localized ``H^{alpha,p}_q`` norm on the window ``[t0, t1]``."""
    grid = f.grid
    if np_.r >= grid.L / 2:
        raise GridError(f"localization radius {np_.r} >= L/2 = {grid.L / 2}")
    idx, w = _window_slices(f, np_)
    params = asdict(np_)
    params["t1"] = np_.window(grid)[1]
    if np_.alpha == 0 and grid.h <= np_.r / 2:
        mag = _magnitude(f)
        per = _alpha0_table(mag[idx] if f.time_dependent else mag, grid, np_.p, np_.r)
        vals = _combine_time(per, w, np_.q).reshape(-1)
        pts = grid.points().reshape(-1, grid.d)
        j = _argmax_tied(vals, pts, grid)
        table = np.column_stack([pts, vals]) if keep_table else None
        return NormReport(float(vals[j]), pts[j].copy(), params, table)

    if f.rank != "scalar" and np_.alpha != 0:
        raise GridError("alpha != 0 localized norms need a scalar function")
    data = _magnitude(f) if np_.alpha == 0 else f.values
    data = data[idx] if f.time_dependent else data
    zs = _z_lattice(grid, np_.r)
    vals = np.empty(len(zs))
    for i, z in enumerate(zs):
        chi = cutoff_values(grid, z, np_.r)
        per = lp_norm(bessel_apply(chi[None] * data, grid, np_.alpha), grid, np_.p)
        vals[i] = _combine_time(per, w, np_.q)
    j = _argmax_tied(vals, zs, grid)
    table = np.column_stack([zs, vals]) if keep_table else None
    return NormReport(float(vals[j]), zs[j].copy(), params, table)


def localized_value(f: GridFn, np_: NormParams) -> float:
    return localized_norm(f, np_).value


def constant_function_norm(grid: Grid, c: float, np_: NormParams) -> float:
    """Closed form for ``f = c``: ``|c| (t1 - t0)^{1/q} ||chi_r||_p`` with the lattice bump norm."""
    t0, t1 = np_.window(grid)
    # centre the bump on a lattice point, as the localized norm does
    pts = grid.points().reshape(-1, grid.d)
    z = pts[np.argmin(np.linalg.norm(pts, axis=-1))]
    chi = cutoff_values(grid, z, np_.r)
    bump = float(lp_norm(bessel_apply(chi, grid, np_.alpha), grid, np_.p))
    tq = 1.0 if np_.q == INF else (t1 - t0) ** (1.0 / np_.q)
    return abs(c) * tq * bump


def sup_inside_norm(f: GridFn, np_: NormParams) -> float:
    """``( int (sup_z ||chi_r^z f(t)||_{alpha,p})^q dt )^{1/q}``, the ``L^q(0,T; H~)`` norm."""
    grid = f.grid
    idx, w = _window_slices(f, np_)
    if np_.alpha == 0 and grid.h <= np_.r / 2:
        mag = _magnitude(f)
        per = _alpha0_table(mag[idx] if f.time_dependent else mag, grid, np_.p, np_.r)
        per = per.reshape(per.shape[0], -1).max(axis=1)
    else:
        data = f.values[idx] if f.time_dependent else f.values
        zs = _z_lattice(grid, np_.r)
        per = np.zeros(data.shape[0])
        for z in zs:
            chi = cutoff_values(grid, z, np_.r)
            per = np.maximum(per, lp_norm(bessel_apply(chi[None] * data, grid, np_.alpha), grid, np_.p))
    if not f.time_dependent:
        per = per[:1]
    return float(_combine_time(per, w, np_.q))


def mollifier_modulus(f: GridFn, p: float, T: float | None, eps_list: Sequence[float],
                      shape: str = "gaussian-truncated", r: float = 1.0) -> list[dict]:
    """``kappa(eps) = sup_{t <= T} |||f(t) * rho_eps - f(t)|||_p`` for each ``eps``."""
    np_ = NormParams(alpha=0.0, p=p, q=INF, t0=0.0, t1=T, r=r)
    rows = []
    for eps in eps_list:
        g = mollify(f, Mollifier(shape, eps)) - f
        rows.append({"eps": float(eps), "kappa": localized_norm(g, np_).value})
    return rows


def _ratio_stats(ratios: Iterable[float]) -> dict:
    r = np.asarray(list(ratios), dtype=float)
    return {"ratios": r.tolist(), "min": float(r.min()), "max": float(r.max())}


def norm_equivalence_check(f_family: Sequence[GridFn], r: float, r2: float, np_: NormParams) -> dict:
    """Ratios of localized norms taken with cutoff radii ``r`` and ``r2``."""
    if r == r2:
        raise ValueError("the two localization radii must differ")
    return _ratio_stats(
        localized_value(f, np_.replace(r=r)) / localized_value(f, np_.replace(r=r2)) for f in f_family
    )


def sobolev_window(d: int, alpha: float, p: float) -> tuple[float, float]:
    """Admissible target exponents ``[p, p*]`` of the localized Sobolev embedding."""
    if not alpha > 0:
        raise ValueError("the embedding needs alpha > 0")
    if p * alpha < d:
        return p, p * d / (d - p * alpha)
    return p, INF


def sobolev_embedding_check(f_family: Sequence[GridFn], alpha: float, p: float, p2: float,
                            q: float, r: float = 1.0) -> dict:
    """Ratios ``|||f|||_{L~^{p2}_q} / |||f|||_{H~^{alpha,p}_q}`` over a family."""
    d = f_family[0].grid.d
    lo, hi = sobolev_window(d, alpha, p)
    open_top = p * alpha == d
    if p2 < lo or p2 > hi or (open_top and p2 == INF):
        raise ValueError(f"p'={p2} outside the admissible window [{lo}, {hi}] for d={d}, alpha={alpha}, p={p}")
    base = NormParams(alpha=alpha, p=p, q=q, r=r)
    target = NormParams(alpha=0.0, p=p2, q=q, r=r)
    return _ratio_stats(localized_value(f, target) / localized_value(f, base) for f in f_family)


def maximal_boundedness_ratio(f: GridFn, R: float, np_: NormParams) -> float:
    """``|||M_R |f| ||| / |||f|||`` in the localized ``L^p_q`` norm."""
    mf = local_maximal(GridFn(f.grid, np.abs(f.values), "scalar"), R)
    return localized_value(mf, np_) / localized_value(f, np_)


def maximal_lipschitz_constant(f: GridFn, R: float, max_sep: float) -> float:
    """Smallest ``C`` with ``|f(x)-f(y)| <= C|x-y|(M|grad f|(x) + M|grad f|(y) + ||f||_inf)``.

    Taken over all lattice pairs with ``0 < |x - y| <= max_sep`` (static scalar ``f``).
    """
    from .grid import centered_gradient

    grid = f.grid
    if f.time_dependent or f.rank != "scalar":
        raise GridError("expected a static scalar function")
    v = f.values[0]
    grad = np.linalg.norm(centered_gradient(v, grid, first_spatial_axis=0), axis=-1)
    mg = local_maximal(GridFn(grid, grad[None], "scalar"), R).values[0]
    sup = np.max(np.abs(v))
    kmax = int(math.floor(max_sep / grid.h))
    shifts = np.array(np.meshgrid(*([np.arange(-kmax, kmax + 1)] * grid.d), indexing="ij")).reshape(grid.d, -1).T
    best = 0.0
    for s in shifts:
        dist = grid.h * float(np.linalg.norm(s))
        if dist == 0 or dist > max_sep:
            continue
        axes = tuple(range(grid.d))
        vy = np.roll(v, tuple(-s), axis=axes)
        my = np.roll(mg, tuple(-s), axis=axes)
        ratio = np.abs(v - vy) / (dist * (mg + my + sup))
        best = max(best, float(ratio.max()))
    return best
