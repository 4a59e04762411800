"""Second-order parabolic solves on the periodic lattice.

Forward (non-divergence) problem::

    d_t u = a^{ij} d_i d_j u + b^i d_i u - lam u + f,      u(0) = u0

Backward adjoint (divergence form) problem on ``[0, T]``::

    d_s w = lam w - d_i d_j (a^{ij} w) + d_i (b^i w) - f,  w(T) = wT

Spatial derivatives are centred differences, so the discrete adjoint operator
is the exact transpose of the forward one.  Time stepping is the second-order
semi-implicit backward-differentiation scheme (SBDF2): the constant
coefficient part ``abar : D^2 - lam`` is solved exactly in Fourier space and
the variable remainder ``(a - abar) : D^2 + b . D`` is extrapolated
explicitly.  ``abar`` is the largest eigenvalue of ``a`` times the identity,
which keeps the explicit remainder negative semidefinite.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft

from .grid import Grid, GridError, GridFn
from .norms import INF, NormParams, localized_value


class CertificateError(ValueError):
    """The diffusion matrix is not symmetric positive definite on the lattice."""


class StabilityError(RuntimeError):
    """The explicit remainder would make the time stepping unstable."""


@dataclass
class EllipticityCertificate:
    c0: float
    eig_min: float
    eig_max: float
    modulus: list = field(default_factory=list)

    def holds(self, c0: float) -> bool:
        return self.eig_min >= 1.0 / c0 and self.eig_max <= c0


def certify(a: GridFn, c0: float | None = None, modulus_levels: int = 4) -> EllipticityCertificate:
    """Sample every Rayleigh-quotient bound of ``a`` and its continuity modulus.

    Raises :class:`CertificateError` when ``a`` is not symmetric, not positive
    definite, or (if ``c0`` is given) leaves ``[1/c0, c0]``.
    """
    if a.rank != "matrix":
        raise CertificateError("diffusion coefficient must be matrix valued")
    vals = a.values
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.max(np.abs(vals - np.swapaxes(vals, -1, -2))) > 1e-12 * scale:
        raise CertificateError("diffusion matrix is not symmetric")
    d = a.grid.d
    eig = np.linalg.eigvalsh(vals.reshape(-1, d, d))
    lo, hi = float(eig.min()), float(eig.max())
    if lo <= 0:
        raise CertificateError(f"diffusion matrix is not positive definite (min eigenvalue {lo:.3e})")
    c_emp = max(hi, 1.0 / lo, 1.0)
    if c0 is not None and not (lo >= 1.0 / c0 - 1e-12 and hi <= c0 + 1e-12):
        raise CertificateError(f"Rayleigh quotients [{lo:.4g}, {hi:.4g}] leave [1/{c0}, {c0}]")
    grid = a.grid
    modulus = []
    for j in range(modulus_levels):
        k = 2 ** j
        if k * grid.h > grid.L:
            break
        omega = 0.0
        for ax in range(d):
            diff = vals - np.roll(vals, k, axis=1 + ax)
            omega = max(omega, float(np.max(np.sqrt(np.sum(diff ** 2, axis=(-1, -2))))))
        modulus.append((k * grid.h, omega))
    return EllipticityCertificate(c_emp, lo, hi, modulus)


def diffusion_from_sigma(sigma: GridFn) -> GridFn:
    """``a^{ij} = sigma^{ik} sigma^{jk} / 2``."""
    s = sigma.values
    return GridFn(sigma.grid, 0.5 * np.einsum("...ik,...jk->...ij", s, s), "matrix")


def identity_diffusion(grid: Grid, scale: float = 1.0) -> GridFn:
    return GridFn(grid, np.broadcast_to(scale * np.eye(grid.d), (1,) + grid.spatial_shape + (grid.d, grid.d)).copy(), "matrix")


@dataclass
class ParabolicProblem:
    a: GridFn
    b: GridFn | None = None
    lam: float = 0.0
    f: GridFn | None = None
    direction: str = "forward"
    certificate: EllipticityCertificate | None = None

    def __post_init__(self):
        if self.direction not in ("forward", "backward-adjoint"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.b is not None and (self.b.rank != "vector" or self.b.grid != self.a.grid):
            raise GridError("drift must be a vector GridFn on the diffusion grid")
        if self.f is not None and (self.f.rank != "scalar" or self.f.grid != self.a.grid):
            raise GridError("source must be a scalar GridFn on the diffusion grid")
        if self.certificate is None:
            self.certificate = certify(self.a)

    @property
    def grid(self) -> Grid:
        return self.a.grid


# -- lattice difference operators -------------------------------------------

def _d1(u, ax, h, lead):
    a = lead + ax
    return (np.roll(u, -1, axis=a) - np.roll(u, 1, axis=a)) / (2 * h)


def _d2(u, ax, h, lead):
    a = lead + ax
    return (np.roll(u, -1, axis=a) - 2 * u + np.roll(u, 1, axis=a)) / (h * h)


def apply_remainder(u, m, b, h, d, lead=0):
    """``sum_ij m^{ij} D_ij u + sum_i b^i D_i u`` (``m`` symmetric, may be ``None``)."""
    out = np.zeros_like(u)
    if m is not None:
        for i in range(d):
            out += m[..., i, i] * _d2(u, i, h, lead)
            for j in range(i + 1, d):
                out += 2.0 * m[..., i, j] * _d1(_d1(u, j, h, lead), i, h, lead)
    if b is not None:
        for i in range(d):
            out += b[..., i] * _d1(u, i, h, lead)
    return out


def apply_remainder_adjoint(w, m, b, h, d, lead=0):
    """Exact lattice transpose of :func:`apply_remainder`."""
    out = np.zeros_like(w)
    if m is not None:
        for i in range(d):
            out += _d2(m[..., i, i] * w, i, h, lead)
            for j in range(i + 1, d):
                out += 2.0 * _d1(_d1(m[..., i, j] * w, i, h, lead), j, h, lead)
    if b is not None:
        for i in range(d):
            out -= _d1(b[..., i] * w, i, h, lead)
    return out


def core_symbol(grid: Grid, abar: np.ndarray) -> np.ndarray:
    """Fourier symbol of ``sum_ij abar^{ij} D_ij`` for centred differences (nonpositive)."""
    h = grid.h
    theta = grid.frequencies() * h
    out = np.zeros(grid.spatial_shape)
    for i in range(grid.d):
        out -= abar[i, i] * 4.0 * np.sin(theta[..., i] / 2) ** 2 / h ** 2
        for j in range(i + 1, grid.d):
            out -= 2.0 * abar[i, j] * np.sin(theta[..., i]) * np.sin(theta[..., j]) / h ** 2
    return out


def assemble_operator(a: GridFn, b: GridFn | None, lam: float, adjoint: bool = False, k: int = 0) -> np.ndarray:
    """Dense matrix of the spatial operator at time index ``k`` (small lattices only)."""
    grid = a.grid
    n = grid.Nx ** grid.d
    if n > 4096:
        raise GridError("dense assembly is limited to 4096 lattice points")
    m = a.slice(k)
    bb = None if b is None else b.slice(k)
    apply = apply_remainder_adjoint if adjoint else apply_remainder
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        e = e.reshape(grid.spatial_shape)
        cols.append((apply(e, m, bb, grid.h, grid.d) - lam * e).reshape(-1))
    return np.array(cols).T


# -- time stepping -----------------------------------------------------------

def _reference_matrix(a_slice: np.ndarray, d: int) -> np.ndarray:
    top = float(np.linalg.eigvalsh(a_slice.reshape(-1, d, d)).max())
    return top * np.eye(d)


def _max_root(zi: np.ndarray, ze: np.ndarray) -> float:
    """Largest root modulus of the SBDF2 characteristic polynomial."""
    A = 1.5 - zi
    B = -(2.0 + 2.0 * ze)
    C = 0.5 + ze
    disc = np.sqrt(B * B - 4 * A * C + 0j)
    return float(np.max(np.maximum(np.abs((-B + disc) / (2 * A)), np.abs((-B - disc) / (2 * A)))))


def check_stability(grid: Grid, a_slice: np.ndarray, b_slice: np.ndarray | None, lam: float, dt: float,
                    n_points: int = 48) -> float:
    """Frozen-coefficient root test of the scheme; raises :class:`StabilityError`.

    Coefficients are frozen at the lattice points where the drift is largest
    and where ``a`` is extreme, and every lattice frequency is tested.
    """
    d, h = grid.d, grid.h
    abar = _reference_matrix(a_slice, d)
    zi = dt * (core_symbol(grid, abar) - lam)
    flat_a = a_slice.reshape(-1, d, d)
    eig = np.linalg.eigvalsh(flat_a)
    picks = {int(np.argmin(eig[:, 0])), int(np.argmax(eig[:, -1]))}
    if b_slice is not None:
        bn = np.linalg.norm(b_slice.reshape(-1, d), axis=-1)
        picks.update(int(i) for i in np.argsort(bn)[-n_points:])
    theta = grid.frequencies() * h
    worst = 0.0
    for p in picks:
        m = flat_a[p] - abar
        ze = np.zeros(grid.spatial_shape, dtype=complex)
        for i in range(d):
            ze -= m[i, i] * 4.0 * np.sin(theta[..., i] / 2) ** 2 / h ** 2
            for j in range(i + 1, d):
                ze -= 2.0 * m[i, j] * np.sin(theta[..., i]) * np.sin(theta[..., j]) / h ** 2
            if b_slice is not None:
                ze += 1j * b_slice.reshape(-1, d)[p, i] * np.sin(theta[..., i]) / h
        worst = max(worst, _max_root(zi, dt * ze))
    if worst > 1.0 + 1e-9:
        raise StabilityError(
            f"explicit remainder unstable (root modulus {worst:.4f} > 1); increase Nt beyond {grid.Nt}"
        )
    return worst


def _march(grid: Grid, a: GridFn, b: GridFn | None, lam: float, source: Callable[[int], np.ndarray | None],
           init: np.ndarray, steps: Sequence[int], adjoint: bool, check_residual: bool,
           check_stab: bool = True) -> np.ndarray:
    """Advance along the time indices ``steps`` (monotone, length >= 2).

    ``steps[n]`` is the lattice time index of the n-th state; coefficients and
    sources are read at those indices.  Returns the states, shape
    ``(len(steps),) + spatial``.
    """
    d, h, dt = grid.d, grid.h, grid.dt
    axes = tuple(range(d))
    apply = apply_remainder_adjoint if adjoint else apply_remainder
    static = not a.time_dependent and (b is None or not b.time_dependent)

    def coeffs(k):
        a_k = a.slice(k)
        abar = _reference_matrix(a_k, d)
        return a_k - abar, (None if b is None else b.slice(k)), core_symbol(grid, abar) - lam

    cache = {}

    def get(k):
        key = 0 if static else k
        if key not in cache:
            cache.clear() if len(cache) > 4 else None
            cache[key] = coeffs(k)
        return cache[key]

    if check_stab:
        for k in ([steps[0]] if static else steps[:: max(1, len(steps) // 8)]):
            check_stability(grid, a.slice(k), None if b is None else b.slice(k), lam, dt)

    def explicit(k, u):
        m, bb, _ = get(k)
        out = apply(u, m, bb, h, d)
        src = source(k)
        if src is not None:
            out = out + src
        return out

    n_states = len(steps)
    out = np.empty((n_states,) + grid.spatial_shape)
    out[0] = init
    if n_states == 1:
        return out
    # first step: semi-implicit Euler
    N_prev = explicit(steps[0], out[0])
    sym = get(steps[1])[2]
    rhs = out[0] + dt * N_prev
    out[1] = sfft.ifftn(sfft.fftn(rhs, axes=axes) / (1.0 - dt * sym), axes=axes).real
    for n in range(1, n_states - 1):
        N_cur = explicit(steps[n], out[n])
        sym = get(steps[n + 1])[2]
        rhs = 2.0 * out[n] - 0.5 * out[n - 1] + dt * (2.0 * N_cur - N_prev)
        uhat = sfft.fftn(rhs, axes=axes) / (1.5 - dt * sym)
        out[n + 1] = sfft.ifftn(uhat, axes=axes).real
        if check_residual:
            Lu = sfft.ifftn(sym * uhat, axes=axes).real
            res = np.max(np.abs(1.5 * out[n + 1] - dt * Lu - rhs))
            scale = max(1.0, float(np.max(np.abs(out[n + 1]))), float(np.max(np.abs(rhs))))
            if res > 1e-8 * scale:
                raise StabilityError(f"step residual {res:.3e} exceeds tolerance at step {n + 1}")
        if not np.all(np.isfinite(out[n + 1])):
            raise StabilityError(f"non-finite state at step {n + 1}; increase Nt beyond {grid.Nt}")
        N_prev = N_cur
    return out


def solve_forward(prob: ParabolicProblem, initial: GridFn | np.ndarray | None = None,
                  check_residual: bool = True) -> GridFn:
    """Solve the forward problem on all ``Nt + 1`` slices of ``prob.a.grid``; ``u(0) = 0`` by default."""
    if prob.direction != "forward":
        raise ValueError("solve_forward needs a forward problem")
    grid = prob.grid
    init = _initial_array(initial, grid)
    f = prob.f
    source = (lambda k: None) if f is None else (lambda k: f.slice(k))
    states = _march(grid, prob.a, prob.b, prob.lam, source, init, list(range(grid.Nt + 1)),
                    adjoint=False, check_residual=check_residual)
    return GridFn(grid, states, "scalar")


def solve_backward(prob: ParabolicProblem, terminal: GridFn | np.ndarray | None = None,
                   check_residual: bool = True) -> GridFn:
    """Solve the backward adjoint problem from ``w(T) = terminal`` (zero by default) down to 0."""
    if prob.direction != "backward-adjoint":
        raise ValueError("solve_backward needs a backward-adjoint problem")
    grid = prob.grid
    init = _initial_array(terminal, grid)
    f = prob.f
    source = (lambda k: None) if f is None else (lambda k: f.slice(k))
    steps = list(range(grid.Nt, -1, -1))
    states = _march(grid, prob.a, prob.b, prob.lam, source, init, steps, adjoint=True,
                    check_residual=check_residual)
    return GridFn(grid, states[::-1].copy(), "scalar")


def _initial_array(init, grid: Grid) -> np.ndarray:
    if init is None:
        return np.zeros(grid.spatial_shape)
    if isinstance(init, GridFn):
        if init.time_dependent:
            raise GridError("initial/terminal data must be static")
        return np.array(init.values[0])
    return np.asarray(init, dtype=float).reshape(grid.spatial_shape)


def propagate(a: GridFn, lam: float, data: GridFn, s: float, t: float, adjoint: bool = False,
              b: GridFn | None = None) -> np.ndarray:
    """Semigroup ``T_{s,t} data`` (forward) or ``T*_{s,t} data`` (adjoint) without source."""
    grid = a.grid
    ks, kt = grid.time_index(s), grid.time_index(t)
    if kt < ks:
        raise ValueError("need s <= t")
    init = _initial_array(data, grid)
    if kt == ks:
        return init
    steps = list(range(ks, kt + 1))
    if adjoint:
        steps = steps[::-1]
    return _march(grid, a, b, lam, lambda k: None, init, steps, adjoint=adjoint, check_residual=False)[-1]


def lattice_inner(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    return float(np.sum(u * v) * grid.cell_volume)


def duality_residual(a: GridFn, lam: float, phi: GridFn, psi: GridFn, s: float, t: float,
                     b: GridFn | None = None) -> float:
    """``|<T_{s,t} phi, psi> - <phi, T*_{s,t} psi>|`` with the lattice inner product."""
    grid = a.grid
    fwd = propagate(a, lam, phi, s, t, adjoint=False, b=b)
    bwd = propagate(a, lam, psi, s, t, adjoint=True, b=b)
    return abs(lattice_inner(fwd, _initial_array(psi, grid), grid) - lattice_inner(_initial_array(phi, grid), bwd, grid))


# -- maximal regularity survey ------------------------------------------------

def time_derivative(u: GridFn) -> GridFn:
    """Backward difference on the solver's time grid (forward difference at t = 0)."""
    v = u.values
    dt = u.grid.dt
    du = np.empty_like(v)
    du[1:] = (v[1:] - v[:-1]) / dt
    du[0] = du[1]
    return GridFn(u.grid, du, "scalar")


@dataclass
class MaxRegReport:
    rows: list
    params: dict

    @property
    def family_max(self) -> dict:
        keys = ("sup_term", "dt_term", "h2_term")
        return {k: max(r[k] for r in self.rows) for k in keys}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source_id", "sup_term", "dt_term", "h2_term"])
            for r in self.rows:
                w.writerow([r["source_id"], r["sup_term"], r["dt_term"], r["h2_term"]])

    def to_json(self) -> str:
        return json.dumps({"params": self.params, "family_max": self.family_max, "rows": self.rows})


def max_reg_survey(a: GridFn, b: GridFn | None, lam: float, sources: Sequence[GridFn], np_: NormParams,
                   names: Sequence[str] | None = None) -> MaxRegReport:
    """Solve for each source and report the three left-hand terms divided by ``|||f|||_{L~^p_q}``.

    The terms are ``lam^{1 - alpha/2 - 1/q} |||u|||_{H~^{alpha,p}_inf}``,
    ``|||d_t u|||_{L~^p_q}`` and ``|||u|||_{H~^{2,p}_q}``.
    """
    q = np_.q
    if not 0 <= np_.alpha < 2 - 2 / q:
        raise ValueError(f"alpha must lie in [0, 2 - 2/q) = [0, {2 - 2 / q})")
    expo = 1.0 - np_.alpha / 2.0 - (0.0 if q == INF else 1.0 / q)
    rows = []
    for i, f in enumerate(sources):
        u = solve_forward(ParabolicProblem(a, b, lam, f))
        fnorm = localized_value(f, np_.replace(alpha=0.0))
        rows.append({
            "source_id": names[i] if names else f"s{i}",
            "sup_term": lam ** expo * localized_value(u, np_.replace(q=INF)) / fnorm,
            "dt_term": localized_value(time_derivative(u), np_.replace(alpha=0.0)) / fnorm,
            "h2_term": localized_value(u, np_.replace(alpha=2.0)) / fnorm,
        })
    params = {"lam": lam, "alpha": np_.alpha, "p": np_.p, "q": "inf" if q == INF else q, "r": np_.r}
    return MaxRegReport(rows, params)


def lambda_sweep(a: GridFn, sources: Sequence[GridFn], lams: Sequence[float], np_: NormParams,
                 b: GridFn | None = None) -> list[dict]:
    """``lam^{1-1/q} |||u_lam|||_{L~^p_inf} / |||f|||_{L~^p_q}`` per ``lam``: per-source values and family max."""
    q = np_.q
    expo = 1.0 - (0.0 if q == INF else 1.0 / q)
    base = np_.replace(alpha=0.0)
    fnorms = [localized_value(f, base) for f in sources]
    out = []
    for lam in lams:
        vals = []
        for f, fn in zip(sources, fnorms):
            u = solve_forward(ParabolicProblem(a, b, lam, f), check_residual=False)
            vals.append(lam ** expo * localized_value(u, base.replace(q=INF)) / fn)
        out.append({"lam": float(lam), "values": vals, "family_max": max(vals)})
    return out


def smooth_source_family(grid: Grid, count: int = 10, horizon_gap: float | None = None) -> list[GridFn]:
    """Spatially smooth sources with a range of temporal profiles.

    Spatial shapes cycle through Fourier modes and Gaussian bumps; temporal
    profiles include steady, ramped, decaying and end-loaded
    ``(T + gap - t)^(-0.45)`` profiles.  Every source is smooth on ``[0, T]``.
    """
    gap = grid.dt / 2 if horizon_gap is None else horizon_gap
    x = grid.points()
    t = grid.times()
    T = grid.T
    spatial = [
        lambda x: np.cos(x[..., 0]),
        lambda x: np.exp(-np.sum(x ** 2, axis=-1)),
        lambda x: np.sin(x[..., 0]) * np.cos(x[..., -1]) + 0.5,
        lambda x: np.exp(-2.0 * np.sum((x - 0.5) ** 2, axis=-1)),
        lambda x: 1.0 + 0.5 * np.cos(2 * x[..., -1]),
    ]
    temporal = [
        lambda t: (T + gap - t) ** -0.45,
        lambda t: np.ones_like(t),
        lambda t: (T + gap - t) ** -0.3 * (1 + t),
        lambda t: np.exp(-t),
        lambda t: t / T + (T + gap - t) ** -0.4,
    ]
    out = []
    for i in range(count):
        sp = spatial[i % len(spatial)](x)
        tp = temporal[(i // 2 + i) % len(temporal)](t)
        out.append(GridFn(grid, tp.reshape((-1,) + (1,) * grid.d) * sp[None], "scalar"))
    return out
