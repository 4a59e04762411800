"""Coefficient families for the SDE ``dX = b(t, X) dt + sigma(t, X) dW``.

Families
--------
A  ``sigma = I``, ``b = 0``.
B  ``sigma = I``, ``b = -kappa x`` (linear; closed forms available).
C  subcritical singular drift ``b = c x/|x| |x|^{-beta} chi(|x|/rc)``.
D  critical drift ``b = c x/|x| |x|^{-1} (1 + |ln|x||)^{-1/2} chi(|x|/rc)``,
   which lies in ``L^d`` locally but in no ``L^p`` with ``p > d``.
E  Sobolev diffusion ``sigma = (1 + s |x|^{1/2} chi(|x|)) I`` with ``b = 0``.

Families C, D and E are singular at the origin.  They are sampled at the
cell centres of a lattice (which never hit the origin), mollified at width
``eps = 1/n`` with the chosen kernel shape, differentiated by centred
differences and evaluated by multilinear interpolation.  Outside the lattice
box they take their far-field values (``b = 0``, ``sigma = I``); every
singular family is compactly supported well inside the box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid, GridFn, Mollifier, bump_profile, build_grid, centered_gradient, interpolate, mollify

FAMILIES = ("A", "B", "C", "D", "E")

DEFAULTS = {
    "A": {"d": 2},
    "B": {"d": 2, "kappa": 1.0},
    "C": {"d": 2, "c": -1.0, "beta": 0.3, "rc": 1.0, "L": math.pi, "Nx": 64},
    "D": {"d": 3, "c": -1.0, "rc": 0.5, "L": 1.5, "Nx": 32},
    "E": {"d": 2, "s": 0.3, "L": math.pi, "Nx": 64},
}

CATALOG = {
    "A": {
        "description": "sigma = I, b = 0 (Brownian motion)",
        "admissible": "all (p, q); no drift",
    },
    "B": {
        "description": "sigma = I, b = -kappa x (linear drift; solver tests only)",
        "admissible": "smooth, locally bounded drift",
    },
    "C": {
        "description": "subcritical singular drift c x/|x| |x|^-0.3 chi(|x|), sigma = I",
        "admissible": "b in L~^p_q with p = 5, q = inf: d/p = 2/5, d/p + 2/q = 0.4 < 1 (subcritical)",
    },
    "D": {
        "description": "critical drift c x/|x| |x|^-1 (1+|ln|x||)^-1/2 chi(2|x|), sigma = I, d = 3",
        "admissible": "critical: b ∈ L̃^{d;uni}_∞ (|b|^3 integrable, in no L^p with p > d)",
    },
    "E": {
        "description": "Sobolev diffusion sigma = (1 + 0.3 |x|^1/2 chi(|x|)) I, b = 0",
        "admissible": "grad sigma in L~^p_q with p < 2d; sigma uniformly elliptic and continuous",
    },
}


class CoefficientError(ValueError):
    pass


@dataclass
class Evaluation:
    """Coefficient values at a batch of points.

    ``grad_b[m, i, k] = d_k b^i`` and ``grad_sigma[m, i, j, k] = d_k sigma^{ij}``;
    gradients are ``None`` unless requested.
    """

    b: np.ndarray
    sigma: np.ndarray
    grad_b: np.ndarray | None = None
    grad_sigma: np.ndarray | None = None


class _Gridded:
    """Lattice field packed as ``[b, sigma, grad b, grad sigma]`` per point.

    ``values`` has shape ``(nt,) + spatial + (ncomp,)``; time is interpolated
    linearly over the lattice time grid when ``nt > 1``.
    """

    def __init__(self, grid: Grid, b: np.ndarray, sigma: np.ndarray, periodic: bool,
                 with_grad: bool = True):
        d = grid.d
        nt = b.shape[0]
        self.grid, self.d, self.periodic = grid, d, periodic
        parts = [b.reshape(nt, *grid.spatial_shape, d), sigma.reshape(nt, *grid.spatial_shape, d * d)]
        self.with_grad = with_grad
        if with_grad:
            gb = centered_gradient(b, grid)
            gs = centered_gradient(sigma, grid)
            parts += [gb.reshape(nt, *grid.spatial_shape, d * d), gs.reshape(nt, *grid.spatial_shape, d ** 3)]
        self.values = np.concatenate(parts, axis=-1)
        self.far = np.concatenate([np.zeros(d), np.eye(d).ravel(), np.zeros(d * d + d ** 3 if with_grad else 0)])
        self.light = d + d * d

    def __call__(self, t: float, x: np.ndarray, need_grad: bool) -> Evaluation:
        d = self.d
        width = self.values.shape[-1] if need_grad else self.light
        if need_grad and not self.with_grad:
            raise CoefficientError("field was built without gradients")
        vals = self.values[..., :width]
        fill = self.far[:width]
        nt = vals.shape[0]
        if nt == 1:
            out = interpolate(vals[0], self.grid, x, self.periodic, fill)
        else:
            s = min(max(t / self.grid.dt, 0.0), nt - 1.0)
            k = min(int(math.floor(s)), nt - 2)
            w = s - k
            out = (1 - w) * interpolate(vals[k], self.grid, x, self.periodic, fill)
            if w > 0:
                out += w * interpolate(vals[k + 1], self.grid, x, self.periodic, fill)
        m = x.shape[0]
        ev = Evaluation(out[:, :d], out[:, d:d + d * d].reshape(m, d, d))
        if need_grad:
            ev.grad_b = out[:, d + d * d:d + 2 * d * d].reshape(m, d, d)
            ev.grad_sigma = out[:, d + 2 * d * d:].reshape(m, d, d, d)
        return ev


@dataclass
class CoefficientField:
    """Mollified coefficient pair ``(sigma, b)`` with evaluators and gradients.

    Use :func:`family` to build one; ``at_level(n)`` re-mollifies at
    ``eps = 1/n``.
    """

    family: str
    d: int
    params: dict
    eps: float | None
    shape: str
    c0: float
    evaluator: Callable = field(repr=False)
    lattice: Grid | None = field(default=None, repr=False)
    diagonal_unit_sigma: bool = False

    def evaluate(self, t: float, x: np.ndarray, need_grad: bool = False) -> Evaluation:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        return self.evaluator(t, x, need_grad)

    def sigma(self, t, x):
        return self.evaluate(t, x).sigma

    def drift(self, t, x):
        return self.evaluate(t, x).b

    def at_level(self, n: int, shape: str | None = None) -> "CoefficientField":
        if self.family not in FAMILIES:
            raise CoefficientError(f"field {self.family!r} has no mollification ladder")
        return family(self.family, eps=1.0 / n, shape=shape or self.shape, **self.params)

    def with_shape(self, shape: str) -> "CoefficientField":
        if self.family not in FAMILIES:
            raise CoefficientError(f"field {self.family!r} has no mollification ladder")
        return family(self.family, eps=self.eps, shape=shape, **self.params)

    def on_grid(self, grid: Grid) -> tuple[GridFn, GridFn]:
        """Static ``(sigma, b)`` GridFns sampled at the lattice points of ``grid``."""
        if grid.d != self.d:
            raise CoefficientError("dimension mismatch")
        pts = grid.points().reshape(-1, self.d)
        ev = self.evaluate(0.0, pts)
        sig = ev.sigma.reshape((1,) + grid.spatial_shape + (self.d, self.d))
        b = ev.b.reshape((1,) + grid.spatial_shape + (self.d,))
        return GridFn(grid, sig, "matrix"), GridFn(grid, b, "vector")

    def describe(self) -> dict:
        return {"family": self.family, "d": self.d, "params": dict(self.params), "eps": self.eps,
                "shape": self.shape, "c0": self.c0}


def _unit_sigma(m, d):
    return np.broadcast_to(np.eye(d), (m, d, d)).copy()


def _analytic(b_fn, grad_b_fn, d, sigma_fn=None, grad_sigma_fn=None):
    def ev(t, x, need_grad):
        m = x.shape[0]
        sig = _unit_sigma(m, d) if sigma_fn is None else sigma_fn(t, x)
        out = Evaluation(b_fn(t, x), sig)
        if need_grad:
            out.grad_b = grad_b_fn(t, x)
            out.grad_sigma = np.zeros((m, d, d, d)) if grad_sigma_fn is None else grad_sigma_fn(t, x)
        return out
    return ev


def _radial(x, profile):
    """``x/|x| * profile(|x|)`` on an array of points ``(..., d)``."""
    r = np.linalg.norm(x, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, profile(np.where(r > 0, r, 1.0)) / np.where(r > 0, r, 1.0), 0.0)
    return x * scale[..., None]


def raw_drift(name: str, params: dict) -> Callable[[np.ndarray], np.ndarray]:
    """Unmollified singular drift of family C or D as a function of points."""
    if name == "C":
        c, beta, rc = params["c"], params["beta"], params["rc"]
        return lambda x: _radial(x, lambda r: c * r ** (-beta) * bump_profile(r / rc))
    if name == "D":
        c, rc = params["c"], params["rc"]
        return lambda x: _radial(x, lambda r: c / r / np.sqrt(1.0 + np.abs(np.log(r))) * bump_profile(r / rc))
    raise CoefficientError(f"family {name} has no singular drift")


def family(name: str, eps: float | None = None, shape: str = "gaussian-truncated", n: int | None = None,
           **params) -> CoefficientField:
    """Build family ``name`` (``A``-``E``); singular families need ``eps`` or ``n``."""
    name = name.upper()
    if name not in FAMILIES:
        raise CoefficientError(f"unknown family {name!r}; choose one of {', '.join(FAMILIES)}")
    unknown = set(params) - set(DEFAULTS[name])
    if unknown:
        raise CoefficientError(f"unknown parameters for family {name}: {sorted(unknown)}")
    p = {**DEFAULTS[name], **params}
    d = int(p["d"])
    if n is not None:
        eps = 1.0 / n
    if name == "A":
        ev = _analytic(lambda t, x: np.zeros_like(x), lambda t, x: np.zeros((x.shape[0], d, d)), d)
        return CoefficientField(name, d, p, eps, shape, 1.0, ev, diagonal_unit_sigma=True)
    if name == "B":
        k = float(p["kappa"])
        ev = _analytic(lambda t, x: -k * x, lambda t, x: np.broadcast_to(-k * np.eye(d), (x.shape[0], d, d)).copy(), d)
        return CoefficientField(name, d, p, eps, shape, 1.0, ev, diagonal_unit_sigma=True)
    if eps is None:
        raise CoefficientError(f"family {name} is singular; give a mollification width eps or level n")
    grid = build_grid(d, float(p["L"]), int(p["Nx"]), 1.0, 1)
    moll = Mollifier(shape, eps)
    pts = grid.points()
    if name in ("C", "D"):
        b_raw = GridFn(grid, raw_drift(name, p)(pts)[None], "vector")
        b = mollify(b_raw, moll).values
        sig = np.broadcast_to(np.eye(d), (1,) + grid.spatial_shape + (d, d)).copy()
        c0 = 1.0
    else:
        r = np.linalg.norm(pts, axis=-1)
        amp = p["s"] * np.sqrt(r) * bump_profile(r)
        amp = mollify(GridFn(grid, amp[None], "scalar"), moll).values
        sig = (1.0 + amp)[..., None, None] * np.eye(d)
        b = np.zeros((1,) + grid.spatial_shape + (d,))
        top = float((1.0 + amp.max()) ** 2)
        c0 = max(top, 1.0)
    gridded = _Gridded(grid, b, sig, periodic=False)
    return CoefficientField(name, d, p, eps, shape, c0,
                            gridded, grid, diagonal_unit_sigma=name in ("C", "D"))


def custom_field(d: int, b_fn: Callable, grad_b_fn: Callable, sigma_fn: Callable | None = None,
                 grad_sigma_fn: Callable | None = None, c0: float = 1.0, name: str = "custom") -> CoefficientField:
    """Analytic time-independent field from point-wise callables of ``x`` with shape ``(m, d)``."""
    ev = _analytic(lambda t, x: b_fn(x), lambda t, x: grad_b_fn(x), d,
                   None if sigma_fn is None else (lambda t, x: sigma_fn(x)),
                   None if grad_sigma_fn is None else (lambda t, x: grad_sigma_fn(x)))
    return CoefficientField(name, d, {}, None, "none", c0, ev, diagonal_unit_sigma=sigma_fn is None)


def gridded_field(grid: Grid, b: np.ndarray, sigma: np.ndarray, periodic: bool = True, with_grad: bool = False,
                  name: str = "gridded", c0: float | None = None) -> CoefficientField:
    """Field from lattice arrays ``b (nt, *spatial, d)`` and ``sigma (nt, *spatial, d, d)``."""
    if c0 is None:
        s = sigma.reshape(-1, grid.d, grid.d)
        sv = np.linalg.svd(s, compute_uv=False)
        c0 = float(max(sv.max() ** 2, 1.0 / sv.min() ** 2))
    ev = _Gridded(grid, b, sigma, periodic, with_grad)
    unit = bool(np.all(sigma == np.eye(grid.d)))
    return CoefficientField(name, grid.d, {}, None, "none", c0, ev, grid, diagonal_unit_sigma=unit)


def smooth_drift_example(d: int = 2, amp: float = 0.5) -> CoefficientField:
    """``b = amp (sin x_2, sin x_1)``, ``sigma = I``; periodic and smooth."""
    if d != 2:
        raise CoefficientError("the smooth drift example is two-dimensional")

    def b(x):
        return amp * np.stack([np.sin(x[:, 1]), np.sin(x[:, 0])], axis=-1)

    def gb(x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 1] = amp * np.cos(x[:, 1])
        out[:, 1, 0] = amp * np.cos(x[:, 0])
        return out

    return custom_field(2, b, gb, name="smooth-b")


def catalog() -> list[dict]:
    rows = []
    for name in FAMILIES:
        rows.append({"family": name, **CATALOG[name], "defaults": dict(DEFAULTS[name]),
                     "levels": "eps_n = 1/n, n in {2, 4, 8}" if name in "CDE" else "smooth (no mollification)"})
    return rows
