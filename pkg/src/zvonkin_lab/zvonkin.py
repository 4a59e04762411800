"""Zvonkin's transformation ``Phi(t, x) = x + u(t, x)``.

``u`` solves, componentwise, the backward equation

    d_t u + a^{ij} d_i d_j u - lam u + b^i d_i u + b = 0,   u(T) = 0,

with ``a = sigma sigma^T / 2``.  It is computed with the forward solver in
reversed time ``tau = T - t``.  ``lam`` is doubled from ``lam0`` until
``max|u| + max|grad u| <= 1/2``.  Then ``Phi`` is a diffeomorphism and
``Y = Phi(t, X)`` solves ``dY = b~ dt + sigma~ dW`` with
``sigma~ = (grad Phi sigma) o Phi^{-1}`` and ``b~ = lam u o Phi^{-1}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientField, gridded_field
from .grid import Grid, GridFn, centered_gradient, interpolate
from .pde import ParabolicProblem, certify, diffusion_from_sigma, solve_forward
from .sde import brownian_increments, combined_se, mean_se, simulate, within_bands, EstimatorReport

SMALLNESS_TARGET = 0.5
MAX_DOUBLINGS = 20


class CalibrationError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class InversionError(RuntimeError):
    pass


def _time_interp(values: np.ndarray, grid: Grid, t: float, x: np.ndarray) -> np.ndarray:
    nt = values.shape[0]
    if nt == 1:
        return interpolate(values[0], grid, x)
    s = min(max(t / grid.dt, 0.0), nt - 1.0)
    k = min(int(math.floor(s)), nt - 2)
    w = s - k
    out = (1 - w) * interpolate(values[k], grid, x)
    if w > 0:
        out = out + w * interpolate(values[k + 1], grid, x)
    return out


@dataclass
class ZvonkinTransform:
    grid: Grid
    u: GridFn
    lam: float
    sigma: GridFn | None = None
    smallness: float = 0.0
    trace: list = field(default_factory=list)
    grad_u: np.ndarray | None = field(default=None, repr=False)
    _tilde: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad_u is None:
            # grad_u[..., k, i] = d_i u^k
            self.grad_u = centered_gradient(self.u.values, self.grid)
        self.smallness = measure_smallness(self.u.values, self.grad_u)

    @classmethod
    def from_u(cls, grid: Grid, u: GridFn, lam: float = 1.0, sigma: GridFn | None = None):
        """Wrap a given displacement ``u`` (for example an injected synthetic one)."""
        return cls(grid, u, lam, sigma)

    def u_at(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, float)
        return _time_interp(self.u.values, self.grid, t, x.reshape(-1, self.grid.d)).reshape(x.shape)

    def phi(self, t: float, x) -> np.ndarray:
        return np.asarray(x, float) + self.u_at(t, x)

    def grad_phi(self, t: float, x) -> np.ndarray:
        d = self.grid.d
        x = np.asarray(x, float).reshape(-1, d)
        return np.eye(d) + _time_interp(self.grad_u, self.grid, t, x)

    def phi_inverse(self, t: float, y, tol: float = 1e-10, max_iter: int = 60, return_trace: bool = False):
        """Fixed point ``x <- y - u(t, x)`` from ``x = y``; stops when every step moves ``<= tol``."""
        y = np.asarray(y, float)
        pts = y.reshape(-1, self.grid.d)
        x = pts.copy()
        steps = []
        for it in range(1, max_iter + 1):
            nxt = pts - _time_interp(self.u.values, self.grid, t, x)
            move = np.linalg.norm(nxt - x, axis=-1)
            steps.append(move)
            x = nxt
            if move.max() <= tol:
                out = x.reshape(y.shape)
                if return_trace:
                    return out, {"iterations": it, "moves": np.array(steps)}
                return out
        raise InversionError(f"fixed-point inversion did not converge in {max_iter} iterations "
                             f"(last move {move.max():.3e})")

    def transformed_coefficients(self) -> tuple[GridFn, GridFn]:
        """Lattice ``(sigma~, b~)`` on every time slice of the transform grid."""
        if self._tilde is None:
            g, d = self.grid, self.grid.d
            nt = self.u.values.shape[0]
            pts = g.points().reshape(-1, d)
            sig = np.empty((nt,) + g.spatial_shape + (d, d))
            bt = np.empty((nt,) + g.spatial_shape + (d,))
            for k in range(nt):
                t = k * g.dt
                x = self.phi_inverse(t, pts)
                jac = np.eye(d) + interpolate(self.grad_u[k], g, x)
                s = np.broadcast_to(np.eye(d), jac.shape) if self.sigma is None else interpolate(self.sigma.slice(k), g, x)
                sig[k] = (jac @ s).reshape(g.spatial_shape + (d, d))
                bt[k] = (self.lam * interpolate(self.u.values[k], g, x)).reshape(g.spatial_shape + (d,))
            self._tilde = (GridFn(g, sig, "matrix"), GridFn(g, bt, "vector"))
        return self._tilde

    def transformed_field(self) -> CoefficientField:
        sig, bt = self.transformed_coefficients()
        return gridded_field(self.grid, bt.values, sig.values, periodic=True, name="zvonkin-transformed")

    def ellipticity_range(self) -> tuple[float, float]:
        """Min/max Rayleigh quotients of ``sigma~ sigma~^T / 2`` over the lattice."""
        sig, _ = self.transformed_coefficients()
        d = self.grid.d
        s = sig.values.reshape(-1, d, d)
        eig = np.linalg.eigvalsh(0.5 * s @ np.swapaxes(s, -1, -2))
        return float(eig.min()), float(eig.max())

    def summary(self) -> dict:
        lo, hi = self.ellipticity_range()
        return {"lambda": self.lam, "smallness": self.smallness, "trace": self.trace,
                "sigma_tilde_ellipticity": [lo, hi],
                "grad_phi_max": float(np.max(np.linalg.norm(np.eye(self.grid.d) + self.grad_u, ord=2, axis=(-2, -1))))}


def measure_smallness(u: np.ndarray, grad_u: np.ndarray) -> float:
    """Lattice ``max |u| + max |grad u|`` (Euclidean and Frobenius norms)."""
    return float(np.max(np.linalg.norm(u, axis=-1)) + np.max(np.sqrt(np.sum(grad_u ** 2, axis=(-1, -2)))))


def solve_transform_pde(sigma: GridFn, b: GridFn, lam: float) -> GridFn:
    """Vector solution ``u`` of the backward equation on the grid of ``b`` (all time slices)."""
    grid = b.grid
    a = diffusion_from_sigma(sigma)
    rev = (lambda f: f) if not b.time_dependent else (lambda f: f.with_values(f.values[::-1]))
    a_rev = a if not a.time_dependent else a.with_values(a.values[::-1])
    b_rev = rev(b)
    comps = []
    for i in range(grid.d):
        prob = ParabolicProblem(a_rev, b_rev, lam, b_rev.component(i))
        v = solve_forward(prob, check_residual=False)
        comps.append(v.values[::-1])
    return GridFn(grid, np.stack(comps, axis=-1), "vector")


def build_transform(sigma, b, T: float | None = None, grid: Grid | None = None, lam0: float = 1.0,
                    target: float = SMALLNESS_TARGET, max_doublings: int = MAX_DOUBLINGS) -> ZvonkinTransform:
    """Calibrate ``lam = lam0 2^k`` until the smallness condition holds.

    ``sigma``, ``b`` are GridFns on ``grid`` or a :class:`CoefficientField`
    (sampled onto ``grid``, whose time horizon is replaced by ``T``).
    """
    if isinstance(sigma, CoefficientField):
        if grid is None:
            raise ValueError("a grid is needed to sample a coefficient field")
        if T is not None:
            grid = grid.with_time(T, grid.Nt)
        sigma, b = sigma.on_grid(grid)
    grid = b.grid
    certify(diffusion_from_sigma(sigma))
    trace = []
    lam = lam0
    for k in range(max_doublings + 1):
        u = solve_transform_pde(sigma, b, lam)
        tf = ZvonkinTransform(grid, u, lam, sigma)
        trace.append({"lambda": lam, "smallness": tf.smallness})
        if tf.smallness <= target:
            tf.trace = trace
            return tf
        lam *= 2.0
    raise CalibrationError(f"smallness stayed above {target} after {max_doublings} doublings", trace)


def conjugacy_check(cf: CoefficientField, tf: ZvonkinTransform, x0, T: float, Nt: int, M: int, seed=0,
                    battery=None, dW: np.ndarray | None = None) -> EstimatorReport:
    """Simulate ``X`` directly and ``Y`` from ``Phi(0, x0)`` with the same noise and compare.

    Reports ``max_t E|Phi(t, X_t) - Y_t|`` and weak errors
    ``|E g(Phi(T, X_T)) - E g(Y_T)|`` for a battery of bounded test functions.
    """
    d = cf.d
    x0 = np.asarray(x0, float)
    if battery is None:
        battery = default_battery()
    if dW is None:
        dW = brownian_increments(M, Nt, d, T, seed)
    X = simulate(cf, x0, T, Nt, M, dW=dW)
    y0 = tf.phi(0.0, x0)
    Y = simulate(tf.transformed_field(), y0, T, Nt, M, dW=dW)
    times = X.times()
    disc = np.empty(Nt + 1)
    for k in range(Nt + 1):
        disc[k] = np.mean(np.linalg.norm(tf.phi(times[k], X.X[:, k]) - Y.X[:, k], axis=-1))
    PX = tf.phi(T, X.X[:, -1])
    YT = Y.X[:, -1]
    rows = []
    for name, g in battery:
        gx, gy = g(PX), g(YT)
        mx, sx = mean_se(gx)
        my, sy = mean_se(gy)
        _, paired = mean_se(gx - gy)
        diff = float(mx - my)
        cse = float(combined_se(sx, sy))
        rows.append({"g": name, "weak_error": abs(diff), "combined_se": cse, "paired_se": float(paired),
                     "within_3se": within_bands(diff, cse)})
    return EstimatorReport(float(disc.max()), None, M,
                           {"x0": x0, "T": T, "Nt": Nt, "seed": seed, "lambda": tf.lam}, rows,
                           {"pathwise_discrepancy": float(disc.max()),
                            "weak_errors": [r["weak_error"] for r in rows],
                            "all_within_3se": all(r["within_3se"] for r in rows)})


def default_battery():
    return [
        ("sin(y1)", lambda y: np.sin(y[:, 0])),
        ("cos(y2)", lambda y: np.cos(y[:, -1])),
        ("exp(-|y|^2)", lambda y: np.exp(-np.sum(y ** 2, axis=-1))),
        ("tanh(y1+y2)", lambda y: np.tanh(y.sum(axis=-1))),
    ]
