"""Euler-Maruyama ensembles, flow derivatives and Monte-Carlo estimators.

Paths are generated in fixed-size blocks.  Block ``i`` draws its Brownian
increments from the ``i``-th child of ``SeedSequence(seed)``, so an ensemble
is bit-identical whatever the number of worker threads.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .coefficients import CoefficientField
from .grid import GridFn, interpolate
from .norms import NormParams, localized_value

BLOCK = 4096
DEFAULT_PATH_STEP_BUDGET = 4e7
DEFAULT_FLOAT_BUDGET = 1.6e8


class BudgetError(ValueError):
    """Requested ensemble exceeds the configured budget."""


class BlowUpError(RuntimeError):
    """A path produced a non-finite state."""


class EstimatorError(ValueError):
    pass


# -- Brownian increments -----------------------------------------------------

def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def brownian_increments(M: int, Nt: int, d: int, T: float, seed, block: int = BLOCK) -> np.ndarray:
    """Increments ``(M, Nt, d)`` with variance ``T/Nt``; deterministic in ``seed``."""
    nblocks = -(-M // block)
    children = _seed_sequence(seed).spawn(nblocks)
    out = np.empty((M, Nt, d))
    sd = math.sqrt(T / Nt)
    for i, child in enumerate(children):
        lo, hi = i * block, min(M, (i + 1) * block)
        rng = np.random.default_rng(child)
        out[lo:hi] = rng.standard_normal((hi - lo, Nt, d)) * sd
    return out


def coarsen(dW: np.ndarray, factor: int = 2) -> np.ndarray:
    """Sum consecutive increments: the same Brownian path on a coarser time grid."""
    M, Nt, d = dW.shape
    if Nt % factor:
        raise ValueError("number of steps is not divisible by the coarsening factor")
    return dW.reshape(M, Nt // factor, factor, d).sum(axis=2)


# -- ensembles ---------------------------------------------------------------

@dataclass
class PathEnsemble:
    """``X[m, k]`` is the state of path ``m`` at ``t_k = k T / Nt``."""

    field: CoefficientField
    x0: np.ndarray
    T: float
    Nt: int
    seed: object
    X: np.ndarray
    dW: np.ndarray
    J: np.ndarray | None = None
    block: int = BLOCK

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[-1]

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt + 1)

    def path_seed(self, m: int) -> dict:
        """Provenance of path ``m``: master seed, block (child stream) and row in the block."""
        return {"seed": self.seed if not isinstance(self.seed, np.random.SeedSequence) else str(self.seed.entropy),
                "block": m // self.block, "row": m % self.block}

    def time_index(self, t: float) -> int:
        k = t / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-9 * max(1.0, k) or not 0 <= kr <= self.Nt:
            raise EstimatorError(f"time {t} is not on the simulation grid (dt = {self.dt})")
        return kr

    def dump(self, path) -> None:
        """Write a ``paths v1 M Nt d T`` header then little-endian float64 states ``(M, Nt+1, d)``."""
        with open(path, "wb") as fh:
            fh.write(f"paths v1 {self.M} {self.Nt} {self.d} {self.T!r}\n".encode("ascii"))
            fh.write(np.ascontiguousarray(self.X, dtype="<f8").tobytes())


def load_paths(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) != 6 or header[:2] != ["paths", "v1"]:
        raise ValueError("not a paths v1 file")
    M, Nt, d, T = int(header[2]), int(header[3]), int(header[4]), float(header[5])
    X = np.frombuffer(payload, dtype="<f8").reshape(M, Nt + 1, d).copy()
    return {"M": M, "Nt": Nt, "d": d, "T": T}, X


def _euler_block(cf: CoefficientField, x0: np.ndarray, dW: np.ndarray, T: float, with_flow: bool,
                 offset: int, frozen: bool = False):
    B, Nt, d = dW.shape
    dt = T / Nt
    X = np.empty((B, Nt + 1, d))
    X[:, 0] = x0
    J = None
    if with_flow:
        J = np.empty((B, Nt + 1, d, d))
        J[:, 0] = np.eye(d)
    for k in range(Nt):
        x = X[:, k]
        ev = cf.evaluate(k * dt, x, need_grad=with_flow)
        if cf.diagonal_unit_sigma:
            noise = dW[:, k]
        else:
            noise = np.einsum("mij,mj->mi", ev.sigma, dW[:, k])
        X[:, k + 1] = x + ev.b * dt + noise
        if with_flow:
            Jk = J[:, k]
            G = ev.grad_b * dt
            if not cf.diagonal_unit_sigma:
                G = G + np.einsum("mijk,mj->mik", ev.grad_sigma, dW[:, k])
            J[:, k + 1] = Jk + G @ Jk
        if not np.all(np.isfinite(X[:, k + 1])):
            bad = int(np.argwhere(~np.all(np.isfinite(X[:, k + 1]), axis=-1))[0, 0])
            raise BlowUpError(f"path {offset + bad} became non-finite at step {k + 1}")
    return X, J


def simulate(cf: CoefficientField, x0, T: float, Nt: int, M: int, seed=0, with_flow: bool = False,
             workers: int = 1, dW: np.ndarray | None = None,
             budget: float = DEFAULT_PATH_STEP_BUDGET, float_budget: float = DEFAULT_FLOAT_BUDGET,
             block: int = BLOCK) -> PathEnsemble:
    """Euler-Maruyama ensemble, optionally with the variational flow ``J = grad X``.

    ``x0`` is a point ``(d,)`` or per-path starts ``(M, d)``.  Passing ``dW``
    (shape ``(M, Nt, d)``) reuses a given Brownian path set; otherwise it is
    drawn from ``seed``.
    """
    d = cf.d
    if M < 1 or Nt < 1 or not T > 0:
        raise ValueError("need M >= 1, Nt >= 1 and T > 0")
    if M * Nt > budget:
        raise BudgetError(f"M*Nt = {M * Nt:.3g} exceeds the path-step budget {budget:.3g}")
    floats = M * (Nt + 1) * (2 * d + (d * d if with_flow else 0))
    if floats > float_budget:
        raise BudgetError(f"ensemble needs {floats:.3g} floats, above the memory budget {float_budget:.3g}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape not in ((d,), (M, d)):
        raise ValueError(f"x0 must have shape ({d},) or ({M}, {d})")
    if dW is None:
        dW = brownian_increments(M, Nt, d, T, seed, block)
    elif dW.shape != (M, Nt, d):
        raise ValueError(f"dW must have shape {(M, Nt, d)}, got {dW.shape}")
    X = np.empty((M, Nt + 1, d))
    J = np.empty((M, Nt + 1, d, d)) if with_flow else None
    starts = list(range(0, M, block))

    def run(lo):
        hi = min(M, lo + block)
        xs = x0 if x0.ndim == 1 else x0[lo:hi]
        Xb, Jb = _euler_block(cf, xs, dW[lo:hi], T, with_flow, lo)
        X[lo:hi] = Xb
        if with_flow:
            J[lo:hi] = Jb

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return PathEnsemble(cf, x0, T, Nt, seed, X, dW, J, block)


# -- reports -----------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class EstimatorReport:
    estimate: object
    se: object
    M: int
    params: dict = field(default_factory=dict)
    table: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable({"estimate": self.estimate, "se": self.se, "M": self.M, "params": self.params,
                          "table": self.table, **self.extra})

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def mean_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and standard error (sample std / sqrt(M)) along axis 0."""
    samples = np.asarray(samples, dtype=float)
    M = samples.shape[0]
    mean = samples.mean(axis=0)
    # constant samples: report the common value itself (summation would cost an ulp)
    same = np.all(samples == samples[:1], axis=0)
    mean = np.where(same, samples[0], mean)
    if M < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(M)


def combined_se(*ses) -> np.ndarray:
    return np.sqrt(sum(np.asarray(s, dtype=float) ** 2 for s in ses))


def within_bands(diff, se, k: float = 3.0) -> bool:
    """``|diff| <= k se`` componentwise; exact zero differences always pass."""
    diff, se = np.abs(np.asarray(diff, dtype=float)), np.asarray(se, dtype=float)
    return bool(np.all((diff <= k * se) | (diff <= 1e-14)))


# -- path functionals --------------------------------------------------------

def evaluate_on_paths(f, X: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``f(t_k, X[:, k])`` for every path and step; ``f`` is a GridFn or a callable ``f(t, x)``."""
    M, K, d = X.shape
    out = np.empty((M, K))
    if isinstance(f, GridFn):
        g = f.grid
        for k in range(K):
            if f.time_dependent:
                s = min(max(times[k] / g.dt, 0.0), g.Nt)
                j = min(int(math.floor(s)), g.Nt - 1)
                w = s - j
                v = (1 - w) * interpolate(f.values[j], g, X[:, k]) + w * interpolate(f.values[j + 1], g, X[:, k])
            else:
                v = interpolate(f.values[0], g, X[:, k])
            out[:, k] = v
    else:
        for k in range(K):
            out[:, k] = f(times[k], X[:, k])
    return out


def occupation_integral(ens: PathEnsemble, f, t0: float = 0.0, t1: float | None = None) -> np.ndarray:
    """Per-path left-endpoint sums of ``f(t_k, X_k) dt`` over ``t_k in [t0, t1)``."""
    t1 = ens.T if t1 is None else t1
    k0, k1 = ens.time_index(t0), ens.time_index(t1)
    if isinstance(f, (int, float)):
        return np.full(ens.M, float(f) * (k1 - k0) * ens.dt)
    vals = evaluate_on_paths(f, ens.X[:, k0:k1], ens.times()[k0:k1])
    return vals.sum(axis=1) * ens.dt


def _norm_of(f, np_: NormParams) -> float:
    if isinstance(f, (int, float)):
        raise EstimatorError("pass constants as GridFns to normalise them")
    return localized_value(f, np_)


# -- estimators ----------------------------------------------------------------

def krylov_estimate(ens: PathEnsemble, f: GridFn, np_: NormParams, window: tuple[float, float] | None = None,
                    deltas: Sequence[float] | None = None, theta: float | None = None) -> EstimatorReport:
    """``E int_{t0}^{t1} f(s, X_s) ds / |||f|||_{L~^p_q(t0, t1)}``.

    With ``deltas`` the table holds the short-window ratios
    ``E int_{t0}^{t0+delta} f / (delta^theta |||f|||_{L~^p_q(T)})``.
    """
    if np.any(f.values < 0):
        raise EstimatorError("Krylov estimate needs f >= 0")
    t0, t1 = window if window is not None else (0.0, ens.T)
    norm = _norm_of(f, np_.replace(t0=t0, t1=t1))
    if not norm > 0:
        raise EstimatorError("f has zero localized norm on the window")
    I = occupation_integral(ens, f, t0, t1)
    m, se = mean_se(I)
    table = None
    if deltas:
        if theta is None:
            # parabolic scaling exponent of a space-time L^p_q norm
            theta = 1.0 - ens.d / (2 * np_.p) - (0.0 if math.isinf(np_.q) else 1.0 / np_.q)
        full = _norm_of(f, np_.replace(t0=0.0, t1=None))
        table = []
        for delta in deltas:
            Id = occupation_integral(ens, f, t0, t0 + delta)
            md, sd = mean_se(Id)
            table.append({"delta": delta, "ratio": md / (delta ** theta * full), "se": sd / (delta ** theta * full)})
    return EstimatorReport(m / norm, se / norm, ens.M,
                           {"t0": t0, "t1": t1, "p": np_.p, "q": np_.q, "r": np_.r, "seed": ens.seed},
                           table, {"numerator": m, "numerator_se": se, "norm": norm, "theta": theta})


def krylov_conditional(ens: PathEnsemble, f: GridFn, np_: NormParams, t0: float, t1: float,
                       n_starts: int = 8, M_restart: int = 2000, seed=1) -> EstimatorReport:
    """Ratios conditional on ``X_{t0}``: restart fresh chains from sampled positions at ``t0``.

    Coefficients are time independent, so restarted chains run on ``[0, t1 - t0]``
    with ``f`` read at ``t0 + s``.
    """
    k0 = ens.time_index(t0)
    ens.time_index(t1)
    norm = _norm_of(f, np_.replace(t0=t0, t1=t1))
    uncond = krylov_estimate(ens, f, np_, (t0, t1))
    pick = np.linspace(0, ens.M - 1, n_starts).astype(int)
    steps = int(round((t1 - t0) / ens.dt))
    children = _seed_sequence(seed).spawn(n_starts)
    rows = []
    for i, m in enumerate(pick):
        xi = ens.X[m, k0]
        sub = simulate(ens.field, xi, t1 - t0, steps, M_restart, children[i])
        vals = evaluate_on_paths(f, sub.X[:, :-1], t0 + sub.times()[:-1]).sum(axis=1) * sub.dt
        mm, ss = mean_se(vals)
        rows.append({"start": xi.tolist(), "ratio": mm / norm, "se": ss / norm})
    top = max(r["ratio"] for r in rows)
    return EstimatorReport(top, max(r["se"] for r in rows), M_restart,
                           {"t0": t0, "t1": t1, "n_starts": n_starts}, rows,
                           {"unconditional": uncond.estimate, "unconditional_se": uncond.se})


def khasminskii_estimate(ens: PathEnsemble, f, gamma: float) -> EstimatorReport:
    """``E exp(gamma int_0^T f(s, X_s) ds)`` by log-sum-exp accumulation."""
    if isinstance(f, GridFn) and np.any(f.values < 0):
        raise EstimatorError("Khasminskii estimate needs f >= 0")
    I = gamma * occupation_integral(ens, f)
    M = ens.M
    log_mean = float(logsumexp(I) - math.log(M))
    params = {"gamma": gamma, "seed": ens.seed, "T": ens.T}
    if log_mean > 700:
        return EstimatorReport(math.inf, math.inf, M, params, extra={"log_estimate": log_mean,
                                                                      "status": "exceeds budget"})
    if np.all(I == I[0]):
        se = 0.0
    else:
        shift = float(I.max())
        w = np.exp(I - shift)
        se = float(w.std(ddof=1) / math.sqrt(M) * math.exp(shift))
    return EstimatorReport(math.exp(log_mean), se, M, params, extra={"log_estimate": log_mean, "status": "ok"})


def bel_weight(ens: PathEnsemble, t: float) -> np.ndarray:
    """``V_j = sum_k sum_i [sigma(X_k)^{-1} J_k]_{ij} dW^i_k`` over ``t_k < t``; shape ``(M, d)``.

    For unit diffusion the integrand is the adapted ``J_{k+1}``.
    """
    if ens.J is None:
        raise EstimatorError("ensemble was simulated without the flow")
    kt = ens.time_index(t)
    if kt == 0:
        raise EstimatorError("need t > 0")
    M, d = ens.M, ens.d
    V = np.zeros((M, d))
    cf = ens.field
    for k in range(kt):
        if cf.diagonal_unit_sigma:
            # J_{k+1} = (I + grad b dt) J_k does not see dW_k; with unit noise this
            # makes the discrete weight an exact integration by parts for the Euler chain
            A = ens.J[:, k + 1]
        else:
            sig = cf.evaluate(k * ens.dt, ens.X[:, k]).sigma
            det = np.abs(np.linalg.det(sig))
            if np.any(det < 1e-12):
                raise EstimatorError("singular diffusion matrix along a path")
            A = np.linalg.solve(sig, ens.J[:, k])
        V += np.einsum("mij,mi->mj", A, ens.dW[:, k])
    return V


def bel_gradient(ens: PathEnsemble, phi: Callable[[np.ndarray], np.ndarray], t: float | None = None,
                 fd_delta: float | None = 1e-2) -> EstimatorReport:
    """Bismut-Elworthy-Li estimate of ``grad_x E phi(X_t(x))`` with a finite-difference companion.

    The companion re-simulates from ``x0 +- delta e_i`` with the same
    Brownian increments (common random numbers).
    """
    t = ens.T if t is None else t
    if ens.x0.ndim != 1:
        raise EstimatorError("BEL needs a single starting point")
    kt = ens.time_index(t)
    V = bel_weight(ens, t)
    vals = phi(ens.X[:, kt])
    est, se = mean_se(vals[:, None] * V / t)
    extra = {}
    if fd_delta:
        d = ens.d
        dW = ens.dW[:, :kt]
        diffs = np.empty((ens.M, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = fd_delta
            up = simulate(ens.field, ens.x0 + e, t, kt, ens.M, dW=dW)
            dn = simulate(ens.field, ens.x0 - e, t, kt, ens.M, dW=dW)
            diffs[:, i] = (phi(up.X[:, -1]) - phi(dn.X[:, -1])) / (2 * fd_delta)
        fd, fd_se = mean_se(diffs)
        _, paired = mean_se(vals[:, None] * V / t - diffs)
        extra = {"fd_estimate": fd, "fd_se": fd_se, "combined_se": combined_se(se, fd_se),
                 "paired_se": paired, "fd_delta": fd_delta}
    return EstimatorReport(est, se, ens.M, {"t": t, "x0": ens.x0, "seed": ens.seed}, extra=extra)


def flow_moment_survey(cf: CoefficientField, x0_list, T: float, p_list: Sequence[float],
                       n_list: Sequence[int] | None, M: int, seed=0, Nt: int = 64, workers: int = 1) -> EstimatorReport:
    """``sup_{x0} E sup_{t <= T} |grad X_t(x0)|_F^p`` per mollification level and ``p``."""
    levels = [None] if not n_list else list(n_list)
    rows = []
    for n in levels:
        field_n = cf if n is None else cf.at_level(n)
        per_p = {p: [] for p in p_list}
        for x0 in x0_list:
            ens = simulate(field_n, np.asarray(x0, float), T, Nt, M, seed, with_flow=True, workers=workers)
            # |J|_F^p = (sum J^2)^{p/2}: avoids a sqrt round trip, so J = I gives d^{p/2} exactly
            fro2 = np.sum(ens.J ** 2, axis=(-1, -2)).max(axis=1)
            for p in p_list:
                per_p[p].append(mean_se(fro2 ** (p / 2)))
        for p in p_list:
            j = int(np.argmax([m for m, _ in per_p[p]]))
            rows.append({"n": n, "p": p, "value": float(per_p[p][j][0]), "se": float(per_p[p][j][1]),
                         "argmax_x0": list(map(float, x0_list[j]))})
    est = {f"n={r['n']},p={r['p']}": r["value"] for r in rows}
    return EstimatorReport(est, {f"n={r['n']},p={r['p']}": r["se"] for r in rows}, M,
                           {"T": T, "Nt": Nt, "seed": seed, "p_list": list(p_list), "n_list": levels}, rows)


def pathwise_contraction(cf: CoefficientField, y1, y2, T: float, p: float, M: int, seed=0, Nt: int = 64,
                         workers: int = 1) -> EstimatorReport:
    """``E sup_t |Y^1_t - Y^2_t|^p / |y1 - y2|^p`` with shared noise."""
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    gap = float(np.linalg.norm(y1 - y2))
    if gap == 0:
        raise EstimatorError("starting points coincide; the ratio is degenerate")
    dW = brownian_increments(M, Nt, cf.d, T, seed)
    e1 = simulate(cf, y1, T, Nt, M, dW=dW, workers=workers)
    e2 = simulate(cf, y2, T, Nt, M, dW=dW, workers=workers)
    sup = np.linalg.norm(e1.X - e2.X, axis=-1).max(axis=1)
    m, se = mean_se((sup / gap) ** p)
    return EstimatorReport(float(m), float(se), M, {"y1": y1, "y2": y2, "p": p, "T": T, "Nt": Nt, "seed": seed})


def tightness_modulus(ens: PathEnsemble, deltas: Sequence[float]) -> EstimatorReport:
    """``E sup_s |X_{s+delta} - X_s|^{1/2}`` per ``delta`` (sup over grid times with ``s + delta <= T``)."""
    rows = []
    for delta in deltas:
        if not 0 < delta < ens.T / 2 + 1e-12:
            raise EstimatorError(f"delta={delta} outside (0, T/2)")
        m = ens.time_index(delta)
        inc = np.linalg.norm(ens.X[:, m:] - ens.X[:, :-m], axis=-1)
        stat, se = mean_se(np.sqrt(inc.max(axis=1)))
        rows.append({"delta": float(delta), "value": float(stat), "se": float(se)})
    slope = None
    if len(rows) >= 2 and all(r["value"] > 0 for r in rows):
        slope = float(np.polyfit(np.log([r["delta"] for r in rows]), np.log([r["value"] for r in rows]), 1)[0])
    return EstimatorReport([r["value"] for r in rows], [r["se"] for r in rows], ens.M,
                           {"seed": ens.seed, "T": ens.T, "Nt": ens.Nt}, rows, {"slope": slope})


def weak_agreement(fields: Sequence[CoefficientField], battery: Sequence, x0, T: float, Nt: int, M: int,
                   seed=0, workers: int = 1, names: Sequence[str] | None = None) -> EstimatorReport:
    """Compare ``E int_0^T f(s, X_s) ds`` under two approximations simulated with independent noise."""
    if len(fields) != 2:
        raise ValueError("weak agreement compares exactly two fields")
    seeds = _seed_sequence(seed).spawn(2)
    ens = [simulate(cf, np.asarray(x0, float), T, Nt, M, s, workers=workers) for cf, s in zip(fields, seeds)]
    rows = []
    for i, f in enumerate(battery):
        stats = [mean_se(occupation_integral(e, f)) for e in ens]
        diff = float(stats[0][0] - stats[1][0])
        cse = float(combined_se(stats[0][1], stats[1][1]))
        rows.append({"f": names[i] if names else f"f{i}", "mean_1": float(stats[0][0]), "mean_2": float(stats[1][0]),
                     "diff": diff, "combined_se": cse, "within_3se": within_bands(diff, cse)})
    return EstimatorReport([r["diff"] for r in rows], [r["combined_se"] for r in rows], M,
                           {"x0": np.asarray(x0, float), "T": T, "Nt": Nt, "seed": seed,
                            "fields": [cf.describe() for cf in fields]}, rows,
                           {"all_within_3se": all(r["within_3se"] for r in rows)})


def bump_battery(grid, centres: Sequence, radius: float) -> list[GridFn]:
    """Smooth nonnegative bumps ``chi(|x - z| / radius)`` centred at ``centres``."""
    from .grid import bump_profile

    out = []
    for z in centres:
        dist = np.linalg.norm(grid.wrap(grid.points() - np.asarray(z, float)), axis=-1)
        out.append(GridFn(grid, bump_profile(dist / radius)[None], "scalar"))
    return out
