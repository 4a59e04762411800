import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from zvonkin_lab.coefficients import DEFAULTS, raw_drift
from zvonkin_lab.grid import GridFn, bump_profile, build_grid, constant, cutoff_values, sample
from zvonkin_lab.norms import (INF, NormParams, bessel_norm, constant_function_norm, localized_norm,
                               localized_value, lp_norm, mollifier_modulus, norm_equivalence_check,
                               sobolev_embedding_check, sobolev_window, sup_inside_norm)

G2 = build_grid(2, math.pi, 64, 1.0, 8)


def bump_lp(r: float, p: float, d: int = 2) -> float:
    """||chi_r||_p by radial quadrature of the fixed bump profile."""
    area = 2 * math.pi if d == 2 else 4 * math.pi
    val = integrate.quad(lambda s: s ** (d - 1) * bump_profile(s / r) ** p, 0, 2 * r, limit=200, epsabs=1e-13)[0]
    return (area * val) ** (1 / p)


def smooth_family(grid, n=10, seed=3):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        c = rng.uniform(-1, 1, 2)
        w = rng.uniform(0.2, 1.0)
        k = rng.integers(1, 4)
        out.append(sample(lambda x, c=c, w=w, k=k: np.exp(-np.sum((x - c) ** 2, axis=-1) / w)
                          * (1.2 + np.cos(k * x[..., 1])), grid))
    return out


def test_params_validation():
    with pytest.raises(ValueError, match="p must exceed 1"):
        NormParams(p=1.0)
    with pytest.raises(ValueError, match="q must exceed 1"):
        NormParams(q=0.5)
    with pytest.raises(ValueError):
        NormParams(r=0.0)


def test_bessel_alpha_zero_is_lp():
    f = sample(lambda x: np.exp(np.sin(x[..., 0])) * np.cos(x[..., 1]), G2)
    for p in (1.5, 2, 3.7):
        assert bessel_norm(f, 0.0, p) == float(lp_norm(f.values[0], G2, p))


def test_bessel_single_mode():
    f = sample(lambda x: np.sin(x[..., 0]), G2)
    sin_l2 = math.pi * math.sqrt(2.0)  # (int sin^2 over [-pi, pi)^2)^{1/2}
    assert bessel_norm(f, 0.0, 2) == pytest.approx(sin_l2, rel=1e-12)
    assert bessel_norm(f, 1.0, 2) == pytest.approx(math.sqrt(2) * sin_l2, rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
def test_bessel_round_trip(p):
    g = sample(lambda x: np.cos(x[..., 1]), G2)
    lg = g.with_values(2.0 * g.values)  # (I - Delta) cos(x2) = 2 cos(x2)
    assert bessel_norm(lg, -2.0, p) == pytest.approx(bessel_norm(g, 0.0, p), rel=1e-12)


def test_bessel_rejects_vectors():
    f = GridFn(G2, np.zeros((1, 64, 64, 2)), "vector")
    with pytest.raises(Exception, match="scalar"):
        bessel_norm(f, 1.0, 2)


@pytest.mark.parametrize("p, q", [(2, 2), (3, 4), (5, INF)])
def test_constant_function_norm_matches_quadrature(p, q):
    # the lattice sum of the bump converges super-algebraically: ~1e-11 relative at Nx=256
    g = build_grid(2, math.pi, 256, 0.5, 4)
    c = 1.7
    np_ = NormParams(p=p, q=q, r=0.8)
    rep = localized_norm(constant(g, c), np_)
    tq = 1.0 if q == INF else 0.5 ** (1 / q)
    oracle = c * tq * bump_lp(0.8, p)
    assert rep.value == pytest.approx(oracle, rel=1e-9)
    assert constant_function_norm(g, c, np_) == pytest.approx(rep.value, rel=1e-12)


def test_window_subinterval_and_empty_window():
    g = build_grid(2, math.pi, 32, 1.0, 8)
    f = sample(lambda t, x: (1 + t) * np.ones(x.shape[:-1]), g, time_dependent=True)
    np_ = NormParams(p=2, q=2, r=1.0, t0=0.25, t1=0.75)
    # left-endpoint rule on slices t = 0.25, 0.375, 0.5, 0.625
    ts = np.array([0.25, 0.375, 0.5, 0.625])
    oracle = math.sqrt(np.sum((1 + ts) ** 2) * 0.125) * constant_function_norm(g, 1.0, NormParams(p=2, q=INF, r=1.0))
    assert localized_value(f, np_) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(Exception):
        localized_norm(f, NormParams(t0=0.5, t1=0.5))


def test_localized_sup_brute_force():
    g = build_grid(2, math.pi, 64, 1.0, 1)
    r = 1.0
    z0 = np.array([0.7, -0.4])
    f = sample(lambda x: np.exp(-np.sum((x - z0) ** 2, axis=-1) / 0.02)
               * (np.linalg.norm(x - z0, axis=-1) < r / 2), g)
    rep = localized_norm(f, NormParams(p=2, q=2, r=r), keep_table=True)
    assert rep.value == pytest.approx(rep.table[:, -1].max())  # columns: z coordinates, value
    assert np.linalg.norm(rep.argmax_z - z0) <= r / 2 + 1e-12
    brute = max(float(lp_norm(cutoff_values(g, z, r) * f.values[0], g, 2)) for z in g.points().reshape(-1, 2))
    assert rep.value == pytest.approx(brute, rel=1e-10)
    ball = float(lp_norm(f.values[0], g, 2))
    assert abs(rep.value - ball) <= 0.01 * ball


def test_family_c_drift_admissible_norm():
    g = build_grid(2, math.pi, 128, 1.0, 1)
    p = DEFAULTS["C"]
    b = sample(raw_drift("C", p), g, rank="vector")
    assert 2 / 5 + 0 < 1
    val = localized_value(b, NormParams(alpha=0, p=5, q=INF, r=1.0))
    assert np.isfinite(val)
    # polar quadrature of |b|^5 chi^5 about the singularity
    beta, rc = p["beta"], p["rc"]
    quad = 2 * math.pi * integrate.quad(lambda s: s * (s ** -beta * bump_profile(s / rc) * bump_profile(s)) ** 5,
                                        0, 2, points=[1.0], limit=200)[0]
    assert val == pytest.approx(quad ** 0.2, rel=0.05)


def test_mollifier_modulus_constant_and_sine():
    assert all(row["kappa"] == pytest.approx(0, abs=1e-13)
               for row in mollifier_modulus(constant(G2, 2.0), 2.0, None, [0.4, 0.2, 0.1]))
    from tests.test_grid import _attenuation

    f = sample(lambda x: np.sin(x[..., 0]), build_grid(2, math.pi, 128, 1.0, 1))
    base = localized_value(f, NormParams(p=3, q=INF, r=1.0))
    rows = mollifier_modulus(f, 3.0, None, [0.4, 0.2, 0.1])
    for row in rows:
        assert row["kappa"] == pytest.approx((1 - _attenuation(row["eps"])) * base, rel=5e-3)
    ks = [row["kappa"] for row in rows]
    assert ks[0] > ks[1] > ks[2]


def test_mollifier_modulus_family_d_decreasing():
    g = build_grid(3, 1.5, 64, 1.0, 1)
    b = sample(raw_drift("D", DEFAULTS["D"]), g, rank="vector")
    rows = mollifier_modulus(b, 3.0, None, [0.4, 0.2, 0.1, 0.05], r=0.5)
    ks = [row["kappa"] for row in rows]
    assert all(a > c for a, c in zip(ks, ks[1:]))


def test_norm_equivalence_constant_and_family():
    g = build_grid(2, 2 * math.pi, 256, 1.0, 1)
    np_ = NormParams(p=2, q=INF)
    res = norm_equivalence_check([constant(g, 1.0)], 1.0, 2.0, np_)
    assert res["min"] == pytest.approx(bump_lp(1.0, 2) / bump_lp(2.0, 2), rel=1e-8)
    fam = smooth_family(g) + [sample(lambda x: np.exp(-np.sum(x ** 2, axis=-1) / 0.01), g)]
    res = norm_equivalence_check(fam, 1.0, 2.0, np_)
    C = max(res["max"], 1 / res["min"])
    assert C <= 10
    with pytest.raises(ValueError):
        norm_equivalence_check(fam, 1.0, 1.0, np_)


def test_sobolev_embedding():
    g = build_grid(2, math.pi, 64, 1.0, 1)
    fam = smooth_family(g)
    assert sobolev_window(2, 1.0, 2.0) == (2.0, INF)
    assert sobolev_window(3, 1.0, 2.0) == (2.0, 6.0)
    res = sobolev_embedding_check(fam, 1.0, 2.0, 8.0, INF)
    assert np.isfinite(res["max"]) and res["max"] > 0
    # p' = p = 2: Parseval and a multiplier >= 1 give ratio <= 1
    assert sobolev_embedding_check(fam, 1.0, 2.0, 2.0, INF)["max"] <= 1 + 1e-12
    with pytest.raises(ValueError, match="window"):
        sobolev_embedding_check(fam, 1.0, 2.0, 1.5, INF)
    with pytest.raises(ValueError, match="window"):
        sobolev_embedding_check(fam, 0.5, 2.0, 5.0, INF)


def test_sup_inside_dominates():
    g = build_grid(2, math.pi, 32, 1.0, 8)
    for k in range(4):
        f = sample(lambda t, x, k=k: np.exp(-np.sum((x - t * (k - 1.5)) ** 2, axis=-1)) * (1 + t), g,
                   time_dependent=True)
        np_ = NormParams(p=2, q=3, r=1.0)
        assert sup_inside_norm(f, np_) >= localized_value(f, np_) * (1 - 1e-12)


def _random_smooth(seed, grid):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3))
    return sample(lambda x: sum(a[i, j] * np.cos(i * x[..., 0] + j * x[..., 1]) for i in range(3) for j in range(3)),
                  grid)


GH = build_grid(2, math.pi, 32, 1.0, 1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3),
       alpha=st.sampled_from([-1.0, 0.0, 0.5, 1.0]))
def test_homogeneity(seed, c, alpha):
    f = _random_smooth(seed, GH)
    np_ = NormParams(alpha=alpha, p=2.5, q=INF, r=1.0)
    assert localized_value(f.with_values(c * f.values), np_) == pytest.approx(abs(c) * localized_value(f, np_),
                                                                              rel=1e-12)
    assert bessel_norm(f.with_values(c * f.values), alpha, 3) == pytest.approx(abs(c) * bessel_norm(f, alpha, 3),
                                                                               rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a1=st.floats(-2, 2), a2=st.floats(-2, 2))
def test_monotone_in_alpha(seed, a1, a2):
    lo, hi = sorted((a1, a2))
    f = _random_smooth(seed, GH)
    assert bessel_norm(f, lo, 2) <= bessel_norm(f, hi, 2) * (1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_triangle_inequality(seed):
    f, g = _random_smooth(seed, GH), _random_smooth(seed + 1, GH)
    for np_ in (NormParams(p=2, q=INF, r=1.0), NormParams(alpha=1.0, p=3, q=INF, r=1.0)):
        assert localized_value(f + g, np_) <= (localized_value(f, np_) + localized_value(g, np_)) * (1 + 1e-12)


def test_report_json():
    rep = localized_norm(constant(G2), NormParams(q=INF))
    d = rep.to_dict()
    assert d["params"]["q"] == "inf" and len(d["argmax_z"]) == 2
