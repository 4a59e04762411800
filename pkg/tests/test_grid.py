import math

import numpy as np
import pytest
from scipy import integrate

from zvonkin_lab.coefficients import DEFAULTS, raw_drift
from zvonkin_lab.grid import (Grid, GridError, GridFn, Mollifier, SampleError, build_grid, constant, cutoff,
                              cutoff_values, dump_gridfn, interpolate, load_gridfn, local_maximal, mollify, sample)
from zvonkin_lab.norms import NormParams, lp_norm, maximal_boundedness_ratio, maximal_lipschitz_constant


def test_build_grid_spacings():
    g = build_grid(2, math.pi, 64, 1.0, 100)
    assert g.h == pytest.approx(2 * math.pi / 64)
    assert g.dt == pytest.approx(0.01)
    g3 = build_grid(3, 1.0, 16, 0.5, 50)
    assert g3.h == pytest.approx(0.125)
    assert g3.spatial_shape == (16, 16, 16)


@pytest.mark.parametrize("kw, word", [
    ({"Nx": 7}, "Nx"),
    ({"Nx": 6}, "Nx"),
    ({"d": 4}, "d"),
    ({"L": 0.0}, "L"),
    ({"T": -1.0}, "T"),
    ({"Nt": 0}, "Nt"),
])
def test_build_grid_rejects_bad_parameters(kw, word):
    args = {"d": 2, "L": math.pi, "Nx": 64, "T": 1.0, "Nt": 100, **kw}
    with pytest.raises(GridError, match=word):
        build_grid(**args)


def test_sample_constant_and_sine():
    g = build_grid(2, math.pi, 32, 1.0, 4)
    assert np.all(sample(lambda x: np.ones(x.shape[:-1]), g).values == 1.0)
    s = sample(lambda x: np.sin(x[..., 0]), g)
    assert np.max(np.abs(s.values[0] - np.sin(g.points()[..., 0]))) == 0.0


def test_sample_time_dependent_shape():
    g = build_grid(1, 1.0, 8, 1.0, 5)
    f = sample(lambda t, x: t + x[..., 0], g, time_dependent=True)
    assert f.values.shape == (6, 8)
    assert f.values[3, 2] == pytest.approx(g.times()[3] + g.axis()[2])


def test_sample_non_finite_names_index():
    g = build_grid(1, 1.0, 8, 1.0, 1, shift=0.0)
    with pytest.raises(SampleError, match="index"), np.errstate(divide="ignore"):
        sample(lambda x: 1.0 / x[..., 0], g)


def test_family_c_drift_finite_off_lattice():
    # the half-cell shift keeps the origin off the lattice
    g = build_grid(2, math.pi, 64, 1.0, 1)
    b = raw_drift("C", DEFAULTS["C"])
    f = sample(b, g, rank="vector")
    assert np.all(np.isfinite(f.values))
    x = g.points()
    r = np.linalg.norm(x, axis=-1)
    i = np.unravel_index(np.argmin(r), r.shape)
    expected = -x[i] / r[i] * r[i] ** -0.3
    assert np.allclose(f.values[0][i], expected)


def test_gridfn_rejects_wrong_shapes():
    g = build_grid(2, 1.0, 8, 1.0, 3)
    with pytest.raises(GridError):
        GridFn(g, np.zeros((2, 8, 8)))
    with pytest.raises(GridError):
        GridFn(g, np.zeros((1, 8, 8)), "vector")
    f = GridFn(g, np.zeros((4, 8, 8, 2, 2)), "matrix")
    assert f.time_dependent and f.ncomp == 4
    with pytest.raises(ValueError):
        f.values[0, 0, 0, 0, 0] = 1.0


def test_mollifier_mass_and_support():
    g = build_grid(2, math.pi, 64, 1.0, 1)
    for shape in ("gaussian-truncated", "polynomial-bump"):
        m = Mollifier(shape, 0.2)
        k = m.kernel(g)
        assert np.all(k >= 0)
        assert abs(k.sum() * g.cell_volume - 1.0) <= 1e-10
        r = np.linalg.norm(g.offsets(), axis=-1)
        assert np.all(k[r > 4 * 0.2] == 0)


def test_mollify_constant_is_fixed():
    g = build_grid(2, math.pi, 32, 1.0, 1)
    f = constant(g, 2.5)
    out = mollify(f, Mollifier("polynomial-bump", 0.3))
    assert np.allclose(out.values, 2.5, atol=1e-13)


def _attenuation(eps: float) -> float:
    """Angular average of cos(x_1) is J_0(|x|): 1-D radial quadrature of the truncated Gaussian."""
    from scipy.special import j0

    num = integrate.quad(lambda r: np.exp(-0.5 * (r / eps) ** 2) * j0(r) * r, 0, 4 * eps, epsabs=1e-14)[0]
    den = integrate.quad(lambda r: np.exp(-0.5 * (r / eps) ** 2) * r, 0, 4 * eps, epsabs=1e-14)[0]
    return num / den


@pytest.mark.parametrize("eps", [0.1, 0.2, 0.4])
def test_mollify_sine_attenuation(eps):
    g = build_grid(2, math.pi, 128, 1.0, 1)
    f = sample(lambda x: np.sin(x[..., 0]), g)
    out = mollify(f, Mollifier("gaussian-truncated", eps))
    a = _attenuation(eps)
    assert np.max(np.abs(out.values - a * f.values)) < 2e-4
    assert a < 1


def test_attenuation_tends_to_one():
    assert _attenuation(0.01) > _attenuation(0.1) > _attenuation(0.3)
    assert 1 - _attenuation(0.01) < 1e-4


def test_mollify_warns_below_spacing():
    g = build_grid(1, 1.0, 8, 1.0, 1)
    with pytest.warns(UserWarning):
        mollify(constant(g), Mollifier("gaussian-truncated", 0.05))


def test_mollify_preserves_mean_and_contracts(rng):
    g = build_grid(2, math.pi, 32, 1.0, 1)
    f = GridFn(g, rng.normal(size=(1, 32, 32)))
    m = mollify(f, Mollifier("gaussian-truncated", 0.3))
    assert m.values.mean() == pytest.approx(f.values.mean(), abs=1e-14)
    for p in (1, 2, 5):
        assert lp_norm(m.values, g, p)[0] <= lp_norm(f.values, g, p)[0] * (1 + 1e-12)


def test_cutoff_profile():
    g = build_grid(2, math.pi, 64, 1.0, 1, shift=0.0)
    r = 0.5
    chi = cutoff(g, np.zeros(2), r)
    x = g.points()
    dist = np.linalg.norm(x, axis=-1)
    assert chi.values[0][32, 32] == 1.0
    assert np.all(chi.values[0][dist <= r] == 1.0)
    assert np.all(chi.values[0][dist >= 2.5 * r] == 0.0)
    mid = chi.values[0][(dist > 1.4 * r) & (dist < 1.6 * r)]
    assert np.all((mid > 0) & (mid < 1))
    from zvonkin_lab.grid import bump_profile
    s = np.linspace(0, 3, 301)
    assert np.all(np.diff(bump_profile(s)) <= 0)


def test_cutoff_rejects_wrapping_radius():
    g = build_grid(2, 1.0, 16, 1.0, 1)
    with pytest.raises(GridError):
        cutoff(g, np.zeros(2), 0.5)


def test_maximal_of_constant_and_indicator():
    g = build_grid(2, math.pi, 64, 1.0, 1, shift=0.0)
    assert np.allclose(local_maximal(constant(g, 3.0), 0.5).values, 3.0)
    ind = sample(lambda x: (np.linalg.norm(x, axis=-1) <= 1.0).astype(float), g)
    mf = local_maximal(ind, 1.0)
    assert mf.values[0][32, 32] == pytest.approx(1.0)


def test_maximal_of_distance_at_origin():
    # ball average of |y| over B_r is r d/(d+1); the max over r <= R sits at r = R
    g = build_grid(2, math.pi, 256, 1.0, 1, shift=0.0)
    f = sample(lambda x: np.linalg.norm(x, axis=-1), g)
    mf = local_maximal(f, 0.5)
    oracle = integrate.quad(lambda r: r * r, 0, 0.5)[0] / integrate.quad(lambda r: r, 0, 0.5)[0]
    assert oracle == pytest.approx(1 / 3, abs=1e-12)
    # radii are lattice multiples k h <= R, so the largest ball has radius floor(R/h) h
    rmax = math.floor(0.5 / g.h) * g.h
    assert mf.values[0][128, 128] == pytest.approx(2 * rmax / 3, abs=2e-3)
    assert mf.values[0][128, 128] == pytest.approx(oracle, abs=2 * g.h / 3 + 2e-3)


def test_maximal_errors():
    g = build_grid(2, 1.0, 16, 1.0, 1)
    with pytest.raises(GridError):
        local_maximal(constant(g), 0.01)
    with pytest.raises(ValueError):
        local_maximal(constant(g, -1.0), 0.5)


def test_maximal_dominates(rng):
    g = build_grid(2, math.pi, 32, 1.0, 1)
    f = GridFn(g, np.abs(rng.normal(size=(1, 32, 32))))
    assert np.all(local_maximal(f, 0.6).values >= f.values)


def _smooth_family(g, n=10):
    out = []
    for k in range(n):
        c = np.array([np.cos(k), np.sin(k)]) * 0.7
        w = 0.3 + 0.1 * k
        out.append(sample(lambda x, c=c, w=w: np.exp(-np.sum((x - c) ** 2, axis=-1) / w) * (1 + 0.2 * np.sin(k * x[..., 0])), g))
    return out


def test_maximal_lipschitz_constant():
    g = build_grid(2, math.pi, 32, 1.0, 1)
    consts = [maximal_lipschitz_constant(f, 0.5, math.pi / 4) for f in _smooth_family(g)]
    assert all(np.isfinite(consts))
    assert max(consts) < 5.0


def test_maximal_boundedness_stable_over_family():
    g = build_grid(2, math.pi, 32, 1.0, 1)
    np_ = NormParams(p=2, q=2, r=1.0)
    ratios = [maximal_boundedness_ratio(f, 0.5, np_) for f in _smooth_family(g)]
    assert min(ratios) >= 1.0
    assert max(ratios) < 3.0


def test_interpolation_exact_for_linear_and_fill():
    g = build_grid(2, 2.0, 16, 1.0, 1)
    vals = g.points()[..., 0] * 2 + g.points()[..., 1]
    x = np.array([[0.1, 0.2], [-0.33, 0.71]])
    assert np.allclose(interpolate(vals, g, x), 2 * x[:, 0] + x[:, 1])
    out = interpolate(vals, g, np.array([[5.0, 0.0]]), periodic=False, fill=-7.0)
    assert out[0] == -7.0


def test_gridfn_roundtrip(tmp_path):
    g = build_grid(2, 1.0, 8, 1.0, 3)
    f = GridFn(g, np.arange(4 * 64 * 2, dtype=float).reshape(4, 8, 8, 2), "vector")
    path = tmp_path / "f.gridfn"
    dump_gridfn(f, path)
    assert path.read_bytes().startswith(b"gridfn v1 2 8 3 vector\n")
    back = load_gridfn(path, g)
    assert np.array_equal(back.values, f.values) and back.rank == "vector"
    with pytest.raises(GridError):
        load_gridfn(path, build_grid(2, 1.0, 16, 1.0, 3))


def test_mollified_family_c_norm_bounded():
    from zvonkin_lab.norms import NormParams, localized_value

    g = build_grid(2, math.pi, 128, 1.0, 1)
    b = sample(raw_drift("C", DEFAULTS["C"]), g, rank="vector")
    np_ = NormParams(p=5, q=math.inf, r=1.0)
    base = localized_value(b, np_)
    ratios = [localized_value(mollify(b, Mollifier("gaussian-truncated", e)), np_) / base for e in (0.2, 0.1, 0.05)]
    # Jensen with a unit-mass kernel bounds each ratio by 1 up to the localization overlap
    assert max(ratios) <= 1.0 + 1e-12
    assert min(ratios) > 0.5
