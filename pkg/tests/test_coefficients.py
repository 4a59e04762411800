import math

import numpy as np
import pytest

from zvonkin_lab import coefficients as co
from zvonkin_lab.grid import GridFn, Mollifier, build_grid, mollify, sample


def test_catalog_rows():
    rows = co.catalog()
    assert [r["family"] for r in rows] == ["A", "B", "C", "D", "E"]
    c = next(r for r in rows if r["family"] == "C")
    assert "d/p = 2/5" in c["admissible"]
    dd = next(r for r in rows if r["family"] == "D")
    assert dd["admissible"].startswith("critical: b ∈ L̃^{d;uni}_∞")


def test_family_errors():
    with pytest.raises(co.CoefficientError, match="unknown family"):
        co.family("Z")
    with pytest.raises(co.CoefficientError, match="unknown parameters"):
        co.family("B", gamma=2.0)
    with pytest.raises(co.CoefficientError, match="singular"):
        co.family("C")


def test_family_a_and_b_evaluations(rng):
    x = rng.normal(size=(7, 2))
    ev = co.family("A").evaluate(0.3, x, need_grad=True)
    assert np.all(ev.b == 0) and np.allclose(ev.sigma, np.eye(2)) and np.all(ev.grad_sigma == 0)
    evb = co.family("B", kappa=2.0).evaluate(0.0, x, need_grad=True)
    assert np.allclose(evb.b, -2.0 * x)
    assert np.allclose(evb.grad_b, -2.0 * np.eye(2))


def test_family_c_matches_direct_mollification():
    cf = co.family("C", n=8)
    g = cf.lattice
    direct = mollify(GridFn(g, co.raw_drift("C", co.DEFAULTS["C"])(g.points())[None], "vector"),
                     Mollifier("gaussian-truncated", 1 / 8))
    _, b = cf.on_grid(g)
    assert np.allclose(b.values, direct.values, atol=1e-12)
    assert np.all(np.isfinite(b.values))
    # mollified drift is bounded even though the raw drift blows up at 0
    assert np.max(np.linalg.norm(b.values, axis=-1)) < 5.0


def test_gridded_gradient_matches_finite_difference():
    cf = co.family("C", n=4)
    x = np.array([[0.4, -0.3], [1.1, 0.7]])
    ev = cf.evaluate(0.0, x, need_grad=True)
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (cf.drift(0.0, x + e) - cf.drift(0.0, x - e)) / (2 * h)
        # centred lattice differences vs the derivative of the multilinear interpolant: O(h_lattice)
        assert np.allclose(ev.grad_b[:, :, k], fd, atol=0.1)


def test_far_field_outside_box():
    cf = co.family("C", n=4)
    ev = cf.evaluate(0.0, np.array([[10.0, 0.0], [0.0, -7.0]]), need_grad=True)
    assert np.all(ev.b == 0) and np.allclose(ev.sigma, np.eye(2)) and np.all(ev.grad_b == 0)


def test_levels_and_shapes():
    cf = co.family("D", n=2)
    assert cf.eps == 0.5 and cf.d == 3
    assert cf.at_level(4).eps == 0.25
    assert cf.with_shape("polynomial-bump").shape == "polynomial-bump"
    with pytest.raises(co.CoefficientError):
        co.gridded_field(build_grid(2, 1.0, 8, 1.0, 1), np.zeros((1, 8, 8, 2)),
                         np.broadcast_to(np.eye(2), (1, 8, 8, 2, 2)).copy()).at_level(2)


def test_family_e_is_elliptic():
    cf = co.family("E", n=4)
    g = cf.lattice
    sig, b = cf.on_grid(g)
    assert np.all(b.values == 0)
    diag = sig.values[..., 0, 0]
    assert np.allclose(sig.values[..., 0, 1], 0) and np.allclose(diag, sig.values[..., 1, 1])
    assert diag.min() >= 1.0 - 1e-12 and diag.max() <= 1.3 + 1e-12
    assert cf.c0 >= diag.max() ** 2 - 1e-12
    assert not cf.diagonal_unit_sigma


def test_smooth_drift_example_gradient():
    cf = co.smooth_drift_example()
    x = np.array([[0.2, -1.0], [2.0, 0.5]])
    ev = cf.evaluate(0.0, x, need_grad=True)
    assert np.allclose(ev.b, 0.5 * np.stack([np.sin(x[:, 1]), np.sin(x[:, 0])], -1))
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (cf.drift(0.0, x + e) - cf.drift(0.0, x - e)) / (2 * h)
        assert np.allclose(ev.grad_b[:, :, k], fd, atol=1e-8)


def test_gridded_field_exact_at_lattice_points():
    g = build_grid(2, math.pi, 16, 1.0, 1)
    b = sample(lambda x: np.stack([np.sin(x[..., 0]), np.cos(x[..., 1])], -1), g, "vector")
    sig = np.broadcast_to(2 * np.eye(2), (1, 16, 16, 2, 2)).copy()
    cf = co.gridded_field(g, b.values, sig)
    pts = g.points().reshape(-1, 2)
    assert np.allclose(cf.drift(0.0, pts), b.values[0].reshape(-1, 2))
    assert cf.c0 == pytest.approx(4.0)


def test_describe():
    d = co.family("C", n=2).describe()
    assert d["family"] == "C" and d["eps"] == 0.5 and d["params"]["beta"] == 0.3
