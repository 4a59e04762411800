import math

import numpy as np
import pytest
from scipy import optimize

from zvonkin_lab import coefficients as co
from zvonkin_lab.grid import GridFn, build_grid, sample
from zvonkin_lab.pde import identity_diffusion
from zvonkin_lab.sde import brownian_increments, coarsen
from zvonkin_lab.zvonkin import (CalibrationError, InversionError, ZvonkinTransform, build_transform,
                                 conjugacy_check, measure_smallness)

X0 = np.array([0.3, 0.2])


@pytest.fixture(scope="module")
def smooth_tf():
    g = build_grid(2, math.pi, 64, 1.0, 128)
    return build_transform(co.smooth_drift_example(), None, grid=g)


def synthetic(Nx=256, amp=0.3):
    g = build_grid(2, math.pi, Nx, 1.0, 1)
    u = sample(lambda x: np.stack([amp * np.sin(x[..., 0]), np.zeros(x.shape[:-1])], -1), g, "vector")
    return ZvonkinTransform.from_u(g, u)


def test_zero_drift_gives_identity():
    g = build_grid(2, math.pi, 32, 1.0, 16)
    sig, _ = co.family("A").on_grid(g)
    b = GridFn(g, np.zeros((1, 32, 32, 2)), "vector")
    tf = build_transform(sig, b, lam0=1.0)
    assert tf.lam == 1.0 and tf.smallness == 0.0
    assert np.all(tf.u.values == 0)
    y = np.array([[0.5, -1.0], [2.0, 0.1]])
    x, tr = tf.phi_inverse(0.3, y, return_trace=True)
    assert np.array_equal(x, y) and tr["iterations"] == 1
    s_t, b_t = tf.transformed_coefficients()
    assert np.array_equal(s_t.values, np.broadcast_to(sig.values[0], s_t.values.shape))
    assert np.all(b_t.values == 0)


def test_zero_drift_conjugacy_exact():
    g = build_grid(2, math.pi, 32, 1.0, 16)
    sig, _ = co.family("A").on_grid(g)
    tf = build_transform(sig, GridFn(g, np.zeros((1, 32, 32, 2)), "vector"))
    rep = conjugacy_check(co.family("A"), tf, X0, 1.0, 16, 200, seed=1)
    assert rep.extra["pathwise_discrepancy"] == 0.0
    assert all(e == 0.0 for e in rep.extra["weak_errors"])


def test_smooth_calibration_and_resolution(smooth_tf):
    assert math.isfinite(smooth_tf.lam) and smooth_tf.smallness <= 0.5
    g2 = build_grid(2, math.pi, 128, 1.0, 256)
    sig, b = co.smooth_drift_example().on_grid(g2)
    from zvonkin_lab.zvonkin import solve_transform_pde

    u2 = solve_transform_pde(sig, b, smooth_tf.lam)
    assert ZvonkinTransform(g2, u2, smooth_tf.lam, sig).smallness <= 0.55


def test_family_c_calibration_trace():
    g = build_grid(2, math.pi, 64, 1.0, 128)
    tf = build_transform(co.family("C", eps=0.1), None, grid=g)
    assert tf.smallness <= 0.5
    s = [row["smallness"] for row in tf.trace]
    assert all(a > b for a, b in zip(s, s[1:]))
    assert [row["lambda"] for row in tf.trace] == [2.0 ** k for k in range(len(s))]


def test_calibration_failure_is_loud():
    g = build_grid(2, math.pi, 32, 1.0, 64)
    sig, b = co.smooth_drift_example(amp=0.5).on_grid(g)
    with pytest.raises(CalibrationError) as err:
        build_transform(sig, b, max_doublings=1, target=1e-3)
    assert len(err.value.trace) == 2


def test_synthetic_inverse_matches_root_find():
    oracle = optimize.brentq(lambda s: s + 0.3 * math.sin(s) - 1.0, 0.0, 1.0, xtol=1e-14)
    assert abs(oracle + 0.3 * math.sin(oracle) - 1.0) <= 1e-12
    assert oracle == pytest.approx(0.787436, abs=1e-6)
    tf = synthetic()
    x = tf.phi_inverse(0.0, np.array([1.0, 0.0]))
    assert x[0] == pytest.approx(oracle, abs=1e-4)
    assert x[1] == 0.0


def test_round_trip_and_contraction(rng):
    tf = synthetic(Nx=128)
    y = rng.uniform(-3, 3, size=(100, 2))
    x, tr = tf.phi_inverse(0.0, y, return_trace=True)
    assert np.max(np.linalg.norm(tf.phi(0.0, x) - y, axis=-1)) <= 2e-10
    moves = tr["moves"]
    ok = (moves[:-1] > 1e-13)
    ratios = moves[1:][ok] / moves[:-1][ok]
    assert ratios.max() <= 0.5 + 1e-3


def test_inversion_failure():
    g = build_grid(1, math.pi, 64, 1.0, 1)
    u = sample(lambda x: 3.0 * np.sin(x[..., 0])[..., None], g, "vector")
    tf = ZvonkinTransform.from_u(g, u)
    with pytest.raises(InversionError, match="did not converge"):
        tf.phi_inverse(0.0, np.array([1.0]), max_iter=60)


def test_transform_invariants(smooth_tf):
    tf = smooth_tf
    gu = tf.grad_u
    assert np.max(np.linalg.norm(np.eye(2) + gu, ord=2, axis=(-2, -1))) <= 1.5
    assert measure_smallness(tf.u.values, gu) == tf.smallness
    s_t, b_t = tf.transformed_coefficients()
    umax = np.max(np.linalg.norm(tf.u.values, axis=-1))
    assert np.max(np.linalg.norm(b_t.values, axis=-1)) <= tf.lam * umax + 1e-12
    assert tf.lam * umax <= tf.lam / 2
    lo, hi = tf.ellipticity_range()
    c0 = 2.0  # a = I/2 for sigma = I
    assert 1 / (4 * c0) <= lo <= hi <= 4 * c0
    # b~ = lam u o Phi^{-1}: check at lattice points via Phi
    g = tf.grid
    pts = g.points().reshape(-1, 2)
    x = tf.phi_inverse(0.0, pts)
    assert np.allclose(b_t.values[0].reshape(-1, 2), tf.lam * tf.u_at(0.0, x), atol=1e-12)
    # measured grad Phi^{-1} = (grad Phi)^{-1} at Phi^{-1}(y)
    inv = np.linalg.inv(tf.grad_phi(0.0, x))
    assert np.max(np.linalg.norm(inv, ord=2, axis=(-2, -1))) <= 2.0 + 1e-6
    summary = tf.summary()
    assert summary["smallness"] == tf.smallness and summary["grad_phi_max"] <= 1.5


def test_conjugacy_ladder_smooth(smooth_tf):
    cf = co.smooth_drift_example()
    M = 2000
    dW = brownian_increments(M, 512, 2, 1.0, 4)
    disc = []
    for f in (4, 2, 1):
        Nt = 512 // f
        rep = conjugacy_check(cf, smooth_tf, X0, 1.0, Nt, M, dW=coarsen(dW, f) if f > 1 else dW)
        disc.append(rep.extra["pathwise_discrepancy"])
        assert rep.extra["all_within_3se"]
    assert disc[0] / disc[1] >= 1.3 and disc[1] / disc[2] >= 1.3
    # discrepancy <= C dt^{1/2} with one constant across the ladder
    consts = [d / math.sqrt(1 / (512 // f)) for d, f in zip(disc, (4, 2, 1))]
    assert max(consts) / min(consts) <= 1.5
