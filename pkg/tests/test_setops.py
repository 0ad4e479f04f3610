import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdcbf import setops as so
from sdcbf.dynamics import linear_model, make_segway, step_zoh

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def ivs(lo=-1e3, hi=1e3):
    return st.tuples(
        st.floats(min_value=lo, max_value=hi, allow_nan=False),
        st.floats(min_value=lo, max_value=hi, allow_nan=False),
    ).map(lambda t: so.Interval(min(t), max(t)))


@given(ivs(), ivs(), st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
def test_interval_arithmetic_inclusion(a, b, ta, tb):
    x = a.lo + ta * (a.hi - a.lo)
    y = b.lo + tb * (b.hi - b.lo)
    assert (a + b).contains(x + y, slack=1e-6)
    assert (a - b).contains(x - y, slack=1e-6)
    assert (a * b).contains(x * y, slack=1e-6 * (1 + abs(x * y)))
    assert so.square(a).contains(x * x, slack=1e-6 * (1 + x * x))


@given(ivs(-10, 10), st.floats(min_value=0, max_value=1))
def test_interval_trig_inclusion(a, t):
    x = a.lo + t * (a.hi - a.lo)
    assert so.sin(a).contains(math.sin(x), slack=1e-12)
    assert so.cos(a).contains(math.cos(x), slack=1e-12)
    assert so.sin(a).lo >= -1 and so.sin(a).hi <= 1


def test_interval_square_dependency_aware():
    assert so.square(so.Interval(-0.2, 0.3)).lo == 0.0
    naive = so.Interval(-0.2, 0.3) * so.Interval(-0.2, 0.3)
    assert naive.lo < 0.0  # the plain product decorrelates


def test_interval_division_rejects_zero():
    with pytest.raises(ZeroDivisionError):
        so.Interval(1.0) / so.Interval(-1.0, 1.0)


def test_invalid_interval():
    with pytest.raises(ValueError):
        so.Interval(2.0, 1.0)


def test_box_sum_examples():
    a = so.Box.point([0.0, 0.0])
    b = so.Box([-1.0, -1.0], [1.0, 1.0])
    s = so.box_sum(a, b)
    assert np.allclose(s.lo, [-1, -1]) and np.allclose(s.hi, [1, 1])

    s2 = so.box_sum(so.Box([1.0], [2.0]), so.Box([-0.5], [0.5]))
    assert np.allclose([s2.lo[0], s2.hi[0]], [0.5, 2.5])

    acc = so.Box.point([0.0])
    r = so.Box([-0.25], [0.25])
    for _ in range(4):
        acc = so.box_sum(acc, r)
    assert np.allclose([acc.lo[0], acc.hi[0]], [-1.0, 1.0])


def test_box_sum_dimension_mismatch():
    with pytest.raises(ValueError):
        so.box_sum(so.Box.point([0.0]), so.Box.point([0.0, 0.0]))


def test_interval_eval_position_barrier():
    def h(x):
        return 1.0 - 4.0 * so.square(x[0])

    point = so.interval_eval(h, so.Box.point([0.0]))
    assert (point.lo, point.hi) == (pytest.approx(1.0), pytest.approx(1.0))
    enc = so.interval_eval(h, so.Box([-0.1], [0.1]))
    assert enc.lo == pytest.approx(0.96)
    assert enc.hi == pytest.approx(1.0)

    def dh(x):
        return -8.0 * x[0]

    g = so.interval_eval(dh, so.Box([0.2], [0.3]))
    assert (g.lo, g.hi) == (pytest.approx(-2.4), pytest.approx(-1.6))


def test_interval_eval_inclusion_random(rng):
    model = make_segway()
    for _ in range(20):
        center = rng.uniform(-0.3, 0.3, size=4)
        rad = rng.uniform(0, 0.2, size=4)
        box = so.Box.from_radius(center, rad)
        f_enc = model.f(box.intervals())
        g_enc = model.g(box.intervals())
        pts = box.sample(rng, 50)
        f_vals = model.f(pts)
        g_vals = model.g(pts)
        for i in range(4):
            enc = so.as_interval(f_enc[i])
            assert np.all(f_vals[:, i] >= enc.lo - 1e-9)
            assert np.all(f_vals[:, i] <= enc.hi + 1e-9)
            enc_g = so.as_interval(g_enc[i][0])
            assert np.all(g_vals[:, i, 0] >= enc_g.lo - 1e-9)
            assert np.all(g_vals[:, i, 0] <= enc_g.hi + 1e-9)


def test_interval_eval_monotone(rng):
    model = make_segway()
    for _ in range(20):
        center = rng.uniform(-0.2, 0.2, size=4)
        rad = rng.uniform(0.01, 0.1, size=4)
        small = so.Box.from_radius(center, rad)
        big = so.Box.from_radius(center, rad * rng.uniform(1.0, 3.0))
        for fs, fb in zip(model.f(small.intervals()), model.f(big.intervals())):
            fs, fb = so.as_interval(fs), so.as_interval(fb)
            assert fb.lo <= fs.lo + 1e-12 and fb.hi >= fs.hi - 1e-12


def test_reachable_box_zero_dynamics():
    frozen = linear_model(np.zeros((2, 2)), np.zeros((2, 1)), u_max=0.0)
    box = so.reachable_box(frozen, [0.3, -0.1], 0.05)
    assert np.allclose(box.lo, [0.3, -0.1]) and np.allclose(box.hi, [0.3, -0.1])


def test_reachable_box_integrator():
    model = linear_model(np.zeros((1, 1)), np.ones((1, 1)), u_max=1.0)
    box = so.reachable_box(model, [0.2], 0.05)
    assert box.contains([0.2])
    assert box.lo[0] <= 0.15 + 1e-12 and box.hi[0] >= 0.25 - 1e-12
    # within 10% slack of the exact +-dt interval
    assert box.lo[0] >= 0.2 - 0.055 and box.hi[0] <= 0.2 + 0.055


def test_reachable_box_segway_first_order():
    model = make_segway()
    dt = 0.025
    box = so.reachable_box(model, np.zeros(4), dt)
    assert box.contains(np.zeros(4))
    g0 = np.asarray(model.g(np.zeros(4)))
    expect = dt * abs(g0[3, 0]) * model.u_max[0]
    assert box.rad[3] >= expect
    assert box.rad[3] <= 1.25 * expect


def test_reachable_box_soundness_sampled(rng):
    model = make_segway()
    dt = 0.05
    for _ in range(5):
        x0 = rng.uniform(-0.2, 0.2, size=4)
        box = so.reachable_box(model, x0, dt)
        taus = rng.uniform(0, dt, size=200)
        us = rng.uniform(-model.u_max, model.u_max, size=(200, 1))
        for tau, u in zip(taus, us):
            if tau < 1e-6:
                continue
            x = step_zoh(model, x0, u, tau, substeps=4)
            assert box.contains(x, slack=1e-9)


def test_reachable_box_failure_reports():
    # explosive dynamics at a huge step cannot contract
    model = linear_model([[50.0]], [[0.0]], u_max=1.0)
    with pytest.raises(so.EnclosureError):
        so.reachable_box(model, [1.0], 1.0, max_iter=5)


def test_ellipsoid_box():
    P = np.diag([4.0, 1.0])
    box = so.ellipsoid_box(P, 1.0)
    assert np.allclose(box.hi, [0.5, 1.0])
    # box is tight: the ellipsoid touches each face
    for i, v in enumerate(box.hi):
        x = np.zeros(2)
        x[i] = v
        assert x @ P @ x == pytest.approx(1.0)


def test_box_vertices_dedup():
    box = so.Box([0.0, -1.0], [0.0, 1.0])
    assert len(box.vertices()) == 2
