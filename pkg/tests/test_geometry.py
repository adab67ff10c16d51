import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from mlr_em.errors import DegenerateModelError
from mlr_em.geometry import angle_diagnostics, cycloid_point, distance_to_cycloid, plane_frame
from mlr_em.model import make_ground_truth

vectors = st.lists(st.floats(min_value=-10, max_value=10), min_size=2, max_size=6)


def truth(v):
    return make_ground_truth(np.asarray(v, dtype=float), 0.5, 0.0)


def test_aligned_iterate():
    gt = truth([1.0, 2.0, -1.0])
    a = angle_diagnostics(gt.theta_star, gt)
    assert (a.rho, a.k) == (1.0, 1.0)
    assert a.varphi == pytest.approx(math.pi / 2, abs=1e-15) and a.phi <= 1e-15


def test_orthogonal_iterate_uses_positive_sign():
    gt = truth([1.0, 0.0])
    a = angle_diagnostics(np.array([0.0, 3.0]), gt)
    assert a.rho == 0.0 and a.sgn_rho == 1.0 and a.varphi == 0.0 and a.phi == math.pi


def test_forty_five_degrees_twice_as_long():
    gt = truth([1.0, 0.0])
    theta = 2.0 * np.array([1.0, 1.0]) / math.sqrt(2.0)
    a = angle_diagnostics(theta, gt)
    brute = math.acos(theta @ gt.theta_star / np.linalg.norm(theta))
    assert a.varphi == pytest.approx(math.pi / 4, abs=1e-15)
    assert a.phi == pytest.approx(2 * brute, abs=1e-15)
    assert a.k == pytest.approx(2.0, abs=1e-15)


def test_zero_iterate_and_zero_truth():
    a = angle_diagnostics(np.zeros(3), truth([1.0, 0.0, 0.0]))
    assert a.degenerate and a.k == 0.0 and a.rho == 0.0
    with pytest.raises(DegenerateModelError):
        angle_diagnostics(np.ones(2), truth([0.0, 0.0]))


def test_small_angles_keep_relative_precision():
    gt = truth([1.0, 0.0])
    for eps in (1e-3, 1e-8, 1e-14):
        a = angle_diagnostics(np.array([1.0, eps]), gt)
        assert a.phi == pytest.approx(2 * math.atan(eps), rel=1e-14)


@settings(max_examples=200)
@given(vectors, vectors)
def test_angle_invariants(u, v):
    n = min(len(u), len(v))
    star, theta = np.array(u[:n]), np.array(v[:n])
    if np.linalg.norm(star) < 1e-3 or np.linalg.norm(theta) < 1e-3:
        return
    a = angle_diagnostics(theta, truth(star))
    assert abs(a.phi - (math.pi - 2 * a.varphi)) <= 1e-12
    assert abs(abs(a.rho) - math.sin(a.varphi)) <= 1e-12
    assert abs(abs(a.rho) - math.cos(a.phi / 2)) <= 1e-12
    b = angle_diagnostics(7.5 * theta, truth(star))
    assert abs(a.rho - b.rho) <= 1e-12 and abs(a.phi - b.phi) <= 1e-12 and abs(a.varphi - b.varphi) <= 1e-12


def test_rotation_equivariance():
    rng = np.random.default_rng(0)
    for d in (2, 5, 20):
        for _ in range(20):
            star, theta = rng.standard_normal(d), rng.standard_normal(d)
            q = special_ortho_group.rvs(d, random_state=rng) if d > 1 else np.eye(1)
            a, b = angle_diagnostics(theta, truth(star)), angle_diagnostics(q @ theta, truth(q @ star))
            for f in ("rho", "varphi", "phi", "k"):
                assert abs(getattr(a, f) - getattr(b, f)) <= 1e-10
            fa, fb = plane_frame(theta, truth(star)), plane_frame(q @ theta, truth(q @ star))
            assert np.allclose(q @ fa.e_hat_2, fb.e_hat_2, atol=1e-10)


def test_frame_hand_gram_schmidt():
    f = plane_frame(np.array([1.0, 1.0]) / math.sqrt(2), truth([1.0, 0.0]))
    assert np.allclose(f.e_hat_1, [1, 0], atol=1e-15) and np.allclose(f.e_hat_2, [0, 1], atol=1e-15)
    assert not f.degenerate


def test_collinear_frame_is_flagged_and_deterministic():
    gt = truth([1.0, 2.0, 2.0])
    f = plane_frame(3 * gt.theta_star, gt)
    g = plane_frame(3 * gt.theta_star, gt)
    assert f.degenerate
    assert np.array_equal(f.e_hat_2, g.e_hat_2)
    assert abs(f.e_hat_1 @ f.e_hat_2) <= 1e-12 and abs(np.linalg.norm(f.e_hat_2) - 1) <= 1e-12


def test_near_collinear_frame_is_flagged_but_oriented():
    gt = truth([1.0, 0.0])
    f = plane_frame(np.array([1.0, 1e-7]), gt)
    assert f.degenerate
    assert np.allclose(f.e_hat_2, [0.0, 1.0], atol=1e-12)
    # e_2 points from theta towards theta*
    assert f.e_2 @ gt.theta_star > 0 and abs(f.e_2 @ np.array([1.0, 1e-7])) <= 1e-12


def test_frame_orthonormality_and_shared_span():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(2, 30))
        theta, star = rng.standard_normal(d), rng.standard_normal(d)
        f = plane_frame(theta, truth(star))
        for v in (f.e_hat_1, f.e_hat_2, f.e_1, f.e_2):
            assert abs(np.linalg.norm(v) - 1) <= 1e-12
        assert abs(f.e_hat_1 @ f.e_hat_2) <= 1e-12 and abs(f.e_1 @ f.e_2) <= 1e-12
        basis = np.column_stack([f.e_hat_1, f.e_hat_2])
        for v in (f.e_1, f.e_2):
            assert np.linalg.norm(v - basis @ (basis.T @ v)) <= 1e-10


def test_cycloid_landmarks():
    assert cycloid_point(0.0, 1.0) == (1.0, 0.0)
    assert cycloid_point(0.0, -1.0) == (-1.0, 0.0)
    x, y = cycloid_point(math.pi, 1.0)
    assert abs(x) <= 1e-15 and y == pytest.approx(2 / math.pi, abs=1e-15)
    x, y = cycloid_point(math.pi / 2, -1.0)
    assert x == pytest.approx(-(0.5 + 1 / math.pi), abs=1e-15)
    assert y == pytest.approx(1 / math.pi, abs=1e-15)


def test_cycloid_small_angle_series_matches_direct_formula():
    for p in (1e-3, 5e-3, 9.99e-3):
        x, _ = cycloid_point(p, 1.0)
        assert 1 - x == pytest.approx((p - math.sin(p)) / math.pi, rel=1e-9)


@given(st.floats(min_value=0.0, max_value=math.pi), st.sampled_from([1.0, -1.0]))
def test_cycloid_implicit_equation(p, s):
    x, y = cycloid_point(p, s)
    u = 0.5 * math.pi * y
    assert 0.0 <= math.pi * y <= 2.0
    # on the arc the implicit form reads s (pi/2) x = sqrt(u (1 - u)) + arccos sqrt(u)
    lhs = s * 0.5 * math.pi * x
    rhs = math.sqrt(max(u * (1 - u), 0.0)) + math.acos(min(math.sqrt(u), 1.0))
    assert abs(lhs - rhs) <= 1e-9


def _brute_distance(px, py, s, m=2_000_001):
    xs, ys = cycloid_point(np.linspace(0.0, math.pi, m), s)
    return float(np.min(np.hypot(xs - px, ys - py)))


def test_distance_on_curve_is_zero():
    assert distance_to_cycloid(cycloid_point(1.0, 1.0), 1.0) <= 1e-12


@pytest.mark.parametrize("point,s", [((0.0, 0.0), 1.0), ((0.5, 0.5), 1.0), ((-0.3, 0.1), -1.0), ((1.2, -0.2), 1.0)])
def test_distance_matches_brute_force_and_refinement(point, s):
    d = distance_to_cycloid(point, s)
    assert abs(d - _brute_distance(*point, s)) <= 1e-6
    assert abs(d - distance_to_cycloid(point, s, grid=100_001)) <= 1e-6


def test_distance_resolves_points_near_the_curve():
    for p in (0.05, 0.9, 2.0):
        x, y = cycloid_point(p, 1.0)
        assert distance_to_cycloid((x, y), 1.0) <= 1e-13
