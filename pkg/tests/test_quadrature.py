"""Exactness checks for the triangle and edge quadrature tables."""

import math

import numpy as np
import pytest

from egns.quadrature import QuadratureRule, gauss_1d, quadrature_rule, refined_rule


def _reference_integral(m, n):
    # integral of x^m y^n over the triangle (0,0),(1,0),(0,1)
    return math.factorial(m) * math.factorial(n) / math.factorial(m + n + 2)


def _rule_integral(rule, m, n):
    # barycentric (l1,l2,l3) maps to (x,y) = (l2, l3); reference area is 1/2
    x = rule.points[:, 1]
    y = rule.points[:, 2]
    return 0.5 * np.sum(rule.weights * x**m * y**n)


@pytest.mark.parametrize("degree", range(1, 11))
def test_rules_integrate_monomials_exactly(degree):
    rule = quadrature_rule(degree)
    for m in range(degree + 1):
        for n in range(degree + 1 - m):
            got = _rule_integral(rule, m, n)
            assert got == pytest.approx(_reference_integral(m, n), abs=1e-14)


@pytest.mark.parametrize("degree", range(1, 11))
def test_weights_positive_and_sum_to_one(degree):
    rule = quadrature_rule(degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(rule.points.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(rule.points >= -1e-14)


def test_degree_two_rule_integrates_xy():
    assert _rule_integral(quadrature_rule(2), 1, 1) == pytest.approx(1.0 / 24, abs=1e-16)


def test_degree_eight_rule_integrates_x4y4():
    got = _rule_integral(quadrature_rule(8), 4, 4)
    assert got == pytest.approx(_reference_integral(4, 4), abs=1e-15)


def test_unsupported_degree_lists_supported_range():
    with pytest.raises(ValueError, match="1..10"):
        quadrature_rule(0)
    with pytest.raises(ValueError, match="1..10"):
        quadrature_rule(11)


def test_refined_rule_keeps_exactness_degree():
    rule = refined_rule(quadrature_rule(8))
    assert rule.num_points == 4 * quadrature_rule(8).num_points
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-13)
    for m in range(9):
        for n in range(9 - m):
            got = _rule_integral(rule, m, n)
            assert got == pytest.approx(_reference_integral(m, n), abs=1e-14)


def test_refined_rule_shrinks_degree_ten_error():
    base = quadrature_rule(8)
    ref = refined_rule(base)
    exact = _reference_integral(5, 5)
    err_base = abs(_rule_integral(base, 5, 5) - exact)
    err_ref = abs(_rule_integral(ref, 5, 5) - exact)
    assert err_ref < err_base / 100


def test_physical_points_shape():
    from egns.mesh import build_rect_uniform

    mesh = build_rect_uniform(2, 2)
    rule = quadrature_rule(2)
    pts = rule.physical_points(mesh)
    assert pts.shape == (mesh.num_triangles, rule.num_points, 2)
    # all points strictly inside their triangles: barycentrics positive
    assert np.isfinite(pts).all()


def test_gauss_1d_exactness():
    t, w = gauss_1d(2)
    assert np.dot(w, t**3) == pytest.approx(0.25, abs=1e-15)
    t, w = gauss_1d(4)
    assert np.dot(w, t**7) == pytest.approx(0.125, abs=1e-15)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)


def test_gauss_1d_rejects_zero_points():
    with pytest.raises(ValueError):
        gauss_1d(0)
