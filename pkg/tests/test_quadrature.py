import math

import numpy as np
import pytest

from rwrange.quadrature import gauss_legendre, graded_radii, panel_rule, richardson, square_polar


def test_gauss_legendre_exact_for_polynomials():
    x, w = gauss_legendre(6)
    for deg in range(12):
        exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
        assert np.dot(w, x**deg) == pytest.approx(exact, abs=1e-14)
    with pytest.raises(ValueError):
        x[0] = 1.0


def test_panel_rule_batches():
    edges = np.array([[0.0, 1.0, 3.0], [0.0, 2.0, 4.0]])
    nodes, weights = panel_rule(edges, 5)
    assert nodes.shape == (2, 10)
    np.testing.assert_allclose(weights.sum(axis=1), [3.0, 4.0])
    np.testing.assert_allclose((weights * nodes**3).sum(axis=1), [81 / 4, 64.0])


def test_graded_radii():
    edges = graded_radii(0.01, 1.0)
    assert edges[0] == 0 and edges[1] == 0.01 and edges[-1] == 1.0
    assert np.all(np.diff(edges) > 0)
    with pytest.raises(ValueError):
        graded_radii(1.0, 0.5)


def test_square_polar_area_and_smooth_integrand():
    assert square_polar(lambda a, b: np.ones_like(a), 1e-3) == pytest.approx(4 * np.pi**2, rel=1e-13)
    got = square_polar(lambda a, b: np.cos(a) ** 2 * np.cos(b) ** 2, 1e-3)
    assert got == pytest.approx(np.pi**2, rel=1e-12)


def test_square_polar_log_singularity():
    # int over the square of log|p| has a closed form via the unit-square integral
    exact = 4 * np.pi**2 * (math.log(np.pi) + (math.log(2) / 2 - 3 / 2 + np.pi / 4))
    got = square_polar(lambda a, b: 0.5 * np.log(a * a + b * b), 1e-6)
    assert got == pytest.approx(exact, rel=1e-10)


def test_richardson_removes_leading_terms():
    f = lambda s: 1.0 + 3 * s - 2 * s**2
    est, gap = richardson([f(0.4), f(0.2), f(0.1)], p=1.0)
    assert est == pytest.approx(1.0, abs=1e-13)
    assert gap >= 0
    est2, _ = richardson([f(0.4), f(0.2)], p=1.0)
    assert est2 == pytest.approx(1.0 + 2 * 0.4 * 0.2, abs=1e-13)
    with pytest.raises(ValueError):
        richardson([1.0])
