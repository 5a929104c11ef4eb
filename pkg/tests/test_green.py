import math

import numpy as np
import pytest

from rwrange.green import (
    CORNER_CONSTANT,
    TorusTooSmall,
    WindowExceeded,
    asymptote_gap,
    c_x,
    cx_integrand,
    diff_green,
    diff_scaling,
    green_fourier,
    green_fourier_table,
    green_lm_norm,
    green_series,
    model_integral,
    norm_scaling,
    resolvent_check,
    transition_table,
    wrap_bound,
)

# g_lam - log(1/lam)/(2 pi) from nested adaptive scipy quadrature of the
# Fourier integral in polar form over one octant, with a hand-written phi
ASYMPTOTE_ORACLE = {
    1e-4: 0.825366018834486,
    1e-5: 0.8253029975251227,
    1e-6: 0.8252955410134932,
    1e-7: 0.8252946800785335,
}
CX_VALUE = 0.8252945699845


@pytest.fixture(scope="module")
def series_005(law):
    return green_series(law, 0.05)


def test_transition_table_basics(law):
    tt = transition_table(law, 400)
    q0 = tt.q(0, radius=3)
    assert q0[3, 3] == pytest.approx(1.0, abs=1e-14)
    assert np.abs(q0).sum() == pytest.approx(1.0, abs=1e-13)
    for n in (1, 10, 100, 400):
        assert tt.q(n).sum() == pytest.approx(1.0, abs=1e-12)
    q1 = tt.q(1, radius=2)
    for (dx, dy), p in zip(law.vectors, law.probs):
        assert q1[dx + 2, dy + 2] == pytest.approx(p, abs=1e-14)
    with pytest.raises(IndexError):
        tt.q(401)


def test_return_probability_decays_like_one_over_n(law):
    tt = transition_table(law, 10**4)
    nq = np.array([n * tt.at_origin([n])[0] for n in (100, 300, 1000, 3000, 10**4)])
    # local limit: n q_n(0) -> 1/(2 pi)
    assert np.all(np.abs(nq - 1 / (2 * np.pi)) < 0.01)
    assert np.ptp(nq) < 0.002


def test_torus_too_small(law):
    with pytest.raises(TorusTooSmall) as info:
        transition_table(law, 10**4, torus_size=64)
    assert info.value.args
    assert wrap_bound(law, 0, 64) == 0.0


@pytest.mark.parametrize("lam", [0.2, 0.1, 0.05])
def test_series_mass_symmetry_positivity(law, lam):
    tab = green_series(law, lam)
    expect = 1 / -math.expm1(-lam)
    assert abs(tab.total - expect) <= tab.mass_bound
    v = tab.values
    np.testing.assert_array_equal(v, v[::-1, ::-1])
    centre = v[tab.radius, tab.radius]
    assert centre == tab.g_lambda
    near = v[tab.radius - 10 : tab.radius + 11, tab.radius - 10 : tab.radius + 11]
    assert np.all(near > 0) and np.all(v <= centre)


def test_series_mass_closed_form_value(law):
    tab = green_series(law, 0.1)
    assert tab.total == pytest.approx(10.50833, abs=1e-5)


def test_series_refuses_small_lambda(law):
    with pytest.raises(ValueError):
        green_series(law, 0.001)
    with pytest.raises(TorusTooSmall):
        green_series(law, 0.05, torus_size=32)


def test_series_and_fourier_agree(law, series_005):
    four = green_fourier_table(law, 0.05, 10)
    r = series_005.radius
    win = series_005.values[r - 10 : r + 11, r - 10 : r + 11]
    assert np.abs(win - four.values).max() < 1e-6
    for x in [(0, 0), (3, 4)]:
        assert abs(green_fourier(law, 0.05, x).value - series_005[x]) < 1e-6


def test_green_near_lambda_one(law):
    g = green_fourier(law, 0.9).value
    phi_max = 0.8
    assert 1.0 <= g <= 1 / (1 - math.exp(-0.9) * phi_max) + 1


def test_model_integral_against_brute_force():
    lam = 0.3
    n = 2000
    p = (np.arange(n) + 0.5) / n * 2 * np.pi - np.pi
    p1, p2 = np.meshgrid(p, p)
    brute = np.sum(1 / (lam + 0.5 * (p1**2 + p2**2))) * (2 * np.pi / n) ** 2
    assert model_integral(lam) == pytest.approx(brute, rel=1e-5)


def test_corner_constant():
    assert CORNER_CONSTANT == pytest.approx(0.0350221637972656, abs=1e-13)


def test_cx_value_and_stability(law):
    est = c_x(law)
    assert est.value == pytest.approx(CX_VALUE, abs=1e-12)
    assert est.bound < 1e-5
    assert max(est.levels) - min(est.levels) < 1e-5
    assert est.value - est.without_corner == pytest.approx(CORNER_CONSTANT)
    assert abs(est.value - ASYMPTOTE_ORACLE[1e-7]) < 2e-7


@pytest.mark.parametrize("lam", sorted(ASYMPTOTE_ORACLE))
def test_asymptote_matches_independent_quadrature(law, lam):
    gap = asymptote_gap(law, lam)
    assert gap.value == pytest.approx(ASYMPTOTE_ORACLE[lam], abs=1e-9)


def test_asymptote_is_cauchy(law):
    gaps = [asymptote_gap(law, lam).value for lam in (1e-3, 1e-4, 1e-5)]
    steps = np.abs(np.diff(gaps))
    assert steps[1] < steps[0]
    assert abs(gaps[-1] - c_x(law).value) < 5e-3


def test_cx_integrand_finite_near_origin(law):
    fn = cx_integrand(law)
    t = np.linspace(0, 2 * np.pi, 17)
    vals = fn(1e-6 * np.cos(t), 1e-6 * np.sin(t))
    assert np.all(np.isfinite(vals))


def test_resolvent_identity(law):
    chk = resolvent_check(law, 0.1, 0.2, radius=5)
    assert chk.exact < 1e-6
    # the continuous-time form misses an O(lambda) correction
    assert chk.continuous_form > 100 * chk.exact


def test_lm_norms(law):
    tab = green_series(law, 0.1)
    one = green_lm_norm(tab, 1)
    assert abs(one.value - 1 / -math.expm1(-0.1)) <= one.bound + 1e-12
    n2, n8 = green_lm_norm(tab, 2).value, green_lm_norm(tab, 8).value
    assert n2 > n8 > tab.g_lambda
    assert n8 - tab.g_lambda < 0.2 * tab.g_lambda
    assert green_lm_norm(tab, 32).value - tab.g_lambda < n8 - tab.g_lambda
    with pytest.raises(ValueError):
        green_lm_norm(tab, 0.5)


@pytest.mark.parametrize("m", [2, 3])
def test_norm_growth_approaches_one_over_m(law, m):
    coarse, _ = norm_scaling(law, [0.2, 0.1, 0.05], m)
    fine, _ = norm_scaling(law, [0.04, 0.02, 0.01], m)
    assert 0 < coarse < fine < 1 / m + 0.1


def test_diff_green(law):
    tab = green_series(law, 0.1, radius=30)
    assert np.all(diff_green(tab, (0, 0)).values == 0)
    z = (2, 1)
    d = diff_green(tab, z).values
    dm = diff_green(tab, (-2, -1)).values
    # Delta_{-z} G(x + z) = -Delta_z G(x) on the common window
    np.testing.assert_allclose(dm, -d, atol=1e-15)
    with pytest.raises(WindowExceeded):
        diff_green(tab, (31, 0))
    periodic = green_series(law, 0.1)
    assert diff_green(periodic, z).norms[2] > 0


@pytest.mark.parametrize("m", [2, 3])
def test_diff_norm_growth_rate(law, m):
    out = diff_scaling(law, [0.2, 0.1, 0.05, 0.02], m)
    assert 0 < out["slope"] <= 1 / m + 0.1


def test_window_lookup(law):
    tab = green_series(law, 0.2, radius=4)
    assert tab[(4, -4)] > 0
    with pytest.raises(WindowExceeded):
        tab[(5, 0)]
