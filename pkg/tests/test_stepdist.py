from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rwrange.stepdist import (
    CovarianceNotIdentity,
    NotStronglyAperiodic,
    NotSymmetric,
    ProbsDontSum,
    StepLaw,
    char_fn,
    check_strong_aperiodicity,
    dump_step_law,
    load_step_law,
    make_step_law,
    ref_walk,
    sample_step,
    sample_steps,
)

DIAGONAL = [((sx, sy), Fraction(1, 4)) for sx in (-1, 1) for sy in (-1, 1)]
NEAREST = [((1, 0), 0.25), ((-1, 0), 0.25), ((0, 1), 0.25), ((0, -1), 0.25)]


def phi_by_hand(p1, p2):
    # 12-point table written out term by term
    return (
        0.2 * (np.cos(p1) + np.cos(p2))
        + 0.2 * (np.cos(p1 + p2) + np.cos(p1 - p2))
        + 0.1 * (np.cos(2 * p1) + np.cos(2 * p2))
    )


def test_ref_walk_is_valid_with_identity_covariance(law):
    assert len(law) == 12
    assert law.is_exact
    assert abs(law.probs.sum() - 1) < 1e-12
    np.testing.assert_array_equal(law.covariance, np.eye(2))
    assert law.moment > 0


def test_diagonal_walk_rejected_at_pi_pi():
    with pytest.raises(NotStronglyAperiodic) as info:
        make_step_law(DIAGONAL)
    p = np.array(info.value.p)
    assert np.allclose(np.abs(p), np.pi)
    assert char_fn(ref_walk(), (0, 0)) == 1.0


def test_nearest_neighbour_reports_half_identity():
    with pytest.raises(CovarianceNotIdentity) as info:
        make_step_law(NEAREST)
    np.testing.assert_allclose(info.value.matrix, 0.5 * np.eye(2))


def test_covariance_flag_still_checks_periodicity():
    # nearest-neighbour walk is bipartite: phi(pi, pi) = -1
    with pytest.raises(NotStronglyAperiodic):
        make_step_law(NEAREST, require_identity_cov=False)
    lazy = NEAREST + [((0, 0), 1.0)]
    lazy = [(v, p / 2) for v, p in lazy]
    law = make_step_law(lazy, require_identity_cov=False)
    np.testing.assert_allclose(law.covariance, 0.25 * np.eye(2))


def test_asymmetric_and_bad_sum_both_listed():
    entries = [((1, 0), 0.5), ((0, 1), 0.4)]
    with pytest.raises(ProbsDontSum) as info:
        make_step_law(entries)
    kinds = {type(v) for v in info.value.violations}
    assert {ProbsDontSum, NotSymmetric, CovarianceNotIdentity} <= kinds


def test_rejects_empty_and_nonpositive():
    with pytest.raises(ValueError):
        make_step_law([])
    with pytest.raises(ValueError):
        make_step_law([((1, 0), 0.0), ((-1, 0), 1.0)])
    with pytest.raises(ValueError):
        make_step_law(ref_walk().entries, moment_p=2.0)


@pytest.mark.parametrize(
    "p, expected",
    [((0.0, 0.0), 1.0), ((np.pi, np.pi), 0.2), ((0.0, np.pi), -0.2)],
)
def test_char_fn_examples(law, p, expected):
    assert char_fn(law, p) == pytest.approx(expected, abs=1e-15)


def test_char_fn_matches_hand_formula_and_complex_sum(law):
    rng = np.random.default_rng(0)
    p = rng.uniform(-np.pi, np.pi, size=(100, 2))
    got = char_fn(law, p)
    np.testing.assert_allclose(got, phi_by_hand(p[:, 0], p[:, 1]), atol=1e-14)
    ref = (np.exp(1j * p @ law.vectors.T) @ law.probs).real
    np.testing.assert_allclose(got, ref, atol=1e-14)
    np.testing.assert_allclose(got, char_fn(law, -p), atol=1e-14)


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_one_minus_and_quartic_part_are_consistent(p1, p2):
    law = ref_walk()
    p = np.array([p1, p2])
    phi = float(law.charfn(p))
    assert float(law.charfn.one_minus(p)) == pytest.approx(1 - phi, abs=1e-14)
    q = float(law.charfn.quartic_part(p))
    assert q == pytest.approx(phi - 1 + 0.5 * (p1 * p1 + p2 * p2), abs=1e-13)


@given(
    st.lists(
        st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(1, 9)),
        min_size=1,
        max_size=6,
    )
)
def test_accepted_laws_satisfy_invariants(rows):
    # symmetrize, then let the validator decide
    entries = []
    for dx, dy, w in rows:
        if (dx, dy) == (0, 0):
            continue
        entries += [((dx, dy), w), ((-dx, -dy), w)]
    if not entries:
        return
    total = sum(w for _, w in entries)
    entries = [(v, Fraction(w, total)) for v, w in entries]
    try:
        law = make_step_law(entries, require_identity_cov=False)
    except NotStronglyAperiodic:
        return
    assert abs(law.probs.sum() - 1) <= 1e-12
    assert abs(float(law.charfn(np.zeros(2))) - 1.0) <= 1e-15
    p = np.random.default_rng(1).uniform(-np.pi, np.pi, size=(100, 2))
    np.testing.assert_allclose(law.charfn(p), law.charfn(-p), atol=1e-14)
    ok, worst, _ = check_strong_aperiodicity(law, 64)
    assert worst < 1.0


def test_aperiodicity_grid_verdicts(law):
    ok64, worst64, _ = check_strong_aperiodicity(law, 64)
    ok512, worst512, _ = check_strong_aperiodicity(law, 512)
    assert ok64 and ok512
    # away from the origin phi stays well below one
    axis = np.linspace(-np.pi, np.pi, 257)
    p = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    far = np.hypot(p[..., 0], p[..., 1]) >= 1.0
    assert np.abs(law.charfn(p))[far].max() < 0.8
    assert float(law.charfn(np.zeros(2))) == 1.0
    with pytest.raises(ValueError):
        check_strong_aperiodicity(law, 32)


def test_aperiodicity_grid_flags_diagonal_walk():
    diag = StepLaw(tuple((sx, sy, Fraction(1, 4)) for sx in (-1, 1) for sy in (-1, 1)))
    ok, worst, p = check_strong_aperiodicity(diag, 128)
    assert not ok
    assert worst == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(np.abs(p), np.pi) or np.allclose(np.abs(p), [np.pi, 0]) or np.allclose(np.abs(p), [0, np.pi])


def test_sampling_frequencies_and_moments(law):
    n = 10**6
    steps = sample_steps(law, np.random.default_rng(7), n)
    for (dx, dy), p in zip(law.vectors, law.probs):
        freq = np.mean((steps[:, 0] == dx) & (steps[:, 1] == dy))
        assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n)
    mean = steps.mean(axis=0)
    assert np.all(np.abs(mean) < 4 / np.sqrt(n))
    cov = np.cov(steps.T)
    # fourth moment of a coordinate bounds the SE of its empirical variance
    m4 = float(np.sum(law.probs * law.vectors[:, 0].astype(float) ** 4))
    assert np.all(np.abs(cov - np.eye(2)) < 4 * np.sqrt(m4 / n))


def test_sampling_is_deterministic(law):
    a = sample_steps(law, np.random.default_rng(3), 1000)
    b = sample_steps(law, np.random.default_rng(3), 1000)
    np.testing.assert_array_equal(a, b)
    assert sample_step(law, np.random.default_rng(5)) == sample_step(law, np.random.default_rng(5))


def test_text_table_round_trip(law, tmp_path):
    path = tmp_path / "law.txt"
    dump_step_law(law, path)
    again = load_step_law(path)
    assert again.entries == law.entries
    (tmp_path / "bad.txt").write_text("1 0 1\n")
    with pytest.raises(ValueError):
        load_step_law(tmp_path / "bad.txt")
