import csv
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rwrange.green import green_series
from rwrange.stepdist import StepLaw
from rwrange.walk import (
    RefusedTooLarge,
    WALK_CSV_COLUMNS,
    hits_before_killing,
    ilt,
    ilt_brute,
    ilt_table,
    killed_index,
    killed_positions,
    killed_ranges,
    occupation,
    range_curve,
    range_size,
    renorm_ilt,
    renorm_ilt_brute,
    sample_killed_horizon,
    shifted_ilt,
    shifted_ilt_brute,
    shifted_renorm_ilt,
    simulate_walk,
    streaming_range,
    walk_from_positions,
    walk_stats_row,
    write_walk_csv,
)

seeds = st.integers(0, 2**32 - 1)
small_n = st.integers(1, 10)


def test_empty_and_deterministic_paths(law):
    w = simulate_walk(law, 0, seed=1)
    assert w.positions.tolist() == [[0, 0]]
    a = simulate_walk(law, 500, seed=9).positions
    b = simulate_walk(law, 500, seed=9).positions
    assert a.tobytes() == b.tobytes()


def test_mean_square_displacement(law):
    n, reps = 1000, 10**4
    rng = np.random.default_rng(2)
    from rwrange.stepdist import sample_steps

    steps = sample_steps(law, rng, n * reps).reshape(reps, n, 2)
    r2 = (steps.sum(axis=1) ** 2).sum(axis=1) / n
    assert abs(r2.mean() - 2.0) < 4 * r2.std(ddof=1) / math.sqrt(reps)


def test_range_small_paths():
    back_and_forth = walk_from_positions([(0, 0), (1, 0), (0, 0), (1, 0), (0, 0)])
    assert [range_size(back_and_forth, n) for n in range(5)] == [0, 1, 2, 2, 2]
    straight = walk_from_positions([(i, 0) for i in range(8)])
    assert range_size(straight) == 7
    with pytest.raises(ValueError):
        walk_from_positions([(1, 0)])
    with pytest.raises(ValueError):
        range_size(straight, 8)


@given(seeds, st.integers(1, 300))
def test_range_monotone_and_bounded(law, seed, n):
    w = simulate_walk(law, n, seed=seed)
    ns = np.arange(n + 1)
    curve = range_curve(w, ns)
    assert np.all(np.diff(curve) >= 0)
    assert np.all(curve <= ns)
    assert curve[-1] == range_size(w)
    assert curve[n // 2] == range_size(w, n // 2)


@given(seeds, st.integers(1, 2000))
def test_streaming_range_matches_materialised(law, seed, n):
    cps = sorted({1, n // 3, n // 2, n} - {0})
    w = simulate_walk(law, n, seed=seed)
    np.testing.assert_array_equal(streaming_range(law, n, seed=seed, checkpoints=cps), range_curve(w, cps))


def test_constant_path_occupation():
    zero = StepLaw(((0, 0, Fraction(1)),))
    w = simulate_walk(zero, 6, seed=0)
    occ = occupation(w)
    assert occ.counts == {(0, 0): 6}
    assert ilt(occ, 2) == math.comb(7, 2)


def test_ilt_examples():
    w = walk_from_positions([(0, 0), (1, 0), (0, 0), (5, 5)])
    occ = occupation(w, 3)
    assert occ.counts == {(0, 0): 2, (1, 0): 1}
    assert ilt(occ, 1) == 3
    assert ilt(occ, 2) == 4
    assert ilt_brute(w, 3, 2) == 4
    with pytest.raises(ValueError):
        ilt(occ, 0)


@given(seeds, small_n, st.integers(1, 4))
def test_ilt_equals_brute_force(law, seed, n, k):
    w = simulate_walk(law, n, seed=seed)
    occ = occupation(w, n)
    assert ilt(occ, k) == ilt_brute(w, n, k)
    assert ilt(occ, 1) == n
    assert ilt(occ, 2) == sum(l * (l + 1) // 2 for l in occ.counts.values())
    if n == 1:
        assert ilt(occ, k) == 1


def test_brute_force_refuses_large(law):
    w = simulate_walk(law, 20, seed=0)
    with pytest.raises(RefusedTooLarge):
        ilt_brute(w, 20, 2)
    with pytest.raises(RefusedTooLarge):
        shifted_ilt_brute(w, 10, 5, [(0, 0)] * 4)


def test_ilt_is_arbitrary_precision(law):
    zero = StepLaw(((0, 0, Fraction(1)),))
    occ = occupation(simulate_walk(zero, 10**6, seed=0))
    assert ilt(occ, 6) == math.comb(10**6 + 5, 6)
    assert ilt(occ, 6) > 2**63


@given(seeds, st.integers(1, 8), st.integers(1, 5), st.fractions(Fraction(1, 10), Fraction(5)))
def test_renormalized_forms_agree_exactly(law, seed, n, k, g):
    w = simulate_walk(law, n, seed=seed)
    ivals = ilt_table(occupation(w, n), k)
    assert renorm_ilt(ivals, k, g) == renorm_ilt_brute(w, n, k, g)


def test_renorm_low_orders(law):
    w = simulate_walk(law, 50, seed=4)
    ivals = ilt_table(occupation(w), 2)
    assert renorm_ilt(ivals, 1, 0.7) == 50
    assert renorm_ilt(ivals, 2, 0.7) == pytest.approx(ivals[1] - 0.7 * 50)
    with pytest.raises(ValueError):
        renorm_ilt(ivals, 3, 0.7)


offsets_st = st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), min_size=0, max_size=3)


@given(seeds, small_n, offsets_st)
def test_shifted_ilt_equals_enumeration(law, seed, n, offs):
    w = simulate_walk(law, n, seed=seed)
    occ = occupation(w, n, with_times=True)
    k = len(offs) + 1
    assert shifted_ilt(occ, k, offs) == shifted_ilt_brute(w, n, k, offs)


@given(seeds, st.integers(1, 60), st.integers(1, 4))
def test_shifted_ilt_at_zero_offset_is_ilt(law, seed, n, k):
    occ = occupation(simulate_walk(law, n, seed=seed), with_times=True)
    assert shifted_ilt(occ, k, [(0, 0)] * (k - 1)) == ilt(occ, k)


def test_shifted_ilt_unreachable_offset_and_errors(law):
    occ = occupation(simulate_walk(law, 30, seed=1), with_times=True)
    assert shifted_ilt(occ, 2, [(10**6, 0)]) == 0
    with pytest.raises(ValueError):
        shifted_ilt(occupation(simulate_walk(law, 5, seed=1)), 2, [(0, 0)])
    with pytest.raises(ValueError):
        shifted_ilt(occ, 3, [(0, 0)])


def test_shifted_renorm_reduces_at_zero(law):
    tab = green_series(law, 0.2, radius=6)
    w = simulate_walk(law, 40, seed=2)
    occ = occupation(w, with_times=True)
    ivals = ilt_table(occ, 4)
    for k in (1, 2, 3, 4):
        got = shifted_renorm_ilt(occ, tab, k, [(0, 0)] * (k - 1))
        assert got == pytest.approx(renorm_ilt(ivals, k, tab[(0, 0)]), rel=1e-12, abs=1e-9)


def test_killed_horizon():
    rng = np.random.default_rng(0)
    assert killed_index(0.5, 0.1) == 5
    h = sample_killed_horizon(0.1, rng)
    assert h.zeta_lambda == max(1, math.ceil(h.zeta / 0.1))
    with pytest.raises(ValueError):
        sample_killed_horizon(1.5, rng)
    lam, n = 0.1, 10**5
    zl = killed_index(rng.exponential(size=n), lam)
    mean = 1 / -math.expm1(-lam)
    assert abs(zl.mean() - mean) < 4 * zl.std() / math.sqrt(n)
    p = math.exp(-1)
    assert abs(np.mean(zl > 10) - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_killed_positions_layout(law):
    kp = killed_positions(law, 0.1, 50, np.random.default_rng(3))
    assert len(kp.positions) == kp.zeta_lambda.sum()
    np.testing.assert_array_equal(kp.positions[kp.starts], 0)
    steps = np.abs(np.diff(kp.positions, axis=0))
    inside = np.diff(kp.replica) == 0
    assert steps[inside].max() <= 2
    assert np.all(kp.time[kp.starts] == 0)


def test_killed_ranges_match_positions(law):
    rngs = [np.random.default_rng(4) for _ in range(2)]
    ranges = killed_ranges(law, 0.1, 40, rngs[0])
    kp = killed_positions(law, 0.1, 40, rngs[1])
    # same draws of zeta; ranges over S_0..S_{zeta-1} depend only on the step count
    assert np.all(ranges >= 1) and np.all(ranges <= kp.zeta_lambda)


def test_killed_range_mean_identity_small(law):
    lam = 0.1
    tab = green_series(law, lam)
    vals = killed_ranges(law, lam, 2 * 10**4, np.random.default_rng(11))
    expect = 1 / (-math.expm1(-lam) * tab.g_lambda)
    assert abs(vals.mean() - expect) < 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_hitting_identity_small(law):
    lam = 0.1
    tab = green_series(law, lam)
    targets = [(1, 0), (2, 1)]
    hits = hits_before_killing(law, lam, targets, 2 * 10**4, np.random.default_rng(12))
    for t, x in enumerate(targets):
        p = tab[x] / tab.g_lambda
        assert abs(hits[:, t].mean() - p) < 3 * math.sqrt(p * (1 - p) / len(hits))


def test_walk_csv(law, tmp_path):
    w = simulate_walk(law, 100, seed=5)
    row = walk_stats_row(w, 100, 0.8)
    path = tmp_path / "walk.csv"
    write_walk_csv(path, [row], 0.1, 0.8)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# lambda=0.1")
    rec = next(csv.DictReader(lines[1:]))
    assert list(rec) == WALK_CSV_COLUMNS
    assert int(rec["range"]) == range_size(w)
    assert float(rec["gamma2"]) == pytest.approx(int(rec["I2"]) - 0.8 * 100)
