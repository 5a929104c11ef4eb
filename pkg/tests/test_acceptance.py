"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (collected again in the terminal
summary). Runtimes are asserted against the stated budgets on one core.
Criteria 6 and 9 share one set of 2000 gamma_2(1) paths at h = 1e-4.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from rwrange import brownian as bm
from rwrange import experiments as ex
from rwrange import green as gr
from rwrange import walk as wk
from rwrange.stepdist import ref_walk
from rwrange.tolerances import tol

pytestmark = pytest.mark.slow

GAMMA_PATHS = 2000
GAMMA_H = 1e-4


@pytest.fixture(scope="module")
def law():
    return ref_walk()


@pytest.fixture(scope="module")
def gamma_rows():
    t0 = time.perf_counter()
    rows = ex.gamma_samples(GAMMA_PATHS, GAMMA_H, 1.0, 2, bm.schedule(GAMMA_H), seed=0)
    return rows, time.perf_counter() - t0


def test_criterion_01_combinatorial_oracles(law, report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches, checks = 0, 0
    for _ in range(200):
        n = int(rng.integers(1, 11))
        w = wk.simulate_walk(law, n, rng)
        occ = wk.occupation(w, n, with_times=True)
        for k in range(1, 5):
            mismatches += wk.ilt(occ, k) != wk.ilt_brute(w, n, k)
            offs = [tuple(int(c) for c in rng.integers(-2, 3, size=2)) for _ in range(k - 1)]
            mismatches += wk.shifted_ilt(occ, k, offs) != wk.shifted_ilt_brute(w, n, k, offs)
            checks += 2
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 10
    report(1, "combinatorial oracles", ok, f"{mismatches} mismatches in {checks} checks, {dt:.1f} s")
    assert mismatches == 0
    assert dt < 10


def test_criterion_02_green_identities(law, report):
    t0 = time.perf_counter()
    mass = {}
    for lam in (0.2, 0.1, 0.05):
        tab = gr.green_series(law, lam)
        mass[lam] = (abs(tab.total - 1 / -math.expm1(-lam)), tab.mass_bound)
    rc = gr.resolvent_check(law, 0.1, 0.2, radius=5)
    series = gr.green_series(law, 0.05, radius=10)
    fourier = gr.green_fourier_table(law, 0.05, 10)
    cross = float(np.abs(series.values - fourier.values).max())
    dt = time.perf_counter() - t0
    mass_ok = all(err <= bound for err, bound in mass.values())
    ok = mass_ok and rc.exact <= 1e-6 and cross <= 1e-6 and dt < 120
    worst = max(err for err, _ in mass.values())
    report(2, "Green identities", ok, f"mass err {worst:.1e} (within bounds: {mass_ok}), resolvent {rc.exact:.1e}, series vs Fourier {cross:.1e}, {dt:.1f} s")
    assert mass_ok
    assert rc.exact <= tol("green_resolvent")
    assert cross <= tol("green_cross")
    assert dt < 120


def test_criterion_03_green_asymptote(law, report):
    t0 = time.perf_counter()
    cx = gr.c_x(law)
    gap = gr.asymptote_gap(law, 1e-5)
    diff = abs(gap.value - cx.value)
    dt = time.perf_counter() - t0
    ok = diff <= tol("green_asymptote") and dt < 300
    report(3, "Green asymptote", ok, f"g - log(1/lam)/2pi = {gap.value:.6f} at lam = 1e-5, c_X = {cx.value:.10f}, diff {diff:.2e}, {dt:.1f} s")
    assert diff <= tol("green_asymptote")
    assert dt < 300


def test_criterion_04_killed_range_mean(report):
    res = ex.run_killed_range(ex.ExperimentSpec("killed-range", params={"lambda": [0.01]}, replicas=10**5, seed=0))
    v = res.verdict("killed_mean[0.01]")
    est = res.estimate("killed_range_mean[0.01]")
    ok = v.passed and res.runtime_s < 300
    report(4, "killed-range mean", ok, f"MC {est.value:.4f} +- {est.std_error:.4f} vs exact {v.target:.4f} ({v.detail}), {res.runtime_s:.1f} s")
    assert v.passed
    assert res.runtime_s < 300


def test_criterion_05_hitting_identity(law, report):
    t0 = time.perf_counter()
    lam = 0.05
    targets = [(1, 0), (3, 4)]
    g = ex.green_at(law, lam, [(0, 0)] + targets)
    hits = wk.hits_before_killing(law, lam, targets, 10**5, np.random.default_rng(5))
    parts, ok = [], True
    for j, x in enumerate(targets):
        est = ex.mc_estimate(str(x), hits[:, j])
        p = g[j + 1] / g[0]
        z = abs(est.value - p) / est.std_error
        ok &= z <= tol("identity_se")
        parts.append(f"x={x}: {est.value:.4f} vs {p:.4f} (z = {z:.2f})")
    dt = time.perf_counter() - t0
    report(5, "hitting identity", ok and dt < 120, "; ".join(parts) + f", {dt:.1f} s")
    assert ok
    assert dt < 120


def test_criterion_06_brownian_anchors(gamma_rows, report):
    rows, sample_time = gamma_rows
    t0 = time.perf_counter()
    quad = lambda f: integrate.quad(f, 0, math.inf, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    eps_err = max(abs(bm.u_eps(e) - quad(lambda s: math.exp(-s) / (2 * math.pi * (s + e)))) for e in (1e-4, 1e-3, 0.01, 0.1, 1.0))
    one_err = max(
        abs(bm.u_one(r) - quad(lambda s: math.exp(-s - r * r / (2 * s)) / (2 * math.pi * s))) for r in (0.01, 0.1, 1.0, 3.0)
    )
    g2 = np.array([r["estimates"][1].value for r in rows])
    est = ex.mc_estimate("gamma2", g2)
    z = abs(est.value - bm.MEAN_GAMMA2) / est.std_error
    dt = sample_time + time.perf_counter() - t0
    ok = eps_err <= 1e-8 and one_err <= 1e-8 and z <= tol("gamma2_mean_se") and len(g2) >= 2000 and dt < 900
    report(
        6,
        "Brownian anchors",
        ok,
        f"u_eps err {eps_err:.1e}, u_one err {one_err:.1e}; mean gamma_2(1) = {est.value:.5f} +- {est.std_error:.5f} "
        f"vs {bm.MEAN_GAMMA2:.5f} (z = {z:.2f}, {len(g2)} paths), {dt:.0f} s",
    )
    assert eps_err <= tol("closed_form") and one_err <= tol("closed_form")
    assert z <= tol("gamma2_mean_se")
    assert dt < 900


def test_criterion_07_renormalization_identities(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    roundtrip = 0.0
    for k in range(1, 7):
        for _ in range(50):
            v = rng.normal(size=k)
            b = float(rng.normal())
            roundtrip = max(roundtrip, float(np.abs(bm.renorm_transform(bm.renorm_transform(v, b), -b) - v).max()))
    rs = ex.rescaling_two_routes(100, seed=0)
    diff = rs["route_a"] - rs["route_b"]
    combined = rs["err_a"] + rs["err_b"]
    rms_diff = float(np.sqrt(np.mean(diff**2)))
    rms_tol = tol("rescale_extrap") * float(np.sqrt(np.mean(combined**2)))
    grid = ex.series_identity_grid()
    m1 = [r for r in grid if r["m"] == 1]
    series_ok = all(r["gap"] <= r["simple_bound"] + r["rounding"] for r in m1)
    bound_ok = all(r["gap"] <= r["bound"] + r["rounding"] for r in grid)
    dt = time.perf_counter() - t0
    ok = (
        roundtrip <= 1e-12
        and rms_diff <= rms_tol
        and rs["alpha_rel_gap"] <= 1e-12
        and series_ok
        and bound_ok
        and dt < 600
    )
    report(
        7,
        "renormalization identities",
        ok,
        f"round trip {roundtrip:.1e}; rescaling RMS diff {rms_diff:.2e} vs RMS gap {rms_tol:.2e} "
        f"(mean diff {diff.mean():.2e}); alpha rescaling {rs['alpha_rel_gap']:.1e}; "
        f"series gap <= 2x^k at m=1: {series_ok}, general tail bound: {bound_ok}, {dt:.0f} s",
    )
    assert roundtrip <= tol("renorm_roundtrip")
    assert rms_diff <= rms_tol
    assert rs["alpha_rel_gap"] <= 1e-12
    assert series_ok and bound_ok
    assert dt < 600


def test_criterion_08_expansion_at_expectation(report):
    res = ex.run_range_law(ex.ExperimentSpec("range", params={"n": [10**6]}, replicas=10**4, seed=0))
    row = res.tables["range"][0]
    v_rel = res.verdict("expansion_P2[1000000]")
    v_close = res.verdict("closer_to_P2[1000000]")
    ok = v_rel.passed and v_close.passed and res.runtime_s < 1800
    report(
        8,
        "expansion at expectation level",
        ok,
        f"E|R|/n = {row['mean_range_over_n']:.5f} +- {row['stderr']:.5f}, P2 = {row['P2']:.5f}, P1 = {row['P1']:.5f}, "
        f"rel err {row['rel_err_P2']:+.4f}, {res.runtime_s:.0f} s",
    )
    assert v_rel.passed and v_close.passed
    assert res.runtime_s < 1800


def test_criterion_09_second_order_clt(gamma_rows, report):
    rows, sample_time = gamma_rows
    spec = ex.ExperimentSpec("clt", params={"n": 2**20, "walk_replicas": 2000, "h": GAMMA_H}, replicas=2000, seed=0)
    t0 = time.perf_counter()
    smp = ex.clt_samples(spec, gamma_rows=rows)
    res = ex.run_clt_second_order(spec, smp)
    dt = sample_time + time.perf_counter() - t0
    est = {e.name: e for e in res.estimates}
    ok = res.passed and dt < 3600
    report(
        9,
        "second-order CLT",
        ok,
        f"mean {est['walk_stat_mean'].value:.3f} vs {est['bm_stat_mean'].value:.3f}, "
        f"sd {est['walk_stat_sd'].value:.3f} vs {est['bm_stat_sd'].value:.3f}, "
        f"KS {est['ks_distance'].value:.3f} (self {est['ks_self_distance'].value:.3f}); "
        f"(log n)^2 scaling mean {est['walk_stat_logn_mean'].value:.3f}; "
        f"{len(smp['ranges'])} walks / {len(smp['gamma2'])} paths, {dt:.0f} s",
    )
    for name in ("clt_mean", "clt_sd", "clt_ks", "clt_sample_sizes"):
        assert res.verdict(name).passed, res.verdict(name)
    assert dt < 3600


def test_criterion_10_coupling_contract(report):
    res = ex.run_coupling(ex.ExperimentSpec("couple", params={"blocks": [1, 16, 64]}, replicas=200, seed=0))
    ex_ = {b: res.estimate(f"exponent[{b}]") for b in (1, 16, 64)}
    gof = [v for v in res.verdicts if v.name.startswith("gof_")]
    min_p = min(v.measured for v in gof)
    ok = res.passed and res.runtime_s < 1200
    report(
        10,
        "coupling contract",
        ok,
        "exponents " + ", ".join(f"B={b}: {e.value:.3f} +- {e.std_error:.3f}" for b, e in ex_.items())
        + f"; min GOF p {min_p:.3g} (family floor {gof[0].tolerance:.2g}), {res.runtime_s:.0f} s",
    )
    for v in res.verdicts:
        assert v.passed, v
    assert res.runtime_s < 1200


def test_criterion_11_hoelder_trend(report):
    res = ex.run_hoelder_trend(ex.ExperimentSpec("hoelder", params={"lambda": [0.05, 0.02]}, replicas=20000, seed=0))
    trend = {row["lambda"]: [] for row in res.tables["hoelder"]}
    for row in res.tables["hoelder"]:
        trend[row["lambda"]].append(f"{row['stat']:.4f}")
    ok = all(v.passed for v in res.verdicts if not v.name.startswith("hoelder_exponent")) and res.runtime_s < 600
    report(11, "Hoelder trend", ok, "; ".join(f"lam {lam}: {' < '.join(s)}" for lam, s in trend.items()) + f", y = 0 exact zero, {res.runtime_s:.0f} s")
    for v in res.verdicts:
        if v.name.startswith(("hoelder_zero", "hoelder_monotone")):
            assert v.passed, v
    assert res.runtime_s < 600
