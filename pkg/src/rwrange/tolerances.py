"""Every tolerance used by experiment verdicts, in one place."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerance:
    name: str
    value: float
    kind: str  # "se" (multiples of a standard error), "abs", "rel", "p" (p-value floor), "factor"
    note: str = ""


_ENTRIES = [
    Tolerance("identity_se", 3.0, "se", "MC identities (killed-range mean, hitting probabilities)"),
    Tolerance("gamma2_mean_se", 3.0, "se", "MC mean of gamma_2(1) against its closed form"),
    Tolerance("green_resolvent", 1e-6, "abs", "discrete resolvent identity residual"),
    Tolerance("green_cross", 1e-6, "abs", "series vs Fourier Green values"),
    Tolerance("green_asymptote", 5e-3, "abs", "g_lam - log(1/lam)/2pi - c_X at small lam"),
    Tolerance("closed_form", 1e-8, "abs", "u_eps and u_one against their defining integrals"),
    Tolerance("renorm_roundtrip", 1e-12, "abs", "renorm_transform(., b) then (., -b)"),
    Tolerance("series_gap_factor", 2.0, "factor", "gap <= factor * x^(k-m+1) at m = 1"),
    Tolerance("expansion_rel", 0.02, "rel", "MC mean of |R(n)|/n against the two-term prediction"),
    Tolerance("clt_mean_rel", 0.25, "rel", "second-order CLT means; convergence is logarithmic"),
    Tolerance("clt_sd_rel", 0.25, "rel", "second-order CLT standard deviations"),
    Tolerance("clt_ks", 0.15, "abs", "two-sample KS distance, calibrated on gamma_2 self-distance"),
    Tolerance("gof_p", 0.01, "p", "goodness-of-fit p-value floor for coupler marginals, split over the family of tests"),
    Tolerance("exponent_se", 2.0, "se", "separation of fitted exponents"),
    Tolerance("rescale_extrap", 1.0, "factor", "RMS two-route rescaling difference within factor * RMS combined Richardson gap"),
]

TOLERANCES: dict[str, Tolerance] = {t.name: t for t in _ENTRIES}


def tol(name: str) -> float:
    return TOLERANCES[name].value
