"""Killed lattice Green's function G_lam(x), g_lam = G_lam(0) and the constant c_X.

Two independent routes:

* ``green_series``: G_lam = sum_{n<=N} e^{-lam n} q_n on a periodic torus, the
  geometric sum done once in the Fourier domain.
* ``green_fourier``: (2 pi)^-2 int cos(p.x) / (1 - e^{-lam} phi(p)) dp over
  [-pi, pi]^2, written as the model kernel 1/(lam + |p|^2/2) (integrated in
  closed form plus a smooth one-dimensional corner integral) and a bounded
  remainder handled by graded polar Gauss-Legendre panels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .quadrature import gauss_legendre, graded_radii, panel_rule, square_polar
from .stepdist import StepLaw

TWO_PI = 2.0 * math.pi
CATALAN = 0.91596559417721901505
WRAP_TOL = 1e-12
SERIES_TAIL_TOL = 1e-10


class TorusTooSmall(ValueError):
    def __init__(self, message: str, needed: int, bound: float):
        super().__init__(message)
        self.needed = needed
        self.bound = bound


class QuadratureNotConverged(ArithmeticError):
    def __init__(self, message: str, values: Sequence[float]):
        super().__init__(message)
        self.values = list(values)


class WindowExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# torus transition tables


def wrap_bound(law: StepLaw, n: int, torus_size: int) -> float:
    """Bernstein bound on P(max coordinate of S_n reaches torus_size/2).

    Each coordinate is a sum of n symmetric steps bounded by ``max_step`` with
    variance from the covariance diagonal; two coordinates, two sides.
    """
    if n == 0:
        return 0.0
    t = torus_size // 2
    var = float(np.max(np.diag(law.covariance)))
    m = law.max_step
    return min(1.0, 4.0 * math.exp(-t * t / (2.0 * (n * var + m * t / 3.0))))


def choose_torus(law: StepLaw, n: int, tol: float = WRAP_TOL, minimum: int = 64) -> int:
    size = minimum
    while wrap_bound(law, n, size) >= tol:
        size *= 2
    return size


def _torus_spectrum(law: StepLaw, size: int) -> np.ndarray:
    """phi on the torus frequency grid 2 pi k / size, full (size, size) array."""
    p = TWO_PI * np.fft.fftfreq(size)
    out = np.zeros((size, size))
    for (dx, dy), w in zip(law.vectors, law.probs):
        a, b = p * dx, p * dy
        out += w * (np.outer(np.cos(a), np.cos(b)) - np.outer(np.sin(a), np.sin(b)))
    return out


def _centered(arr: np.ndarray, radius: int) -> np.ndarray:
    """Window [-radius, radius]^2 of a torus array indexed by residues."""
    idx = np.arange(-radius, radius + 1) % arr.shape[0]
    return arr[np.ix_(idx, idx)]


@dataclass(frozen=True)
class TransitionTable:
    """q_n on a torus, produced lazily from the step spectrum."""

    law: StepLaw
    n_max: int
    torus_size: int
    wrap: float
    spectrum: np.ndarray = field(repr=False)

    def q(self, n: int, radius: int | None = None) -> np.ndarray:
        """q_n on the window [-radius, radius]^2 (default: the whole torus, centred)."""
        if not 0 <= n <= self.n_max:
            raise IndexError(f"n={n} outside 0..{self.n_max}")
        L = self.torus_size
        half = self.spectrum[:, : L // 2 + 1] ** n
        arr = np.fft.irfft2(half, s=(L, L))
        return _centered(arr, L // 2 - 1 if radius is None else radius)

    def at_origin(self, ns: Sequence[int]) -> np.ndarray:
        """q_n(0) for each n, as the torus average of phi^n."""
        flat = self.spectrum.ravel()
        return np.array([float(np.mean(flat**n)) for n in ns])

    def __getitem__(self, n: int) -> np.ndarray:
        return self.q(n)

    def __len__(self) -> int:
        return self.n_max + 1


def transition_table(law: StepLaw, n_max: int, torus_size: int | None = None) -> TransitionTable:
    """Transition probabilities q_0..q_{n_max} on a power-of-two torus.

    Raises:
        TorusTooSmall: the wrap-around bound at n_max is not below 1e-12.
    """
    needed = choose_torus(law, n_max)
    if torus_size is None:
        torus_size = needed
    if torus_size & (torus_size - 1) or torus_size < 4:
        raise ValueError("torus_size must be a power of two")
    bound = wrap_bound(law, n_max, torus_size)
    if bound >= WRAP_TOL:
        raise TorusTooSmall(f"torus {torus_size} too small for n={n_max}: wrap bound {bound:.3g}, need {needed}", needed, bound)
    return TransitionTable(law, n_max, torus_size, bound, _torus_spectrum(law, torus_size))


# ---------------------------------------------------------------------------
# Green tables


@dataclass(frozen=True)
class GreenTable:
    """G_lam on the window [-radius, radius]^2; ``values[x + radius, y + radius]``.

    ``tail_bound`` covers truncation of the series and any mass outside the
    window, ``wrap_bound`` the periodisation error (both in summed absolute
    terms). ``periodic`` marks a window that is a whole torus.
    """

    lam: float
    radius: int
    values: np.ndarray = field(repr=False)
    g_lambda: float
    method: str
    tail_bound: float = 0.0
    wrap_bound: float = 0.0
    periodic: bool = False
    n_terms: int | None = None

    def __getitem__(self, site) -> float:
        x, y = site
        r = self.radius
        if max(abs(x), abs(y)) > r:
            raise WindowExceeded(f"site {site} outside window of radius {r}")
        return float(self.values[x + r, y + r])

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def mass_bound(self) -> float:
        return self.tail_bound + self.wrap_bound

    def sites(self) -> np.ndarray:
        r = np.arange(-self.radius, self.radius + 1)
        xx, yy = np.meshgrid(r, r, indexing="ij")
        return np.stack([xx, yy], axis=-1)


def series_terms(lam: float, tol: float = SERIES_TAIL_TOL) -> int:
    """Smallest N with e^{-lam N} / (1 - e^{-lam}) < tol."""
    return int(math.ceil((math.log(1.0 / tol) - math.log(-math.expm1(-lam))) / lam))


def green_series(
    law: StepLaw,
    lam: float,
    radius: int | None = None,
    *,
    torus_size: int | None = None,
    tol: float = SERIES_TAIL_TOL,
) -> GreenTable:
    """G_lam(x) = sum_{n<=N} e^{-lam n} q_n(x) by one inverse FFT.

    The torus is chosen so that S_N stays inside it except with probability
    below 1e-12. ``radius=None`` keeps the whole torus, centred, as the window.
    """
    if lam < 0.01:
        raise ValueError("series route needs lambda >= 0.01")
    n_terms = series_terms(lam, tol)
    needed = choose_torus(law, n_terms)
    if torus_size is None:
        torus_size = needed
    wrap = wrap_bound(law, n_terms, torus_size)
    if wrap >= WRAP_TOL:
        raise TorusTooSmall(f"torus {torus_size} too small for N={n_terms}: wrap bound {wrap:.3g}", needed, wrap)
    L = torus_size
    a = math.exp(-lam)
    z = a * _torus_spectrum(law, L)[:, : L // 2 + 1]
    # sum_{n=0}^N z^n; |z| <= a < 1 so the denominator is safe
    spec = (1.0 - z ** (n_terms + 1)) / (1.0 - z)
    arr = np.fft.irfft2(spec, s=(L, L))
    periodic = radius is None
    r = L // 2 - 1 if periodic else radius
    if 2 * r + 1 > L:
        raise WindowExceeded(f"window radius {r} exceeds torus {L}")
    vals = _centered(arr, r)
    vals = 0.5 * (vals + vals[::-1, ::-1])  # exact symmetry G(x) = G(-x)
    inv = 1.0 / -math.expm1(-lam)
    trunc = math.exp(-lam * (n_terms + 1)) * inv
    outside = max(0.0, float(arr.sum()) - float(vals.sum()))
    return GreenTable(
        lam=lam,
        radius=r,
        values=vals,
        g_lambda=float(arr[0, 0]),
        method="series",
        tail_bound=trunc + outside + 1e-13 * inv,
        wrap_bound=wrap * inv,
        periodic=periodic,
        n_terms=n_terms,
    )


# ---------------------------------------------------------------------------
# Fourier route


def model_corner(lam: float, n: int = 64) -> float:
    """8 int_0^{pi/4} log((lam + pi^2/(2 cos^2 t)) / (lam + pi^2/2)) dt."""
    x, w = gauss_legendre(n)
    t = (np.pi / 8) * (x + 1.0)
    c = np.cos(t)
    vals = np.log1p((np.pi**2 / 2) * (1.0 / (c * c) - 1.0) / (lam + np.pi**2 / 2))
    return 8.0 * (np.pi / 8) * float(np.dot(w, vals))


def model_integral(lam: float) -> float:
    """int over [-pi, pi]^2 of dp / (lam + |p|^2/2): disc of radius pi plus corners."""
    return TWO_PI * math.log1p(np.pi**2 / (2.0 * lam)) + model_corner(lam)


CORNER_CONSTANT = math.log(2.0) / math.pi - 2.0 * CATALAN / math.pi**2


@dataclass(frozen=True)
class QuadLevel:
    n_theta: int
    n_r: int
    outer_panels: int


FOURIER_LEVELS = (QuadLevel(32, 12, 6), QuadLevel(48, 16, 10))


@dataclass(frozen=True)
class GreenValue:
    """A Fourier-route value with the gap between two refinement levels."""

    value: float
    bound: float
    levels: tuple[float, ...]

    def __float__(self) -> float:
        return self.value


def _remainder_integrand(law: StepLaw, lam: float, sites: np.ndarray):
    a = math.exp(-lam)
    head = lam + math.expm1(-lam)  # lam - (1 - a), O(lam^2)
    cf = law.charfn

    def fn(p1, p2):
        p = np.stack([p1, p2], axis=-1)
        q2 = 0.5 * (p1 * p1 + p2 * p2)
        d_model = lam + q2
        d_walk = -math.expm1(-lam) + a * cf.one_minus(p)
        # model minus walk denominator, free of cancellation near p = 0
        num0 = head + a * cf.quartic_part(p) + (1.0 - a) * q2
        denom = d_walk * d_model
        out = []
        for x, y in sites:
            if x == 0 and y == 0:
                out.append(num0 / denom)
            else:
                s = np.sin(0.5 * (p1 * x + p2 * y))
                vers = 2.0 * s * s
                out.append((num0 - vers * d_model) / denom)
        return np.stack(out, axis=0)

    return fn


def _square_polar_multi(fn, r_min: float, level: QuadLevel) -> np.ndarray:
    """:func:`square_polar` for an integrand returning one row per site."""
    tx, tw = gauss_legendre(level.n_theta)
    inner = graded_radii(r_min, np.pi / 2)
    total = None
    for side in range(4):
        centre = side * np.pi / 2
        for lo, hi in ((-np.pi / 4, 0.0), (0.0, np.pi / 4)):
            local = 0.5 * (lo + hi) + 0.5 * (hi - lo) * tx
            wt = 0.5 * (hi - lo) * tw
            theta = centre + local
            r_edge = np.pi / np.cos(local)
            outer = np.pi / 2 + (r_edge[:, None] - np.pi / 2) * np.linspace(0.0, 1.0, level.outer_panels + 1)[None, :]
            edges = np.concatenate([np.broadcast_to(inner[:-1], (level.n_theta, len(inner) - 1)), outer], axis=1)
            r, wr = panel_rule(edges, level.n_r)
            vals = fn(r * np.cos(theta)[:, None], r * np.sin(theta)[:, None])
            part = np.sum(vals * (wt[:, None] * wr * r)[None], axis=(1, 2))
            total = part if total is None else total + part
    return total


def _fourier_sites(law, lam, sites, levels, tol) -> list[GreenValue]:
    if not 0 < lam < 1:
        raise ValueError("Fourier route needs 0 < lambda < 1")
    sites = [tuple(int(c) for c in s) for s in sites]
    r_min = max(math.sqrt(lam), 1e-8) / 8.0
    model = model_integral(lam)
    fn = _remainder_integrand(law, lam, sites)
    per_level = [(_square_polar_multi(fn, r_min, lev) + model) / TWO_PI**2 for lev in levels]
    out = []
    for i, s in enumerate(sites):
        vals = tuple(float(v[i]) for v in per_level)
        gap = abs(vals[-1] - vals[-2]) if len(vals) > 1 else float("nan")
        if gap > tol:
            raise QuadratureNotConverged(f"G at {s}: refinements differ by {gap:.3g} > {tol:.3g}", vals)
        out.append(GreenValue(vals[-1], gap, vals))
    return out


def green_fourier(
    law: StepLaw,
    lam: float,
    x: tuple[int, int] = (0, 0),
    *,
    levels: Sequence[QuadLevel] = FOURIER_LEVELS,
    tol: float = 1e-8,
) -> GreenValue:
    """G_lam(x) by Fourier inversion with model-kernel subtraction.

    Raises:
        QuadratureNotConverged: the two refinement levels differ by more than ``tol``.
    """
    return _fourier_sites(law, lam, [x], levels, tol)[0]


def green_fourier_table(law: StepLaw, lam: float, radius: int, *, levels=FOURIER_LEVELS, tol: float = 1e-8) -> GreenTable:
    """Fourier-route values on [-radius, radius]^2; G(x) = G(-x) halves the work."""
    rng = range(-radius, radius + 1)
    canon = {}
    for x in rng:
        for y in rng:
            key = max((x, y), (-x, -y))
            canon.setdefault(key, None)
    keys = list(canon)
    vals = _fourier_sites(law, lam, keys, levels, tol)
    lookup = dict(zip(keys, vals))
    arr = np.empty((2 * radius + 1, 2 * radius + 1))
    worst = 0.0
    for x in rng:
        for y in rng:
            gv = lookup[max((x, y), (-x, -y))]
            arr[x + radius, y + radius] = gv.value
            worst = max(worst, gv.bound)
    return GreenTable(lam=lam, radius=radius, values=arr, g_lambda=float(arr[radius, radius]), method="fourier", tail_bound=worst)


# ---------------------------------------------------------------------------
# c_X


@dataclass(frozen=True)
class CxEstimate:
    """c_X with the gap between two quadrature refinements as its bound.

    ``value`` is the constant in g_lam = (1/2 pi) log(1/lam) + c_X + o(1).
    ``without_corner`` omits the contribution of the square minus the disc,
    (1/(2 pi)^2) int 2/|p|^2 over that region = log 2/pi - 2G/pi^2.
    """

    value: float
    bound: float
    law: str
    levels: tuple[float, ...]
    without_corner: float


CX_LEVELS = (QuadLevel(24, 12, 6), QuadLevel(40, 20, 10))


def cx_integrand(law: StepLaw):
    """(phi - 1 + |p|^2/2) / ((1 - phi) |p|^2/2), evaluated without cancellation."""
    cf = law.charfn

    def fn(p1, p2):
        p = np.stack([p1, p2], axis=-1)
        q2 = 0.5 * (p1 * p1 + p2 * p2)
        return cf.quartic_part(p) / (cf.one_minus(p) * q2)

    return fn


def c_x(law: StepLaw, *, levels: Sequence[QuadLevel] = CX_LEVELS, tol: float = 1e-7) -> CxEstimate:
    """The constant c_X of the walk.

    Raises:
        QuadratureNotConverged: refinements differ by more than ``tol``.
    """
    fn = cx_integrand(law)
    r_min = 1e-8 / 8.0
    vals = []
    for lev in levels:
        integral = square_polar(fn, r_min, n_theta=lev.n_theta, n_r=lev.n_r, outer_panels=lev.outer_panels)
        vals.append(math.log(np.pi**2 / 2) / TWO_PI + integral / TWO_PI**2)
    gap = abs(vals[-1] - vals[-2])
    if gap > tol:
        raise QuadratureNotConverged(f"c_X refinements differ by {gap:.3g}", vals)
    return CxEstimate(vals[-1] + CORNER_CONSTANT, gap, law.name, tuple(v + CORNER_CONSTANT for v in vals), vals[-1])


def asymptote_gap(law: StepLaw, lam: float, **kw) -> GreenValue:
    """g_lam - (1/2 pi) log(1/lam) from the Fourier route."""
    g = green_fourier(law, lam, (0, 0), **kw)
    shift = math.log(1.0 / lam) / TWO_PI
    return GreenValue(g.value - shift, g.bound, tuple(v - shift for v in g.levels))


# ---------------------------------------------------------------------------
# norms, differences, resolvent


@dataclass(frozen=True)
class NormEstimate:
    value: float
    bound: float


def green_lm_norm(table: GreenTable, m: float) -> NormEstimate:
    """(sum_x G(x)^m)^{1/m} over the window, with a bound for the missing tail.

    Mass outside the window is at most ``b = tail_bound``; its m-th power sum
    is then at most b^m. Periodisation errors add at most ``wrap_bound`` by
    Minkowski's inequality.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    s = float(np.sum(table.values**m))
    norm = s ** (1.0 / m)
    b = table.tail_bound
    tail = (s + b**m) ** (1.0 / m) - norm if m > 1 else b
    return NormEstimate(norm, tail + table.wrap_bound)


@dataclass(frozen=True)
class DiffTable:
    z: tuple[int, int]
    values: np.ndarray = field(repr=False)
    norms: dict


def diff_green(table: GreenTable, z: tuple[int, int], ms: Sequence[float] = (2, 3)) -> DiffTable:
    """Delta_z G(x) = G(x + z) - G(x) and its m-norms.

    On a whole-torus table the shift is periodic; otherwise x runs over the
    sites with both x and x + z in the window.

    Raises:
        WindowExceeded: the shift leaves no overlap (or wraps half the torus).
    """
    zx, zy = int(z[0]), int(z[1])
    v = table.values
    n = v.shape[0]
    if table.periodic:
        if max(abs(zx), abs(zy)) >= (n + 1) // 2:
            raise WindowExceeded(f"shift {z} wraps more than half the torus")
        diff = np.roll(v, shift=(-zx, -zy), axis=(0, 1)) - v
    else:
        if max(abs(zx), abs(zy)) > table.radius:
            raise WindowExceeded(f"shift {z} exceeds window radius {table.radius}")
        xs = slice(max(0, -zx), n - max(0, zx))
        ys = slice(max(0, -zy), n - max(0, zy))
        xs2 = slice(xs.start + zx, xs.stop + zx)
        ys2 = slice(ys.start + zy, ys.stop + zy)
        diff = v[xs2, ys2] - v[xs, ys]
    norms = {m: float(np.sum(np.abs(diff) ** m) ** (1.0 / m)) for m in ms}
    return DiffTable((zx, zy), diff, norms)


@dataclass(frozen=True)
class ResolventCheck:
    """Residuals of the resolvent identity on |x| <= radius.

    ``exact`` tests e^{-lam} G_lam - e^{-lam'} G_lam' = (e^{-lam} - e^{-lam'}) G_lam * G_lam',
    which holds exactly for the discrete-time walk. ``continuous_form`` tests
    G_lam - G_lam' = (lam' - lam) G_lam * G_lam', the continuous-time version,
    which is off by O(lam) relative.
    """

    exact: float
    continuous_form: float


def resolvent_check(law: StepLaw, lam: float, lam2: float, radius: int = 5) -> ResolventCheck:
    n_terms = series_terms(min(lam, lam2))
    size = choose_torus(law, n_terms)
    t1 = green_series(law, lam, torus_size=size)
    t2 = green_series(law, lam2, torus_size=size)
    L = size

    def torus(tab):
        arr = np.zeros((L, L))
        r = tab.radius
        idx = np.arange(-r, r + 1) % L
        arr[np.ix_(idx, idx)] = tab.values
        return arr

    g1, g2 = torus(t1), torus(t2)
    conv = np.fft.irfft2(np.fft.rfft2(g1) * np.fft.rfft2(g2), s=(L, L))
    a, b = math.exp(-lam), math.exp(-lam2)
    win = lambda arr: _centered(arr, radius)  # noqa: E731
    exact = win(a * g1 - b * g2) - (a - b) * win(conv)
    cont = win(g1 - g2) - (lam2 - lam) * win(conv)
    return ResolventCheck(float(np.max(np.abs(exact))), float(np.max(np.abs(cont))))


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of y against x."""
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def norm_scaling(law: StepLaw, lambdas: Sequence[float], m: float) -> tuple[float, list[float]]:
    """Fitted slope of log ||G_lam||_m against log(1/lam)."""
    norms = [green_lm_norm(green_series(law, lam), m).value for lam in lambdas]
    return fit_slope(np.log(1.0 / np.asarray(lambdas)), np.log(norms)), norms


def diff_scaling(
    law: StepLaw, lambdas: Sequence[float], m: float, z: tuple[float, float] = (1.0, 0.0), beta: float = 0.5
) -> dict:
    """||Delta_{z/sqrt(lam)} G_lam||_m over lambdas, with its fitted growth rate
    in log(1/lam) and the ratio to |z|^{beta/m} lam^{-1/m}."""
    norms, ratios = [], []
    zn = math.hypot(*z)
    for lam in lambdas:
        tab = green_series(law, lam)
        w = (int(round(z[0] / math.sqrt(lam))), int(round(z[1] / math.sqrt(lam))))
        d = diff_green(tab, w, ms=(m,)).norms[m]
        norms.append(d)
        ratios.append(d / (zn ** (beta / m) * lam ** (-1.0 / m)))
    slope = fit_slope(np.log(1.0 / np.asarray(lambdas)), np.log(norms))
    return {"slope": slope, "norms": norms, "ratios": ratios, "beta": beta}
