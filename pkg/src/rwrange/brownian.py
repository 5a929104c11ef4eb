"""Planar Brownian paths and (renormalised) self-intersection local times.

alpha_{k,eps}(t) is discretised on the path grid as

    h^k sum_{i_1 <= ... <= i_k < t/h} prod_j c(i_j - i_{j-1}) p_eps(W_{i_j} - W_{i_{j-1}})

with p_eps the Gaussian density of variance eps per coordinate. The lag
weights c(d) (default ``quadrature="lag"``) make each pair term integrate the
expected kernel 1/(2 pi (eps + s)) exactly over its grid cell, so the discrete
E alpha_{2,eps} equals the continuum value. ``quadrature="riemann"`` sets
c = 1, the plain Riemann sum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .quadrature import richardson
from .special import EULER_GAMMA, exp1_scaled, k0

TWO_PI = 2.0 * math.pi
EPS_GRID_FACTOR = 4.0
DEFAULT_SCHEDULE = (16.0, 8.0, 4.0)  # multiples of h
CUTOFF_SIGMAS2 = 36.0  # kernel truncated where |d|^2 >= 36 eps, i.e. below e^-18
DENSE_MAX_N = 512


class EpsTooSmallForGrid(UserWarning):
    """eps below EPS_GRID_FACTOR * h: the kernel is under-resolved by the grid."""


class NotConverging(UserWarning):
    """Successive eps levels do not shrink."""


class DomainError(ValueError):
    pass


class GridIncompatible(ValueError):
    pass


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class BrownPath:
    """W_0 = 0, W_h, ..., W_{Nh} as an (N + 1, 2) array."""

    h: float
    values: np.ndarray = field(repr=False)
    seed: object = None

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.h


def grid_count(t: float, h: float) -> int:
    """Number of grid times i h in [0, t), rounding t/h to the nearest integer."""
    return int(round(t / h))


def simulate_bm(h: float, T: float, seed=None) -> BrownPath:
    if not 0 < h <= T:
        raise ValueError("need 0 < h <= T")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(math.ceil(T / h - 1e-9))
    vals = np.zeros((n + 1, 2))
    np.cumsum(rng.standard_normal((n, 2)) * math.sqrt(h), axis=0, out=vals[1:])
    return BrownPath(h, vals, seed)


# ---------------------------------------------------------------------------
# closed forms


def u_eps(eps: float) -> float:
    """int_0^inf e^{-t} p_{t+eps}(0) dt = e^eps E1(eps) / (2 pi)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return exp1_scaled(eps) / TWO_PI


def u_one(y) -> float:
    """int_0^inf e^{-t} p_t(y) dt = K0(sqrt(2) |y|) / pi."""
    r = float(np.hypot(*np.asarray(y, dtype=float))) if np.ndim(y) else abs(float(y))
    if r == 0.0:
        raise DomainError("u1 is infinite at the origin")
    return k0(math.sqrt(2.0) * r) / math.pi


def mean_alpha2(eps: float, t: float = 1.0) -> float:
    """E alpha_{2,eps}(t) = int_0^t (t - s) / (2 pi (s + eps)) ds."""
    return ((t + eps) * math.log1p(t / eps) - t) / TWO_PI


MEAN_GAMMA2 = (EULER_GAMMA - 1.0) / TWO_PI
U_EPS_CONSTANT = -EULER_GAMMA / TWO_PI
U_ONE_CONSTANT = (0.5 * math.log(2.0) - EULER_GAMMA) / math.pi


# ---------------------------------------------------------------------------
# lag weights and the alpha pipeline


def _lag_factor_far(A: np.ndarray) -> np.ndarray:
    # A * int_{-1}^{1} (1 - |v|) / (A + v) dv = sum_q 2 A^{-2q} / ((2q + 1)(2q + 2))
    inv2 = 1.0 / (A * A)
    out = np.zeros_like(A)
    for q in range(14, -1, -1):
        out = out * inv2 + 2.0 / ((2 * q + 1) * (2 * q + 2))
    return out


def lag_weights(a: float, n: int) -> np.ndarray:
    """Cell-exact weights c(d), d = 0..n-1, for a = eps / h."""
    c = np.empty(n)
    if n == 0:
        return c
    c[0] = a * ((1.0 + a) * math.log1p(1.0 / a) - 1.0)
    d = np.arange(1, n, dtype=float)
    A = a + d
    near = A <= 10.0
    An = A[near]
    c[1:][near] = An * ((1.0 + An) * np.log1p(1.0 / An) + (An - 1.0) * np.log1p(-1.0 / An))
    c[1:][~near] = _lag_factor_far(A[~near])
    return c


def _check_eps(eps_list, h: float) -> None:
    small = [e for e in eps_list if e < EPS_GRID_FACTOR * h * (1 - 1e-12)]
    if small:
        warnings.warn(
            EpsTooSmallForGrid(f"eps {min(small):.3g} < {EPS_GRID_FACTOR:g} h = {EPS_GRID_FACTOR * h:.3g}"), stacklevel=3
        )


def alpha_table(
    path: BrownPath,
    k: int,
    eps_list: Sequence[float],
    t_list: Sequence[float] | float,
    *,
    method: str = "auto",
    quadrature: str = "lag",
    offset: tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    """alpha_{j,eps}(t) for j = 1..k, every eps and t: shape (len(eps), k, len(t)).

    ``offset`` gives the shifted version with kernel p_eps(W_i - W_i' - offset)
    (only meaningful for j = 2). ``method`` is "dense" (O(N^2) recursion),
    "binned" (pairs within sqrt(36 eps) only) or "auto".
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    eps = np.asarray(eps_list, dtype=float)
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    ts = np.atleast_1d(np.asarray(t_list, dtype=float))
    h = path.h
    cps = np.array([grid_count(t, h) for t in ts], dtype=np.int64)
    if np.any(cps > path.n_steps) or np.any(cps < 0):
        raise ValueError("t beyond the path horizon")
    _check_eps(eps, h)
    out = np.zeros((len(eps), k, len(ts)))
    out[:, 0, :] = cps * h
    n = int(cps.max()) if len(cps) else 0
    if k == 1 or n == 0:
        return out
    order = np.argsort(cps, kind="stable")
    W = np.ascontiguousarray(path.values[:n])
    if quadrature == "lag":
        lagw = np.stack([lag_weights(e / h, n) for e in eps])
    elif quadrature == "riemann":
        lagw = np.ones((len(eps), n))
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    inv2eps = 1.0 / (2.0 * eps)
    norm = 1.0 / (TWO_PI * eps)
    sorted_cps = np.ascontiguousarray(cps[order])
    ox, oy = float(offset[0]), float(offset[1])
    use_dense = method == "dense" or (method == "auto" and n <= DENSE_MAX_N)
    if use_dense:
        if ox or oy:
            # the dense kernel has no offset: a cutoff beyond the path span keeps every pair
            span = float(np.ptp(W, axis=0).max()) + abs(ox) + abs(oy) + 1.0
            sums = kernels.alpha_binned(W, inv2eps, norm, lagw, k, sorted_cps, 2.0 * span, ox, oy)
        else:
            sums = kernels.alpha_dense(W, inv2eps, norm, lagw, k, sorted_cps)
    elif method in ("binned", "auto"):
        cutoff = math.sqrt(CUTOFF_SIGMAS2 * float(eps.max()))
        halving = bool(np.all(inv2eps[1:] == 2.0 * inv2eps[:-1])) if len(eps) > 1 else False
        sums = kernels.alpha_binned(W, inv2eps, norm, lagw, k, sorted_cps, cutoff, ox, oy, halving)
    else:
        raise ValueError(f"unknown method {method!r}")
    powers = h ** np.arange(2, k + 1)
    out[:, 1:, order] = sums * powers[None, :, None]
    return out


def alpha_k_eps(path: BrownPath, k: int, eps: float, t: float, **kw) -> float:
    """alpha_{k,eps}(t) on the path grid (k = 1 gives t)."""
    return float(alpha_table(path, k, [eps], [t], **kw)[0, k - 1, 0])


def alpha_brute(path: BrownPath, k: int, eps: float, t: float, quadrature: str = "lag") -> float:
    """Direct sum over ordered index tuples; a test oracle for small grids."""
    import itertools

    n = grid_count(t, path.h)
    W = path.values[:n]
    c = lag_weights(eps / path.h, n) if quadrature == "lag" else np.ones(n)
    d = W[:, None, :] - W[None, :, :]
    ker = np.exp(-np.einsum("ijk,ijk->ij", d, d) / (2 * eps)) / (TWO_PI * eps)
    total = 0.0
    for tup in itertools.combinations_with_replacement(range(n), k):
        prod = 1.0
        for a, b in zip(tup, tup[1:]):
            prod *= c[b - a] * ker[b, a]
        total += prod
    return total * path.h**k


# ---------------------------------------------------------------------------
# renormalisation


@dataclass(frozen=True)
class RenormWeights:
    """Counter-term values h_eps on an eps schedule, for order k."""

    k: int
    eps: tuple[float, ...]
    counter: tuple[float, ...]

    @classmethod
    def from_function(cls, k: int, eps: Sequence[float], fn: Callable[[float], float]) -> "RenormWeights":
        return cls(k, tuple(float(e) for e in eps), tuple(float(fn(e)) for e in eps))

    @classmethod
    def standard(cls, k: int, eps: Sequence[float], shift: float = 0.0) -> "RenormWeights":
        """h_eps = u_eps + shift."""
        return cls.from_function(k, eps, lambda e: u_eps(e) + shift)

    @property
    def binomials(self) -> tuple[int, ...]:
        return tuple(math.comb(self.k - 1, l - 1) for l in range(1, self.k + 1))

    def weight(self, l: int, level: int) -> float:
        """C(k-1, l-1) (-h_eps)^{k-l}."""
        return math.comb(self.k - 1, l - 1) * (-self.counter[level]) ** (self.k - l)

    def matrix(self) -> np.ndarray:
        return np.array([[self.weight(l, lev) for l in range(1, self.k + 1)] for lev in range(len(self.eps))])


@dataclass(frozen=True)
class GammaEstimate:
    """Extrapolated value, its Richardson gap, and the per-eps values."""

    value: float
    error: float
    eps: tuple[float, ...]
    levels: tuple[float, ...]

    @property
    def gaps(self) -> tuple[float, ...]:
        return tuple(abs(b - a) for a, b in zip(self.levels, self.levels[1:]))

    @property
    def converging(self) -> bool:
        g = self.gaps
        return all(b < a for a, b in zip(g, g[1:]))


def schedule(h: float, multiples: Sequence[float] = DEFAULT_SCHEDULE) -> tuple[float, ...]:
    return tuple(m * h for m in multiples)


def _extrapolate(eps: Sequence[float], levels: Sequence[float]) -> tuple[float, float]:
    ratios = [a / b for a, b in zip(eps, eps[1:])]
    if not np.allclose(ratios, ratios[0]):
        raise ValueError("eps schedule must be geometric")
    return richardson(levels, p=1.0, r=ratios[0])


def _estimates(levels: np.ndarray, eps: Sequence[float], warn: bool) -> list[GammaEstimate]:
    out = []
    for col in levels.T:
        value, err = _extrapolate(eps, col)
        est = GammaEstimate(value, err, tuple(eps), tuple(float(v) for v in col))
        if warn and not est.converging:
            warnings.warn(NotConverging(f"eps levels {est.levels} do not contract"), stacklevel=3)
        out.append(est)
    return out


def hat_gamma(
    path: BrownPath,
    k: int,
    t,
    counter_terms: RenormWeights,
    *,
    warn: bool = False,
    **alpha_kw,
):
    """hat-gamma_k(t, h): sum_l C(k-1, l-1) (-h_eps)^{k-l} alpha_{l,eps}(t), extrapolated in eps.

    Returns a :class:`GammaEstimate` (a list of them when ``t`` is a sequence).
    """
    if counter_terms.k != k:
        raise ValueError("counter terms built for a different k")
    eps = counter_terms.eps
    if len(eps) < 2:
        raise ValueError("need at least two eps levels")
    scalar = np.ndim(t) == 0
    table = alpha_table(path, k, eps, t, **alpha_kw)  # (level, j, t)
    w = counter_terms.matrix()  # (level, j)
    levels = np.einsum("lj,ljt->lt", w, table)
    ests = _estimates(levels, eps, warn)
    return ests[0] if scalar else ests


def gamma_k(path: BrownPath, k: int, t=1.0, eps_schedule: Sequence[float] | None = None, **kw):
    """gamma_k(t) with the u_eps counter-term; default schedule {16h, 8h, 4h}."""
    eps = schedule(path.h) if eps_schedule is None else tuple(eps_schedule)
    if len(eps) < 3:
        raise ValueError("gamma_k needs at least three eps levels")
    return hat_gamma(path, k, t, RenormWeights.standard(k, eps), **kw)


def gamma_all_orders(path: BrownPath, k_max: int, t=1.0, eps_schedule=None, **alpha_kw) -> list[GammaEstimate]:
    """[gamma_1(t), ..., gamma_{k_max}(t)] from a single alpha pass."""
    eps = schedule(path.h) if eps_schedule is None else tuple(eps_schedule)
    return gammas_from_alpha(alpha_table(path, k_max, eps, [t], **alpha_kw)[:, :, 0], eps)


def gammas_from_alpha(table: np.ndarray, eps: Sequence[float]) -> list[GammaEstimate]:
    """Estimates of gamma_1..K from an (eps level, j) table of alpha_{j,eps}."""
    out = []
    for k in range(1, table.shape[1] + 1):
        w = RenormWeights.standard(k, eps).matrix()
        levels = np.sum(w * table[:, :k], axis=1)
        out.append(_estimates(levels[:, None], eps, False)[0])
    return out


def gamma_bar_2(path: BrownPath, t: float, y: tuple[float, float], eps_schedule=None, **alpha_kw) -> GammaEstimate:
    """Offset version at k = 2: alphabar_2(t, y) - u1(y) t, extrapolated in eps."""
    eps = schedule(path.h) if eps_schedule is None else tuple(eps_schedule)
    table = alpha_table(path, 2, eps, [t], offset=y, **alpha_kw)[:, :, 0]
    levels = table[:, 1] - u_one(y) * table[:, 0]
    return _estimates(levels[:, None], eps, False)[0]


# ---------------------------------------------------------------------------
# coefficient algebra


def renorm_transform(values: Sequence[float], b: float) -> np.ndarray:
    """Map hat-gamma_1..k at counter-term hbar to counter-term h = hbar + b.

    out_k = sum_m C(k-1, m-1) (-b)^{k-m} values_m.
    """
    v = np.asarray(values, dtype=float)
    K = len(v)
    out = np.zeros(K)
    for k in range(1, K + 1):
        out[k - 1] = sum(math.comb(k - 1, m - 1) * (-b) ** (k - m) * v[m - 1] for m in range(1, k + 1))
    return out


def rescale_shift(r: float) -> float:
    """b_r = (1/2 pi) log(1/r)."""
    return math.log(1.0 / r) / TWO_PI


def rescale_gamma(values: Sequence[float], r: float, k: int | None = None) -> np.ndarray:
    """Predict hat-gamma_1..k(t, h, omega_r) from hat-gamma_1..k(r t, h, omega).

    r^{-1} sum_m C(k-1, m-1) b_r^{k-m} values_m; equivalently
    ``renorm_transform(values, -b_r) / r``.
    """
    v = np.asarray(values, dtype=float)
    if k is not None:
        v = v[:k]
    return renorm_transform(v, -rescale_shift(r)) / r


def rescale_path(path: BrownPath, r: float, h_new: float | None = None) -> BrownPath:
    """omega_r(s) = r^{-1/2} omega(r s) on the grid of step ``h_new`` (default h / r).

    Raises:
        GridIncompatible: r * h_new is not a whole number of base steps.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    h_new = path.h / r if h_new is None else h_new
    stride = r * h_new / path.h
    m = int(round(stride))
    if m < 1 or abs(stride - m) > 1e-9 * max(1.0, stride):
        raise GridIncompatible(f"r * h_new / h = {stride:.12g} is not a positive integer")
    return BrownPath(h_new, path.values[::m] / math.sqrt(r), path.seed)


def series_partial(m: int, k: int, x: float) -> float:
    """sum_{j=m}^{k} C(j-1, m-1) x^{j-m}."""
    return sum(math.comb(j - 1, m - 1) * x ** (j - m) for j in range(m, k + 1))
