"""Block couplings of walk increments with Gaussian increments.

A block of B walk steps has sum pmf q_B; a block of Brownian motion has
increment N(0, B I). The coupler pairs the two by entropic optimal transport
for squared distance between q_B and the Gaussian's masses on unit lattice
cells. Inside a block, the walk is refined by exact conditional sampling of
a walk bridge and the Gaussian by a Brownian bridge, so both marginals are
exact at the step level. The construction makes no claim to optimal rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal, special, stats

from .stepdist import StepLaw, sample_steps

MARGINAL_TOL = 1e-9
SINKHORN_MAX_ITER = 4000
EPS_START = 2.0
EPS_MIN = 1.0 / 32.0
KERNEL_FLOOR = 1e-300
TINY = 1e-250


class NotConverged(ArithmeticError):
    pass


class SupportTooLarge(MemoryError):
    pass


class RejectionStalled(RuntimeError):
    pass


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# exact step-sum tables


def _box_radius(law: StepLaw, B: int) -> int:
    """Radius beyond which both block laws carry less than ~1e-15 mass."""
    return int(math.ceil(9.0 * math.sqrt(B))) + law.max_step


def step_kernel(law: StepLaw) -> np.ndarray:
    m = law.max_step
    ker = np.zeros((2 * m + 1, 2 * m + 1))
    for (dx, dy), p in zip(law.vectors, law.probs):
        ker[dx + m, dy + m] += p
    return ker


def sum_tables(law: StepLaw, B: int, radius: int) -> list[np.ndarray]:
    """q_0..q_B on [-radius, radius]^2 by direct convolution (all entries >= 0).

    Mass pushed beyond the box is dropped; with the default radius this is
    below 1e-15.
    """
    ker = step_kernel(law)
    m = law.max_step
    size = 2 * radius + 1
    cur = np.zeros((size, size))
    cur[radius, radius] = 1.0
    out = [cur]
    for _ in range(B):
        full = signal.convolve2d(cur, ker, mode="full")
        cur = full[m : m + size, m : m + size]
        out.append(cur)
    return out


def gaussian_cell_masses(B: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Masses of N(0, B I) on unit cells centred at lattice points, per coordinate.

    Returns (2-D masses, 1-D masses).
    """
    s = math.sqrt(B)
    x = np.arange(-radius, radius + 1, dtype=float)
    hi = (x + 0.5) / s
    lo = (x - 0.5) / s
    # difference of normal cdfs taken on the side of the lighter tail
    one = np.where(x >= 0, special.ndtr(-lo) - special.ndtr(-hi), special.ndtr(hi) - special.ndtr(lo))
    return np.outer(one, one), one


# ---------------------------------------------------------------------------
# coupler


@dataclass(frozen=True)
class BlockCoupler:
    """Entropic plan P(x, y) = a(x) K(x, y) b(y) with a separable Gibbs kernel.

    ``walk_pmf`` and ``gauss_pmf`` live on the same box [-radius, radius]^2;
    ``k1`` is the one-dimensional kernel exp(-(i - j)^2 / eps).
    """

    law: StepLaw = field(repr=False)
    B: int
    radius: int
    eps: float
    walk_pmf: np.ndarray = field(repr=False)
    gauss_pmf: np.ndarray = field(repr=False)
    gauss_1d: np.ndarray = field(repr=False)
    k1: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    iterations: int
    walk_defect: float
    gauss_defect: float
    transport_cost: float
    bridge_tables: list = field(repr=False, default_factory=list)

    @property
    def band(self) -> int:
        return int(np.max(np.nonzero(self.k1[self.radius])[0]) - self.radius)


def _apply(k1: np.ndarray, v: np.ndarray) -> np.ndarray:
    return k1 @ v @ k1.T


def _sinkhorn(mu, nu, k1, max_iter, tol):
    b = np.ones_like(nu)
    a = np.ones_like(mu)
    for it in range(1, max_iter + 1):
        kb = _apply(k1, b)
        a = np.divide(mu, kb, out=np.zeros_like(mu), where=kb > TINY)
        ka = _apply(k1, a)
        b = np.divide(nu, ka, out=np.zeros_like(nu), where=ka > TINY)
        if it % 10 == 0 or it == max_iter:
            row = a * _apply(k1, b)
            defect = 0.5 * np.abs(row - mu).sum()
            if not np.isfinite(defect):
                return None
            if defect < tol:
                return a, b, it
    return None


def build_block_coupler(
    law: StepLaw,
    B: int,
    grid_resolution: float = 1.0,
    *,
    max_iter: int = SINKHORN_MAX_ITER,
    tol: float = MARGINAL_TOL,
    max_cells: int = 700 * 700,
) -> BlockCoupler:
    """Couple the B-step sum with N(0, B I) cell masses.

    eps starts at 2 and is halved while the scaling iterations still reach
    ``tol`` within ``max_iter``; the smallest successful eps is kept. The
    search stops early once the last success used over half the cap, since
    each halving roughly doubles the count.

    Raises:
        NotConverged: even the starting eps fails.
        SupportTooLarge: the box would exceed ``max_cells``.
    """
    if B < 1 or B & (B - 1) or B > 256:
        raise ValueError("B must be a power of two in 1..256")
    if grid_resolution != 1.0:
        raise ValueError("only lattice-matched cells (resolution 1) are supported")
    radius = _box_radius(law, B)
    if (2 * radius + 1) ** 2 > max_cells:
        raise SupportTooLarge(f"box of radius {radius} exceeds {max_cells} cells")
    tables = sum_tables(law, B, radius)
    mu = tables[B] / tables[B].sum()
    nu, nu1 = gaussian_cell_masses(B, radius)
    nu = nu / nu.sum()
    idx = np.arange(-radius, radius + 1, dtype=float)
    d2 = (idx[:, None] - idx[None, :]) ** 2
    best = None
    eps = EPS_START
    while eps >= EPS_MIN:
        k1 = np.exp(-d2 / eps)
        k1[k1 < KERNEL_FLOOR] = 0.0
        res = _sinkhorn(mu, nu, k1, max_iter, tol)
        if res is None:
            break
        a, b, it = res
        gdef = 0.5 * np.abs(b * _apply(k1, a) - nu).sum()
        if gdef >= tol:
            break
        best = (eps, k1, a, b, it, gdef)
        if 2 * it > max_iter:
            # iteration counts roughly double per halving; the next one would not fit
            break
        eps /= 2.0
    if best is None:
        raise NotConverged(f"scaling iterations did not reach {tol:g} within {max_iter} at eps={EPS_START}")
    eps, k1, a, b, it, gdef = best
    wdef = 0.5 * np.abs(a * _apply(k1, b) - mu).sum()
    # transport cost: sum_xy P(x, y) |x - y|^2, separable in the two coordinates
    kd = k1 * d2
    cost = float(np.sum(a * (kd @ b @ k1.T + k1 @ b @ kd.T)))
    return BlockCoupler(law, B, radius, eps, mu, nu, nu1, k1, a, b, it, float(wdef), float(gdef), cost, tables)


# ---------------------------------------------------------------------------
# sampling


def _sample_cells(coupler: BlockCoupler, xi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gaussian cell (as box indices) given walk-sum box indices, from the plan."""
    w = coupler.band
    r = coupler.radius
    size = 2 * r + 1
    offs = np.arange(-w, w + 1)
    out = np.empty_like(xi)
    # batch by chunks to bound memory
    for s in range(0, len(xi), 20000):
        x = xi[s : s + 20000]
        cx = x[:, 0, None] + offs[None, :]
        cy = x[:, 1, None] + offs[None, :]
        okx = (cx >= 0) & (cx < size)
        oky = (cy >= 0) & (cy < size)
        cxc = np.clip(cx, 0, size - 1)
        cyc = np.clip(cy, 0, size - 1)
        kx = coupler.k1[x[:, 0, None], cxc] * okx
        ky = coupler.k1[x[:, 1, None], cyc] * oky
        wts = kx[:, :, None] * ky[:, None, :] * coupler.b[cxc[:, :, None], cyc[:, None, :]]
        wts = wts.reshape(len(x), -1)
        cdf = np.cumsum(wts, axis=1)
        u = rng.random(len(x)) * cdf[:, -1]
        j = np.minimum((cdf < u[:, None]).sum(axis=1), cdf.shape[1] - 1)
        out[s : s + 20000, 0] = cxc[np.arange(len(x)), j // len(offs)]
        out[s : s + 20000, 1] = cyc[np.arange(len(x)), j % len(offs)]
    return out


def _truncnorm_in_cells(cells: np.ndarray, B: int, rng: np.random.Generator) -> np.ndarray:
    """Exact N(0, B) draws restricted to [c - 1/2, c + 1/2], per coordinate."""
    s = math.sqrt(B)
    lo = (cells - 0.5) / s
    hi = (cells + 0.5) / s
    return s * stats.truncnorm.rvs(lo, hi, random_state=rng)


def sample_blocks(coupler: BlockCoupler, n_blocks: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """(walk block sums as lattice vectors, Gaussian block increments)."""
    rng = _rng(seed)
    r = coupler.radius
    size = 2 * r + 1
    flat = coupler.walk_pmf.ravel()
    cdf = np.cumsum(flat)
    idx = np.searchsorted(cdf, rng.random(n_blocks) * cdf[-1], side="right")
    idx = np.minimum(idx, len(flat) - 1)
    xi = np.stack([idx // size, idx % size], axis=-1)
    cells = _sample_cells(coupler, xi, rng) - r
    y = _truncnorm_in_cells(cells.astype(float), coupler.B, rng)
    return xi - r, y


def _bridge_dp(coupler: BlockCoupler, sums: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact walk bridges: step j drawn from p(v) q_{B-j-1}(target - v) / q_{B-j}(target)."""
    law = coupler.law
    B = coupler.B
    r = coupler.radius
    size = 2 * r + 1
    vec = law.vectors
    p = law.probs
    n = len(sums)
    steps = np.zeros((n, B, 2), dtype=np.int64)
    target = sums.astype(np.int64).copy()
    for j in range(B):
        q = coupler.bridge_tables[B - j - 1]
        rem = target[:, None, :] - vec[None, :, :]  # (n, support, 2)
        ix = rem[..., 0] + r
        iy = rem[..., 1] + r
        ok = (ix >= 0) & (ix < size) & (iy >= 0) & (iy < size)
        wts = p[None, :] * np.where(ok, q[np.clip(ix, 0, size - 1), np.clip(iy, 0, size - 1)], 0.0)
        cdf = np.cumsum(wts, axis=1)
        if np.any(cdf[:, -1] <= 0):
            raise RejectionStalled("unreachable bridge target")
        u = rng.random(n) * cdf[:, -1]
        choice = np.minimum((cdf < u[:, None]).sum(axis=1), len(p) - 1)
        steps[:, j] = vec[choice]
        target -= vec[choice]
    return steps


def _bridge_rejection(coupler: BlockCoupler, sums: np.ndarray, rng: np.random.Generator, max_rounds: int) -> tuple[np.ndarray, int]:
    """Resample unconditional blocks until the sum matches; stalled blocks go to the exact sampler.

    Returns the steps and the number of blocks that needed the fallback.
    """
    B = coupler.B
    n = len(sums)
    steps = np.zeros((n, B, 2), dtype=np.int64)
    todo = np.arange(n)
    for _ in range(max_rounds):
        if len(todo) == 0:
            break
        cand = sample_steps(coupler.law, rng, len(todo) * B).reshape(len(todo), B, 2)
        hit = np.all(cand.sum(axis=1) == sums[todo], axis=1)
        steps[todo[hit]] = cand[hit]
        todo = todo[~hit]
    if len(todo):
        steps[todo] = _bridge_dp(coupler, sums[todo], rng)
    return steps, len(todo)


@dataclass(frozen=True)
class CoupledSample:
    walk_steps: np.ndarray  # (n_blocks * B, 2) integer
    gauss_steps: np.ndarray  # (n_blocks * B, 2) real, unit time per step
    walk_blocks: np.ndarray
    gauss_blocks: np.ndarray
    rejection_fallbacks: int = 0


def sample_coupled(
    coupler: BlockCoupler,
    n_blocks: int,
    seed=None,
    *,
    bridge: str = "dp",
    max_rounds: int = 2000,
) -> CoupledSample:
    """Coupled walk and Gaussian increments, refined to single steps.

    ``bridge="dp"`` samples walk bridges exactly from the step-sum tables;
    ``bridge="rejection"`` resamples unconditional blocks until the sum
    matches and falls back to the exact sampler for blocks that stall.
    """
    rng = _rng(seed)
    xs, ys = sample_blocks(coupler, n_blocks, rng)
    B = coupler.B
    fallbacks = 0
    if B == 1:
        walk = xs.astype(np.int64).reshape(-1, 1, 2)
    elif bridge == "dp":
        walk = _bridge_dp(coupler, xs, rng)
    elif bridge == "rejection":
        walk, fallbacks = _bridge_rejection(coupler, xs, rng, max_rounds)
    else:
        raise ValueError(f"unknown bridge {bridge!r}")
    # Brownian bridge: i.i.d. N(0, I) steps shifted so their sum is the block increment
    z = rng.standard_normal((n_blocks, B, 2))
    z += (ys - z.sum(axis=1))[:, None, :] / B
    return CoupledSample(walk.reshape(-1, 2), z.reshape(-1, 2), xs, ys, fallbacks)


# ---------------------------------------------------------------------------
# error statistics


@dataclass(frozen=True)
class CouplingStats:
    B: int
    n_values: tuple[int, ...]
    d_rms: np.ndarray
    stderr: np.ndarray
    exponent: float
    exponent_se: float


def running_max_discrepancy(walk_steps: np.ndarray, gauss_steps: np.ndarray, n_values: Sequence[int]) -> np.ndarray:
    """max_{k <= n} |sum_{i <= k} (X_i - Y_i)| for each n (arrays of shape (..., N, 2))."""
    diff = np.cumsum(walk_steps - gauss_steps, axis=-2)
    norm = np.sqrt(np.sum(diff * diff, axis=-1))
    run = np.maximum.accumulate(norm, axis=-1)
    return run[..., np.asarray(n_values) - 1]


def fit_exponent(n_values, d_values) -> float:
    return float(np.polyfit(np.log(np.asarray(n_values, float)), np.log(np.asarray(d_values, float)), 1)[0])


def coupling_error_stats(
    coupler: BlockCoupler, n_values: Sequence[int], replicas: int, seed=None, *, batches: int = 10, bridge: str = "dp"
) -> CouplingStats:
    """D(n) = RMS over replicas of the running maximum discrepancy, and its log-log slope.

    The slope's standard error comes from ``batches`` disjoint replica groups.
    """
    n_values = tuple(int(n) for n in n_values)
    if any(n & (n - 1) for n in n_values):
        raise ValueError("n values must be powers of two")
    B = coupler.B
    n_max = max(n_values)
    n_blocks = max(1, -(-n_max // B))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(replicas)
    maxima = np.empty((replicas, len(n_values)))
    for r, child in enumerate(children):
        smp = sample_coupled(coupler, n_blocks, np.random.default_rng(child), bridge=bridge)
        maxima[r] = running_max_discrepancy(smp.walk_steps, smp.gauss_steps, n_values)
    sq = maxima**2
    ms = sq.mean(axis=0)
    d = np.sqrt(ms)
    se = sq.std(axis=0, ddof=1) / math.sqrt(replicas) / (2.0 * d)
    slope = fit_exponent(n_values, d)
    groups = np.array_split(np.arange(replicas), batches)
    slopes = [fit_exponent(n_values, np.sqrt(sq[g].mean(axis=0))) for g in groups if len(g)]
    slope_se = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else float("nan")
    return CouplingStats(B, n_values, d, se, slope, slope_se)
