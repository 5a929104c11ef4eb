"""Walk paths, range, occupation counts and (renormalised) intersection local times.

Two index conventions coexist and are kept explicit:

* the range R(n) counts distinct sites among S_1..S_n;
* occupation counts, I_k and their shifted versions use times 0 <= i < n.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .stepdist import StepLaw, sample_codes

BRUTE_MAX_N = 14
BRUTE_MAX_K = 4
_INT64_SAFE = 2**62


class RefusedTooLarge(ValueError):
    pass


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class WalkSample:
    """S_0 = 0, S_1, ..., S_n as an (n + 1, 2) int64 array."""

    positions: np.ndarray = field(repr=False)
    law: StepLaw = field(repr=False)
    seed: object = None

    @property
    def n(self) -> int:
        return len(self.positions) - 1


def path_from_steps(steps: np.ndarray) -> np.ndarray:
    steps = np.asarray(steps, dtype=np.int64).reshape(-1, 2)
    pos = np.zeros((len(steps) + 1, 2), dtype=np.int64)
    np.cumsum(steps, axis=0, out=pos[1:])
    return pos


def simulate_walk(law: StepLaw, n: int, seed=None) -> WalkSample:
    """n i.i.d. steps from ``law``; identical output for identical seeds."""
    if n < 0:
        raise ValueError("n must be >= 0")
    codes, cdx, cdy = sample_codes(law, as_rng(seed), n)
    steps = np.stack([cdx[codes], cdy[codes]], axis=-1)
    return WalkSample(path_from_steps(steps), law, seed)


def walk_from_positions(positions, law: StepLaw | None = None) -> WalkSample:
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if len(pos) == 0 or pos[0].any():
        raise ValueError("a path must start at the origin")
    return WalkSample(pos, law)


def site_keys(pos: np.ndarray) -> np.ndarray:
    """Injective int64 key per lattice point (coordinates below 2^31)."""
    pos = np.asarray(pos, dtype=np.int64)
    return (pos[..., 0] << 32) ^ (pos[..., 1] & 0xFFFFFFFF)


# ---------------------------------------------------------------------------
# range


def range_size(walk: WalkSample, n: int | None = None) -> int:
    """|{S_1, ..., S_n}|."""
    n = walk.n if n is None else n
    if not 0 <= n <= walk.n:
        raise ValueError(f"n={n} outside 0..{walk.n}")
    return int(len(np.unique(site_keys(walk.positions[1 : n + 1]))))


def range_curve(walk: WalkSample, ns: Sequence[int]) -> np.ndarray:
    """|R(n)| for each n in ``ns`` from one pass over the path."""
    ns = np.asarray(ns, dtype=np.int64)
    order = np.argsort(ns, kind="stable")
    keys = site_keys(walk.positions[1:])
    _, first = np.unique(keys, return_index=True)
    first = np.sort(first) + 1  # time of each first visit
    out = np.empty(len(ns), dtype=np.int64)
    out[order] = np.searchsorted(first, ns[order], side="right")
    return out


def streaming_range(law: StepLaw, n: int, seed=None, checkpoints: Sequence[int] | None = None) -> np.ndarray:
    """|R(m)| at each checkpoint without materialising the path.

    Only the step codes (one byte each for the reference law) and a bit grid
    of the visited box are held in memory.
    """
    cps = np.asarray([n] if checkpoints is None else checkpoints, dtype=np.int64)
    if len(cps) and (np.any(np.diff(cps) < 0) or cps[-1] > n):
        raise ValueError("checkpoints must be nondecreasing and <= n")
    codes, cdx, cdy = sample_codes(law, as_rng(seed), n)
    return kernels.range_checkpoints(codes, cdx, cdy, cps, False)


# ---------------------------------------------------------------------------
# occupation and intersection local times


@dataclass(frozen=True)
class OccupationMap:
    """Visit counts over times 0 <= i < n.

    ``counts`` maps site -> l_x. ``positions`` (optional) keeps S_0..S_{n-1}
    in time order, as needed by the shifted dynamic program.
    """

    n: int
    counts: Mapping[tuple[int, int], int]
    positions: np.ndarray | None = field(default=None, repr=False)

    @property
    def with_times(self) -> bool:
        return self.positions is not None

    def visit_times(self, site) -> list[int]:
        if self.positions is None:
            raise ValueError("occupation map built without visit times")
        hits = np.flatnonzero((self.positions[:, 0] == site[0]) & (self.positions[:, 1] == site[1]))
        return hits.tolist()

    def __len__(self) -> int:
        return len(self.counts)


def occupation(walk: WalkSample, n: int | None = None, with_times: bool = False) -> OccupationMap:
    n = walk.n if n is None else n
    if not 0 <= n <= walk.n:
        raise ValueError(f"n={n} outside 0..{walk.n}")
    pos = walk.positions[:n]
    sites, counts = np.unique(pos, axis=0, return_counts=True)
    cmap = {(int(x), int(y)): int(c) for (x, y), c in zip(sites, counts)}
    return OccupationMap(n, cmap, pos.copy() if with_times else None)


def ilt(occ: OccupationMap, k: int) -> int:
    """I_k(n) = sum_x C(l_x + k - 1, k), exact."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hist = Counter(occ.counts.values())
    return sum(mult * math.comb(l + k - 1, k) for l, mult in hist.items())


def ilt_brute(walk: WalkSample, n: int, k: int) -> int:
    """Count of 0 <= i_1 <= ... <= i_k < n with S_{i_1} = ... = S_{i_k}."""
    if n > BRUTE_MAX_N or k > BRUTE_MAX_K:
        raise RefusedTooLarge(f"brute force limited to n <= {BRUTE_MAX_N}, k <= {BRUTE_MAX_K}")
    keys = site_keys(walk.positions[:n]).tolist()
    return sum(1 for t in itertools.combinations_with_replacement(range(n), k) if len({keys[i] for i in t}) == 1)


def renorm_ilt(i_values: Sequence, k: int, g_lambda):
    """Gamma_{k,lam}(n) = sum_j C(k-1, j-1) (-g)^{k-j} I_j(n).

    ``i_values[j - 1]`` is I_j. Floats in, float out; with a
    :class:`~fractions.Fraction` ``g_lambda`` and integer I_j the result is an
    exact rational.
    """
    if len(i_values) < k:
        raise ValueError("need I_1..I_k")
    exact = isinstance(g_lambda, (int, Fraction))
    g = g_lambda if exact else float(g_lambda)
    total = Fraction(0) if exact else 0.0
    for j in range(1, k + 1):
        term = math.comb(k - 1, j - 1) * (-g) ** (k - j)
        total += term * (i_values[j - 1] if exact else float(i_values[j - 1]))
    return total


def renorm_ilt_brute(walk: WalkSample, n: int, k: int, g_lambda):
    """Product form: sum over ordered tuples of prod (delta(S_a, S_b) - g delta(a, b))."""
    if n > BRUTE_MAX_N or k > BRUTE_MAX_K + 2:
        raise RefusedTooLarge(f"brute force limited to n <= {BRUTE_MAX_N}")
    keys = site_keys(walk.positions[:n]).tolist()
    total = Fraction(0) if isinstance(g_lambda, (int, Fraction)) else 0.0
    for t in itertools.combinations_with_replacement(range(n), k):
        prod = 1
        for a, b in zip(t, t[1:]):
            prod *= (1 if keys[a] == keys[b] else 0) - (g_lambda if a == b else 0)
            if prod == 0:
                break
        total += prod
    return total


def ilt_table(occ: OccupationMap, k_max: int) -> list[int]:
    """[I_1, ..., I_{k_max}]."""
    return [ilt(occ, k) for k in range(1, k_max + 1)]


# ---------------------------------------------------------------------------
# shifted versions


def _shifted_dp_int64(keys: np.ndarray, pos: np.ndarray, offsets: Sequence[tuple[int, int]]) -> np.ndarray:
    """Vectorised layers g_j(i) for int64-safe sizes."""
    n = len(keys)
    g = np.ones(n, dtype=np.int64)
    times = np.arange(n, dtype=np.int64)
    for off in offsets:
        target = site_keys(pos - np.asarray(off, dtype=np.int64))
        _, inv = np.unique(np.concatenate([keys, target]), return_inverse=True)
        rk, rt = inv[:n], inv[n:]
        comp = rk * n + times
        order = np.argsort(comp, kind="stable")
        sorted_comp = comp[order]
        csum = np.cumsum(g[order])
        # cumulative sum restarted at the first entry of each site group
        grp = rk[order]
        is_start = np.r_[True, grp[1:] != grp[:-1]]
        start = np.maximum.accumulate(np.where(is_start, np.arange(n), 0))
        group_cum = csum - np.r_[0, csum][start]
        p = np.searchsorted(sorted_comp, rt * n + times, side="right") - 1
        ok = (p >= 0) & (grp[np.maximum(p, 0)] == rt)
        g = np.where(ok, group_cum[np.maximum(p, 0)], 0)
    return g


def _shifted_dp_exact(pos: np.ndarray, offsets: Sequence[tuple[int, int]]) -> list[int]:
    sites = [(int(x), int(y)) for x, y in pos]
    g = [1] * len(sites)
    for ox, oy in offsets:
        acc: dict[tuple[int, int], int] = {}
        nxt = []
        for i, (x, y) in enumerate(sites):
            acc[(x, y)] = acc.get((x, y), 0) + g[i]
            nxt.append(acc.get((x - ox, y - oy), 0))
        g = nxt
    return g


def shifted_ilt(occ: OccupationMap, k: int, offsets: Sequence[tuple[int, int]]) -> int:
    """Ibar_k(n, x): ordered tuples with S_{i_j} - S_{i_{j-1}} = x_j.

    ``offsets`` lists x_2..x_k (k - 1 lattice vectors). Uses the time-ordered
    dynamic program g_1 = 1, g_j(i) = sum_{i' <= i, S_i' = S_i - x_j} g_{j-1}(i').
    """
    if not occ.with_times:
        raise ValueError("shifted_ilt needs an occupation map built with_times=True")
    if k < 1:
        raise ValueError("k must be >= 1")
    offsets = [tuple(int(c) for c in o) for o in offsets]
    if len(offsets) != k - 1:
        raise ValueError(f"need {k - 1} offsets for k={k}")
    n = occ.n
    if n == 0:
        return 0
    if k == 1:
        return n
    pos = occ.positions
    if math.comb(n + k - 1, k) < _INT64_SAFE:
        return int(_shifted_dp_int64(site_keys(pos), pos, offsets).sum())
    return sum(_shifted_dp_exact(pos, offsets))


def shifted_ilt_brute(walk: WalkSample, n: int, k: int, offsets: Sequence[tuple[int, int]]) -> int:
    if n > BRUTE_MAX_N or k > BRUTE_MAX_K:
        raise RefusedTooLarge(f"brute force limited to n <= {BRUTE_MAX_N}, k <= {BRUTE_MAX_K}")
    pos = [tuple(int(c) for c in p) for p in walk.positions[:n]]
    offs = [tuple(int(c) for c in o) for o in offsets]
    count = 0
    for t in itertools.combinations_with_replacement(range(n), k):
        if all(
            pos[t[j]][0] - pos[t[j - 1]][0] == offs[j - 1][0] and pos[t[j]][1] - pos[t[j - 1]][1] == offs[j - 1][1]
            for j in range(1, k)
        ):
            count += 1
    return count


def shifted_renorm_ilt(
    shifted: Callable[[int, tuple], int] | OccupationMap,
    green: Callable[[tuple[int, int]], float] | Mapping,
    k: int,
    offsets: Sequence[tuple[int, int]],
) -> float:
    """Gammabar_{k,lam}(n, x) = sum_{A in {2..k}} (-1)^|A| prod_{i in A} G(x_i) Ibar_{k-|A|}(n, x_{A^c}).

    Offsets are lattice vectors (already divided by sqrt(lam)). ``shifted``
    is either an occupation map with times or a callable ``(k, offsets) ->
    Ibar_k``; ``green`` maps a lattice vector to G_lam there.
    """
    offsets = [tuple(int(c) for c in o) for o in offsets]
    if len(offsets) != k - 1:
        raise ValueError(f"need {k - 1} offsets for k={k}")
    if isinstance(shifted, OccupationMap):
        occ = shifted
        shifted = lambda kk, offs: shifted_ilt(occ, kk, offs)  # noqa: E731
    gfun = green.__getitem__ if isinstance(green, Mapping) or hasattr(green, "values") else green
    cache: dict[tuple, int] = {}
    total = 0.0
    for r in range(k):
        for A in itertools.combinations(range(k - 1), r):
            weight = (-1.0) ** r
            for i in A:
                weight *= float(gfun(offsets[i]))
            rest = tuple(o for i, o in enumerate(offsets) if i not in A)
            key = (k - r, rest)
            if key not in cache:
                cache[key] = shifted(k - r, list(rest))
            total += weight * cache[key]
    return total


# ---------------------------------------------------------------------------
# killing


@dataclass(frozen=True)
class KilledHorizon:
    lam: float
    zeta: float
    zeta_lambda: int


def killed_index(zeta, lam: float):
    """ceil(zeta / lam), at least 1; vectorised."""
    z = np.maximum(np.ceil(np.asarray(zeta, dtype=float) / lam), 1).astype(np.int64)
    return int(z) if z.ndim == 0 else z


def sample_killed_horizon(lam: float, rng) -> KilledHorizon:
    if not 0 < lam < 1:
        raise ValueError("need 0 < lambda < 1")
    zeta = float(as_rng(rng).exponential())
    return KilledHorizon(lam, zeta, killed_index(zeta, lam))


def killed_ranges(law: StepLaw, lam: float, n_rep: int, rng) -> np.ndarray:
    """|R(zeta_lam)| = |{S_0, ..., S_{zeta_lam - 1}}| for ``n_rep`` independent replicas."""
    rng = as_rng(rng)
    zl = killed_index(rng.exponential(size=n_rep), lam)
    lengths = zl - 1
    codes, cdx, cdy = sample_codes(law, rng, int(lengths.sum()))
    starts = np.r_[0, np.cumsum(lengths)[:-1]].astype(np.int64)
    return kernels.range_many(codes, cdx, cdy, starts, lengths.astype(np.int64), True)


@dataclass(frozen=True)
class KilledPaths:
    """Many killed paths packed together.

    Replica r occupies rows ``starts[r] : starts[r] + zeta_lambda[r]`` of
    ``positions`` (S_0..S_{zeta_lambda - 1}); ``replica`` and ``time`` label
    each row.
    """

    zeta_lambda: np.ndarray
    starts: np.ndarray
    positions: np.ndarray
    replica: np.ndarray
    time: np.ndarray


def killed_positions(law: StepLaw, lam: float, n_rep: int, rng) -> KilledPaths:
    rng = as_rng(rng)
    zl = killed_index(rng.exponential(size=n_rep), lam)
    total = int(zl.sum())
    starts = np.r_[0, np.cumsum(zl)[:-1]].astype(np.int64)
    codes, cdx, cdy = sample_codes(law, rng, total - n_rep)
    steps = np.zeros((total, 2), dtype=np.int64)
    # each replica starts with a zero step so the packed cumsum restarts at the origin
    mask = np.ones(total, dtype=bool)
    mask[starts] = False
    steps[mask, 0] = cdx[codes]
    steps[mask, 1] = cdy[codes]
    cum = np.cumsum(steps, axis=0)
    pos = cum - np.repeat(cum[starts], zl, axis=0)
    rep = np.repeat(np.arange(n_rep), zl)
    time = np.arange(total) - np.repeat(starts, zl)
    return KilledPaths(zl, starts, pos, rep, time)


def hits_before_killing(law: StepLaw, lam: float, targets: Sequence[tuple[int, int]], n_rep: int, rng) -> np.ndarray:
    """Indicator of T_x < zeta_lam per replica and target, shape (n_rep, len(targets)).

    Each replica is run for zeta_lam - 1 steps, i.e. up to min(T_x, zeta_lam)
    in the worst case over targets.
    """
    kp = killed_positions(law, lam, n_rep, rng)
    out = np.zeros((n_rep, len(targets)), dtype=bool)
    for t, (x, y) in enumerate(targets):
        hit = (kp.positions[:, 0] == x) & (kp.positions[:, 1] == y)
        out[np.unique(kp.replica[hit]), t] = True
    return out


# ---------------------------------------------------------------------------
# CSV output


WALK_CSV_COLUMNS = ["seed", "n", "range", "I2", "I3", "I4", "gamma2", "gamma3", "gamma4"]


def walk_stats_row(walk: WalkSample, n: int, g_lambda: float, seed=None) -> dict:
    occ = occupation(walk, n)
    ivals = ilt_table(occ, 4)
    row = {"seed": seed if seed is not None else walk.seed, "n": n, "range": range_size(walk, n)}
    for k in (2, 3, 4):
        row[f"I{k}"] = ivals[k - 1]
    for k in (2, 3, 4):
        row[f"gamma{k}"] = renorm_ilt(ivals, k, g_lambda)
    return row


def write_walk_csv(path: str | Path, rows: Iterable[dict], lam: float, g_lambda: float) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# lambda={lam!r} g_lambda={g_lambda!r}\n")
        w = csv.DictWriter(fh, fieldnames=WALK_CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)
