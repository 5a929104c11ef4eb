"""Finitely supported symmetric step laws on the planar integer lattice."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "InvalidStepLaw",
    "ProbsDontSum",
    "NotSymmetric",
    "CovarianceNotIdentity",
    "NotStronglyAperiodic",
    "StepLaw",
    "CharFnView",
    "make_step_law",
    "ref_walk",
    "load_step_law",
    "dump_step_law",
    "char_fn",
    "check_strong_aperiodicity",
    "sample_step",
    "sample_codes",
]

PROB_TOL = 1e-12
COV_TOL = 1e-12


class InvalidStepLaw(ValueError):
    """A step table violating one of the walk hypotheses.

    ``violations`` lists every violated hypothesis found, including this one.
    """

    def __init__(self, message: str):
        super().__init__(message)
        self.violations: list[InvalidStepLaw] = [self]


class ProbsDontSum(InvalidStepLaw):
    pass


class NotSymmetric(InvalidStepLaw):
    pass


class CovarianceNotIdentity(InvalidStepLaw):
    def __init__(self, message: str, matrix: np.ndarray):
        super().__init__(message)
        self.matrix = matrix


class NotStronglyAperiodic(InvalidStepLaw):
    def __init__(self, message: str, p: tuple[float, float]):
        super().__init__(message)
        self.p = p


def _as_prob(value) -> Fraction | float:
    if isinstance(value, (Fraction, int)):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    return float(value)


@dataclass(frozen=True)
class StepLaw:
    """Immutable table of lattice steps and their probabilities.

    Probabilities given as :class:`fractions.Fraction` are kept exact so that
    the symmetry and covariance checks and the sampler's lookup table are
    exact too.
    """

    entries: tuple[tuple[int, int, Fraction | float], ...]
    moment_p: float = 4.0
    name: str = "custom"

    @cached_property
    def vectors(self) -> np.ndarray:
        return np.array([(dx, dy) for dx, dy, _ in self.entries], dtype=np.int64)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([float(p) for _, _, p in self.entries], dtype=np.float64)

    @property
    def is_exact(self) -> bool:
        return all(isinstance(p, Fraction) for _, _, p in self.entries)

    @cached_property
    def covariance(self) -> np.ndarray:
        if self.is_exact:
            c = [[Fraction(0)] * 2 for _ in range(2)]
            for dx, dy, p in self.entries:
                v = (dx, dy)
                for a in range(2):
                    for b in range(2):
                        c[a][b] += p * v[a] * v[b]
            return np.array([[float(x) for x in row] for row in c])
        v = self.vectors.astype(float)
        return (v * self.probs[:, None]).T @ v

    @cached_property
    def max_step(self) -> int:
        return int(np.abs(self.vectors).max())

    @cached_property
    def moment(self) -> float:
        """E|X|^moment_p, finite for every finitely supported law."""
        norms = np.hypot(*self.vectors.T.astype(float))
        return float(np.sum(self.probs * norms**self.moment_p))

    @cached_property
    def charfn(self) -> "CharFnView":
        return CharFnView(self)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CharFnView:
    """Characteristic function of a symmetric step law, in real form.

    ``one_minus`` and ``quartic_part`` avoid the cancellation in ``1 - phi``
    and ``phi - 1 + |p|^2/2`` near the origin; both are needed by the Green
    function quadratures.
    """

    law: StepLaw
    cache_policy: str = field(default="none")

    def _dots(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        v = self.law.vectors.astype(float)
        return p[..., None, 0] * v[:, 0] + p[..., None, 1] * v[:, 1]

    def __call__(self, p) -> np.ndarray:
        return np.cos(self._dots(p)) @ self.law.probs

    def one_minus(self, p) -> np.ndarray:
        s = np.sin(0.5 * self._dots(p))
        return (2.0 * s * s) @ self.law.probs

    def quartic_part(self, p) -> np.ndarray:
        """phi(p) - 1 + |p|^2/2, assuming identity covariance."""
        t = self._dots(p)
        return _theta2_minus_versine(t) @ self.law.probs


def _theta2_minus_versine(t: np.ndarray) -> np.ndarray:
    # t^2/2 - (1 - cos t) = t^4/24 - t^6/720 + t^8/40320 - ...
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 0.1
    ts = t[small]
    t2 = ts * ts
    out[small] = t2 * t2 * (1 / 24 - t2 * (1 / 720 - t2 * (1 / 40320 - t2 / 3628800)))
    tl = t[~small]
    s = np.sin(0.5 * tl)
    out[~small] = 0.5 * tl * tl - 2.0 * s * s
    return out


def char_fn(law: StepLaw, p) -> np.ndarray | float:
    """phi(p) = sum_v prob(v) cos(p.v); vectorised over leading axes of ``p``."""
    out = law.charfn(p)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# lattice generated by the difference set


def _difference_lattice(vectors: np.ndarray) -> np.ndarray:
    """Basis rows [[a, b], [0, c]] of the lattice spanned by {v - w}."""
    diffs = {(int(p[0] - q[0]), int(p[1] - q[1])) for p in vectors for q in vectors}
    a, b, c = 0, 0, 0
    for x, y in diffs:
        g, s, t = _egcd(a, x)
        if g == 0:
            c = math.gcd(c, y)
            continue
        # (x/g) * row - (a/g) * (x, y) has zero first coordinate
        c = math.gcd(c, (x // g) * b - (a // g) * y)
        a, b = g, s * b + t * y
    if c:
        b %= c
    return np.array([[a, b], [0, c]], dtype=np.int64)


def _egcd(a: int, b: int) -> tuple[int, int, int]:
    if a == 0 and b == 0:
        return 0, 0, 0
    x0, y0, x1, y1 = 1, 0, 0, 1
    aa, bb = a, b
    while bb:
        q = aa // bb
        aa, bb = bb, aa - q * bb
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    if aa < 0:
        aa, x0, y0 = -aa, -x0, -y0
    return aa, x0, y0


def _periodicity_witness(law: StepLaw) -> tuple[float, float] | None:
    """A frequency p != 0 (mod 2 pi) with |phi(p)| = 1, or None.

    The walk is strongly aperiodic exactly when the differences of support
    points generate Z^2; otherwise 2 pi times a dual basis vector works.
    """
    basis = _difference_lattice(law.vectors)
    det = int(round(abs(np.linalg.det(basis.astype(float)))))
    if det == 1:
        return None
    if det == 0:
        # degenerate (rank < 2): any p orthogonal to the span
        a, b = basis[0] if basis[0].any() else basis[1]
        p = np.array([-b, a], dtype=float)
        p = p / np.linalg.norm(p) * 0.5
        return float(p[0]), float(p[1])
    dual = 2 * np.pi * np.linalg.inv(basis.astype(float))
    candidates = []
    for i in range(det + 1):
        for j in range(det + 1):
            p = (i * dual[:, 0] + j * dual[:, 1] + np.pi) % (2 * np.pi) - np.pi
            p = np.where(np.isclose(p, -np.pi), np.pi, p)
            if np.abs(p).max() > 1e-9:
                candidates.append(p)
    if not candidates:
        return None
    # prefer a witness with phi(p) = +1 over phi(p) = -1
    best = max(candidates, key=lambda p: float(law.charfn(p)))
    return float(best[0]), float(best[1])


def check_strong_aperiodicity(law: StepLaw, grid_n: int = 256) -> tuple[bool, float, tuple[float, float]]:
    """Grid search for max |phi| away from the origin.

    Points with |p| < r0 = 4 * (2 pi / grid_n) are excluded. The verdict is
    ``max |phi| < 1 - margin`` with margin = r0^2 * mu_min / 4, a quarter of
    the quadratic lower bound on 1 - phi at the exclusion radius (mu_min is the
    smallest covariance eigenvalue).

    Returns:
        (verdict, worst |phi|, worst p)
    """
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    axis = np.linspace(-np.pi, np.pi, grid_n + 1)
    p1, p2 = np.meshgrid(axis, axis, indexing="ij")
    r0 = 4 * 2 * np.pi / grid_n
    mask = np.hypot(p1, p2) >= r0
    vals = np.abs(law.charfn(np.stack([p1, p2], axis=-1)))
    vals = np.where(mask, vals, -np.inf)
    idx = np.unravel_index(np.argmax(vals), vals.shape)
    worst = float(vals[idx])
    mu_min = float(np.linalg.eigvalsh(law.covariance)[0])
    margin = 0.25 * r0 * r0 * mu_min
    return worst < 1.0 - margin, worst, (float(p1[idx]), float(p2[idx]))


def make_step_law(
    entries: Iterable[Sequence],
    moment_p: float = 4.0,
    *,
    name: str = "custom",
    require_identity_cov: bool = True,
) -> StepLaw:
    """Validate a step table and return a :class:`StepLaw`.

    ``entries`` holds ``(dx, dy, prob)`` triples or ``((dx, dy), prob)`` pairs.
    Every violated hypothesis is collected; the first is raised with the full
    list on ``.violations``. Checks run in the order: sum, symmetry,
    covariance, strong aperiodicity.

    With ``require_identity_cov=False`` a non-identity covariance is accepted
    and recorded; Green-function constants then do not apply.
    """
    rows: dict[tuple[int, int], Fraction | float] = {}
    for e in entries:
        if len(e) == 2:
            (dx, dy), p = e
        else:
            dx, dy, p = e
        key = (int(dx), int(dy))
        p = _as_prob(p)
        if not p > 0:
            raise ValueError(f"probability for {key} must be positive, got {p}")
        rows[key] = rows[key] + p if key in rows else p
    if not rows:
        raise ValueError("entries must be nonempty")
    if moment_p <= 2:
        raise ValueError("moment_p must exceed 2")

    law = StepLaw(tuple((dx, dy, p) for (dx, dy), p in sorted(rows.items())), float(moment_p), name)
    problems: list[InvalidStepLaw] = []

    total = sum(rows.values())
    if abs(float(total) - 1.0) > PROB_TOL:
        problems.append(ProbsDontSum(f"probabilities sum to {float(total)!r}"))

    asym = [k for k, p in rows.items() if (-k[0], -k[1]) not in rows or abs(float(rows[(-k[0], -k[1])] - p)) > PROB_TOL]
    if asym:
        problems.append(NotSymmetric(f"no matching mass at -v for v in {sorted(asym)}"))

    cov = law.covariance
    if require_identity_cov and np.abs(cov - np.eye(2)).max() > COV_TOL:
        problems.append(CovarianceNotIdentity(f"covariance is {cov.tolist()}", cov))

    witness = _periodicity_witness(law)
    if witness is not None:
        problems.append(
            NotStronglyAperiodic(
                f"|phi(p)| = {abs(float(law.charfn(np.array(witness)))):.12g} at p = {witness}", witness
            )
        )

    if problems:
        first = problems[0]
        first.violations = problems
        raise first
    return law


def ref_walk() -> StepLaw:
    """Twelve-point reference law with exactly identity covariance."""
    tenth, twentieth = Fraction(1, 10), Fraction(1, 20)
    entries = [(sx, sy, tenth) for sx in (-1, 1) for sy in (-1, 1)]
    entries += [(1, 0, tenth), (-1, 0, tenth), (0, 1, tenth), (0, -1, tenth)]
    entries += [(2, 0, twentieth), (-2, 0, twentieth), (0, 2, twentieth), (0, -2, twentieth)]
    return make_step_law(entries, moment_p=4.0, name="REF-WALK")


# ---------------------------------------------------------------------------
# text table format: "dx dy numerator denominator" per line


def load_step_law(path: str | Path, **kwargs) -> StepLaw:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'dx dy numerator denominator'")
        dx, dy, num, den = (int(x) for x in parts)
        entries.append((dx, dy, Fraction(num, den)))
    kwargs.setdefault("name", Path(path).stem)
    return make_step_law(entries, **kwargs)


def dump_step_law(law: StepLaw, path: str | Path) -> None:
    lines = [f"# {law.name}: dx dy numerator denominator"]
    for dx, dy, p in law.entries:
        p = Fraction(p).limit_denominator(10**12)
        lines.append(f"{dx} {dy} {p.numerator} {p.denominator}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class _CodeTable:
    """Uniform code -> step table, or an alias table for inexact laws."""

    dx: np.ndarray
    dy: np.ndarray
    denom: int
    alias: tuple[np.ndarray, np.ndarray] | None = None


_TABLES: dict[tuple, _CodeTable] = {}
MAX_LOOKUP = 1 << 16


def _code_table(law: StepLaw) -> _CodeTable:
    key = law.entries
    tab = _TABLES.get(key)
    if tab is not None:
        return tab
    vec = law.vectors
    if law.is_exact:
        denom = math.lcm(*(Fraction(p).denominator for _, _, p in law.entries))
        if denom <= MAX_LOOKUP:
            counts = [int(Fraction(p) * denom) for _, _, p in law.entries]
            idx = np.repeat(np.arange(len(law)), counts)
            tab = _CodeTable(vec[idx, 0].astype(np.int32), vec[idx, 1].astype(np.int32), denom)
            _TABLES[key] = tab
            return tab
    prob, alias = _walker_alias(law.probs)
    tab = _CodeTable(vec[:, 0].astype(np.int32), vec[:, 1].astype(np.int32), len(law), (prob, alias))
    _TABLES[key] = tab
    return tab


def _walker_alias(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(p)
    scaled = p * n / p.sum()
    prob = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, g = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] -= 1.0 - scaled[s]
        (small if scaled[g] < 1.0 else large).append(g)
    return prob, alias


def sample_codes(law: StepLaw, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``size`` steps as codes into displacement tables.

    Returns ``(codes, code_dx, code_dy)``; the i-th step is
    ``(code_dx[codes[i]], code_dy[codes[i]])``. Deterministic given the
    generator state.
    """
    tab = _code_table(law)
    if tab.alias is None:
        dtype = np.uint8 if tab.denom <= 256 else np.uint16
        codes = rng.integers(0, tab.denom, size=size, dtype=dtype)
        return codes, tab.dx, tab.dy
    prob, alias = tab.alias
    col = rng.integers(0, tab.denom, size=size)
    keep = rng.random(size) < prob[col]
    codes = np.where(keep, col, alias[col]).astype(np.uint16)
    return codes, tab.dx, tab.dy


def sample_steps(law: StepLaw, rng: np.random.Generator, size: int) -> np.ndarray:
    codes, cdx, cdy = sample_codes(law, rng, size)
    return np.stack([cdx[codes], cdy[codes]], axis=-1)


def sample_step(law: StepLaw, rng: np.random.Generator) -> tuple[int, int]:
    dx, dy = sample_steps(law, rng, 1)[0]
    return int(dx), int(dy)
