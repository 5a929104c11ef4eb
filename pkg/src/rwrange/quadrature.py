"""Gauss-Legendre panels, graded polar quadrature on [-pi, pi]^2, Richardson."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on consecutive panels.

    ``edges`` may carry leading batch axes; the last axis lists panel edges.
    """
    x, w = gauss_legendre(n)
    a = edges[..., :-1, None]
    b = edges[..., 1:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * x
    weights = half * w
    shape = nodes.shape[:-2] + (-1,)
    return nodes.reshape(shape), weights.reshape(shape)


def graded_radii(r_min: float, r_mid: float, ratio: float = 2.0) -> np.ndarray:
    """Panel edges 0, r_min, r_min*ratio, ... , r_mid (geometric grading)."""
    if not 0 < r_min < r_mid:
        raise ValueError("need 0 < r_min < r_mid")
    edges = [0.0, r_min]
    while edges[-1] * ratio < r_mid:
        edges.append(edges[-1] * ratio)
    edges.append(r_mid)
    return np.array(edges)


def square_polar(
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    r_min: float,
    *,
    n_theta: int = 48,
    n_r: int = 16,
    outer_panels: int = 8,
    r_mid: float = np.pi / 2,
) -> float:
    """Integrate ``fn(p1, p2)`` over [-pi, pi]^2 in polar coordinates about 0.

    Each of the four sides of the square is one angular sector (the boundary
    radius pi/|cos| is smooth there), split in two halves for the rule. The
    radial direction uses geometric panels (ratio 2) from ``r_min`` up to
    ``r_mid`` and ``outer_panels`` uniform panels from ``r_mid`` to the
    boundary; a single panel covers [0, r_min].
    """
    tx, tw = gauss_legendre(n_theta)
    inner = graded_radii(r_min, r_mid)
    total = 0.0
    for side in range(4):
        centre = side * np.pi / 2
        for lo, hi in ((-np.pi / 4, 0.0), (0.0, np.pi / 4)):
            local = 0.5 * (lo + hi) + 0.5 * (hi - lo) * tx
            wt = 0.5 * (hi - lo) * tw
            theta = centre + local
            r_edge = np.pi / np.cos(local)
            outer = r_mid + (r_edge[:, None] - r_mid) * np.linspace(0.0, 1.0, outer_panels + 1)[None, :]
            edges = np.concatenate([np.broadcast_to(inner[:-1], (n_theta, len(inner) - 1)), outer], axis=1)
            r, wr = panel_rule(edges, n_r)
            c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
            vals = fn(r * c, r * s)
            total += float(np.sum(wt[:, None] * wr * r * vals))
    return total


def richardson(values: Sequence[float], p: float = 1.0, r: float = 2.0) -> tuple[float, float]:
    """Richardson extrapolation of values computed at steps s, s/r, s/r^2, ...

    Assumes errors c_1 s^p + c_2 s^(2p) + ... and eliminates one more term per
    tableau column. Returns the extrapolate and the gap between the two best
    estimates as a rough error scale.
    """
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise ValueError("need at least two levels")
    table = [vals]
    for j in range(1, len(vals)):
        fac = r ** (p * j)
        prev = table[-1]
        table.append([(fac * prev[i + 1] - prev[i]) / (fac - 1.0) for i in range(len(prev) - 1)])
    best = table[-1][-1]
    second = table[-2][-1]
    return best, abs(best - second)
