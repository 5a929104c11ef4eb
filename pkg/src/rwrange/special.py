"""Exponential integral E1 and modified Bessel K0.

Power series near the origin, continued fractions beyond; both aim at about
1e-14 relative accuracy on (0, 700].
"""

from __future__ import annotations

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
_EPS = 1e-16
_MAXIT = 500


def _e1_series(x: float) -> float:
    # E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    total = 0.0
    term = 1.0
    for k in range(1, _MAXIT):
        term *= -x / k
        add = term / k
        total += add
        if abs(add) < _EPS * abs(total):
            break
    return -EULER_GAMMA - math.log(x) - total


def _e1_cf_scaled(x: float) -> float:
    """e^x E1(x) by the modified Lentz continued fraction (x > 1)."""
    b = x + 1.0
    c = 1.0 / 1e-300
    d = 1.0 / b
    h = d
    for i in range(1, _MAXIT):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"E1 continued fraction did not converge at x={x}")


def exp1(x: float) -> float:
    """E1(x) = int_x^inf e^-t / t dt for x > 0."""
    if x <= 0:
        raise ValueError("exp1 needs x > 0")
    if x <= 1.0:
        return _e1_series(x)
    return math.exp(-x) * _e1_cf_scaled(x)


def exp1_scaled(x: float) -> float:
    """e^x E1(x), finite for large x where E1 underflows."""
    if x <= 0:
        raise ValueError("exp1_scaled needs x > 0")
    if x <= 1.0:
        return math.exp(x) * _e1_series(x)
    return _e1_cf_scaled(x)


def _k0_series(x: float) -> float:
    # K0(x) = -(ln(x/2) + gamma) I0(x) + sum_k (x^2/4)^k / (k!)^2 H_k
    q = 0.25 * x * x
    term = 1.0
    i0 = 1.0
    tail = 0.0
    harmonic = 0.0
    for k in range(1, _MAXIT):
        term *= q / (k * k)
        harmonic += 1.0 / k
        i0 += term
        tail += term * harmonic
        if term < _EPS * i0 and term * harmonic < _EPS * abs(tail):
            break
    return -(math.log(0.5 * x) + EULER_GAMMA) * i0 + tail


def _k0_steed(x: float) -> float:
    # Steed's continued fraction (Temme's CF2) specialised to order zero
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1, q2 = 0.0, 1.0
    a1 = 0.25
    q = c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, _MAXIT):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            return math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
    raise ArithmeticError(f"K0 continued fraction did not converge at x={x}")


def k0(x: float) -> float:
    """Modified Bessel function of the second kind, order zero, x > 0."""
    if x <= 0:
        raise ValueError("k0 needs x > 0")
    if x <= 2.0:
        return _k0_series(x)
    return _k0_steed(x)


exp1_v = np.vectorize(exp1, otypes=[float])
k0_v = np.vectorize(k0, otypes=[float])
