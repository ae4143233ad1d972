"""Run statistics: Bessel-corrected spread, Welch's t-test, variance reduction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .errors import InsufficientSamplesError


def mean(xs: Sequence[float]) -> float:
    return float(np.mean(np.asarray(xs, dtype=np.float64)))


def std_bessel(xs: Sequence[float]) -> float:
    """Sample standard deviation with divisor n - 1."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {xs.size}")
    return float(np.std(xs, ddof=1))


def student_t_sf2(t: float, df: float) -> float:
    """Two-tailed tail mass P(|T| >= |t|) for Student's t with ``df`` degrees of freedom.

    Uses P = I_{df / (df + t^2)}(df / 2, 1 / 2) (regularised incomplete beta).
    """
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_t_test(group_a: Sequence[float], group_b: Sequence[float]) -> WelchResult:
    """Two-sided Welch test of mean(a) - mean(b) with Welch-Satterthwaite df.

    If both groups have zero spread the statistic is 0 (equal means) or +/-inf,
    and df falls back to n_a + n_b - 2.
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InsufficientSamplesError(f"Welch test needs n >= 2 per group, got {a.size} and {b.size}")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        t = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        df = float(a.size + b.size - 2)
    else:
        t = diff / math.sqrt(se2)
        df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return WelchResult(float(t), float(df), student_t_sf2(t, df))


def variance_reduction(std_treatment: float, std_baseline: float) -> float:
    """1 - s_treatment / s_baseline."""
    if std_baseline == 0:
        raise ZeroDivisionError("baseline standard deviation is zero")
    return 1.0 - std_treatment / std_baseline
