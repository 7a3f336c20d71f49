"""Empirical VaR / ES, the joint (VaR, ES) scoring function and diff metrics.

Everything uses the lower-tail convention: VaR at level ``alpha`` is the
lower empirical ``alpha``-quantile of the values themselves and ES is the
mean of the values at or below it, so ``es <= var`` always.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import expit

from .errors import AlphaMismatch, EmptySample, NonFiniteValue


def check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


@dataclass(frozen=True)
class RiskReport:
    alpha: float
    var: float
    es: float
    n: int


@dataclass(frozen=True)
class DiffReport:
    alpha: float
    var_diff: float
    es_diff: float


def tail_count(alpha, n):
    """Number of order statistics in the lower tail, ``ceil(alpha * n)``.

    The product is rounded to 9 decimals first so that e.g. ``0.07 * 100``
    gives 7 rather than 8.
    """
    return max(1, math.ceil(round(alpha * n, 9)))


def var_es(sample, alpha=0.05) -> RiskReport:
    """Empirical VaR and ES of ``sample`` at level ``alpha``.

    Parameters
    ----------
    sample : array-like
        Finite values; flattened.
    alpha : float
        Tail probability in (0, 1).

    Returns
    -------
    RiskReport
        ``var`` is the k-th smallest value with ``k = ceil(alpha * n)`` and
        ``es`` the mean of the k smallest values.
    """
    alpha = check_alpha(alpha)
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("cannot estimate risk of an empty sample")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("sample contains NaN or Inf")
    k = tail_count(alpha, x.size)
    tail = np.sort(np.partition(x, k - 1)[:k])
    # exact rational mean, rounded once: keeps es <= var even for tied tails
    es = float(sum(map(Fraction, tail.tolist())) / k)
    return RiskReport(alpha, float(tail[-1]), es, int(x.size))


def softplus(e):
    return np.logaddexp(0.0, e)


def fz_score(v, e, x, alpha):
    """Joint (VaR, ES) score, broadcasting over all arguments.

    Fissler-Ziegel form with ``G1(t) = t`` and ``G2 = softplus``::

        S = (1{x<=v} - a) v - 1{x<=v} x
            + sigmoid(e) (e - v + 1{x<=v} (v - x) / a) - softplus(e)

    Lower is better; its expectation is minimised at the true (VaR, ES).
    """
    v = np.asarray(v, dtype=float)
    e = np.asarray(e, dtype=float)
    x = np.asarray(x, dtype=float)
    hit = (x <= v).astype(float)
    out = (hit - alpha) * v - hit * x + expit(e) * (e - v + hit * (v - x) / alpha) - softplus(e)
    return out if out.ndim else float(out)


def fz_score_grads(v, e, x, alpha):
    """Partial derivatives of :func:`fz_score` with respect to (v, e, x)."""
    v = np.asarray(v, dtype=float)
    e = np.asarray(e, dtype=float)
    x = np.asarray(x, dtype=float)
    hit = (x <= v).astype(float)
    sig = expit(e)
    dv = (hit - alpha) * (1.0 + sig / alpha)
    de = sig * (1.0 - sig) * (e - v + hit * (v - x) / alpha)
    dx = -hit * (1.0 + sig / alpha)
    return np.broadcast_arrays(dv, de, dx)


def batch_score(v, e, sample, alpha):
    """Mean of :func:`fz_score` over ``sample`` at a fixed (v, e)."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("cannot score an empty sample")
    return float(np.mean(fz_score(v, e, x, alpha)))


def diff(real: RiskReport, gen: RiskReport) -> DiffReport:
    if real.alpha != gen.alpha:
        raise AlphaMismatch(f"alpha {real.alpha} vs {gen.alpha}")
    return DiffReport(real.alpha, abs(real.var - gen.var), abs(real.es - gen.es))
