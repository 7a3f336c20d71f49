"""Feature-sequence generators: historical, GBM, ARMA, decomposition and hybrid.

The ARMA machinery fits by conditional sum of squares (CSS): innovations are
recovered by the recursion

    e[t] = x[t] - c - sum_i phi[i] x[t-i] - sum_j theta[j] e[t-j]

started at ``t = p`` with zero pre-sample innovations, and the Gaussian
log-likelihood is concentrated over the innovation variance.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, signal

from .errors import (
    NonStationaryFit,
    OptimizerFailed,
    PeriodTooSmall,
    TooShort,
)

FEATURE_METHODS = ("None", "Historical", "Gbm", "Arma", "Hybrid")


# ---------------------------------------------------------------------------
# GBM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GbmParams:
    """Per-step drift and volatility of a geometric Brownian motion."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or self.sigma < 0:
            raise ValueError(f"invalid GBM parameters mu={self.mu}, sigma={self.sigma}")

    @property
    def log_mean(self):
        """Mean of one log return, ``mu - sigma**2 / 2``."""
        return self.mu - 0.5 * self.sigma ** 2


def gbm_estimate(context) -> GbmParams:
    """Moment estimates from a log-return context.

    ``sigma`` is the unbiased sample standard deviation and ``mu`` is set so
    that ``mu - sigma**2 / 2`` equals the sample mean.
    """
    x = np.asarray(context, dtype=float)
    if x.size < 2:
        raise TooShort("GBM estimation needs at least 2 log returns")
    m = float(np.mean(x))
    s = float(np.std(x, ddof=1))
    return GbmParams(m + 0.5 * s * s, s)


def gbm_simulate(params: GbmParams, T: int, rng) -> np.ndarray:
    """``T`` i.i.d. log returns drawn from N(mu - sigma^2/2, sigma^2)."""
    if T < 1:
        raise ValueError("T must be positive")
    return params.log_mean + params.sigma * rng.standard_normal(T)


# ---------------------------------------------------------------------------
# ARMA
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class ArmaSpec:
    p: int
    q: int

    def __post_init__(self):
        if not (0 <= self.p <= 3 and 0 <= self.q <= 3) or self.p + self.q < 1:
            raise ValueError(f"unsupported ARMA order ({self.p}, {self.q})")

    @property
    def name(self):
        if self.q == 0:
            return f"AR({self.p})"
        if self.p == 0:
            return f"MA({self.q})"
        return f"ARMA({self.p},{self.q})"

    @classmethod
    def parse(cls, text):
        """Inverse of :attr:`name`; also accepts ``"2,1"``."""
        t = text.strip().upper().replace(" ", "")
        if t.startswith("ARMA(") and t.endswith(")"):
            p, q = t[5:-1].split(",")
            return cls(int(p), int(q))
        if t.startswith("AR(") and t.endswith(")"):
            return cls(int(t[3:-1]), 0)
        if t.startswith("MA(") and t.endswith(")"):
            return cls(0, int(t[3:-1]))
        p, q = t.split(",")
        return cls(int(p), int(q))


# AR 1-3, MA 1-3, ARMA up to (2, 2): the ten rows of the selection tables
DEFAULT_GRID = (
    ArmaSpec(1, 0), ArmaSpec(2, 0), ArmaSpec(3, 0),
    ArmaSpec(0, 1), ArmaSpec(0, 2), ArmaSpec(0, 3),
    ArmaSpec(1, 1), ArmaSpec(1, 2), ArmaSpec(2, 1), ArmaSpec(2, 2),
)


@dataclass(frozen=True)
class ArmaModel:
    spec: ArmaSpec
    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    sigma2: float
    loglik: float
    n: int

    @property
    def mean(self):
        """Stationary process mean ``intercept / (1 - sum(phi))``."""
        return self.intercept / (1.0 - float(np.sum(self.phi)))


def _poly_stable(coefs, sign):
    """True when ``1 + sign * sum_k c_k z^k`` has all roots outside the unit circle.

    Uses the step-down (Schur-Cohn) recursion: the polynomial is stable iff
    every reflection coefficient has modulus below one.
    """
    a = [sign * float(c) for c in coefs]
    while a:
        k = a[-1]
        if not abs(k) < 1.0 - 1e-10:
            return False
        d = 1.0 - k * k
        m = len(a) - 1
        a = [(a[i] - k * a[m - 1 - i]) / d for i in range(m)]
    return True


def is_stationary(phi):
    return _poly_stable(phi, -1.0)


def is_invertible(theta):
    return _poly_stable(theta, +1.0)


def css_residuals(x, phi, theta, intercept):
    """Innovations of the CSS recursion for ``t = p .. n-1``."""
    x = np.asarray(x, dtype=float)
    p, q = len(phi), len(theta)
    n = len(x)
    w = x[p:] - intercept
    for i in range(1, p + 1):
        w = w - phi[i - 1] * x[p - i:n - i]
    if q == 0:
        return w
    return signal.lfilter([1.0], np.r_[1.0, theta], w)


def css_loglik(x, phi, theta, intercept):
    """Concentrated conditional Gaussian log-likelihood and its variance."""
    e = css_residuals(x, phi, theta, intercept)
    m = len(e)
    sigma2 = float(np.dot(e, e) / m)
    if not math.isfinite(sigma2) or sigma2 <= 0:
        return -np.inf, sigma2
    return -0.5 * m * (math.log(2.0 * math.pi * sigma2) + 1.0), sigma2


def _unpack(params, p, q):
    return params[1:1 + p], params[1 + p:1 + p + q], params[0]


def _warm_start(x, p, q):
    """Least-squares AR(p) regression for phi, zero MA terms."""
    mean = float(np.mean(x))
    if p == 0:
        return np.r_[mean, np.zeros(q)]
    n = len(x)
    design = np.column_stack([np.ones(n - p)] + [x[p - i:n - i] for i in range(1, p + 1)])
    beta, *_ = np.linalg.lstsq(design, x[p:], rcond=None)
    phi = beta[1:]
    if not is_stationary(phi):
        phi = np.clip(phi, -0.5, 0.5) / max(p, 1)
        beta[0] = mean * (1 - phi.sum())
    return np.r_[beta[0], phi, np.zeros(q)]


def arma_fit(series, spec: ArmaSpec, rng=None, starts=3) -> ArmaModel:
    """Fit ``spec`` to ``series`` by maximising the CSS log-likelihood.

    Nelder-Mead is run from up to three starts (zeros, AR regression warm
    start, small random perturbation) and the best stationary, invertible
    optimum is kept.
    """
    x = np.asarray(series, dtype=float)
    p, q = spec.p, spec.q
    if len(x) < 10 * (p + q + 1):
        raise TooShort(f"{spec.name} needs at least {10 * (p + q + 1)} points, got {len(x)}")
    if rng is None:
        rng = np.random.default_rng(0)
    scale = float(np.std(x)) or 1.0

    def objective(params):
        phi, theta, c = _unpack(params, p, q)
        if not (is_stationary(phi) and is_invertible(theta)):
            return 1e300
        ll, _ = css_loglik(x, phi, theta, c)
        return -ll if math.isfinite(ll) else 1e300

    warm = _warm_start(x, p, q)
    candidates = [np.r_[float(np.mean(x)), np.zeros(p + q)], warm,
                  warm + 0.1 * rng.standard_normal(p + q + 1) * np.r_[scale, np.ones(p + q)]]
    best = None
    for x0 in candidates[:starts]:
        if objective(x0) >= 1e300:
            continue
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000 * (p + q + 1),
                     "maxfev": 8000 * (p + q + 1)},
        )
        if np.isfinite(res.fun) and res.fun < 1e300 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizerFailed(f"no start produced a finite likelihood for {spec.name}")
    phi, theta, c = _unpack(best.x, p, q)
    if not is_stationary(phi):
        raise NonStationaryFit(f"{spec.name} fit has AR roots inside the unit circle")
    ll, sigma2 = css_loglik(x, phi, theta, c)
    return ArmaModel(spec, np.array(phi), np.array(theta), float(c), sigma2, float(ll), len(x) - p)


def information_criteria(model: ArmaModel):
    """(AIC, BIC) with ``k = p + q + 2`` (intercept and variance counted)."""
    k = model.spec.p + model.spec.q + 2
    aic = 2 * k - 2 * model.loglik
    bic = k * math.log(model.n) - 2 * model.loglik
    return aic, bic


def arma_simulate(phi, theta, n, rng, sigma=1.0, intercept=0.0, burn=500):
    """Simulate an ARMA path of length ``n`` after a burn-in."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    e = sigma * rng.standard_normal(n + burn)
    ar = np.r_[1.0, -phi]
    ma = np.r_[1.0, theta]
    mean = intercept / (1.0 - phi.sum())
    x = signal.lfilter(ma, ar, e) + mean
    return x[burn:]


@dataclass
class SelectionTable:
    """One row per (spec, window) cell; failed fits carry NaN criteria."""

    rows: list = field(default_factory=list)

    def mean_aic(self):
        out = {}
        for spec in dict.fromkeys(r["spec"] for r in self.rows):
            vals = [r["aic"] for r in self.rows if r["spec"] == spec and math.isfinite(r["aic"])]
            out[spec] = float(np.mean(vals)) if vals else math.inf
        return out

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["spec", "window_start", "window_end", "aic", "bic"])
            for r in self.rows:
                w.writerow([r["spec"].name, r["window_start"], r["window_end"],
                            repr(r["aic"]), repr(r["bic"])])


def select_arma(series, grid=DEFAULT_GRID, window_len=500, step=50):
    """Rolling-window AIC/BIC sweep over ``grid``.

    Windows start at 0, ``step``, ... while a full window fits. Every spec
    is fitted on the window minus its first ``max_p - p`` points, so all
    conditional likelihoods cover the same observations and stay comparable.
    The winner has the lowest mean AIC over windows; ties go to the smaller
    ``p + q``. A failed fit is recorded as a NaN cell and does not stop the
    sweep.

    Returns
    -------
    (SelectionTable, ArmaSpec)
    """
    x = np.asarray(getattr(series, "values", series), dtype=float)
    if len(x) < window_len:
        raise TooShort(f"series of length {len(x)} is shorter than window {window_len}")
    grid = list(grid)
    table = SelectionTable()
    max_p = max(s.p for s in grid)
    for start in range(0, len(x) - window_len + 1, step):
        window = x[start:start + window_len]
        for spec in grid:
            try:
                model = arma_fit(window[max_p - spec.p:], spec)
                aic, bic = information_criteria(model)
                loglik = model.loglik
            except (TooShort, NonStationaryFit, OptimizerFailed):
                aic = bic = loglik = math.nan
            table.rows.append({"spec": spec, "window_start": start,
                               "window_end": start + window_len - 1,
                               "aic": aic, "bic": bic, "loglik": loglik})
    means = table.mean_aic()
    winner = min(grid, key=lambda s: (means[s], s.p + s.q))
    return table, winner


def psi_weights(phi, theta, h):
    """First ``h`` MA(infinity) weights, ``psi[0] = 1``."""
    psi = np.zeros(h)
    psi[0] = 1.0
    for j in range(1, h):
        acc = theta[j - 1] if j <= len(theta) else 0.0
        for i in range(1, min(j, len(phi)) + 1):
            acc += phi[i - 1] * psi[j - i]
        psi[j] = acc
    return psi


def arma_forecast(model: ArmaModel, history, T: int):
    """Iterated ``T``-step forecast and 95% interval half-widths.

    Future innovations are set to zero; past ones come from the CSS
    recursion over ``history``. The h-step error variance is
    ``sigma2 * sum(psi[:h]**2)``.
    """
    h = np.asarray(history, dtype=float)
    p, q = model.spec.p, model.spec.q
    if len(h) < max(p, q, 1):
        raise TooShort("history shorter than the model order")
    phi, theta = model.phi, model.theta
    if len(h) > p:
        resid = css_residuals(h, phi, theta, model.intercept)
    else:
        resid = np.zeros(0)
    xs = list(h[-p:]) if p else []
    es = list(resid[-q:]) if q else []
    es = [0.0] * (q - len(es)) + es
    mean = np.empty(T)
    for t in range(T):
        val = model.intercept
        for i in range(1, p + 1):
            val += phi[i - 1] * xs[-i]
        for j in range(1, q + 1):
            val += theta[j - 1] * es[-j]
        mean[t] = val
        if p:
            xs.append(val)
        if q:
            es.append(0.0)
    psi = psi_weights(phi, theta, T)
    var = model.sigma2 * np.cumsum(psi ** 2)
    return mean, 1.96 * np.sqrt(var)


# ---------------------------------------------------------------------------
# decomposition and hybrid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray
    period: int
    interior: slice


def decompose(series, period=20) -> Decomposition:
    """Classical additive decomposition by centred moving average.

    Even periods use the 2 x P filter (half weights at both ends). Where the
    trend is undefined (the first and last ``P // 2`` points) the residual is
    set to 0 and the trend to ``observed - seasonal``.
    """
    x = np.asarray(series, dtype=float)
    P = int(period)
    if P < 2:
        raise PeriodTooSmall(f"period must be at least 2, got {P}")
    n = len(x)
    if n < 2 * P:
        raise TooShort(f"decomposition needs at least {2 * P} points, got {n}")
    if P % 2 == 0:
        filt = np.r_[0.5, np.ones(P - 1), 0.5] / P
    else:
        filt = np.ones(P) / P
    half = P // 2
    inner = slice(half, n - half)
    trend = np.full(n, np.nan)
    trend[inner] = np.convolve(x, filt, mode="valid")

    detrended = x - trend
    phases = np.arange(n) % P
    idx = np.arange(n)[inner]
    means = np.array([detrended[idx[phases[idx] == k]].mean() for k in range(P)])
    means -= means.mean()
    seasonal = means[phases]

    residual = np.zeros(n)
    residual[inner] = x[inner] - trend[inner] - seasonal[inner]
    edge = np.ones(n, dtype=bool)
    edge[inner] = False
    trend[edge] = x[edge] - seasonal[edge]
    return Decomposition(trend, seasonal, residual, P, inner)


def hybrid_generate(model: ArmaModel, history, context_sigma, T, period, rng):
    """ARMA forecast path, decomposed, with its noise replaced by N(0, sigma^2)."""
    mean, _ = arma_forecast(model, history, T)
    dec = decompose(mean, period)
    noise = float(context_sigma) * rng.standard_normal(T)
    return dec.trend + dec.seasonal + noise


# ---------------------------------------------------------------------------
# feature dispatch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureConfig:
    """Knobs shared by the model-based feature methods."""

    T: int = 250
    arma_spec: ArmaSpec = ArmaSpec(2, 1)
    period: int = 20


def generate_feature(method, pair, config: FeatureConfig, rng, model=None):
    """Feature sequence of length ``config.T`` for one context/target pair.

    ``model`` may carry an ARMA fit of ``pair.context`` computed earlier, so
    callers can cache the expensive part.
    """
    T = config.T
    ctx = np.asarray(pair.context, dtype=float)
    if method == "None":
        return np.zeros(0)
    if method == "Historical":
        if len(ctx) < T:
            raise TooShort(f"historical feature needs {T} context points, got {len(ctx)}")
        return ctx[-T:].copy()
    if method == "Gbm":
        return gbm_simulate(gbm_estimate(ctx), T, rng)
    if method in ("Arma", "Hybrid"):
        if model is None:
            model = arma_fit(ctx, config.arma_spec)
        if method == "Arma":
            return arma_forecast(model, ctx, T)[0]
        sigma = gbm_estimate(ctx).sigma
        return hybrid_generate(model, ctx, sigma, T, config.period, rng)
    raise ValueError(f"unknown feature method {method!r}")
