"""Autocorrelation, effective sample size and posterior summaries."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "AcfCurve",
    "EssReport",
    "IntervalReport",
    "acf",
    "ess",
    "ess_from_acf",
    "mcse",
    "credible_intervals",
    "summarize",
    "write_acf_csv",
    "write_summary_csv",
    "write_mask_csv",
]


def _samples(trace_or_array, discard=0.0):
    x = getattr(trace_or_array, "samples", trace_or_array)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if discard:
        if not 0 <= discard < 1:
            raise ValueError("discard fraction must lie in [0, 1)")
        x = x[int(math.floor(discard * x.shape[0])):]
    return x


@dataclass
class AcfCurve:
    lags: np.ndarray
    values: np.ndarray  # (max_lag + 1, d)
    degenerate: np.ndarray  # (d,) bool, zero-variance components

    def component(self, i):
        return self.values[:, i]


def _autocovariance(x):
    """Biased (1/N) autocovariance of every column, all lags, via FFT."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(xc, n=size, axis=0)
    return np.fft.irfft(spec * np.conj(spec), n=size, axis=0)[:n] / n


def acf(trace, max_lag=None, discard=0.0):
    """Sample autocorrelation ``gamma(l) / gamma(0)`` per component.

    Zero-variance components are flagged in ``degenerate`` and given the
    curve ``1, 0, 0, ...``.
    """
    x = _samples(trace, discard)
    n = x.shape[0]
    if max_lag is None:
        max_lag = min(n - 1, 1000)
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must be below the chain length ({n})")
    gamma = _autocovariance(x)[: max_lag + 1]
    var = gamma[0]
    scale = np.abs(x).max(axis=0) if n else np.zeros(x.shape[1])
    degenerate = var <= (np.finfo(float).eps * np.maximum(scale, 1e-300)) ** 2 * n
    rho = np.zeros_like(gamma)
    ok = ~degenerate
    rho[:, ok] = gamma[:, ok] / var[ok]
    rho[0] = 1.0
    return AcfCurve(lags=np.arange(max_lag + 1), values=rho, degenerate=degenerate)


def ess_from_acf(rho):
    """Integrated autocorrelation time from one ACF by initial positive sequence.

    Pairs ``rho(2k) + rho(2k+1)`` are summed while positive and
    ``tau = -1 + 2 * sum``. Lags beyond the first non-positive pair are never
    read.
    """
    rho = np.asarray(rho, dtype=float)
    total = 0.0
    for k in range(len(rho) // 2):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        total += pair
    return -1.0 + 2.0 * total


@dataclass
class EssReport:
    ess: np.ndarray
    iact: np.ndarray
    ess_per_second: np.ndarray
    n: int
    wall_time: float
    degenerate: np.ndarray

    @property
    def min(self):
        return float(np.min(self.ess_per_second))

    @property
    def median(self):
        return float(np.median(self.ess_per_second))

    @property
    def max(self):
        return float(np.max(self.ess_per_second))


def ess(trace, wall_time=None, discard=0.0):
    """Effective sample size ``N / tau`` for every component.

    ``tau`` comes from :func:`ess_from_acf`. Antithetic chains can give
    ``ESS > N``; that is reported as is. Components that never moved get
    ``ESS = 1``. ``ess_per_second`` divides by the trace's wall time (or
    ``wall_time``).
    """
    x = _samples(trace, discard)
    n = x.shape[0]
    if n < 100:
        raise ValueError(f"ESS needs at least 100 samples, got {n}")
    if wall_time is None:
        wall_time = getattr(trace, "wall_time", None)
    curve = acf(x, max_lag=n - 1)
    d = x.shape[1]
    tau = np.empty(d)
    for i in range(d):
        tau[i] = 1.0 if curve.degenerate[i] else ess_from_acf(curve.values[:, i])
    # a non-positive tau only arises for exactly periodic sequences
    tau = np.where(tau > 0, tau, 1.0 / n)
    values = n / tau
    values[curve.degenerate] = 1.0
    if wall_time is None or wall_time <= 0:
        per_sec = np.full(d, np.nan)
    else:
        per_sec = values / wall_time
    return EssReport(ess=values, iact=tau, ess_per_second=per_sec, n=n,
                     wall_time=float(wall_time) if wall_time else math.nan,
                     degenerate=curve.degenerate)


def mcse(trace, discard=0.0):
    """Monte Carlo standard error of the posterior mean, ``sd / sqrt(ESS)``."""
    x = _samples(trace, discard)
    rep = ess(x, wall_time=1.0)
    return x.std(axis=0) / np.sqrt(rep.ess)


@dataclass
class IntervalReport:
    lower: np.ndarray
    upper: np.ndarray
    level: float
    widest: np.ndarray  # indices of the widest 5%, widest first

    @property
    def width(self):
        return self.upper - self.lower

    def mask(self, shape=None):
        m = np.zeros(self.lower.size, dtype=int)
        m[self.widest] = 1
        return m if shape is None else m.reshape(shape)


def credible_intervals(trace, level=0.95, widest_fraction=0.05, discard=0.0):
    """Equal-tailed per-component intervals from empirical quantiles."""
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    x = _samples(trace, discard)
    if x.shape[0] < 100:
        raise ValueError("credible intervals need at least 100 samples")
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(x, [tail, 1.0 - tail], axis=0)
    width = hi - lo
    k = int(math.ceil(widest_fraction * width.size))
    order = np.argsort(-width, kind="stable")
    return IntervalReport(lower=lo, upper=hi, level=level, widest=order[:k])


def summarize(results):
    """ESS-per-second table across methods and replications.

    ``results`` maps a method name to a list of :class:`EssReport` (or
    traces, which are converted). Per-component ESS/sec is averaged over
    replications first; min, median and max are then taken over components.
    Returns a list of ``(method, min, median, max)`` rows in input order.
    """
    rows = []
    for method, reps in results.items():
        reps = list(reps)
        if not reps:
            raise ValueError(f"method {method!r} has no replications")
        reports = [r if isinstance(r, EssReport) else ess(r) for r in reps]
        dims = {r.ess_per_second.size for r in reports}
        if len(dims) != 1:
            raise ValueError(f"method {method!r}: replications differ in dimension {sorted(dims)}")
        avg = np.mean([r.ess_per_second for r in reports], axis=0)
        rows.append((method, float(np.min(avg)), float(np.median(avg)), float(np.max(avg))))
    return rows


def write_summary_csv(path, rows):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "min", "median", "max"])
        for method, lo, med, hi in rows:
            w.writerow([method, repr(lo), repr(med), repr(hi)])


def write_acf_csv(path, curve, components=None):
    comps = range(curve.values.shape[1]) if components is None else components
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "component", "value"])
        for j in comps:
            for lag in curve.lags:
                w.writerow([int(lag), int(j), repr(float(curve.values[lag, j]))])


def write_mask_csv(path, mask):
    mask = np.atleast_2d(np.asarray(mask, dtype=int))
    np.savetxt(Path(path), mask, fmt="%d", delimiter=",")
