"""Autocovariances, integrated autocorrelation times and combined error bars."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

WINDOW_CONSTANT = 5.0
MIN_SERIES_LENGTH = 100


class DegenerateSeriesError(ValueError):
    """The series has zero variance, so no correlation time exists."""


@dataclass(frozen=True)
class ACTEstimate:
    tau: float
    window: int
    c0: float
    c0_source: str  # "static" or "sample"


def autocovariance(series, t: int) -> float:
    """C_t = 1/(n-t) sum_j (F_j - Fbar)(F_{j+t} - Fbar); C_{-t} = C_t."""
    F = np.asarray(series, dtype=np.float64)
    n = len(F)
    t = abs(int(t))
    if t >= n:
        raise ValueError(f"lag {t} out of range for a series of length {n}")
    dF = F - F.mean()
    return float(np.dot(dF[: n - t], dF[t:]) / (n - t))


def autocovariances(series, max_lag: int) -> np.ndarray:
    """C_0 .. C_max_lag by FFT, same normalization as :func:`autocovariance`."""
    F = np.asarray(series, dtype=np.float64)
    n = len(F)
    max_lag = min(int(max_lag), n - 1)
    dF = F - F.mean()
    size = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(dF, size)
    acf = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    return acf / (n - np.arange(max_lag + 1))


def integrated_act(series, static_c0: Optional[float] = None,
                   c: float = WINDOW_CONSTANT) -> ACTEstimate:
    """Integrated autocorrelation time with a self-consistent window.

    tau(W) = 1 + (2 / c0) sum_{t=1..W} C_t, with W the smallest window such
    that W >= c tau(W). ``static_c0`` replaces C_0 in the denominator (for an
    indicator series, p(1-p)). W is capped at n/10 and tau clipped at 1.
    """
    F = np.asarray(series, dtype=np.float64)
    n = len(F)
    if n < MIN_SERIES_LENGTH:
        raise ValueError(f"need at least {MIN_SERIES_LENGTH} points, got {n}")
    w_max = max(1, n // 10)
    C = autocovariances(F, w_max)
    if static_c0 is None:
        c0, source = C[0], "sample"
    else:
        c0, source = float(static_c0), "static"
    if not c0 > 0 or C[0] <= 1e-300:
        raise DegenerateSeriesError("series has zero variance")
    taus = 1.0 + 2.0 * np.cumsum(C[1:]) / c0
    windows = np.arange(1, w_max + 1)
    ok = np.nonzero(windows >= c * taus)[0]
    W = int(windows[ok[0]]) if len(ok) else w_max
    tau = max(float(taus[W - 1]), 1.0)
    return ACTEstimate(tau=tau, window=W, c0=float(c0), c0_source=source)


def combine_error(rho_k: float, stages: Iterable) -> float:
    """sigma_r = sqrt(rho_k^2 + sum (1 - p_i) tau_i / (n_i p_i)).

    ``stages`` holds ``(p_i, tau_i, n_i)`` triples.
    """
    total = rho_k ** 2
    for p, tau, n in stages:
        if not 0 < p <= 1:
            raise ValueError(f"stage probability {p} outside (0, 1]")
        if n < 1:
            raise ValueError("stage length must be positive")
        total += (1 - p) * tau / (n * p)
    return math.sqrt(total)


def standard_error(series, static_c0: Optional[float] = None) -> float:
    """tau-corrected standard error of the mean of a correlated series."""
    F = np.asarray(series, dtype=np.float64)
    est = integrated_act(F, static_c0)
    var = est.c0 if static_c0 is not None else np.var(F)
    return math.sqrt(var * est.tau / len(F))
