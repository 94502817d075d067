"""Toy models for the relative variance of the ratio product as a function of nu.

All three drop the overall constant; only shapes and minimizers matter.
Expressions are evaluated through t = log(nu) with expm1 so they stay
accurate as nu -> 1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize


class NuModelKind(enum.Enum):
    ConstantTau = "constant"
    Diffusive = "diffusive"
    BrownianBalls = "brownian"


def _check(nu, d=1):
    if not nu > 1 or not math.isfinite(nu):
        raise ValueError(f"nu must be a finite number > 1, got {nu}")
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    return math.log1p(nu - 1.0)


def g_const(nu: float) -> float:
    """(nu - 1) / log(nu)^2: every stage has the same correlation time."""
    t = _check(nu)
    return math.expm1(t) / (t * t)


def g_diffusive(nu: float, d: int) -> float:
    """(nu - 1) / (log(nu) (1 - nu^(-2/d))): tau_i proportional to r_i^2."""
    t = _check(nu, d)
    return math.expm1(t) / (t * -math.expm1(-2.0 * t / d))


def h_brownian(nu: float, d: int) -> float:
    """Correlation time (over R_0^2) of the inner-ball indicator for Brownian
    motion reflected in the outer ball."""
    t = _check(nu, d)
    if d == 1:
        return 4.0 / 3.0 * math.expm1(t) * math.exp(-2.0 * t)
    if d == 2:
        # nu^-1 - 1 + log nu
        return (math.expm1(-t) + t) / math.expm1(t)
    a = 2.0 / d - 1.0
    num = (d - 2) * math.expm1(-t) - d * math.expm1(a * t)
    den = math.exp(2.0 * t / d) * -math.expm1(-t)
    return 4.0 / (d * d - 4) * num / den


def l_brownian(nu: float, d: int) -> float:
    """(nu - 1) h_d(nu) / (log(nu) (1 - nu^(-2/d)))."""
    t = _check(nu, d)
    return math.expm1(t) * h_brownian(nu, d) / (t * -math.expm1(-2.0 * t / d))


def minimize_scalar(fn: Callable[[float], float], lo: float, hi: float,
                    xatol: float = 1e-6) -> float:
    """argmin of a unimodal fn on [lo, hi] (bounded Brent search)."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    res = optimize.minimize_scalar(fn, bounds=(lo, hi), method="bounded",
                                   options={"xatol": xatol})
    return float(res.x)


@dataclass(frozen=True)
class NuModel:
    kind: NuModelKind
    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")

    def __call__(self, nu: float) -> float:
        if self.kind is NuModelKind.ConstantTau:
            return g_const(nu)
        if self.kind is NuModelKind.Diffusive:
            return g_diffusive(nu, self.d)
        return l_brownian(nu, self.d)

    def argmin(self, lo: float = 1.01, hi: float = 50.0) -> float:
        return minimize_scalar(self, lo, hi)


def nu_table(d: int, nus) -> np.ndarray:
    """Rows (nu, g_const, g_d, l_d) over a grid of nu values."""
    rows = [(nu, g_const(nu), g_diffusive(nu, d), l_brownian(nu, d)) for nu in nus]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)
