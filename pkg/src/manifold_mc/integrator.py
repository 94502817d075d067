"""Multi-phase estimation of Z = int_M f dsigma over nested balls.

Z is written as the innermost-ball integral times a telescoping product of
ball ratios R_i = Z_i / Z_{i+1}; each ratio comes from one sampler run in
M intersected with B_i, and the innermost integral from direct Monte Carlo on
the tangent disk at the centre.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from . import stats
from .core import (ConstraintManifold, Density, NewtonParams, as_density,
                   kernels_for, tangent_frame)
from .sampler import Outcome, ProposalParams, count_outcomes, iter_chunks, run_chain

logger = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """Numerical failure that invalidates an integral estimate."""


class StageFailure(IntegrationError):
    def __init__(self, stage: int, message: str, diagnostics: Optional[dict] = None):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
        self.diagnostics = diagnostics or {}


class InnermostProjectionFailure(IntegrationError):
    """A tangent-disk point failed to project; the innermost estimate is void."""


class NoValidRadiusError(IntegrationError):
    pass


@dataclass(frozen=True)
class BallSchedule:
    center: np.ndarray
    radii: tuple
    nu: float
    k: int
    d: int


@dataclass
class RatioEstimate:
    R_hat: float
    p_hat: float
    tau_hat: float
    n_i: int
    N_next: int
    r_outer: float = float("nan")
    r_inner: float = float("nan")
    N_further: list = field(default_factory=list)
    outcome_fractions: dict = field(default_factory=dict)
    step_scale: float = float("nan")

    @property
    def variance_term(self) -> float:
        return (1 - self.p_hat) * self.tau_hat / (self.n_i * self.p_hat)

    def to_dict(self, index: Optional[int] = None) -> dict:
        out = {} if index is None else {"stage": index}
        out.update(r_outer=self.r_outer, r_inner=self.r_inner, n_i=self.n_i,
                   N_next=self.N_next, R_hat=self.R_hat, p_hat=self.p_hat,
                   tau_hat=self.tau_hat, N_further=list(self.N_further),
                   step_scale=self.step_scale,
                   acceptance=self.outcome_fractions.get("Accepted", float("nan")),
                   outcome_fractions=dict(self.outcome_fractions))
        return out


@dataclass
class IntegralEstimate:
    Z_hat: float
    sigma_r: float
    Z_k_hat: float
    rho_k: float
    stages: list
    schedule: Optional[BallSchedule] = None
    n_inner: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        sch = None
        if self.schedule is not None:
            sch = {"x0": self.schedule.center.tolist(), "radii": list(self.schedule.radii),
                   "nu": self.schedule.nu, "k": self.schedule.k, "d": self.schedule.d}
        return {"Z_hat": self.Z_hat, "sigma_r": self.sigma_r, "Z_k_hat": self.Z_k_hat,
                "rho_k": self.rho_k, "n_inner": self.n_inner, "schedule": sch,
                "stages": [s.to_dict(i) for i, s in enumerate(self.stages)],
                "wall_time": self.wall_time}


@dataclass
class IntegrationConfig:
    """Knobs of :func:`integrate`.

    ``x0``, ``r0`` and ``rk`` are found from an initial sampling run and a
    radius probe when left as None. Each ratio stage uses the proposal width
    min(step_scale, step_radius_fraction * r_i).
    """

    n_total: int = 100_000
    k: int = 2
    step_scale: float = 0.5
    step_radius_fraction: float = 0.25
    tol: float = 1e-12
    nmax: int = 10
    # the disk projections carry no reversibility bookkeeping, so they may
    # iterate longer (near-tangential rim points converge only linearly)
    disk_nmax: int = 50
    n_initial: int = 20_000
    initial_stride: int = 10
    n_inner: Optional[int] = None
    n_probe: int = 100_000
    angle_tol: float = 1e-3
    probe_start_fraction: float = 0.5
    burn_in_fraction: float = 0.01
    warm_start: bool = True
    x_init: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    r0: Optional[float] = None
    rk: Optional[float] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.n_total < self.k:
            raise ValueError("n_total must allow at least one step per stage")
        if self.x_init is None and self.x0 is None:
            raise ValueError("need a starting point (x_init) or a centre (x0)")

    @property
    def newton(self) -> NewtonParams:
        return NewtonParams(self.tol, self.nmax)

    @property
    def disk_newton(self) -> NewtonParams:
        return NewtonParams(self.tol, max(self.nmax, self.disk_nmax))


def ball_volume(d: int, r: float) -> float:
    """Volume of the d-dimensional Euclidean ball of radius r."""
    return math.exp(d / 2 * math.log(math.pi) + d * math.log(r) - gammaln(d / 2 + 1))


def choose_center(samples, M: ConstraintManifold) -> np.ndarray:
    """Sample farthest from the inequality boundary (max of min_j h_j).

    Without inequalities, the sample whose largest distance to the others is
    smallest.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a non-empty (n, d_a) sample array")
    if M.inequality_count > 0:
        margins = np.array([np.min(M.h(x)) for x in X])
        return X[int(np.argmax(margins))].copy()
    radius = np.zeros(len(X))
    block = max(1, 2_000_000 // (len(X) * X.shape[1]))
    for start in range(0, len(X), block):
        D = X[start:start + block, None, :] - X[None, :, :]
        radius[start:start + block] = np.sqrt(np.einsum("ijk,ijk->ij", D, D).max(axis=1))
    return X[int(np.argmin(radius))].copy()


def outer_radius(samples, x0) -> float:
    X = np.asarray(samples, dtype=np.float64)
    return float(np.sqrt(((X - np.asarray(x0)) ** 2).sum(axis=1).max()))


def make_schedule(x0, r0: float, rk: float, k: int, d: int) -> BallSchedule:
    """Radii r_i = r0 nu^(-i/d) with nu = (r0/rk)^(d/k); ends are exact."""
    if k < 1 or d < 1:
        raise ValueError("need k >= 1 and d >= 1")
    if not r0 > rk > 0:
        raise ValueError(f"need r0 > rk > 0, got r0={r0}, rk={rk}")
    nu = (r0 / rk) ** (d / k)
    radii = [r0] + [r0 * nu ** (-i / d) for i in range(1, k)] + [rk]
    return BallSchedule(np.asarray(x0, dtype=np.float64), tuple(radii), nu, k, d)


def uniform_disk(rng: np.random.Generator, n: int, d: int, r: float) -> np.ndarray:
    """n uniform points in the d-ball of radius r: Gaussian direction, U^(1/d) radius."""
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (r * rng.random(n) ** (1.0 / d))[:, None]


def _disk_values(M, f, x0, r, pts, newton, stop_on_failure):
    frame = tangent_frame(M, x0)
    kern = kernels_for(M, f)
    out = np.empty(len(pts))
    nfail = kern.disk_project(M.q_fn, M.grad_fn, M.h_fn, f.fn, M.params, f.params,
                              np.ascontiguousarray(x0, dtype=np.float64),
                              np.ascontiguousarray(frame.U_tan),
                              np.ascontiguousarray(frame.U_norm),
                              np.ascontiguousarray(pts), float(r) ** 2,
                              float(newton.tol), int(newton.nmax),
                              bool(stop_on_failure), out)
    return out, int(nfail), frame


def estimate_innermost(M: ConstraintManifold, f, x0, r_k: float, n_k: int,
                       rng: np.random.Generator, newton: NewtonParams = NewtonParams()):
    """Direct Monte Carlo for Z_k over the tangent disk D_k at x0.

    Returns ``(Z_k_hat, rho_k)``. Any projection failure raises
    :class:`InnermostProjectionFailure`.
    """
    f = as_density(f)
    d = M.intrinsic_dim
    pts = uniform_disk(rng, n_k, d, r_k)
    G, nfail, _ = _disk_values(M, f, x0, r_k, pts, newton, stop_on_failure=True)
    if nfail:
        raise InnermostProjectionFailure(
            f"projection from the tangent disk failed (r_k={r_k})")
    vol = ball_volume(d, r_k)
    mean = G.mean()
    Z_k = vol * mean
    if mean == 0:
        raise IntegrationError("no tangent-disk point landed in M intersected with B_k")
    sigma_k = vol * math.sqrt(((G - mean) ** 2).sum()) / n_k
    return float(Z_k), float(sigma_k / Z_k)


def _ball_samples(M, params, x0, r, n, rng, x_start=None):
    start = x0 if x_start is None else x_start
    res = run_chain(M, params, start, n, stride=1, rng=rng,
                    ball_center=x0, ball_radius=r)
    return res.samples


def _near_vertical_chord(X, x0, U_norm, angle_tol, r):
    """True if some chord between samples is almost parallel to T_x0^perp."""
    n = len(X)
    if n < 2:
        return False
    P = U_norm @ U_norm.T
    block = max(1, 4_000_000 // (n * X.shape[1]))
    for start in range(0, n, block):
        V = X[start:start + block, None, :] - X[None, :, :]
        normal = V @ P
        tangential = np.linalg.norm(V - normal, axis=2)
        length = np.linalg.norm(V, axis=2)
        # identical points (rejected steps) carry no direction
        hit = (length > 1e-9 * r) & (tangential < angle_tol * length)
        if hit.any():
            return True
    return False


def probe_min_radius(M: ConstraintManifold, x0, r_start: float, n_probe: int,
                     angle_tol: float, rng: np.random.Generator, *,
                     params: Optional[ProposalParams] = None, n_pair_points: int = 500,
                     pair_chain_steps: int = 20_000,
                     disk_newton: Optional[NewtonParams] = None) -> float:
    """Largest r in r_start, r_start/2, ... passing both probe tests.

    (b) all ``n_probe`` uniform tangent-disk points project onto M; then
    (a) no chord between ``n_pair_points`` sampled points of M inside the ball
    makes a relative angle below ``angle_tol`` with T_x0^perp, i.e. the patch
    is single-valued over the tangent plane.
    """
    if not r_start > 0:
        raise ValueError("r_start must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    d = M.intrinsic_dim
    params = params or ProposalParams(r_start / 2)
    disk_newton = disk_newton or params.newton
    f = as_density(None)
    r = float(r_start)
    while r >= 1e-8 * r_start:
        pts = uniform_disk(rng, n_probe, d, r)
        _, nfail, frame = _disk_values(M, f, x0, r, pts, disk_newton,
                                       stop_on_failure=True)
        if nfail == 0:
            chain_params = ProposalParams(min(params.step_scale, 0.5 * r),
                                          params.density, params.newton)
            stride = max(1, pair_chain_steps // n_pair_points)
            res = run_chain(M, chain_params, x0, stride * n_pair_points, stride, rng,
                            ball_center=x0, ball_radius=r)
            if not _near_vertical_chord(res.samples, x0, frame.U_norm, angle_tol, r):
                return r
            logger.debug("probe: near-vertical chord at r=%g", r)
        else:
            logger.debug("probe: projection failure at r=%g", r)
        r /= 2
    raise NoValidRadiusError(f"no valid innermost radius above {1e-8 * r_start:g}")


def estimate_ratio(M: ConstraintManifold, f, x0, r_outer: float, r_inner: float,
                   n_i: int, params: ProposalParams, rng: np.random.Generator, *,
                   x_start=None, burn_in: int = 0, inner_radii=()):
    """Ratio Z(B_outer) / Z(B_inner) from one chain in M intersected with B_outer.

    Returns ``(RatioEstimate, warm_point)`` where ``warm_point`` is the last
    state that fell inside B_inner (a valid start for the next stage).
    """
    if not r_outer >= r_inner > 0:
        raise ValueError("need r_outer >= r_inner > 0")
    params = ProposalParams(params.step_scale, as_density(f), params.newton,
                            params.reverse_check)
    x0 = np.asarray(x0, dtype=np.float64)
    start = x0 if x_start is None else np.asarray(x_start, dtype=np.float64)
    ri2 = r_inner ** 2
    further = [rr ** 2 for rr in inner_radii]
    indicator = np.empty(n_i, dtype=np.float64)
    n_further = np.zeros(len(further), dtype=np.int64)
    counts = {o.name: 0 for o in Outcome}
    warm = None
    seen = 0
    for ch in iter_chunks(M, params, start, burn_in + n_i, rng,
                          ball_center=x0, ball_radius=r_outer):
        dist2 = ((ch.x - x0) ** 2).sum(axis=1)
        lo = max(0, burn_in - seen)
        seen_before = seen
        seen += len(dist2)
        if lo >= len(dist2):
            continue
        d2 = dist2[lo:]
        a = seen_before + lo - burn_in
        indicator[a:a + len(d2)] = d2 < ri2
        for j, f2 in enumerate(further):
            n_further[j] += int(np.sum(d2 < f2))
        for k, v in count_outcomes(ch.codes[lo:]).items():
            counts[k] += v
        inside = np.nonzero(d2 < ri2)[0]
        if len(inside):
            warm = ch.x[lo + inside[-1]].copy()
    N_next = int(indicator.sum())
    fractions = {k: v / n_i for k, v in counts.items()}
    if N_next == 0:
        raise StageFailure(-1, "no samples fell in the inner ball",
                           {"r_outer": r_outer, "r_inner": r_inner, "n_i": n_i})
    p_hat = N_next / n_i
    if N_next == n_i:
        tau = 1.0
    else:
        tau = stats.integrated_act(indicator, static_c0=p_hat * (1 - p_hat)).tau
    est = RatioEstimate(R_hat=n_i / N_next, p_hat=p_hat, tau_hat=tau, n_i=n_i,
                        N_next=N_next, r_outer=float(r_outer), r_inner=float(r_inner),
                        N_further=n_further.tolist(), outcome_fractions=fractions,
                        step_scale=params.step_scale)
    return est, warm


def integrate(M: ConstraintManifold, f, config: IntegrationConfig,
              rng: np.random.Generator) -> IntegralEstimate:
    """Estimate Z = int_M f dsigma with single-run relative error sigma_r."""
    t_start = time.perf_counter()
    f = as_density(f)
    d = M.intrinsic_dim
    if d < 1:
        raise ValueError("manifold must have positive dimension")
    newton = config.newton
    base = ProposalParams(config.step_scale, f, newton)

    samples = None
    if config.x0 is None or config.r0 is None:
        start = config.x_init if config.x_init is not None else config.x0
        res = run_chain(M, base, start, config.n_initial, config.initial_stride, rng)
        samples = res.samples
        if len(samples) == 0:
            raise IntegrationError("initial sampling run produced no samples")
    x0 = (np.asarray(config.x0, dtype=np.float64) if config.x0 is not None
          else choose_center(samples, M))
    r0 = float(config.r0) if config.r0 is not None else outer_radius(samples, x0)
    if not r0 > 0:
        raise IntegrationError("outer radius is zero; the initial run did not move")
    if config.rk is not None:
        rk = float(config.rk)
    else:
        rk = probe_min_radius(M, x0, config.probe_start_fraction * r0, config.n_probe,
                              config.angle_tol, rng,
                              params=ProposalParams(config.step_scale, None, newton),
                              disk_newton=config.disk_newton)
    schedule = make_schedule(x0, r0, rk, config.k, d)
    logger.info("schedule: r0=%g rk=%g k=%d nu=%g", r0, rk, config.k, schedule.nu)

    n_stage = config.n_total // config.k
    burn = int(round(config.burn_in_fraction * n_stage))
    stages = []
    warm = x0
    for i in range(config.k):
        r_out, r_in = schedule.radii[i], schedule.radii[i + 1]
        s_i = min(config.step_scale, config.step_radius_fraction * r_out)
        params = ProposalParams(s_i, f, newton)
        try:
            est, last_inside = estimate_ratio(
                M, f, x0, r_out, r_in, n_stage, params, rng,
                x_start=warm if config.warm_start else x0, burn_in=burn,
                inner_radii=schedule.radii[i + 2:])
        except StageFailure as exc:
            raise StageFailure(i, "no samples fell in the inner ball",
                               exc.diagnostics) from None
        stages.append(est)
        warm = last_inside if last_inside is not None else x0

    n_inner = config.n_inner or n_stage
    Z_k, rho_k = estimate_innermost(M, f, x0, rk, n_inner, rng, config.disk_newton)
    Z_hat = Z_k
    for s in stages:
        Z_hat *= s.R_hat
    sigma_r = stats.combine_error(rho_k, [(s.p_hat, s.tau_hat, s.n_i) for s in stages])
    return IntegralEstimate(Z_hat=Z_hat, sigma_r=sigma_r, Z_k_hat=Z_k, rho_k=rho_k,
                            stages=stages, schedule=schedule, n_inner=n_inner,
                            wall_time=time.perf_counter() - t_start)
