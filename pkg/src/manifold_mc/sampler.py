"""Reversible tangent-step / normal-projection Metropolis sampler."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.special import ndtr

from . import _kernels
from .core import (ConstraintManifold, Density, NewtonParams, TangentFrame,
                   as_density, kernels_for, tangent_frame)


class Outcome(enum.IntEnum):
    Accepted = _kernels.ACCEPTED
    ProjectionFailure = _kernels.PROJECTION_FAILURE
    InequalityFailure = _kernels.INEQUALITY_FAILURE
    MetropolisReject = _kernels.METROPOLIS_REJECT
    ReverseFailure = _kernels.REVERSE_FAILURE


@dataclass(frozen=True)
class ProposalParams:
    """Step scale, target density and Newton settings for one chain.

    ``reverse_check=False`` skips the reverse projection; it exists only to
    demonstrate that the chain is then biased.
    """

    step_scale: float
    density: Density = field(default_factory=lambda: as_density(None))
    newton: NewtonParams = NewtonParams()
    reverse_check: bool = True

    def __post_init__(self):
        if not self.step_scale > 0:
            raise ValueError("step_scale must be positive")
        object.__setattr__(self, "density", as_density(self.density))

    @property
    def reverse_match_tol(self) -> float:
        return max(1e-8, 100 * self.newton.tol)


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    fx: float
    frame: TangentFrame


@dataclass(frozen=True)
class StepDiagnostics:
    outcome: Outcome
    newton_iterations_forward: int
    newton_iterations_reverse: int


@dataclass
class ChainResult:
    samples: np.ndarray
    steps: np.ndarray
    counts: dict
    n_steps: int
    final_x: np.ndarray

    @property
    def acceptance(self) -> float:
        return self.counts["Accepted"] / self.n_steps if self.n_steps else 0.0

    def fractions(self) -> dict:
        n = max(self.n_steps, 1)
        return {k: v / n for k, v in self.counts.items()}


@dataclass
class Chunk:
    """Per-step output of a block of consecutive chain steps."""

    x: np.ndarray
    codes: np.ndarray
    forward_iterations: np.ndarray
    reverse_iterations: np.ndarray


def sample_tangent(frame: TangentFrame, s: float, rng: np.random.Generator):
    """Draw v = s U_tan xi with xi standard normal; return v and log p(v)."""
    if not s > 0:
        raise ValueError("s must be positive")
    xi = rng.standard_normal(frame.d)
    v = s * (frame.U_tan @ xi)
    return v, log_tangent_density(v, s, frame.d)


def log_tangent_density(v, s: float, d: int) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(-(v @ v) / (2 * s * s) - d * np.log(s * np.sqrt(2 * np.pi)))


def tangent_density(v, s: float, d: int) -> float:
    """Isotropic d-dimensional Gaussian density of width s at tangent vector v."""
    return float(np.exp(log_tangent_density(v, s, d)))


def initial_state(M: ConstraintManifold, x, params: ProposalParams) -> ChainState:
    x = np.array(x, dtype=np.float64)
    if x.shape != (M.ambient_dim,):
        raise ValueError(f"expected a point of length {M.ambient_dim}")
    if M.residual(x) > params.newton.tol:
        raise ValueError(f"starting point is off the manifold (|q| = {M.residual(x):.3g})")
    if not np.all(M.h(x) > 0):
        raise ValueError("starting point violates an inequality constraint")
    fx = params.density(x)
    if not fx > 0:
        raise ValueError("density must be positive at the starting point")
    return ChainState(x=x, fx=fx, frame=tangent_frame(M, x))


def _draws(rng: np.random.Generator, n: int, da: int):
    # one normal block per step keeps the stream independent of chunking
    g = rng.standard_normal((n, da + 1))
    return np.ascontiguousarray(g[:, :da]), ndtr(g[:, da])


def _chunk_len(da: int) -> int:
    return int(max(256, min(20000, 2_000_000 // max(da, 1))))


def iter_chunks(M: ConstraintManifold, params: ProposalParams, x_init, n_steps: int,
                rng: np.random.Generator, *, ball_center=None, ball_radius=np.inf,
                chunk_size: Optional[int] = None) -> Iterator[Chunk]:
    """Run ``n_steps`` steps, yielding per-step states in blocks.

    With ``ball_radius`` finite the extra inequality |x - ball_center| < radius
    is enforced on top of those of M.
    """
    state = initial_state(M, x_init, params)
    f = params.density
    kern = kernels_for(M, f)
    da = M.ambient_dim
    center = (np.zeros(da) if ball_center is None
              else np.ascontiguousarray(ball_center, dtype=np.float64))
    r2 = float(ball_radius) ** 2 if np.isfinite(ball_radius) else np.inf
    if r2 < np.inf and not np.sum((state.x - center) ** 2) < r2:
        raise ValueError("starting point lies outside the ball")
    chunk = chunk_size or _chunk_len(da)
    x, fx = state.x, state.fx
    done = 0
    while done < n_steps:
        c = min(chunk, n_steps - done)
        xi, u = _draws(rng, c, da)
        out_x = np.empty((c, da))
        codes = np.empty(c, dtype=np.int8)
        fit = np.empty(c, dtype=np.int32)
        rit = np.empty(c, dtype=np.int32)
        x, fx = kern.chain_chunk(
            M.q_fn, M.grad_fn, M.h_fn, f.fn, M.params, f.params, x, fx, xi, u,
            float(params.step_scale), float(params.newton.tol), int(params.newton.nmax),
            float(params.reverse_match_tol), bool(params.reverse_check), center, r2,
            out_x, codes, fit, rit)
        done += c
        yield Chunk(out_x, codes, fit, rit)


def count_outcomes(codes) -> dict:
    counts = np.bincount(np.asarray(codes, dtype=np.int64), minlength=len(Outcome))
    return {o.name: int(counts[o.value]) for o in Outcome}


def run_chain(M: ConstraintManifold, params: ProposalParams, x_init, n_steps: int,
              stride: int = 1, rng: Optional[np.random.Generator] = None,
              **ball) -> ChainResult:
    """Run the sampler and keep every ``stride``-th state.

    Returned ``steps`` are 1-based step indices of the kept states.
    """
    if n_steps < 0 or stride < 1:
        raise ValueError("n_steps must be >= 0 and stride >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    kept, steps = [], []
    totals = {o.name: 0 for o in Outcome}
    last = np.array(x_init, dtype=np.float64)
    offset = 0
    for ch in iter_chunks(M, params, x_init, n_steps, rng, **ball):
        c = len(ch.codes)
        idx = np.arange(offset + 1, offset + c + 1)
        sel = idx % stride == 0
        kept.append(ch.x[sel])
        steps.append(idx[sel])
        for k, v in count_outcomes(ch.codes).items():
            totals[k] += v
        last = ch.x[-1]
        offset += c
    if kept:
        samples = np.concatenate(kept)
        step_idx = np.concatenate(steps)
    else:
        samples = np.empty((0, M.ambient_dim))
        step_idx = np.empty(0, dtype=np.int64)
    return ChainResult(samples, step_idx, totals, n_steps, np.array(last))


def mcmc_step(state: ChainState, M: ConstraintManifold, params: ProposalParams,
              rng: np.random.Generator):
    """One step; returns the next state (the same object on rejection)."""
    f = params.density
    kern = kernels_for(M, f)
    da = M.ambient_dim
    xi, u = _draws(rng, 1, da)
    out_x = np.empty((1, da))
    codes = np.empty(1, dtype=np.int8)
    fit = np.empty(1, dtype=np.int32)
    rit = np.empty(1, dtype=np.int32)
    x, fx = kern.chain_chunk(
        M.q_fn, M.grad_fn, M.h_fn, f.fn, M.params, f.params, state.x, state.fx, xi, u,
        float(params.step_scale), float(params.newton.tol), int(params.newton.nmax),
        float(params.reverse_match_tol), bool(params.reverse_check),
        np.zeros(da), np.inf, out_x, codes, fit, rit)
    outcome = Outcome(int(codes[0]))
    diag = StepDiagnostics(outcome, int(fit[0]), int(rit[0]))
    if outcome is not Outcome.Accepted:
        return state, diag
    x = np.array(x)
    return ChainState(x=x, fx=float(fx), frame=tangent_frame(M, x)), diag
