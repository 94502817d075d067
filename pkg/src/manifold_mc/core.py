"""Constraint manifolds, tangent frames and the normal-direction Newton projector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from . import _kernels

# smallest singular value of Q_x relative to the largest before a frame is refused
RANK_THRESHOLD = 1e-10


class DegenerateConstraintError(ValueError):
    """The constraint gradients at a point are (numerically) linearly dependent."""


@numba.njit
def _no_inequalities(x, p):
    return np.empty(0)


@numba.njit
def _unit_density(x, p):
    return 1.0


_EMPTY = np.empty(0)


@dataclass(frozen=True, eq=False)
class ConstraintManifold:
    """The set {q(x) = 0, h(x) > 0} in R^ambient_dim.

    The callbacks take ``(x, params)``; when all of them are numba-jitted the
    sampler and integrator run compiled loops, otherwise plain Python ones.
    Use :meth:`from_callables` to wrap functions of ``x`` alone.
    """

    ambient_dim: int
    equality_count: int
    q_fn: Callable
    grad_fn: Callable
    h_fn: Callable = _no_inequalities
    inequality_count: int = 0
    params: np.ndarray = field(default_factory=lambda: _EMPTY)
    name: str = "manifold"

    def __post_init__(self):
        if self.ambient_dim < 1 or self.equality_count < 0 or self.inequality_count < 0:
            raise ValueError("dimensions must be non-negative (ambient_dim >= 1)")
        if self.equality_count > self.ambient_dim:
            raise ValueError("more equality constraints than ambient dimensions")
        object.__setattr__(self, "params",
                           np.ascontiguousarray(self.params, dtype=np.float64))

    @classmethod
    def from_callables(cls, ambient_dim, q, grad_q, h=None, *, equality_count=None,
                       inequality_count=None, name="manifold"):
        """Build a manifold from plain functions ``q(x)``, ``grad_q(x)``, ``h(x)``."""
        x_probe = np.zeros(ambient_dim)
        if equality_count is None:
            equality_count = len(np.atleast_1d(q(x_probe)))
        if h is None:
            h_fn, inequality_count = _no_ineq_py, 0
        else:
            h_fn = lambda x, p: np.atleast_1d(np.asarray(h(x), dtype=np.float64))  # noqa: E731
            if inequality_count is None:
                inequality_count = len(h_fn(x_probe, None))
        return cls(
            ambient_dim=ambient_dim,
            equality_count=equality_count,
            q_fn=lambda x, p: np.atleast_1d(np.asarray(q(x), dtype=np.float64)),
            grad_fn=lambda x, p: np.asarray(grad_q(x), dtype=np.float64).reshape(
                ambient_dim, equality_count),
            h_fn=h_fn,
            inequality_count=inequality_count,
            name=name,
        )

    @property
    def intrinsic_dim(self) -> int:
        return self.ambient_dim - self.equality_count

    @property
    def jitted(self) -> bool:
        return _kernels.is_jitted(self.q_fn, self.grad_fn, self.h_fn)

    def q(self, x):
        return self.q_fn(np.asarray(x, dtype=np.float64), self.params)

    def grad_q(self, x):
        return self.grad_fn(np.asarray(x, dtype=np.float64), self.params)

    def h(self, x):
        return self.h_fn(np.asarray(x, dtype=np.float64), self.params)

    def residual(self, x) -> float:
        return float(np.linalg.norm(self.q(x)))

    def contains(self, x, tol: float = 1e-12) -> bool:
        """True when |q(x)| <= tol and every h_j(x) > 0."""
        return self.residual(x) <= tol and bool(np.all(self.h(x) > 0))


def _no_ineq_py(x, p):
    return np.empty(0)


@dataclass(frozen=True, eq=False)
class Density:
    """Un-normalized positive density ``fn(x, params)`` on a manifold."""

    fn: Callable
    params: np.ndarray = field(default_factory=lambda: _EMPTY)

    def __post_init__(self):
        object.__setattr__(self, "params",
                           np.ascontiguousarray(self.params, dtype=np.float64))

    def __call__(self, x) -> float:
        return float(self.fn(np.asarray(x, dtype=np.float64), self.params))


UNIFORM = Density(_unit_density)


def as_density(f) -> Density:
    """Coerce None (uniform), a Density, or a plain callable ``f(x)``."""
    if f is None:
        return UNIFORM
    if isinstance(f, Density):
        return f
    if callable(f):
        return Density(lambda x, p: f(x))
    raise TypeError(f"cannot interpret {f!r} as a density")


def kernels_for(M: ConstraintManifold, f: Optional[Density] = None):
    fns = [M.q_fn, M.grad_fn, M.h_fn]
    if f is not None:
        fns.append(f.fn)
    return _kernels.kernels_for(*fns)


@dataclass(frozen=True)
class TangentFrame:
    point: np.ndarray
    U_tan: np.ndarray
    U_norm: np.ndarray
    Q: np.ndarray

    @property
    def tangent_projector(self) -> np.ndarray:
        return self.U_tan @ self.U_tan.T

    @property
    def d(self) -> int:
        return self.U_tan.shape[1]


@dataclass(frozen=True)
class NewtonParams:
    tol: float = 1e-12
    nmax: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.nmax < 1:
            raise ValueError("nmax must be at least 1")


@dataclass(frozen=True)
class ProjectionResult:
    a: np.ndarray
    success: bool
    iterations: int
    point: np.ndarray


def tangent_frame(M: ConstraintManifold, x) -> TangentFrame:
    """Orthonormal bases of T_x and its complement from a complete QR of Q_x."""
    x = np.asarray(x, dtype=np.float64)
    Q = np.asarray(M.grad_q(x), dtype=np.float64).reshape(M.ambient_dim, M.equality_count)
    m = M.equality_count
    if m > 0:
        if not np.all(np.isfinite(Q)):
            raise DegenerateConstraintError(f"non-finite constraint gradient at {x}")
        sv = np.linalg.svd(Q, compute_uv=False)
        if sv[-1] < RANK_THRESHOLD * sv[0] or sv[0] == 0:
            raise DegenerateConstraintError(
                f"constraint gradients are rank deficient at {x} "
                f"(singular values {sv[-1]:.3g} / {sv[0]:.3g})")
    U, _ = np.linalg.qr(Q, mode="complete")
    return TangentFrame(point=x, U_tan=U[:, m:], U_norm=U[:, :m], Q=Q)


def project(M: ConstraintManifold, z, Q, params: NewtonParams = NewtonParams()) -> ProjectionResult:
    """Plain Newton for q(z + Q a) = 0 starting from a = 0.

    No line search or damping. A singular Newton system counts as failure,
    like running out of iterations.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    Q = np.ascontiguousarray(Q, dtype=np.float64).reshape(M.ambient_dim, -1)
    kern = kernels_for(M)
    a, y, ok, it = kern.project(M.q_fn, M.grad_fn, M.params, z, Q,
                                float(params.tol), int(params.nmax))
    return ProjectionResult(a=np.asarray(a), success=bool(ok), iterations=int(it),
                            point=np.asarray(y))


def cross_jacobian(F_x: TangentFrame, F_y: TangentFrame) -> float:
    """det(U_x^t U_y): product of cosines of the principal angles, up to sign."""
    if F_x.d != F_y.d:
        raise ValueError("frames have different tangent dimensions")
    return float(np.linalg.det(F_x.U_tan.T @ F_y.U_tan))


def tangential_decompose(delta, F: TangentFrame):
    """Split ``delta`` into its component in T and the orthogonal remainder."""
    delta = np.asarray(delta, dtype=np.float64)
    v_t = F.U_tan @ (F.U_tan.T @ delta)
    return v_t, delta - v_t


def gradient_check(M: ConstraintManifold, x, step: float = 1e-6) -> float:
    """Largest relative deviation between grad_q and a central difference of q."""
    x = np.asarray(x, dtype=np.float64)
    G = np.asarray(M.grad_q(x)).reshape(M.ambient_dim, M.equality_count)
    fd = np.empty_like(G)
    for i in range(M.ambient_dim):
        e = np.zeros_like(x)
        e[i] = step
        fd[i] = (M.q(x + e) - M.q(x - e)) / (2 * step)
    scale = max(np.abs(G).max(), 1.0)
    return float(np.abs(fd - G).max() / scale)


def snap_to_manifold(M: ConstraintManifold, x, params: NewtonParams = NewtonParams()):
    """Move a nearly-feasible point onto M along span(Q_x); raises on failure."""
    x = np.asarray(x, dtype=np.float64)
    res = project(M, x, M.grad_q(x), NewtonParams(params.tol, max(params.nmax, 50)))
    if not res.success:
        raise ValueError("could not project the point onto the manifold")
    return res.point
