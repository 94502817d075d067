"""Built-in manifolds with analytic reference values.

Torus, cone, SO(n), spheres, flat planes and sticky-sphere cluster manifolds.
All constraint callbacks are numba-jitted so the sampler runs compiled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numba
import numpy as np
from scipy.special import gammaln

from .core import ConstraintManifold, Density


# --- torus -----------------------------------------------------------------

@dataclass(frozen=True)
class TorusSpec:
    R: float = 1.0
    r: float = 0.5

    def __post_init__(self):
        if not self.R > self.r > 0:
            raise ValueError("torus needs R > r > 0")


@numba.njit
def _torus_q(x, p):
    rho = math.sqrt(x[0] * x[0] + x[1] * x[1])
    out = np.empty(1)
    out[0] = (p[0] - rho) ** 2 + x[2] * x[2] - p[1] * p[1]
    return out


@numba.njit
def _torus_grad(x, p):
    rho = math.sqrt(x[0] * x[0] + x[1] * x[1])
    c = -2.0 * (p[0] - rho) / rho
    g = np.empty((3, 1))
    g[0, 0] = c * x[0]
    g[1, 0] = c * x[1]
    g[2, 0] = 2.0 * x[2]
    return g


def torus_manifold(spec: TorusSpec = TorusSpec()) -> ConstraintManifold:
    return ConstraintManifold(3, 1, _torus_q, _torus_grad,
                              params=np.array([spec.R, spec.r]), name="torus")


def torus_phi(x, spec: TorusSpec = TorusSpec()):
    x = np.atleast_2d(x)
    rho = np.hypot(x[:, 0], x[:, 1])
    return np.arctan2(x[:, 2], rho - spec.R)


def torus_theta(x):
    x = np.atleast_2d(x)
    return np.arctan2(x[:, 1], x[:, 0])


def torus_phi_density(phi, spec: TorusSpec = TorusSpec()):
    """Marginal density of the poloidal angle under the uniform surface measure."""
    return (1.0 + spec.r / spec.R * np.cos(phi)) / (2 * np.pi)


def torus_area(spec: TorusSpec = TorusSpec()) -> float:
    return 4 * np.pi ** 2 * spec.r * spec.R


def torus_point(theta, phi, spec: TorusSpec = TorusSpec()):
    w = spec.R + spec.r * np.cos(phi)
    return np.array([w * np.cos(theta), w * np.sin(theta), spec.r * np.sin(phi)])


# --- cone ------------------------------------------------------------------

@dataclass(frozen=True)
class ConeSpec:
    """Unit right-angle cone z = sqrt(x^2 + y^2), x^2 + y^2 < 1, z > 0."""


@numba.njit
def _cone_q(x, p):
    out = np.empty(1)
    out[0] = x[2] - math.sqrt(x[0] * x[0] + x[1] * x[1])
    return out


@numba.njit
def _cone_grad(x, p):
    rho = math.sqrt(x[0] * x[0] + x[1] * x[1])
    g = np.empty((3, 1))
    g[0, 0] = -x[0] / rho
    g[1, 0] = -x[1] / rho
    g[2, 0] = 1.0
    return g


@numba.njit
def _cone_h(x, p):
    out = np.empty(2)
    out[0] = 1.0 - x[0] * x[0] - x[1] * x[1]
    out[1] = x[2]
    return out


def cone_manifold(spec: ConeSpec = ConeSpec()) -> ConstraintManifold:
    return ConstraintManifold(3, 1, _cone_q, _cone_grad, _cone_h, 2, name="cone")


def cone_marginals(coord: str, value):
    """Marginal densities g_X = g_Y = (2/pi) sqrt(1 - x^2) and g_Z = 2z."""
    value = np.asarray(value, dtype=np.float64)
    if coord in ("x", "y"):
        if np.any(np.abs(value) > 1):
            raise ValueError("x/y marginal is supported on [-1, 1]")
        return 2 / np.pi * np.sqrt(1 - value ** 2)
    if coord == "z":
        if np.any((value < 0) | (value > 1)):
            raise ValueError("z marginal is supported on [0, 1]")
        return 2 * value
    raise ValueError(f"unknown cone coordinate {coord!r}")


# --- spheres and flat planes (test geometry) -------------------------------

@numba.njit
def _sphere_q(x, p):
    out = np.empty(1)
    out[0] = np.sum(x * x) - p[0] * p[0]
    return out


@numba.njit
def _sphere_grad(x, p):
    g = np.empty((x.shape[0], 1))
    g[:, 0] = 2.0 * x
    return g


def sphere_manifold(ambient_dim: int = 3, radius: float = 1.0) -> ConstraintManifold:
    """Round sphere |x| = radius; ambient_dim=2 gives a circle."""
    return ConstraintManifold(ambient_dim, 1, _sphere_q, _sphere_grad,
                              params=np.array([radius]), name="sphere")


@numba.njit
def _plane_q(x, p):
    m = int(p[0])
    n = x.shape[0]
    A = p[1:1 + m * n].reshape(m, n)
    return A @ x - p[1 + m * n:1 + m * n + m]


@numba.njit
def _plane_grad(x, p):
    m = int(p[0])
    n = x.shape[0]
    return np.ascontiguousarray(p[1:1 + m * n].reshape(m, n).T)


def hyperplane_manifold(normals, offsets=None) -> ConstraintManifold:
    """Affine plane {x : A x = b} for an m x d_a matrix A of full row rank."""
    A = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    m, n = A.shape
    b = np.zeros(m) if offsets is None else np.asarray(offsets, dtype=np.float64)
    params = np.concatenate([[m], A.ravel(), b])
    return ConstraintManifold(n, m, _plane_q, _plane_grad, params=params,
                              name="hyperplane")


def flat_manifold(d: int, codim: int = 1, rotation=None) -> ConstraintManifold:
    """A d-dimensional plane through the origin of R^(d + codim).

    Without ``rotation`` it is the coordinate plane spanned by the first d
    axes; a rotation (orthogonal matrix) tilts it.
    """
    n = d + codim
    A = np.zeros((codim, n))
    A[:, d:] = np.eye(codim)
    if rotation is not None:
        A = A @ np.asarray(rotation).T
    return hyperplane_manifold(A)


# --- SO(n) -----------------------------------------------------------------

@dataclass(frozen=True)
class SONSpec:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("SO(n) needs n >= 2")

    @property
    def ambient_dim(self) -> int:
        return self.n * self.n

    @property
    def equality_count(self) -> int:
        return self.n * (self.n + 1) // 2

    @property
    def d(self) -> int:
        return self.n * (self.n - 1) // 2


@numba.njit
def _son_q(x, p):
    n = int(p[0])
    X = x.reshape(n, n)
    G = X @ X.T
    out = np.empty(n * (n + 1) // 2)
    c = 0
    for k in range(n):
        for l in range(k, n):
            out[c] = G[k, l] - (1.0 if k == l else 0.0)
            c += 1
    return out


@numba.njit
def _son_grad(x, p):
    n = int(p[0])
    g = np.zeros((n * n, n * (n + 1) // 2))
    c = 0
    for k in range(n):
        for l in range(k, n):
            if k == l:
                for j in range(n):
                    g[k * n + j, c] = 2.0 * x[k * n + j]
            else:
                for j in range(n):
                    g[k * n + j, c] = x[l * n + j]
                    g[l * n + j, c] = x[k * n + j]
            c += 1
    return g


@numba.njit
def _son_h(x, p):
    n = int(p[0])
    out = np.empty(1)
    out[0] = np.linalg.det(x.reshape(n, n))
    return out


def son_manifold(n: int) -> ConstraintManifold:
    """SO(n) as row-orthonormal n x n matrices (row-major) with det > 0."""
    spec = SONSpec(n)
    return ConstraintManifold(spec.ambient_dim, spec.equality_count, _son_q,
                              _son_grad, _son_h, 1, params=np.array([float(n)]),
                              name=f"SO({n})")


def sphere_volume(i: int) -> float:
    """Surface area of the unit sphere S^i in R^(i+1)."""
    return 2 * math.pi ** ((i + 1) / 2) / math.gamma((i + 1) / 2)


def son_volume_exact(n: int) -> float:
    """Volume of SO(n) embedded in R^(n x n) with the Frobenius metric."""
    if n < 2:
        raise ValueError("n >= 2 required")
    log_v = n * (n - 1) / 4 * math.log(2)
    for i in range(1, n):
        log_v += math.log(2) + (i + 1) / 2 * math.log(math.pi) - gammaln((i + 1) / 2)
    return math.exp(log_v)


def son_trace(x, n: int):
    x = np.atleast_2d(x)
    return np.trace(x.reshape(-1, n, n), axis1=1, axis2=2)


# --- sticky-sphere clusters ------------------------------------------------

@dataclass(frozen=True)
class ClusterSpec:
    """N unit spheres with the contact pairs ``edges`` (0-based)."""

    N: int
    edges: tuple

    def __post_init__(self):
        edges = tuple(tuple(sorted((int(i), int(j)))) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-contact ({i}, {j})")
            if not (0 <= i < self.N and 0 <= j < self.N):
                raise ValueError(f"contact ({i}, {j}) out of range for N={self.N}")
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate contacts")
        if self.d < 1:
            raise ValueError(f"cluster manifold has dimension {self.d} < 1")

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def ambient_dim(self) -> int:
        return 3 * self.N

    @property
    def d(self) -> int:
        return 3 * self.N - self.m - 3

    @property
    def non_contacts(self):
        es = set(self.edges)
        return [pair for pair in combinations(range(self.N), 2) if pair not in es]

    @classmethod
    def chain(cls, N: int) -> "ClusterSpec":
        return cls(N, tuple((i, i + 1) for i in range(N - 1)))

    @classmethod
    def loop(cls, N: int) -> "ClusterSpec":
        return cls(N, tuple((i, (i + 1) % N) for i in range(N)))

    @classmethod
    def from_edge_list(cls, text: str) -> "ClusterSpec":
        """Parse "N" on the first line and then one 1-based "i j" pair per line."""
        lines = [ln.split("#")[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise ValueError("empty edge list")
        N = int(lines[0])
        edges = []
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != 2:
                raise ValueError(f"bad edge line {ln!r}")
            edges.append((int(parts[0]) - 1, int(parts[1]) - 1))
        return cls(N, tuple(edges))

    @classmethod
    def from_file(cls, path) -> "ClusterSpec":
        return cls.from_edge_list(Path(path).read_text())

    def encode(self) -> np.ndarray:
        nc = self.non_contacts
        return np.array([self.N, self.m, len(nc)]
                        + [v for e in self.edges for v in e]
                        + [v for e in nc for v in e], dtype=np.float64)


@numba.njit
def _cluster_q(x, p):
    N = int(p[0])
    m = int(p[1])
    out = np.empty(m + 3)
    for e in range(m):
        i = int(p[3 + 2 * e])
        j = int(p[4 + 2 * e])
        s = 0.0
        for k in range(3):
            t = x[3 * i + k] - x[3 * j + k]
            s += t * t
        out[e] = s - 1.0
    for k in range(3):
        s = 0.0
        for i in range(N):
            s += x[3 * i + k]
        out[m + k] = s
    return out


@numba.njit
def _cluster_grad(x, p):
    N = int(p[0])
    m = int(p[1])
    g = np.zeros((3 * N, m + 3))
    for e in range(m):
        i = int(p[3 + 2 * e])
        j = int(p[4 + 2 * e])
        for k in range(3):
            t = 2.0 * (x[3 * i + k] - x[3 * j + k])
            g[3 * i + k, e] = t
            g[3 * j + k, e] = -t
    for i in range(N):
        for k in range(3):
            g[3 * i + k, m + k] = 1.0
    return g


@numba.njit
def _cluster_h(x, p):
    m = int(p[1])
    l = int(p[2])
    base = 3 + 2 * m
    out = np.empty(l)
    for e in range(l):
        i = int(p[base + 2 * e])
        j = int(p[base + 2 * e + 1])
        s = 0.0
        for k in range(3):
            t = x[3 * i + k] - x[3 * j + k]
            s += t * t
        out[e] = s - 1.0
    return out


def cluster_manifold(spec: ClusterSpec) -> ConstraintManifold:
    """Contacts at unit distance, centre of mass at the origin, no overlaps.

    Non-contact pairs use the squared form |x_i - x_j|^2 - 1 > 0.
    """
    return ConstraintManifold(spec.ambient_dim, spec.m + 3, _cluster_q, _cluster_grad,
                              _cluster_h, len(spec.non_contacts), params=spec.encode(),
                              name=f"cluster(N={spec.N}, m={spec.m})")


@numba.njit
def _rigidity_matrix(x, p):
    N = int(p[0])
    m = int(p[1])
    Rm = np.zeros((m, 3 * N))
    for e in range(m):
        i = int(p[3 + 2 * e])
        j = int(p[4 + 2 * e])
        for k in range(3):
            t = x[3 * i + k] - x[3 * j + k]
            Rm[e, 3 * i + k] = t
            Rm[e, 3 * j + k] = -t
    return Rm


EIG_RTOL = 1e-10


@numba.njit
def _rigidity_weight(x, p):
    # R^t R and R R^t share their non-zero spectrum; the m x m one is cheaper
    Rm = _rigidity_matrix(x, p)
    lam = np.linalg.eigvalsh(Rm @ Rm.T)
    lmax = lam[-1]
    logw = 0.0
    for v in lam:
        if v > EIG_RTOL * lmax:
            logw -= 0.5 * math.log(v)
    return math.exp(logw)


def rigidity_matrix(x, spec: ClusterSpec) -> np.ndarray:
    return _rigidity_matrix(np.ascontiguousarray(x, dtype=np.float64), spec.encode())


def rigidity_weight(x, spec: ClusterSpec) -> float:
    """Product of lambda^(-1/2) over the non-zero eigenvalues of R^t R."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    p = spec.encode()
    lam = np.linalg.eigvalsh(_rigidity_matrix(x, p) @ _rigidity_matrix(x, p).T)
    if np.sum(lam > EIG_RTOL * lam[-1]) < spec.m:
        warnings.warn("rigidity matrix has fewer non-zero eigenvalues than contacts",
                      RuntimeWarning, stacklevel=2)
    return float(_rigidity_weight(x, p))


@numba.njit
def _rigidity_weights(X, p):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = _rigidity_weight(np.ascontiguousarray(X[i]), p)
    return out


def rigidity_weights(X, spec: ClusterSpec) -> np.ndarray:
    """Rigidity weight of every row of X (no degeneracy warning)."""
    return _rigidity_weights(np.ascontiguousarray(X, dtype=np.float64), spec.encode())


def rigidity_density(spec: ClusterSpec) -> Density:
    return Density(_rigidity_weight, spec.encode())


def cluster_initial_point(spec: ClusterSpec, seed: int = 0, max_tries: int = 10000):
    """A feasible configuration for a chain or loop cluster.

    Chains start as a planar zig-zag; loops as a regular polygon with unit
    sides. Other topologies are not constructed here.
    """
    N = spec.N
    if spec.edges == ClusterSpec.chain(N).edges:
        ang = np.deg2rad(150.0) / 2
        pts = np.array([[i * math.sin(ang), (i % 2) * math.cos(ang), 0.0]
                        for i in range(N)])
    elif spec.edges == ClusterSpec.loop(N).edges:
        rad = 0.5 / math.sin(math.pi / N)
        t = 2 * math.pi * np.arange(N) / N
        pts = np.column_stack([rad * np.cos(t), rad * np.sin(t), np.zeros(N)])
    else:
        raise ValueError("initial points are only constructed for chains and loops")
    pts -= pts.mean(axis=0)
    x = pts.ravel()
    M = cluster_manifold(spec)
    if not M.contains(x, 1e-12):
        raise RuntimeError("constructed cluster configuration is infeasible")
    return x


def chain_loop_stats(N: int, z_C: float, z_L: float, loop_count=None, chain_count=None):
    """Chain-versus-loop ratios for N indistinguishable sticky spheres.

    Returns ``(z_C / z_L, n_C z_C / (n_L z_L), kappa_hat)`` with n_C = N!/2 and
    n_L = (N-1)!/2; kappa_hat is None unless both counts are given.
    """
    if N < 3 or z_C <= 0 or z_L <= 0:
        raise ValueError("need N >= 3 and positive partition functions")
    ratio_single = z_C / z_L
    n_C = math.factorial(N) / 2
    n_L = math.factorial(N - 1) / 2
    ratio_indist = n_C * z_C / (n_L * z_L)
    kappa_hat = None
    if loop_count is not None and chain_count is not None:
        if chain_count == 0:
            raise ZeroDivisionError("chain_count must be non-zero")
        kappa_hat = loop_count / chain_count * ratio_indist
    return ratio_single, ratio_indist, kappa_hat
