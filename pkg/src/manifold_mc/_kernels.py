"""Inner loops shared by the sampler and the integrator.

Each routine is written once in a numba-compatible subset of Python and built
twice: compiled with ``numba.njit`` (used when every callback handed to it is
itself a numba dispatcher) and as plain Python (used for arbitrary callables).
Callbacks have the signatures ``q(x, p) -> (m,)``, ``grad_q(x, p) -> (d_a, m)``,
``h(x, p) -> (l,)`` and ``f(x, p) -> float`` where ``p`` is a float64 parameter
vector owned by the manifold or density.
"""

from types import SimpleNamespace

import numba
import numpy as np

ACCEPTED = 0
PROJECTION_FAILURE = 1
INEQUALITY_FAILURE = 2
METROPOLIS_REJECT = 3
REVERSE_FAILURE = 4

# smallest |R_ii| / largest |R_ii| accepted in the in-loop rank check
RANK_RTOL = 1e-10
# Cholesky-pivot spread beyond which the Gram route hands over to Householder QR
GRAM_RTOL = 1e-3


def _lu_solve(A, b):
    """Gaussian elimination with partial pivoting; (x, ok).

    Beats the LAPACK call at the small sizes met here (m up to ~100) once
    compiled, because the pivot row is copied to a buffer the inner loop
    can vectorize over.
    """
    n = A.shape[0]
    M = A.copy()
    x = b.copy()
    rowk = np.empty(n)
    for k in range(n):
        p = k
        best = abs(M[k, k])
        for i in range(k + 1, n):
            if abs(M[i, k]) > best:
                best = abs(M[i, k])
                p = i
        if not best > 0.0:
            return x, False
        if p != k:
            for j in range(n):
                t = M[k, j]
                M[k, j] = M[p, j]
                M[p, j] = t
            t = x[k]
            x[k] = x[p]
            x[p] = t
        piv = M[k, k]
        w = n - k - 1
        for j in range(w):
            rowk[j] = M[k, k + 1 + j]
        xk = x[k]
        for i in range(k + 1, n):
            lik = M[i, k] / piv
            Mi = M[i, k + 1:]
            for j in range(w):
                Mi[j] -= lik * rowk[j]
            x[i] -= lik * xk
    for k in range(n - 1, -1, -1):
        acc = x[k]
        for j in range(k + 1, n):
            acc -= M[k, j] * x[j]
        x[k] = acc / M[k, k]
    return x, True


def _np_solve(A, b):
    try:
        return np.linalg.solve(A, b), True
    except np.linalg.LinAlgError:
        return b, False


def _build(jit, solve):
    @jit
    def normal_basis(Q):
        n, m = Q.shape
        if m == 0:
            return np.zeros((n, 0)), True
        for i in range(n):
            for j in range(m):
                if not np.isfinite(Q[i, j]):
                    return np.zeros((n, m)), False
        U, Rm = np.linalg.qr(Q)
        U = np.ascontiguousarray(U)
        dmax = 0.0
        dmin = np.inf
        for i in range(m):
            v = abs(Rm[i, i])
            dmax = max(dmax, v)
            dmin = min(dmin, v)
        return U, dmax > 0.0 and dmin >= RANK_RTOL * dmax

    @jit
    def project(q, grad_q, mp, z, Q, tol, nmax):
        m = Q.shape[1]
        a = np.zeros(m)
        y = z.copy()
        r = q(y, mp)
        it = 0
        while True:
            res = np.sqrt(np.sum(r * r))
            if not np.isfinite(res):
                return a, y, False, it
            if res <= tol:
                return a, y, True, it
            if it >= nmax:
                return a, y, False, it
            J = grad_q(y, mp).T @ Q
            da, solved = solve(J, -r)
            if not solved:
                return a, y, False, it
            a = a + da
            y = z + Q @ a
            r = q(y, mp)
            it += 1

    @jit
    def feasible(h, mp, y, center, ball_r2):
        if ball_r2 < np.inf:
            dc = y - center
            if not np.sum(dc * dc) < ball_r2:
                return False
        hv = h(y, mp)
        for j in range(hv.shape[0]):
            if not hv[j] > 0.0:
                return False
        return True

    @jit
    def normal_factor(Q):
        """(B, L, ok) with span(B) = span(Q) and L L^t = B^t B.

        Cholesky of the Gram matrix is far cheaper than Householder QR; when
        its pivots spread by more than GRAM_RTOL the orthonormal basis is
        used instead (B = U, L = I) so accuracy never rests on a badly
        conditioned Gram matrix.
        """
        n, m = Q.shape
        if m == 0:
            return np.zeros((n, 0)), np.zeros((0, 0)), True
        G = Q.T @ Q
        good = True
        for i in range(m):
            if not np.isfinite(G[i, i]):
                good = False
        if good:
            try:
                L = np.linalg.cholesky(G)
            except Exception:
                good = False
        if good:
            dmax = 0.0
            dmin = np.inf
            for i in range(m):
                dmax = max(dmax, L[i, i])
                dmin = min(dmin, L[i, i])
            if dmax > 0.0 and dmin >= GRAM_RTOL * dmax:
                return Q, L, True
        U, ok = normal_basis(Q)
        return U, np.eye(m), ok

    @jit
    def normal_component(B, L, d):
        """Orthogonal projection of d onto span(B), given L L^t = B^t B."""
        m = L.shape[0]
        y = B.T @ d
        for i in range(m):
            acc = y[i]
            for j in range(i):
                acc -= L[i, j] * y[j]
            y[i] = acc / L[i, i]
        for i in range(m - 1, -1, -1):
            acc = y[i]
            for j in range(i + 1, m):
                acc -= L[j, i] * y[j]
            y[i] = acc / L[i, i]
        return B @ y

    @jit
    def chain_chunk(q, grad_q, h, f, mp, fp, x, fx, xi, u, s, tol, nmax,
                    rev_tol, check_reverse, center, ball_r2,
                    out_x, out_code, out_fit, out_rit):
        n_steps = xi.shape[0]
        Qx = grad_q(x, mp)
        Bx, Lx, _ = normal_factor(Qx)
        inv2s2 = 0.5 / (s * s)
        for i in range(n_steps):
            rit = 0
            g = xi[i]
            v = s * (g - normal_component(Bx, Lx, g))
            v2 = np.sum(v * v)
            a, y, ok, fit = project(q, grad_q, mp, x + v, Qx, tol, nmax)
            if not ok:
                code = PROJECTION_FAILURE
            elif not feasible(h, mp, y, center, ball_r2):
                code = INEQUALITY_FAILURE
            else:
                Qy = grad_q(y, mp)
                By, Ly, oky = normal_factor(Qy)
                if not oky:
                    # no usable frame at y: the reverse move cannot be formed
                    code = REVERSE_FAILURE
                else:
                    delta = x - y
                    vp = delta - normal_component(By, Ly, delta)
                    fy = f(y, fp)
                    ratio = fy / fx * np.exp((v2 - np.sum(vp * vp)) * inv2s2)
                    if not u[i] < ratio:
                        code = METROPOLIS_REJECT
                    else:
                        back = True
                        if check_reverse:
                            a2, xr, back, rit = project(q, grad_q, mp, y + vp,
                                                        Qy, tol, nmax)
                            if back:
                                dr = xr - x
                                back = np.sqrt(np.sum(dr * dr)) <= rev_tol
                        if back:
                            code = ACCEPTED
                            x = y
                            fx = fy
                            Qx = Qy
                            Bx = By
                            Lx = Ly
                        else:
                            code = REVERSE_FAILURE
            out_x[i] = x
            out_code[i] = code
            out_fit[i] = fit
            out_rit[i] = rit
        return x, fx

    @jit
    def disk_project(q, grad_q, h, f, mp, fp, x0, Ut0, Un0, pts, r2, tol,
                     nmax, stop_on_failure, out_g):
        """Project tangent-disk points normal to T_x0; out_g gets G(y).

        Returns the number of failed projections (a point whose frame is
        rank deficient also counts as a failure).
        """
        n = pts.shape[0]
        m = Un0.shape[1]
        nfail = 0
        for i in range(n):
            z = x0 + Ut0 @ pts[i]
            a, y, ok, it = project(q, grad_q, mp, z, Un0, tol, nmax)
            if not ok:
                out_g[i] = np.nan
                nfail += 1
                if stop_on_failure:
                    return nfail
                continue
            if not feasible(h, mp, y, x0, r2):
                out_g[i] = 0.0
                continue
            Uy, oky = normal_basis(grad_q(y, mp))
            if not oky:
                out_g[i] = np.nan
                nfail += 1
                if stop_on_failure:
                    return nfail
                continue
            if m == 0:
                jac = 1.0
            else:
                # |det| of the normal-space cosines equals that of the
                # tangent-space cosines (complementary minors of an
                # orthogonal matrix)
                jac = abs(np.linalg.det(Un0.T @ Uy))
            out_g[i] = f(y, fp) / jac
        return nfail

    return SimpleNamespace(normal_basis=normal_basis, normal_factor=normal_factor,
                           normal_component=normal_component, project=project,
                           feasible=feasible, chain_chunk=chain_chunk,
                           disk_project=disk_project)


python_kernels = _build(lambda fn: fn, _np_solve)
jit_kernels = _build(numba.njit, numba.njit(_lu_solve))


def is_jitted(*fns):
    return all(isinstance(fn, numba.core.registry.CPUDispatcher) for fn in fns)


def kernels_for(*fns):
    """Compiled kernels when every callback is jitted, else the Python ones."""
    return jit_kernels if is_jitted(*fns) else python_kernels
