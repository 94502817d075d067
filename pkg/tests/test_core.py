import math

import numpy as np
import pytest

from manifold_mc import (ConstraintManifold, DegenerateConstraintError, NewtonParams,
                         cross_jacobian, gradient_check, project, tangent_frame,
                         tangential_decompose)
from manifold_mc import zoo
from manifold_mc.core import TangentFrame, snap_to_manifold


def circle():
    return zoo.sphere_manifold(2, 1.0)


def test_sphere_frame_at_pole():
    F = tangent_frame(zoo.sphere_manifold(3), [0.0, 0.0, 1.0])
    assert np.allclose(F.tangent_projector, np.diag([1.0, 1.0, 0.0]), atol=1e-14)
    assert np.allclose(np.abs(F.U_norm[:, 0]), [0, 0, 1], atol=1e-14)


def test_circle_frame():
    F = tangent_frame(circle(), [1.0, 0.0])
    assert np.allclose(np.abs(F.U_norm[:, 0]), [1, 0])
    assert np.allclose(np.abs(F.U_tan[:, 0]), [0, 1])


def test_torus_frame_matches_parameterization():
    spec = zoo.TorusSpec(1.0, 0.5)
    th, ph = 0.0, 0.0
    x = zoo.torus_point(th, ph, spec)
    assert np.allclose(x, [1.5, 0, 0])
    # derivatives of the explicit (theta, phi) parameterization
    rho = spec.R + spec.r * math.cos(ph)
    d_th = np.array([-rho * math.sin(th), rho * math.cos(th), 0.0])
    d_ph = np.array([-spec.r * math.sin(ph) * math.cos(th),
                     -spec.r * math.sin(ph) * math.sin(th), spec.r * math.cos(ph)])
    B = np.column_stack([d_th, d_ph])
    P = B @ np.linalg.solve(B.T @ B, B.T)
    F = tangent_frame(zoo.torus_manifold(spec), x)
    assert np.abs(F.tangent_projector - P).max() <= 1e-10


def test_frame_invariants_on_son(rng):
    M = zoo.son_manifold(4)
    F = tangent_frame(M, np.eye(4).ravel())
    assert F.d == 6
    assert np.abs(F.U_tan.T @ F.U_tan - np.eye(6)).max() <= 1e-12
    assert np.abs(F.U_tan.T @ F.U_norm).max() <= 1e-12
    # span(U_norm) = span(Q)
    resid = F.Q - F.U_norm @ (F.U_norm.T @ F.Q)
    assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(F.Q)


def test_rank_deficient_frame_raises():
    # two copies of the same constraint
    M = ConstraintManifold.from_callables(
        3, lambda x: np.array([x[2], 2 * x[2]]),
        lambda x: np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0]]))
    with pytest.raises(DegenerateConstraintError):
        tangent_frame(M, [0.0, 0.0, 0.0])


def test_project_noop_on_manifold():
    res = project(circle(), [1.0, 0.0], [[2.0], [0.0]])
    assert res.success and res.iterations == 0 and res.a[0] == 0.0


def test_project_circle_closed_form():
    res = project(circle(), [1.0, 0.1], [[2.0], [0.0]])
    a = (math.sqrt(0.99) - 1) / 2
    assert res.success
    assert res.a[0] == pytest.approx(a, abs=1e-13)
    assert res.point == pytest.approx([math.sqrt(0.99), 0.1], abs=1e-13)
    assert circle().residual(res.point) <= 1e-12


def test_project_one_iteration_fails():
    res = project(circle(), [1.0, 2.0], [[2.0], [0.0]], NewtonParams(nmax=1))
    assert not res.success
    assert res.iterations == 1


def test_project_singular_system_is_failure():
    # gradient of q at z is orthogonal to Q: J = 0
    res = project(circle(), [0.0, 0.5], [[2.0], [0.0]])
    assert not res.success


def test_project_python_and_compiled_agree():
    M = circle()
    Mpy = ConstraintManifold.from_callables(2, lambda x: np.array([x @ x - 1.0]),
                                            lambda x: 2.0 * x.reshape(2, 1))
    assert not Mpy.jitted and M.jitted
    for z in ([1.0, 0.3], [0.7, -0.4], [1.0, 2.0]):
        a = project(M, z, [[2.0], [0.0]])
        b = project(Mpy, z, [[2.0], [0.0]])
        assert a.success == b.success and a.iterations == b.iterations
        assert np.allclose(a.point, b.point, atol=1e-14)


def test_project_deterministic():
    M = zoo.torus_manifold()
    F = tangent_frame(M, [1.5, 0, 0])
    z = np.array([1.5, 0.3, 0.2])
    a, b = project(M, z, F.Q), project(M, z, F.Q)
    assert a.success == b.success and np.array_equal(a.point, b.point)


def test_newton_params_validation():
    with pytest.raises(ValueError):
        NewtonParams(tol=0)
    with pytest.raises(ValueError):
        NewtonParams(nmax=0)


def _line_frame(angle):
    u = np.array([[math.cos(angle)], [math.sin(angle)]])
    n = np.array([[-math.sin(angle)], [math.cos(angle)]])
    return TangentFrame(np.zeros(2), u, n, n)


def test_cross_jacobian_identity_and_lines():
    F = _line_frame(0.3)
    assert cross_jacobian(F, F) == pytest.approx(1.0)
    G = _line_frame(0.3 + math.pi / 3)
    assert abs(cross_jacobian(F, G)) == pytest.approx(0.5, abs=1e-14)
    flipped = TangentFrame(G.point, -G.U_tan, G.U_norm, G.Q)
    assert abs(cross_jacobian(F, flipped)) == pytest.approx(0.5, abs=1e-14)


def test_cross_jacobian_basis_invariance(rng):
    M = zoo.son_manifold(3)
    x = np.eye(3).ravel()
    F = tangent_frame(M, x)
    Fy = tangent_frame(M, snap_to_manifold(M, x + 0.1 * F.U_tan @ rng.standard_normal(F.d)))
    O, _ = np.linalg.qr(rng.standard_normal((F.d, F.d)))
    F2 = TangentFrame(F.point, F.U_tan @ O, F.U_norm, F.Q)
    assert abs(abs(cross_jacobian(F, Fy)) - abs(cross_jacobian(F2, Fy))) <= 1e-12


def test_tangential_decompose(rng):
    F = tangent_frame(zoo.torus_manifold(), [1.5, 0, 0])
    vt, wn = tangential_decompose(F.U_tan @ [0.3, -0.2], F)
    assert np.abs(wn).max() <= 1e-14
    vt, wn = tangential_decompose(F.U_norm @ [0.7], F)
    assert np.abs(vt).max() <= 1e-14
    delta = rng.standard_normal(3)
    vt, wn = tangential_decompose(delta, F)
    assert np.abs(vt + wn - delta).max() <= 1e-14 * np.linalg.norm(delta)
    assert abs(vt @ wn) <= 1e-12


@pytest.mark.parametrize("M,x", [
    (zoo.torus_manifold(), [1.5, 0, 0]),
    (zoo.cone_manifold(), [0.3, 0.4, 0.5]),
    (zoo.son_manifold(3), np.eye(3).ravel()),
    (zoo.sphere_manifold(4), [0.5, 0.5, 0.5, 0.5]),
])
def test_gradient_check(M, x):
    assert gradient_check(M, x) <= 1e-5


def test_from_callables_counts_and_contains():
    M = ConstraintManifold.from_callables(
        2, lambda x: np.array([x[1]]), lambda x: np.array([[0.0], [1.0]]),
        h=lambda x: np.array([x[0], 1 - x[0]]))
    assert (M.equality_count, M.inequality_count, M.intrinsic_dim) == (1, 2, 1)
    assert M.contains([0.5, 0.0])
    assert not M.contains([1.5, 0.0])
    assert not M.contains([0.5, 1e-6])
