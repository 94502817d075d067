import math

import numpy as np
import pytest
from scipy.integrate import quad

from manifold_mc import zoo
from manifold_mc.core import ConstraintManifold, NewtonParams
from manifold_mc.integrator import (IntegrationConfig, InnermostProjectionFailure,
                                    ball_volume, choose_center, estimate_innermost,
                                    estimate_ratio, integrate, make_schedule,
                                    outer_radius, probe_min_radius, uniform_disk)
from manifold_mc.sampler import ProposalParams


def test_ball_volume():
    assert ball_volume(1, 2.0) == pytest.approx(4.0)
    assert ball_volume(2, 1.0) == pytest.approx(math.pi)
    assert ball_volume(3, 1.0) == pytest.approx(4 * math.pi / 3)


def test_make_schedule_geometric():
    s = make_schedule([1.5, 0, 0], 3.0, 0.5, 2, 2)
    assert s.nu == pytest.approx(6.0)
    assert s.radii == pytest.approx((3.0, math.sqrt(1.5), 0.5))
    vols = [ball_volume(2, r) for r in s.radii]
    assert vols[0] / vols[1] == pytest.approx(6.0) and vols[1] / vols[2] == pytest.approx(6.0)
    one = make_schedule([0.0], 4.0, 1.0, 1, 3)
    assert one.radii == (4.0, 1.0) and one.nu == pytest.approx(64.0)
    with pytest.raises(ValueError):
        make_schedule([0.0], 1.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        make_schedule([0.0], 1.0, 0.5, 0, 2)


def test_uniform_disk_radial_law(rng):
    pts = uniform_disk(rng, 200_000, 3, 2.0)
    r = np.linalg.norm(pts, axis=1)
    assert r.max() <= 2.0
    # P(|v| < r/2) = 1/8 in three dimensions
    assert np.mean(r < 1.0) == pytest.approx(1 / 8, abs=3e-3)


def _interval():
    # the segment y = 0, -1 < x < 1 in the plane
    return ConstraintManifold.from_callables(
        2, lambda x: np.array([x[1]]), lambda x: np.array([[0.0], [1.0]]),
        h=lambda x: np.array([1 - x[0], 1 + x[0]]))


def test_choose_center_inequalities():
    X = np.array([[0.9, 0], [0.1, 0], [-0.5, 0]])
    assert choose_center(X, _interval()) == pytest.approx([0.1, 0])


def test_choose_center_minimax():
    deg = np.deg2rad([0.0, 10.0, 180.0])
    X = np.column_stack([np.cos(deg), np.sin(deg)])
    assert choose_center(X, zoo.sphere_manifold(2)) == pytest.approx(X[1])
    assert outer_radius(X, X[1]) == pytest.approx(2.0 * math.sin(np.deg2rad(85)))
    with pytest.raises(ValueError):
        choose_center(np.empty((0, 2)), zoo.sphere_manifold(2))


def test_estimate_innermost_flat_disk(rng):
    M = zoo.flat_manifold(2)
    Z, rho = estimate_innermost(M, None, np.zeros(3), 0.7, 1000, rng)
    assert Z == pytest.approx(math.pi * 0.49, rel=1e-12)
    assert rho == 0.0


def test_estimate_innermost_circle_arc():
    # arc of the unit circle inside the ball of radius 0.5 around (1, 0)
    exact = 4 * math.asin(0.25)
    # graph over the tangent line: x = sqrt(1 - t^2), |J| = 1/sqrt(1 - t^2);
    # the ball boundary is crossed where sqrt(1 - t^2) = 7/8
    t_rim = math.sqrt(1 - 0.875 ** 2)
    q_oracle = quad(lambda t: 1 / math.sqrt(1 - t * t), -t_rim, t_rim)[0]
    assert q_oracle == pytest.approx(exact, rel=1e-6)
    Z, rho = estimate_innermost(zoo.sphere_manifold(2), None, [1.0, 0.0], 0.5, 200_000,
                                np.random.default_rng(0), NewtonParams(nmax=50))
    assert abs(Z / exact - 1) <= 3 * rho
    assert rho < 0.01


def test_estimate_innermost_failure_raises():
    # a tangent disk far larger than the circle cannot project everywhere
    with pytest.raises(InnermostProjectionFailure):
        estimate_innermost(zoo.sphere_manifold(2), None, [1.0, 0.0], 3.0, 1000,
                           np.random.default_rng(0))


def test_probe_hyperplane_keeps_start_radius():
    r = probe_min_radius(zoo.flat_manifold(2), np.zeros(3), 1.0, 1000, 1e-3,
                         np.random.default_rng(0), pair_chain_steps=2000, n_pair_points=100)
    assert r == 1.0


def test_probe_circle_shrinks():
    r = probe_min_radius(zoo.sphere_manifold(2), [1.0, 0.0], 4.0, 10_000, 1e-3,
                         np.random.default_rng(0), disk_newton=NewtonParams(nmax=50))
    assert r < 4.0
    assert r <= 1.0


def test_estimate_ratio_flat_nu2():
    M = zoo.flat_manifold(2)
    est, warm = estimate_ratio(M, None, np.zeros(3), math.sqrt(2.0), 1.0, 200_000,
                               ProposalParams(0.5), np.random.default_rng(3))
    assert est.p_hat == pytest.approx(0.5, abs=4 * math.sqrt(est.tau_hat * 0.25 / est.n_i))
    assert est.R_hat == est.n_i / est.N_next
    assert est.tau_hat >= 1.0
    assert np.linalg.norm(warm) < 1.0
    assert sum(est.outcome_fractions.values()) == pytest.approx(1.0)


def test_estimate_ratio_equal_radii():
    est, _ = estimate_ratio(zoo.flat_manifold(1), None, np.zeros(2), 1.0, 1.0, 1000,
                            ProposalParams(0.2), np.random.default_rng(0))
    assert est.p_hat == 1.0 and est.R_hat == 1.0 and est.tau_hat == 1.0


def test_integrate_flat_segment():
    cfg = IntegrationConfig(n_total=40_000, k=2, x0=np.zeros(2), r0=2.0, rk=0.5)
    est = integrate(zoo.flat_manifold(1), None, cfg, np.random.default_rng(1))
    assert abs(est.Z_hat / 4.0 - 1) <= 3 * est.sigma_r
    assert est.Z_k_hat == pytest.approx(1.0)
    assert len(est.stages) == 2
    d = est.to_dict()
    assert d["schedule"]["k"] == 2 and len(d["stages"]) == 2


def test_integrate_torus_seeded_reproducible():
    spec = zoo.TorusSpec()
    cfg = IntegrationConfig(n_total=20_000, k=2, x0=np.array([1.5, 0, 0]), r0=3.0, rk=0.5)
    a = integrate(zoo.torus_manifold(spec), None, cfg, np.random.default_rng(7))
    b = integrate(zoo.torus_manifold(spec), None, cfg, np.random.default_rng(7))
    assert a.Z_hat == b.Z_hat and a.sigma_r == b.sigma_r
    assert abs(a.Z_hat / zoo.torus_area() - 1) <= 4 * a.sigma_r


def test_integrate_son2_volume():
    cfg = IntegrationConfig(n_total=100_000, k=4, x_init=np.eye(2).ravel())
    est = integrate(zoo.son_manifold(2), None, cfg, np.random.default_rng(2))
    assert abs(est.Z_hat / zoo.son_volume_exact(2) - 1) <= 4 * est.sigma_r
    assert zoo.son_volume_exact(2) == pytest.approx(8.89, abs=5e-3)


def test_integrate_parallel_mode():
    cfg = IntegrationConfig(n_total=20_000, k=2, x0=np.array([1.5, 0, 0]), r0=3.0, rk=0.5,
                            warm_start=False)
    est = integrate(zoo.torus_manifold(), None, cfg, np.random.default_rng(5))
    assert abs(est.Z_hat / zoo.torus_area() - 1) <= 4 * est.sigma_r
