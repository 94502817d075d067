import math

import numpy as np
import pytest
from scipy.integrate import quad

from manifold_mc import tangent_frame, zoo


def test_torus_area_and_phi_density():
    assert zoo.torus_area() == pytest.approx(2 * math.pi ** 2, rel=1e-15)
    assert zoo.torus_area() == pytest.approx(19.7392, abs=1e-4)
    total = quad(zoo.torus_phi_density, -math.pi, math.pi)[0]
    assert total == pytest.approx(1.0)
    spec = zoo.TorusSpec()
    x = zoo.torus_point(0.3, -1.1, spec)
    assert zoo.torus_manifold(spec).residual(x) <= 1e-14
    assert np.asarray(zoo.torus_phi(x, spec)).item() == pytest.approx(-1.1)
    assert np.asarray(zoo.torus_theta(x)).item() == pytest.approx(0.3)
    with pytest.raises(ValueError):
        zoo.TorusSpec(0.5, 1.0)


def test_cone_marginals():
    assert quad(lambda z: zoo.cone_marginals("z", z), 0, 1)[0] == pytest.approx(1.0)
    assert quad(lambda x: zoo.cone_marginals("x", x), -1, 1)[0] == pytest.approx(1.0)
    assert zoo.cone_marginals("z", 0.5) == pytest.approx(1.0)


def test_son_manifold_shapes():
    spec = zoo.SONSpec(4)
    assert (spec.ambient_dim, spec.equality_count, spec.d) == (16, 10, 6)
    M = zoo.son_manifold(4)
    assert M.intrinsic_dim == 6
    assert M.contains(np.eye(4).ravel())
    flip = np.diag([-1.0, 1, 1, 1]).ravel()
    assert not M.contains(flip)
    assert zoo.son_trace(np.eye(4).ravel(), 4) == 4.0


@pytest.mark.parametrize("n,ref", [(2, 8.89), (3, 223.3), (4, 1.24e4), (5, 1.31e6)])
def test_son_volume_table(n, ref):
    # the tabulated values carry three significant figures (1.24e4 vs 12468)
    assert zoo.son_volume_exact(n) == pytest.approx(ref, rel=1e-2)


def test_sphere_volume():
    assert zoo.sphere_volume(1) == pytest.approx(2 * math.pi)
    assert zoo.sphere_volume(2) == pytest.approx(4 * math.pi)


def test_cluster_spec_and_edges(tmp_path):
    chain = zoo.ClusterSpec.chain(4)
    assert chain.m == 3 and chain.ambient_dim == 12 and chain.d == 12 - 3 - 3
    loop = zoo.ClusterSpec.loop(4)
    assert loop.m == 4
    p = tmp_path / "edges.txt"
    p.write_text("# loop\n4\n1 2\n2 3\n3 4\n4 1\n")
    spec = zoo.ClusterSpec.from_file(p)
    assert sorted(map(tuple, map(sorted, spec.edges))) == \
        sorted(map(tuple, map(sorted, loop.edges)))
    with pytest.raises(ValueError):
        zoo.ClusterSpec.from_edge_list("2\n1 1\n")


def test_cluster_initial_points_feasible():
    for spec in (zoo.ClusterSpec.chain(4), zoo.ClusterSpec.loop(5)):
        x = zoo.cluster_initial_point(spec)
        M = zoo.cluster_manifold(spec)
        assert M.contains(x, 1e-12)
        F = tangent_frame(M, x)
        assert F.d == spec.d


def test_dimer_rigidity():
    spec = zoo.ClusterSpec(2, ((0, 1),))
    x = np.array([0.0, 0, 0, 1, 0, 0])
    R = zoo.rigidity_matrix(x, spec)
    assert R.shape == (1, 6)
    assert zoo.rigidity_weight(x, spec) == pytest.approx(2 ** -0.5)


def test_rigidity_invariance(rng):
    spec = zoo.ClusterSpec.chain(4)
    x = zoo.cluster_initial_point(spec)
    O, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    y = (x.reshape(-1, 3) @ O.T + rng.standard_normal(3)).ravel()
    assert zoo.rigidity_weight(y, spec) == pytest.approx(zoo.rigidity_weight(x, spec), rel=1e-10)
    X = np.stack([x, y])
    assert zoo.rigidity_weights(X, spec) == pytest.approx(
        [zoo.rigidity_weight(x, spec)] * 2, rel=1e-10)


def test_chain_loop_stats():
    ratio, indist, kappa = zoo.chain_loop_stats(4, 132.0, 21.8)
    assert ratio == pytest.approx(6.055, abs=1e-3)
    assert indist == pytest.approx(4 * ratio)
    assert kappa is None
    _, _, kappa = zoo.chain_loop_stats(4, 132.0, 21.8, loop_count=1, chain_count=2)
    assert kappa == pytest.approx(indist / 2)
    assert zoo.chain_loop_stats(4, 6.02, 1.0)[1] == pytest.approx(24.08)
    with pytest.raises(ZeroDivisionError):
        zoo.chain_loop_stats(4, 1.0, 1.0, loop_count=1, chain_count=0)


def test_flat_manifold_rotation(rng):
    O, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    M = zoo.flat_manifold(2, 2, O)
    assert M.intrinsic_dim == 2
    assert M.contains(np.zeros(4))
