import math

import pytest

from manifold_mc import analysis
from manifold_mc.analysis import NuModel, NuModelKind


def test_g_const_minimizer():
    assert analysis.minimize_scalar(analysis.g_const, 1.01, 50) == pytest.approx(4.92, abs=0.01)
    # stationarity of (nu - 1)/log(nu)^2: log(nu) = 2 (nu - 1)/nu
    nu = NuModel(NuModelKind.ConstantTau).argmin()
    assert math.log(nu) == pytest.approx(2 * (nu - 1) / nu, abs=1e-5)


def test_g_diffusive_large_d_approaches_const():
    for nu in (2.0, 5.0):
        assert analysis.g_diffusive(nu, 10_000) * 2 / 10_000 == pytest.approx(
            analysis.g_const(nu), rel=1e-3)


def test_stable_near_one():
    v = analysis.g_const(1 + 1e-9)
    assert math.isfinite(v) and v > 1e8
    assert analysis.h_brownian(1 + 1e-6, 3) < 1e-4


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_h_limits(d):
    assert abs(analysis.h_brownian(1 + 1e-6, d)) < 1e-4
    assert abs(analysis.h_brownian(1e9, d)) < 1e-4
    assert analysis.h_brownian(3.0, d) > 0


def test_h_continuous_in_d_at_two():
    # the d = 2 branch is the d -> 2 limit of the general formula
    a = analysis.h_brownian(4.0, 2)
    t = math.log(4.0)
    d = 2 + 1e-6
    num = (d - 2) * math.expm1(-t) - d * math.expm1((2 / d - 1) * t)
    den = math.exp(2 * t / d) * -math.expm1(-t)
    assert 4 / (d * d - 4) * num / den == pytest.approx(a, rel=1e-4)


def test_l_identity():
    for d in (1, 2, 3, 7):
        for nu in (1.5, 3.0, 20.0):
            assert analysis.l_brownian(nu, d) == pytest.approx(
                analysis.g_diffusive(nu, d) * analysis.h_brownian(nu, d), rel=1e-12)


def test_domain_errors():
    with pytest.raises(ValueError):
        analysis.g_const(1.0)
    with pytest.raises(ValueError):
        analysis.g_diffusive(2.0, 0)
    with pytest.raises(ValueError):
        analysis.minimize_scalar(analysis.g_const, 3, 2)


def test_nu_table():
    t = analysis.nu_table(3, [2.0, 3.0])
    assert t.shape == (2, 4)
    assert t[1, 2] == pytest.approx(analysis.g_diffusive(3.0, 3))
