import math

import numpy as np
import pytest

from backend.core import ArgumentError, PreconditionError
from backend.barriers_module import BarrierModule, build_phi_eps, rasterize_radial, sigma_from_tau
from backend.geometry_module import DomainSpec
from backend.loglog_module import LogLogValue
from backend.nonlinearity_module import Nonlinearity, RescaledNonlinearity
from backend.solver_module import EllipticityPair, OperatorKind, Problem, build_grid, check_viscosity_inequalities

bm = BarrierModule()
HOMOGENEOUS = RescaledNonlinearity(Nonlinearity.homogeneous(), 1.0)
LOG_MODEL = RescaledNonlinearity(Nonlinearity.log_model(1.0), 0.5)


def test_regularized_profile():
    phi_eps = build_phi_eps(Nonlinearity.linear(), 0.1)
    assert phi_eps.phi(0.0) == pytest.approx(1.1 * 0.1)
    assert phi_eps.phi(2.0) == pytest.approx(2.2)
    assert sigma_from_tau(0.5) == pytest.approx(1.5)
    with pytest.raises(ArgumentError):
        sigma_from_tau(1.0)


def test_homogeneous_max_barrier_is_quadratic():
    eps, r = 0.1, 0.5
    b = bm.radial_max_barrier(1.0, r, HOMOGENEOUS, eps)
    # below the flat level f_eps(t) = (1 + eps) eps t
    assert b.params["f_max"] == pytest.approx((1 + eps) * eps * r, rel=1e-8)
    assert b.quadratic_exponent() == pytest.approx(2.0, abs=0.05)
    assert b.certificate >= 0
    assert b.monotone()
    assert b.evaluate([[0.0, 0.0]])[0] == pytest.approx(1.0 + 0.5 * (1 + eps) * eps * r * r, rel=1e-8)


def test_max_barrier_radius_limit():
    with pytest.raises(PreconditionError):
        bm.radial_max_barrier(1.0, 1.0, HOMOGENEOUS, 0.1)
    with pytest.raises(ArgumentError):
        bm.radial_max_barrier(1.0, 0.1, HOMOGENEOUS, 0.0)


def test_osgood_limit_gaps_shrink():
    out = bm.osgood_limit_check(1.0, 0.2, LOG_MODEL, [0.2, 0.1, 0.05])
    assert out["eps"] == [0.2, 0.1, 0.05]
    assert len(out["gaps"]) == 2


def test_almost_max_threshold():
    rep = bm.almost_max_threshold(1.0, LOG_MODEL, 2.0)
    assert rep.threshold > 0
    assert rep.verified
    assert rep.sup_w <= 2.0
    assert bm.almost_max_threshold(1.0, HOMOGENEOUS, 2.0).maximum_principle_exact
    with pytest.raises(ArgumentError):
        bm.almost_max_threshold(1.0, LOG_MODEL, 1.0)


def test_choose_ctilde():
    assert bm.choose_ctilde(HOMOGENEOUS) == 4.0
    assert bm.choose_ctilde(LOG_MODEL) == 4.0


def test_upper_barrier_homogeneous_closed_form():
    C = 4.0
    res = bm.upper_barrier_w2(1.0, HOMOGENEOUS, C)
    # f = mu1 e^{-C t} integrated over [0, 2] equals M_v = 1
    assert res.mu == pytest.approx(C / -math.expm1(-2 * C), rel=1e-8)
    assert not res.degenerate
    assert np.allclose(res.barrier.dg, res.mu * np.exp(-C * res.barrier.t), rtol=1e-8)
    assert res.barrier.certificate > 0


def test_lower_barrier_homogeneous_closed_form():
    C = 4.0
    res = bm.lower_barrier_w1(1.0, HOMOGENEOUS, C)
    # g = mu0 e^{C t} integrated over [0, 1] equals m_u = 1
    assert res.mu == pytest.approx(C / math.expm1(C), rel=1e-8)
    assert res.barrier.params["inner_value"] == pytest.approx(1.0, rel=1e-8)


def test_barrier_argument_checks():
    with pytest.raises(ArgumentError):
        bm.lower_barrier_w1(1.0, HOMOGENEOUS, 1.0)
    with pytest.raises(ArgumentError):
        bm.upper_barrier_w2(0.0, HOMOGENEOUS, 4.0)


def test_r_hat():
    assert BarrierModule.r_hat(0.03) == pytest.approx(5.408)
    assert 0.03 * math.exp(BarrierModule.r_hat(0.03) - 1.03 / 2) >= 4.0


def test_lemma_check_monotone_in_eps():
    small, large = bm.lemma61_check(0.05), bm.lemma61_check(0.2)
    assert small.k_hat >= large.k_hat
    assert small.k_hat <= 200
    for rep in (small, large):
        assert rep.sufficient_holds
        assert rep.holds_above
        assert rep.slack_at_k_hat_plus_10 > 0
    with pytest.raises(PreconditionError):
        bm.lemma61_check(0.25)


def test_sharpness_example():
    eps = 0.03
    low = bm.sharpness_example(1e4, eps)
    high = bm.sharpness_example(1e6, eps)
    assert low.gamma == pytest.approx(math.exp(1.0 / 16.0 - 2 * eps))
    assert low.gamma > 1
    assert low.ratio_lower_bound > LogLogValue.of(1.0)
    assert high.ratio_lower_bound > low.ratio_lower_bound
    for rep, H in ((low, 1e4), (high, 1e6)):
        assert math.log(math.log(H)) <= rep.K + 0.25
    assert low.to_dict()["H"]["level"] == "plain"


def test_sharpness_rejects_small_H():
    with pytest.raises(PreconditionError):
        bm.sharpness_example(10.0, 0.03)


def test_rasterize_radial_on_grid():
    b = BarrierModule(EllipticityPair(1.0, 1.0)).radial_max_barrier(1.0, 0.5, HOMOGENEOUS, 0.1)
    grid = build_grid(DomainSpec.annulus_sector(inner_radius=0.0, radius=0.5), 9, 9, 0.125, origin=(-0.5, -0.5))
    out = rasterize_radial(b, grid)
    assert out.values[4, 4] == pytest.approx(b.w[0])


def test_h_min_is_reported_by_sharpness():
    eps = 0.03
    floor = bm.h_min(eps)
    assert not floor < LogLogValue.of(1e4)
    assert bm.sharpness_example(1e4, eps).H_min.render() == floor.render()


def _chord_slopes(t, w):
    return np.diff(w) / np.diff(t)


@pytest.mark.parametrize("rnl", [HOMOGENEOUS, LOG_MODEL], ids=["homogeneous", "log_model"])
def test_lower_profile_convex_upper_profile_concave(rnl):
    C = bm.choose_ctilde(rnl)
    low = bm.lower_barrier_w1(1.0, rnl, C).barrier
    up = bm.upper_barrier_w2(1.0, rnl, C).barrier
    s_low, s_up = _chord_slopes(low.t, low.g), _chord_slopes(up.t, up.g)
    assert np.all(np.diff(s_low) >= -1e-9 * np.max(np.abs(s_low)))
    assert np.all(np.diff(s_up) <= 1e-9 * np.max(np.abs(s_up)))
    # profiles stay above and below their tangents at the origin
    assert np.all(low.g >= low.params["mu0"] * low.t - 1e-12)
    assert np.all(up.g <= up.params["mu1"] * up.t + 1e-12)


def test_rasterized_lower_barrier_passes_subsolution_side():
    barrier = bm.lower_barrier_w1(1.0, HOMOGENEOUS, 4.0).barrier
    shell = DomainSpec.annulus_sector(center=(0.0, 2.0), inner_radius=1.0, radius=2.0)
    grid = build_grid(shell, 129, 129, 1 / 32, origin=(-2.0, 0.0))
    field_ = rasterize_radial(barrier, grid)
    region = barrier.stencil_region(grid)
    assert np.any(region & grid.interior)
    prob = Problem(OperatorKind.PUCCI_PLUS_DRIFT, bm.ell, HOMOGENEOUS)
    out = check_viscosity_inequalities(prob, field_, region=region)
    assert out["nodes"] > 0
    assert out["sub_violations"] == 0
