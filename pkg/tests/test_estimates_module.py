import math

import numpy as np
import pytest

from backend.config_module import ExperimentConfig
from backend.core import ArgumentError, PreconditionError, is_infinite
from backend.estimates_module import (
    EstimateReport, EstimatesModule, Instance, EstimateKind, boundary_data, build_instance_family, default_exponent,
    domain_window, relative_spread, run_family,
)
from backend.geometry_module import DomainSpec
from backend.nonlinearity_module import Nonlinearity
from backend.solver_module import EXTERIOR, build_grid

est = EstimatesModule()
HALF = DomainSpec.half_space()


def _linear_field(shift: float = 0.0):
    """u = x2 + shift on the half-space window [-2, 2] x [0, 2] with h = 1/32."""
    grid = build_grid(HALF, 129, 65, 1 / 32, (-2.0, 0.0))
    Y = grid.points()[..., 1]
    return grid.with_values(np.where(grid.mask != EXTERIOR, Y + shift, 0.0))


def test_relative_spread():
    assert relative_spread([1.0, 2.0]) == pytest.approx(0.5)
    assert relative_spread([]) == 0.0
    assert relative_spread([3.0, None, math.inf]) == 0.0


def test_report_constant_dominates_instances():
    with pytest.raises(ArgumentError):
        EstimateReport(EstimateKind.CARLESON, [{}], 1.0, [2.0], 0.0)
    rep = EstimateReport(EstimateKind.CARLESON, [{}], 2.0, [2.0, math.inf], 0.0)
    assert rep.to_dict()["theorem"] == "carleson"


def test_interior_harnack_on_linear_field():
    cert = est.verify_interior_harnack(_linear_field(), (0.0, 1.0), 0.5, 1.0, Nonlinearity.homogeneous())
    assert (cert.m, cert.M) == pytest.approx((0.5, 1.5))
    assert cert.value == pytest.approx(math.log(3.0) / 2.0, rel=1e-10)


def test_interior_harnack_needs_interior_ball():
    with pytest.raises(ArgumentError):
        est.verify_interior_harnack(_linear_field(), (0.0, 0.3), 0.5, 1.0, Nonlinearity.homogeneous())


def test_carleson_on_linear_field():
    rep = est.verify_carleson(_linear_field(), HALF, 1.0, Nonlinearity.log_model(1.0))
    assert rep.details["uA"] == pytest.approx(0.75)
    assert rep.fitted_constant == 2.0
    assert rep.per_instance_values == [0.0]


def test_nonvanishing_boundary_is_rejected():
    with pytest.raises(PreconditionError):
        est.verify_carleson(_linear_field(shift=1.0), HALF, 1.0, Nonlinearity.log_model(1.0))


def test_osc_decay_of_linear_field():
    fit = est.verify_osc_decay(_linear_field(), (0.0, 1.0), 0.5, 1.0, Nonlinearity.log_model(1.0))
    assert fit.first == pytest.approx(0.5)
    assert fit.second == 0.0
    assert all(s >= -1e-12 for s in fit.slack)


def test_interior_holder_fit():
    fit = est.verify_interior_holder(_linear_field(), (0.0, 1.0), 0.5, 1.0, Nonlinearity.homogeneous())
    assert 0.0 < fit.second <= 0.12
    assert all(s >= -1e-12 for s in fit.slack)


def test_boundary_harnack_of_equal_fields():
    u = _linear_field()
    rep = est.verify_boundary_harnack(u, u, HALF, 1.0, Nonlinearity.homogeneous())
    assert rep.sup_ratio == pytest.approx(1.0)
    assert not rep.branches["mu0_zero"]
    assert not rep.branches["mu1_infinite"]
    assert 0.0 < rep.mu0 < rep.mu1


def test_boundary_harnack_zero_lower_branch_takes_u_at_corkscrew():
    # u vanishes on the ball of the lower barrier, so m_u = 0
    grid = build_grid(HALF, 129, 65, 1 / 32, (-2.0, 0.0))
    Y = grid.points()[..., 1]
    u = grid.with_values(np.where(grid.mask != EXTERIOR, np.maximum(Y * (1.0 - Y), 0.0), 0.0))
    rep = est.verify_boundary_harnack(u, u, HALF, 1.0, Nonlinearity.homogeneous())
    assert rep.branches["mu0_zero"]
    assert "mu0_zero_branch" in rep.flags
    assert rep.mu0 == 0.0
    assert rep.mu1 == pytest.approx(0.1875, rel=1e-12)
    assert rep.sup_ratio == pytest.approx(1.0)
    assert is_infinite(rep.integral)


@pytest.mark.parametrize("k", [0.01, 7.5])
def test_homogeneous_certificates_ignore_data_scaling(k):
    nl = Nonlinearity.homogeneous()
    u = _linear_field()
    scaled = u.with_values(k * u.values)
    base = est.verify_interior_harnack(u, (0.0, 1.0), 0.5, 1.0, nl)
    assert est.verify_interior_harnack(scaled, (0.0, 1.0), 0.5, 1.0, nl).value == pytest.approx(base.value, rel=1e-10)
    ref = est.verify_boundary_harnack(u, u, HALF, 1.0, nl)
    rep = est.verify_boundary_harnack(scaled, scaled, HALF, 1.0, nl)
    assert rep.mu0 == pytest.approx(k * ref.mu0, rel=1e-6)
    assert rep.mu1 == pytest.approx(k * ref.mu1, rel=1e-6)
    assert rep.integral == pytest.approx(ref.integral, rel=1e-6)
    assert rep.sup_ratio == pytest.approx(ref.sup_ratio)


def test_px_corollary_on_linear_field():
    out = est.px_corollary_check(_linear_field(), HALF, 1.0)
    assert out["fitted_C"] == 2
    assert out["passed"]


def test_proof_diagnostics_starts_near_corkscrew():
    chain = est.proof_diagnostics(_linear_field(), HALF, 1.0, Nonlinearity.homogeneous())
    assert chain[0]["u"] == pytest.approx(0.75)


def test_domain_windows():
    assert domain_window(DomainSpec.cube(), 1.0)["radius"] == 1.0 / 8
    win = domain_window(HALF, 0.5)
    assert win["origin"] == (-2.0, 0.0)
    assert win["extent"] == (4.0, 2.0)
    assert win["radius"] == 0.5
    ann = domain_window(DomainSpec.annulus_sector(), 1.0)
    assert ann["w"] == (0.0, -2.0)


def test_boundary_data_vanishes_on_the_patch():
    data = boundary_data(HALF, 3)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    vals = data(pts)
    assert vals[0] == 0.0 and vals[1] == 0.0
    assert vals[2] > 0
    assert np.array_equal(vals, boundary_data(HALF, 3)(pts))
    wedge = DomainSpec.wedge(0.1)
    assert boundary_data(wedge, 0)(np.array([[1.0, 0.1]]))[0] == pytest.approx(0.0)


def test_default_exponent():
    assert default_exponent(np.array([[0.0, 5.0], [4.0, 0.0]])) == pytest.approx([2.0, 3.0])


def test_instance_family_is_sorted():
    cfg = ExperimentConfig(scenario={"r_list": [1.0, 0.5], "seeds": [1, 0], "domains": ["cube"], "phis": ["linear"]})
    family = build_instance_family(cfg)
    assert len(family) == 4
    assert family == sorted(family)
    assert family[0] == Instance("cube", "linear", 0, 0.5)


def test_boundary_holder_on_flat_boundary():
    fit = est.verify_boundary_holder(_linear_field(), HALF, (0.0, 0.0), 0.5, 1.0, Nonlinearity.homogeneous())
    assert fit.first <= 1.0 + 1e-9
    assert fit.second == pytest.approx(0.12)
    assert "alpha_at_window_edge" in fit.flags
    assert any(f.startswith("delta=") for f in fit.flags)
    assert all(s >= -1e-12 for s in fit.slack)


def test_boundary_holder_needs_a_flat_boundary():
    with pytest.raises(PreconditionError):
        est.verify_boundary_holder(_linear_field(), DomainSpec.wedge(0.1), (0.0, 0.0), 0.5, 1.0,
                                   Nonlinearity.homogeneous())


def test_blowup_profile_of_linear_field():
    rep = est.blowup_profile(_linear_field(), HALF, 1.0, Nonlinearity.homogeneous(), 0.5, delta_trial=1.0)
    assert len(rep.s) >= 2
    assert rep.s == sorted(rep.s)
    assert rep.monotone
    assert rep.S == pytest.approx(rep.s[-1])
    assert rep.gamma == pytest.approx(0.0, abs=1e-9)
    assert rep.alternative in ("S0", "S1-S3")
    assert rep.delta_trial == 1.0


@pytest.mark.slow
def test_run_family_on_one_instance():
    cfg = ExperimentConfig(solver={"h": 1.0 / 16},
                           scenario={"r_list": [1.0], "seeds": [0], "domains": ["half_space"], "phis": ["homogeneous"]})
    reports = run_family(cfg, threads=2)
    assert set(reports) == {"interior_harnack", "carleson", "blowup"}
    assert not any(f.startswith("failed:") for f in reports["carleson"].flags)
    assert len(reports["interior_harnack"].per_instance_values) == 1
