import math

import numpy as np
import pytest

from backend.core import ArgumentError, ConfigError, PreconditionError
from backend.nonlinearity_module import (
    Nonlinearity, NonlinearityKind, RegularizedNonlinearity, RescaledNonlinearity, build_nonlinearity,
    check_rescaled_structure, check_structure, eval_eta, eval_eta_R, eval_phi, eval_phi_R, growth_constants,
    load_table, osgood_classify, slowly_increasing_constant,
)


def _write_table(path, rows):
    path.write_text("t,phi\n" + "\n".join(f"{t},{p}" for t, p in rows) + "\n")
    return str(path)


def test_closed_form_values():
    assert eval_phi(Nonlinearity.homogeneous(), 3.0) == 0.0
    assert eval_phi(Nonlinearity.linear(), 3.0) == 3.0
    assert eval_phi(Nonlinearity.log_model(2.0), math.e) == pytest.approx(2.0 * 2.0 * math.e)
    assert eval_phi(Nonlinearity.log_model(), 0.0) == 0.0


def test_eta_log_agrees_with_eta():
    nl = Nonlinearity.log_model(1.5)
    s = np.linspace(-5, 5, 11)
    assert np.allclose(nl.eta_log(s), nl.eta(np.exp(s)))
    assert eval_eta(Nonlinearity.homogeneous(), 2.0) == 0.0


def test_negative_argument_rejected():
    with pytest.raises(ArgumentError):
        eval_phi(Nonlinearity.linear(), -1.0)
    with pytest.raises(ArgumentError):
        eval_phi_R(RescaledNonlinearity(Nonlinearity.linear()), -1.0)


def test_rescaled_majorant():
    rnl = RescaledNonlinearity(Nonlinearity.log_model(), 0.25)
    t = 7.0
    assert eval_phi_R(rnl, t) == pytest.approx(0.25 * Nonlinearity.log_model().phi(t) + t)
    assert eval_eta_R(rnl, t) == pytest.approx(0.25 * Nonlinearity.log_model().eta(t) + 1.0)
    with pytest.raises(ConfigError):
        RescaledNonlinearity(Nonlinearity.linear(), 1.5)


def test_structure_of_model_kinds():
    for nl in (Nonlinearity.linear(), Nonlinearity.log_model(1.0)):
        rep = check_structure(nl)
        assert rep.passed, rep
    homog = check_structure(Nonlinearity.homogeneous())
    assert homog.passed and homog.homogeneous and homog.notes


def test_rescaled_structure_holds_for_log_model():
    out = check_rescaled_structure(RescaledNonlinearity(Nonlinearity.log_model(), 0.1))
    assert out["Phi_ge_t"] and out["p3_prime"]


def test_osgood_classification():
    assert osgood_classify(Nonlinearity.log_model()) == {"at_zero": "diverges", "at_infinity": "diverges"}
    assert osgood_classify(Nonlinearity.linear())["at_zero"] == "diverges"
    assert osgood_classify(Nonlinearity.homogeneous())["at_infinity"] == "diverges"


def test_regularized_profile_is_flat_below_eps():
    reg = RegularizedNonlinearity(Nonlinearity.linear(), 0.1)
    assert reg.phi(0.0) == pytest.approx(1.1 * 0.1)
    assert reg.phi(0.05) == pytest.approx(reg.floor_value)
    assert reg.phi(2.0) == pytest.approx(2.2)
    with pytest.raises(ArgumentError):
        RegularizedNonlinearity(Nonlinearity.linear(), 0.0)


def test_slowly_increasing_and_growth_constants():
    assert slowly_increasing_constant(Nonlinearity.linear(), 0.1, grid=[1.0, 10.0, 100.0]) == pytest.approx(1.0)
    assert slowly_increasing_constant(Nonlinearity.homogeneous(), 0.1) == 0.0
    c1, c2 = growth_constants(Nonlinearity.linear(), 0.1)
    assert c1 == pytest.approx(0.0, abs=1e-12)
    assert c2 == pytest.approx(1.1)


def test_table_round_trip(tmp_path):
    path = _write_table(tmp_path / "phi.csv", [(0.0, 0.0), (1.0, 1.0), (10.0, 20.0), (100.0, 300.0)])
    nl = load_table(path)
    assert nl.kind == NonlinearityKind.TABULATED
    assert nl.phi(10.0) == pytest.approx(20.0)
    with pytest.raises(ArgumentError):
        nl.phi(1000.0)


def test_non_monotone_table_reports_first_pair(tmp_path):
    nl = load_table(_write_table(tmp_path / "bad.csv", [(0.0, 0.0), (1.0, 1.0), (2.0, 0.5), (3.0, 3.0)]))
    with pytest.raises(PreconditionError) as info:
        check_structure(nl)
    assert "first_violating_pair" in info.value.details


def test_build_nonlinearity_by_kind():
    assert build_nonlinearity("homogeneous").is_homogeneous
    assert build_nonlinearity(NonlinearityKind.LOG_MODEL, c=2.0).c == 2.0
    with pytest.raises(ConfigError):
        build_nonlinearity("cubic")
