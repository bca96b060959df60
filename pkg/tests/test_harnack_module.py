import math

import pytest

from backend.core import INFINITE, ArgumentError, is_infinite
from backend.harnack_module import (
    HarnackEngine, harnack_integral_original, harnack_integral_rescaled, invert_upper,
    scaling_identity_residual,
)
from backend.nonlinearity_module import Nonlinearity, RescaledNonlinearity

engine = HarnackEngine()


def test_homogeneous_integral_is_log_ratio():
    assert harnack_integral_original(1.0, math.e, 1.0, Nonlinearity.homogeneous()) == pytest.approx(1.0, rel=1e-12)
    # Phi_R(t) = t, so the integrand is 1 / ((r^alpha + 1) t)
    expected = 1.0 / (1.0 + 0.5 ** 0.3)
    assert harnack_integral_rescaled(1.0, math.e, 0.5, 0.5, 0.3, Nonlinearity.homogeneous()) == pytest.approx(expected)


def test_linear_integral_halves():
    assert harnack_integral_original(1.0, math.e, 1.0, Nonlinearity.linear()) == pytest.approx(0.5, rel=1e-12)


def test_divergence_at_zero_and_infinity():
    assert is_infinite(harnack_integral_original(0.0, 1.0, 1.0, Nonlinearity.homogeneous()))
    assert is_infinite(engine.carleson_integral(1.0, INFINITE, RescaledNonlinearity(Nonlinearity.linear(), 1.0)))
    assert is_infinite(engine.carleson_integral(1.0, INFINITE, RescaledNonlinearity(Nonlinearity.log_model(1.0), 1.0)))


def test_equal_levels_give_zero():
    assert harnack_integral_original(2.0, 2.0, 1.0, Nonlinearity.log_model()) == 0.0


@pytest.mark.parametrize("r, R", [(0.5, 0.5), (1.0, 0.25), (0.1, 1.0)])
def test_scaling_identity(r, R):
    assert scaling_identity_residual(0.5, 20.0, r, R, Nonlinearity.log_model(1.0)) < 1e-9


def test_invert_upper_linear_closed_form():
    # int_a^M dt / (2t) = budget
    M = invert_upper(2.0, 1.5, 1.0, Nonlinearity.linear())
    assert M == pytest.approx(2.0 * math.exp(3.0), rel=1e-10)
    assert invert_upper(3.0, 0.0, 1.0, Nonlinearity.linear()) == 3.0


def test_invert_upper_round_trip_log_model():
    nl = Nonlinearity.log_model(1.0)
    M = invert_upper(1.0, 2.0, 0.5, nl)
    assert harnack_integral_original(1.0, M, 0.5, nl) == pytest.approx(2.0, rel=1e-9)


def test_invert_upper_from_zero_with_divergent_integral():
    assert invert_upper(0.0, 5.0, 1.0, Nonlinearity.homogeneous()) == 0.0


def test_argument_checks():
    with pytest.raises(ArgumentError):
        harnack_integral_original(2.0, 1.0, 1.0, Nonlinearity.linear())
    with pytest.raises(ArgumentError):
        harnack_integral_original(1.0, 2.0, 1.5, Nonlinearity.linear())
    with pytest.raises(ArgumentError):
        harnack_integral_rescaled(1.0, 2.0, 0.5, 1.0, 1.0, Nonlinearity.linear())


def test_px_closed_forms():
    assert HarnackEngine.px_carleson_bound(2.0, 0.0, 1.0) == pytest.approx(2.0)
    assert HarnackEngine.px_carleson_bound(4.0, 1.0, 1.0) == pytest.approx(16.0)
    assert is_infinite(HarnackEngine.px_bharnack_bound(0.0, 1.0, 1.0))
    assert HarnackEngine.px_bharnack_bound(0.5, 1.0, 2.0) == pytest.approx(2.0 * 0.5 ** -2.0)
    with pytest.raises(ArgumentError):
        HarnackEngine.px_carleson_bound(1.0, 1.0, 0.5)


def test_linearized_bound_and_domination():
    assert HarnackEngine.linearized_harnack_bound(1.0, math.log(2.0), 1.0) == pytest.approx(3.0)
    assert HarnackEngine.domination_constant(Nonlinearity.homogeneous(), 0.0, 1.0) == 0.0
    assert HarnackEngine.domination_constant(Nonlinearity.linear(), 0.0, 1.0) == pytest.approx(0.5)


def test_certificate_budget():
    cert = engine.certificate(1.0, math.e, 0.5, 1.0, 0.0, Nonlinearity.homogeneous(), budget=1.5)
    assert cert.passed
    assert cert.value == pytest.approx(1.0)
    assert engine.certificate(1.0, INFINITE, 0.5, 1.0, 0.0, Nonlinearity.linear(), budget=1.0).to_dict()["value"] == "inf"


@pytest.mark.parametrize("nl", [Nonlinearity.linear(), Nonlinearity.log_model(1.0)], ids=["linear", "log_model"])
def test_original_integral_is_monotone_in_both_levels(nl):
    levels = [0.05, 0.2, 1.0, 3.0, 20.0]
    by_M = [harnack_integral_original(0.01, M, 0.5, nl) for M in levels]
    by_m = [harnack_integral_original(m, 50.0, 0.5, nl) for m in levels]
    assert all(a <= b for a, b in zip(by_M, by_M[1:]))
    assert all(a >= b for a, b in zip(by_m, by_m[1:]))
