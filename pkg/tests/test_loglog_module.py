import math

import pytest
from scipy import integrate

from backend.core import ArgumentError, NumericalFailure
from backend.loglog_module import DOUBLE_LOG, LogLogValue, loglog_integral, solve_log_level


def test_plain_products_move_to_log_level():
    v = LogLogValue.of(10.0) * LogLogValue.of(100.0)
    assert v.log == pytest.approx(math.log(1000.0))
    assert (LogLogValue.of(1000.0) / LogLogValue.of(10.0)).to_float() == pytest.approx(100.0)


def test_ordering_across_levels():
    assert LogLogValue.exp_exp(800.0) > LogLogValue.exp_exp(799.0)
    assert LogLogValue.exp_exp(800.0) > LogLogValue.of(1e300)
    assert LogLogValue.of(0.5) < LogLogValue.of(2.0)
    assert LogLogValue.from_log(math.log(5.0)) == LogLogValue.of(5.0)


def test_power_of_double_exponential():
    v = LogLogValue.exp_exp(900.0) ** 2.0
    assert v.level == DOUBLE_LOG
    assert v.loglog == pytest.approx(900.0 + math.log(2.0))


def test_render_and_float():
    assert LogLogValue.exp_exp(1.0).to_float() == pytest.approx(math.e ** math.e)
    assert LogLogValue.exp_exp(800.0).render() == "exp(exp(800))"
    with pytest.raises(NumericalFailure):
        LogLogValue.exp_exp(800.0).to_float()
    with pytest.raises(ArgumentError):
        LogLogValue.of(-1.0)


def test_integral_matches_direct_quadrature():
    ref, _ = integrate.quad(lambda s: math.exp(math.exp(s)), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    J = loglog_integral(0.0, 1.0, 0.0, 1.0)
    assert J.log_value == pytest.approx(math.log(ref), rel=1e-10)
    assert J.loglog_lower <= J.loglog_value <= J.loglog_upper


def test_integral_of_huge_exponent_stays_finite():
    J = loglog_integral(700.0, 0.5, 0.0, 1.0)
    assert J.loglog_value == pytest.approx(700.5, abs=1e-9)
    assert J.value.level == DOUBLE_LOG
    with pytest.raises(NumericalFailure):
        loglog_integral(800.0, 0.5, 0.0, 1.0)


def test_integral_rejects_empty_range():
    with pytest.raises(ArgumentError):
        loglog_integral(0.0, 1.0, 1.0, 1.0)


def test_solve_log_level_inverts_the_integral():
    make = lambda K: loglog_integral(K, 0.5, 0.0, 0.5)
    K = solve_log_level(math.log(1e4), make, 0.0, 10.0)
    assert make(K).log_value == pytest.approx(math.log(1e4), rel=1e-12)


def test_double_log_order_follows_payload():
    payloads = [-2.0, 0.0, 0.5, 3.0, 700.0, 750.0, 900.0]
    values = [LogLogValue.exp_exp(p) for p in reversed(payloads)]
    assert [v.payload for v in sorted(values)] == payloads
    mid = LogLogValue.from_log(math.exp(2.0))
    assert LogLogValue.exp_exp(1.5) < mid < LogLogValue.exp_exp(2.5)
    assert LogLogValue.of(0.9) < LogLogValue.exp_exp(-30.0)


def test_equal_values_hash_alike():
    assert len({LogLogValue.of(math.e), LogLogValue.from_log(1.0), LogLogValue.exp_exp(0.0)}) == 1
    assert len({LogLogValue.of(0.5), LogLogValue.from_log(math.log(0.5))}) == 1


def test_double_log_times_small_number():
    v = LogLogValue.exp_exp(0.0) * LogLogValue.of(1e-3)
    assert v.to_float() == pytest.approx(math.e * 1e-3, rel=1e-12)
    assert (LogLogValue.of(1e-3) * LogLogValue.exp_exp(0.0)).to_float() == pytest.approx(math.e * 1e-3, rel=1e-12)
    with pytest.raises(NumericalFailure):
        LogLogValue.exp_exp(709.5) * LogLogValue.from_log(-1.7e308)
