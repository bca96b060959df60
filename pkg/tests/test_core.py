import json
import math

import pytest

from backend.core import (
    INFINITE, AcceptanceFailure, ArgumentError, ConfigError, LabError, NumericalFailure, PreconditionError,
    classify_truncations, env_setting, improper_quad, is_infinite, log_quad, panel_quad,
)


def test_exit_codes_follow_error_kind():
    assert ArgumentError("x").exit_code == 2
    assert ConfigError("x").exit_code == 2
    assert PreconditionError("x").exit_code == 2
    assert NumericalFailure("x").exit_code == 3
    assert AcceptanceFailure("x").exit_code == 1
    assert isinstance(PreconditionError("x"), ValueError)
    assert isinstance(NumericalFailure("x"), RuntimeError)


def test_error_dict_is_json_ready():
    err = NumericalFailure("❌ bracket failed", f_lo=float("inf"), pair=(1, 2.5), value=INFINITE)
    out = err.to_dict()
    assert out["error"] == "NumericalFailure"
    assert out["details"]["pair"] == [1, 2.5]
    assert out["details"]["f_lo"] == "inf"
    assert out["details"]["value"] == "inf"
    json.dumps(out)


def test_infinite_is_a_singleton():
    assert is_infinite(INFINITE)
    assert not is_infinite(math.inf)
    assert type(INFINITE)() is INFINITE


def test_env_setting_prefers_env_file(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    assert env_setting({"LOG_LEVEL": "WARNING"}, "LOG_LEVEL") == "WARNING"
    assert env_setting({}, "LOG_LEVEL") == "DEBUG"
    assert env_setting({}, "NOT_SET_ANYWHERE_KEY", "x") == "x"


def test_log_quad_of_reciprocal():
    assert log_quad(lambda t: 1.0 / t, 1.0, math.e) == pytest.approx(1.0, abs=1e-12)
    assert log_quad(lambda t: 1.0 / t, 2.0, 2.0) == 0.0
    with pytest.raises(ArgumentError):
        log_quad(lambda t: 1.0, 0.0, 1.0)


def test_panel_quad_rejects_reversed_limits():
    assert panel_quad(lambda s: s, 0.0, 2.0) == pytest.approx(2.0)
    with pytest.raises(ArgumentError):
        panel_quad(lambda s: s, 1.0, 0.0)


def test_improper_quad_classifies_tails():
    assert improper_quad(lambda t: 1.0 / t ** 2, 1.0, +1) == pytest.approx(1.0, abs=1e-9)
    assert improper_quad(lambda t: 1.0 / t, 1.0, +1) is INFINITE


def test_classify_truncations():
    assert classify_truncations([math.log(10.0 ** k) for k in range(1, 10)]) == "diverges"
    assert classify_truncations([1 - 10.0 ** -k for k in range(1, 10)]) == "converges"
    assert classify_truncations([1.0, float("inf")]) == "diverges"


def test_lab_error_keeps_details():
    err = LabError("❌ boom", a=1)
    assert err.details == {"a": 1}
    assert err.message == "❌ boom"
