import json
import math

import numpy as np
import pandas as pd

from backend.core import INFINITE, MODULE_VERSION, SCHEMA_VERSION
from backend.loglog_module import LogLogValue
from backend.report_module import ReportWriter, flatten, to_plain
from backend.solver_module import GridField


def test_to_plain_handles_lab_values():
    out = to_plain({"big": LogLogValue.exp_exp(800.0), "inf": INFINITE, "arr": np.arange(3), "flag": np.bool_(True)})
    assert out["big"] == {"level": "double_log", "payload": 800.0, "decimal": "exp(exp(800))"}
    assert out["inf"] == "inf"
    assert out["arr"] == [0, 1, 2]
    assert out["flag"] is True
    assert to_plain(math.inf) == "inf"


def test_envelope_and_sorted_keys(tmp_path):
    writer = ReportWriter(str(tmp_path), "a" * 64, "sharpness")
    path = writer.write_json("report", {"b": 1, "a": 2}, flags=["z", "a", "z"])
    data = json.loads(open(path).read())
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["module_version"] == MODULE_VERSION
    assert data["flags"] == ["a", "z"]
    text = open(path).read()
    assert text.index('"a"') < text.index('"b"')


def test_identical_payloads_give_identical_files(tmp_path):
    payload = {"x": [1.5, 2.5], "y": {"k": LogLogValue.of(3.0)}}
    p1 = ReportWriter(str(tmp_path / "one"), "h", "demo").write_json("r", payload)
    p2 = ReportWriter(str(tmp_path / "two"), "h", "demo").write_json("r", payload)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_csv_columns_are_flattened(tmp_path):
    writer = ReportWriter(str(tmp_path), "h", "carleson")
    path = writer.write_csv("rows", [{"R": 1.0, "fit": {"C": 2, "ok": True}, "s": [1, 2]}])
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["R", "fit.C", "fit.ok", "s"]
    assert frame.loc[0, "s"] == "[1, 2]"


def test_formats_select_outputs(tmp_path):
    writer = ReportWriter(str(tmp_path), "h", "demo", formats=("csv",))
    assert writer.write_json("r", {}) is None
    assert writer.write_csv("t", [{"a": 1}]) is not None
    assert len(writer.written) == 1


def test_field_writer(tmp_path):
    field_ = GridField(3, 3, 0.5, np.arange(9.0), np.ones(9))
    writer = ReportWriter(str(tmp_path), "h", "solve")
    writer.write_field("field", field_)
    assert (tmp_path / "field.field").exists()
    assert pd.read_csv(tmp_path / "field_nodes.csv").shape == (9, 4)


def test_flatten():
    assert flatten({"a": {"b": {"c": 1}}, "d": 2}) == {"a.b.c": 1, "d": 2}
