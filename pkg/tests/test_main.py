import json

import pytest

import main


def _config(tmp_path, text="", name="exp.env"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _last_json(err: str) -> dict:
    return json.loads([ln for ln in err.splitlines() if ln.startswith("{")][-1])


def test_parser_knows_every_subcommand():
    parser = main.build_parser()
    for name in main.Subcommand.ALL:
        assert parser.parse_args([name]).subcommand == name
    args = parser.parse_args(["suite", "--threads", "3", "--format", "both"])
    assert (args.threads, args.format) == (3, "both")
    with pytest.raises(SystemExit):
        parser.parse_args(["plot"])


def test_structure_writes_reports(tmp_path):
    out = tmp_path / "out"
    assert main.run(["structure", "--out", str(out)]) == 0
    report = json.loads((out / "structure.json").read_text())
    assert report["subcommand"] == "structure"
    assert report["payload"]["structure"]["passed"]
    assert (out / "structure_eps.csv").exists()


def test_format_flag_limits_outputs(tmp_path):
    out = tmp_path / "out"
    assert main.run(["structure", "--out", str(out), "--format", "csv"]) == 0
    assert not (out / "structure.json").exists()
    assert (out / "structure_eps.csv").exists()


def test_invalid_config_exits_with_two(tmp_path, capsys):
    cfg = _config(tmp_path, "solver.lam=3\nsolver.Lam=1\n")
    assert main.run(["structure", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
    err = _last_json(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert err["details"]["problems"]


def test_missing_config_exits_with_two(tmp_path, capsys):
    assert main.run(["sharpness", "--config", str(tmp_path / "none.env")]) == 2
    assert _last_json(capsys.readouterr().err)["error"] == "ConfigError"


def test_tabulated_phi_without_table_exits_with_two(tmp_path, capsys):
    cfg = _config(tmp_path, "phi.kind=tabulated\n")
    assert main.run(["structure", "--config", cfg, "--out", str(tmp_path / "out")]) == 2


@pytest.mark.slow
def test_sharpness_reports_are_reproducible(tmp_path):
    cfg = _config(tmp_path, "scenario.h_sharpness=1e4\nscenario.lemma_eps=0.2\n")
    paths = []
    for run_dir in ("a", "b"):
        out = tmp_path / run_dir
        assert main.run(["sharpness", "--config", cfg, "--out", str(out), "--format", "json"]) == 0
        paths.append(out / "sharpness.json")
    assert paths[0].read_bytes() == paths[1].read_bytes()
    payload = json.loads(paths[0].read_text())["payload"]
    assert payload["sharpness"][0]["gamma"] > 1


@pytest.mark.slow
@pytest.mark.parametrize("budget, flagged", [("1e-9", True), ("8", False)])
def test_harnack_budget_flag_reaches_the_run(tmp_path, capsys, budget, flagged):
    cfg = _config(tmp_path, "domain.kind=half_space\nphi.kind=homogeneous\nsolver.h=0.0625\n"
                            f"scenario.c2_budget={budget}\n")
    out = tmp_path / "out"
    assert main.run(["harnack", "--config", cfg, "--out", str(out), "--format", "json"]) == 0
    report = json.loads((out / "harnack.json").read_text())
    assert ("budget_exceeded" in report["flags"]) == flagged
    assert ("budget_exceeded" in capsys.readouterr().out) == flagged
