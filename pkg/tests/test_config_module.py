import pytest

from backend.config_module import DEFAULT_CONFIG, ExperimentConfig, fold_dotted, load_config
from backend.core import ConfigError
from backend.geometry_module import DomainKind
from backend.nonlinearity_module import NonlinearityKind


def _write(tmp_path, text, name="exp.env"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_default_config_loads():
    cfg = load_config()
    assert cfg.source == DEFAULT_CONFIG
    assert cfg.domain.kind == DomainKind.LIPSCHITZ_GRAPH
    assert cfg.scenario.phis == [NonlinearityKind.HOMOGENEOUS, NonlinearityKind.LINEAR, NonlinearityKind.LOG_MODEL]
    assert cfg.scenario.h_sharpness == [1e4, 1e6]
    assert cfg.scenario.reifenberg


def test_list_values_are_split(tmp_path):
    cfg = load_config(_write(tmp_path, "scenario.r_list=1, 0.5\nscenario.seeds=4\noutput.formats=csv\n"))
    assert cfg.scenario.r_list == [1.0, 0.5]
    assert cfg.scenario.seeds == [4]
    assert cfg.output.formats == ["csv"]


def test_fold_dotted_rejects_flat_keys():
    assert fold_dotted({"solver.h": "0.1", "phi.table": ""}) == {"solver": {"h": "0.1"}}
    with pytest.raises(ConfigError):
        fold_dotted({"h": "0.1"})


def test_reifenberg_hypothesis_bounds_l(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "domain.l=0.125\nscenario.reifenberg=true\n"))
    assert exc.value.exit_code == 2
    assert load_config(_write(tmp_path, "domain.l=0.125\n", "loose.env")).domain.l == 0.125


@pytest.mark.parametrize("line", [
    "solver.colour=red",
    "solver.lam=2\nsolver.Lam=1",
    "phi.R=1.5",
    "scenario.lemma_eps=0.3",
    "output.formats=json,xml",
    "domain.table=missing.csv",
])
def test_invalid_configs(tmp_path, line):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, line + "\n"))
    assert exc.value.details["problems"]


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/exp.env")


def test_graph_table_resolves_against_project_root(tmp_path):
    cfg = load_config(_write(tmp_path, "domain.kind=lipschitz_graph\ndomain.table=data/graph_wedge.csv\n"))
    assert cfg.domain.table.endswith("graph_wedge.csv")


def test_config_hash_is_stable(tmp_path):
    a = load_config(_write(tmp_path, "solver.h=0.0625\n", "a.env"))
    b = load_config(_write(tmp_path, "# same settings\nsolver.h=0.0625\n", "b.env"))
    c = load_config(_write(tmp_path, "solver.h=0.125\n", "c.env"))
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 64
    assert ExperimentConfig().config_hash() == ExperimentConfig().config_hash()
