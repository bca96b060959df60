import os
import json
import hashlib
import logging
from typing import List, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from backend.core import BASE_DIR, ConfigError
from backend.geometry_module import LIPSCHITZ_DELTA_LIMIT, DomainKind
from backend.nonlinearity_module import NonlinearityKind
from backend.solver_module import OperatorKind, Scheme

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = os.path.join(BASE_DIR, "data", "default_experiment.env")
LIST_FIELDS = {"r_list", "seeds", "domains", "phis", "h_list", "eps_list", "lemma_eps", "c_trials", "formats",
               "h_sharpness"}


def _split(value) -> list:
    if isinstance(value, (list, tuple)):
        return list(value)
    return [item.strip() for item in str(value).split(",") if item.strip()]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainBlock(_Block):
    kind: DomainKind = DomainKind.HALF_SPACE
    l: float = Field(0.1, ge=0.0)
    table: Optional[str] = None


class PhiBlock(_Block):
    kind: NonlinearityKind = NonlinearityKind.LOG_MODEL
    c: float = Field(1.0, gt=0.0)
    R: float = Field(1.0, gt=0.0, le=1.0)
    table: Optional[str] = None


class SolverBlock(_Block):
    h: float = Field(1.0 / 32, gt=0.0, le=0.5)
    nx: Optional[int] = Field(None, ge=3)
    ny: Optional[int] = Field(None, ge=3)
    tol_solve: float = Field(1e-8, gt=0.0, lt=1e-2)
    max_iters: Optional[int] = Field(None, ge=1)
    scheme: Scheme = Scheme.SEMI_IMPLICIT
    operator: OperatorKind = OperatorKind.PUCCI_MINUS_DRIFT
    lam: float = Field(1.0, gt=0.0)
    Lam: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _ellipticity(self):
        if self.lam > self.Lam:
            raise ValueError("solver.lam must not exceed solver.Lam")
        return self


class ScenarioBlock(_Block):
    r_list: List[float] = [1.0, 0.5, 0.25]
    seeds: List[int] = [0, 1, 2]
    domains: List[DomainKind] = [DomainKind.HALF_SPACE, DomainKind.LIPSCHITZ_GRAPH, DomainKind.CUBE]
    phis: List[NonlinearityKind] = [NonlinearityKind.HOMOGENEOUS, NonlinearityKind.LINEAR,
                                    NonlinearityKind.LOG_MODEL]
    h_list: List[float] = [1.0 / 32, 1.0 / 64]
    alpha: float = Field(0.0, ge=0.0, lt=1.0)
    sigma: float = Field(2.0, gt=1.0)
    c2_budget: float = Field(8.0, gt=0.0)
    c_trials: List[int] = [2, 4, 8, 16, 32, 64, 128, 256]
    H: float = Field(1e4, ge=1e4)
    eps: float = Field(0.03, gt=0.0, lt=0.25)
    h_sharpness: List[float] = [1e4, 1e6]
    lemma_eps: List[float] = [0.05, 0.1, 0.2]
    eps_list: List[float] = [0.05, 0.1, 0.2]
    reifenberg: bool = False

    @field_validator("r_list")
    @classmethod
    def _radii(cls, v):
        if any(not (0 < r <= 1) for r in v):
            raise ValueError("scenario.r_list entries must lie in (0, 1]")
        return v

    @field_validator("lemma_eps", "eps_list")
    @classmethod
    def _eps(cls, v):
        if any(not (0 < e < 0.25) for e in v):
            raise ValueError("eps values must lie in (0, 1/4)")
        return v


class OutputBlock(_Block):
    directory: str = "results"
    formats: List[str] = ["json", "csv"]

    @field_validator("formats")
    @classmethod
    def _formats(cls, v):
        bad = [f for f in v if f not in ("json", "csv")]
        if bad:
            raise ValueError(f"unknown output formats {bad}")
        return v


class ExperimentConfig(_Block):
    domain: DomainBlock = DomainBlock()
    phi: PhiBlock = PhiBlock()
    solver: SolverBlock = SolverBlock()
    scenario: ScenarioBlock = ScenarioBlock()
    output: OutputBlock = OutputBlock()
    source: Optional[str] = None

    @model_validator(mode="after")
    def _paths_and_ranges(self):
        for key, path in (("domain.table", self.domain.table), ("phi.table", self.phi.table)):
            if path and not os.path.isfile(path):
                raise ValueError(f"{key} points to a missing file: {path}")
        if self.scenario.reifenberg and self.domain.l >= LIPSCHITZ_DELTA_LIMIT:
            raise ValueError(f"domain.l = {self.domain.l} must be below 1/8 for the Lipschitz-to-Reifenberg "
                             f"flatness bound")
        return self

    def canonical(self) -> dict:
        data = self.model_dump(mode="json")
        data.pop("source", None)
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def fold_dotted(flat: dict) -> dict:
    """{'solver.h': '0.1'} to {'solver': {'h': '0.1'}}; list fields split on commas."""
    nested: dict = {}
    for key, value in flat.items():
        if value is None or value == "":
            continue
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError("❌ config keys must look like section.name", key=key)
        section, name = parts
        nested.setdefault(section, {})[name] = _split(value) if name in LIST_FIELDS else value
    return nested


def _resolve(path: Optional[str], base: str) -> Optional[str]:
    if not path or os.path.isabs(path):
        return path
    here = os.path.join(base, path)
    return here if os.path.exists(here) else os.path.join(BASE_DIR, path)


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    path = path or DEFAULT_CONFIG
    if not os.path.isfile(path):
        raise ConfigError("❌ config file not found", path=path)
    nested = fold_dotted(dotenv_values(path))
    base = os.path.dirname(os.path.abspath(path))
    for section in ("domain", "phi"):
        if "table" in nested.get(section, {}):
            nested[section]["table"] = _resolve(nested[section]["table"], base)
    try:
        cfg = ExperimentConfig(**nested, source=path)
    except ValidationError as e:
        problems = [{"field": ".".join(map(str, err["loc"])), "message": err["msg"]} for err in e.errors()]
        raise ConfigError("❌ invalid experiment config: " + "; ".join(p["message"] for p in problems),
                          path=path, problems=problems) from e
    logger.info("config %s loaded (hash %s)", path, cfg.config_hash()[:12])
    return cfg


if __name__ == "__main__":
    from rich import print
    cfg = load_config()
    print(f"[info] {cfg.source}: {cfg.config_hash()}")
