import os
import math
import logging
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from dotenv import dotenv_values

logger = logging.getLogger(__name__)

MODULE_VERSION = "0.3.0"
SCHEMA_VERSION = 1

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Quadrature tolerances shared by every integral functional
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 400


# ---------- Errors ----------

class LabError(Exception):
    """Base error carrying structured diagnostics and a process exit code."""
    exit_code = 3

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": self.message, "details": _jsonable(self.details)}


class ArgumentError(LabError, ValueError):
    exit_code = 2


class ConfigError(LabError, ValueError):
    exit_code = 2


class PreconditionError(LabError, ValueError):
    exit_code = 2


class NumericalFailure(LabError, RuntimeError):
    exit_code = 3


class AcceptanceFailure(LabError):
    exit_code = 1


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, Infinite):
        return "inf"
    return value


# ---------- +inf sentinel ----------

class Infinite:
    """Tagged +infinity returned by functionals instead of a float inf."""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __reduce__(self):
        return (Infinite, ())


INFINITE = Infinite()


def is_infinite(value) -> bool:
    return value is INFINITE


# ---------- Project root / environment ----------

def find_project_root() -> str:
    """Detect the project directory (the folder holding data/)."""
    path = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
    if os.path.isdir(os.path.join(path, "data")):
        return path
    path = os.getcwd()
    while True:
        if os.path.isdir(os.path.join(path, "data")):
            return path
        parent = os.path.dirname(path)
        if parent == path:
            break
        path = parent
    return os.getcwd()


BASE_DIR = find_project_root()


def load_env(base_dir: Optional[str] = None) -> dict:
    """Read .env from the project root; missing file falls back to os.environ."""
    base_dir = base_dir or BASE_DIR
    env_path = os.path.join(base_dir, ".env")
    if os.path.isfile(env_path):
        env = dict(dotenv_values(env_path))
        logger.debug(".env loaded from %s", env_path)
    else:
        logger.warning(".env not found at %s, using environment variables", env_path)
        env = {}
    return env


def env_setting(env: dict, key: str, default=None):
    return env.get(key, os.environ.get(key, default))


def setup_logging(level: str = "INFO"):
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format=LOG_FORMAT)


# ---------- Quadrature ----------

def panel_quad(f: Callable[[float], float], lo: float, hi: float, panel: float = 1.0) -> float:
    """Adaptive Gauss-Kronrod on panels of width <= panel."""
    if hi < lo:
        raise ArgumentError("❌ lower limit exceeds upper limit", lo=lo, hi=hi)
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / panel)) + 1))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        value, _ = integrate.quad(f, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        total += value
    return total


def log_quad(integrand: Callable[[float], float], a: float, b: float) -> float:
    """Integrate over [a, b] (0 < a <= b) in the coordinate t = e^s."""
    if a > b:
        raise ArgumentError("❌ lower limit exceeds upper limit", a=a, b=b)
    if a == b:
        return 0.0
    if a <= 0:
        raise ArgumentError("❌ log_quad needs a positive lower limit", a=a)
    return panel_quad(lambda s: integrand(math.exp(s)) * math.exp(s), math.log(a), math.log(b))


# truncation offsets 10^k, k = 0..12, used by every improper integral
IMPROPER_DECADES = tuple(range(0, 13))


def improper_quad(f: Callable[[float], float], anchor: float, direction: int,
                  floor: Optional[float] = None, label: str = ""):
    """int of f from anchor to -inf (direction=-1) or +inf (direction=+1).

    Returns the value, or INFINITE when the truncations diverge. `floor`
    caps how far the truncation may go (for integrands that stop being
    evaluable); an indeterminate sequence raises NumericalFailure.
    """
    values = []
    running = 0.0
    prev = 0.0
    for k in IMPROPER_DECADES:
        off = 10.0 ** k
        edge = anchor + direction * off
        if floor is not None:
            edge = max(edge, floor) if direction < 0 else min(edge, floor)
        piece_lo, piece_hi = (edge, anchor - prev) if direction < 0 else (anchor + prev, edge)
        if piece_hi > piece_lo:
            # log-spaced panels keep the work bounded on huge truncations
            running += _decade_quad(f, piece_lo, piece_hi)
        prev = abs(edge - anchor)
        values.append(running)
    verdict = classify_truncations(values, label=label)
    if verdict == "diverges":
        logger.info("improper integral diverges %s (last truncation %.6g)", label, values[-1])
        return INFINITE
    if verdict == "indeterminate":
        raise NumericalFailure("❌ improper integral is neither clearly bounded nor clearly divergent",
                               truncations=values, label=label)
    return values[-1]


def _decade_quad(f, lo: float, hi: float) -> float:
    if hi - lo <= 64.0:
        return panel_quad(f, lo, hi)
    edges = np.geomspace(1.0, hi - lo + 1.0, 64) - 1.0 + lo
    edges[0], edges[-1] = lo, hi
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        value, _ = integrate.quad(f, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        total += value
    return total


def decade_increments(values: np.ndarray) -> np.ndarray:
    return np.diff(np.asarray(values, dtype=float))


def classify_truncations(values, label: str = "") -> str:
    """Divergence classification of a sequence of truncated integrals.

    The truncations advance by a fixed factor; the decision is made from the
    increments between consecutive truncations.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        return "diverges"
    inc = decade_increments(values)
    last = values[-1]
    # threshold rule: large and still growing by >= 20% per step
    growth = values[1:] / np.maximum(values[:-1], 1e-300)
    if last > 50 and np.all(growth[-3:] >= 1.2):
        return "diverges"
    if abs(inc[-1]) <= 1e-10 * (1.0 + abs(last)):
        return "converges"
    ratios = inc[1:] / np.where(inc[:-1] == 0, 1e-300, inc[:-1])
    tail = ratios[-3:]
    logger.debug("truncation increments %s ratios %s %s", inc, ratios, label)
    if np.all(tail >= 0.85):
        return "diverges"
    if np.all(np.abs(tail) <= 0.5):
        return "converges"
    return "indeterminate"


if __name__ == "__main__":
    setup_logging()
    print(log_quad(lambda t: 1.0 / t, 1.0, math.e))
    print(classify_truncations([math.log(10.0 ** k) for k in range(1, 8)]))
