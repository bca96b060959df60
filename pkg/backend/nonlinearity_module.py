import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from backend.core import (
    ArgumentError, ConfigError, PreconditionError,
    log_quad, classify_truncations,
)

logger = logging.getLogger(__name__)

LAMBDA0_SAFETY = 1.05
# Osgood truncations: decades 10^k, k = 1..12 in log(t) for closed-form kinds
OSGOOD_DECADES = tuple(range(1, 13))


class NonlinearityKind(str, Enum):
    HOMOGENEOUS = "homogeneous"
    LINEAR = "linear"
    LOG_MODEL = "log_model"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class Nonlinearity:
    """Drift profile phi(t) = eta(t) t and its metadata."""
    kind: NonlinearityKind
    c: float = 1.0
    lambda0: float = 1.0
    eps_floor: float = 1e-12
    table_t: tuple = ()
    table_phi: tuple = ()
    name: str = ""

    # ---------- Constructors ----------
    @classmethod
    def homogeneous(cls) -> "Nonlinearity":
        return cls(NonlinearityKind.HOMOGENEOUS, c=0.0, lambda0=1.0, name="homogeneous")

    @classmethod
    def linear(cls) -> "Nonlinearity":
        return cls(NonlinearityKind.LINEAR, c=1.0, lambda0=1.0, name="linear")

    @classmethod
    def log_model(cls, c: float = 1.0) -> "Nonlinearity":
        if c <= 0:
            raise ConfigError("❌ log-model scale c must be positive", c=c)
        # (|a+b|+1) <= (|a|+1)(|b|+1), so c * Lambda0 >= 1 suffices
        return cls(NonlinearityKind.LOG_MODEL, c=float(c),
                   lambda0=LAMBDA0_SAFETY * max(1.0, 1.0 / c), name=f"log_model(c={c:g})")

    @classmethod
    def from_table(cls, t: Sequence[float], phi: Sequence[float], name: str = "tabulated") -> "Nonlinearity":
        t = np.asarray(t, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if t.ndim != 1 or t.shape != phi.shape or t.size < 2:
            raise ConfigError("❌ phi table needs two equal-length columns with at least two rows")
        bad = np.nonzero(np.diff(t) <= 0)[0]
        if bad.size:
            i = int(bad[0])
            raise PreconditionError("❌ phi table t column is not strictly increasing",
                                    first_violating_pair=[float(t[i]), float(t[i + 1])])
        if t[0] < 0 or np.any(phi < 0):
            raise ConfigError("❌ phi table must be non-negative")
        positive = t > 0
        if np.any(phi[positive] <= 0):
            raise ConfigError("❌ phi table must be positive for t > 0")
        nl = cls(NonlinearityKind.TABULATED, c=1.0, lambda0=1.0,
                 table_t=tuple(t.tolist()), table_phi=tuple(phi.tolist()), name=name)
        sampled = nl.sampled_lambda0(np.geomspace(max(t[positive][0], 1e-300), t[-1], 50))
        return cls(NonlinearityKind.TABULATED, c=1.0, lambda0=LAMBDA0_SAFETY * sampled,
                   table_t=nl.table_t, table_phi=nl.table_phi, name=name)

    # ---------- Evaluation ----------
    @property
    def is_homogeneous(self) -> bool:
        return self.kind == NonlinearityKind.HOMOGENEOUS

    @property
    def phi0(self) -> float:
        if self.kind == NonlinearityKind.TABULATED and self.table_t[0] == 0.0:
            return self.table_phi[0]
        return 0.0

    def _table_phi(self, t: np.ndarray) -> np.ndarray:
        tt = np.asarray(self.table_t)
        pp = np.asarray(self.table_phi)
        lo, hi = tt[0], tt[-1]
        if np.any(t < lo) or np.any(t > hi):
            raise ArgumentError("❌ phi table extrapolation requested",
                                t_min=float(np.min(t)), t_max=float(np.max(t)), table_range=[lo, hi])
        out = np.empty_like(t)
        pos = tt > 0
        tp, pp_pos = tt[pos], pp[pos]
        inner = t >= tp[0]
        out[inner] = np.exp(np.interp(np.log(t[inner]), np.log(tp), np.log(pp_pos)))
        # segment [0, first positive node] is linear
        if np.any(~inner):
            out[~inner] = np.interp(t[~inner], tt[:2], pp[:2])
        return out

    def phi(self, t):
        """phi(t); scalar in, scalar out."""
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0):
            raise ArgumentError("❌ phi is defined for t >= 0 only", t=float(np.min(arr)))
        if self.kind == NonlinearityKind.HOMOGENEOUS:
            out = np.zeros_like(arr)
        elif self.kind == NonlinearityKind.LINEAR:
            out = arr.copy()
        elif self.kind == NonlinearityKind.LOG_MODEL:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(arr > 0, self.c * (np.abs(np.log(np.where(arr > 0, arr, 1.0))) + 1.0) * arr, 0.0)
        else:
            out = self._table_phi(np.atleast_1d(arr)).reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def eta(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(arr <= 0):
            raise ArgumentError("❌ eta is defined for t > 0 only", t=float(np.min(arr)))
        if self.kind == NonlinearityKind.HOMOGENEOUS:
            out = np.zeros_like(arr)
        elif self.kind == NonlinearityKind.LINEAR:
            out = np.ones_like(arr)
        elif self.kind == NonlinearityKind.LOG_MODEL:
            out = self.c * (np.abs(np.log(arr)) + 1.0)
        else:
            out = np.asarray(self.phi(arr)) / arr
        return float(out) if np.ndim(out) == 0 else out

    def eta_log(self, s):
        """eta(e^s), valid far outside the float range of t for closed-form kinds."""
        s = np.asarray(s, dtype=float)
        if self.kind == NonlinearityKind.HOMOGENEOUS:
            out = np.zeros_like(s)
        elif self.kind == NonlinearityKind.LINEAR:
            out = np.ones_like(s)
        elif self.kind == NonlinearityKind.LOG_MODEL:
            out = self.c * (np.abs(s) + 1.0)
        else:
            out = np.asarray(self.eta(np.exp(s)))
        return float(out) if np.ndim(out) == 0 else out

    def sampled_lambda0(self, grid) -> float:
        """Tightest sampled constant in eta(st) <= L eta(s) eta(t)."""
        if self.is_homogeneous:
            return 1.0
        g = np.asarray(grid, dtype=float)
        ls = np.log(g)
        if self.kind == NonlinearityKind.TABULATED:
            lo, hi = math.log(min(t for t in self.table_t if t > 0)), math.log(self.table_t[-1])
            S, T = np.meshgrid(ls, ls, indexing="ij")
            ok = (S + T >= lo) & (S + T <= hi)
            num = np.full(S.shape, np.nan)
            num[ok] = self.eta_log(S[ok] + T[ok])
        else:
            S, T = np.meshgrid(ls, ls, indexing="ij")
            num = self.eta_log(S + T)
        den = np.multiply.outer(self.eta_log(ls), self.eta_log(ls))
        return float(np.nanmax(num / den))


@dataclass(frozen=True)
class RescaledNonlinearity:
    """Phi_R(t) = R phi(t) + t with eta_R(t) = R eta(t) + 1."""
    base: Nonlinearity
    R: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.R <= 1.0):
            raise ConfigError("❌ scale R must lie in (0, 1]", R=self.R)

    def phi_R(self, t):
        """Drift R*phi(t) of the rescaled equation."""
        return self.R * np.asarray(self.base.phi(t)) if np.ndim(t) else self.R * self.base.phi(t)

    def Phi(self, t):
        if np.ndim(t):
            return self.R * np.asarray(self.base.phi(t)) + np.asarray(t, dtype=float)
        return self.R * self.base.phi(t) + float(t)

    def eta_R(self, t):
        if np.ndim(t):
            return self.R * np.asarray(self.base.eta(t)) + 1.0
        return self.R * self.base.eta(t) + 1.0

    def eta_R_log(self, s):
        if np.ndim(s):
            return self.R * np.asarray(self.base.eta_log(s)) + 1.0
        return self.R * self.base.eta_log(s) + 1.0


@dataclass(frozen=True)
class RegularizedNonlinearity:
    """phi_eps(t) = (1 + eps) max(phi(t), phi(eps)); constant on [0, eps]."""
    base: Nonlinearity
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ArgumentError("❌ regularization eps must be positive", eps=self.eps)
        try:
            self.base.phi(self.eps)
        except ArgumentError as e:
            raise PreconditionError("❌ phi table has no value at eps", eps=self.eps, **e.details) from e

    @property
    def kind(self) -> NonlinearityKind:
        return self.base.kind

    @property
    def is_homogeneous(self) -> bool:
        return self.base.is_homogeneous

    @property
    def name(self) -> str:
        return f"{self.base.name}_eps={self.eps:g}"

    @property
    def floor_value(self) -> float:
        return (1.0 + self.eps) * self.base.phi(self.eps)

    def phi(self, t):
        arr = np.asarray(t, dtype=float)
        out = (1.0 + self.eps) * np.maximum(np.asarray(self.base.phi(arr)), self.base.phi(self.eps))
        return float(out) if np.ndim(out) == 0 else out

    def eta(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(arr <= 0):
            raise ArgumentError("❌ eta is defined for t > 0 only", t=float(np.min(arr)))
        out = np.asarray(self.phi(arr)) / arr
        return float(out) if np.ndim(out) == 0 else out

    def eta_log(self, s):
        s = np.asarray(s, dtype=float)
        above = s >= math.log(self.eps)
        flat = self.floor_value * np.exp(-np.minimum(s, math.log(self.eps)))
        out = np.where(above, (1.0 + self.eps) * np.asarray(self.base.eta_log(s)), flat)
        return float(out) if np.ndim(out) == 0 else out


@dataclass
class StructureReport:
    kind: str
    homogeneous: bool
    p1_phi_ge_t: bool
    p1_eta_monotone: bool
    p1_first_violation: Optional[list]
    p2_tail_value: float
    p2_tail_decreasing: bool
    lambda0_sampled: float
    lambda0: float
    p3_pass: bool
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.p1_phi_ge_t and self.p1_eta_monotone and self.p2_tail_decreasing and self.p3_pass


def default_sample_grid(n: int = 401) -> np.ndarray:
    return np.geomspace(1e-8, 1e8, n)


# ---------- Operations ----------

def eval_phi(nl: Nonlinearity, t: float) -> float:
    if t < 0:
        raise ArgumentError("❌ phi is defined for t >= 0 only", t=t)
    return nl.phi(float(t))


def eval_phi_R(rnl: RescaledNonlinearity, t: float) -> float:
    if t < 0:
        raise ArgumentError("❌ Phi_R is defined for t >= 0 only", t=t)
    return rnl.Phi(float(t))


def eval_eta(nl: Nonlinearity, t: float) -> float:
    return nl.eta(float(t))


def eval_eta_R(rnl: RescaledNonlinearity, t: float) -> float:
    return rnl.eta_R(float(t))


def _grid_for(nl: Nonlinearity, grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if nl.kind == NonlinearityKind.TABULATED:
        lo = max(nl.table_t[0], min(t for t in nl.table_t if t > 0))
        g = g[(g >= lo) & (g <= nl.table_t[-1])]
    return g


def check_structure(nl: Nonlinearity, sample_grid=None) -> StructureReport:
    """Numerical check of the structural conditions on phi."""
    grid = default_sample_grid() if sample_grid is None else np.asarray(sample_grid, dtype=float)
    if nl.kind != NonlinearityKind.TABULATED and (grid.min() > 1e-8 * (1 + 1e-9) or grid.max() < 1e8 * (1 - 1e-9)):
        raise ArgumentError("❌ sample grid must span [1e-8, 1e8]", grid_min=float(grid.min()), grid_max=float(grid.max()))
    grid = _grid_for(nl, grid)
    notes = []
    if nl.is_homogeneous:
        notes.append("homogeneous: eta == 0, conditions on phi >= t bypassed")
        return StructureReport(nl.kind.value, True, True, True, None, 0.0, True, 1.0, nl.lambda0, True, notes)

    phi = np.asarray(nl.phi(grid))
    if nl.kind == NonlinearityKind.TABULATED:
        drop = np.nonzero(np.diff(phi) < 0)[0]
        if drop.size:
            i = int(drop[0])
            raise PreconditionError("❌ tabulated phi is not monotone",
                                    first_violating_pair=[[float(grid[i]), float(phi[i])],
                                                          [float(grid[i + 1]), float(phi[i + 1])]])
    phi_ge_t = bool(np.all(phi >= grid * (1 - 1e-12)))
    eta = phi / grid
    tol = 1e-12 * np.maximum(1.0, eta[:-1])
    below = grid[:-1] < 1.0
    d = np.diff(eta)
    bad_low = np.nonzero(below & (d > tol))[0]
    bad_high = np.nonzero(~below & (d < -tol))[0]
    first = None
    eta_monotone = bad_low.size == 0 and bad_high.size == 0
    if not eta_monotone:
        i = int(min(np.concatenate([bad_low, bad_high])))
        first = [float(grid[i]), float(grid[i + 1])]
        logger.info("eta monotonicity fails between t=%g and t=%g", *first)

    # tail proxy for t eta'(t)/eta(t) * log eta(t) -> 0
    tail = grid >= max(math.e ** 2, grid[len(grid) // 2])
    lt = np.log(grid[tail])
    le = np.log(eta[tail])
    q = np.diff(le) / np.diff(lt) * 0.5 * (le[1:] + le[:-1])
    tail_value = float(abs(q[-1])) if q.size else 0.0
    k = max(3, q.size // 5)
    tail_decreasing = bool(q.size < 2 or np.all(np.diff(np.abs(q[-k:])) <= 1e-12) or np.max(np.abs(q)) <= 1e-12)
    if not tail_decreasing:
        notes.append(f"P2 tail is not monotone; tail value {tail_value:.3e}")

    lam_sampled = nl.sampled_lambda0(np.geomspace(grid[0], grid[-1], 50))
    p3 = lam_sampled <= nl.lambda0 * (1 + 1e-12)
    return StructureReport(nl.kind.value, False, phi_ge_t, eta_monotone, first,
                           tail_value, tail_decreasing, lam_sampled, nl.lambda0, bool(p3), notes)


def check_rescaled_structure(rnl: RescaledNonlinearity, grid=None) -> dict:
    """Phi_R >= t and eta_R(st) <= Lambda0 eta(s) eta_R(t) on a 50x50 log grid."""
    nl = rnl.base
    g = _grid_for(nl, np.geomspace(1e-6, 1e6, 50) if grid is None else grid)
    phi_ge = bool(np.all(np.asarray(rnl.Phi(g)) >= g * (1 - 1e-12)))
    if nl.is_homogeneous:
        return {"Phi_ge_t": phi_ge, "p3_prime": True, "worst_ratio": 0.0, "R": rnl.R}
    ls = np.log(g)
    S, T = np.meshgrid(ls, ls, indexing="ij")
    ok = np.ones_like(S, dtype=bool)
    if nl.kind == NonlinearityKind.TABULATED:
        ok = (np.exp(S + T) >= g[0]) & (np.exp(S + T) <= g[-1])
    lhs = np.full(S.shape, np.nan)
    lhs[ok] = rnl.eta_R_log(S[ok] + T[ok])
    rhs = nl.lambda0 * np.multiply.outer(nl.eta_log(ls), rnl.eta_R_log(ls))
    worst = float(np.nanmax(lhs / rhs))
    return {"Phi_ge_t": phi_ge, "p3_prime": bool(worst <= 1 + 1e-12), "worst_ratio": worst, "R": rnl.R}


def _osgood_closed_form(nl: Nonlinearity, side: str) -> str:
    sign = -1.0 if side == "zero" else 1.0
    f = lambda sigma: 1.0 / nl.eta_log(sign * sigma)
    running = _quad_unit(f)
    values = []
    lo = 1.0
    for k in OSGOOD_DECADES:
        hi = 10.0 ** k
        running += log_quad(f, lo, hi)
        values.append(running)
        lo = hi
    return classify_truncations(values, label=f"{nl.name}@{side}")


def _quad_unit(f) -> float:
    from scipy import integrate
    value, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
    return value


def _osgood_table(nl: Nonlinearity, side: str) -> str:
    tpos = [t for t in nl.table_t if t > 0]
    lo, hi = tpos[0], tpos[-1]
    anchor = min(max(1.0, lo), hi)
    f = lambda t: 1.0 / nl.phi(t)
    values = []
    k = 1
    while True:
        edge = anchor * 10.0 ** (-k if side == "zero" else k)
        if edge < lo or edge > hi:
            break
        a, b = (edge, anchor) if side == "zero" else (anchor, edge)
        values.append(log_quad(f, a, b))
        k += 1
    if len(values) < 4:
        return "indeterminate"
    return classify_truncations(values, label=f"{nl.name}@{side}")


def osgood_classify(nl: Nonlinearity) -> dict:
    """Classify int_0^1 dt/phi and int_1^inf dt/phi by truncation growth."""
    if nl.is_homogeneous:
        return {"at_zero": "diverges", "at_infinity": "diverges"}
    if nl.kind == NonlinearityKind.TABULATED:
        if nl.phi0 > 0:
            at_zero = "converges"
        else:
            at_zero = _osgood_table(nl, "zero")
        return {"at_zero": at_zero, "at_infinity": _osgood_table(nl, "infinity")}
    return {"at_zero": _osgood_closed_form(nl, "zero"), "at_infinity": _osgood_closed_form(nl, "infinity")}


def slowly_increasing_constant(nl: Nonlinearity, eps: float, grid=None) -> float:
    """C_eps = max over t >= 1 of eta(t) / t^eps."""
    if eps <= 0:
        raise ArgumentError("❌ eps must be positive", eps=eps)
    g = _grid_for(nl, default_sample_grid() if grid is None else grid)
    g = g[g >= 1.0]
    if nl.is_homogeneous or g.size == 0:
        return 0.0
    return float(np.max(np.asarray(nl.eta(g)) / g ** eps))


def growth_constants(nl: Nonlinearity, eps: float, grid=None) -> tuple:
    """(C1, C2) with phi_eps(t) - phi_eps(s) <= C1 (t+s)|t-s| + C2 |t-s| on sampled pairs."""
    if eps <= 0:
        raise ArgumentError("❌ eps must be positive", eps=eps)
    g = np.concatenate([[0.0], np.geomspace(1e-4, 1e4, 120)]) if grid is None else np.asarray(grid, dtype=float)
    phi_e = np.asarray(RegularizedNonlinearity(nl, eps).phi(g))
    S, T = np.meshgrid(g, g, indexing="ij")
    PS, PT = np.meshgrid(phi_e, phi_e, indexing="ij")
    mask = T > S
    q = (PT - PS)[mask] / (T - S)[mask]
    tot = (T + S)[mask]
    small = tot <= 1.0
    c2 = float(np.max(q[small])) if np.any(small) else 0.0
    c1 = float(np.max(np.maximum(q - c2, 0.0) / tot))
    return c1, max(c2, 0.0)


def load_table(path: str) -> Nonlinearity:
    """Two-column CSV (t, phi) to a tabulated nonlinearity."""
    try:
        frame = pd.read_csv(path, comment="#")
    except FileNotFoundError as e:
        raise ConfigError("❌ phi table not found", path=path) from e
    if frame.shape[1] < 2:
        raise ConfigError("❌ phi table needs two columns t, phi", path=path)
    return Nonlinearity.from_table(frame.iloc[:, 0].to_numpy(), frame.iloc[:, 1].to_numpy(), name=str(path))


def build_nonlinearity(kind: str, c: float = 1.0, table: Optional[str] = None) -> Nonlinearity:
    kind = str(getattr(kind, "value", kind)).lower()
    if kind == NonlinearityKind.HOMOGENEOUS.value:
        return Nonlinearity.homogeneous()
    if kind == NonlinearityKind.LINEAR.value:
        return Nonlinearity.linear()
    if kind in (NonlinearityKind.LOG_MODEL.value, "log-model"):
        return Nonlinearity.log_model(c)
    if kind == NonlinearityKind.TABULATED.value:
        if not table:
            raise ConfigError("❌ phi.table is required for a tabulated nonlinearity")
        return load_table(table)
    raise ConfigError("❌ unknown nonlinearity kind", kind=kind)


if __name__ == "__main__":
    from rich import print
    for nl in (Nonlinearity.homogeneous(), Nonlinearity.linear(), Nonlinearity.log_model(1.0)):
        print(f"[info] {nl.name}: {check_structure(nl)}")
        print(f"[info] osgood: {osgood_classify(nl)}")
