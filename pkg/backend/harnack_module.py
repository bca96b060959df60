import math
import logging
from dataclasses import dataclass, asdict
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq

from backend.core import (
    ArgumentError, NumericalFailure, INFINITE, Infinite, is_infinite,
    panel_quad, improper_quad,
)
from backend.nonlinearity_module import Nonlinearity, NonlinearityKind, RescaledNonlinearity

logger = logging.getLogger(__name__)

Level = Union[float, Infinite]

# log(1e-300): lowest evaluable t for tabulated profiles
_LOG_TINY = math.log(1e-300)


@dataclass
class HarnackCertificate:
    """Record of one Harnack / Carleson functional evaluation."""
    m: float
    M: Level
    r: float
    R: float
    alpha: float
    value: Level
    budget: Optional[float] = None
    passed: Optional[bool] = None

    def __post_init__(self):
        if not is_infinite(self.M) and self.m > self.M:
            raise ArgumentError("❌ certificate needs m <= M", m=self.m, M=self.M)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("M", "value"):
            if is_infinite(getattr(self, key)):
                d[key] = "inf"
        return d


class HarnackEngine:
    """Integral functionals written in s = log t, where t dt-weight becomes a bounded integrand."""

    @staticmethod
    def _check_levels(m, M):
        if m < 0:
            raise ArgumentError("❌ levels must be non-negative", m=m)
        if not is_infinite(M) and m > M:
            raise ArgumentError("❌ lower level exceeds upper level", m=m, M=M)

    @staticmethod
    def integrate_log(g, m: float, M: Level, nl: Nonlinearity, label: str = "") -> Level:
        """int_m^M of an integrand whose t-weighted form in s = log t is g(s)."""
        HarnackEngine._check_levels(m, M)
        if not is_infinite(M) and m == M:
            return 0.0
        floor = _LOG_TINY if nl.kind == NonlinearityKind.TABULATED else None
        if m == 0:
            top = math.log(M) if not is_infinite(M) else 0.0
            below = improper_quad(g, top, -1, floor=floor, label=f"{label} at 0")
            if is_infinite(below):
                logger.warning("integral %s diverges at t = 0", label)
                return INFINITE
            if not is_infinite(M):
                return below
            above = improper_quad(g, 0.0, +1, label=f"{label} at inf")
            return INFINITE if is_infinite(above) else below + above
        lo = math.log(m)
        if is_infinite(M):
            above = improper_quad(g, lo, +1, label=f"{label} at inf")
            return above
        return panel_quad(g, lo, math.log(M))

    # ---------- Operations ----------
    def harnack_integral_original(self, m: float, M: Level, rho: float, nl: Nonlinearity) -> Level:
        """int_m^M dt / (rho^2 phi(t/rho) + t)."""
        if not (0.0 < rho <= 1.0):
            raise ArgumentError("❌ radius rho must lie in (0, 1]", rho=rho)
        lr = math.log(rho)
        g = lambda s: 1.0 / (rho * nl.eta_log(s - lr) + 1.0)
        return self.integrate_log(g, m, M, nl, label="original")

    def harnack_integral_rescaled(self, m: float, M: Level, r: float, R: float, alpha: float,
                                  nl: Nonlinearity) -> Level:
        """int_m^M dt / (r^alpha Phi_R(t) + t)."""
        if not (0.0 < r <= 1.0):
            raise ArgumentError("❌ radius r must lie in (0, 1]", r=r)
        if not (0.0 <= alpha < 1.0):
            raise ArgumentError("❌ alpha must lie in [0, 1)", alpha=alpha)
        rnl = RescaledNonlinearity(nl, R)
        ra = r ** alpha
        g = lambda s: 1.0 / (ra * rnl.eta_R_log(s) + 1.0)
        return self.integrate_log(g, m, M, nl, label="rescaled")

    def carleson_integral(self, m: float, M: Level, rnl: RescaledNonlinearity) -> Level:
        """int_m^M dt / Phi_R(t)."""
        g = lambda s: 1.0 / rnl.eta_R_log(s)
        return self.integrate_log(g, m, M, rnl.base, label="carleson")

    def scaling_identity_residual(self, m: float, M: float, r: float, R: float, nl: Nonlinearity) -> float:
        """|int_{Rm}^{RM} ds/(rho^2 phi(s/rho)+s) - int_m^M dt/(R r^2 phi(t/r)+t)| with rho = rR."""
        rho = r * R
        if not (0.0 < rho <= 1.0) or not (0.0 < R <= 1.0):
            raise ArgumentError("❌ need 0 < R <= 1 and 0 < rR <= 1", r=r, R=R)
        lhs = self.harnack_integral_original(R * m, R * M, rho, nl)
        lr = math.log(r)
        g = lambda s: 1.0 / (R * r * nl.eta_log(s - lr) + 1.0)
        # shifted panel placement keeps the two quadratures independent
        rhs = self.integrate_log(g, m, M, nl, label="scaled") if m == 0 else \
            panel_quad(g, math.log(m), math.log(M), panel=0.7)
        if is_infinite(lhs) or is_infinite(rhs):
            return 0.0 if (is_infinite(lhs) and is_infinite(rhs)) else math.inf
        return abs(lhs - rhs)

    def invert_upper(self, a: float, budget: float, R: float, nl: Nonlinearity) -> Level:
        """Solve int_a^M dt / (R^2 phi(t/R) + t) = budget for M."""
        if budget < 0:
            raise ArgumentError("❌ budget must be non-negative", budget=budget)
        if a < 0:
            raise ArgumentError("❌ level a must be non-negative", a=a)
        if not (0.0 < R <= 1.0):
            raise ArgumentError("❌ scale R must lie in (0, 1]", R=R)
        if budget == 0:
            return float(a)
        lR = math.log(R)
        g = lambda s: 1.0 / (R * nl.eta_log(s - lR) + 1.0)
        if a == 0:
            floor = _LOG_TINY if nl.kind == NonlinearityKind.TABULATED else None
            below = improper_quad(g, 0.0, -1, floor=floor, label="invert at 0")
            if is_infinite(below):
                # divergence at 0 forces M = 0 for every finite budget
                return 0.0
            if below >= budget:
                s_star = brentq(lambda s: improper_quad(g, s, -1, floor=floor) - budget, _LOG_TINY, 0.0)
                return math.exp(s_star)
            start, remaining = 0.0, budget - below
        else:
            start, remaining = math.log(a), budget

        # g <= 1, so the span must be at least the remaining budget
        span = max(1.0, remaining)
        total = panel_quad(g, start, start + span)
        lower_edge = start
        while total < remaining:
            lower_edge = start + span
            more = panel_quad(g, start + span, start + 2 * span)
            if more < 1e-12:
                logger.info("integral converges below the budget; M is infinite")
                return INFINITE
            total += more
            span *= 2
            if start + span > 700:
                raise NumericalFailure("❌ inverted level exceeds float range",
                                       log_M_lower_bound=start + span / 2, budget=budget)
        s_star = brentq(lambda s: panel_quad(g, start, s) - remaining,
                        lower_edge, start + span, xtol=1e-14, rtol=1e-15)
        return math.exp(s_star)

    # ---------- p(x) closed forms ----------
    @staticmethod
    def px_carleson_bound(uA: float, R: float, C: float) -> float:
        """C * max(uA^(1+CR), uA^(1/(1+CR)))."""
        if uA < 0 or R < 0:
            raise ArgumentError("❌ need u(A) >= 0 and R >= 0", uA=uA, R=R)
        if C < 1:
            raise ArgumentError("❌ constant C must be at least 1", C=C)
        e = 1.0 + C * R
        return C * max(uA ** e, uA ** (1.0 / e))

    @staticmethod
    def px_bharnack_bound(uA: float, R: float, C: float) -> Level:
        """C * max(uA^(CR), uA^(-CR))."""
        if uA < 0 or R < 0:
            raise ArgumentError("❌ need u(A) >= 0 and R >= 0", uA=uA, R=R)
        if C < 1:
            raise ArgumentError("❌ constant C must be at least 1", C=C)
        e = C * R
        if uA == 0:
            return INFINITE if e > 0 else C
        return C * max(uA ** e, uA ** (-e))

    # ---------- Supplementary ----------
    @staticmethod
    def domination_constant(nl: Nonlinearity, alpha: float, R: float, r_grid=None, t_grid=None) -> float:
        """Sampled sup of R r^2 phi(t/r) / (r^alpha Phi_R(t))."""
        if nl.is_homogeneous:
            return 0.0
        r = np.geomspace(1e-4, 1.0, 41) if r_grid is None else np.asarray(r_grid, dtype=float)
        t = np.geomspace(1e-6, 1e6, 61) if t_grid is None else np.asarray(t_grid, dtype=float)
        rnl = RescaledNonlinearity(nl, R)
        Rg, Tg = np.meshgrid(r, t, indexing="ij")
        ratio = R * Rg ** (1.0 - alpha) * np.asarray(nl.eta_log(np.log(Tg / Rg))) / np.asarray(rnl.eta_R_log(np.log(Tg)))
        return float(np.max(ratio))

    @staticmethod
    def linearized_harnack_bound(m: float, budget: float, kappa: float) -> float:
        """M from int_m^M dt/(kappa + t) <= budget, i.e. M <= e^budget (m + kappa) - kappa."""
        if kappa < 0 or budget < 0:
            raise ArgumentError("❌ need kappa >= 0 and budget >= 0", kappa=kappa, budget=budget)
        return math.exp(budget) * (m + kappa) - kappa

    def certificate(self, m: float, M: Level, r: float, R: float, alpha: float, nl: Nonlinearity,
                    budget: Optional[float] = None) -> HarnackCertificate:
        value = self.harnack_integral_rescaled(m, M, r, R, alpha, nl)
        passed = None
        if budget is not None:
            passed = (not is_infinite(value)) and value <= budget
        return HarnackCertificate(m, M, r, R, alpha, value, budget, passed)


_ENGINE = HarnackEngine()


def harnack_integral_original(m, M, rho, nl):
    return _ENGINE.harnack_integral_original(m, M, rho, nl)


def harnack_integral_rescaled(m, M, r, R, alpha, nl):
    return _ENGINE.harnack_integral_rescaled(m, M, r, R, alpha, nl)


def scaling_identity_residual(m, M, r, R, nl):
    return _ENGINE.scaling_identity_residual(m, M, r, R, nl)


def invert_upper(a, budget, R, nl):
    return _ENGINE.invert_upper(a, budget, R, nl)


px_carleson_bound = HarnackEngine.px_carleson_bound
px_bharnack_bound = HarnackEngine.px_bharnack_bound


if __name__ == "__main__":
    from rich import print
    nl = Nonlinearity.log_model(1.0)
    print(f"[info] homogeneous int_1^e = {harnack_integral_original(1.0, math.e, 1.0, Nonlinearity.homogeneous())}")
    print(f"[info] invert_upper(1, 5) = {invert_upper(1.0, 5.0, 1.0, nl)}")
