import math
import queue
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from backend.core import (
    INFINITE, ArgumentError, LabError, NumericalFailure, PreconditionError, is_infinite,
)
from backend.barriers_module import BarrierModule
from backend.geometry_module import DomainKind, DomainSpec, GeometryModule, build_domain
from backend.harnack_module import HarnackCertificate, HarnackEngine, px_bharnack_bound, px_carleson_bound
from backend.nonlinearity_module import Nonlinearity, RescaledNonlinearity, build_nonlinearity
from backend.solver_module import (
    EXTERIOR, INTERIOR, BOUNDARY, TOL_SOLVE, EllipticityPair, GridField, OperatorKind, Problem, SolverEngine,
    build_grid,
)

logger = logging.getLogger(__name__)

C_TRIALS = (2, 4, 8, 16, 32, 64, 128, 256)
ALPHA_WINDOW = tuple(np.linspace(0.005, 0.12, 24))
C1_MAX = 4.0
TAU_FALLBACK = 0.75
C_MAX = 1e6
RUNG_FLOOR = 8
C2_BUDGET = 8.0
SPREAD_LIMIT = 0.3
EXCLUDE_FACTOR = 10.0


class EstimateKind(str, Enum):
    INTERIOR_HARNACK = "interior_harnack"
    CARLESON = "carleson"
    INTERIOR_HOLDER = "interior_holder"
    OSC_DECAY = "osc_decay"
    BOUNDARY_HOLDER = "boundary_holder"
    BLOWUP = "blowup"
    BOUNDARY_HARNACK = "boundary_harnack"
    PX_CARLESON = "px_carleson"
    PX_BHARNACK = "px_bharnack"


def relative_spread(values: Sequence[float]) -> float:
    vals = [float(v) for v in values if v is not None and math.isfinite(v)]
    if not vals or max(vals) <= 0:
        return 0.0
    return (max(vals) - min(vals)) / max(vals)


@dataclass
class EstimateReport:
    theorem: EstimateKind
    instances: List[dict]
    fitted_constant: float
    per_instance_values: List[float]
    independence_spread: float
    flags: List[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        finite = [v for v in self.per_instance_values if v is not None and math.isfinite(v)]
        if finite and self.fitted_constant < max(finite):
            raise ArgumentError("❌ fitted constant is below a per-instance value",
                                fitted=self.fitted_constant, worst=max(finite))

    def to_dict(self) -> dict:
        return {"theorem": self.theorem.value, "instances": self.instances, "fitted_constant": self.fitted_constant,
                "per_instance_values": self.per_instance_values, "independence_spread": self.independence_spread,
                "flags": self.flags, "details": self.details}


@dataclass
class LadderFit:
    """Two-constant fit over a dyadic radius ladder with per-rung slack."""
    first: float
    second: float
    rungs: List[float]
    slack: List[float]
    flags: List[str] = field(default_factory=list)


@dataclass
class BlowupReport:
    s: List[float]
    M_s: List[float]
    S: Optional[float]
    gamma: Optional[float]
    alternative: str
    integral: object
    delta_trial: float
    monotone: bool
    notes: List[str] = field(default_factory=list)


@dataclass
class BoundaryHarnackReport:
    mu0: float
    mu1: float
    sup_ratio: float
    integral: object
    excluded: int
    branches: Dict[str, bool]
    flags: List[str] = field(default_factory=list)


@dataclass(frozen=True, order=True)
class Instance:
    domain: str
    phi: str
    seed: int
    R: float

    def describe(self) -> dict:
        return {"domain": self.domain, "phi": self.phi, "R": self.R, "seed": self.seed}


class EstimatesModule:
    """Discrete certificates for the boundary estimates on solved fields."""

    def __init__(self, tol_solve: float = TOL_SOLVE, c_trials: Sequence[int] = C_TRIALS, geometry=None,
                 barriers=None, harnack=None):
        self.tol_solve = tol_solve
        self.c_trials = tuple(sorted(c_trials))
        self.geo = geometry or GeometryModule()
        self.barriers = barriers or BarrierModule()
        self.harnack = harnack or HarnackEngine()

    # ---------- Sampling helpers ----------
    @staticmethod
    def _ball_mask(field_: GridField, center, r: float) -> np.ndarray:
        X, Y = field_.coords()
        return (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= r * r * (1 + 1e-12)

    def _covered(self, field_: GridField, center, r: float) -> bool:
        x1 = field_.x0 + field_.h * (field_.nx - 1)
        y1 = field_.y0 + field_.h * (field_.ny - 1)
        eps = 1e-12 * field_.h
        return (center[0] - r >= field_.x0 - eps and center[0] + r <= x1 + eps
                and center[1] - r >= field_.y0 - eps and center[1] + r <= y1 + eps)

    def _interior_ball(self, field_: GridField, center, r: float) -> np.ndarray:
        """Values on B(center, r); the ball must sit inside the grid with no exterior node."""
        if r <= 0:
            raise ArgumentError("❌ ball radius must be positive", r=r)
        if not self._covered(field_, center, r):
            raise ArgumentError("❌ ball leaves the grid", center=list(map(float, center)), r=r)
        inside = self._ball_mask(field_, center, r)
        if np.any(field_.mask[inside] == EXTERIOR):
            raise ArgumentError("❌ ball is not fully interior", center=list(map(float, center)), r=r)
        return field_.values[inside]

    @staticmethod
    def _domain_ball(field_: GridField, dom: DomainSpec, center, r: float) -> np.ndarray:
        """Values on B(center, r) intersected with the domain (interior nodes)."""
        X, Y = field_.coords()
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= r * r * (1 + 1e-12)
        return field_.values[inside & (field_.mask == INTERIOR)]

    def check_vanishing(self, field_: GridField, dom: DomainSpec, w, radius: float):
        """u = 0 at boundary nodes on or outside the true boundary inside B(w, radius)."""
        X, Y = field_.coords()
        near = (X - w[0]) ** 2 + (Y - w[1]) ** 2 < radius * radius
        pts = field_.points()
        close = dom.signed_distance(pts.reshape(-1, 2)).reshape(field_.nx, field_.ny) <= 0
        sel = near & close & (field_.mask == BOUNDARY)
        if not np.any(sel):
            return
        scale = max(1.0, float(np.max(np.abs(field_.values[field_.mask != EXTERIOR]))))
        worst = float(np.max(np.abs(field_.values[sel])))
        if worst > EXCLUDE_FACTOR * self.tol_solve * scale:
            raise PreconditionError("❌ u does not vanish on the boundary patch", worst=worst,
                                    radius=radius, center=list(map(float, w)))

    @staticmethod
    def _check_nonnegative(values: np.ndarray, tol: float):
        if values.size and float(np.min(values)) < -tol:
            raise PreconditionError("❌ field must be non-negative", minimum=float(np.min(values)))

    # ---------- Interior Harnack ----------
    def verify_interior_harnack(self, field_: GridField, center, r: float, R: float, nl: Nonlinearity,
                                alpha: float = 0.0, budget: Optional[float] = None) -> HarnackCertificate:
        if not (0 < r <= 1):
            raise ArgumentError("❌ radius r must lie in (0, 1]", r=r)
        outer = self._interior_ball(field_, center, 2 * r)
        self._check_nonnegative(outer, EXCLUDE_FACTOR * self.tol_solve)
        vals = self._interior_ball(field_, center, r)
        m, M = max(float(np.min(vals)), 0.0), max(float(np.max(vals)), 0.0)
        cert = self.harnack.certificate(m, M, r, R, alpha, nl, budget)
        logger.debug("interior Harnack at %s r=%g: m=%.6g M=%.6g value=%s", list(center), r, m, M, cert.value)
        return cert

    # ---------- Carleson ----------
    def carleson_values(self, u: GridField, dom: DomainSpec, w, radius: float, rnl: RescaledNonlinearity) -> dict:
        """Per C_trial: M over B(w, radius/C) within the domain and the integral from u(A) to M."""
        self.check_vanishing(u, dom, w, 4 * radius)
        A = self.geo.corkscrew(dom, w, radius)
        uA = u.interpolate(A)
        flags = []
        if uA <= 0:
            flags.append("strong_minimum_principle_caveat")
            logger.warning("u(A)=%.3g <= 0 at the corkscrew point", uA)
            uA = 0.0
        rows = {}
        for C in self.c_trials:
            vals = self._domain_ball(u, dom, w, radius / C)
            M = float(np.max(vals)) if vals.size else 0.0
            value = 0.0 if M <= uA else self.harnack.carleson_integral(uA, M, rnl)
            rows[C] = {"M": M, "integral": value}
        return {"A": A.tolist(), "uA": uA, "rows": rows, "flags": flags}

    def verify_carleson(self, u: GridField, dom: DomainSpec, R: float, nl: Nonlinearity, w=(0.0, 0.0),
                        radius: Optional[float] = None, instance: Optional[dict] = None) -> EstimateReport:
        radius = R if radius is None else radius
        rnl = RescaledNonlinearity(nl, R)
        data = self.carleson_values(u, dom, w, radius, rnl)
        passing = [C for C, row in data["rows"].items()
                   if not is_infinite(row["integral"]) and row["integral"] <= C]
        flags = list(data["flags"])
        if passing:
            C = min(passing)
            value = float(data["rows"][C]["integral"])
        else:
            flags.append("no_passing_constant")
            C, value = math.inf, math.inf
        desc = dict(instance or {"domain": dom.name, "phi": nl.name, "R": R})
        return EstimateReport(EstimateKind.CARLESON, [desc], float(C), [value], 0.0, flags,
                              {"corkscrew": data["A"], "uA": data["uA"],
                               "sweep": {str(k): {"M": v["M"], "integral": _level(v["integral"])}
                                         for k, v in data["rows"].items()}})

    # ---------- Ladder fits ----------
    @staticmethod
    def _ladder(r: float, h: float) -> List[float]:
        rungs, rho = [], r
        while rho >= RUNG_FLOOR * h:
            rungs.append(rho)
            rho /= 2.0
        return rungs

    def verify_osc_decay(self, field_: GridField, x0, r: float, R: float, nl: Nonlinearity) -> LadderFit:
        """Smallest (tau, C) with osc_{rho/2} <= tau osc_rho + C Phi_R(M) sqrt(rho) on every rung."""
        rnl = RescaledNonlinearity(nl, R)
        top = self._interior_ball(field_, x0, r)
        M = float(np.max(np.abs(top)))
        rungs = self._ladder(r, field_.h)
        if len(rungs) < 2:
            raise ArgumentError("❌ ladder needs two rungs above the floor", r=r, h=field_.h, floor=RUNG_FLOOR)
        osc = []
        for rho in rungs:
            vals = self._interior_ball(field_, x0, rho)
            osc.append(float(np.max(vals) - np.min(vals)))
        pairs = list(zip(osc[:-1], osc[1:], rungs[:-1]))
        noise = EXCLUDE_FACTOR * self.tol_solve * max(1.0, M)
        ratios = [0.0 if big <= noise and small <= noise else (small / big if big > 0 else math.inf)
                  for big, small, _ in pairs]
        tau, C, flags = max(ratios), 0.0, []
        Phi = float(rnl.Phi(M))
        if tau >= 1:
            tau = TAU_FALLBACK
            if Phi <= 0:
                raise NumericalFailure("❌ no tau < 1 fits the oscillation ladder", ratios=ratios, rungs=rungs)
            C = max(max(small - tau * big, 0.0) / (Phi * math.sqrt(rho)) for big, small, rho in pairs)
            flags.append("tau_fallback")
            if C > C_MAX:
                raise NumericalFailure("❌ no tau < 1 fits the oscillation ladder", ratios=ratios, C=C)
        slack = [tau * big + C * Phi * math.sqrt(rho) - small for big, small, rho in pairs]
        for rho, s in zip(rungs, slack):
            logger.debug("osc rung rho=%g slack %.3g", rho, s)
        return LadderFit(float(tau), float(C), rungs[:-1], slack, flags)

    @staticmethod
    def _fit_holder(sups: List[float], rungs: List[float], r: float, M: float, Phi: float,
                    second: Callable[[float, float], float]) -> LadderFit:
        """Largest alpha in the window with C1(alpha) <= C1_MAX."""
        flags = []
        if M <= 0:
            return LadderFit(0.0, float(ALPHA_WINDOW[-1]), rungs, [0.0] * len(rungs), ["alpha_at_window_edge"])

        def c1(alpha):
            return max(S / (M * (rho / r) ** alpha + Phi * second(rho, alpha)) for S, rho in zip(sups, rungs))

        best = None
        for alpha in ALPHA_WINDOW:
            if c1(alpha) <= C1_MAX:
                best = alpha
        if best is None:
            best = ALPHA_WINDOW[0]
            flags.append("alpha_not_resolved")
        elif best == ALPHA_WINDOW[-1]:
            flags.append("alpha_at_window_edge")
        C1 = c1(best)
        slack = [C1 * (M * (rho / r) ** best + Phi * second(rho, best)) - S for S, rho in zip(sups, rungs)]
        return LadderFit(float(C1), float(best), rungs, slack, flags)

    def verify_boundary_holder(self, field_: GridField, dom: DomainSpec, x0, r: float, R: float,
                               nl: Nonlinearity, delta_max: float = 0.01) -> LadderFit:
        """(C1, alpha) with sup_{B(x0,rho)} u <= C1 M (rho/r)^alpha + C1 Phi_R(M) rho^(2 alpha) r^(2 alpha)."""
        rep = self.geo.reifenberg_delta(dom, x0, r)
        if rep.delta > delta_max:
            raise PreconditionError("❌ domain is not flat enough for boundary Holder decay",
                                    delta=rep.delta, delta_max=delta_max)
        self.check_vanishing(field_, dom, x0, r)
        rnl = RescaledNonlinearity(nl, R)
        top = self._domain_ball(field_, dom, x0, r)
        M = float(np.max(top)) if top.size else 0.0
        rungs = self._ladder(r, field_.h)
        sups = []
        for rho in rungs:
            vals = self._domain_ball(field_, dom, x0, rho)
            sups.append(max(float(np.max(vals)), 0.0) if vals.size else 0.0)
        fit = self._fit_holder(sups, rungs, r, M, float(rnl.Phi(M)), lambda rho, a: (rho * r) ** (2 * a))
        fit.flags.append(f"delta={rep.delta:.4g}")
        return fit

    def verify_interior_holder(self, field_: GridField, x0, r: float, R: float, nl: Nonlinearity) -> LadderFit:
        """(C1, alpha) with osc_{B(x0,rho)} u <= C1 M (rho/r)^alpha + C1 Phi_R(M) rho^(1/4) r^(1/4)."""
        rnl = RescaledNonlinearity(nl, R)
        top = self._interior_ball(field_, x0, r)
        M = float(np.max(np.abs(top)))
        rungs = self._ladder(r, field_.h)
        oscs = []
        for rho in rungs:
            vals = self._interior_ball(field_, x0, rho)
            oscs.append(float(np.max(vals) - np.min(vals)))
        return self._fit_holder(oscs, rungs, r, M, float(rnl.Phi(M)), lambda rho, a: (rho * r) ** 0.25)

    # ---------- Blow-up ----------
    def blowup_profile(self, field_: GridField, dom: DomainSpec, R: float, nl: Nonlinearity, alpha: float,
                       center=(0.0, 0.0), scale: float = 1.0, delta_trial: Optional[float] = None,
                       c2_budget: float = C2_BUDGET, sigma: float = 2.0) -> BlowupReport:
        rnl = RescaledNonlinearity(nl, R)
        live = field_.values[field_.mask != EXTERIOR]
        self._check_nonnegative(live, EXCLUDE_FACTOR * self.tol_solve)
        cap = self.geo.retracted_cap(dom, 0.0, center=center, scale=scale, spacing=min(1e-3, field_.h / 4) / scale)
        s_hi = self.geo.cap_s_tilde(cap)
        pts = field_.points().reshape(-1, 2)
        inner = (field_.mask == INTERIOR).ravel()
        vals = field_.values.ravel()
        d_gamma = cap.distance_to_gamma(pts)
        in_ball = (np.linalg.norm(pts - cap.center, axis=1) < cap.cap_radius) & dom.contains(pts) & inner
        s_list, M_s, notes = [], [], []
        s = s_hi
        while s >= 2 * field_.h:
            sel = in_ball & (d_gamma >= s)
            if not np.any(sel):
                notes.append(f"retracted cap empty at s={s:.4g}; ladder truncated")
                break
            s_list.append(float(s))
            M_s.append(float(np.max(vals[sel])))
            s /= math.sqrt(2.0)
        s_list, M_s = s_list[::-1], M_s[::-1]
        monotone = all(b <= a for a, b in zip(M_s[:-1], M_s[1:]))
        top = max(M_s) if M_s else 0.0
        if delta_trial is None:
            delta_trial = self.barriers.almost_max_threshold(max(top, 1e-12), rnl, sigma).c0
        crit = [s for s, M in zip(s_list, M_s) if s ** alpha * float(rnl.eta_R(max(M, 1e-300))) <= delta_trial]
        S = max(crit) if crit else None
        gamma = None
        below = [(s, M) for s, M in zip(s_list, M_s) if S is not None and s < S and M > 0]
        if len(below) >= 2:
            slope, _ = np.polyfit(np.log([p[0] for p in below]), np.log([p[1] for p in below]), 1)
            gamma = float(-slope)
        A = self.geo.corkscrew(dom, center, scale)
        uA = max(field_.interpolate(A), 0.0)
        integral = 0.0 if top <= uA else self.harnack.carleson_integral(uA, top, rnl)
        s0 = not is_infinite(integral) and integral <= c2_budget
        logger.info("blow-up profile: %d rungs, S=%s, gamma=%s, alternative %s", len(s_list), S, gamma,
                    "S0" if s0 else "S1-S3")
        return BlowupReport(s_list, M_s, S, gamma, "S0" if s0 else "S1-S3", integral, float(delta_trial),
                            monotone, notes)

    # ---------- Boundary Harnack ----------
    def match_boundary_amplitude(self, prob: Problem, grid: GridField, A, target: float,
                                 solver: Optional[SolverEngine] = None, bracket=(0.1, 10.0)) -> Tuple[GridField, float]:
        """Scale the boundary data of grid by k so that the solution takes the value target at A."""
        solver = solver or SolverEngine(self.tol_solve)
        cache = {}

        def solve(k):
            if k not in cache:
                cache[k] = solver.solve_dirichlet(prob, grid.with_values(grid.values * k))
            return cache[k]

        lo, hi = bracket
        f = lambda k: solve(k).interpolate(A) - target
        f_lo, f_hi = f(lo), f(hi)
        grow = 0
        while f_lo * f_hi > 0 and grow < 20:
            lo, hi = (lo / 4, hi) if f_lo > 0 else (lo, hi * 4)
            f_lo, f_hi = f(lo), f(hi)
            grow += 1
        if f_lo * f_hi > 0:
            raise NumericalFailure("❌ boundary amplitude shooting bracket failed", f_lo=f_lo, f_hi=f_hi)
        k = brentq(f, lo, hi, xtol=1e-10, rtol=1e-10)
        out = solve(k)
        out.flags = list(out.flags) + ["amplitude_shooting"]
        return out, float(k)

    def verify_boundary_harnack(self, u: GridField, v: GridField, dom: DomainSpec, R: float, nl: Nonlinearity,
                                w=(0.0, 0.0), radius: Optional[float] = None, Ctilde: Optional[float] = None,
                                C: float = 2.0) -> BoundaryHarnackReport:
        radius = R if radius is None else radius
        rnl = RescaledNonlinearity(nl, R)
        flags = []
        self.check_vanishing(u, dom, w, 4 * radius)
        self.check_vanishing(v, dom, w, 4 * radius)
        A = self.geo.corkscrew(dom, w, radius)
        uA, vA = u.interpolate(A), v.interpolate(A)
        if uA <= 0 or vA <= 0:
            raise PreconditionError("❌ u and v must be positive at the corkscrew point", uA=uA, vA=vA)
        if abs(uA - vA) > 1e-6 * uA:
            if nl.is_homogeneous:
                v = v.with_values(v.values * (uA / vA))
                flags.append("v_rescaled")
            else:
                flags.append("v_unmatched")
                logger.warning("v(A)=%.6g differs from u(A)=%.6g; match with match_boundary_amplitude", vA, uA)
        if "amplitude_shooting" in v.flags:
            flags.append("amplitude_shooting")
        Ctilde = Ctilde or self.barriers.choose_ctilde(rnl)
        # barrier shells at unit scale above and below the boundary point
        e_n = np.asarray(dom.inward_normal(w))
        x1 = np.asarray(w) + 2 * radius * e_n
        x0 = np.asarray(w) - radius * e_n
        inner_u = u.ball_values(x1, radius, interior_only=True)
        m_u = float(np.min(inner_u)) if inner_u.size else 0.0
        outer_v = self._domain_ball(v, dom, x0, 3 * radius)
        M_v = float(np.max(outer_v)) if outer_v.size else 0.0
        branches = {"mu0_zero": False, "mu1_infinite": False}
        if m_u > 0:
            low = self.barriers.lower_barrier_w1(m_u, rnl, Ctilde)
            mu0 = low.mu
            branches["mu0_zero"] = low.degenerate
        else:
            mu0, branches["mu0_zero"] = 0.0, True
        up = self.barriers.upper_barrier_w2(M_v, rnl, Ctilde) if M_v > 0 else None
        mu1 = up.mu if up is not None else 0.0
        branches["mu1_infinite"] = bool(up is not None and up.degenerate)
        if branches["mu0_zero"]:
            mu1 = uA
            flags.append("mu0_zero_branch")
        if branches["mu1_infinite"]:
            flags.append("mu1_infinite_branch")
        ball = self._ball_mask(u, w, radius / C) & (u.mask == INTERIOR)
        cut = EXCLUDE_FACTOR * self.tol_solve
        keep = ball & (u.values >= cut)
        excluded = int(np.sum(ball & (u.values < cut)))
        sup_ratio = float(np.max(v.values[keep] / u.values[keep])) if np.any(keep) else math.nan
        lo, hi = min(mu0, mu1), max(mu0, mu1)
        if mu0 > mu1:
            flags.append("mu0_exceeds_mu1")
        hi_level = INFINITE if math.isinf(hi) else hi
        integral = self.harnack.harnack_integral_original(lo, hi_level, min(R, 1.0), nl)
        logger.info("boundary Harnack: mu0=%.6g mu1=%.6g sup v/u=%.6g (%d nodes excluded)", mu0, mu1, sup_ratio,
                    excluded)
        return BoundaryHarnackReport(float(mu0), float(mu1), sup_ratio, integral, excluded, branches, flags)

    # ---------- p(x) corollaries ----------
    def px_corollary_check(self, u: GridField, dom: DomainSpec, R: float, w=(0.0, 0.0),
                           radius: Optional[float] = None, v: Optional[GridField] = None) -> dict:
        """Smallest C_trial with sup_{B(w, radius/C)} u <= C max(u(A)^(1+CR), u(A)^(1/(1+CR)))."""
        radius = R if radius is None else radius
        A = self.geo.corkscrew(dom, w, radius)
        uA = u.interpolate(A)
        if uA <= 0:
            raise PreconditionError("❌ u(A) must be positive", uA=uA)
        rows, fitted = {}, None
        for C in self.c_trials:
            vals = self._domain_ball(u, dom, w, radius / C)
            sup = float(np.max(vals)) if vals.size else 0.0
            bound = px_carleson_bound(uA, R, C)
            rows[str(C)] = {"sup": sup, "bound": bound, "margin": bound - sup}
            if fitted is None and sup <= bound:
                fitted = C
        out = {"A": A.tolist(), "uA": uA, "carleson": rows, "fitted_C": fitted, "passed": fitted is not None}
        if v is not None:
            vA = v.interpolate(A)
            ball = self._ball_mask(u, w, radius / 2) & (u.mask == INTERIOR) & (u.values >= EXCLUDE_FACTOR * self.tol_solve)
            ratio = float(np.max(v.values[ball] / u.values[ball])) if np.any(ball) else math.nan
            b = px_bharnack_bound(uA, R, fitted or self.c_trials[-1])
            out["bharnack"] = {"vA": vA, "sup_ratio": ratio, "bound": _level(b),
                               "passed": bool(is_infinite(b) or ratio <= b)}
        return out

    # ---------- Diagnostics ----------
    def proof_diagnostics(self, field_: GridField, dom: DomainSpec, R: float, nl: Nonlinearity, w=(0.0, 0.0),
                          radius: Optional[float] = None, max_points: int = 32) -> List[dict]:
        """Point chain P_i with u(P_{i+1}) >= 2 u(P_i), each step taken nearest to the previous point."""
        radius = R if radius is None else radius
        pts = field_.points().reshape(-1, 2)
        vals = field_.values.ravel()
        live = (field_.mask == INTERIOR).ravel() & (np.linalg.norm(pts - np.asarray(w), axis=1) <= radius)
        if not np.any(live):
            return []
        A = self.geo.corkscrew(dom, w, radius)
        k = int(np.argmin(np.where(live, np.linalg.norm(pts - A, axis=1), np.inf)))
        chain = []
        while len(chain) < max_points:
            p, u_p = pts[k], float(vals[k])
            chain.append({"point": p.tolist(), "u": u_p, "distance": float(dom.distance_to_boundary(p)[0])})
            logger.debug("P_%d = %s u=%.6g d=%.4g", len(chain) - 1, p.tolist(), u_p, chain[-1]["distance"])
            cand = live & (vals >= 2 * u_p) & (u_p > 0)
            if not np.any(cand):
                break
            k = int(np.argmin(np.where(cand, np.linalg.norm(pts - p, axis=1), np.inf)))
        logger.info("proof diagnostics: chain of %d points", len(chain))
        return chain


def _level(value):
    return "inf" if is_infinite(value) else value


# ---------- Instance family ----------

def domain_window(dom: DomainSpec, R: float) -> dict:
    """Grid box, boundary point and geometric radius used for one instance."""
    if dom.kind in (DomainKind.CUBE, DomainKind.CUBE_MINUS_BALL):
        return {"origin": (0.0, 0.0), "extent": (1.0, 1.0), "w": (0.5, 0.0), "radius": R / 8}
    if dom.kind in (DomainKind.HALF_SPACE, DomainKind.LIPSCHITZ_GRAPH):
        top = 2.0 + float(np.max(dom.graph(np.array([-2.0, 2.0]))))
        return {"origin": (-2.0, 0.0), "extent": (4.0, top), "w": (0.0, float(dom.graph(np.array([0.0]))[0])),
                "radius": R}
    if dom.kind == DomainKind.ANNULUS_SECTOR:
        cx, cy = dom.center
        rho = dom.radius
        return {"origin": (cx - rho, cy - rho), "extent": (2 * rho, 2 * rho), "w": (cx, cy - rho),
                "radius": R * dom.r0 / 8}
    raise ArgumentError("❌ no instance window for this domain kind", kind=dom.kind.value)


def boundary_data(dom: DomainSpec, seed: int) -> Callable[[np.ndarray], np.ndarray]:
    """Height above the bottom boundary patch times a seeded modulation."""
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.5, 2.0), rng.uniform(0.0, 0.5)

    def height(p: np.ndarray) -> np.ndarray:
        if dom.is_graph:
            return p[:, 1] - dom.graph(p[:, 0])
        if dom.kind == DomainKind.ANNULUS_SECTOR:
            return p[:, 1] - (dom.center[1] - dom.radius)
        return p[:, 1]

    def data(points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return a * np.maximum(height(p), 0.0) * (1.0 + b * np.cos(math.pi * p[:, 0]))

    return data


def default_exponent(points: np.ndarray) -> np.ndarray:
    """p(x) = 2 + x1/4, the variable exponent used for p(x)-Laplace runs."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return 2.0 + 0.25 * p[:, 0]


def make_problem(config, rnl: RescaledNonlinearity) -> Problem:
    ell = EllipticityPair(config.solver.lam, config.solver.Lam)
    op = OperatorKind(config.solver.operator)
    return Problem(op, ell, rnl, default_exponent if op == OperatorKind.PX_LAPLACE else None)


def build_instance_family(config) -> List[Instance]:
    sc = config.scenario
    family = [Instance(getattr(d, "value", d), getattr(p, "value", p), int(s), float(R))
              for d in sc.domains for p in sc.phis for s in sc.seeds for R in sc.r_list]
    return sorted(family)


def prepare_instance(inst: Instance, config) -> dict:
    """Domain, nonlinearity, problem and unsolved grid of one instance."""
    dom = build_domain(inst.domain, l=config.domain.l, table=config.domain.table)
    nl = build_nonlinearity(inst.phi, c=config.phi.c, table=config.phi.table)
    win = domain_window(dom, inst.R)
    h = config.solver.h
    nx = config.solver.nx or int(round(win["extent"][0] / h)) + 1
    ny = config.solver.ny or int(round(win["extent"][1] / h)) + 1
    grid = build_grid(dom, nx, ny, h, win["origin"], boundary_data(dom, inst.seed))
    prob = make_problem(config, RescaledNonlinearity(nl, inst.R))
    return {"dom": dom, "nl": nl, "grid": grid, "problem": prob, **win}


def make_solver(config) -> SolverEngine:
    return SolverEngine(config.solver.tol_solve, config.solver.max_iters, config.solver.scheme)


def make_estimates(config) -> EstimatesModule:
    ell = EllipticityPair(config.solver.lam, config.solver.Lam)
    return EstimatesModule(config.solver.tol_solve, config.scenario.c_trials, barriers=BarrierModule(ell))


def solve_instance(inst: Instance, config, solver: Optional[SolverEngine] = None) -> dict:
    prepared = prepare_instance(inst, config)
    solver = solver or make_solver(config)
    u = solver.solve_dirichlet(prepared["problem"], prepared["grid"])
    return {**prepared, "field": u}


def measure_instance(inst: Instance, solved: dict, config, est: EstimatesModule) -> dict:
    dom, nl, u, w, radius = solved["dom"], solved["nl"], solved["field"], solved["w"], solved["radius"]
    A = est.geo.corkscrew(dom, w, radius)
    r = float(dom.distance_to_boundary(A)[0]) / 4
    cert = est.verify_interior_harnack(u, A, r, inst.R, nl, config.scenario.alpha)
    carl = est.verify_carleson(u, dom, inst.R, nl, w=w, radius=radius, instance=inst.describe())
    blow = est.blowup_profile(u, dom, inst.R, nl, config.scenario.alpha, center=w, scale=radius / 2,
                              c2_budget=config.scenario.c2_budget, sigma=config.scenario.sigma)
    return {"harnack": cert, "carleson": carl, "blowup": blow, "flags": list(u.flags)}


def run_family(config, threads: int = 1, instances: Optional[List[Instance]] = None) -> Dict[str, EstimateReport]:
    """Solve and measure every instance on worker threads; fold the results in instance order."""
    instances = sorted(instances if instances is not None else build_instance_family(config))
    est = make_estimates(config)
    tasks: "queue.Queue[Instance]" = queue.Queue()
    for inst in instances:
        tasks.put(inst)
    results: Dict[Instance, dict] = {}
    lock = threading.Lock()

    def worker():
        while True:
            try:
                inst = tasks.get_nowait()
            except queue.Empty:
                return
            try:
                out = measure_instance(inst, solve_instance(inst, config), config, est)
            except LabError as e:
                logger.warning("instance %s failed: %s", inst.describe(), e)
                out = {"error": e.to_dict()}
            except Exception as e:
                logger.error("instance %s crashed: %s", inst.describe(), e)
                out = {"error": {"error": type(e).__name__, "message": str(e)}}
            with lock:
                results[inst] = out
            tasks.task_done()

    pool = [threading.Thread(target=worker, daemon=True) for _ in range(max(1, int(threads)))]
    for t in pool:
        t.start()
    for t in pool:
        t.join()
    return fold_family(instances, results)


def fold_family(instances: List[Instance], results: Dict[Instance, dict]) -> Dict[str, EstimateReport]:
    groups: Dict[tuple, List[Instance]] = {}
    for inst in instances:
        groups.setdefault((inst.domain, inst.phi, inst.seed), []).append(inst)
    reports = {}
    for theorem, pick in ((EstimateKind.INTERIOR_HARNACK, lambda r: r["harnack"].value),
                          (EstimateKind.CARLESON, lambda r: r["carleson"].per_instance_values[0])):
        rows, values, flags, spreads = [], [], [], {}
        for key, members in groups.items():
            group_vals = []
            for inst in members:
                res = results.get(inst, {})
                if not res or "error" in res:
                    flags.append(f"failed:{inst.domain}/{inst.phi}/{inst.seed}/{inst.R:g}")
                    continue
                val = pick(res)
                val = math.inf if is_infinite(val) else float(val)
                rows.append(inst.describe())
                values.append(val)
                group_vals.append(val)
            spreads["/".join(map(str, key))] = relative_spread(group_vals)
        finite = [v for v in values if math.isfinite(v)]
        fitted = max(finite) if finite else math.inf
        if len(finite) < len(values):
            flags.append("infinite_values")
        spread = max(spreads.values()) if spreads else 0.0
        reports[theorem.value] = EstimateReport(theorem, rows, fitted, values, spread, flags,
                                                {"group_spreads": spreads, "spread_limit": SPREAD_LIMIT})
    blow_rows, monotone = [], True
    for inst in instances:
        res = results.get(inst, {})
        if "blowup" in res:
            b = res["blowup"]
            monotone &= b.monotone
            blow_rows.append({**inst.describe(), "alternative": b.alternative, "monotone": b.monotone,
                              "S": b.S, "gamma": b.gamma})
    gammas = [r["gamma"] for r in blow_rows if r["gamma"] is not None]
    reports[EstimateKind.BLOWUP.value] = EstimateReport(
        EstimateKind.BLOWUP, blow_rows, max(gammas) if gammas else 0.0, gammas, relative_spread(gammas),
        [] if monotone else ["M_s_not_monotone"], {"all_monotone": monotone})
    return reports


if __name__ == "__main__":
    from rich import print
    dom = DomainSpec.half_space()
    grid = build_grid(dom, 129, 65, 1 / 32, (-2.0, 0.0), lambda p: p[:, 1])
    prob = Problem(OperatorKind.PUCCI_MINUS_DRIFT, EllipticityPair(), RescaledNonlinearity(Nonlinearity.homogeneous()))
    u = SolverEngine().solve_dirichlet(prob, grid)
    est = EstimatesModule()
    print(f"[info] {est.verify_interior_harnack(u, (0.0, 1.0), 0.5, 1.0, Nonlinearity.homogeneous())}")
    print(f"[info] carleson C = {est.verify_carleson(u, dom, 1.0, Nonlinearity.homogeneous()).fitted_constant}")
