import math
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate
from scipy.optimize import brentq

from backend.core import INFINITE, ArgumentError, NumericalFailure, PreconditionError
from backend.harnack_module import HarnackEngine
from backend.loglog_module import DoubleExpIntegral, LogLogValue, loglog_integral, solve_log_level
from backend.nonlinearity_module import Nonlinearity, RegularizedNonlinearity, RescaledNonlinearity, osgood_classify
from backend.solver_module import EllipticityPair, GridField, EXTERIOR

logger = logging.getLogger(__name__)

PROFILE_POINTS = 4096
ODE_RTOL = 1e-12
ODE_ATOL = 1e-14
# regularization level of the barrier used to calibrate c0
EPS_CALIBRATION = 1e-3
EPS_0 = 0.5
C0_SAFETY = 0.5
CALIBRATION_LEVELS = tuple(np.geomspace(1e-2, 1e2, 9))
CTILDE_MAX_DOUBLINGS = 30
# grid search for the least admissible K
K_START = 1.0
K_STEP = 0.01
K_MAX = 200.0
R_HAT_STEP = 1e-3
H_FLOOR = 1e4
LOG_BLOWUP = 700.0


# ---------- Profiles ----------

@dataclass(frozen=True)
class MajorantProfile:
    """Phi_R(t) = R phi(t) + t seen as a drift profile of its own."""
    rnl: RescaledNonlinearity

    @property
    def kind(self):
        return self.rnl.base.kind

    @property
    def is_homogeneous(self) -> bool:
        return False

    @property
    def name(self) -> str:
        return f"Phi_R({self.rnl.base.name}, R={self.rnl.R:g})"

    def phi(self, t):
        return self.rnl.Phi(t)

    def eta_log(self, s):
        return self.rnl.eta_R_log(s)


def build_phi_eps(nl, eps: float) -> RegularizedNonlinearity:
    """phi_eps(t) = (1 + eps) max(phi(t), phi(eps))."""
    return RegularizedNonlinearity(nl, eps)


def sigma_from_tau(tau: float) -> float:
    if not (0 < tau < 1):
        raise ArgumentError("❌ tau must lie in (0, 1)", tau=tau)
    return (tau + 1.0) / (2.0 * tau)


def _radial_pucci(d2w, dw, rho, ell: EllipticityPair, sign: str, dim: int = 2) -> np.ndarray:
    """P+-(D2w) for w(x) = W(|x|): eigenvalues W'' once and W'/rho (dim-1) times."""
    e_r = np.asarray(d2w, dtype=float)
    e_t = np.asarray(dw, dtype=float) / np.asarray(rho, dtype=float)
    pos = np.maximum(e_r, 0) + (dim - 1) * np.maximum(e_t, 0)
    neg = np.minimum(e_r, 0) + (dim - 1) * np.minimum(e_t, 0)
    if sign == "plus":
        return -ell.lam * pos - ell.Lam * neg
    return -ell.Lam * pos - ell.lam * neg


@dataclass
class RadialBarrier:
    """w(x) = W(|x - center|) tabulated on a radial mesh, with its profile in its own variable."""
    center: np.ndarray
    inner_radius: float
    outer_radius: float
    orientation: str
    rho: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    d2w: np.ndarray
    t: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    certificate: float
    params: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        order = np.argsort(self.rho)
        for key in ("rho", "w", "dw", "d2w"):
            setattr(self, key, np.asarray(getattr(self, key), dtype=float)[order])

    def evaluate(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        r = np.linalg.norm(p - np.asarray(self.center), axis=1)
        return np.interp(r, self.rho, self.w)

    def stencil_region(self, grid: GridField) -> np.ndarray:
        """Interior nodes whose 9-point stencil stays inside the barrier's shell."""
        X, Y = grid.coords()
        r = np.hypot(X - self.center[0], Y - self.center[1])
        reach = math.sqrt(2.0) * grid.h
        return (grid.mask != EXTERIOR) & (r - reach > self.inner_radius) & (r + reach < self.outer_radius)

    def monotone(self) -> bool:
        s = np.sign(self.dw[np.abs(self.dw) > 0])
        want = -1.0 if self.orientation == "increasing-inward" else 1.0
        return bool(np.all(s == want))

    def quadratic_exponent(self, t_max: Optional[float] = None) -> float:
        """Exponent of a power fit g(t) ~ c t^k on the flat part of the regularized profile."""
        t_max = self.params.get("eps_flat_t", None) if t_max is None else t_max
        keep = (self.t > 0) & (self.g > 0)
        if t_max is not None:
            keep &= self.t <= t_max
        if keep.sum() < 3:
            raise NumericalFailure("❌ not enough mesh points for a power fit", points=int(keep.sum()))
        k, _ = np.polyfit(np.log(self.t[keep]), np.log(self.g[keep]), 1)
        return float(k)


@dataclass
class AlmostMaxReport:
    M: float
    sigma: float
    threshold: float
    c0: float
    r0: float
    sup_w: float
    verified: bool
    maximum_principle_exact: bool
    calibration: dict = field(default_factory=dict)


@dataclass
class ShootingResult:
    barrier: Optional[RadialBarrier]
    mu: float
    degenerate: bool
    level: float
    endpoint_values: dict = field(default_factory=dict)


@dataclass
class KhatReport:
    eps: float
    k_direct: float
    k_sufficient: float
    k_hat: float
    slack_at_k_hat_plus_10: float
    holds_above: bool
    sufficient_holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SharpnessReport:
    H: LogLogValue
    eps: float
    K: float
    M: LogLogValue
    gamma: float
    R_hat: float
    R: float
    barrier_admissible: bool
    H_min: LogLogValue
    ratio_lower_bound: LogLogValue
    psi_hat: LogLogValue
    chain_lower: LogLogValue
    c_H_gamma: LogLogValue
    chain_holds: bool
    chain_certified: bool
    u_hat: LogLogValue
    K_hat: float
    f_ode_residual: float
    f_strict_margin: float
    g_check_slack: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            out[key] = value.to_json() if isinstance(value, LogLogValue) else value
        return out


class BarrierModule:
    """Radial barriers of the comparison arguments and the double-exponential example."""

    def __init__(self, ell: EllipticityPair = EllipticityPair(), dim: int = 2, points: int = PROFILE_POINTS):
        self.ell = ell
        self.dim = dim
        self.points = points

    # ---------- radial maximum barrier ----------
    def _implicit_time(self, phi_eps: RegularizedNonlinearity, f: float) -> float:
        """lambda int_0^f ds / phi_eps(s), split where phi_eps stops being constant."""
        lam, eps = self.ell.lam, phi_eps.eps
        flat = phi_eps.floor_value
        if f <= eps:
            return lam * f / flat
        rest, _ = integrate.quad(lambda s: 1.0 / phi_eps.phi(s), eps, f, epsabs=1e-13, epsrel=1e-12, limit=200)
        return lam * (eps / flat + rest)

    def r0(self, rnl: RescaledNonlinearity) -> float:
        """Half of lambda int_0^1 ds / phi_{1/2}(s)."""
        return 0.5 * self._implicit_time(build_phi_eps(MajorantProfile(rnl), EPS_0), 1.0)

    def _max_profile(self, rnl: RescaledNonlinearity, eps: float, r: float, dense: bool = False):
        phi_eps = build_phi_eps(MajorantProfile(rnl), eps)
        lam = self.ell.lam
        mesh = r * np.concatenate([[0.0], np.geomspace(1e-6, 1.0, self.points - 1)])
        rhs = lambda t, y: [y[1], float(phi_eps.phi(max(y[1], 0.0))) / lam]
        sol = integrate.solve_ivp(rhs, (0.0, r), [0.0, 0.0], method="DOP853", t_eval=mesh,
                                  rtol=ODE_RTOL, atol=ODE_ATOL, dense_output=dense)
        if not sol.success:
            raise NumericalFailure("❌ radial barrier ODE failed", message=sol.message, eps=eps, r=r)
        return phi_eps, mesh, sol

    def radial_max_barrier(self, M: float, r: float, rnl: RescaledNonlinearity, eps: float,
                           center=(0.0, 0.0)) -> RadialBarrier:
        """w_eps(x) = g_eps(r) + M - g_eps(|x|) with t = lambda int_0^{f_eps(t)} ds/phi_eps(s), g_eps' = f_eps."""
        if not (0 < eps <= EPS_0):
            raise ArgumentError("❌ eps must lie in (0, 1/2]", eps=eps)
        r0 = self.r0(rnl)
        if not (0 < r <= r0):
            raise PreconditionError("❌ radius exceeds r0: lambda int_0^1 ds/phi_{1/2}(s) > 2 r fails",
                                    r=r, r0=r0, integral=2 * r0)
        phi_eps, mesh, sol = self._max_profile(rnl, eps, r)
        g, f = sol.y[0], sol.y[1]
        dg2 = np.asarray(phi_eps.phi(np.maximum(f, 0.0))) / self.ell.lam
        # implicit relation checked by quadrature on a sample of the mesh
        sample = np.unique(np.linspace(0, len(mesh) - 1, 64).astype(int))
        implicit_err = max(abs(self._implicit_time(phi_eps, float(f[i])) - mesh[i]) for i in sample)
        if f[-1] >= 1.0:
            raise NumericalFailure("❌ barrier slope reached 1 inside r0", f_r=float(f[-1]), r=r)
        rho = mesh
        w = g[-1] + M - g
        inner = rho > 0
        slack = _radial_pucci(-dg2[inner], -f[inner], rho[inner], self.ell, "minus", self.dim) \
            - np.asarray(phi_eps.phi(f[inner]))
        certificate = float(np.min(slack / np.asarray(phi_eps.phi(f[inner]))))
        flat_t = self.ell.lam * eps / phi_eps.floor_value
        logger.debug("radial max barrier r=%g eps=%g: g(r)=%.6g implicit err %.2e", r, eps, g[-1], implicit_err)
        return RadialBarrier(np.asarray(center, dtype=float), 0.0, r, "increasing-inward", rho, w, -f, -dg2,
                             mesh, g, f, certificate,
                             params={"M": M, "eps": eps, "r0": r0, "implicit_error": implicit_err,
                                     "f_max": float(f[-1]), "eps_flat_t": min(flat_t, r)})

    def osgood_limit_check(self, M: float, r: float, rnl: RescaledNonlinearity, eps_list: Sequence[float]) -> dict:
        """Sup-norm gaps between consecutive f_eps profiles as eps decreases."""
        eps_sorted = sorted((float(e) for e in eps_list), reverse=True)
        profiles = [self.radial_max_barrier(M, r, rnl, e) for e in eps_sorted]
        gaps = [float(np.max(np.abs(a.dg - b.dg))) for a, b in zip(profiles[:-1], profiles[1:])]
        return {"eps": eps_sorted, "gaps": gaps, "g_r": [float(p.g[-1]) for p in profiles],
                "shrinking": bool(all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(gaps[:-1], gaps[1:])))}

    # ---------- almost maximum principle ----------
    def almost_max_threshold(self, M: float, rnl: RescaledNonlinearity, sigma: float,
                             levels: Sequence[float] = CALIBRATION_LEVELS) -> AlmostMaxReport:
        if sigma <= 1:
            raise ArgumentError("❌ sigma must exceed 1", sigma=sigma)
        if M <= 0:
            raise ArgumentError("❌ boundary level M must be positive", M=M)
        mu = sigma - 1.0
        r0 = self.r0(rnl)
        _, _, sol = self._max_profile(rnl, EPS_CALIBRATION, r0, dense=True)
        g_of = lambda r: float(sol.sol(r)[0])
        exact = osgood_classify(rnl.base)["at_zero"] == "diverges"

        def r_star(level: float) -> float:
            if g_of(r0) <= mu * level:
                return r0
            try:
                return brentq(lambda r: g_of(r) - mu * level, 0.0, r0, xtol=1e-15, rtol=1e-12)
            except ValueError as e:
                raise NumericalFailure("❌ c0 calibration bracket failed", level=level,
                                       g_r0=g_of(r0), target=mu * level) from e

        calib = {}
        for level in sorted(set(float(x) for x in levels) | {float(M)}):
            rs = r_star(level)
            if rs <= 0:
                raise NumericalFailure("❌ no radius satisfies g(r) <= (sigma - 1) M", level=level)
            calib[level] = rs * float(rnl.eta_R(level)) ** 2
        c0 = C0_SAFETY * min(calib.values())
        threshold = c0 / float(rnl.eta_R(M)) ** 2
        sup_w = M + g_of(threshold)
        verified = sup_w <= sigma * M
        logger.info("almost-max threshold M=%g sigma=%g: c0=%.6g r=%.6g (exact max principle: %s)",
                    M, sigma, c0, threshold, exact)
        return AlmostMaxReport(M, sigma, threshold, c0, r0, sup_w, bool(verified), bool(exact),
                               {"levels": list(calib.keys()), "c0_candidates": list(calib.values()),
                                "eps": EPS_CALIBRATION})

    # ---------- boundary Harnack barriers ----------
    def _log_ode(self, rnl: RescaledNonlinearity, Ctilde: float, y0: float, sign: float, t_end: float, mesh=None):
        """y = log g with y' = sign C eta_R(e^y) and W' = e^y; stops when y blows up."""
        def rhs(t, z):
            return [sign * Ctilde * float(rnl.eta_R_log(z[0])), math.exp(min(z[0], LOG_BLOWUP))]

        blow = lambda t, z: z[0] - LOG_BLOWUP
        blow.terminal = True
        sol = integrate.solve_ivp(rhs, (0.0, t_end), [y0, 0.0], method="DOP853", t_eval=mesh,
                                  rtol=ODE_RTOL, atol=ODE_ATOL, events=blow)
        if sol.status == 1:
            return None
        if not sol.success:
            raise NumericalFailure("❌ barrier ODE failed", message=sol.message)
        return sol

    def _w1_end(self, mu0: float, rnl, Ctilde) -> float:
        if mu0 == 0:
            return self._zero_start_integral(rnl, Ctilde, 1.0)
        sol = self._log_ode(rnl, Ctilde, math.log(mu0), +1.0, 1.0)
        return math.inf if sol is None else float(sol.y[1][-1])

    def _zero_start_integral(self, rnl, Ctilde, t_end: float) -> float:
        """int_0^t g with g' = C Phi_R(g), g(0) = 0."""
        if osgood_classify(rnl.base)["at_zero"] == "diverges":
            return 0.0
        rhs = lambda t, z: [Ctilde * float(rnl.Phi(max(z[0], 0.0))), z[0]]
        sol = integrate.solve_ivp(rhs, (0.0, t_end), [0.0, 0.0], method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL)
        return float(sol.y[1][-1])

    def _mesh(self, t_end: float) -> np.ndarray:
        return np.linspace(0.0, t_end, self.points + 1)

    @staticmethod
    def assume_m_u(m_u: float, rnl: RescaledNonlinearity, Ctilde: float) -> bool:
        value = HarnackEngine().carleson_integral(0.0, m_u / 3.0, rnl)
        return not isinstance(value, float) or value >= 4 * Ctilde

    @staticmethod
    def assume_M_v(M_v: float, rnl: RescaledNonlinearity, Ctilde: float) -> bool:
        value = HarnackEngine().carleson_integral(M_v, INFINITE, rnl)
        return not isinstance(value, float) or value >= 2 * Ctilde

    def lower_barrier_w1(self, m_u: float, rnl: RescaledNonlinearity, Ctilde: float,
                         center=(0.0, 2.0)) -> ShootingResult:
        """w1(x) = int_0^{2-|x-x1|} g with g' = C Phi_R(g), g(0) = mu0, shot so that w1 = m_u on the inner sphere."""
        if m_u <= 0:
            raise ArgumentError("❌ m_u must be positive", m_u=m_u)
        if Ctilde <= 1:
            raise ArgumentError("❌ Ctilde must exceed 1", Ctilde=Ctilde)
        if not self.assume_m_u(m_u, rnl, Ctilde):
            logger.warning("int_0^{m_u/3} ds/Phi_R < 4 Ctilde: degenerate branch mu0 = 0")
            return ShootingResult(None, 0.0, True, m_u, {})
        ends = {"mu0=0": self._w1_end(0.0, rnl, Ctilde), "mu0=m_u": self._w1_end(m_u, rnl, Ctilde)}
        def F(ell: float) -> float:
            end = self._w1_end(math.exp(ell), rnl, Ctilde)
            return end - m_u if math.isfinite(end) else 1e300

        hi = math.log(m_u)
        lo = hi - 2.0
        f_lo = F(lo)
        while f_lo > 0 and lo > hi - 700:
            lo -= 2 * (hi - lo)
            f_lo = F(lo)
        f_hi = ends["mu0=m_u"] - m_u
        if not (f_lo <= 0 < f_hi):
            raise NumericalFailure("❌ mu0 shooting bracket failed", lower_end=f_lo + m_u, upper_end=f_hi + m_u,
                                   m_u=m_u)
        ell = brentq(F, lo, hi, xtol=1e-14, rtol=1e-15)
        mu0 = math.exp(ell)
        mesh = self._mesh(1.0)
        sol = self._log_ode(rnl, Ctilde, ell, +1.0, 1.0, mesh)
        if sol is None:
            raise NumericalFailure("❌ w1 profile blew up on (0, 1)", mu0=mu0)
        g = np.exp(sol.y[0])
        W = sol.y[1]
        Phi_g = np.asarray(rnl.Phi(g))
        rho = 2.0 - mesh
        P = _radial_pucci(Ctilde * Phi_g, -g, rho, self.ell, "plus", self.dim)
        slack = (-2.0 * Phi_g - P) / Phi_g
        barrier = RadialBarrier(np.asarray(center, dtype=float), 1.0, 2.0, "increasing-inward", rho, W, -g,
                                Ctilde * Phi_g, mesh, W, g, float(np.min(slack)),
                                params={"mu0": mu0, "Ctilde": Ctilde, "m_u": m_u,
                                        "inner_value": float(W[-1])})
        logger.debug("w1: mu0=%.12g inner value %.12g certificate %.3g", mu0, W[-1], barrier.certificate)
        return ShootingResult(barrier, mu0, False, m_u, ends)

    def _w2_end(self, mu1: float, rnl, Ctilde) -> float:
        sol = self._log_ode(rnl, Ctilde, math.log(mu1), -1.0, 2.0)
        if sol is None:
            raise NumericalFailure("❌ w2 profile left the float range", mu1=mu1)
        return float(sol.y[1][-1])

    def upper_barrier_w2(self, M_v: float, rnl: RescaledNonlinearity, Ctilde: float,
                         center=(0.0, -1.0)) -> ShootingResult:
        """w2(x) = int_0^{|x-x0|-1} f with f' = -C Phi_R(f), f(0) = mu1, shot so that w2 = M_v on the outer sphere."""
        if M_v <= 0:
            raise ArgumentError("❌ M_v must be positive", M_v=M_v)
        if Ctilde <= 1:
            raise ArgumentError("❌ Ctilde must exceed 1", Ctilde=Ctilde)
        if not self.assume_M_v(M_v, rnl, Ctilde):
            logger.warning("int_{M_v}^inf ds/Phi_R < 2 Ctilde: degenerate branch mu1 = inf")
            return ShootingResult(None, math.inf, True, M_v, {})
        lo = math.log(M_v / 3.0)
        ends = {"mu1=M_v/3": self._w2_end(M_v / 3.0, rnl, Ctilde)}
        F = lambda ell: self._w2_end(math.exp(ell), rnl, Ctilde) - M_v
        step, hi = 1.0, lo + 1.0
        f_hi = F(hi)
        while f_hi <= 0:
            step *= 2
            hi = lo + step
            if hi > LOG_BLOWUP:
                raise NumericalFailure("❌ mu1 shooting bracket failed", lower_end=ends["mu1=M_v/3"],
                                       upper_end=f_hi + M_v, M_v=M_v)
            f_hi = F(hi)
        ell = brentq(F, lo, hi, xtol=1e-14, rtol=1e-15)
        mu1 = math.exp(ell)
        ends[f"mu1={math.exp(hi):.6g}"] = f_hi + M_v
        mesh = self._mesh(2.0)
        sol = self._log_ode(rnl, Ctilde, ell, -1.0, 2.0, mesh)
        f = np.exp(sol.y[0])
        W = sol.y[1]
        Phi_f = np.asarray(rnl.Phi(f))
        rho = 1.0 + mesh
        P = _radial_pucci(-Ctilde * Phi_f, f, rho, self.ell, "minus", self.dim)
        slack = (P - 2.0 * Phi_f) / Phi_f
        barrier = RadialBarrier(np.asarray(center, dtype=float), 1.0, 3.0, "increasing-outward", rho, W, f,
                                -Ctilde * Phi_f, mesh, W, f, float(np.min(slack)),
                                params={"mu1": mu1, "Ctilde": Ctilde, "M_v": M_v, "outer_value": float(W[-1]),
                                        "inf_gradient": float(np.min(f))})
        logger.debug("w2: mu1=%.12g outer value %.12g certificate %.3g", mu1, W[-1], barrier.certificate)
        return ShootingResult(barrier, mu1, False, M_v, ends)

    def choose_ctilde(self, rnl: RescaledNonlinearity, start: float = 2.0) -> float:
        """Double Ctilde from 2 until both radial inequalities hold with slack on a level sample."""
        levels = np.geomspace(1e-8, 1e8, 161)
        Phi = np.asarray(rnl.Phi(levels))
        C = start
        for _ in range(CTILDE_MAX_DOUBLINGS):
            lower = _radial_pucci(C * Phi, -levels, 1.0, self.ell, "plus", self.dim)
            upper = _radial_pucci(-C * Phi, levels, 1.0, self.ell, "minus", self.dim)
            slack = min(np.min((-2 * Phi - lower) / Phi), np.min((upper - 2 * Phi) / Phi))
            if slack > 0:
                logger.info("Ctilde = %g (relative slack %.3g)", C, slack)
                return C
            C *= 2
        raise NumericalFailure("❌ no Ctilde found by doubling", last=C)

    # ---------- double-exponential example ----------
    @staticmethod
    def _check_eps(eps: float):
        if not (0 < eps < 0.25):
            raise PreconditionError("❌ eps must lie in (0, 1/4)", eps=eps)

    @staticmethod
    def k_sufficient(eps: float) -> float:
        """Least K with log(1/eps) <= e^K (e^{eps/2} - 1)."""
        return math.log(math.log(1.0 / eps) / math.expm1(eps / 2.0))

    def lemma61_check(self, eps: float) -> KhatReport:
        """Least grid K with int_0^1 e^{e^{K+s/2}} ds >= e^{e^{K+1/2-eps}}."""
        self._check_eps(eps)
        holds = lambda K: loglog_integral(K, 0.5, 0.0, 1.0).loglog_lower >= K + 0.5 - eps
        k_direct = None
        for K in np.arange(K_START, K_MAX + K_STEP / 2, K_STEP):
            if holds(float(K)):
                k_direct = round(float(K), 10)
                break
        if k_direct is None:
            raise NumericalFailure("❌ K_hat not found below K_max", eps=eps, K_max=K_MAX)
        k_suff = math.ceil(self.k_sufficient(eps) / K_STEP) * K_STEP
        k_hat = max(k_direct, k_suff)
        trial_ks = [k for k in (k_hat + 1, k_hat + 2, k_hat + 5, k_hat + 10, k_hat + 20, k_hat + 50) if k <= K_MAX]
        holds_above = all(holds(k) for k in trial_ks)
        top = k_hat + 10
        slack = loglog_integral(top, 0.5, 0.0, 1.0).loglog_lower - (top + 0.5 - eps)
        suff = math.log(1.0 / eps) <= math.exp(k_hat) * math.expm1(eps / 2.0)
        logger.info("lemma check eps=%g: k_direct=%.2f k_sufficient=%.2f", eps, k_direct, k_suff)
        return KhatReport(eps, k_direct, float(k_suff), float(k_hat), float(slack), holds_above, suff)

    @staticmethod
    def r_hat(eps: float) -> float:
        """Smallest grid R with eps e^{R - (1+eps)/2} >= 4."""
        exact = (1.0 + eps) / 2.0 + math.log(4.0 / eps)
        return math.ceil(exact / R_HAT_STEP - 1e-9) * R_HAT_STEP

    @staticmethod
    def _H_of_K(K: float) -> DoubleExpIntegral:
        return loglog_integral(K, 0.5, 0.0, 0.5)

    @staticmethod
    def _M_of_K(K: float) -> DoubleExpIntegral:
        return loglog_integral(K, 0.5, 0.0, 1.0)

    @staticmethod
    def _G_integral(R: float, eps: float, lo: float = 0.25, hi: float = 0.5) -> DoubleExpIntegral:
        return loglog_integral(R, -(1.0 + eps), lo, hi)

    def h_min(self, eps: float) -> LogLogValue:
        """Smallest H with K >= K_hat(eps) and an admissible R >= R_hat(eps)."""
        self._check_eps(eps)
        M_hat = self._G_integral(self.r_hat(eps), eps)
        K_R = solve_log_level(M_hat.log_value, self._M_of_K, 0.0, 10.0)
        K_min = max(K_R, self.lemma61_check(eps).k_hat)
        H = self._H_of_K(K_min).value
        return max(H, LogLogValue.of(H_FLOOR))

    def sharpness_example(self, H: Union[float, LogLogValue], eps: float) -> SharpnessReport:
        self._check_eps(eps)
        H = H if isinstance(H, LogLogValue) else LogLogValue.of(float(H))
        if H < LogLogValue.of(H_FLOOR):
            raise PreconditionError("❌ H must be at least 1e4", H=H.render())
        flags = []
        log_H = H.log
        K = solve_log_level(log_H, self._H_of_K, 0.0, 10.0)
        M_int = self._M_of_K(K)
        M = M_int.value
        gamma = math.exp(1.0 / 16.0 - 2.0 * eps)
        R_hat = self.r_hat(eps)
        R = solve_log_level(M_int.log_value, lambda x: self._G_integral(x, eps), R_hat - 5.0, R_hat + 5.0)
        admissible = R >= R_hat
        H_min = self.h_min(eps)
        if not admissible:
            flags.append("barrier_inadmissible")
            logger.warning("H=%s is below H_min(eps=%g)=%s; barrier G is not admissible", H.render(), eps,
                           H_min.render())
        ratio = H ** (gamma - 1.0)
        psi = self._G_integral(R, eps, 0.375, 0.5).value
        sixteenth = LogLogValue.of(1.0 / 16.0)
        chain = sixteenth * LogLogValue.exp_exp(R - 7.0 / 16.0 * (1.0 + eps))
        c_H_gamma = sixteenth * (H ** gamma)
        lemma = self.lemma61_check(eps)
        certified = admissible and K >= lemma.k_hat
        # F(t) = int_0^t e^{e^{K+s/2}} ds: d/dt log F' = F''/F' should equal log(F')/2
        ts = np.linspace(0.0, 1.0, 101)
        dt = 1e-5
        log_fp = lambda t: np.exp(K + t / 2.0)
        dlog = (log_fp(ts + dt) - log_fp(ts - dt)) / (2 * dt)
        f_residual = float(np.max(np.abs(dlog - 0.5 * log_fp(ts)) / (0.5 * log_fp(ts))))
        # -(2-x1) F'' > -2 F'' reduces to x1 F'' > 0, relative margin x1 / 2
        f_margin = float(np.min(ts[1:] / 2.0))
        g_slack = eps * math.exp(R - (1.0 + eps) / 2.0) - 4.0
        return SharpnessReport(H, eps, K, M, gamma, R_hat, R, bool(admissible), H_min, ratio, psi, chain,
                               c_H_gamma, bool(psi >= c_H_gamma), bool(certified), H, lemma.k_hat,
                               f_residual, f_margin, g_slack, flags)


# ---------- Grid transfer ----------

def rasterize_radial(barrier: RadialBarrier, grid: GridField) -> GridField:
    """Barrier values on every non-exterior node (radially clamped outside its shell)."""
    values = np.zeros((grid.nx, grid.ny))
    live = grid.mask != EXTERIOR
    values[live] = barrier.evaluate(grid.points()[live])
    out = grid.with_values(values, source=f"radial barrier {barrier.orientation}")
    return out


_MODULE = BarrierModule()


def radial_max_barrier(M, r, rnl, eps, lam: float = 1.0):
    return BarrierModule(EllipticityPair(lam, max(lam, 1.0))).radial_max_barrier(M, r, rnl, eps)


def almost_max_threshold(M, rnl, sigma, lam: float = 1.0):
    return BarrierModule(EllipticityPair(lam, max(lam, 1.0))).almost_max_threshold(M, rnl, sigma)


def lemma61_check(eps):
    return _MODULE.lemma61_check(eps)


def sharpness_example(H, eps):
    return _MODULE.sharpness_example(H, eps)


def h_min(eps):
    return _MODULE.h_min(eps)


if __name__ == "__main__":
    from rich import print
    rnl = RescaledNonlinearity(Nonlinearity.log_model(1.0), 1.0)
    bm = BarrierModule()
    C = bm.choose_ctilde(rnl)
    print(f"[info] Ctilde={C} mu0={bm.lower_barrier_w1(1.0, rnl, C).mu:.6g} "
          f"mu1={bm.upper_barrier_w2(1.0, rnl, C).mu:.6g}")
    rep = bm.sharpness_example(1e4, 0.03)
    print(f"[info] K={rep.K:.6f} R={rep.R:.4f} R_hat={rep.R_hat:.4f} admissible={rep.barrier_admissible}")
