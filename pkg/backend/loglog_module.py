import math
import logging
from dataclasses import dataclass
from functools import total_ordering

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import logsumexp

from backend.core import ArgumentError, NumericalFailure

logger = logging.getLogger(__name__)

PLAIN = "plain"
SINGLE_LOG = "single_log"
DOUBLE_LOG = "double_log"
_LEVELS = (PLAIN, SINGLE_LOG, DOUBLE_LOG)

# largest argument of exp that stays finite in float64
_EXP_MAX = 709.0

# rectangle width (in v = e^u) of the rigorous bracket and the width of the
# top window it covers; everything below the window is bounded in one piece
BRACKET_DV = 1e-3
BRACKET_WINDOW = 60.0


@total_ordering
@dataclass(frozen=True)
class LogLogValue:
    """A positive number stored as x, log x or log log x.

    plain: payload = x;  single_log: payload = log x;  double_log: payload = log log x.
    """
    level: str
    payload: float

    def __post_init__(self):
        if self.level not in _LEVELS:
            raise ArgumentError("❌ unknown LogLogValue level", level=self.level)
        if self.level == PLAIN and self.payload <= 0:
            raise ArgumentError("❌ LogLogValue holds positive numbers only", payload=self.payload)

    # ---------- Constructors ----------
    @classmethod
    def of(cls, x: float) -> "LogLogValue":
        return cls(PLAIN, float(x))

    @classmethod
    def from_log(cls, log_x: float) -> "LogLogValue":
        return cls(SINGLE_LOG, float(log_x))

    @classmethod
    def exp_exp(cls, a: float) -> "LogLogValue":
        """The number e^{e^a}."""
        return cls(DOUBLE_LOG, float(a))

    # ---------- Views ----------
    @property
    def log(self) -> float:
        """log x as a float; raises when e^payload overflows."""
        if self.level == PLAIN:
            return math.log(self.payload)
        if self.level == SINGLE_LOG:
            return self.payload
        if self.payload > _EXP_MAX:
            raise NumericalFailure("❌ log of a double_log value overflows", payload=self.payload)
        return math.exp(self.payload)

    @property
    def loglog(self) -> float:
        """log log x; defined for x > 1."""
        if self.level == DOUBLE_LOG:
            return self.payload
        lx = self.log
        if lx <= 0:
            raise ArgumentError("❌ log log is defined for values above 1 only", log=lx)
        return math.log(lx)

    def exceeds_one(self) -> bool:
        if self.level == DOUBLE_LOG:
            return True
        return self.log > 0

    def to_float(self) -> float:
        if self.level == PLAIN:
            return self.payload
        lx = self.log
        if lx > _EXP_MAX:
            raise NumericalFailure("❌ value is not representable as a float", log=lx)
        return math.exp(lx)

    def lowered(self) -> "LogLogValue":
        """Move one level down when no overflow occurs, else return self."""
        if self.level == DOUBLE_LOG and self.payload <= _EXP_MAX:
            return LogLogValue(SINGLE_LOG, math.exp(self.payload))
        if self.level == SINGLE_LOG and self.payload <= _EXP_MAX:
            return LogLogValue(PLAIN, math.exp(self.payload))
        return self

    # ---------- Ordering ----------
    def _compare(self, other: "LogLogValue") -> int:
        a_big, b_big = self.exceeds_one(), other.exceeds_one()
        if a_big and b_big:
            x, y = self.loglog, other.loglog
        elif not a_big and not b_big:
            x, y = self.log, other.log
        else:
            return 1 if a_big else -1
        return (x > y) - (x < y)

    def __eq__(self, other):
        if not isinstance(other, LogLogValue):
            return NotImplemented
        return self._compare(other) == 0

    def __lt__(self, other):
        if not isinstance(other, LogLogValue):
            return NotImplemented
        return self._compare(other) < 0

    def __hash__(self):
        # same keys _compare uses, so equal values across levels hash alike
        if self.exceeds_one():
            return hash((True, self.loglog))
        return hash((False, self.log))

    # ---------- Arithmetic ----------
    def __mul__(self, other: "LogLogValue") -> "LogLogValue":
        if not isinstance(other, LogLogValue):
            other = LogLogValue.of(other)
        if self.level == DOUBLE_LOG and other.level == DOUBLE_LOG:
            return LogLogValue.exp_exp(float(np.logaddexp(self.payload, other.payload)))
        if DOUBLE_LOG in (self.level, other.level):
            big, small = (self, other) if self.level == DOUBLE_LOG else (other, self)
            ls = small.log
            # log(xy) = e^a (1 + ls e^{-a})
            ratio = ls * math.exp(-big.payload)
            if ratio > -1.0:
                return LogLogValue.exp_exp(big.payload + math.log1p(ratio))
            if big.payload <= _EXP_MAX:
                return LogLogValue.from_log(math.exp(big.payload) + ls)
            raise NumericalFailure("❌ product of a double_log value drops below one", payload=big.payload, log=ls)
        return LogLogValue.from_log(self.log + other.log)

    __rmul__ = __mul__

    def __truediv__(self, other: "LogLogValue") -> "LogLogValue":
        if not isinstance(other, LogLogValue):
            other = LogLogValue.of(other)
        if self.level == DOUBLE_LOG and self.payload > _EXP_MAX:
            if other.level == DOUBLE_LOG:
                r = other.payload - self.payload
                if r >= 0:
                    raise NumericalFailure("❌ quotient of comparable double_log values is not representable")
                return LogLogValue.exp_exp(self.payload + math.log1p(-math.exp(r)))
            ratio = -other.log * math.exp(-self.payload)
            if ratio <= -1.0:
                raise NumericalFailure("❌ quotient of a double_log value drops below one", payload=self.payload)
            return LogLogValue.exp_exp(self.payload + math.log1p(ratio))
        return LogLogValue.from_log(self.log - other.log)

    def __pow__(self, gamma: float) -> "LogLogValue":
        if gamma <= 0:
            return LogLogValue.from_log(gamma * self.log)
        if self.level == DOUBLE_LOG:
            return LogLogValue.exp_exp(self.payload + math.log(gamma))
        return LogLogValue.from_log(gamma * self.log)

    # ---------- Rendering ----------
    def render(self) -> str:
        try:
            return f"{self.to_float():.6e}"
        except NumericalFailure:
            if self.level == SINGLE_LOG:
                return f"exp({self.payload:.12g})"
            return f"exp(exp({self.payload:.12g}))"

    def to_json(self) -> dict:
        return {"level": self.level, "payload": self.payload, "decimal": self.render()}


# ---------- Integrals of e^{e^{a + beta s}} ----------

@dataclass(frozen=True)
class DoubleExpIntegral:
    """int_{s0}^{s1} e^{e^{a + beta s}} ds with a point estimate and a two-sided bracket.

    All logs are stored as b + offset with b = e^{u_hi}, u_hi the top of the
    exponent range, so that double-exponential sizes never reach a float.
    """
    a: float
    beta: float
    s0: float
    s1: float
    u_hi: float
    offset: float
    offset_lower: float
    offset_upper: float

    @property
    def b(self) -> float:
        return math.exp(self.u_hi)

    def _loglog(self, offset: float) -> float:
        ratio = offset / self.b
        if ratio <= -1.0:
            raise NumericalFailure("❌ integral is below one, log log undefined", log=self.b + offset)
        return self.u_hi + math.log1p(ratio)

    @property
    def log_value(self) -> float:
        return self.b + self.offset

    @property
    def loglog_value(self) -> float:
        return self._loglog(self.offset)

    @property
    def loglog_lower(self) -> float:
        return self._loglog(self.offset_lower)

    @property
    def loglog_upper(self) -> float:
        return self._loglog(self.offset_upper)

    def _as_value(self, offset: float) -> LogLogValue:
        if self.b + offset > 0:
            return LogLogValue.exp_exp(self._loglog(offset))
        return LogLogValue.from_log(self.b + offset)

    @property
    def value(self) -> LogLogValue:
        return self._as_value(self.offset)

    @property
    def lower(self) -> LogLogValue:
        return self._as_value(self.offset_lower)

    @property
    def upper(self) -> LogLogValue:
        return self._as_value(self.offset_upper)


def _u_range(a: float, beta: float, s0: float, s1: float):
    if s1 <= s0:
        raise ArgumentError("❌ integration limits must satisfy s0 < s1", s0=s0, s1=s1)
    if beta == 0:
        raise ArgumentError("❌ beta must be non-zero")
    u0, u1 = a + beta * s0, a + beta * s1
    u_lo, u_hi = (u0, u1) if u0 <= u1 else (u1, u0)
    if u_hi > _EXP_MAX:
        raise NumericalFailure("❌ exponent range beyond float64 in log-log integral", u_hi=u_hi)
    return u_lo, u_hi


def loglog_integral(a: float, beta: float, s0: float, s1: float) -> DoubleExpIntegral:
    """Overflow-free evaluation of int_{s0}^{s1} exp(exp(a + beta s)) ds.

    With v = e^{a + beta s} the integral is |beta|^{-1} int e^v / v dv, so
    log J = b - log b - log|beta| + log S with b the upper v-limit and
    S = int_0^{b - v_lo} e^{-w} b / (b - w) dw.
    """
    u_lo, u_hi = _u_range(a, beta, s0, s1)
    b = math.exp(u_hi)
    width = -b * math.expm1(u_lo - u_hi)
    integrand = lambda w: math.exp(-w) * b / (b - w)
    top = min(width, 50.0)
    S, _ = integrate.quad(integrand, 0.0, top, epsabs=1e-14, epsrel=1e-12, limit=200)
    if width > top:
        # beyond the window e^{-w} b/(b-w) <= e^{-50} e^{u_hi - u_lo}
        rest, _ = integrate.quad(integrand, top, width, epsabs=1e-14, epsrel=1e-10, limit=200)
        S += rest
    offset = -u_hi - math.log(abs(beta)) + math.log(S)
    lower, upper = loglog_integral_bracket(a, beta, s0, s1)
    logger.debug("loglog integral a=%g beta=%g [%g,%g]: offset=%.15g bracket [%.15g, %.15g]",
                 a, beta, s0, s1, offset, lower, upper)
    return DoubleExpIntegral(a, beta, s0, s1, u_hi, offset, lower, upper)


def loglog_integral_bracket(a: float, beta: float, s0: float, s1: float):
    """Rectangle bounds on the increasing integrand e^{e^u}, returned as offsets from b.

    Rectangles sit on the top BRACKET_WINDOW units of v = e^u with width
    BRACKET_DV in v; the part below the window is bounded by one rectangle.
    """
    u_lo, u_hi = _u_range(a, beta, s0, s1)
    b = math.exp(u_hi)
    width = -b * math.expm1(u_lo - u_hi)
    window = min(width, BRACKET_WINDOW)
    n = max(2, int(math.ceil(window / BRACKET_DV)) + 1)
    w = np.linspace(0.0, window, n)
    # u-offsets below the top: delta = -log(1 - w / b)
    delta = -np.log1p(-w / b)
    if window == width:
        delta[-1] = u_hi - u_lo
    du = np.diff(delta)
    keep = du > 0
    log_du = np.log(du[keep])
    # log of e^{e^u} relative to b is -w
    upper_terms = [logsumexp(log_du - w[:-1][keep])]
    lower_terms = [logsumexp(log_du - w[1:][keep])]
    rest = (u_hi - u_lo) - delta[-1]
    if rest > 0:
        upper_terms.append(math.log(rest) - window)
    scale = -math.log(abs(beta))
    lower = float(logsumexp(lower_terms)) + scale
    upper = float(logsumexp(upper_terms)) + scale
    return lower, upper


def solve_log_level(target_log: float, make, lo: float, hi: float, tol: float = 1e-13) -> float:
    """Find x with make(x).log_value = target_log by bracketing on a monotone map."""
    f = lambda x: make(x).log_value - target_log
    f_lo, f_hi = f(lo), f(hi)
    grow = 0
    while f_lo * f_hi > 0 and grow < 60:
        if f_lo > 0:
            lo -= (hi - lo)
            f_lo = f(lo)
        else:
            hi += (hi - lo)
            f_hi = f(hi)
        grow += 1
    if f_lo * f_hi > 0:
        raise NumericalFailure("❌ log-level root not bracketed", lo=lo, hi=hi, f_lo=f_lo, f_hi=f_hi)
    return brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)


if __name__ == "__main__":
    from rich import print
    J = loglog_integral(2.0, 0.5, 0.0, 1.0)
    print(f"[info] log log J = {J.loglog_value}, bracket = ({J.loglog_lower}, {J.loglog_upper}), {J.value.render()}")
    print(f"[info] {LogLogValue.exp_exp(800.0) > LogLogValue.exp_exp(799.0)}")
