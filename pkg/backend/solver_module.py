import math
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import spsolve

from backend.core import ArgumentError, ConfigError, NumericalFailure, PreconditionError
from backend.geometry_module import DomainSpec, GeometryModule
from backend.nonlinearity_module import RegularizedNonlinearity, RescaledNonlinearity

logger = logging.getLogger(__name__)

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2
MASK_LEGEND = "# mask: 0=exterior 1=interior 2=boundary"

# 9-point stencil directions and their squared lengths
STENCIL = ((1, 0), (0, 1), (1, 1), (1, -1))
STENCIL_LEN2 = np.array([1.0, 1.0, 2.0, 2.0])
ORIENTATIONS = 16
TOL_SOLVE = 1e-8
EXPLICIT_CFL = 0.8


class OperatorKind(str, Enum):
    PUCCI_MINUS_DRIFT = "pucci_minus_drift"
    PUCCI_PLUS_DRIFT = "pucci_plus_drift"
    PX_LAPLACE = "px_laplace"


class Scheme(str, Enum):
    SEMI_IMPLICIT = "semi_implicit"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class EllipticityPair:
    lam: float = 1.0
    Lam: float = 1.0

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam):
            raise ArgumentError("❌ ellipticity needs 0 < lambda <= Lambda", lam=self.lam, Lam=self.Lam)


@dataclass(frozen=True)
class Problem:
    operator: OperatorKind
    ell: EllipticityPair = EllipticityPair()
    nl: Optional[RescaledNonlinearity] = None
    p_field: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.operator == OperatorKind.PX_LAPLACE and self.p_field is None:
            raise ConfigError("❌ px_laplace needs an exponent field p(x)")
        if self.operator != OperatorKind.PX_LAPLACE and self.nl is None:
            raise ConfigError("❌ Pucci problems need a rescaled nonlinearity", operator=self.operator.value)

    @property
    def is_pucci(self) -> bool:
        return self.operator != OperatorKind.PX_LAPLACE


@dataclass
class GridField:
    """Node values on a masked lattice x = x0 + i h, y = y0 + j h."""
    nx: int
    ny: int
    h: float
    values: np.ndarray
    mask: np.ndarray
    x0: float = 0.0
    y0: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.nx, self.ny)
        self.mask = np.asarray(self.mask, dtype=np.int8).reshape(self.nx, self.ny)
        if self.h <= 0:
            raise ArgumentError("❌ grid spacing must be positive", h=self.h)
        if not np.all(np.isfinite(self.values[self.mask != EXTERIOR])):
            raise ArgumentError("❌ grid values must be finite on non-exterior nodes")

    # ---------- Geometry ----------
    def coords(self):
        xs = self.x0 + self.h * np.arange(self.nx)
        ys = self.y0 + self.h * np.arange(self.ny)
        return np.meshgrid(xs, ys, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.coords()
        return np.stack([X, Y], axis=-1)

    @property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.mask == BOUNDARY

    @property
    def boundary_data(self) -> np.ndarray:
        return self.values[self.boundary]

    def with_values(self, values: np.ndarray, **diagnostics) -> "GridField":
        out = replace(self, values=np.array(values, dtype=float), diagnostics=dict(diagnostics),
                      flags=list(self.flags))
        return out

    # ---------- Sampling ----------
    def interpolate(self, point) -> float:
        """Bilinear interpolation; every corner of the cell must be a non-exterior node."""
        px, py = float(point[0]), float(point[1])
        fi = (px - self.x0) / self.h
        fj = (py - self.y0) / self.h
        i = int(min(max(math.floor(fi), 0), self.nx - 2))
        j = int(min(max(math.floor(fj), 0), self.ny - 2))
        a, b = fi - i, fj - j
        if not (-1e-9 <= a <= 1 + 1e-9 and -1e-9 <= b <= 1 + 1e-9):
            raise ArgumentError("❌ point lies outside the grid", point=[px, py])
        if np.any(self.mask[i:i + 2, j:j + 2] == EXTERIOR):
            raise ArgumentError("❌ interpolation cell touches exterior nodes", point=[px, py])
        v = self.values
        return float((1 - a) * (1 - b) * v[i, j] + a * (1 - b) * v[i + 1, j]
                     + (1 - a) * b * v[i, j + 1] + a * b * v[i + 1, j + 1])

    def ball_values(self, center, r: float, interior_only: bool = False) -> np.ndarray:
        X, Y = self.coords()
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= r * r * (1 + 1e-12)
        keep = inside & ((self.mask == INTERIOR) if interior_only else (self.mask != EXTERIOR))
        return self.values[keep]

    # ---------- Files ----------
    def dump(self, path: str):
        """ASCII format: header `nx ny h x0 y0`, mask legend, then `mask value` per node, rows of constant y."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{self.nx} {self.ny} {self.h!r} {self.x0!r} {self.y0!r}\n")
            f.write(MASK_LEGEND + "\n")
            for j in range(self.ny):
                for i in range(self.nx):
                    f.write(f"{int(self.mask[i, j])} {self.values[i, j]!r}\n")

    @classmethod
    def load(cls, path: str) -> "GridField":
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = [ln.strip() for ln in f if ln.strip()]
        except FileNotFoundError as e:
            raise ConfigError("❌ grid field file not found", path=path) from e
        head = lines[0].split()
        nx, ny = int(head[0]), int(head[1])
        h, x0, y0 = float(head[2]), float(head[3]), float(head[4])
        records = [ln.split() for ln in lines[1:] if not ln.startswith("#")]
        if len(records) != nx * ny:
            raise ConfigError("❌ grid field record count mismatch", expected=nx * ny, found=len(records))
        mask = np.array([int(r[0]) for r in records], dtype=np.int8).reshape(ny, nx).T
        values = np.array([float(r[1]) for r in records]).reshape(ny, nx).T
        return cls(nx, ny, h, values, mask, x0, y0)

    def to_csv(self, path: str):
        X, Y = self.coords()
        frame = pd.DataFrame({"x": X.ravel(), "y": Y.ravel(), "mask": self.mask.ravel(), "value": self.values.ravel()})
        frame.to_csv(path, index=False, float_format="%.12g")


# ---------- Continuous Pucci ----------

def pucci_apply(ell: EllipticityPair, X, sign: str = "plus") -> float:
    X = np.asarray(X, dtype=float)
    if X.shape != (2, 2) or not np.allclose(X, X.T, atol=1e-12):
        raise ArgumentError("❌ pucci_apply needs a symmetric 2x2 matrix", X=X.tolist())
    e = np.linalg.eigvalsh(X)
    pos, neg = e[e >= 0].sum(), e[e < 0].sum()
    if sign == "plus":
        return float(-ell.lam * pos - ell.Lam * neg)
    if sign == "minus":
        return float(-ell.Lam * pos - ell.lam * neg)
    raise ArgumentError("❌ sign must be 'plus' or 'minus'", sign=sign)


def stencil_weights(a, b, c):
    """Non-negative weights on the four stencil directions reproducing [[a, b], [b, c]].

    Exact when a >= |b| and c >= |b|; otherwise some weight is negative.
    """
    a, b, c = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(c, dtype=float))
    ab = np.abs(b)
    return np.stack([a - ab, c - ab, np.where(b > 0, 2 * b, 0.0), np.where(b < 0, -2 * b, 0.0)], axis=-1)


def pucci_candidates(ell: EllipticityPair, orientations: int = ORIENTATIONS) -> np.ndarray:
    """Stencil weights of the rotated matrices with eigenvalues in {lambda, Lambda} that stay monotone."""
    out = []
    for k in range(orientations):
        th = math.pi * k / orientations
        v = np.array([math.cos(th), math.sin(th)])
        vp = np.array([-v[1], v[0]])
        for a1 in (ell.lam, ell.Lam):
            for a2 in (ell.lam, ell.Lam):
                A = a1 * np.outer(v, v) + a2 * np.outer(vp, vp)
                w = stencil_weights(A[0, 0], A[0, 1], A[1, 1])
                if np.all(w >= -1e-13):
                    out.append(np.maximum(w, 0.0))
    cand = np.unique(np.round(np.asarray(out), 13), axis=0)
    return cand


# ---------- Discrete operators ----------

class SolverEngine:
    """Monotone 9-point schemes on masked grids, Jacobi style so sweeps are order independent."""

    def __init__(self, tol_solve: float = TOL_SOLVE, max_iters: Optional[int] = None,
                 scheme: str = Scheme.SEMI_IMPLICIT, damping: float = 1.0, orientations: int = ORIENTATIONS):
        self.tol_solve = tol_solve
        self.scheme = Scheme(scheme)
        self.max_iters = max_iters or (500 if self.scheme == Scheme.SEMI_IMPLICIT else 200000)
        self.damping = damping
        self.orientations = orientations

    # ---------- stencil pieces ----------
    @staticmethod
    def _nodes(grid: GridField):
        I, J = np.nonzero(grid.interior)
        return I, J

    @staticmethod
    def _second_differences(u: np.ndarray, I, J, h: float) -> np.ndarray:
        cols = []
        for (di, dj), l2 in zip(STENCIL, STENCIL_LEN2):
            cols.append((u[I + di, J + dj] + u[I - di, J - dj] - 2 * u[I, J]) / (l2 * h * h))
        return np.stack(cols, axis=1)

    @staticmethod
    def _centered_gradient(u, I, J, h):
        return np.stack([(u[I + 1, J] - u[I - 1, J]) / (2 * h), (u[I, J + 1] - u[I, J - 1]) / (2 * h)], axis=1)

    @staticmethod
    def _one_sided(u, I, J, h):
        fwd = np.stack([(u[I + 1, J] - u[I, J]) / h, (u[I, J + 1] - u[I, J]) / h], axis=1)
        bwd = np.stack([(u[I, J] - u[I - 1, J]) / h, (u[I, J] - u[I, J - 1]) / h], axis=1)
        return fwd, bwd

    def _gradient_magnitude(self, prob: Problem, u, I, J, h, weights) -> np.ndarray:
        """max(|Du|, h^2); centered unless the drift would break monotonicity at the node."""
        floor = h * h
        p = self._centered_gradient(u, I, J, h)
        g = np.maximum(np.linalg.norm(p, axis=1), floor)
        if prob.nl.base.is_homogeneous:
            return g
        d = 1e-6
        slope = (np.asarray(prob.nl.phi_R(g * (1 + d))) - np.asarray(prob.nl.phi_R(g * (1 - d)))) / (2 * d * g)
        sens = slope[:, None] * np.abs(p) / (2 * h * g[:, None])
        diffusion = weights[:, :2] / (h * h)
        bad = np.any(sens > diffusion, axis=1)
        if np.any(bad):
            fwd, bwd = self._one_sided(u, I, J, h)
            if prob.operator == OperatorKind.PUCCI_MINUS_DRIFT:
                comp = np.maximum(np.maximum(fwd, -bwd), 0.0)
            else:
                comp = np.maximum(np.maximum(bwd, -fwd), 0.0)
            g = np.where(bad, np.maximum(np.linalg.norm(comp, axis=1), floor), g)
        return g

    def _policy(self, prob: Problem, u, I, J, h, cand):
        D = self._second_differences(u, I, J, h)
        vals = -D @ cand.T
        k = np.argmin(vals, axis=1) if prob.operator == OperatorKind.PUCCI_MINUS_DRIFT else np.argmax(vals, axis=1)
        return cand[k], vals[np.arange(len(k)), k], vals

    def _px_coefficients(self, prob: Problem, grid: GridField, u, I, J):
        h = grid.h
        P = self._exponent(prob, grid)
        p = P[I, J]
        grad = self._centered_gradient(u, I, J, h)
        norm = np.linalg.norm(grad, axis=1)
        g = np.maximum(norm, h * h)
        q = np.where(norm[:, None] > 0, grad / np.where(norm > 0, norm, 1.0)[:, None], np.array([1.0, 0.0]))
        w = stencil_weights(1 + (p - 2) * q[:, 0] ** 2, (p - 2) * q[:, 0] * q[:, 1], 1 + (p - 2) * q[:, 1] ** 2)
        bad = np.any(w < -1e-13, axis=1)
        if np.any(bad):
            # snap the direction to the nearest stencil direction
            ang = np.round(np.arctan2(q[bad, 1], q[bad, 0]) / (math.pi / 4)) * (math.pi / 4)
            qs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            pb = p[bad]
            w[bad] = stencil_weights(1 + (pb - 2) * qs[:, 0] ** 2, (pb - 2) * qs[:, 0] * qs[:, 1],
                                     1 + (pb - 2) * qs[:, 1] ** 2)
        w = np.maximum(w, 0.0)
        grad_p = self._centered_gradient(P, I, J, h)
        b = -np.log(g)[:, None] * grad_p
        return w, b

    @staticmethod
    def _exponent(prob: Problem, grid: GridField) -> np.ndarray:
        P = np.asarray(prob.p_field(grid.points().reshape(-1, 2)), dtype=float).reshape(grid.nx, grid.ny)
        live = P[grid.mask != EXTERIOR]
        if np.any(live <= 1.0) or not np.all(np.isfinite(live)):
            raise PreconditionError("❌ exponent field must satisfy p(x) > 1", p_min=float(np.min(live)))
        return P

    @staticmethod
    def _upwind_first_order(u, I, J, h, b):
        fwd, bwd = SolverEngine._one_sided(u, I, J, h)
        return np.sum(np.where(b > 0, b * bwd, b * fwd), axis=1)

    # ---------- residual ----------
    def operator_values(self, prob: Problem, field_: GridField, cand=None) -> np.ndarray:
        """Discrete operator minus right-hand side at interior nodes."""
        u, h = field_.values, field_.h
        I, J = self._nodes(field_)
        if len(I) == 0:
            return np.zeros(0)
        if prob.is_pucci:
            cand = pucci_candidates(prob.ell, self.orientations) if cand is None else cand
            weights, op, _ = self._policy(prob, u, I, J, h, cand)
            drift = np.asarray(prob.nl.phi_R(self._gradient_magnitude(prob, u, I, J, h, weights)))
            return op - drift if prob.operator == OperatorKind.PUCCI_MINUS_DRIFT else op + drift
        w, b = self._px_coefficients(prob, field_, u, I, J)
        D = self._second_differences(u, I, J, h)
        return -np.sum(w * D, axis=1) + self._upwind_first_order(u, I, J, h, b)

    def residual(self, prob: Problem, field_: GridField, cand=None) -> float:
        vals = self.operator_values(prob, field_, cand)
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    # ---------- linear solve for frozen coefficients ----------
    @staticmethod
    def _assemble(grid: GridField, I, J, w, b, rhs):
        nx, ny, h = grid.nx, grid.ny, grid.h
        index = -np.ones((nx, ny), dtype=int)
        index[I, J] = np.arange(len(I))
        rows, cols, vals = [], [], []
        diag = np.zeros(len(I))
        rhs = np.array(rhs, dtype=float)
        u = grid.values
        rng = np.arange(len(I))

        def couple(coef, di, dj):
            ni, nj = I + di, J + dj
            k = index[ni, nj]
            inner = k >= 0
            rows.append(rng[inner])
            cols.append(k[inner])
            vals.append(-coef[inner])
            rhs[~inner] += coef[~inner] * u[ni[~inner], nj[~inner]]

        for kdir, ((di, dj), l2) in enumerate(zip(STENCIL, STENCIL_LEN2)):
            coef = w[:, kdir] / (l2 * h * h)
            diag[:] += 2 * coef
            couple(coef, di, dj)
            couple(coef, -di, -dj)
        if b is not None:
            for kdir, (di, dj) in enumerate(((1, 0), (0, 1))):
                bk = b[:, kdir]
                pos = np.where(bk > 0, bk / h, 0.0)
                neg = np.where(bk < 0, -bk / h, 0.0)
                diag[:] += pos + neg
                couple(pos, -di, -dj)
                couple(neg, di, dj)
        rows.append(rng)
        cols.append(rng)
        vals.append(diag)
        A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(len(I), len(I)))
        return A, rhs

    # ---------- drivers ----------
    def solve_dirichlet(self, prob: Problem, grid: GridField) -> GridField:
        I, J = self._nodes(grid)
        flags = list(grid.flags)
        data = grid.boundary_data
        if data.size == 0:
            raise ArgumentError("❌ grid has no boundary nodes")
        if prob.is_pucci and np.min(data) < 0:
            logger.warning("negative boundary data (min %.3g); estimates assume u >= 0", float(np.min(data)))
            flags.append("negative_boundary_data")
        span = float(np.max(data) - np.min(data))
        tol = self.tol_solve * max(1.0, span, float(np.max(np.abs(data))))
        u = grid.values.copy()
        if len(I) == 0:
            return replace(grid, flags=flags, diagnostics={"iterations": 0, "residual": 0.0})
        u[I, J] = float(np.mean(data))
        work = grid.with_values(u)
        cand = pucci_candidates(prob.ell, self.orientations) if prob.is_pucci else None
        if prob.is_pucci and not prob.nl.base.is_homogeneous:
            lip = self._drift_lipschitz(prob, grid.h, span)
            if grid.h * lip > 1.0:
                logger.warning("h * Lip(phi_R) = %.3g exceeds 1; upwind fallback carries monotonicity", grid.h * lip)
                flags.append("cfl_bound_exceeded")
        history = []
        step = self._semi_implicit_step if self.scheme == Scheme.SEMI_IMPLICIT else self._explicit_step
        dt = self._explicit_dt(prob, grid, span) if self.scheme == Scheme.EXPLICIT else None
        res = self.residual(prob, work, cand)
        history.append(res)
        it = 0
        while res > tol and it < self.max_iters:
            it += 1
            u = step(prob, work, I, J, cand, dt)
            work = work.with_values(u)
            res = self.residual(prob, work, cand)
            history.append(res)
            logger.debug("solve iteration %d residual %.3e", it, res)
            if not math.isfinite(res):
                break
        if not (res <= tol):
            raise NumericalFailure("❌ Dirichlet solve did not converge", iterations=it, residual=res, tol=tol,
                                   residual_history=history[-50:], scheme=self.scheme.value)
        logger.info("%s solve on %dx%d grid: %d iterations, residual %.2e", prob.operator.value,
                    grid.nx, grid.ny, it, res)
        out = work.with_values(u, iterations=it, residual=res, tol=tol, scheme=self.scheme.value,
                               residual_history=history)
        out.flags = flags
        return out

    def _semi_implicit_step(self, prob: Problem, work: GridField, I, J, cand, dt):
        u, h = work.values, work.h
        if prob.is_pucci:
            w, _, _ = self._policy(prob, u, I, J, h, cand)
            drift = np.asarray(prob.nl.phi_R(self._gradient_magnitude(prob, u, I, J, h, w)))
            rhs = drift if prob.operator == OperatorKind.PUCCI_MINUS_DRIFT else -drift
            b = None
        else:
            w, b = self._px_coefficients(prob, work, u, I, J)
            rhs = np.zeros(len(I))
        A, rhs = self._assemble(work, I, J, w, b, rhs)
        sol = spsolve(A.tocsc(), rhs)
        new = u.copy()
        new[I, J] = (1 - self.damping) * u[I, J] + self.damping * sol
        return new

    def _explicit_step(self, prob: Problem, work: GridField, I, J, cand, dt):
        new = work.values.copy()
        new[I, J] -= dt * self.operator_values(prob, work, cand)
        return new

    def _drift_lipschitz(self, prob: Problem, h: float, span: float) -> float:
        t = np.geomspace(h * h, max(1.0, 2 * span / h), 200)
        d = np.diff(np.asarray(prob.nl.phi_R(t))) / np.diff(t)
        return float(np.max(d))

    def _explicit_dt(self, prob: Problem, grid: GridField, span: float) -> float:
        h = grid.h
        if prob.is_pucci:
            diag = 4 * prob.ell.Lam / (h * h)
            if not prob.nl.base.is_homogeneous:
                diag += self._drift_lipschitz(prob, h, span) / h
        else:
            P = self._exponent(prob, grid)
            live = P[grid.mask != EXTERIOR]
            grad_bound = max(1.0, abs(math.log(h * h)), math.log(max(1.0, 2 * span / h)))
            dp = np.max(np.abs(np.diff(P, axis=0))) / h if grid.nx > 1 else 0.0
            diag = 4 * max(float(np.max(live)) - 1.0, 1.0) / (h * h) + 2 * grad_bound * dp / h
        return EXPLICIT_CFL / diag

    # ---------- viscosity check ----------
    def check_viscosity_inequalities(self, prob: Problem, field_: GridField, tol: Optional[float] = None,
                                     region: Optional[np.ndarray] = None) -> dict:
        """Discrete P+(D2u) + Phi(|Du|) >= -tol and P-(D2u) - Phi(|Du|) <= tol at interior nodes."""
        if not prob.is_pucci:
            raise ArgumentError("❌ viscosity inequalities are checked for Pucci problems")
        tol = 10 * self.tol_solve if tol is None else tol
        u, h = field_.values, field_.h
        sel = field_.interior if region is None else (field_.interior & region)
        I, J = np.nonzero(sel)
        if len(I) == 0:
            return {"nodes": 0, "super_violations": 0, "sub_violations": 0, "worst_super": None, "worst_sub": None,
                    "passed": True}
        cand = pucci_candidates(prob.ell, self.orientations)
        D = self._second_differences(u, I, J, h)
        vals = -D @ cand.T
        p_plus, p_minus = vals.max(axis=1), vals.min(axis=1)
        grad = np.maximum(np.linalg.norm(self._centered_gradient(u, I, J, h), axis=1), h * h)
        Phi = np.asarray(prob.nl.Phi(grad))
        sup_side = p_plus + Phi
        sub_side = p_minus - Phi
        sup_bad = sup_side < -tol
        sub_bad = sub_side > tol
        X, Y = field_.coords()

        def worst(arr, bad, key):
            if not np.any(bad):
                return None
            k = int(key(arr))
            return {"node": [int(I[k]), int(J[k])], "point": [float(X[I[k], J[k]]), float(Y[I[k], J[k]])],
                    "value": float(arr[k])}

        return {
            "nodes": int(len(I)),
            "super_violations": int(sup_bad.sum()),
            "sub_violations": int(sub_bad.sum()),
            "worst_super": worst(sup_side, sup_bad, np.argmin),
            "worst_sub": worst(sub_side, sub_bad, np.argmax),
            "passed": bool(not sup_bad.any() and not sub_bad.any()),
        }

    # ---------- regularized family ----------
    def maximal_solution_sequence(self, prob: Problem, grid: GridField, eps_list: Sequence[float]) -> dict:
        """Solutions v_eps with phi replaced by phi_eps, plus the ordering of consecutive members."""
        if not prob.is_pucci:
            raise ArgumentError("❌ the regularized family is defined for Pucci problems")
        eps_sorted = sorted(float(e) for e in eps_list)
        fields = []
        for eps in eps_sorted:
            reg = RescaledNonlinearity(RegularizedNonlinearity(prob.nl.base, eps), prob.nl.R)
            fields.append(self.solve_dirichlet(replace(prob, nl=reg), grid))
        sign = 1.0 if prob.operator == OperatorKind.PUCCI_MINUS_DRIFT else -1.0
        slack = 10 * self.tol_solve * max(1.0, float(np.max(np.abs(grid.boundary_data))))
        gaps = []
        for a, b in zip(fields[:-1], fields[1:]):
            diff = sign * (a.values - b.values)[grid.interior]
            gaps.append(float(np.max(diff)) if diff.size else 0.0)
        ordered = all(g <= slack for g in gaps)
        if not ordered:
            logger.warning("regularized solutions are not ordered in eps: worst gap %.3g", max(gaps))
        return {"eps": eps_sorted, "fields": fields, "gaps": gaps, "ordered": ordered,
                "direction": "increasing" if sign > 0 else "decreasing"}


# ---------- Grids ----------

def build_grid(dom: DomainSpec, nx: int, ny: int, h: float, origin=(0.0, 0.0),
               data_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> GridField:
    if nx < 3 or ny < 3:
        raise ArgumentError("❌ grid needs at least 3x3 nodes", nx=nx, ny=ny)
    mask = GeometryModule.rasterize(dom, nx, ny, h, origin)
    values = np.zeros((nx, ny))
    grid = GridField(nx, ny, h, values, mask, float(origin[0]), float(origin[1]))
    if data_fn is not None:
        pts = grid.points()[mask == BOUNDARY]
        values[mask == BOUNDARY] = np.asarray(data_fn(pts), dtype=float)
        grid.values = values
    if not np.any(mask == INTERIOR):
        raise ArgumentError("❌ rasterized domain has no interior nodes", nx=nx, ny=ny, h=h)
    return grid


_ENGINE = SolverEngine()


def solve_dirichlet(prob: Problem, grid: GridField, **opts) -> GridField:
    engine = SolverEngine(**opts) if opts else _ENGINE
    return engine.solve_dirichlet(prob, grid)


def residual(prob: Problem, field_: GridField) -> float:
    return _ENGINE.residual(prob, field_)


def check_viscosity_inequalities(prob: Problem, field_: GridField, tol: Optional[float] = None, region=None) -> dict:
    return _ENGINE.check_viscosity_inequalities(prob, field_, tol, region)


if __name__ == "__main__":
    from rich import print
    from backend.nonlinearity_module import Nonlinearity
    prob = Problem(OperatorKind.PUCCI_MINUS_DRIFT, EllipticityPair(1.0, 2.0),
                   RescaledNonlinearity(Nonlinearity.log_model(1.0), 0.5))
    grid = build_grid(DomainSpec.cube(), 33, 33, 1 / 32, data_fn=lambda p: p[:, 1])
    out = solve_dirichlet(prob, grid)
    print(f"[info] iterations={out.diagnostics['iterations']} residual={out.diagnostics['residual']:.2e}")
