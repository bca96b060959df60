import math
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from backend.core import ArgumentError, ConfigError, NumericalFailure, PreconditionError

logger = logging.getLogger(__name__)

# Remark on Lipschitz graphs: flatness formula valid for l < 1/8
LIPSCHITZ_DELTA_LIMIT = 1.0 / 8.0
COARSE_ANGLES = 720
ANGLE_TOL = 1e-6
# concrete cap: Omega ∩ B_{2 + CAP_EPS}, shared boundary Gamma = dOmega ∩ B_2
CAP_EPS = 0.25
CAP_GAMMA_RADIUS = 2.0
GRAPH_FAR = 1e3


class DomainKind(str, Enum):
    HALF_SPACE = "half_space"
    LIPSCHITZ_GRAPH = "lipschitz_graph"
    CUBE = "cube"
    CUBE_MINUS_BALL = "cube_minus_ball"
    ANNULUS_SECTOR = "annulus_sector"


def _seg_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance from each point to a polyline given by segments a[i] -> b[i], plus nearest segment index."""
    d = b - a
    L2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
    best = np.full(len(points), np.inf)
    arg = np.zeros(len(points), dtype=int)
    for start in range(0, len(points), 4096):
        p = points[start:start + 4096]
        rel = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("nmk,mk->nm", rel, d) / L2[None, :], 0.0, 1.0)
        proj = a[None, :, :] + t[..., None] * d[None, :, :]
        dist = np.linalg.norm(p[:, None, :] - proj, axis=2)
        best[start:start + 4096] = dist.min(axis=1)
        arg[start:start + 4096] = dist.argmin(axis=1)
    return best, arg


def _as_points(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    return p.reshape(1, 2) if p.ndim == 1 else p


@dataclass(frozen=True)
class DomainSpec:
    """Computable planar domain. Signed distance is positive inside."""
    kind: DomainKind
    l: float = 0.0
    r0: float = 4.0
    table_x: tuple = ()
    table_g: tuple = ()
    center: tuple = (0.0, 0.0)
    radius: float = 0.0
    inner_radius: float = 0.0
    theta_range: tuple = (0.0, 2 * math.pi)
    ball_mode: str = "minus"
    name: str = ""

    # ---------- Constructors ----------
    @classmethod
    def half_space(cls) -> "DomainSpec":
        return cls(DomainKind.HALF_SPACE, l=0.0, r0=math.inf, name="half_space")

    @classmethod
    def lipschitz_graph(cls, x: Sequence[float], g: Sequence[float], l: Optional[float] = None,
                        r0: float = 4.0, name: str = "graph") -> "DomainSpec":
        x = np.asarray(x, dtype=float)
        g = np.asarray(g, dtype=float)
        if x.ndim != 1 or x.shape != g.shape or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ConfigError("❌ graph table needs strictly increasing x and matching g")
        slopes = np.abs(np.diff(g) / np.diff(x))
        measured = float(slopes.max())
        if l is None:
            l = measured
        elif measured > l * (1 + 1e-12) + 1e-15:
            i = int(np.argmax(slopes))
            raise PreconditionError("❌ graph table is not l-Lipschitz", l=l, measured=measured,
                                    first_violating_pair=[float(x[i]), float(x[i + 1])])
        return cls(DomainKind.LIPSCHITZ_GRAPH, l=float(l), r0=r0,
                   table_x=tuple(x.tolist()), table_g=tuple(g.tolist()), name=name)

    @classmethod
    def wedge(cls, l: float, half_width: float = 4.0) -> "DomainSpec":
        """Graph of l|x|, the worst case for flatness at its vertex."""
        x = np.linspace(-half_width, half_width, 9)
        x = np.union1d(x, [0.0])
        return cls.lipschitz_graph(x, l * np.abs(x), l=l, name=f"wedge(l={l:g})")

    @classmethod
    def cube(cls) -> "DomainSpec":
        return cls(DomainKind.CUBE, l=1.0, r0=0.5, name="cube")

    @classmethod
    def cube_minus_ball(cls, center=(1.25, 0.5), radius: float = 0.5, mode: str = "minus") -> "DomainSpec":
        if mode not in ("minus", "intersect"):
            raise ConfigError("❌ ball_mode must be 'minus' or 'intersect'", mode=mode)
        return cls(DomainKind.CUBE_MINUS_BALL, l=1.0, r0=0.25, center=tuple(center), radius=float(radius),
                   ball_mode=mode, name=f"cube_{mode}_ball")

    @classmethod
    def annulus_sector(cls, center=(0.0, 0.0), inner_radius: float = 1.0, radius: float = 2.0,
                       theta_range=(0.0, 2 * math.pi)) -> "DomainSpec":
        if not (0 <= inner_radius < radius):
            raise ConfigError("❌ annulus needs 0 <= inner radius < outer radius")
        return cls(DomainKind.ANNULUS_SECTOR, l=0.0, r0=inner_radius or radius, center=tuple(center),
                   radius=float(radius), inner_radius=float(inner_radius),
                   theta_range=tuple(theta_range), name="annulus_sector")

    @property
    def L(self) -> float:
        return max(self.l, 2.0)

    @property
    def is_graph(self) -> bool:
        return self.kind in (DomainKind.HALF_SPACE, DomainKind.LIPSCHITZ_GRAPH)

    @property
    def full_turn(self) -> bool:
        return self.theta_range[1] - self.theta_range[0] >= 2 * math.pi - 1e-12

    # ---------- Graph helpers ----------
    def graph(self, x1) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        if self.kind == DomainKind.HALF_SPACE:
            return np.zeros_like(x1)
        return np.interp(x1, self.table_x, self.table_g)

    def _graph_segments(self):
        x = np.concatenate([[self.table_x[0] - GRAPH_FAR], self.table_x, [self.table_x[-1] + GRAPH_FAR]])
        g = np.concatenate([[self.table_g[0]], self.table_g, [self.table_g[-1]]])
        pts = np.stack([x, g], axis=1)
        return pts[:-1], pts[1:]

    # ---------- Distance ----------
    def signed_distance(self, x) -> np.ndarray:
        p = _as_points(x)
        if self.kind == DomainKind.HALF_SPACE:
            return p[:, 1].copy()
        if self.kind == DomainKind.LIPSCHITZ_GRAPH:
            a, b = self._graph_segments()
            dist, _ = _seg_distance(p, a, b)
            above = p[:, 1] > self.graph(p[:, 0])
            on = p[:, 1] == self.graph(p[:, 0])
            return np.where(on, 0.0, np.where(above, dist, -dist))
        if self.kind == DomainKind.CUBE:
            return self._cube_sd(p)
        if self.kind == DomainKind.CUBE_MINUS_BALL:
            c = np.asarray(self.center)
            ball = np.linalg.norm(p - c, axis=1) - self.radius
            if self.ball_mode == "intersect":
                ball = -ball
            return np.minimum(self._cube_sd(p), ball)
        return self._annulus_sd(p)

    @staticmethod
    def _cube_sd(p: np.ndarray) -> np.ndarray:
        inside = np.min(np.stack([p[:, 0], 1 - p[:, 0], p[:, 1], 1 - p[:, 1]]), axis=0)
        q = np.stack([np.maximum(-p[:, 0], p[:, 0] - 1), np.maximum(-p[:, 1], p[:, 1] - 1)], axis=1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return np.where(inside >= 0, inside, -np.maximum(outside, -inside))

    def _annulus_sd(self, p: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        rel = p - c
        rad = np.linalg.norm(rel, axis=1)
        sd = np.minimum(rad - self.inner_radius, self.radius - rad) if self.inner_radius > 0 else self.radius - rad
        if self.full_turn:
            return sd
        t0, t1 = self.theta_range
        ang = np.mod(np.arctan2(rel[:, 1], rel[:, 0]) - t0, 2 * math.pi)
        inside_angle = ang <= (t1 - t0)
        ray_d = []
        for t in (t0, t1):
            u = np.array([math.cos(t), math.sin(t)])
            proj = np.maximum(rel @ u, 0.0)
            ray_d.append(np.linalg.norm(rel - proj[:, None] * u, axis=1))
        ang_d = np.minimum(ray_d[0], ray_d[1])
        return np.where(inside_angle & (sd > 0), np.minimum(sd, ang_d), -np.maximum(np.abs(sd), ang_d))

    def contains(self, x) -> np.ndarray:
        return self.signed_distance(x) > 0

    def distance_to_boundary(self, x) -> np.ndarray:
        return np.abs(self.signed_distance(x))

    def on_boundary(self, w, tol: float = 1e-9) -> bool:
        return bool(abs(self.signed_distance(w)[0]) <= tol)

    def inward_normal(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.is_graph:
            return np.array([0.0, 1.0])
        if self.kind == DomainKind.CUBE:
            n = np.zeros(2)
            tol = 1e-9
            n += [1.0 if abs(w[0]) <= tol else 0.0, 1.0 if abs(w[1]) <= tol else 0.0]
            n -= [1.0 if abs(w[0] - 1) <= tol else 0.0, 1.0 if abs(w[1] - 1) <= tol else 0.0]
            if np.linalg.norm(n) > 0:
                return n / np.linalg.norm(n)
        eps = 1e-7
        grad = np.array([
            self.signed_distance(w + [eps, 0])[0] - self.signed_distance(w - [eps, 0])[0],
            self.signed_distance(w + [0, eps])[0] - self.signed_distance(w - [0, eps])[0],
        ])
        norm = np.linalg.norm(grad)
        if norm == 0:
            raise NumericalFailure("❌ inward normal undefined", w=w.tolist())
        return grad / norm

    # ---------- Boundary sampling ----------
    def boundary_samples(self, spacing: float, center=None, radius: Optional[float] = None) -> np.ndarray:
        """Arc-length-uniform samples of the boundary, clipped to B(center, radius)."""
        if spacing <= 0:
            raise ArgumentError("❌ sampling spacing must be positive", spacing=spacing)
        c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
        rad = 4.0 if radius is None else float(radius)
        if self.kind == DomainKind.HALF_SPACE:
            n = int(math.ceil(2 * rad / spacing)) + 1
            t = np.linspace(-rad, rad, n)
            pts = np.stack([c[0] + t, np.zeros_like(t)], axis=1)
        elif self.kind == DomainKind.LIPSCHITZ_GRAPH:
            pts = self._polyline_samples(np.stack([self.table_x, self.table_g], axis=1), spacing, c, rad)
        elif self.kind == DomainKind.CUBE:
            corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
            pts = self._polyline_samples(corners, spacing, None, None)
        elif self.kind == DomainKind.CUBE_MINUS_BALL:
            corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
            edge = self._polyline_samples(corners, spacing, None, None)
            circ = self._circle_samples(np.asarray(self.center), self.radius, spacing)
            ball = np.linalg.norm(edge - np.asarray(self.center), axis=1) - self.radius
            keep_edge = ball >= 0 if self.ball_mode == "minus" else ball <= 0
            keep_circ = self._cube_sd(circ) >= 0
            pts = np.concatenate([edge[keep_edge], circ[keep_circ]])
        else:
            cc = np.asarray(self.center)
            parts = [self._circle_samples(cc, self.radius, spacing, self.theta_range)]
            if self.inner_radius > 0:
                parts.append(self._circle_samples(cc, self.inner_radius, spacing, self.theta_range))
            if not self.full_turn:
                for t in self.theta_range:
                    u = np.array([math.cos(t), math.sin(t)])
                    s = np.linspace(self.inner_radius, self.radius,
                                    int(math.ceil((self.radius - self.inner_radius) / spacing)) + 1)
                    parts.append(cc + s[:, None] * u)
            pts = np.concatenate(parts)
        if radius is not None:
            pts = pts[np.linalg.norm(pts - c, axis=1) <= rad * (1 + 1e-12)]
        return pts

    @staticmethod
    def _circle_samples(c, r, spacing, theta_range=(0.0, 2 * math.pi)):
        t0, t1 = theta_range
        n = max(8, int(math.ceil(r * (t1 - t0) / spacing)) + 1)
        t = np.linspace(t0, t1, n)
        return c + r * np.stack([np.cos(t), np.sin(t)], axis=1)

    @staticmethod
    def _polyline_samples(vertices: np.ndarray, spacing: float, center, radius) -> np.ndarray:
        out = []
        for a, b in zip(vertices[:-1], vertices[1:]):
            if center is None:
                n = max(2, int(math.ceil(float(np.linalg.norm(b - a)) / spacing)) + 1)
                seg = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
            else:
                # clipped endpoints land exactly on the sphere |x - c| = r
                seg = _clip_segment_to_ball(a, b, center, radius, spacing)
            if len(seg):
                out.append(seg)
        if not out:
            return np.zeros((0, 2))
        return np.unique(np.round(np.concatenate(out), 14), axis=0)


def _clip_segment_to_ball(a, b, c, r, spacing) -> np.ndarray:
    d = b - a
    f = a - c
    A = float(d @ d)
    B = 2 * float(f @ d)
    C = float(f @ f) - r * r
    disc = B * B - 4 * A * C
    if disc < 0:
        return np.zeros((0, 2))
    sq = math.sqrt(disc)
    t0 = max(0.0, (-B - sq) / (2 * A))
    t1 = min(1.0, (-B + sq) / (2 * A))
    if t1 <= t0:
        return np.zeros((0, 2))
    p0, p1 = a + t0 * d, a + t1 * d
    n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / spacing)) + 1)
    t = np.linspace(0.0, 1.0, n)
    return p0 + t[:, None] * (p1 - p0)


@dataclass
class BallChain:
    centers: np.ndarray
    radius: float
    notes: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.centers)

    def check(self, dom: DomainSpec, x, y) -> dict:
        c = np.asarray(self.centers)
        steps = np.linalg.norm(np.diff(c, axis=0), axis=1) if len(c) > 1 else np.zeros(0)
        return {
            "containment": bool(np.all(dom.signed_distance(c) >= 2 * self.radius * (1 - 1e-12))),
            "intersection": bool(np.all(steps < 2 * self.radius)),
            "start_in_first": bool(np.linalg.norm(np.asarray(x) - c[0]) < self.radius),
            "end_in_last": bool(np.linalg.norm(np.asarray(y) - c[-1]) < self.radius),
        }


@dataclass
class ReifenbergReport:
    delta: float
    angle: float
    separation: bool
    samples: int
    spacing: float


@dataclass
class RetractedCap:
    """Membership predicate for the retracted cap Omega'_s."""
    dom: DomainSpec
    s: float
    center: np.ndarray
    cap_radius: float
    gamma: np.ndarray
    tree: cKDTree
    flags: list = field(default_factory=lambda: ["design_substitute_cap"])

    def distance_to_gamma(self, x) -> np.ndarray:
        d, _ = self.tree.query(_as_points(x))
        return d

    def __call__(self, x) -> np.ndarray:
        p = _as_points(x)
        in_ball = np.linalg.norm(p - self.center, axis=1) < self.cap_radius
        return in_ball & self.dom.contains(p) & (self.distance_to_gamma(p) >= self.s)

    def with_offset(self, s: float) -> "RetractedCap":
        if s < 0:
            raise ArgumentError("❌ cap offset must be non-negative", s=s)
        return replace(self, s=float(s))


@dataclass
class StretchMap:
    matrix: np.ndarray
    factor: float
    multipliers: Tuple[float, float]

    def apply(self, x) -> np.ndarray:
        return _as_points(x) @ self.matrix.T

    def inverse(self, x) -> np.ndarray:
        return _as_points(x) @ np.linalg.inv(self.matrix).T

    def transform_graph(self, dom: DomainSpec) -> DomainSpec:
        if dom.kind != DomainKind.LIPSCHITZ_GRAPH:
            raise ArgumentError("❌ stretch_map transforms graph domains only", kind=dom.kind.value)
        pts = self.apply(np.stack([dom.table_x, dom.table_g], axis=1))
        return DomainSpec.lipschitz_graph(pts[:, 0], pts[:, 1], name=f"{dom.name}_stretched")


class GeometryModule:
    """Flatness, corkscrew, chain and cap queries on DomainSpec."""

    # ---------- Hausdorff ----------
    @staticmethod
    def hausdorff_distance(E, F) -> float:
        E, F = _as_points(E), _as_points(F)
        if len(E) == 0 or len(F) == 0:
            raise ArgumentError("❌ Hausdorff distance needs non-empty sets", size_E=len(E), size_F=len(F))
        d_EF, _ = cKDTree(F).query(E)
        d_FE, _ = cKDTree(E).query(F)
        return float(max(d_EF.max(), d_FE.max()))

    # ---------- Flatness ----------
    def reifenberg_delta(self, dom: DomainSpec, w, r: float, h: Optional[float] = None) -> ReifenbergReport:
        w = np.asarray(w, dtype=float)
        if not (0 < r < dom.r0):
            raise ArgumentError("❌ radius must satisfy 0 < r < r0", r=r, r0=dom.r0)
        if not dom.on_boundary(w, tol=1e-9):
            raise ArgumentError("❌ w is not a boundary point", w=w.tolist(),
                                distance=float(dom.distance_to_boundary(w)[0]))
        spacing = r / 512 if h is None else min(r / 512, h / 8)
        E = dom.boundary_samples(spacing, center=w, radius=r)
        n = int(math.ceil(2 * r / spacing)) + 1
        t = np.linspace(-r, r, n)
        tree_E = cKDTree(E)

        def scaled(theta: float) -> float:
            u = np.array([math.cos(theta), math.sin(theta)])
            F = w + t[:, None] * u
            d_FE, _ = tree_E.query(F)
            # distance from E to the segment F is exact: project onto the line
            rel = E - w
            along = np.clip(rel @ u, -r, r)
            d_EF = np.linalg.norm(rel - along[:, None] * u, axis=1)
            return float(max(d_FE.max(), d_EF.max())) / r

        angles = np.linspace(0.0, math.pi, COARSE_ANGLES, endpoint=False)
        values = np.array([scaled(a) for a in angles])
        k = int(np.argmin(values))
        best_angle, best = float(angles[k]), float(values[k])
        step = math.pi / COARSE_ANGLES
        try:
            res = minimize_scalar(scaled, bracket=(best_angle - step, best_angle, best_angle + step),
                                  method="golden", tol=ANGLE_TOL)
            if res.fun < best:
                best_angle, best = float(res.x), float(res.fun)
        except ValueError:
            logger.debug("golden refinement skipped: flat bracket at angle %g", best_angle)
        sep = self.separation_check(dom, w, r, best, best_angle)
        logger.debug("reifenberg delta at %s r=%g: %.6g (angle %.6g)", w, r, best, best_angle)
        return ReifenbergReport(best, best_angle, sep, len(E), spacing)

    @staticmethod
    def separation_check(dom: DomainSpec, w, r: float, delta: float, angle: float, n: int = 81) -> bool:
        """Interior points at distance >= 2 delta r from the boundary lie on one side of the line."""
        w = np.asarray(w, dtype=float)
        g = np.linspace(-r, r, n)
        X, Y = np.meshgrid(g, g, indexing="ij")
        pts = w + np.stack([X.ravel(), Y.ravel()], axis=1)
        pts = pts[np.linalg.norm(pts - w, axis=1) < r]
        sd = dom.signed_distance(pts)
        keep = pts[(sd > 0) & (sd >= 2 * delta * r)]
        if len(keep) == 0:
            return True
        normal = np.array([-math.sin(angle), math.cos(angle)])
        side = (keep - w) @ normal
        return bool(np.all(side > 0) or np.all(side < 0))

    @staticmethod
    def lipschitz_to_delta(l: float) -> float:
        if not (0 <= l < LIPSCHITZ_DELTA_LIMIT):
            raise ArgumentError("❌ Lipschitz-to-flatness formula needs 0 <= l < 1/8", l=l)
        return l / math.sqrt(l * l + 1.0)

    # ---------- Corkscrew ----------
    def corkscrew(self, dom: DomainSpec, w, r: float) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if not (0 < r < dom.r0):
            raise ArgumentError("❌ radius must satisfy 0 < r < r0", r=r, r0=dom.r0)
        L = dom.L
        target = 0.5 * r * (1.0 + 1.0 / L)
        a = w + target * dom.inward_normal(w)
        if self._is_corkscrew(dom, w, r, a):
            return a
        # deterministic search over the open annulus, deepest point wins
        angles = np.linspace(0.0, 2 * math.pi, COARSE_ANGLES, endpoint=False)
        radii = np.linspace(r / L, r, 34)[1:-1]
        A, Rr = np.meshgrid(angles, radii, indexing="ij")
        cand = w + np.stack([Rr.ravel() * np.cos(A.ravel()), Rr.ravel() * np.sin(A.ravel())], axis=1)
        sd = dom.signed_distance(cand)
        k = int(np.argmax(sd))
        if self._is_corkscrew(dom, w, r, cand[k]):
            logger.info("corkscrew at %s r=%g found by annulus search", w.tolist(), r)
            return cand[k]
        raise NumericalFailure("❌ no corkscrew point found", w=w.tolist(), r=r, L=L,
                               best_depth=float(sd[k]), needed=r / L)

    @staticmethod
    def _is_corkscrew(dom: DomainSpec, w, r, a) -> bool:
        L = dom.L
        dist = float(np.linalg.norm(a - w))
        return (r / L < dist < r) and float(dom.signed_distance(a)[0]) > r / L

    def exterior_corkscrew_check(self, dom: DomainSpec, w, r: float) -> dict:
        """Checker for a complement point b with r/L < |b-w| < r and d(b, dOmega) > r/L."""
        w = np.asarray(w, dtype=float)
        L = dom.L
        target = 0.5 * r * (1.0 + 1.0 / L)
        b = w - target * dom.inward_normal(w)
        ok = r / L < np.linalg.norm(b - w) < r and -float(dom.signed_distance(b)[0]) > r / L
        if not ok:
            angles = np.linspace(0.0, 2 * math.pi, COARSE_ANGLES, endpoint=False)
            cand = w + target * np.stack([np.cos(angles), np.sin(angles)], axis=1)
            depth = -dom.signed_distance(cand)
            k = int(np.argmax(depth))
            b = cand[k]
            ok = bool(depth[k] > r / L)
        return {"point": b.tolist(), "passed": bool(ok), "depth": float(-dom.signed_distance(b)[0]), "needed": r / L}

    # ---------- Harnack chain ----------
    def harnack_chain(self, dom: DomainSpec, x, y, scale: float) -> BallChain:
        """Equal balls of radius scale/2 whose doubles stay inside the domain."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if scale <= 0:
            raise ArgumentError("❌ chain scale must be positive", scale=scale)
        rho = 0.5 * scale
        clearance = 2 * rho
        for name, p in (("x", x), ("y", y)):
            d = float(dom.signed_distance(p)[0])
            if d < clearance:
                raise NumericalFailure("❌ point too close to the boundary for the chain scale",
                                       point=name, distance=d, required_clearance=clearance)
        notes = []
        span = float(np.linalg.norm(x - y))
        if span > dom.L * scale:
            notes.append(f"|x-y| = {span:.4g} exceeds L*scale = {dom.L * scale:.4g}")
        if span == 0:
            return BallChain(x.reshape(1, 2), rho, notes)
        for path in self._candidate_paths(dom, x, y, clearance):
            centers = self._place_centers(path, rho)
            if np.all(dom.signed_distance(centers) >= clearance * (1 - 1e-12)):
                chain = BallChain(centers, rho, notes)
                logger.debug("harnack chain with %d balls of radius %g", chain.n, rho)
                return chain
        raise NumericalFailure("❌ no admissible Harnack chain", x=x.tolist(), y=y.tolist(),
                               scale=scale, required_clearance=clearance)

    @staticmethod
    def _candidate_paths(dom: DomainSpec, x, y, clearance):
        yield [x, y]
        if dom.is_graph:
            top = max(x[1], y[1])
            for lift in np.linspace(0.0, 8.0 * clearance, 33)[1:]:
                h = top + lift
                yield [x, np.array([x[0], h]), np.array([y[0], h]), y]
        mid = np.array([0.5, 0.5]) if dom.kind in (DomainKind.CUBE, DomainKind.CUBE_MINUS_BALL) else None
        if mid is not None:
            yield [x, mid, y]

    @staticmethod
    def _place_centers(path, rho: float) -> np.ndarray:
        pts = [np.asarray(path[0], dtype=float)]
        for a, b in zip(path[:-1], path[1:]):
            a = np.asarray(a, dtype=float)
            b = np.asarray(b, dtype=float)
            length = float(np.linalg.norm(b - a))
            if length == 0:
                continue
            k = int(math.ceil(length / rho))
            for i in range(1, k + 1):
                pts.append(a + (b - a) * i / k)
        return np.asarray(pts)

    # ---------- Caps ----------
    def retracted_cap(self, dom: DomainSpec, s: float, center=(0.0, 0.0), scale: float = 1.0,
                      spacing: float = 1e-3) -> RetractedCap:
        if s < 0:
            raise ArgumentError("❌ cap offset must be non-negative", s=s)
        c = np.asarray(center, dtype=float)
        gamma = dom.boundary_samples(spacing * scale, center=c, radius=CAP_GAMMA_RADIUS * scale)
        if len(gamma) == 0:
            raise NumericalFailure("❌ cap boundary patch is empty", center=c.tolist())
        logger.debug("retracted cap with %d boundary samples, s=%g", len(gamma), s)
        return RetractedCap(dom, float(s), c, (CAP_GAMMA_RADIUS + CAP_EPS) * scale, gamma, cKDTree(gamma))

    @staticmethod
    def cap_s_tilde(cap: RetractedCap) -> float:
        return cap.cap_radius / (2 * cap.dom.L)

    def cap_distance_constant(self, dom: DomainSpec, s_values: Sequence[float], center=(0.0, 0.0)) -> dict:
        """Per-s constant C with d(x, Omega'_{2s}) <= C s for x in Omega'_s minus Omega'_{2s}."""
        cap = self.retracted_cap(dom, 0.0, center=center)
        s_tilde = self.cap_s_tilde(cap)
        out = {}
        for s in s_values:
            if s > s_tilde:
                logger.warning("s=%g exceeds s_tilde=%g of the concrete cap", s, s_tilde)
            step = s / 8
            g = np.arange(-cap.cap_radius, cap.cap_radius + step, step)
            X, Y = np.meshgrid(g + cap.center[0], g + cap.center[1], indexing="ij")
            pts = np.stack([X.ravel(), Y.ravel()], axis=1)
            in_s = cap.with_offset(s)(pts)
            in_2s = cap.with_offset(2 * s)(pts)
            ring = pts[in_s & ~in_2s]
            inner = pts[in_2s]
            if len(ring) == 0 or len(inner) == 0:
                out[float(s)] = None
                continue
            d, _ = cKDTree(inner).query(ring)
            out[float(s)] = float(d.max() / s)
        values = [v for v in out.values() if v is not None]
        spread = (max(values) - min(values)) / max(values) if values else None
        return {"per_s": out, "constant": max(values) if values else None, "spread": spread, "s_tilde": s_tilde}

    # ---------- Stretch ----------
    @staticmethod
    def stretch_map(l: float, target: float) -> StretchMap:
        if not (l >= target > 0):
            raise ArgumentError("❌ stretch map needs l >= target > 0", l=l, target=target)
        k = l / target
        T = np.diag([k, 1.0])
        a2 = k * k
        return StretchMap(T, k, (min(a2, 1.0), max(a2, 1.0)))

    # ---------- Rasterization ----------
    @staticmethod
    def rasterize(dom: DomainSpec, nx: int, ny: int, h: float, origin=(0.0, 0.0)) -> np.ndarray:
        """Mask with 0 exterior, 1 interior, 2 boundary (non-interior 8-neighbours of interior nodes)."""
        ox, oy = origin
        xs = ox + h * np.arange(nx)
        ys = oy + h * np.arange(ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        sd = dom.signed_distance(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(nx, ny)
        interior = sd > 1e-12 * h
        interior[0, :] = interior[-1, :] = False
        interior[:, 0] = interior[:, -1] = False
        near = np.zeros_like(interior)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                near |= np.roll(np.roll(interior, di, axis=0), dj, axis=1)
        mask = np.zeros((nx, ny), dtype=np.int8)
        mask[near & ~interior] = 2
        mask[interior] = 1
        return mask


def lipschitz_to_delta(l: float) -> float:
    return GeometryModule.lipschitz_to_delta(l)


def load_graph_table(path: str, l: Optional[float] = None) -> DomainSpec:
    """Two-column CSV (x, g(x)) to a Lipschitz graph domain."""
    try:
        frame = pd.read_csv(path, comment="#")
    except FileNotFoundError as e:
        raise ConfigError("❌ graph table not found", path=path) from e
    if frame.shape[1] < 2:
        raise ConfigError("❌ graph table needs two columns x, g", path=path)
    return DomainSpec.lipschitz_graph(frame.iloc[:, 0].to_numpy(), frame.iloc[:, 1].to_numpy(), l=l, name=str(path))


def build_domain(kind: str, l: float = 0.1, table: Optional[str] = None) -> DomainSpec:
    kind = str(getattr(kind, "value", kind)).lower()
    if kind == DomainKind.HALF_SPACE.value:
        return DomainSpec.half_space()
    if kind == DomainKind.LIPSCHITZ_GRAPH.value:
        return load_graph_table(table, l=l) if table else DomainSpec.wedge(l)
    if kind == DomainKind.CUBE.value:
        return DomainSpec.cube()
    if kind == DomainKind.CUBE_MINUS_BALL.value:
        return DomainSpec.cube_minus_ball()
    if kind == DomainKind.ANNULUS_SECTOR.value:
        return DomainSpec.annulus_sector()
    raise ConfigError("❌ unknown domain kind", kind=kind)


if __name__ == "__main__":
    from rich import print
    geo = GeometryModule()
    wedge = DomainSpec.wedge(0.1)
    print(f"[info] delta(wedge) = {geo.reifenberg_delta(wedge, (0.0, 0.0), 1.0).delta:.6f} "
          f"vs {lipschitz_to_delta(0.1):.6f}")
    print(f"[info] corkscrew(half_space) = {geo.corkscrew(DomainSpec.half_space(), (0.0, 0.0), 1.0)}")
