import sys
import json
import math
import time
import queue
import argparse
import logging
import threading
from typing import Callable, Dict, List, Optional

import numpy as np
from rich import print
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from backend import (
    core,
    config_module,
    report_module,
    nonlinearity_module,
    harnack_module,
    geometry_module,
    solver_module,
    barriers_module,
    estimates_module,
)
from backend.core import AcceptanceFailure, LabError, PreconditionError
from backend.estimates_module import Instance
from backend.geometry_module import DomainSpec
from backend.loglog_module import LogLogValue
from backend.nonlinearity_module import Nonlinearity, RescaledNonlinearity

# Load environment variables
env_vars = core.load_env()
LOG_LEVEL = core.env_setting(env_vars, "LOG_LEVEL", "INFO")
DEFAULT_THREADS = int(core.env_setting(env_vars, "THREADS", 1))
DEFAULT_OUTPUT = core.env_setting(env_vars, "OUTPUT_DIR", None)

logger = logging.getLogger("main")
err_console = Console(stderr=True)

# Engines that do not depend on the experiment config
geometry_engine = geometry_module.GeometryModule()
harnack_engine = harnack_module.HarnackEngine()


class Subcommand:
    """Pipelines exposed on the command line"""
    STRUCTURE = "structure"
    GEOMETRY = "geometry"
    SOLVE = "solve"
    HARNACK = "harnack"
    CARLESON = "carleson"
    HOLDER = "holder"
    BLOWUP = "blowup"
    BHARNACK = "bharnack"
    SHARPNESS = "sharpness"
    SUITE = "suite"

    ALL = (STRUCTURE, GEOMETRY, SOLVE, HARNACK, CARLESON, HOLDER, BLOWUP, BHARNACK, SHARPNESS, SUITE)


# ---------- Shared helpers ----------

def build_nl(cfg) -> Nonlinearity:
    return nonlinearity_module.build_nonlinearity(cfg.phi.kind, c=cfg.phi.c, table=cfg.phi.table)


def build_dom(cfg) -> DomainSpec:
    return geometry_module.build_domain(cfg.domain.kind, l=cfg.domain.l, table=cfg.domain.table)


def ellipticity(cfg) -> solver_module.EllipticityPair:
    return solver_module.EllipticityPair(cfg.solver.lam, cfg.solver.Lam)


def default_instance(cfg, seed: Optional[int] = None, R: Optional[float] = None, phi: Optional[str] = None,
                     domain: Optional[str] = None) -> Instance:
    seed = cfg.scenario.seeds[0] if seed is None else seed
    return Instance(domain or cfg.domain.kind.value, phi or cfg.phi.kind.value, int(seed),
                    float(cfg.phi.R if R is None else R))


def fields_summary(field_: solver_module.GridField) -> dict:
    live = field_.values[field_.mask != solver_module.EXTERIOR]
    return {"nx": field_.nx, "ny": field_.ny, "h": field_.h, "origin": [field_.x0, field_.y0],
            "min": float(live.min()) if live.size else 0.0, "max": float(live.max()) if live.size else 0.0,
            "diagnostics": field_.diagnostics, "flags": list(field_.flags)}


def summary_table(title: str, rows: List[dict], columns: List[str]):
    table = Table(title=title)
    for col in columns:
        table.add_column(col)
    for row in rows:
        table.add_row(*[escape(str(row.get(col, ""))) for col in columns])
    print(table)


# ---------- Disc ladder (oscillation and interior Holder) ----------

def disc_data(points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return 1.0 + 0.5 * p[:, 0] + 0.25 * p[:, 0] * p[:, 1]


def disc_fits(cfg, nl: Nonlinearity, R: float, h: float) -> dict:
    """Solve on the unit disc and fit the oscillation and interior Holder ladders at the center."""
    dom = DomainSpec.annulus_sector(center=(0.0, 0.0), inner_radius=0.0, radius=1.0)
    n = int(round(2.0 / h)) + 1
    grid = solver_module.build_grid(dom, n, n, h, (-1.0, -1.0), disc_data)
    prob = estimates_module.make_problem(cfg, RescaledNonlinearity(nl, R))
    u = estimates_module.make_solver(cfg).solve_dirichlet(prob, grid)
    est = estimates_module.make_estimates(cfg)
    osc = est.verify_osc_decay(u, (0.0, 0.0), 0.5, R, nl)
    holder = est.verify_interior_holder(u, (0.0, 0.0), 0.5, R, nl)
    return {"h": h, "tau": osc.first, "C": osc.second, "osc": osc, "holder": holder}


def relative_change(a: float, b: float) -> float:
    top = max(abs(a), abs(b))
    return 0.0 if top == 0 else abs(a - b) / top


# ---------- Subcommand handlers ----------

def handle_structure(cfg, writer, threads: int):
    """Structural checks on the configured nonlinearity"""
    nl = build_nl(cfg)
    rnl = RescaledNonlinearity(nl, cfg.phi.R)
    rep = nonlinearity_module.check_structure(nl)
    eps_rows = []
    for eps in cfg.scenario.eps_list:
        c1, c2 = nonlinearity_module.growth_constants(nl, eps)
        eps_rows.append({"eps": eps, "C_eps": nonlinearity_module.slowly_increasing_constant(nl, eps),
                         "growth_C1": c1, "growth_C2": c2})
    payload = {
        "nonlinearity": nl.name,
        "structure": {**report_module.to_plain(rep), "passed": rep.passed},
        "rescaled": nonlinearity_module.check_rescaled_structure(rnl),
        "osgood": nonlinearity_module.osgood_classify(nl),
        "eps": eps_rows,
    }
    flags = [] if rep.passed else ["structure_failed"]
    writer.write_json("structure", payload, flags)
    writer.write_csv("structure_eps", eps_rows)
    print(f"[info] {nl.name}: structure passed={rep.passed}, osgood={payload['osgood']}")
    return flags


def handle_geometry(cfg, writer, threads: int):
    """Flatness, corkscrew, chain and cap audit around the configured boundary point"""
    dom = build_dom(cfg)
    win = estimates_module.domain_window(dom, cfg.phi.R)
    w, radius = win["w"], win["radius"]
    flags = []
    rep = geometry_engine.reifenberg_delta(dom, w, radius)
    payload = {"domain": dom.name, "w": list(w), "radius": radius, "reifenberg": rep}
    if dom.kind == geometry_module.DomainKind.LIPSCHITZ_GRAPH and cfg.domain.l > 0:
        bound = geometry_module.lipschitz_to_delta(cfg.domain.l) if cfg.domain.l < 0.125 else None
        payload["lipschitz_to_delta"] = bound
        if bound is not None and rep.delta > bound + 2 * rep.spacing:
            flags.append("delta_exceeds_lipschitz_bound")
    A = geometry_engine.corkscrew(dom, w, radius)
    payload["corkscrew"] = A.tolist()
    payload["exterior_corkscrew"] = geometry_engine.exterior_corkscrew_check(dom, w, radius)
    # chain between the corkscrew points of w and of the farthest boundary sample in B(w, radius)
    samples = dom.boundary_samples(radius / 16, center=w, radius=radius)
    far = samples[int(np.argmax(np.linalg.norm(samples - np.asarray(w), axis=1)))]
    A2 = geometry_engine.corkscrew(dom, far, radius)
    scale = 0.9 * float(min(dom.distance_to_boundary(A)[0], dom.distance_to_boundary(A2)[0]))
    chain = geometry_engine.harnack_chain(dom, A, A2, scale)
    payload["harnack_chain"] = {"from": A.tolist(), "to": A2.tolist(), "scale": scale, "balls": chain.n,
                                "radius": chain.radius, "notes": chain.notes, "checks": chain.check(dom, A, A2)}
    cap = geometry_engine.retracted_cap(dom, 0.0, center=w)
    s_tilde = geometry_engine.cap_s_tilde(cap)
    payload["cap_distance"] = geometry_engine.cap_distance_constant(dom, [s_tilde / 2, s_tilde / 4, s_tilde / 8], center=w)
    if dom.kind == geometry_module.DomainKind.LIPSCHITZ_GRAPH and cfg.domain.l > 0.0625:
        sm = geometry_engine.stretch_map(cfg.domain.l, 0.0625)
        payload["stretch_map"] = {"matrix": sm.matrix, "factor": sm.factor, "multipliers": list(sm.multipliers)}
    writer.write_json("geometry", payload, flags)
    print(f"[info] {dom.name}: delta={rep.delta:.6g} corkscrew={A.tolist()} chain={chain.n} balls")
    return flags


def handle_solve(cfg, writer, threads: int):
    """Single Dirichlet solve with field dump and viscosity audit"""
    inst = default_instance(cfg)
    prepared = estimates_module.prepare_instance(inst, cfg)
    solver = estimates_module.make_solver(cfg)
    u = solver.solve_dirichlet(prepared["problem"], prepared["grid"])
    payload = {"instance": inst.describe(), "field": fields_summary(u),
               "residual": solver.residual(prepared["problem"], u)}
    flags = list(u.flags)
    if prepared["problem"].is_pucci:
        payload["viscosity"] = solver.check_viscosity_inequalities(prepared["problem"], u)
        if not prepared["nl"].is_homogeneous:
            seq = solver.maximal_solution_sequence(prepared["problem"], prepared["grid"], cfg.scenario.eps_list)
            payload["maximal_sequence"] = {k: v for k, v in seq.items() if k != "fields"}
            if not seq["ordered"]:
                flags.append("regularized_family_not_ordered")
    writer.write_field("field", u)
    writer.write_json("solve", payload, flags)
    print(f"[info] solved {inst.describe()} in {u.diagnostics.get('iterations')} iterations")
    return flags


def handle_harnack(cfg, writer, threads: int):
    """Interior Harnack certificate at the corkscrew point"""
    inst = default_instance(cfg)
    solved = estimates_module.solve_instance(inst, cfg)
    dom, nl, u = solved["dom"], solved["nl"], solved["field"]
    est = estimates_module.make_estimates(cfg)
    A = geometry_engine.corkscrew(dom, solved["w"], solved["radius"])
    r = float(dom.distance_to_boundary(A)[0]) / 4
    cert = est.verify_interior_harnack(u, A, r, inst.R, nl, cfg.scenario.alpha, budget=cfg.scenario.c2_budget)
    payload = {
        "instance": inst.describe(),
        "center": A.tolist(),
        "certificate": cert,
        "scaling_residual": harnack_engine.scaling_identity_residual(max(cert.m, 1e-12), max(cert.M, 1e-12),
                                                                     r, inst.R, nl),
        "domination_constant": harnack_engine.domination_constant(nl, cfg.scenario.alpha, inst.R),
    }
    if cert.m > 0 and not core.is_infinite(cert.value):
        payload["upper_bound_from_budget"] = harnack_engine.invert_upper(cert.m, float(cert.value), inst.R, nl)
    flags = ["budget_exceeded"] if cert.passed is False else []
    writer.write_json("harnack", payload, flags)
    print(f"[info] Harnack integral {cert.value} over B({A.tolist()}, {r:.4g})")
    return flags


def _family_for(cfg) -> List[Instance]:
    return sorted(default_instance(cfg, seed=s, R=R) for s in cfg.scenario.seeds for R in cfg.scenario.r_list)


def handle_carleson(cfg, writer, threads: int):
    """Carleson constants across R for the configured domain and nonlinearity"""
    instances = _family_for(cfg)
    reports = estimates_module.run_family(cfg, threads, instances)
    carl = reports[estimates_module.EstimateKind.CARLESON.value]
    payload = {"carleson": carl, "interior_harnack": reports[estimates_module.EstimateKind.INTERIOR_HARNACK.value]}
    flags = list(carl.flags)
    if carl.independence_spread > estimates_module.SPREAD_LIMIT:
        flags.append("spread_above_limit")
    if cfg.solver.operator == solver_module.OperatorKind.PX_LAPLACE:
        inst = default_instance(cfg)
        solved = estimates_module.solve_instance(inst, cfg)
        est = estimates_module.make_estimates(cfg)
        px = est.px_corollary_check(solved["field"], solved["dom"], inst.R, solved["w"], solved["radius"])
        payload["px_corollary"] = px
        if not px["passed"]:
            flags.append("px_carleson_failed")
    rows = [{**inst, "value": v} for inst, v in zip(carl.instances, carl.per_instance_values)]
    writer.write_json("carleson", payload, flags)
    writer.write_csv("carleson", rows)
    print(f"[info] Carleson constant {carl.fitted_constant:g}, spread {carl.independence_spread:.3g}")
    return flags


def handle_holder(cfg, writer, threads: int):
    """Oscillation decay and Holder fits on the disc, boundary Holder on the configured domain"""
    nl = build_nl(cfg)
    R = cfg.phi.R
    fits = [disc_fits(cfg, nl, R, h) for h in cfg.scenario.h_list]
    payload = {"disc": fits, "flags": []}
    flags = []
    if len(fits) >= 2:
        payload["stability"] = {"tau": relative_change(fits[0]["tau"], fits[-1]["tau"]),
                                "C": relative_change(fits[0]["C"], fits[-1]["C"])}
    inst = default_instance(cfg)
    solved = estimates_module.solve_instance(inst, cfg)
    est = estimates_module.make_estimates(cfg)
    try:
        payload["boundary"] = est.verify_boundary_holder(solved["field"], solved["dom"], solved["w"],
                                                         solved["radius"], R, nl)
    except PreconditionError as e:
        logger.warning("boundary Holder skipped: %s", e.message)
        payload["boundary"] = {"skipped": e.to_dict()}
        flags.append("boundary_holder_precondition")
    rows = [{"h": f["h"], "tau": f["tau"], "C": f["C"], "C1": f["holder"].first, "alpha": f["holder"].second}
            for f in fits]
    writer.write_json("holder", payload, flags)
    writer.write_csv("holder", rows)
    summary_table("disc ladder fits", rows, ["h", "tau", "C", "C1", "alpha"])
    return flags


def handle_blowup(cfg, writer, threads: int):
    """Blow-up profile M_s over the retracted caps"""
    inst = default_instance(cfg)
    solved = estimates_module.solve_instance(inst, cfg)
    est = estimates_module.make_estimates(cfg)
    rep = est.blowup_profile(solved["field"], solved["dom"], inst.R, solved["nl"], cfg.scenario.alpha,
                             center=solved["w"], scale=solved["radius"] / 2, c2_budget=cfg.scenario.c2_budget,
                             sigma=cfg.scenario.sigma)
    chain = est.proof_diagnostics(solved["field"], solved["dom"], inst.R, solved["nl"], solved["w"],
                                  solved["radius"])
    flags = [] if rep.monotone else ["M_s_not_monotone"]
    writer.write_json("blowup", {"instance": inst.describe(), "profile": rep, "doubling_chain": chain}, flags)
    writer.write_csv("blowup", [{"s": s, "M_s": M} for s, M in zip(rep.s, rep.M_s)])
    print(f"[info] alternative {rep.alternative}, S={rep.S}, gamma={rep.gamma}")
    return flags


def boundary_harnack_pair(cfg, seed_u: int, seed_v: int, phi: Optional[str] = None,
                          domain: Optional[str] = None) -> dict:
    """Solve u and v for two seeds and compare them near the boundary point."""
    inst_u = default_instance(cfg, seed=seed_u, phi=phi, domain=domain)
    inst_v = default_instance(cfg, seed=seed_v, phi=phi, domain=domain)
    solver = estimates_module.make_solver(cfg)
    est = estimates_module.make_estimates(cfg)
    solved = estimates_module.solve_instance(inst_u, cfg, solver)
    dom, nl, u, w, radius = solved["dom"], solved["nl"], solved["field"], solved["w"], solved["radius"]
    prepared = estimates_module.prepare_instance(inst_v, cfg)
    A = geometry_engine.corkscrew(dom, w, radius)
    if nl.is_homogeneous or seed_u == seed_v:
        v = solver.solve_dirichlet(prepared["problem"], prepared["grid"])
    else:
        v, _ = est.match_boundary_amplitude(prepared["problem"], prepared["grid"], A, u.interpolate(A), solver)
    out = {"u": u, "v": v, "dom": dom, "nl": nl, "w": w, "radius": radius,
           "report": est.verify_boundary_harnack(u, v, dom, inst_u.R, nl, w, radius)}
    if cfg.solver.operator == solver_module.OperatorKind.PX_LAPLACE:
        out["px"] = est.px_corollary_check(u, dom, inst_u.R, w, radius, v)
    return out


def handle_bharnack(cfg, writer, threads: int):
    """Boundary Harnack ratio for two boundary-vanishing solutions"""
    seeds = list(cfg.scenario.seeds)
    pair = boundary_harnack_pair(cfg, seeds[0], seeds[1] if len(seeds) > 1 else seeds[0])
    rep = pair["report"]
    payload = {"report": rep, "u": fields_summary(pair["u"]), "v": fields_summary(pair["v"])}
    flags = list(rep.flags)
    if "px" in pair:
        payload["px_corollary"] = pair["px"]
    finite = not core.is_infinite(rep.integral)
    if finite and math.isfinite(rep.sup_ratio) and rep.sup_ratio > math.exp(float(rep.integral)) * (1 + 1e-9) \
            and rep.mu0 > 0:
        flags.append("ratio_exceeds_mu_bound")
    writer.write_json("bharnack", payload, flags)
    print(f"[info] mu0={rep.mu0:.6g} mu1={rep.mu1:.6g} sup v/u={rep.sup_ratio:.6g}")
    return flags


def handle_sharpness(cfg, writer, threads: int):
    """Double-exponential example and the constant behind it"""
    sc = cfg.scenario
    reports = [barriers_module.sharpness_example(H, sc.eps) for H in sorted({sc.H, *sc.h_sharpness})]
    lemma = [barriers_module.lemma61_check(eps) for eps in sc.lemma_eps]
    payload = {"eps": sc.eps, "sharpness": reports, "lemma": lemma,
               "H_min": {str(eps): barriers_module.h_min(eps) for eps in sc.lemma_eps}}
    flags = sorted({f for rep in reports for f in rep.flags})
    rows = [{"H": rep.H.render(), "K": rep.K, "gamma": rep.gamma, "R": rep.R, "R_hat": rep.R_hat,
             "log_ratio_lower_bound": rep.ratio_lower_bound.log, "barrier_admissible": rep.barrier_admissible,
             "chain_holds": rep.chain_holds} for rep in reports]
    writer.write_json("sharpness", payload, flags)
    writer.write_csv("sharpness", rows)
    writer.write_csv("lemma", [r.to_dict() for r in lemma])
    summary_table("sharpness example", rows, ["H", "K", "gamma", "log_ratio_lower_bound", "barrier_admissible"])
    return flags


# ---------- Acceptance suite ----------

def criterion_flatness(cfg) -> List[dict]:
    delta = geometry_module.lipschitz_to_delta(0.1)
    rep = geometry_engine.reifenberg_delta(DomainSpec.wedge(0.1), (0.0, 0.0), 1.0)
    ok = abs(delta - 0.1 / math.sqrt(1.01)) <= 1e-12 and rep.delta <= delta + 2 * rep.spacing
    return [{"criterion": 1, "name": "lipschitz_to_reifenberg", "passed": ok,
             "measured": {"formula": delta, "measured": rep.delta, "spacing": rep.spacing}}]


def criterion_homogeneous(cfg) -> List[dict]:
    nl = Nonlinearity.homogeneous()
    values = {rho: harnack_engine.harnack_integral_original(1.0, math.e, rho, nl) for rho in (1.0, 0.5, 0.1)}
    ok = all(abs(v - 1.0) <= 1e-10 for v in values.values())
    return [{"criterion": 2, "name": "homogeneous_reduction", "passed": ok, "measured": values}]


def criterion_scaling(cfg) -> List[dict]:
    worst = 0.0
    for nl in (Nonlinearity.linear(), Nonlinearity.log_model(1.0)):
        for m, M in ((0.5, 2.0), (1.0, 10.0), (0.1, 100.0)):
            for r in (0.25, 0.5, 1.0):
                for R in (0.1, 0.5, 1.0):
                    worst = max(worst, harnack_engine.scaling_identity_residual(m, M, r, R, nl))
    return [{"criterion": 3, "name": "scaling_identity", "passed": worst <= 1e-8, "measured": {"worst": worst}}]


def criterion_barriers(cfg) -> List[dict]:
    bm = barriers_module.BarrierModule(ellipticity(cfg))
    measured, ok = {}, True
    for R in (1.0, 0.1):
        rnl = RescaledNonlinearity(Nonlinearity.log_model(cfg.phi.c), R)
        C = bm.choose_ctilde(rnl)
        low = bm.lower_barrier_w1(1.0, rnl, C)
        up = bm.upper_barrier_w2(1.0, rnl, C)
        row = {"Ctilde": C, "mu0": low.mu, "mu1": up.mu}
        if low.barrier is None or up.barrier is None:
            ok = False
            row["degenerate"] = True
        else:
            b1, b2 = low.barrier, up.barrier
            row["certificate_w1"] = b1.certificate
            row["certificate_w2"] = b2.certificate
            row["hit_w1"] = abs(b1.params["inner_value"] - 1.0)
            row["hit_w2"] = abs(b2.params["outer_value"] - 1.0)
            tiny = 1e-12
            row["w1_above_linear"] = bool(np.all(b1.g >= low.mu * b1.t - tiny))
            row["w2_below_linear"] = bool(np.all(b2.g <= up.mu * b2.t + tiny * max(1.0, up.mu)))
            ok &= (b1.certificate >= 0 and b2.certificate >= 0 and row["hit_w1"] <= 1e-8
                   and row["hit_w2"] <= 1e-8 and row["w1_above_linear"] and row["w2_below_linear"])
        measured[str(R)] = row
    return [{"criterion": 4, "name": "barrier_correctness", "passed": bool(ok), "measured": measured}]


def criterion_lemma(cfg) -> List[dict]:
    reports = [barriers_module.lemma61_check(eps) for eps in (0.05, 0.1, 0.2)]
    ok = all(r.k_hat <= 200 and r.holds_above and r.slack_at_k_hat_plus_10 > 0 and r.sufficient_holds
             for r in reports)
    return [{"criterion": 5, "name": "double_exponential_lemma", "passed": ok,
             "measured": [r.to_dict() for r in reports]}]


def criterion_sharpness(cfg) -> List[dict]:
    eps = 0.03
    reports = [barriers_module.sharpness_example(H, eps) for H in (1e4, 1e6)]
    gamma = math.exp(1.0 / 16.0 - 2.0 * eps)
    one = LogLogValue.of(1.0)
    ok = all(r.gamma == gamma and r.gamma > 1 and r.ratio_lower_bound > one and r.H.loglog <= r.K + 0.25
             for r in reports)
    ok = ok and reports[1].ratio_lower_bound > reports[0].ratio_lower_bound
    return [{"criterion": 6, "name": "sharpness_pipeline", "passed": bool(ok),
             "measured": [{"H": r.H.render(), "K": r.K, "gamma": r.gamma,
                           "log_ratio": r.ratio_lower_bound.log} for r in reports]}]


def criterion_solver(cfg) -> List[dict]:
    solver = solver_module.SolverEngine(1e-12, cfg.solver.max_iters)
    slab = DomainSpec.half_space()
    grid = solver_module.build_grid(slab, 129, 65, 1 / 64, (-1.0, 0.0), lambda p: p[:, 1])
    prob = solver_module.Problem(solver_module.OperatorKind.PUCCI_MINUS_DRIFT, solver_module.EllipticityPair(),
                                 RescaledNonlinearity(Nonlinearity.homogeneous(), 1.0))
    u = solver.solve_dirichlet(prob, grid)
    live = u.mask != solver_module.EXTERIOR
    slab_err = float(np.max(np.abs(u.values - u.points()[..., 1])[live]))
    cube = DomainSpec.cube()
    harmonic = lambda p: p[..., 0] ** 2 - p[..., 1] ** 2
    px = solver_module.Problem(solver_module.OperatorKind.PX_LAPLACE, solver_module.EllipticityPair(),
                               p_field=lambda p: np.full(len(p), 2.0))
    errors = {}
    for h in (1 / 32, 1 / 64):
        n = int(round(1 / h)) + 1
        g = solver_module.build_grid(cube, n, n, h, (0.0, 0.0), harmonic)
        v = solver.solve_dirichlet(px, g)
        live = v.mask != solver_module.EXTERIOR
        errors[h] = float(np.max(np.abs(v.values - harmonic(v.points()))[live]))
    coarse, fine = errors[1 / 32], errors[1 / 64]
    refinement = coarse / fine if fine > 0 else math.inf
    ok = slab_err <= 1e-10 and all(e <= 5 * h * h for h, e in errors.items()) \
        and (refinement >= 3 or fine <= 1e-9)
    return [{"criterion": 7, "name": "solver_exactness", "passed": bool(ok),
             "measured": {"slab_error": slab_err, "px_errors": {str(k): v for k, v in errors.items()},
                          "refinement": refinement}}]


def criterion_family(cfg, threads: int) -> List[dict]:
    reports = estimates_module.run_family(cfg, threads)
    harn = reports[estimates_module.EstimateKind.INTERIOR_HARNACK.value]
    carl = reports[estimates_module.EstimateKind.CARLESON.value]
    blow = reports[estimates_module.EstimateKind.BLOWUP.value]
    spread_ok = (harn.independence_spread <= estimates_module.SPREAD_LIMIT
                 and carl.independence_spread <= estimates_module.SPREAD_LIMIT
                 and not any(f.startswith("failed:") for f in harn.flags + carl.flags))
    s0 = all(row["alternative"] == "S0" for row in blow.instances)
    return [
        {"criterion": 8, "name": "empirical_independence", "passed": bool(spread_ok),
         "measured": {"harnack_spread": harn.independence_spread, "carleson_spread": carl.independence_spread,
                      "harnack_constant": harn.fitted_constant, "carleson_constant": carl.fitted_constant,
                      "flags": sorted(set(harn.flags + carl.flags))}},
        {"criterion": 10, "name": "blowup_structure", "passed": bool(blow.details["all_monotone"] and s0),
         "measured": {"all_monotone": blow.details["all_monotone"], "all_S0": s0,
                      "instances": len(blow.instances)}},
    ]


def criterion_oscillation(cfg) -> List[dict]:
    nl = Nonlinearity.log_model(cfg.phi.c)
    h_list = sorted(cfg.scenario.h_list, reverse=True)[:2]
    fits = [disc_fits(cfg, nl, cfg.phi.R, h) for h in h_list]
    ok = all(f["tau"] < 1 for f in fits)
    stability = {}
    if len(fits) == 2:
        stability = {"tau": relative_change(fits[0]["tau"], fits[1]["tau"]),
                     "C": relative_change(fits[0]["C"], fits[1]["C"])}
        ok = ok and stability["tau"] <= 0.25 and stability["C"] <= 0.25
    return [{"criterion": 9, "name": "oscillation_decay", "passed": bool(ok),
             "measured": {"fits": [{"h": f["h"], "tau": f["tau"], "C": f["C"]} for f in fits],
                          "stability": stability}}]


def criterion_bharnack(cfg) -> List[dict]:
    homogeneous = nonlinearity_module.NonlinearityKind.HOMOGENEOUS.value
    half = geometry_module.DomainKind.HALF_SPACE.value
    same = boundary_harnack_pair(cfg, 0, 0, phi=homogeneous, domain=half)["report"]
    pair = boundary_harnack_pair(cfg, 0, 1, phi=homogeneous, domain=half)["report"]
    expected = abs(math.log(pair.mu1 / pair.mu0)) if pair.mu0 > 0 and math.isfinite(pair.mu1) else math.nan
    integral = math.nan if core.is_infinite(pair.integral) else float(pair.integral)
    ok = abs(same.sup_ratio - 1.0) <= 1e-12 and math.isfinite(integral) and abs(integral - expected) <= 1e-8
    return [{"criterion": 11, "name": "boundary_harnack_sanity", "passed": bool(ok),
             "measured": {"sup_ratio_same": same.sup_ratio, "integral": integral, "log_mu_ratio": expected}}]


SUITE: Dict[str, Callable] = {
    "lipschitz_to_reifenberg": criterion_flatness,
    "homogeneous_reduction": criterion_homogeneous,
    "scaling_identity": criterion_scaling,
    "barrier_correctness": criterion_barriers,
    "double_exponential_lemma": criterion_lemma,
    "sharpness_pipeline": criterion_sharpness,
    "solver_exactness": criterion_solver,
    "instance_family": criterion_family,
    "oscillation_decay": criterion_oscillation,
    "boundary_harnack_sanity": criterion_bharnack,
}
CRITERIA: Dict[str, tuple] = {
    "lipschitz_to_reifenberg": (1,),
    "homogeneous_reduction": (2,),
    "scaling_identity": (3,),
    "barrier_correctness": (4,),
    "double_exponential_lemma": (5,),
    "sharpness_pipeline": (6,),
    "solver_exactness": (7,),
    "instance_family": (8, 10),
    "oscillation_decay": (9,),
    "boundary_harnack_sanity": (11,),
}


def failed_rows(name: str, error: dict) -> List[dict]:
    return [{"criterion": k, "name": name, "passed": False, "measured": {"error": error}} for k in CRITERIA[name]]


def run_suite(cfg, threads: int, names: Optional[List[str]] = None) -> List[dict]:
    """Evaluate the acceptance criteria on worker threads; rows come back sorted by criterion."""
    task_queue: "queue.Queue[str]" = queue.Queue()
    for name in names or list(SUITE):
        task_queue.put(name)
    rows: List[dict] = []
    lock = threading.Lock()

    def task_worker():
        while True:
            try:
                name = task_queue.get_nowait()
            except queue.Empty:
                return
            started = time.perf_counter()
            fn = SUITE[name]
            try:
                out = fn(cfg, threads) if name == "instance_family" else fn(cfg)
            except LabError as e:
                logger.error("criterion %s failed with %s", name, e.message)
                out = failed_rows(name, e.to_dict())
            except Exception as e:
                logger.error("criterion %s crashed: %s", name, e)
                out = failed_rows(name, {"error": type(e).__name__, "message": str(e)})
            logger.info("criterion %s done in %.2fs", name, time.perf_counter() - started)
            with lock:
                rows.extend(out)
            task_queue.task_done()

    workers = [threading.Thread(target=task_worker, daemon=True) for _ in range(max(1, threads))]
    for t in workers:
        t.start()
    for t in workers:
        t.join()
    return sorted(rows, key=lambda r: r["criterion"])


def handle_suite(cfg, writer, threads: int):
    """Full acceptance run with a summary table"""
    rows = run_suite(cfg, threads)
    failed = [row["name"] for row in rows if not row["passed"]]
    writer.write_json("suite", {"criteria": rows, "failed": failed}, ["acceptance_failed"] if failed else [])
    writer.write_csv("suite_summary", [{"criterion": r["criterion"], "name": r["name"], "passed": r["passed"],
                                        "measured": json.dumps(report_module.to_plain(r["measured"]),
                                                               sort_keys=True)} for r in rows])
    summary_table("acceptance suite", rows, ["criterion", "name", "passed"])
    if failed:
        raise AcceptanceFailure("❌ acceptance criteria failed", failed=failed)
    return []


HANDLERS: Dict[str, Callable] = {
    Subcommand.STRUCTURE: handle_structure,
    Subcommand.GEOMETRY: handle_geometry,
    Subcommand.SOLVE: handle_solve,
    Subcommand.HARNACK: handle_harnack,
    Subcommand.CARLESON: handle_carleson,
    Subcommand.HOLDER: handle_holder,
    Subcommand.BLOWUP: handle_blowup,
    Subcommand.BHARNACK: handle_bharnack,
    Subcommand.SHARPNESS: handle_sharpness,
    Subcommand.SUITE: handle_suite,
}


# ---------- Entry point ----------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="experiment config (dotenv syntax)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--format", choices=("json", "csv", "both"), default=None, help="report formats")
    parser = argparse.ArgumentParser(prog="boundary-lab", description="Boundary estimates laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in Subcommand.ALL:
        sub.add_parser(name, parents=[common], help=(HANDLERS[name].__doc__ or "").strip())
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_module.load_config(args.config)
        formats = cfg.output.formats if args.format is None else (
            ["json", "csv"] if args.format == "both" else [args.format])
        directory = args.out or DEFAULT_OUTPUT or cfg.output.directory
        threads = args.threads or DEFAULT_THREADS
        writer = report_module.ReportWriter(directory, cfg.config_hash(), args.subcommand, formats)
        logger.info("running %s with %d thread(s) into %s", args.subcommand, threads, directory)
        flags = HANDLERS[args.subcommand](cfg, writer, threads)
        if flags:
            print(f"[warning] flags: {', '.join(flags)}")
        print(f"[info] {len(writer.written)} file(s) written to {directory}")
        return 0
    except LabError as e:
        err_console.print(escape(f"[error] {e.message}"))
        sys.stderr.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
        return e.exit_code
    except Exception as e:
        logger.exception("unexpected failure")
        err_console.print(escape(f"[error] {type(e).__name__}: {e}"))
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "details": {}}) + "\n")
        return 3


def main():
    core.setup_logging(LOG_LEVEL)
    sys.exit(run())


if __name__ == "__main__":
    main()
