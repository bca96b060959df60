import numpy as np
import pytest

from backend.core import ArgumentError, ConfigError, PreconditionError
from backend.geometry_module import DomainSpec
from backend.nonlinearity_module import Nonlinearity, RescaledNonlinearity
from backend.solver_module import (
    EXTERIOR, EllipticityPair, GridField, OperatorKind, Problem, SolverEngine, build_grid, check_viscosity_inequalities,
    pucci_apply, pucci_candidates, residual, solve_dirichlet,
)


def _pucci(nl=None, lam=1.0, Lam=1.0, op=OperatorKind.PUCCI_MINUS_DRIFT):
    return Problem(op, EllipticityPair(lam, Lam), RescaledNonlinearity(nl or Nonlinearity.homogeneous(), 1.0))


def test_pucci_apply_values():
    ell = EllipticityPair(1.0, 2.0)
    assert pucci_apply(ell, np.eye(2), "plus") == pytest.approx(-2.0)
    assert pucci_apply(ell, np.eye(2), "minus") == pytest.approx(-4.0)
    assert pucci_apply(ell, np.diag([1.0, -1.0]), "plus") == pytest.approx(1.0)
    assert pucci_apply(ell, np.diag([1.0, -1.0]), "minus") <= pucci_apply(ell, np.diag([1.0, -1.0]), "plus")
    with pytest.raises(ArgumentError):
        pucci_apply(ell, [[1.0, 2.0], [0.0, 1.0]])


def test_ellipticity_and_problem_checks():
    with pytest.raises(ArgumentError):
        EllipticityPair(2.0, 1.0)
    with pytest.raises(ConfigError):
        Problem(OperatorKind.PX_LAPLACE)
    with pytest.raises(ConfigError):
        Problem(OperatorKind.PUCCI_MINUS_DRIFT)


def test_candidates_are_monotone():
    cand = pucci_candidates(EllipticityPair(1.0, 3.0))
    assert len(cand) > 0
    assert np.all(cand >= 0)


def test_linear_data_is_reproduced_exactly():
    grid = build_grid(DomainSpec.cube(), 17, 17, 1 / 16, data_fn=lambda p: p[:, 1])
    prob = _pucci(lam=1.0, Lam=2.0)
    u = solve_dirichlet(prob, grid)
    Y = grid.points()[..., 1]
    assert np.max(np.abs(u.values - Y)[grid.interior]) < 1e-6
    assert residual(prob, u) <= u.diagnostics["tol"]
    assert check_viscosity_inequalities(prob, u)["passed"]


def test_constant_data_on_the_disc():
    dom = DomainSpec.annulus_sector(inner_radius=0.0, radius=1.0)
    grid = build_grid(dom, 33, 33, 1 / 16, origin=(-1.0, -1.0), data_fn=lambda p: np.full(len(p), 2.5))
    u = solve_dirichlet(_pucci(Nonlinearity.log_model(1.0)), grid)
    assert np.allclose(u.values[grid.interior], 2.5, atol=1e-6)


def test_px_laplace_with_constant_exponent_is_harmonic():
    harmonic = lambda p: p[:, 0] ** 2 - p[:, 1] ** 2
    grid = build_grid(DomainSpec.cube(), 17, 17, 1 / 16, data_fn=harmonic)
    prob = Problem(OperatorKind.PX_LAPLACE, p_field=lambda p: np.full(len(p), 2.0))
    u = solve_dirichlet(prob, grid)
    exact = harmonic(grid.points().reshape(-1, 2)).reshape(17, 17)
    assert np.max(np.abs(u.values - exact)[grid.interior]) < 1e-6


def test_px_laplace_rejects_exponent_below_one():
    grid = build_grid(DomainSpec.cube(), 9, 9, 1 / 8, data_fn=lambda p: p[:, 0])
    prob = Problem(OperatorKind.PX_LAPLACE, p_field=lambda p: np.full(len(p), 1.0))
    with pytest.raises(PreconditionError):
        solve_dirichlet(prob, grid)


def test_regularized_family_is_ordered():
    grid = build_grid(DomainSpec.cube(), 9, 9, 1 / 8, data_fn=lambda p: p[:, 1])
    seq = SolverEngine().maximal_solution_sequence(_pucci(Nonlinearity.log_model(1.0)), grid, [0.2, 0.05, 0.1])
    assert seq["eps"] == [0.05, 0.1, 0.2]
    assert len(seq["fields"]) == 3
    assert seq["ordered"]


def test_field_dump_and_load(tmp_path):
    grid = build_grid(DomainSpec.cube(), 5, 4, 0.25, origin=(0.0, 0.0), data_fn=lambda p: p[:, 0] + 0.1)
    path = tmp_path / "u.field"
    grid.dump(str(path))
    lines = path.read_text().splitlines()
    assert lines[0].split()[:2] == ["5", "4"]
    assert lines[1].startswith("# mask")
    # record j * nx + i holds node (i, j)
    assert float(lines[2 + 1 * 5 + 3].split()[1]) == grid.values[3, 1]
    back = GridField.load(str(path))
    assert np.array_equal(back.mask, grid.mask)
    assert np.array_equal(back.values, grid.values)


def test_interpolate_and_ball_values():
    grid = build_grid(DomainSpec.cube(), 9, 9, 1 / 8, data_fn=lambda p: p[:, 0])
    u = solve_dirichlet(_pucci(), grid)
    assert u.interpolate([0.5, 0.5]) == pytest.approx(0.5, abs=1e-6)
    assert u.ball_values([0.5, 0.5], 0.13).size == 5
    with pytest.raises(ArgumentError):
        u.interpolate([2.0, 0.5])


def test_pucci_apply_is_rotation_covariant():
    rng = np.random.default_rng(7)
    ell = EllipticityPair(0.5, 3.0)
    for _ in range(20):
        A = rng.normal(size=(2, 2))
        X = A + A.T
        th = rng.uniform(0.0, 2 * np.pi)
        Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        Xr = Q.T @ X @ Q
        Xr = 0.5 * (Xr + Xr.T)
        for sign in ("plus", "minus"):
            assert pucci_apply(ell, Xr, sign) == pytest.approx(pucci_apply(ell, X, sign), abs=1e-12)


def test_discrete_comparison_and_nonnegativity():
    prob = _pucci(Nonlinearity.log_model(1.0), lam=1.0, Lam=2.0)
    low = build_grid(DomainSpec.cube(), 17, 17, 1 / 16, data_fn=lambda p: p[:, 0] * p[:, 1])
    high = build_grid(DomainSpec.cube(), 17, 17, 1 / 16,
                      data_fn=lambda p: p[:, 0] * p[:, 1] + 0.25 * (1.0 + p[:, 0]))
    assert np.all(high.boundary_data >= low.boundary_data)
    u, v = solve_dirichlet(prob, low), solve_dirichlet(prob, high)
    slack = 10 * u.diagnostics["tol"]
    assert np.min((v.values - u.values)[low.interior]) >= -slack
    assert np.min(u.values[low.interior]) >= -slack


def test_halving_h_cuts_the_error_by_three():
    exact = lambda p: np.exp(p[:, 0]) * np.sin(p[:, 1])
    prob = Problem(OperatorKind.PX_LAPLACE, p_field=lambda p: np.full(len(p), 2.0))
    errors = []
    for n in (9, 17):
        grid = build_grid(DomainSpec.cube(), n, n, 1.0 / (n - 1), data_fn=exact)
        u = solve_dirichlet(prob, grid)
        ref = exact(grid.points().reshape(-1, 2)).reshape(n, n)
        errors.append(float(np.max(np.abs(u.values - ref)[grid.interior])))
    assert errors[0] / errors[1] >= 3.0


def test_convex_quadratic_fails_the_supersolution_side():
    grid = build_grid(DomainSpec.cube(), 17, 17, 1 / 16)
    P = grid.points()
    u = grid.with_values(P[..., 0] ** 2 + P[..., 1] ** 2)
    out = check_viscosity_inequalities(_pucci(op=OperatorKind.PUCCI_PLUS_DRIFT), u)
    assert not out["passed"]
    assert out["nodes"] == 225
    assert out["super_violations"] == out["nodes"]
    assert out["worst_super"]["value"] < 0


def test_single_node_bump_jumps_the_residual():
    h = 1 / 16
    grid = build_grid(DomainSpec.cube(), 17, 17, h)
    exact = grid.with_values(np.where(grid.mask != EXTERIOR, grid.points()[..., 1], 0.0))
    prob = _pucci()
    assert residual(prob, exact) <= 1e-9
    bumped = exact.values.copy()
    bumped[8, 8] += 1.0
    assert residual(prob, exact.with_values(bumped)) >= 1.0 / h ** 2
