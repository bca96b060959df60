import math
from pathlib import Path

import numpy as np
import pytest

from backend.core import ArgumentError, ConfigError, NumericalFailure, PreconditionError
from backend.geometry_module import (
    DomainKind, DomainSpec, GeometryModule, build_domain, lipschitz_to_delta, load_graph_table,
)

geo = GeometryModule()


def test_signed_distance_is_positive_inside():
    cube = DomainSpec.cube()
    assert cube.signed_distance([0.5, 0.5])[0] == pytest.approx(0.5)
    assert cube.signed_distance([1.5, 0.5])[0] < 0
    assert DomainSpec.half_space().on_boundary([3.0, 0.0])


def test_hausdorff_distance():
    assert geo.hausdorff_distance([[0.0, 0.0]], [[0.0, 0.0], [3.0, 4.0]]) == pytest.approx(5.0)
    with pytest.raises(ArgumentError):
        geo.hausdorff_distance(np.zeros((0, 2)), [[0.0, 0.0]])


def test_half_space_is_flat():
    report = geo.reifenberg_delta(DomainSpec.half_space(), [0.0, 0.0], 1.0)
    assert report.delta == pytest.approx(0.0, abs=1e-9)
    assert report.separation


def test_wedge_flatness_matches_lipschitz_bound():
    l = 0.1
    report = geo.reifenberg_delta(DomainSpec.wedge(l), [0.0, 0.0], 1.0)
    assert report.delta == pytest.approx(lipschitz_to_delta(l), abs=2e-3)


def test_lipschitz_to_delta_range():
    assert lipschitz_to_delta(0.0) == 0.0
    with pytest.raises(ArgumentError):
        lipschitz_to_delta(1.0 / 8.0)


def test_corkscrew_on_half_space():
    a = geo.corkscrew(DomainSpec.half_space(), [0.0, 0.0], 1.0)
    assert a == pytest.approx([0.0, 0.75])
    assert geo.exterior_corkscrew_check(DomainSpec.half_space(), [0.0, 0.0], 1.0)["passed"]
    with pytest.raises(ArgumentError):
        geo.corkscrew(DomainSpec.cube(), [0.0, 0.5], 1.0)


def test_harnack_chain_straight_line():
    dom = DomainSpec.half_space()
    chain = geo.harnack_chain(dom, [0.0, 1.0], [3.0, 1.0], 1.0)
    assert chain.n == 7
    assert chain.radius == 0.5
    assert all(chain.check(dom, [0.0, 1.0], [3.0, 1.0]).values())


def test_harnack_chain_rejects_points_near_boundary():
    with pytest.raises(NumericalFailure):
        geo.harnack_chain(DomainSpec.half_space(), [0.0, 0.2], [1.0, 1.0], 1.0)


def test_stretch_map_flattens_a_graph():
    T = geo.stretch_map(0.5, 1.0 / 16.0)
    assert T.factor == pytest.approx(8.0)
    assert T.multipliers == (1.0, 64.0)
    stretched = T.transform_graph(DomainSpec.wedge(0.5))
    assert stretched.l == pytest.approx(1.0 / 16.0)
    assert T.inverse(T.apply([[1.0, 2.0]])) == pytest.approx(np.array([[1.0, 2.0]]))


def test_rasterize_cube():
    mask = geo.rasterize(DomainSpec.cube(), 5, 5, 0.25)
    assert mask[2, 2] == 1
    assert mask[0, 0] == 2
    assert (mask == 1).sum() == 9


def test_graph_table_lipschitz_check():
    with pytest.raises(PreconditionError) as exc:
        DomainSpec.lipschitz_graph([0.0, 1.0, 2.0], [0.0, 0.5, 0.0], l=0.1)
    assert exc.value.details["first_violating_pair"] == [0.0, 1.0]


def test_build_domain():
    assert build_domain("annulus_sector").kind == DomainKind.ANNULUS_SECTOR
    assert build_domain("lipschitz_graph", l=0.05).l == pytest.approx(0.05)
    with pytest.raises(ConfigError):
        build_domain("sphere")


@pytest.mark.slow
def test_cap_constant_is_finite_on_half_space():
    out = geo.cap_distance_constant(DomainSpec.half_space(), [0.1, 0.2])
    assert out["constant"] is not None
    assert math.isfinite(out["constant"])


def test_retracted_cap_membership():
    cap = geo.retracted_cap(DomainSpec.half_space(), 0.1)
    inside = cap([[0.0, 0.5], [0.0, 0.05], [0.0, -0.5], [3.0, 1.0]])
    assert inside.tolist() == [True, False, False, False]
    assert cap.with_offset(0.6)([[0.0, 0.5]]).tolist() == [False]
    assert geo.cap_s_tilde(cap) == pytest.approx(2.25 / 4)
    with pytest.raises(ArgumentError):
        cap.with_offset(-1.0)


def test_separation_of_the_half_space():
    half = DomainSpec.half_space()
    assert geo.separation_check(half, [0.0, 0.0], 0.5, 0.01, angle=0.0)
    assert not geo.separation_check(half, [0.0, 0.0], 0.5, 0.01, angle=math.pi / 2)


def test_load_graph_table(tmp_path):
    dom = load_graph_table(str(Path(__file__).parents[1] / "data" / "graph_wedge.csv"))
    assert dom.kind == DomainKind.LIPSCHITZ_GRAPH
    assert dom.signed_distance([0.0, 1.0])[0] > 0
    assert dom.signed_distance([0.0, -1.0])[0] < 0
    one_column = tmp_path / "g.csv"
    one_column.write_text("x\n0.0\n1.0\n")
    with pytest.raises(ConfigError):
        load_graph_table(str(one_column))
    with pytest.raises(ConfigError):
        load_graph_table(str(tmp_path / "missing.csv"))
