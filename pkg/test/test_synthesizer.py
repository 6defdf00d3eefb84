import math

import numpy as np
import pytest
from pydantic import ValidationError

from bubble_graph import check_scale_order, count_catenoids, double_tree_check
from errors import InvalidParameters, OutOfRange, OverlapCollision
from geometry import functionals, gauss_bonnet_residual
from models import FamilySpec, TreeSpec
from synthesizer import (MAX_NECK_ALPHA, degenerate_torus, induced_modulus, layout_member, macroscopic_bubbles,
                         macroscopic_functional_sum, neck_contribution, star_tree)
from .utils import *


def _leaf_edge(family, leaf="c1", copy=1):
    return next(e for e in family.graph.edges
                if e.head == leaf and family.graph.vertex(e.tail).copy_index == copy)


def test_star_tree():
    tree = star_tree(2)
    assert tree.root == "r"
    assert tree.leaves() == ["c1", "c2", "c3"]
    with pytest.raises(InvalidParameters):
        star_tree(0)


def test_family_spec_validation():
    with pytest.raises(ValidationError):
        FamilySpec(tree=star_tree(1), genus=2)
    with pytest.raises(ValidationError):
        FamilySpec(tree=GENUS_TWO_TREE, genus=2, configuration="tangent")
    with pytest.raises(ValidationError):
        FamilySpec(tree=star_tree(1), genus=1, leaf_ratio=(1.0, 4.0))
    with pytest.raises(ValidationError):
        FamilySpec(tree=star_tree(1), genus=1, k_range=(3, 1))


def test_layout_scales_follow_schedule(genus_one_spec):
    for k in genus_one_spec.ks():
        layout = layout_member(genus_one_spec, k)
        assert layout.scales["r"] == pytest.approx(genus_one_spec.root_scale * genus_one_spec.root_growth ** -k)
        assert 0 < layout.scales["c1"] < layout.scales["r"]
        assert layout.h > 0


def test_attachment_collision_detected():
    spec = FamilySpec(tree=star_tree(1), genus=1, attachment_angles={"c1": 0.0, "c2": 0.1})
    with pytest.raises(OverlapCollision):
        layout_member(spec, 0)


@pytest.mark.parametrize("name", ["genus_one_family", "genus_two_family"])
def test_ground_truth_graph_is_consistent(name, request):
    family = request.getfixturevalue(name)
    G = family.graph
    p = family.spec.genus
    assert count_catenoids(G) == p + 1
    assert all(row.passed for row in check_scale_order(G))
    result = double_tree_check(G, p)
    assert result.tree.parent == family.spec.tree.parent
    assert sorted(G.k_range) == list(family.spec.ks())


@pytest.mark.parametrize("name", ["genus_one_family", "genus_two_family"])
def test_energies_approach_targets(name, request):
    family = request.getfixturevalue(name)
    p = family.spec.genus
    f = functionals(family.members[max(family.members)])
    assert f.W == pytest.approx(EIGHT_PI, rel=0.05)
    assert f.E == pytest.approx((p + 3) * EIGHT_PI, rel=0.05)


def test_gauss_bonnet_on_members(genus_one_family):
    for member in genus_one_family.members.values():
        f = functionals(member)
        assert abs(gauss_bonnet_residual(member)) < 2e-2 * f.E


def test_neck_contribution_errors(genus_one_family):
    edge = _leaf_edge(genus_one_family)
    with pytest.raises(OutOfRange):
        neck_contribution(genus_one_family, 3, edge, MAX_NECK_ALPHA * 2)
    with pytest.raises(OutOfRange):
        neck_contribution(genus_one_family, 3, edge, 0.0)
    with pytest.raises(InvalidParameters):
        neck_contribution(genus_one_family, 3, edge, 0.1, alpha0=0.5)


def test_neck_area_decays_in_k_and_alpha(genus_one_family):
    edge = _leaf_edge(genus_one_family)
    ks = sorted(genus_one_family.members)
    areas = [neck_contribution(genus_one_family, k, edge, MAX_NECK_ALPHA).A for k in ks]
    assert all(b < a for a, b in zip(areas, areas[1:]))
    small = neck_contribution(genus_one_family, ks[-1], edge, 0.05)
    full = neck_contribution(genus_one_family, ks[-1], edge, MAX_NECK_ALPHA)
    assert 0 < small.A < full.A
    assert small.diameter <= full.diameter


def test_macroscopic_sums_coincident(genus_one_family):
    spheres = macroscopic_bubbles(genus_one_family.spec)
    assert sum(functionals(s).V for s in spheres) == pytest.approx(0.0, abs=1e-2)
    rows = macroscopic_functional_sum(genus_one_family)
    last = max(r.k for r in rows)
    final = {r.name: r for r in rows if r.k == last}
    assert final["A"].macroscopic == pytest.approx(EIGHT_PI, rel=1e-3)
    assert final["A"].gap < 0.02
    assert final["V"].gap < 0.02
    assert final["M"].gap < 0.02


def test_macroscopic_sums_tangent(tangent_family):
    rows = macroscopic_functional_sum(tangent_family)
    last = max(r.k for r in rows)
    final = {r.name: r.measured for r in rows if r.k == last}
    assert final["V"] == pytest.approx(8 * math.pi / 3, rel=2e-2)
    assert final["M"] / math.sqrt(final["A"]) == pytest.approx(math.sqrt(8 * math.pi), rel=1e-2)


@pytest.fixture(scope="module")
def torus_members():
    spec = FamilySpec(tree=star_tree(1), genus=1, resolution=64)
    return degenerate_torus([0.4 * 2.0 ** -k for k in range(7)], spec)


def test_degenerating_torus_moduli_increase(torus_members):
    ims = [m.modulus.im for m in torus_members]
    assert all(b > a for a, b in zip(ims, ims[1:]))
    # leaf ratio x4 per step: necks and sheet annuli each gain 4 beta log 4 of conformal length
    beta = FamilySpec(tree=star_tree(1), genus=1).overlap_exponent
    steps = np.diff(ims)
    assert steps == pytest.approx(np.full(len(steps), 4 * beta * math.log(4.0) / math.pi), rel=0.1)
    targets = [m.target.im for m in torus_members]
    assert all(b > a for a, b in zip(targets, targets[1:]))
    assert torus_members[-1].target.degenerating
    waists = [m.layout.scales["c1"] for m in torus_members]
    assert all(b < a for a, b in zip(waists, waists[1:]))


def test_degenerating_torus_energies(torus_members):
    gaps = []
    for m in torus_members:
        f = functionals(m.atlas)
        assert abs(gauss_bonnet_residual(m.atlas)) < 2e-2 * f.E
        gaps.append(abs(f.W - EIGHT_PI))
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 0.05 * EIGHT_PI


def test_induced_modulus_needs_a_torus(genus_two_family):
    with pytest.raises(InvalidParameters):
        induced_modulus(genus_two_family.members[0])


def test_degenerating_torus_rejects_bad_input():
    with pytest.raises(InvalidParameters):
        degenerate_torus([])
    with pytest.raises(InvalidParameters):
        degenerate_torus([0.1], FamilySpec(tree=GENUS_TWO_TREE, genus=2))
    with pytest.raises(InvalidParameters):
        degenerate_torus([0.1, 0.2, 0.4])
    with pytest.raises(InvalidParameters):
        degenerate_torus([0.2, 0.2])
    with pytest.raises(ValidationError):
        degenerate_torus([2.0])
