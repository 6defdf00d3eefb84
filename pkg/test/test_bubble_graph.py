import math

import pytest
from pydantic import ValidationError

from bubble_graph import (INFINITY, ROOT_POINT, CenterBehavior, bubble_ascent, bubble_descent, center_behavior,
                          check_scale_order, classify_inversion_type, count_catenoids, double_tree_check,
                          first_betti_number, from_tree_spec, isomorphic, leaf_fixed_isomorphism,
                          normalize_orientation, position_telescoping, to_networkx)
from errors import CycleDetected, InconsistentBehavior, Mismatch, NoIsomorphism, NotDoubleTree
from models import BubbleEdge, BubbleGraph, BubbleVertex, TreeSpec
from synthesizer import star_tree
from .utils import *

KS = [0, 1, 2, 3]
DEPTH_THREE = TreeSpec(parent={"r": None, "a": "r", "x": "r", "b": "a", "y": "a", "c1": "b", "c2": "b"})
STAR_THREE = TreeSpec(parent={"r": None, "c1": "r", "c2": "r", "c3": "r"})


@pytest.fixture
def genus_one_graph():
    return from_tree_spec(star_tree(1), KS)


@pytest.fixture
def genus_two_graph():
    return from_tree_spec(GENUS_TWO_TREE, KS)


def _thick(vid, punctures, scale=1.0):
    return BubbleVertex(id=vid, kind="thick", scales={k: scale for k in KS},
                        positions={k: (0.0, 0.0, 0.0) for k in KS}, punctures=punctures)


def test_ground_truth_shape(genus_one_graph):
    kinds = sorted(v.kind for v in genus_one_graph.vertices)
    assert kinds == ["conc", "conc", "thick", "thick", "thin", "thin"]
    assert len(genus_one_graph.edges) == 6
    assert all(e.m == 1 for e in genus_one_graph.edges)
    D = to_networkx(genus_one_graph)
    assert D.out_degree("r@1") == 2
    assert D.nodes["c1"]["limit_class"] == "C"


def test_graph_validation():
    with pytest.raises(ValidationError):
        BubbleEdge(tail="a", head="b", q1="x", q2="y", m=0)
    with pytest.raises(ValidationError):
        BubbleVertex(id="c", kind="thin", scales={0: 1.0}, positions={0: (0.0, 0.0, 0.0)}, punctures=["0"])
    with pytest.raises(ValidationError):
        BubbleVertex(id="v", kind="thick", scales={0: -1.0}, positions={0: (0.0, 0.0, 0.0)})
    a = _thick("A", ["b", INFINITY])
    with pytest.raises(ValidationError):
        BubbleGraph(vertices=[a], edges=[BubbleEdge(tail="A", head="A", q1="b", q2=INFINITY, m=1)], genus=1)
    b = _thick("B", ["a", INFINITY])
    with pytest.raises(ValidationError):
        BubbleGraph(vertices=[a, b], edges=[BubbleEdge(tail="A", head="B", q1="zz", q2=INFINITY, m=1)], genus=1)


def test_tree_spec_validation():
    with pytest.raises(ValidationError):
        TreeSpec(parent={"r": None, "c1": "r"})
    with pytest.raises(ValidationError):
        TreeSpec(parent={"r": None, "a": "r", "c1": "a", "c2": "r"})
    with pytest.raises(ValidationError):
        TreeSpec(parent={"r": None, "s": None, "c1": "r", "c2": "s"})


def test_descent_from_thick_vertex_ends_at_catenoid(genus_one_graph):
    assert bubble_descent(genus_one_graph, "r@1", "c1") == ["r@1", "c1"]
    assert bubble_descent(genus_one_graph, "r@2", "c2") == ["r@2", "c2"]
    assert bubble_descent(genus_one_graph, "S1", ROOT_POINT) == ["S1", "r@1", "c1"]


def test_descent_without_branch_points_is_trivial(genus_one_graph):
    assert bubble_descent(genus_one_graph, "c1", "0") == ["c1"]


def test_descent_depth_matches_tree():
    G = from_tree_spec(DEPTH_THREE, KS)
    path = bubble_descent(G, "r@1", "a")
    assert path == ["r@1", "a@1", "b@1", "c1"]
    assert len(path) - 1 == DEPTH_THREE.depth("c1")
    assert len(set(path)) == len(path)


def test_descent_rejects_unknown_branch_point(genus_one_graph):
    with pytest.raises(ValueError):
        bubble_descent(genus_one_graph, "r@1", "nowhere")


def test_ascent_climbs_to_sphere(genus_one_graph):
    assert bubble_ascent(genus_one_graph, "c1", INFINITY) == ["c1", "r@1", "S1"]
    assert bubble_ascent(genus_one_graph, "c1", "0") == ["c1", "r@2", "S2"]


def test_descent_cycle_detected():
    a, b = _thick("A", ["b", INFINITY]), _thick("B", ["a", INFINITY])
    G = BubbleGraph(vertices=[a, b], genus=1, k_range=KS, edges=[
        BubbleEdge(tail="A", head="B", q1="b", q2=INFINITY, m=1),
        BubbleEdge(tail="B", head="A", q1="a", q2=INFINITY, m=1),
    ])
    with pytest.raises(CycleDetected):
        bubble_descent(G, "A", "b")


def test_normalize_orientation():
    flipped = normalize_orientation([BubbleEdge(tail="A", head="B", q1="b", q2="a", m=-1)])
    assert flipped == [BubbleEdge(tail="B", head="A", q1="a", q2="b", m=1)]


def test_scale_order(genus_one_graph):
    assert all(row.passed for row in check_scale_order(genus_one_graph))
    a, b = _thick("A", ["b", INFINITY]), _thick("B", ["a", INFINITY])
    flat = BubbleGraph(vertices=[a, b], genus=1, k_range=KS,
                       edges=[BubbleEdge(tail="A", head="B", q1="b", q2=INFINITY, m=1)])
    assert not check_scale_order(flat)[0].passed
    big = b.model_copy(update={"scales": {k: 10.0 ** k for k in KS}})
    reversed_edge = BubbleGraph(vertices=[a, big], genus=1, k_range=KS,
                                edges=[BubbleEdge(tail="A", head="B", q1="b", q2=INFINITY, m=1)])
    row = check_scale_order(reversed_edge)[0]
    assert row.slope < 0 and not row.passed
    with pytest.raises(ValueError):
        check_scale_order(from_tree_spec(star_tree(1), [0, 1, 2]))


def test_count_catenoids(genus_one_graph, genus_two_graph):
    assert count_catenoids(genus_one_graph) == 2
    assert count_catenoids(genus_two_graph) == 3
    assert first_betti_number(genus_one_graph) == 1
    assert first_betti_number(genus_two_graph) == 2
    relabelled = [v.model_copy(update={"limit_class": "unclassified"}) if v.id == "c1" else v
                  for v in genus_one_graph.vertices]
    with pytest.raises(Mismatch):
        count_catenoids(genus_one_graph.model_copy(update={"vertices": relabelled}))


@pytest.mark.parametrize("tree", [star_tree(1), star_tree(3), GENUS_TWO_TREE, DEPTH_THREE])
def test_double_tree_recovers_input(tree):
    G = from_tree_spec(tree, KS)
    result = double_tree_check(G, tree.genus)
    assert result.tree.parent == tree.parent
    assert all(result.gamma[n] == n for n in tree.parent)


def test_double_tree_failure_clauses(genus_one_graph):
    with pytest.raises(NotDoubleTree) as exc:
        double_tree_check(genus_one_graph, 2)
    assert exc.value.clause == "catenoid_count"

    one_sided = genus_one_graph.model_copy(update={
        "edges": [e for e in genus_one_graph.edges if not (e.tail == "r@2" and e.head == "c1")]})
    with pytest.raises(NotDoubleTree) as exc:
        double_tree_check(one_sided, 1)
    assert exc.value.clause == "leaves_shared"

    no_second_sphere = BubbleGraph(
        vertices=[v for v in genus_one_graph.vertices if v.id != "S2"],
        edges=[e for e in genus_one_graph.edges if e.tail != "S2"], genus=1, k_range=KS)
    with pytest.raises(NotDoubleTree) as exc:
        double_tree_check(no_second_sphere, 1)
    assert exc.value.clause == "sphere_vertices"


def test_double_tree_rejects_non_isomorphic_copies(genus_two_graph):
    star = from_tree_spec(STAR_THREE, KS)
    second = {"S2", "r@2", "a@2"}
    G = BubbleGraph(
        vertices=[v for v in genus_two_graph.vertices if v.id not in second]
        + [v for v in star.vertices if v.copy_index == 2],
        edges=[e for e in genus_two_graph.edges if e.tail not in second and e.head not in second]
        + [e for e in star.edges if e.tail in {"S2", "r@2"}],
        genus=2, k_range=KS)
    with pytest.raises(NotDoubleTree) as exc:
        double_tree_check(G, 2)
    assert exc.value.clause == "isomorphism"


def test_double_tree_rejects_scale_disagreement(genus_one_graph):
    vertices = [v.model_copy(update={"scales": {k: 10 * s for k, s in v.scales.items()}}) if v.id == "r@2" else v
                for v in genus_one_graph.vertices]
    with pytest.raises(NotDoubleTree) as exc:
        double_tree_check(genus_one_graph.model_copy(update={"vertices": vertices}), 1)
    assert exc.value.clause == "scale_agreement"


def test_leaf_fixed_isomorphism():
    assert leaf_fixed_isomorphism(GENUS_TWO_TREE, GENUS_TWO_TREE) == {n: n for n in GENUS_TWO_TREE.parent}
    renamed = TreeSpec(parent={"top": None, "mid": "top", "c1": "mid", "c2": "mid", "c3": "top"})
    gamma = leaf_fixed_isomorphism(GENUS_TWO_TREE, renamed)
    assert gamma["r"] == "top" and gamma["a"] == "mid"
    assert all(gamma[c] == c for c in ("c1", "c2", "c3"))
    with pytest.raises(NoIsomorphism):
        leaf_fixed_isomorphism(GENUS_TWO_TREE, STAR_THREE)
    with pytest.raises(NoIsomorphism):
        leaf_fixed_isomorphism(star_tree(1), TreeSpec(parent={"r": None, "d1": "r", "d2": "r"}))


def test_isomorphic(genus_one_graph, genus_two_graph):
    assert isomorphic(genus_one_graph, from_tree_spec(star_tree(1), KS))
    assert not isomorphic(genus_one_graph, genus_two_graph)


def test_position_telescoping(genus_two_graph):
    path = bubble_descent(genus_two_graph, "r@1", "a")
    telescope = position_telescoping(genus_two_graph, path)
    assert telescope.tail < 1e-3
    assert all(b < a for a, b in zip(telescope.differences, telescope.differences[1:]))
    assert len(telescope.offsets) == len(KS)


def test_inversion_type_from_behaviour(genus_one_graph):
    off = CenterBehavior(finite=True, limit=(0.0, 0.0, 0.0), on_image=False, at_puncture=False)
    on = CenterBehavior(finite=True, limit=(1.0, 0.0, 0.0), on_image=True, at_puncture=False)
    away = CenterBehavior(finite=True, limit=(0.0, 0.0, 0.5), on_image=False, at_puncture=False)
    puncture = CenterBehavior(finite=True, limit=(1.0, 0.0, 0.0), on_image=True, at_puncture=True)
    assert classify_inversion_type(genus_one_graph, {"c1": off}) == 1
    assert classify_inversion_type(genus_one_graph, {"c1": on}) == 2
    assert classify_inversion_type(genus_one_graph, {"r@1": away}) == 3
    assert classify_inversion_type(genus_one_graph, {"r@1": puncture}) == 4
    assert classify_inversion_type(genus_one_graph, {}) == 3
    with pytest.raises(InconsistentBehavior):
        classify_inversion_type(genus_one_graph, {"c1": off, "r@1": away})


def test_center_behaviour_near_catenoid_waist(genus_one_graph):
    c1 = genus_one_graph.vertex("c1")
    waist = {k: c1.positions[k] for k in KS}
    behavior = center_behavior(genus_one_graph, waist)
    assert behavior["c1"].finite and not behavior["c1"].on_image
    assert behavior["r@1"].at_puncture
    assert not behavior["c2"].finite
    assert classify_inversion_type(genus_one_graph, behavior) == 1

    offset = (math.cosh(0.5), 0.0, 0.5)
    on_neck = {k: tuple(c1.positions[k][i] + c1.scales[k] * offset[i] for i in range(3)) for k in KS}
    behavior = center_behavior(genus_one_graph, on_neck)
    assert behavior["c1"].on_image
    assert classify_inversion_type(genus_one_graph, behavior) == 2
