import math

import pytest
from pydantic import ValidationError

import storage
from bubble_graph import isomorphic, matched_isomorphism
from errors import InvalidParameters, StageFailed
from harness import (check, default_family_spec, edge_slope_deviation, inversion_centers, inversion_type_checks,
                     model_checks, run_pipeline, signed_volume_current_check, stage)
from models import BubbleGraph, FamilySpec, PipelineConfig
from synthesizer import ground_truth_graph, macroscopic_bubbles, star_tree
from .utils import *


def test_stage_wraps_errors():
    with pytest.raises(StageFailed) as info:
        with stage("detect"):
            raise InvalidParameters("bad epsilon")
    assert info.value.stage == "detect"
    assert isinstance(info.value.error, InvalidParameters)
    assert "detect" in info.value.detail and "bad epsilon" in info.value.detail


def test_stage_leaves_programming_errors_alone():
    with pytest.raises(RuntimeError):
        with stage("measure"):
            raise RuntimeError("boom")


def test_check_tolerances():
    assert check("abs", 1.05, 1.0, 0.1).passed
    assert not check("abs", 1.2, 1.0, 0.1).passed
    assert check("rel", 105.0, 100.0, 0.1, relative=True).passed
    assert not check("nan", float("nan"), 0.0, 1.0).passed


def test_signed_volume_of_coincident_spheres(genus_one_spec):
    assert signed_volume_current_check(macroscopic_bubbles(genus_one_spec)) == pytest.approx(0.0, abs=1e-2)


def test_signed_volume_of_tangent_spheres():
    spec = FamilySpec(tree=star_tree(1), genus=1, configuration="tangent")
    assert signed_volume_current_check(macroscopic_bubbles(spec)) == pytest.approx(8 * math.pi / 3, abs=1e-2)


def test_inversion_centers_reject_unknown_type():
    spec = FamilySpec(tree=GENUS_TWO_TREE, genus=2)
    G = ground_truth_graph(spec)
    assert set(inversion_centers(G, spec.tree, 1)) == set(spec.ks())
    with pytest.raises(ValueError):
        inversion_centers(G, spec.tree, 5)


def test_inversion_type_checks_pass():
    results = inversion_type_checks()
    assert [r.name for r in results] == [f"inversion_type_{t}" for t in (1, 2, 3, 4)]
    assert all(r.passed for r in results)


def test_model_checks_pass():
    results = model_checks()
    failed = [r.name for r in results if not r.passed]
    assert failed == []


def test_default_family_spec():
    assert default_family_spec(1).tree.leaves() == ["c1", "c2"]
    assert default_family_spec(2).tree == GENUS_TWO_TREE
    tangent = default_family_spec(2, "tangent").tree
    assert all(tangent.depth(leaf) == 1 for leaf in tangent.leaves())


def test_pipeline_genus_one(pipeline_config, tmp_path):
    out = tmp_path / "run"
    report = run_pipeline(pipeline_config, default_family_spec(1), out, include_models=False)
    failed = [(c.name, c.measured, c.target) for c in report.checks if not c.passed]
    assert failed == []
    assert report.passed
    assert isomorphic(report.detected, report.ground_truth)
    for name in ("config.json", "report.json", "energies.csv", "checks.csv", "graph.json", "graph.dot",
                 "ground_truth.json", "normalization.json"):
        assert (out / name).is_file()
    rows = storage.read_csv(out / "energies.csv")
    assert [int(r["k"]) for r in rows] == [0, 1, 2, 3]
    assert isomorphic(storage.read_graph(out / "graph.json"), report.ground_truth)


def test_pipeline_config_validation():
    with pytest.raises(ValidationError):
        PipelineConfig(epsilon=10.0)
    with pytest.raises(ValidationError):
        PipelineConfig(k_min=0, k_max=2)


def test_pipeline_missing_input(pipeline_config, tmp_path):
    with pytest.raises(StageFailed) as info:
        run_pipeline(pipeline_config, tmp_path / "missing", tmp_path / "out")
    assert info.value.stage == "synthesize"
    assert (tmp_path / "out" / "config.json").is_file()


def _leaf_scaled(G, leaf):
    data = G.model_dump()
    for v in data["vertices"]:
        if v["id"] == leaf:
            v["scales"] = {k: s * 2.0 ** k for k, s in v["scales"].items()}
    return BubbleGraph.model_validate(data)


def test_edge_slopes_are_compared_edge_by_edge(genus_one_spec):
    G = ground_truth_graph(genus_one_spec)
    truth = _leaf_scaled(G, "c1")
    swapped = _leaf_scaled(G, "c2")
    assert edge_slope_deviation(truth, truth) == pytest.approx(0.0, abs=1e-12)
    assert edge_slope_deviation(swapped, truth) > 0.1
    mapping = matched_isomorphism(swapped, truth)
    assert mapping["c1"] == "c1" and mapping["c2"] == "c2"
