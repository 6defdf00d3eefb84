import numpy as np
import pytest
from pydantic import ValidationError

import storage
from bubble_graph import from_tree_spec, isomorphic
from geometry import functionals
from moebius import compose, inversion, reflection
from varifold import from_immersion, from_points
from .utils import *


def test_dump_json_is_deterministic(tmp_path):
    payload = {"b": [1.5, 2.0], "a": {"y": "∞", "x": 0}}
    first = storage.dump_json(payload, tmp_path / "one.json").read_bytes()
    second = storage.dump_json(dict(reversed(payload.items())), tmp_path / "two.json").read_bytes()
    assert first == second
    assert storage.load_json(tmp_path / "one.json") == payload


def test_load_json_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        storage.load_json(tmp_path / "nope.json")


def test_surface_round_trip_keeps_functionals(unit_sphere, tmp_path):
    path = storage.save_surface(unit_sphere, tmp_path / "sphere.json")
    loaded = storage.load_surface(path)
    assert [c.immersion.name for c in loaded.charts] == ["sphere_south", "sphere_north"]
    assert np.allclose(loaded.charts[0].partition, unit_sphere.charts[0].partition)
    # finite-difference jets on the reloaded charts
    assert functionals(loaded).W == pytest.approx(FOUR_PI, rel=2e-2)


def test_family_round_trip(genus_one_family, tmp_path):
    members = {k: genus_one_family.members[k] for k in (0, 1)}
    storage.save_family(members, tmp_path / "fam", genus_one_family.spec)
    loaded = storage.load_family(tmp_path / "fam")
    assert sorted(loaded) == [0, 1]
    assert storage.load_family_spec(tmp_path / "fam") == genus_one_family.spec
    assert storage.load_family_spec(tmp_path) is None


def test_load_family_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        storage.load_family(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        storage.load_family(tmp_path / "empty")


def test_csv_round_trip(tmp_path):
    rows = [{"k": 0, "W": 25.1, "tags": ["a", "b"]}, {"k": 1, "W": 25.13}]
    storage.write_csv(rows, tmp_path / "t.csv", fieldnames=["k", "W", "tags"])
    back = storage.read_csv(tmp_path / "t.csv")
    assert [float(r["W"]) for r in back] == [25.1, 25.13]
    assert back[0]["tags"] == '["a", "b"]'
    assert back[1]["tags"] == ""


def test_graph_json_and_dot(tmp_path):
    G = from_tree_spec(star_tree(1), [0, 1, 2, 3])
    path = storage.write_graph(G, tmp_path, "truth")
    again = storage.read_graph(path)
    assert isomorphic(G, again)
    assert again.model_dump() == G.model_dump()
    dot = (tmp_path / "truth.dot").read_text(encoding="utf-8")
    assert dot.startswith("digraph bubble_tree {")
    assert dot.count("->") == len(G.edges)


def test_moebius_round_trip(tmp_path):
    m = compose(inversion((0.1, 0.0, 0.2)), reflection((0, 1, 0)))
    back = storage.read_moebius(storage.write_moebius(m, tmp_path / "m.json"))
    x = rng().normal(size=(10, 3)) + 3.0
    assert np.allclose(back.apply(x), m.apply(x))


def test_config_from_json_and_env_file(tmp_path):
    storage.dump_json({"epsilon": 0.5, "resolution": 32}, tmp_path / "config.json")
    config = storage.load_config(tmp_path / "config.json")
    assert config.epsilon == 0.5
    assert config.resolution == 32

    (tmp_path / "pipeline.env").write_text("PIPELINE_EPSILON=2.0\nPIPELINE_K_MAX=5\n", encoding="utf-8")
    config = storage.load_config(tmp_path / "pipeline.env")
    assert config.epsilon == 2.0
    assert config.k_max == 5


def test_config_rejects_bad_values(tmp_path):
    (tmp_path / "bad.env").write_text("PIPELINE_EPSILON=10\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        storage.load_config(tmp_path / "bad.env")
    with pytest.raises(FileNotFoundError):
        storage.load_config(tmp_path / "absent.env")


def test_varifold_csv_round_trip(unit_sphere, tmp_path):
    mu = from_immersion(unit_sphere, default_density=2)
    back = storage.read_varifold_csv(storage.write_varifold_csv(mu, tmp_path / "atoms.csv"))
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.density, mu.density)
    assert back.mass == pytest.approx(mu.mass, rel=1e-15)
    assert back.willmore() == pytest.approx(FOUR_PI, rel=1e-3)


def test_varifold_csv_without_curvature(unit_sphere, tmp_path):
    full = from_immersion(unit_sphere)
    mu = from_points(full.points[:50], np.ones(50), normals=full.normals[:50])
    back = storage.read_varifold_csv(storage.write_varifold_csv(mu, tmp_path / "cloud.csv"))
    assert back.H is None
    assert len(back) == 50


def test_read_varifold_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        storage.read_varifold_csv(tmp_path / "missing.csv")
    (tmp_path / "empty.csv").write_text("x,y,z,nx,ny,nz,weight,density\n", encoding="utf-8")
    with pytest.raises(ValueError):
        storage.read_varifold_csv(tmp_path / "empty.csv")
