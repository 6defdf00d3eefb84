import json

import pytest

import storage
from harness import inversion_centers
from main import EXIT_ERROR, EXIT_OK, main
from models import FamilySpec
from synthesizer import ground_truth_graph
from .utils import *


@pytest.fixture
def sphere_file(tmp_path):
    path = tmp_path / "sphere.json"
    assert main(["model", "emit", "--kind", "S", "--out", str(path)]) == EXIT_OK
    return path


def test_model_emit(sphere_file, capsys):
    assert sphere_file.is_file()
    assert capsys.readouterr().out.startswith("S: W=")


def test_measure_surface(sphere_file, tmp_path):
    out = tmp_path / "measure.csv"
    assert main(["measure", str(sphere_file), "--out", str(out)]) == EXIT_OK
    row = storage.read_csv(out)[0]
    assert row["name"] == "sphere"
    assert float(row["W"]) == pytest.approx(FOUR_PI, rel=2e-2)


def test_varifold_probe(sphere_file, capsys):
    assert main(["varifold", str(sphere_file), "--point", "0", "0", "1"]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    assert "density=" in line and "li_yau_gap=" in line


def test_varifold_reads_dumped_atoms(sphere_file, tmp_path, capsys):
    atoms = tmp_path / "atoms.csv"
    assert main(["varifold", str(sphere_file), "--point", "0", "0", "1", "--dump", str(atoms)]) == EXIT_OK
    first = capsys.readouterr().out.strip()
    assert main(["varifold", str(atoms), "--point", "0", "0", "1"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == first


def test_synth_writes_family(tmp_path):
    out = tmp_path / "family"
    code = main(["synth", "--genus", "1", "--k-min", "0", "--k-max", "1", "--resolution", "16", "--out", str(out)])
    assert code == EXIT_OK
    for name in ("member_k0.json", "member_k1.json", "spec.json", "ground_truth.json", "ground_truth.dot"):
        assert (out / name).is_file()
    assert storage.load_family_spec(out).resolution == 16


def test_synth_torus_lengths(tmp_path):
    out = tmp_path / "torus"
    assert main(["synth", "--torus-lengths", "0.4", "0.2", "--out", str(out)]) == EXIT_OK
    rows = storage.read_csv(out / "moduli.csv")
    assert len(rows) == 2
    assert float(rows[1]["im"]) > float(rows[0]["im"])
    assert float(rows[1]["target_im"]) > float(rows[0]["target_im"])
    assert main(["synth", "--torus-lengths", "0.2", "0.4", "--out", str(tmp_path / "bad")]) == EXIT_ERROR


def test_invert_type(tmp_path, capsys):
    spec = FamilySpec(tree=GENUS_TWO_TREE, genus=2)
    G = ground_truth_graph(spec)
    graph_path = storage.write_graph(G, tmp_path)
    centers = {str(k): list(p) for k, p in inversion_centers(G, spec.tree, 2).items()}
    (tmp_path / "centers.json").write_text(json.dumps(centers), encoding="utf-8")
    assert main(["invert-type", str(graph_path), str(tmp_path / "centers.json")]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("type 2")


def test_errors_exit_with_two(tmp_path, capsys):
    assert main(["measure", str(tmp_path / "missing.json")]) == EXIT_ERROR
    assert main(["analyze", str(tmp_path / "missing")]) == EXIT_ERROR
    assert main(["pipeline", "--input", str(tmp_path / "missing"), "--out", str(tmp_path / "out")]) == EXIT_ERROR
    assert "stage 'synthesize' failed" in capsys.readouterr().err

    bad = tmp_path / "bad.env"
    bad.write_text("PIPELINE_EPSILON=10\n", encoding="utf-8")
    assert main(["pipeline", "--config", str(bad)]) == EXIT_ERROR
    assert main(["model", "emit", "--kind", "S", "--scale", "-1", "--out", str(tmp_path / "x.json")]) == EXIT_ERROR


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
