"""On-disk formats: immersion / atlas JSON, CSV tables, graph JSON + DOT.

JSON is written with sorted keys and fixed float formatting so that the same
inputs produce byte-identical files.
"""
import csv
import json
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from geometry import Atlas, AtlasChart, DiscreteImmersion, Surface, as_atlas
from models import BubbleGraph, ChartGrid, FamilySpec, PipelineConfig
from moebius import MoebiusMap
from varifold import Varifold2

logger = logging.getLogger("willmore_lab.storage")

PathLike = Union[str, Path]
MEMBER_PATTERN = re.compile(r"member_k(-?\d+)\.json$")


def _write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def dump_json(payload, path: PathLike) -> Path:
    return _write_text(path, json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=False) + "\n")


def load_json(path: PathLike):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _array(a: np.ndarray) -> list:
    return np.round(np.asarray(a, dtype=float), 15).tolist()


# ---------------------------------------------------------------- immersions

def _chart_payload(chart: AtlasChart) -> dict:
    imm = chart.immersion
    return {
        "name": imm.name,
        "role": chart.role,
        "chart": imm.chart.model_dump(mode="json"),
        "positions": _array(imm.positions),
        "partition": _array(chart.partition),
    }


def _stored_weight(partition: np.ndarray):
    def weight(U, V, P):
        return partition
    return weight


def _chart_from_payload(payload: dict) -> AtlasChart:
    grid = ChartGrid.model_validate(payload["chart"])
    imm = DiscreteImmersion(chart=grid, positions=np.asarray(payload["positions"], dtype=float),
                            name=payload.get("name", ""))
    partition = np.asarray(payload["partition"], dtype=float)
    return AtlasChart(immersion=imm, weight=_stored_weight(partition), role=payload.get("role", ""))


def save_surface(surface: Surface, path: PathLike) -> Path:
    """Positions and partition weights of every chart; derivatives are not stored."""
    atlas = as_atlas(surface)
    payload = {"name": atlas.name, "genus": atlas.genus, "charts": [_chart_payload(c) for c in atlas.charts]}
    return dump_json(payload, path)


def load_surface(path: PathLike) -> Atlas:
    payload = load_json(path)
    charts = [_chart_from_payload(c) for c in payload["charts"]]
    return Atlas(charts=charts, genus=int(payload.get("genus", 0)), name=payload.get("name", ""))


def save_family(members: Mapping[int, Surface], directory: PathLike, spec: Optional[FamilySpec] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, member in sorted(members.items()):
        save_surface(member, directory / f"member_k{k}.json")
    if spec is not None:
        _write_text(directory / "spec.json", spec.model_dump_json(indent=1) + "\n")
    logger.info("saved %d members to %s", len(members), directory)
    return directory


def load_family(directory: PathLike) -> Dict[int, Atlas]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such family directory: {directory}")
    members = {}
    for path in sorted(directory.iterdir()):
        match = MEMBER_PATTERN.match(path.name)
        if match:
            members[int(match.group(1))] = load_surface(path)
    if not members:
        raise FileNotFoundError(f"{directory} holds no member_k*.json files")
    return members


def load_family_spec(directory: PathLike) -> Optional[FamilySpec]:
    path = Path(directory) / "spec.json"
    if not path.is_file():
        return None
    return FamilySpec.model_validate_json(path.read_text(encoding="utf-8"))


def write_field_csv(imm: DiscreteImmersion, path: PathLike) -> Path:
    """Per-node dump: chart coordinates, position, normal, H, |II|^2, area element."""
    f = imm.fields
    U, V = imm.chart.mesh()
    rows = []
    for idx in np.ndindex(*imm.chart.resolution):
        rows.append({
            "u": U[idx], "v": V[idx],
            "x": imm.positions[idx][0], "y": imm.positions[idx][1], "z": imm.positions[idx][2],
            "nx": f.normal[idx][0], "ny": f.normal[idx][1], "nz": f.normal[idx][2],
            "H": f.scalar_mean_curvature[idx], "II2": f.second_fundamental_norm2[idx],
            "area_element": f.area_element[idx],
        })
    return write_csv(rows, path)


# ---------------------------------------------------------------- tables

def _row(record) -> dict:
    if isinstance(record, BaseModel):
        return record.model_dump(mode="json")
    return dict(record)


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, sort_keys=True, ensure_ascii=False)
    return value


def write_csv(records: Iterable, path: PathLike, fieldnames: Optional[Sequence[str]] = None) -> Path:
    rows = [_row(r) for r in records]
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
    logger.debug("wrote %d rows to %s", len(rows), path)
    return path


def read_csv(path: PathLike) -> List[dict]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def write_varifold_csv(mu: Varifold2, path: PathLike) -> Path:
    rows = []
    for i in range(len(mu)):
        row = {"x": mu.points[i, 0], "y": mu.points[i, 1], "z": mu.points[i, 2],
               "nx": mu.normals[i, 0], "ny": mu.normals[i, 1], "nz": mu.normals[i, 2],
               "weight": mu.weights[i], "density": int(mu.density[i])}
        if mu.H is not None:
            row.update({"Hx": mu.H[i, 0], "Hy": mu.H[i, 1], "Hz": mu.H[i, 2]})
        rows.append(row)
    return write_csv(rows, path)


def read_varifold_csv(path: PathLike) -> Varifold2:
    """Atoms written by write_varifold_csv; H columns are optional."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    rows = read_csv(path)
    if not rows:
        raise ValueError(f"{path} holds no atoms")

    def column(*names: str) -> np.ndarray:
        return np.array([[float(r[n]) for n in names] for r in rows])

    with_h = all(r.get("Hx") not in (None, "") for r in rows)
    return Varifold2(points=column("x", "y", "z"), normals=column("nx", "ny", "nz"),
                     weights=column("weight")[:, 0],
                     density=np.array([int(r["density"]) for r in rows]),
                     H=column("Hx", "Hy", "Hz") if with_h else None)


# ---------------------------------------------------------------- graphs and maps

def write_graph(G: BubbleGraph, directory: PathLike, stem: str = "graph") -> Path:
    directory = Path(directory)
    _write_text(directory / f"{stem}.json", json.dumps(G.model_dump(mode="json"), sort_keys=True, indent=1,
                                                       ensure_ascii=False) + "\n")
    _write_text(directory / f"{stem}.dot", graph_dot(G))
    return directory / f"{stem}.json"


def read_graph(path: PathLike) -> BubbleGraph:
    return BubbleGraph.model_validate(load_json(path))


def graph_dot(G: BubbleGraph) -> str:
    """GraphViz edge list, one node per vertex labelled with its kind and class."""
    shapes = {"conc": "doublecircle", "thick": "box", "thin": "ellipse"}
    lines = ["digraph bubble_tree {"]
    for v in G.vertices:
        lines.append(f'  "{v.id}" [shape={shapes[v.kind]}, label="{v.id}\\n{v.kind} {v.limit_class}"];')
    for e in G.edges:
        lines.append(f'  "{e.tail}" -> "{e.head}" [label="{e.q1}:{e.q2} m={e.m}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_moebius(m: MoebiusMap, path: PathLike) -> Path:
    return _write_text(path, m.model_dump_json(indent=1) + "\n")


def read_moebius(path: PathLike) -> MoebiusMap:
    return MoebiusMap.model_validate(load_json(path))


# ---------------------------------------------------------------- configuration

def load_config(path: PathLike) -> PipelineConfig:
    """PipelineConfig from JSON or from a KEY=value text file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such config file: {path}")
    if path.suffix == ".json":
        return PipelineConfig(**load_json(path))
    return PipelineConfig(_env_file=str(path))
