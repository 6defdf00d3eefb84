"""Pipeline orchestration: synthesize -> measure -> normalize -> detect -> verify.

Every stage runs inside :func:`stage`, which turns any failure into
:class:`StageFailed` naming the stage. Outputs of finished stages are written
before the next stage starts.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError
from scipy.stats import linregress

import storage
from bubble_graph import (center_behavior, check_scale_order, classify_inversion_type, count_catenoids,
                          double_tree_check, isomorphic, matched_isomorphism, thick_id)
from detector import extract_graph
from errors import StageFailed, WillmoreLabError
from geometry import Surface, as_atlas, functionals, gauss_bonnet_residual, volume, willmore_energy
from model_surfaces import clifford_torus, ic_kind, make_model
from models import (BubbleGraph, CheckResult, FamilySpec, Functionals, ModelKind, ModelTag, PipelineConfig,
                    TreeSpec, Vec3)
from moebius import apply_surface, normalizing_map
from settings import get_settings
from synthesizer import (MAX_NECK_ALPHA, Family, build_member, ground_truth_graph, layout_member,
                         macroscopic_bubbles, macroscopic_functional_sum, neck_contribution, star_tree)
from varifold import from_immersion, li_yau_gap, monotonicity_residual

logger = logging.getLogger("willmore_lab.harness")

ROUND_TRIP_EPSILONS = (0.5, 2.0)
SIGNED_VOLUME_TOLERANCE = 1e-2
NECK_DECAY_EXPONENT = 1.8

# genus two, depth two: r -> (a -> (c1, c2), c3)
GENUS_TWO_TREE = TreeSpec(parent={"r": None, "a": "r", "c1": "a", "c2": "a", "c3": "r"})


@contextmanager
def stage(name: str):
    logger.info("stage %s: start", name)
    try:
        yield
    except StageFailed:
        raise
    except (WillmoreLabError, ValidationError, ValueError, OSError, KeyError) as exc:
        logger.error("stage %s failed: %s", name, getattr(exc, "detail", exc))
        raise StageFailed(name, exc) from exc
    logger.info("stage %s: done", name)


def parallel_map(fn: Callable, arguments: Sequence[tuple], workers: Optional[int] = None) -> list:
    """Ordered ``fn(*args)`` over ``arguments``, in a process pool when more than one worker is configured."""
    workers = workers or get_settings().workers
    if workers <= 1 or len(arguments) <= 1:
        return [fn(*args) for args in arguments]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*arguments)))


def member_functionals(spec: FamilySpec, k: int) -> Functionals:
    """Worker entry point: rebuild member k and measure it."""
    return functionals(build_member(spec, k))


def check(name: str, measured: float, target: float, tolerance: float, relative: bool = False,
          detail: str = "") -> CheckResult:
    bound = tolerance * abs(target) if relative else tolerance
    passed = bool(np.isfinite(measured)) and abs(measured - target) <= bound
    if not passed:
        logger.warning("check %s missed: measured %.6g, target %.6g +- %.3g", name, measured, target, bound)
    return CheckResult(name=name, measured=float(measured), target=float(target), tolerance=float(bound),
                       passed=passed, detail=detail)


def at_least(name: str, measured: float, bound: float, detail: str = "") -> CheckResult:
    passed = bool(np.isfinite(measured)) and measured >= bound
    if not passed:
        logger.warning("check %s missed: measured %.6g below %.6g", name, measured, bound)
    return CheckResult(name=name, measured=float(measured), target=float(bound), tolerance=0.0, passed=passed,
                       detail=detail or "measured >= target")


def flag(name: str, ok: bool, detail: str = "") -> CheckResult:
    if not ok:
        logger.warning("check %s failed: %s", name, detail)
    return CheckResult(name=name, measured=float(ok), target=1.0, tolerance=0.0, passed=bool(ok), detail=detail)


# ---------------------------------------------------------------- currents

def signed_volume_current_check(surfaces: Iterable[Surface]) -> float:
    """Sum of algebraic volumes; opposite orientations cancel."""
    return math.fsum(volume(s) for s in surfaces)


# ---------------------------------------------------------------- inversion typing

def _perpendicular(axis: Sequence[float]) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    trial = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e = trial - (trial @ a) * a
    return e / np.linalg.norm(e)


def inversion_centers(G: BubbleGraph, tree: TreeSpec, kind: int) -> Dict[int, Vec3]:
    """Center sequences p_k realising the four inversion types on a ground-truth graph.

    1 and 2 sit at fixed rescaled offsets from the first leaf, off and on its
    catenoid; 3 sits near the centre of the root plane; 4 approaches the
    first leaf on the intermediate scale sqrt(s_parent s_leaf), so it ends at
    a puncture of every plane while escaping the leaf.
    """
    leaf = tree.leaves()[0]
    cat = G.vertex(leaf)
    axis = np.asarray(cat.axis or (0.0, 0.0, 1.0))
    ks = sorted(cat.scales)
    out: Dict[int, Vec3] = {}
    for k in ks:
        y, s = np.asarray(cat.positions[k]), cat.scales[k]
        if kind == 1:
            p = y + s * 3.0 * axis
        elif kind == 2:
            p = y + s * (math.cosh(0.5) * _perpendicular(axis) + 0.5 * axis)
        elif kind == 3:
            root = G.vertex(thick_id(tree.root, 1))
            p = np.asarray(root.positions[k]) + 0.1 * root.scales[k] * _perpendicular(root.axis or (0.0, 0.0, 1.0))
        elif kind == 4:
            parent = G.vertex(thick_id(tree.parent[leaf], 1))
            p = y + math.sqrt(parent.scales[k] * s) * _perpendicular(parent.axis or (0.0, 0.0, 1.0))
        else:
            raise ValueError(f"unknown inversion type {kind}")
        out[k] = tuple(float(c) for c in p)
    return out


def inversion_type_checks(spec: Optional[FamilySpec] = None) -> List[CheckResult]:
    spec = spec or FamilySpec(tree=GENUS_TWO_TREE, genus=2)
    G = ground_truth_graph(spec)
    results = []
    for kind in (1, 2, 3, 4):
        found = classify_inversion_type(G, center_behavior(G, inversion_centers(G, spec.tree, kind)))
        results.append(check(f"inversion_type_{kind}", found, kind, 0.0))
    return results


# ---------------------------------------------------------------- model checks

def model_checks() -> List[CheckResult]:
    """Closed-form functionals of the bubble models and Gauss-Bonnet."""
    results = []
    sphere = make_model(ModelKind(tag=ModelTag.S))
    W_s = willmore_energy(sphere)
    results.append(check("model_W_sphere", W_s, 4 * math.pi, 1e-3, relative=True))
    results.append(check("model_W_catenoid", willmore_energy(make_model(ModelKind(tag=ModelTag.C))), 0.0, 1e-6))
    results.append(check("model_W_IC1", willmore_energy(make_model(ic_kind(ModelTag.IC1))), 4 * math.pi, 5e-3,
                         relative=True))
    results.append(check("model_W_IC2", willmore_energy(make_model(ic_kind(ModelTag.IC2))), 8 * math.pi, 5e-3,
                         relative=True))
    f = functionals(sphere)
    results.append(check("gauss_bonnet_sphere", gauss_bonnet_residual(sphere) / f.E, 0.0, 1e-2))
    torus = clifford_torus()
    E_t = functionals(torus).E
    results.append(check("gauss_bonnet_clifford", gauss_bonnet_residual(torus) / E_t, 0.0, 1e-2))
    mu = from_immersion(sphere)
    W_mu = mu.willmore()
    for label, x0 in (("center", (0.0, 0.0, 0.0)), ("surface", (1.0, 0.0, 0.0))):
        mono = monotonicity_residual(mu, x0)
        results.append(check(f"monotonicity_sphere_{label}", mono.residual / (W_mu / 4), 0.0, 2e-2))
        results.append(at_least(f"li_yau_sphere_{label}", li_yau_gap(mu, x0), -0.05))
    return results


# ---------------------------------------------------------------- report

class EnergyRow(BaseModel):
    k: int
    W: float
    E: float
    A: float
    V: float
    M: float
    I: float
    T: float
    willmore_gap: float
    dirichlet_gap: float


class PipelineReport(BaseModel):
    config: dict
    seed: int
    spec: Optional[FamilySpec] = None
    energies: List[EnergyRow] = []
    ground_truth: Optional[BubbleGraph] = None
    detected: Optional[BubbleGraph] = None
    normalization: Optional[dict] = None
    checks: List[CheckResult] = []

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)


def write_report(report: PipelineReport, directory: Union[str, Path],
                 formats: Sequence[str] = ("json", "csv", "dot")) -> Path:
    directory = Path(directory)
    if "json" in formats:
        storage.dump_json(report.model_dump(mode="json"), directory / "report.json")
    if "csv" in formats:
        storage.write_csv(report.energies, directory / "energies.csv", fieldnames=list(EnergyRow.model_fields))
        storage.write_csv(report.checks, directory / "checks.csv", fieldnames=list(CheckResult.model_fields))
    if "dot" in formats:
        for stem, graph in (("ground_truth", report.ground_truth), ("graph", report.detected)):
            if graph is not None:
                storage.write_graph(graph, directory, stem)
    return directory


def _energy_rows(measured: Mapping[int, Functionals], genus: int) -> List[EnergyRow]:
    rows = []
    for k, f in sorted(measured.items()):
        rows.append(EnergyRow(k=k, W=f.W, E=f.E, A=f.A, V=f.V, M=f.M, I=f.I, T=f.T,
                              willmore_gap=f.W - 8 * math.pi, dirichlet_gap=f.E - 8 * math.pi * (genus + 3)))
    return rows


def _energy_checks(rows: List[EnergyRow], genus: int, tolerance: float) -> List[CheckResult]:
    last = rows[-1]
    results = [
        check("willmore_8pi", last.W, 8 * math.pi, tolerance, relative=True, detail=f"k={last.k}"),
        check("dirichlet_(p+3)8pi", last.E, 8 * math.pi * (genus + 3), tolerance, relative=True,
              detail=f"k={last.k}"),
    ]
    gaps = [abs(r.willmore_gap) for r in rows[1:]]
    violations = sum(1 for a, b in zip(gaps[:-1], gaps[1:]) if b > a)
    results.append(check("willmore_gap_monotone", violations, 0, 0.0, detail="violations after the first two k"))
    return results


def edge_slope_deviation(detected: BubbleGraph, truth: BubbleGraph) -> Optional[float]:
    """Worst relative deviation of per-edge log-scale slopes, edges paired by
    the matched isomorphism; None when the graphs are not isomorphic."""
    mapping = matched_isomorphism(detected, truth)
    if mapping is None:
        return None
    theirs = {(o.tail, o.head): o.slope for o in check_scale_order(truth)}
    worst = 0.0
    for o in check_scale_order(detected):
        b = theirs[(mapping[o.tail], mapping[o.head])]
        worst = max(worst, abs(o.slope - b) / max(abs(b), 1e-12))
    return worst


def _detector_checks(members: Mapping[int, Surface], truth: Optional[BubbleGraph], genus: int,
                     config: PipelineConfig) -> Tuple[BubbleGraph, List[CheckResult]]:
    detected = extract_graph(members, config.epsilon)
    results = [check("catenoid_count", count_catenoids(detected), genus + 1, 0.0)]
    try:
        double_tree_check(detected, genus, slope_tolerance=config.slope_tolerance)
        results.append(flag("double_tree", True))
    except WillmoreLabError as exc:
        results.append(flag("double_tree", False, exc.detail))
    for eps in ROUND_TRIP_EPSILONS:
        G = detected if eps == config.epsilon else extract_graph(members, eps)
        reference = truth if truth is not None else detected
        results.append(flag(f"round_trip_eps_{eps}", isomorphic(G, reference)))
    if truth is not None:
        worst = edge_slope_deviation(detected, truth)
        if worst is not None:
            results.append(check("edge_scale_slopes", worst, 0.0, config.slope_tolerance,
                                 detail="max relative deviation of per-edge log-scale slopes"))
        else:
            results.append(flag("edge_scale_slopes", False, "detected graph is not isomorphic to the ground truth"))
    return detected, results


def _neck_decay_checks(family: Family) -> List[CheckResult]:
    """k-exponent of the neck area below the thick vertices of copy 1."""
    ks = sorted(family.members)
    growth = family.spec.root_growth
    exponents = []
    for edge in family.graph.edges:
        tail = family.graph.vertex(edge.tail)
        if tail.kind != "thick" or tail.copy_index != 1:
            continue
        areas = [neck_contribution(family, k, edge, MAX_NECK_ALPHA).A for k in ks]
        fit = linregress(ks, np.log(areas))
        exponents.append(-fit.slope / math.log(growth))
        logger.debug("neck %s->%s area exponent %.3f", edge.tail, edge.head, exponents[-1])
    if not exponents:
        return []
    return [at_least("neck_area_decay", min(exponents), NECK_DECAY_EXPONENT,
                     detail=f"area ~ {growth}^(-exponent k), worst edge")]


def _current_checks(family: Family, config: PipelineConfig) -> List[CheckResult]:
    spec = family.spec
    spheres = macroscopic_bubbles(spec)
    target = 0.0 if spec.configuration == "coincident" else 8 * math.pi / 3 * spec.sphere_radius ** 3
    results = [check("signed_volume", signed_volume_current_check(spheres), target, SIGNED_VOLUME_TOLERANCE)]
    rows = macroscopic_functional_sum(family)
    last = max(r.k for r in rows)
    for r in rows:
        if r.k == last:
            results.append(check(f"macroscopic_{r.name}", r.gap, 0.0, config.functional_tolerance,
                                 detail=f"measured {r.measured:.6g}, sum over spheres {r.macroscopic:.6g}"))
    if spec.configuration == "tangent":
        final = {r.name: r.measured for r in rows if r.k == last}
        results.append(check("normalized_total_mean_curvature", final["M"] / math.sqrt(final["A"]),
                             math.sqrt(8 * math.pi), 1e-2, relative=True))
    return results


def _normalize(member: Surface, truth: Optional[BubbleGraph], W: float, seed: int,
               tolerance: float) -> Tuple[dict, CheckResult]:
    """Normalizing inversion pair anchored at the first concentration sphere."""
    atlas = as_atlas(member)
    samples = np.concatenate([c.immersion.positions.reshape(-1, 3) for c in atlas.charts])
    scale, position = 1.0, samples.mean(axis=0)
    if truth is not None:
        sphere = next(v for v in truth.vertices if v.kind == "conc")
        k = max(sphere.scales)
        scale, position = sphere.scales[k], sphere.positions[k]
    norm = normalizing_map(samples, scale, position, (0.0, 0.0, 0.0), seed=seed)
    W_image = willmore_energy(apply_surface(norm.map, atlas))
    payload = {"map": norm.map.model_dump(mode="json"),
               "first_center": [float(c) for c in norm.first_center],
               "second_center": [float(c) for c in norm.second_center],
               "willmore": W, "willmore_normalized": W_image}
    return payload, check("normalized_willmore", W_image, W, tolerance, relative=True)


def _resolve_source(config: PipelineConfig, source: Union[FamilySpec, str, Path]):
    """(spec, family, members) from a FamilySpec or a family directory."""
    if isinstance(source, FamilySpec):
        spec = FamilySpec.model_validate({**source.model_dump(), "resolution": max(config.resolution, 16),
                                          "k_range": (config.k_min, config.k_max)})
        layouts = {k: layout_member(spec, k) for k in spec.ks()}
        members = {k: build_member(spec, k, layouts[k]) for k in spec.ks()}
        return spec, Family(spec=spec, members=members, layouts=layouts,
                            graph=ground_truth_graph(spec, layouts)), members
    members = storage.load_family(source)
    spec = storage.load_family_spec(source)
    family = None
    if spec is not None:
        layouts = {k: layout_member(spec, k) for k in members}
        family = Family(spec=spec, members=members, layouts=layouts, graph=ground_truth_graph(spec, layouts))
    return spec, family, members


def run_pipeline(config: PipelineConfig, source: Union[FamilySpec, str, Path],
                 output_dir: Optional[Union[str, Path]] = None, include_models: bool = True) -> PipelineReport:
    """Run every stage and write the report bundle; raises StageFailed on the first failing stage."""
    out = Path(output_dir or config.output_dir)
    report = PipelineReport(config=config.model_dump(mode="json"), seed=config.seed)
    storage.dump_json(report.config, out / "config.json")

    with stage("synthesize"):
        spec, family, members = _resolve_source(config, source)
        report.spec = spec
        report.ground_truth = family.graph if family is not None else None
        genus = spec.genus if spec is not None else next(iter(members.values())).genus
        if report.ground_truth is not None:
            storage.write_graph(report.ground_truth, out, "ground_truth")

    with stage("measure"):
        ks = sorted(members)
        if isinstance(source, FamilySpec):
            measured = dict(zip(ks, parallel_map(member_functionals, [(spec, k) for k in ks])))
        else:
            measured = {k: functionals(members[k]) for k in ks}
        report.energies = _energy_rows(measured, genus)
        report.checks.extend(_energy_checks(report.energies, genus, config.energy_tolerance))
        write_report(report, out, formats=("csv",))

    with stage("normalize"):
        payload, result = _normalize(members[ks[-1]], report.ground_truth, measured[ks[-1]].W, config.seed,
                                     config.functional_tolerance)
        report.normalization = payload
        report.checks.append(result)
        storage.dump_json(payload, out / "normalization.json")

    with stage("detect"):
        detected, results = _detector_checks(members, report.ground_truth, genus, config)
        report.detected = detected
        report.checks.extend(results)
        storage.write_graph(detected, out, "graph")

    with stage("verify"):
        if family is not None:
            report.checks.extend(_neck_decay_checks(family))
            report.checks.extend(_current_checks(family, config))
        else:
            logger.warning("no family spec next to the members; neck and macroscopic checks skipped")
        report.checks.extend(inversion_type_checks())
        if include_models:
            report.checks.extend(model_checks())

    write_report(report, out)
    logger.info("pipeline finished: %d/%d checks passed", sum(c.passed for c in report.checks), len(report.checks))
    return report


def default_family_spec(genus: int = 1, configuration: str = "coincident") -> FamilySpec:
    tree = star_tree(genus) if genus != 2 or configuration == "tangent" else GENUS_TWO_TREE
    return FamilySpec(tree=tree, genus=genus, configuration=configuration)
