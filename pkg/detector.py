"""Bubble-tree detection on raw families of immersions.

Annular charts (log-polar annuli and cylinders) are cut into dyadic rings of
width log 2 in the radial coordinate; rings carrying at least epsilon of
Dirichlet energy form bubble zones, the rest necks. Rectangle charts are
single bubble zones. Zones of different charts are glued where the charts
overlap on the surface, which yields bubble classes (vertices) and neck
classes (edges) for every member; the members are then matched across k.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from errors import AmbiguousOrder, InconsistentAcrossK, InvalidParameters, OutOfRange, Unresolved, ZeroOrder
from geometry import Atlas, AtlasChart, DiscreteImmersion, Surface, as_atlas, conformal_factor
from models import EPSILON_MAX, AnnulusDecomposition, BubbleEdge, BubbleGraph, BubbleVertex, Vec3, Zone
from settings import get_settings

logger = logging.getLogger("willmore_lab.detector")

RING_WIDTH = math.log(2.0)
# partition weight below which a node does not count towards chart overlaps
SUPPORT_WEIGHT = 0.05
NORMAL_AGREEMENT = 0.5
MIN_OVERLAP_NODES = 3
FLAT_CURVATURE = 0.1
AMBIGUITY = 1.2
POSITION_FACTOR = 3.0


def _radial(imm: DiscreteImmersion) -> np.ndarray:
    if imm.chart.domain_kind == "rectangle":
        raise InvalidParameters(f"chart '{imm.name}' is not annular")
    return imm.chart.axis(0)


def _ring_density(imm: DiscreteImmersion) -> np.ndarray:
    """Dirichlet energy per unit of the radial coordinate."""
    f = imm.fields
    return (f.second_fundamental_norm2 * f.area_element).sum(axis=1) * imm.chart.spacing(1)


def _cumulative_energy(imm: DiscreteImmersion) -> Tuple[np.ndarray, np.ndarray]:
    x = _radial(imm)
    return x, cumulative_trapezoid(_ring_density(imm), x, initial=0.0)


def annulus_energy(imm: DiscreteImmersion, r1: float, r2: float) -> float:
    """Dirichlet energy of the Gauss map over the annulus r1 <= r <= r2.

    The radial coordinate is log r on log-polar charts and t = log r on
    cylinders.
    """
    if not 0 < r1 < r2:
        raise OutOfRange(f"annulus radii must satisfy 0 < r1 < r2, got {r1}, {r2}")
    x, cum = _cumulative_energy(imm)
    lo, hi = math.log(r1), math.log(r2)
    slack = 1e-9 * max(1.0, abs(x[0]), abs(x[-1]))
    if lo < x[0] - slack or hi > x[-1] + slack:
        raise OutOfRange(f"annulus [{r1:.4g}, {r2:.4g}] leaves chart '{imm.name}'")
    return float(np.interp(hi, x, cum) - np.interp(lo, x, cum))


@dataclass
class _Run:
    kind: str
    start: int
    stop: int   # exclusive node index


def _zone_runs(imm: DiscreteImmersion, epsilon: float) -> List[_Run]:
    x, cum = _cumulative_energy(imm)
    if imm.chart.spacing(0) > RING_WIDTH / 4:
        raise Unresolved(f"chart '{imm.name}' has fewer than four radial samples per dyadic ring")
    hot = np.zeros(len(x), dtype=bool)
    if x[-1] - x[0] < RING_WIDTH:
        hot[:] = cum[-1] >= epsilon
    else:
        for j in range(len(x)):
            end = x[j] + RING_WIDTH
            if end > x[-1]:
                break
            if np.interp(end, x, cum) - cum[j] >= epsilon:
                hot[(x >= x[j]) & (x <= end)] = True
    runs: List[_Run] = []
    for j, flag in enumerate(hot):
        kind = "bubble" if flag else "neck"
        if runs and runs[-1].kind == kind:
            runs[-1].stop = j + 1
        else:
            runs.append(_Run(kind, j, j + 1))
    # quiet stretches shorter than one ring between two bubbles belong to the bubbles
    merged: List[_Run] = []
    for i, run in enumerate(runs):
        inner = 0 < i < len(runs) - 1
        if run.kind == "neck" and inner and x[run.stop - 1] - x[run.start] < RING_WIDTH:
            run = _Run("bubble", run.start, run.stop)
        if merged and merged[-1].kind == run.kind:
            merged[-1].stop = run.stop
        else:
            merged.append(run)
    return merged


def neck_decomposition(imm: DiscreteImmersion, epsilon: float) -> AnnulusDecomposition:
    """Alternating neck / bubble zones of an annular chart, outermost first."""
    if not 0 < epsilon < EPSILON_MAX:
        raise InvalidParameters(f"epsilon must lie in (0, 8*pi/3), got {epsilon}")
    x, cum = _cumulative_energy(imm)
    runs = _zone_runs(imm, epsilon)
    zones = []
    for run in reversed(runs):
        lo, hi = float(x[run.start]), float(x[run.stop - 1])
        zones.append(Zone(kind=run.kind, lo=lo, hi=hi, energy=float(cum[run.stop - 1] - cum[run.start])))
    radii: List[float] = []
    for z in zones:
        if z.kind == "neck":
            radii.extend([math.exp(z.hi), math.exp(z.lo)])
    neck_index = [i for i, z in enumerate(zones) if z.kind == "neck"]
    gaps = [sum(z.energy for z in zones[a + 1:b]) for a, b in zip(neck_index[:-1], neck_index[1:])]
    logger.debug("chart %s: %d zones, %d necks", imm.name, len(zones), len(neck_index))
    return AnnulusDecomposition(radii=radii, gap_energies=gaps, zones=zones, epsilon=epsilon)


# ---------------------------------------------------------------- neck exponent

@dataclass
class NeckPiece:
    """Radial stretch [lo, hi] of an annular chart; ``outward`` = +1 when the
    radial coordinate grows towards the larger bubble."""
    immersion: DiscreteImmersion
    lo: float
    hi: float
    outward: int = 1


class NeckExponent(BaseModel):
    m: int
    slope: float
    residual: float
    decades: float


def _ring_means(piece: NeckPiece) -> Tuple[np.ndarray, np.ndarray]:
    imm = piece.immersion
    x = _radial(imm)
    lam = conformal_factor(imm, get_settings().tau_conf_detector).mean(axis=1)
    keep = (x >= piece.lo) & (x <= piece.hi)
    return x[keep], lam[keep]


def neck_exponent(pieces: Sequence[NeckPiece], trim: float = 0.125, min_decades: float = 1.5,
                  delta: float = 1.0 / 3.0) -> NeckExponent:
    """Exponent m of a neck from the circle-averaged lambda - x along it.

    ``x`` is the outward radial coordinate of each piece; a common slope is
    fitted with one intercept per piece. A trim of ``trim`` of the neck's
    log-radius span is dropped at both ends before fitting.
    """
    samples = []
    for i, piece in enumerate(pieces):
        x, lam = _ring_means(piece)
        xo = piece.outward * x
        samples.append((i, xo, lam - xo, lam))
    world = np.concatenate([s[3] for s in samples]) if samples else np.array([])
    if world.size < 4:
        raise Unresolved("neck has too few rings")
    lo, hi = float(world.min()), float(world.max())
    span = hi - lo
    cut_lo, cut_hi = lo + trim * span, hi - trim * span
    decades = (cut_hi - cut_lo) / math.log(10.0)
    if decades < min_decades:
        raise Unresolved(f"neck spans {decades:.2f} decades after trimming, {min_decades} needed")
    sxy = sxx = 0.0
    used = 0
    for _, xo, lz, lam in samples:
        keep = (lam >= cut_lo) & (lam <= cut_hi)
        if keep.sum() < 2:
            continue
        xc = xo[keep] - xo[keep].mean()
        yc = lz[keep] - lz[keep].mean()
        sxy += float(xc @ yc)
        sxx += float(xc @ xc)
        used += 1
    if not used or sxx == 0:
        raise Unresolved("no neck piece survives trimming")
    slope = sxy / sxx
    nearest = round(slope)
    residual = abs(slope - nearest)
    if residual > delta:
        raise AmbiguousOrder(f"neck slope {slope:.3f} is {residual:.3f} from an integer")
    m = int(nearest) + 1
    if m == 0:
        raise ZeroOrder(f"neck slope {slope:.3f} gives m = 0")
    return NeckExponent(m=m, slope=slope, residual=residual, decades=decades)


# ---------------------------------------------------------------- classification

class Classification(BaseModel):
    tag: str
    residuals: Dict[str, float]
    curvature: float


@dataclass
class BubblePatch:
    """Nodes of one or more charts making up a bubble zone."""
    parts: List[Tuple[AtlasChart, np.ndarray]]
    scale: float


def _patch_integrals(patch: BubblePatch) -> Tuple[float, float, float]:
    W = E = A = 0.0
    for chart, mask in patch.parts:
        imm = chart.immersion
        f = imm.fields
        w = imm.chart.quadrature_weights() * f.area_element * chart.partition * mask
        W += float((f.scalar_mean_curvature ** 2 * w).sum())
        E += float((f.second_fundamental_norm2 * w).sum())
        A += float(w.sum())
    return W, E, A


def classify_bubble(patch: BubblePatch) -> Classification:
    """Closest model among P, S, C, IC1, IC2 for a scale-normalised patch.

    Flat patches (scale * sqrt(E / A) < 0.1) are planes. Otherwise the
    residuals are the umbilic share int|II°|^2 / int|II|^2 (S), the mean
    curvature share 2 int|H|^2 / int|II|^2 (C) and, for patches that are
    neither, the Willmore defect against 4 pi (IC1) and 8 pi (IC2).
    Two residuals within 20% of each other leave the patch unclassified.
    """
    W, E, A = _patch_integrals(patch)
    if A <= 0:
        raise Unresolved("empty bubble patch")
    curvature = patch.scale * math.sqrt(max(E, 0.0) / A)
    if curvature < FLAT_CURVATURE:
        return Classification(tag="P", residuals={"P": curvature}, curvature=curvature)
    share = min(max(2 * W / E, 0.0), 1.0) if E > 0 else 1.0
    residuals = {"S": 1.0 - share, "C": share}
    if residuals["S"] > 0.1 and residuals["C"] > 0.1:
        residuals["IC1"] = abs(W / (4 * math.pi) - 1)
        residuals["IC2"] = abs(W / (8 * math.pi) - 1)
    ranked = sorted(residuals.items(), key=lambda kv: kv[1])
    (best, r1), (_, r2) = ranked[0], ranked[1]
    tag = "unclassified" if r2 <= AMBIGUITY * r1 + 1e-12 else best
    logger.debug("bubble patch W=%.4f E=%.4f kappa=%.3g -> %s %s", W, E, curvature, tag, residuals)
    return Classification(tag=tag, residuals=residuals, curvature=curvature)


# ---------------------------------------------------------------- zones and overlaps

@dataclass(eq=False)
class _Patch:
    chart: AtlasChart
    kind: str
    start: int
    stop: int
    annular: bool

    @property
    def name(self) -> str:
        return self.chart.immersion.name

    def mask(self) -> np.ndarray:
        m = np.zeros(self.chart.immersion.chart.resolution, dtype=bool)
        m[self.start:self.stop] = True
        return m


def _chart_patches(chart: AtlasChart, epsilon: float) -> List[_Patch]:
    grid = chart.immersion.chart
    if grid.domain_kind == "rectangle":
        return [_Patch(chart, "bubble", 0, grid.resolution[0], annular=False)]
    return [_Patch(chart, r.kind, r.start, r.stop, annular=True) for r in _zone_runs(chart.immersion, epsilon)]


def _cell_size(imm: DiscreteImmersion) -> np.ndarray:
    jet = imm.jet
    return np.maximum(np.linalg.norm(jet.du, axis=-1) * imm.chart.spacing(0),
                      np.linalg.norm(jet.dv, axis=-1) * imm.chart.spacing(1))


@dataclass
class _Support:
    index: np.ndarray      # flat node indices
    points: np.ndarray
    normals: np.ndarray
    cells: np.ndarray
    tree: cKDTree = field(repr=False)


def _support(chart: AtlasChart) -> _Support:
    imm = chart.immersion
    flat = np.flatnonzero(chart.partition.ravel() > SUPPORT_WEIGHT)
    points = imm.positions.reshape(-1, 3)[flat]
    return _Support(index=flat, points=points, normals=imm.fields.normal.reshape(-1, 3)[flat],
                    cells=_cell_size(imm).ravel()[flat], tree=cKDTree(points))


def _close(a: _Support, b: _Support) -> np.ndarray:
    """Nodes of ``a`` lying on ``b`` with agreeing normals."""
    k = min(4, len(b.points))
    dist, idx = b.tree.query(a.points, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    tol = 0.75 * np.maximum(a.cells[:, None], b.cells[idx])
    agree = np.einsum("nk,nmk->nm", a.normals, b.normals[idx]) > NORMAL_AGREEMENT
    return a.index[((dist <= tol) & agree).any(axis=1)]


def _boxes_meet(a: _Support, b: _Support) -> bool:
    pad = max(a.cells.max(), b.cells.max())
    return bool(np.all(a.points.min(axis=0) - pad <= b.points.max(axis=0))
                and np.all(b.points.min(axis=0) - pad <= a.points.max(axis=0)))


def _majority(patches: List[_Patch], flat: np.ndarray, n_angular: int) -> Optional[_Patch]:
    rows = flat // n_angular
    counts = Counter()
    for p in patches:
        counts[id(p)] = int(((rows >= p.start) & (rows < p.stop)).sum())
    best = max(patches, key=lambda p: counts[id(p)])
    return best if counts[id(best)] > 0 else None


class _UnionFind:
    def __init__(self):
        self.parent: Dict[int, int] = {}

    def find(self, a: int) -> int:
        self.parent.setdefault(a, a)
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


# ---------------------------------------------------------------- member structure

class DetectedBubble(BaseModel):
    key: str
    tag: str
    scale: float
    position: Vec3
    axis: Optional[Vec3] = None


class DetectedNeck(BaseModel):
    ends: Tuple[str, str]
    m: int
    # +1 / -1 orientation of the cylinder piece when the neck leaves a catenoid
    cylinder_side: Optional[int] = None


class MemberStructure(BaseModel):
    bubbles: Dict[str, DetectedBubble]
    necks: List[DetectedNeck]


def _bubble_stats(group: List[_Patch], key: str) -> DetectedBubble:
    parts = [(p.chart, p.mask()) for p in group]
    rect = next((p for p in group if not p.annular), None)
    cyl = next((p for p in group if p.annular and p.chart.immersion.chart.domain_kind == "cylinder"), None)
    axis = None
    if cyl is not None:
        imm = cyl.chart.immersion
        radius = np.exp(conformal_factor(imm, get_settings().tau_conf_detector).mean(axis=1))
        band = np.arange(cyl.start, cyl.stop)
        waist = int(band[np.argmin(radius[cyl.start:cyl.stop])])
        scale = float(radius[waist])
        position = imm.positions[waist].mean(axis=0)
        ring = imm.positions[min(waist + 1, imm.chart.resolution[0] - 1)].mean(axis=0) - imm.positions[
            max(waist - 1, 0)].mean(axis=0)
        if np.linalg.norm(ring) > 0:
            axis = tuple(float(c) for c in ring / np.linalg.norm(ring))
    elif rect is not None:
        imm = rect.chart.immersion
        n0, n1 = imm.chart.resolution
        i, j = n0 // 2, n1 // 2
        stretch = np.linalg.norm(imm.jet.du, axis=-1) * np.linalg.norm(imm.jet.dv, axis=-1)
        lam = 0.5 * float(np.median(np.log(stretch[rect.chart.partition > SUPPORT_WEIGHT])))
        half = min(imm.chart.bounds[0][1] - imm.chart.bounds[0][0], imm.chart.bounds[1][1] - imm.chart.bounds[1][0]) / 2
        # exp(median lambda) times the zone radius
        scale = math.exp(lam) * half
        position = imm.positions[i - 1:i + 1, j - 1:j + 1].reshape(-1, 3).mean(axis=0)
        axis = tuple(float(c) for c in imm.fields.normal[i, j])
    else:
        p = group[0]
        imm = p.chart.immersion
        mid = (p.start + p.stop) // 2
        scale = float(np.exp(conformal_factor(imm, get_settings().tau_conf_detector)[mid].mean()))
        position = imm.positions[mid].mean(axis=0)
    tag = classify_bubble(BubblePatch(parts=parts, scale=scale)).tag
    if tag == "S":
        # sphere zones: radius from area, position from the weighted centroid
        weights = [c.immersion.chart.quadrature_weights() * c.immersion.fields.area_element * c.partition * m
                   for c, m in parts]
        total = sum(float(w.sum()) for w in weights)
        scale = math.sqrt(total / (4 * math.pi))
        position = sum((w[..., None] * c.immersion.positions).sum(axis=(0, 1))
                       for w, (c, _) in zip(weights, parts)) / total
    return DetectedBubble(key=key, tag=tag, scale=scale, position=tuple(float(c) for c in position), axis=axis)


def _neck_pieces(group: List[_Patch]) -> Tuple[List[NeckPiece], Optional[int]]:
    pieces, side = [], None
    for p in group:
        imm = p.chart.immersion
        x = imm.chart.axis(0)
        lo, hi = float(x[p.start]), float(x[p.stop - 1])
        outward = 1
        if imm.chart.domain_kind == "cylinder":
            outward = -1 if hi <= 0 else 1
            side = outward
        pieces.append(NeckPiece(imm, lo, hi, outward))
    return pieces, side


def member_structure(surface: Surface, epsilon: float, min_decades: float = 1.5) -> MemberStructure:
    """Bubble and neck classes of one member."""
    atlas = as_atlas(surface)
    per_chart = [_chart_patches(c, epsilon) for c in atlas.charts]
    patches = [p for ps in per_chart for p in ps]
    pid = {id(p): i for i, p in enumerate(patches)}
    uf = _UnionFind()
    for i in range(len(patches)):
        uf.find(i)
    incidences = set()

    def touch(a: _Patch, b: _Patch):
        if a.kind == b.kind:
            uf.union(pid[id(a)], pid[id(b)])
        else:
            neck, bub = (a, b) if a.kind == "neck" else (b, a)
            incidences.add((pid[id(neck)], pid[id(bub)]))

    for ps in per_chart:
        for a, b in zip(ps[:-1], ps[1:]):
            touch(a, b)
    supports = [_support(c) for c in atlas.charts]
    for i in range(len(atlas.charts)):
        for j in range(i + 1, len(atlas.charts)):
            a, b = supports[i], supports[j]
            if len(a.points) == 0 or len(b.points) == 0 or not _boxes_meet(a, b):
                continue
            on_b, on_a = _close(a, b), _close(b, a)
            if len(on_b) < MIN_OVERLAP_NODES or len(on_a) < MIN_OVERLAP_NODES:
                continue
            pa = _majority(per_chart[i], on_b, atlas.charts[i].immersion.chart.resolution[1])
            pb = _majority(per_chart[j], on_a, atlas.charts[j].immersion.chart.resolution[1])
            if pa is not None and pb is not None:
                touch(pa, pb)

    groups: Dict[int, List[_Patch]] = {}
    for i, p in enumerate(patches):
        groups.setdefault(uf.find(i), []).append(p)
    bubbles: Dict[int, DetectedBubble] = {}
    for root, group in groups.items():
        if group[0].kind == "bubble":
            bubbles[root] = _bubble_stats(group, f"b{len(bubbles)}")
    necks = []
    for root, group in groups.items():
        if group[0].kind != "neck":
            continue
        ends = sorted({uf.find(b) for n, b in incidences if uf.find(n) == root})
        if len(ends) != 2:
            raise Unresolved(f"neck through {sorted({p.name for p in group})} touches {len(ends)} bubbles")
        pieces, side = _neck_pieces(group)
        exponent = neck_exponent(pieces, min_decades=min_decades)
        a, b = bubbles[ends[0]], bubbles[ends[1]]
        tail, head = (a, b) if a.scale >= b.scale else (b, a)
        necks.append(DetectedNeck(ends=(tail.key, head.key), m=exponent.m, cylinder_side=side))
    logger.info("member %s: %d bubbles, %d necks", atlas.name, len(bubbles), len(necks))
    return MemberStructure(bubbles={b.key: b for b in bubbles.values()}, necks=necks)


# ---------------------------------------------------------------- graph extraction

_KIND = {"S": "conc", "C": "thin"}


def _majority_value(values: Iterable):
    return Counter(values).most_common(1)[0][0]


def _reach(s: MemberStructure) -> Dict[str, float]:
    """Coarsest scale among a bubble and its neck neighbours."""
    reach = {key: b.scale for key, b in s.bubbles.items()}
    for n in s.necks:
        a, b = n.ends
        reach[a] = max(reach[a], s.bubbles[b].scale)
        reach[b] = max(reach[b], s.bubbles[a].scale)
    return reach


def match_bubbles(prev: MemberStructure, cur: MemberStructure, label: str = "") -> Dict[str, str]:
    """Keys of ``cur`` mapped to keys of ``prev``.

    Bubbles pair up nearest in log-scale among candidates whose positions lie
    within POSITION_FACTOR times the coarser neighbouring scale and whose
    axes do not point apart.
    """
    a_keys, b_keys = sorted(prev.bubbles), sorted(cur.bubbles)
    if len(a_keys) != len(b_keys):
        raise InconsistentAcrossK(f"{len(a_keys)} bubbles against {len(b_keys)} {label}".rstrip())
    ra, rb = _reach(prev), _reach(cur)
    cost = np.full((len(a_keys), len(b_keys)), np.inf)
    for i, ka in enumerate(a_keys):
        a = prev.bubbles[ka]
        for j, kb in enumerate(b_keys):
            b = cur.bubbles[kb]
            reach = max(ra[ka], rb[kb])
            gap = float(np.linalg.norm(np.subtract(a.position, b.position)))
            if gap > POSITION_FACTOR * reach:
                continue
            if a.axis is not None and b.axis is not None and float(np.dot(a.axis, b.axis)) <= 0:
                continue
            cost[i, j] = abs(math.log(a.scale / b.scale)) + gap / reach
    finite = np.where(np.isfinite(cost), cost, 1e12)
    rows, cols = linear_sum_assignment(finite)
    for i, j in zip(rows, cols):
        if not np.isfinite(cost[i, j]):
            raise InconsistentAcrossK(f"bubble {b_keys[j]} has no counterpart {label}".rstrip())
    return {b_keys[j]: a_keys[i] for i, j in zip(rows, cols)}


def _renamed(s: MemberStructure, names: Mapping[str, str]) -> MemberStructure:
    bubbles = {names[key]: b.model_copy(update={"key": names[key]}) for key, b in s.bubbles.items()}
    necks = [n.model_copy(update={"ends": (names[n.ends[0]], names[n.ends[1]])}) for n in s.necks]
    return MemberStructure(bubbles=bubbles, necks=necks)


def extract_graph(family, epsilon: float, min_decades: float = 1.5) -> BubbleGraph:
    """Bubble graph of a family (a mapping k -> member, or anything with ``members``)."""
    members: Mapping[int, Surface] = getattr(family, "members", family)
    if not members:
        raise InvalidParameters("empty family")
    ks = sorted(members)
    raw = {k: member_structure(members[k], epsilon, min_decades) for k in ks}
    structures = {ks[0]: raw[ks[0]]}
    for a, b in zip(ks[:-1], ks[1:]):
        names = match_bubbles(structures[a], raw[b], f"between k={a} and k={b}")
        structures[b] = _renamed(raw[b], names)
    first = structures[ks[0]]
    keys = set(first.bubbles)
    neck_keys = Counter(n.ends for n in first.necks)
    for k in ks[1:]:
        if Counter(n.ends for n in structures[k].necks) != neck_keys:
            raise InconsistentAcrossK(f"neck sets differ between k={ks[0]} and k={k}")

    tags = {key: _majority_value(structures[k].bubbles[key].tag for k in ks) for key in keys}
    ordered = sorted(keys, key=lambda key: (-structures[ks[-1]].bubbles[key].scale, key))
    ids, counters = {}, Counter()
    for key in ordered:
        prefix = {"S": "S", "C": "C"}.get(tags[key], "B")
        counters[prefix] += 1
        ids[key] = f"{prefix}{counters[prefix]}"

    edges = []
    punctures: Dict[str, List[str]] = {key: [] for key in keys}
    concentration: Dict[str, List[str]] = {key: [] for key in keys}
    def label(key: str, other: str, at_tail: bool, side: Optional[int]) -> str:
        if tags[key] == "S":
            q = f"y{len(concentration[key]) + 1}"
            concentration[key].append(q)
        elif tags[key] == "C":
            q = "0" if side == -1 else "∞"
        elif at_tail:
            q = ids[other]
            punctures[key].append(q)
        else:
            q = "∞"
            if q not in punctures[key]:
                punctures[key].append(q)
        return q

    for n in first.necks:
        tail, head = n.ends
        m = _majority_value(
            next(x.m for x in structures[k].necks if x.ends == n.ends) for k in ks)
        q1 = label(tail, head, True, n.cylinder_side)
        q2 = label(head, tail, False, n.cylinder_side)
        edges.append((tail, head, q1, q2, m))

    vertices = []
    for key in ordered:
        tag = tags[key]
        kind = _KIND.get(tag, "thick")
        last = structures[ks[-1]].bubbles[key]
        vertices.append(BubbleVertex(
            id=ids[key], kind=kind, limit_class=tag,
            scales={k: structures[k].bubbles[key].scale for k in ks},
            positions={k: structures[k].bubbles[key].position for k in ks},
            punctures=["0", "∞"] if kind == "thin" else ([] if kind == "conc" else punctures[key]),
            concentration=concentration[key] if kind == "conc" else [],
            axis=last.axis))
    genus = max(0, sum(1 for t in tags.values() if t == "C") - 1)
    graph = BubbleGraph(
        vertices=vertices,
        edges=[BubbleEdge(tail=ids[t], head=ids[h], q1=q1, q2=q2, m=m) for t, h, q1, q2, m in edges],
        genus=genus, k_range=ks)
    logger.info("extracted graph: %d vertices, %d edges over k=%s", len(vertices), len(edges), ks)
    return graph
