"""Synthetic degenerating families with a prescribed bubble tree.

A member of a family is two spheres (the copies 1 and 2 of the tree) joined
near a cluster point by one catenoidal neck per leaf. The cluster point sits
at the origin so that the smallest necks keep full float64 resolution. Every
internal vertex of the tree is a flat thick region of the sheets; the
children of a vertex sit on a polygon of radius sigma_v around it.

Charts carry analytic jets built with the chain rule:

* ``s{i}:far``          stereographic chart of sphere i away from the cluster
* ``s{i}:annulus:root`` conformal log-polar chart around the cluster
* ``s{i}:rect:{v}``     graph of sheet i over the frame of an internal vertex
* ``s{i}:annulus:{c}``  log-polar graph chart around a child
* ``neck:{c}``          catenoid neck of leaf c, blended into both sheets
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import brentq

from bubble_graph import from_tree_spec
from errors import InvalidParameters, OutOfRange, OverlapCollision
from geometry import (Atlas, AtlasChart, DiscreteImmersion, Jet, area, functionals, symbolic_sampler,
                      total_mean_curvature, volume)
from model_surfaces import (flip_exprs, place_exprs, reduce_modulus, sphere_atlas, stereographic_exprs,
                            torus_modulus_from_length, u, v)
from models import (BubbleEdge, BubbleGraph, ChartGrid, FamilySpec, ThinPartGeometry, TorusModulus, TreeSpec)

logger = logging.getLogger("willmore_lab.synthesizer")

# blend radii (log-smoothstep) of the partition of unity
FAR_BLEND = (0.3, 0.6)
THICK_BLEND = (1.4, 1.9)     # x sigma_v, rectangle of vertex v
CHILD_BLEND = (0.2, 0.3)     # x sigma_parent, annulus around a child
CHILD_CHART = 0.32           # outer radius of a child annulus, x sigma_parent
ANNULUS_INNER = 1.3          # inner radius of an internal child annulus, x sigma_child
NECK_INNER = 0.9             # inner radius of a leaf annulus, x r2
NECK_OVERSHOOT = 1.05        # neck cylinder reaches radius 1.05 r3
ROOT_ANNULUS_OUTER = 1.0
FAR_HALF_WIDTH = 7.0
# rectangle charts span +-RECT_SPAN vertex scales
RECT_SPAN = 2.2
# radial samples per unit of log-radius, per unit of base resolution
RADIAL_DENSITY = 0.6
# neck regions stay inside the child annuli
MAX_NECK_ALPHA = 0.25

_TINY = 1e-300


def smoothstep(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quintic smoothstep and its first two derivatives, flat outside [0, 1]."""
    inside = (q > 0) & (q < 1)
    qc = np.clip(q, 0.0, 1.0)
    S = qc ** 3 * (10 - 15 * qc + 6 * qc ** 2)
    dS = np.where(inside, 30 * qc ** 2 * (qc - 1) ** 2, 0.0)
    d2S = np.where(inside, 60 * qc * (2 * qc - 1) * (qc - 1), 0.0)
    return S, dS, d2S


def blend(d: np.ndarray, a: float, b: float) -> np.ndarray:
    """1 for d <= a, 0 for d >= b, smooth in log d between."""
    q = (np.log(np.maximum(d, _TINY)) - math.log(a)) / math.log(b / a)
    return 1.0 - smoothstep(q)[0]


@dataclass(frozen=True, eq=False)
class Frame:
    """Tangent frame of the mid surface at a tree vertex; basis columns e1, e2, e3."""
    xi: np.ndarray
    origin: np.ndarray
    basis: np.ndarray

    def local(self, P: np.ndarray) -> np.ndarray:
        return np.einsum("...k,kj->...j", P - self.origin, self.basis)

    def radius(self, P: np.ndarray) -> np.ndarray:
        loc = self.local(P)
        return np.hypot(loc[..., 0], loc[..., 1])

    @property
    def axis(self) -> Tuple[float, float, float]:
        return tuple(float(x) for x in self.basis[:, 2])


@dataclass(frozen=True)
class Sheet:
    """One sphere of the member, seen from the cluster point.

    ``side`` is +1 when the center lies in the +z direction, ``gap`` the
    signed height of the sheet over the cluster point and ``normal_sign``
    the direction (+-e3) of its normal there.
    """
    index: int
    center: Tuple[float, float, float]
    radius: float
    side: int
    gap: float
    normal_sign: int

    @property
    def inward(self) -> bool:
        return self.normal_sign * self.side > 0


@dataclass
class MemberLayout:
    k: int
    tree: TreeSpec
    configuration: str
    h: float
    sheets: Tuple[Sheet, Sheet]
    frames: Dict[str, Frame]
    scales: Dict[str, float]
    # leaf -> (r1, r2, r3) of the catenoid-to-sheet blend
    blends: Dict[str, Tuple[float, float, float]] = field(default_factory=dict)

    def sheet_offset(self, node: str, sheet: Sheet) -> Tuple[np.ndarray, float]:
        """Center of ``sheet`` in the frame of ``node``: horizontal part and height."""
        if self.configuration == "coincident":
            return np.zeros(2), sheet.radius + sheet.gap
        return -self.frames[node].xi, sheet.center[2]


# ---------------------------------------------------------------- sheet maps

class GraphSheet:
    """Sphere written as a height function F over a vertex frame."""

    def __init__(self, frame: Frame, offset: np.ndarray, c3: float, sheet: Sheet):
        self.frame = frame
        self.offset = offset
        self.c3 = c3
        self.R = sheet.radius
        self.sigma = sheet.side
        self.gap = sheet.gap

    def height(self, xi: np.ndarray):
        d = xi - self.offset
        w2 = np.einsum("...k,...k->...", d, d)
        S = np.sqrt(self.R ** 2 - w2)
        # c3 - sigma*S without cancellation
        F = (self.gap * (self.c3 + self.sigma * self.R) + w2) / (self.c3 + self.sigma * S)
        dF = self.sigma * d / S[..., None]
        HF = self.sigma * (np.eye(2) / S[..., None, None]
                           + np.einsum("...j,...k->...jk", d, d) / (S ** 3)[..., None, None])
        return F, dF, HF

    def jet(self, xi: np.ndarray):
        F, dF, HF = self.height(xi)
        E = self.frame.basis
        local = np.concatenate([xi, F[..., None]], axis=-1)
        X = self.frame.origin + np.einsum("ij,...j->...i", E, local)
        DX = E[:, :2] + np.einsum("i,...j->...ij", E[:, 2], dF)
        D2X = np.einsum("i,...jk->...ijk", E[:, 2], HF)
        return X, DX, D2X


class StereoSheet:
    """Conformal chart of a sphere centred on the z axis, xi = horizontal coordinate at the cluster."""

    def __init__(self, sheet: Sheet):
        self.R = sheet.radius
        self.side = sheet.side
        self.gap = sheet.gap

    def jet(self, xi: np.ndarray):
        R, side = self.R, self.side
        z = xi / (2 * R)
        r2 = np.einsum("...k,...k->...", z, z)
        g = 2.0 / (1.0 + r2)
        gj = -(g ** 2)[..., None] * z
        gjk = 2 * (g ** 3)[..., None, None] * np.einsum("...j,...k->...jk", z, z) - (g ** 2)[..., None, None] * np.eye(2)
        X = np.stack([R * g * z[..., 0], R * g * z[..., 1], self.gap + side * R * (2 * r2 / (1 + r2))], axis=-1)
        shape = xi.shape[:-1]
        J = np.zeros(shape + (3, 2))
        K = np.zeros(shape + (3, 2, 2))
        eye = np.eye(2)
        for i in range(2):
            J[..., i, :] = eye[i] * g[..., None] + z[..., i, None] * gj
            K[..., i, :, :] = (np.einsum("j,...k->...jk", eye[i], gj) + np.einsum("...j,k->...jk", gj, eye[i])
                               + z[..., i, None, None] * gjk)
        J[..., 2, :] = -side * gj
        K[..., 2, :, :] = -side * gjk
        return X, J / 2, K / (4 * R)


def _xi_rect(sign: int):
    def xi_map(A, B):
        xi = np.stack([A, sign * B], axis=-1)
        one = np.broadcast_to(np.array([1.0, 0.0]), xi.shape)
        two = np.broadcast_to(np.array([0.0, float(sign)]), xi.shape)
        zero = np.zeros_like(xi)
        return xi, one, two, zero, zero, zero
    return xi_map


def _xi_log_polar(sign: int):
    def xi_map(A, B):
        r = np.exp(A)
        radial = np.stack([r * np.cos(B), sign * r * np.sin(B)], axis=-1)
        angular = np.stack([-r * np.sin(B), sign * r * np.cos(B)], axis=-1)
        return radial, radial, angular, radial, angular, -radial
    return xi_map


def _composed_sampler(sheet_map, xi_map):
    def sample(U, V) -> Jet:
        xi, xa, xb, xaa, xab, xbb = xi_map(U, V)
        X, DX, D2X = sheet_map.jet(xi)

        def d1(a):
            return np.einsum("...ij,...j->...i", DX, a)

        def d2(a, b, ab):
            return np.einsum("...ijk,...j,...k->...i", D2X, a, b) + d1(ab)

        return Jet(X, d1(xa), d1(xb), d2(xa, xa, xaa), d2(xa, xb, xab), d2(xb, xb, xbb))
    return sample


def _neck_sampler(frame: Frame, s: float, radii: Tuple[float, float, float], upper: GraphSheet,
                  lower: GraphSheet):
    """Catenoid of waist s in the leaf frame, blended into sheet 1 (t > 0) and sheet 2 (t < 0)."""
    r1, r2, _ = radii
    width = math.log(r2 / r1)
    E = frame.basis

    def sample(T, TH) -> Jet:
        ch, sh = np.cosh(T), np.sinh(T)
        r = s * ch
        radial = np.stack([np.cos(TH), np.sin(TH)], axis=-1)
        angular = np.stack([-np.sin(TH), np.cos(TH)], axis=-1)
        xi = r[..., None] * radial
        xt = (s * sh)[..., None] * radial
        xth = r[..., None] * angular
        xtt = xi
        xtth = (s * sh)[..., None] * angular
        xthth = -xi

        Fu, dFu, HFu = upper.height(xi)
        Fl, dFl, HFl = lower.height(xi)
        top = T >= 0
        F = np.where(top, Fu, Fl)
        dF = np.where(top[..., None], dFu, dFl)
        HF = np.where(top[..., None, None], HFu, HFl)

        def dot(a):
            return np.einsum("...k,...k->...", dF, a)

        def hess(a, b):
            return np.einsum("...jk,...j,...k->...", HF, a, b)

        Ft, Fth = dot(xt), dot(xth)
        Ftt = hess(xt, xt) + dot(xtt)
        Ftth = hess(xt, xth) + dot(xtth)
        Fthth = hess(xth, xth) + dot(xthth)

        log_cosh = np.logaddexp(T, -T) - math.log(2.0)
        q = (math.log(s) + log_cosh - math.log(r1)) / width
        qt = np.tanh(T) / width
        qtt = 1.0 / (ch ** 2 * width)
        S, dS, d2S = smoothstep(q)
        chi = 1.0 - S
        chi_t = -dS * qt
        chi_tt = -(d2S * qt ** 2 + dS * qtt)

        gap = s * T - F
        z = F + chi * gap
        zt = Ft + chi_t * gap + chi * (s - Ft)
        zth = (1 - chi) * Fth
        ztt = (1 - chi) * Ftt + chi_tt * gap + 2 * chi_t * (s - Ft)
        ztth = (1 - chi) * Ftth - chi_t * Fth
        zthth = (1 - chi) * Fthth

        def world(planar, height, origin=False):
            local = np.concatenate([planar, height[..., None]], axis=-1)
            out = np.einsum("ij,...j->...i", E, local)
            return frame.origin + out if origin else out

        return Jet(world(xi, z, True), world(xt, zt), world(xth, zth), world(xtt, ztt), world(xtth, ztth),
                   world(xthth, zthth))
    return sample


# ---------------------------------------------------------------- layout

def _frame(xi: np.ndarray, configuration: str, mid_radius: float) -> Frame:
    xi = np.asarray(xi, dtype=float)
    if configuration == "tangent":
        return Frame(xi=xi, origin=np.array([xi[0], xi[1], 0.0]), basis=np.eye(3))
    z = xi / (2 * mid_radius)
    r2 = float(z @ z)
    g = 2.0 / (1.0 + r2)
    origin = np.array([mid_radius * g * z[0], mid_radius * g * z[1], mid_radius * 2 * r2 / (1 + r2)])
    e3 = np.array([-g * z[0], -g * z[1], g - 1.0])
    e3 /= np.linalg.norm(e3)
    e1 = np.array([1.0, 0.0, 0.0]) - e3[0] * e3
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return Frame(xi=xi, origin=origin, basis=np.column_stack([e1, e2, e3]))


def _ratio(spec: FamilySpec, node: str, leaf: bool) -> Tuple[float, float]:
    return spec.tree.edge_ratio.get(node, spec.leaf_ratio if leaf else spec.internal_ratio)


def _attachment_angles(spec: FamilySpec, node: str) -> Dict[str, float]:
    children = spec.tree.children(node)
    return {c: spec.attachment_angles.get(c, 2 * math.pi * j / len(children)) for j, c in enumerate(children)}


def _waist(sigma_parent: float, half_gap: float, beta: float, s_ref: float) -> float:
    def mismatch(s):
        return s * math.acosh((sigma_parent / s) ** beta) - half_gap
    top = mismatch(s_ref)
    if top <= 1e-12 * half_gap:
        return s_ref
    return brentq(mismatch, s_ref * 1e-12, s_ref, xtol=s_ref * 1e-14, rtol=1e-13)


def layout_member(spec: FamilySpec, k: int, leaf_kappa: Optional[float] = None) -> MemberLayout:
    """Scales, frames and blend radii of member k.

    ``leaf_kappa`` overrides the leaf ratio sigma_parent / waist of the
    reference (smallest) leaf.
    """
    tree = spec.tree
    beta = spec.overlap_exponent
    sigma: Dict[str, float] = {tree.root: spec.root_scale * spec.root_growth ** (-k)}
    order = [tree.root]
    for node in order:
        for child in tree.children(node):
            order.append(child)
            if tree.children(child):
                base, growth = _ratio(spec, child, leaf=False)
                sigma[child] = sigma[node] / (base * growth ** k)
                if THICK_BLEND[1] * sigma[child] >= CHILD_BLEND[0] * sigma[node]:
                    raise OverlapCollision(f"vertex {child} is too large for its parent {node} at k = {k}")

    kappa: Dict[str, float] = {}
    for leaf in tree.leaves():
        base, growth = _ratio(spec, leaf, leaf=True)
        kappa[leaf] = leaf_kappa if leaf_kappa is not None else base * growth ** k
    reference = min(tree.leaves(), key=lambda c: sigma[tree.parent[c]] / kappa[c])
    s_ref = sigma[tree.parent[reference]] / kappa[reference]
    h = 2 * s_ref * math.acosh(kappa[reference] ** beta)

    scales = dict(sigma)
    blends = {}
    for leaf in tree.leaves():
        sp_ = sigma[tree.parent[leaf]]
        s = _waist(sp_, h / 2, beta, s_ref)
        r_mid = s ** (1 - beta) * sp_ ** beta
        radii = (r_mid / 2, 2 * r_mid, 4 * r_mid)
        if radii[2] >= CHILD_BLEND[0] * sp_:
            raise OverlapCollision(
                f"neck blend of {leaf} reaches {radii[2] / sp_:.3f} sigma_parent at k = {k}")
        scales[leaf] = s
        blends[leaf] = radii

    R0 = spec.sphere_radius
    mid = R0 + h / 2
    if spec.configuration == "coincident":
        sheets = (Sheet(1, (0.0, 0.0, mid), R0, 1, h / 2, 1),
                  Sheet(2, (0.0, 0.0, mid), R0 + h, 1, -h / 2, -1))
    else:
        sheets = (Sheet(1, (0.0, 0.0, mid), R0, 1, h / 2, 1),
                  Sheet(2, (0.0, 0.0, -mid), R0, -1, -h / 2, -1))

    frames = {tree.root: _frame(np.zeros(2), spec.configuration, mid)}
    for node in order:
        if node not in sigma:
            continue
        children = tree.children(node)
        angles = _attachment_angles(spec, node)
        for child in children:
            a = angles[child]
            frames[child] = _frame(frames[node].xi + sigma[node] * np.array([math.cos(a), math.sin(a)]),
                                   spec.configuration, mid)
        for i, c1 in enumerate(children):
            for c2 in children[i + 1:]:
                if np.linalg.norm(frames[c1].xi - frames[c2].xi) <= 2 * CHILD_CHART * sigma[node]:
                    raise OverlapCollision(f"children {c1} and {c2} of {node} collide")
    return MemberLayout(k=k, tree=tree, configuration=spec.configuration, h=h, sheets=sheets, frames=frames,
                        scales=scales, blends=blends)


# ---------------------------------------------------------------- charts

def _radial_count(n: int, r_in: float, r_out: float) -> int:
    return max(n // 2, int(math.ceil(RADIAL_DENSITY * n * math.log(r_out / r_in))))


def _far_chart(layout: MemberLayout, sheet: Sheet, n: int) -> AtlasChart:
    north = sheet.side > 0
    exprs = place_exprs(flip_exprs(stereographic_exprs(north), 1 if sheet.inward else -1), sheet.radius,
                        sheet.center, (0, 0, 1))
    grid = ChartGrid.square(FAR_HALF_WIDTH, 2 * n)
    imm = DiscreteImmersion.from_sampler(grid, symbolic_sampler(exprs, u, v), f"s{sheet.index}:far")

    def weight(U, V, P):
        return 1.0 - blend(np.linalg.norm(P, axis=-1), *FAR_BLEND)
    return AtlasChart(immersion=imm, weight=weight, role=f"far:{sheet.index}")


def _root_annulus(layout: MemberLayout, sheet: Sheet, n: int) -> AtlasChart:
    root = layout.tree.root
    sigma = layout.scales[root]
    frame = layout.frames[root]
    r_in = ANNULUS_INNER * sigma
    grid = ChartGrid.annulus(r_in, ROOT_ANNULUS_OUTER, _radial_count(n, r_in, ROOT_ANNULUS_OUTER), n)
    sign = 1 if sheet.normal_sign > 0 else -1
    imm = DiscreteImmersion.from_sampler(grid, _composed_sampler(StereoSheet(sheet), _xi_log_polar(sign)),
                                         f"s{sheet.index}:annulus:{root}")

    def weight(U, V, P):
        return blend(np.linalg.norm(P, axis=-1), *FAR_BLEND) - blend(frame.radius(P), THICK_BLEND[0] * sigma,
                                                                      THICK_BLEND[1] * sigma)
    return AtlasChart(immersion=imm, weight=weight, role=f"annulus:{sheet.index}")


def _graph_sheet(layout: MemberLayout, node: str, sheet: Sheet) -> GraphSheet:
    offset, c3 = layout.sheet_offset(node, sheet)
    return GraphSheet(layout.frames[node], offset, c3, sheet)


def _inner_blend(layout: MemberLayout, child: str) -> Callable[[np.ndarray], np.ndarray]:
    frame = layout.frames[child]
    if child in layout.blends:
        _, r2, r3 = layout.blends[child]
        return lambda P: blend(frame.radius(P), r2, r3)
    sigma = layout.scales[child]
    return lambda P: blend(frame.radius(P), THICK_BLEND[0] * sigma, THICK_BLEND[1] * sigma)


def _rect_chart(layout: MemberLayout, node: str, sheet: Sheet, n: int) -> AtlasChart:
    sigma = layout.scales[node]
    frame = layout.frames[node]
    grid = ChartGrid.square(RECT_SPAN * sigma, (3 * n) // 2)
    sign = 1 if sheet.normal_sign > 0 else -1
    imm = DiscreteImmersion.from_sampler(grid, _composed_sampler(_graph_sheet(layout, node, sheet), _xi_rect(sign)),
                                         f"s{sheet.index}:rect:{node}")
    child_frames = [layout.frames[c] for c in layout.tree.children(node)]

    def weight(U, V, P):
        w = blend(frame.radius(P), THICK_BLEND[0] * sigma, THICK_BLEND[1] * sigma)
        for cf in child_frames:
            w = w - blend(cf.radius(P), CHILD_BLEND[0] * sigma, CHILD_BLEND[1] * sigma)
        return w
    return AtlasChart(immersion=imm, weight=weight, role=f"rect:{sheet.index}")


def _child_annulus(layout: MemberLayout, child: str, sheet: Sheet, n: int) -> AtlasChart:
    parent = layout.tree.parent[child]
    sigma_p = layout.scales[parent]
    frame = layout.frames[child]
    if child in layout.blends:
        r_in = NECK_INNER * layout.blends[child][1]
    else:
        r_in = ANNULUS_INNER * layout.scales[child]
    r_out = CHILD_CHART * sigma_p
    grid = ChartGrid.annulus(r_in, r_out, _radial_count(n, r_in, r_out), n)
    sign = 1 if sheet.normal_sign > 0 else -1
    imm = DiscreteImmersion.from_sampler(
        grid, _composed_sampler(_graph_sheet(layout, child, sheet), _xi_log_polar(sign)),
        f"s{sheet.index}:annulus:{child}")
    inner = _inner_blend(layout, child)

    def weight(U, V, P):
        return blend(frame.radius(P), CHILD_BLEND[0] * sigma_p, CHILD_BLEND[1] * sigma_p) - inner(P)
    return AtlasChart(immersion=imm, weight=weight, role=f"annulus:{sheet.index}")


def _neck_chart(layout: MemberLayout, leaf: str, n: int) -> AtlasChart:
    s = layout.scales[leaf]
    radii = layout.blends[leaf]
    frame = layout.frames[leaf]
    T = math.acosh(NECK_OVERSHOOT * radii[2] / s)
    grid = ChartGrid.cylinder(-T, T, max(3 * n, int(math.ceil(RADIAL_DENSITY * n * 2 * T))), n)
    upper, lower = (_graph_sheet(layout, leaf, sh) for sh in layout.sheets)
    imm = DiscreteImmersion.from_sampler(grid, _neck_sampler(frame, s, radii, upper, lower), f"neck:{leaf}")
    inner = _inner_blend(layout, leaf)
    return AtlasChart(immersion=imm, weight=lambda U, V, P: inner(P), role="neck:0")


def build_member(spec: FamilySpec, k: int, layout: Optional[MemberLayout] = None) -> Atlas:
    layout = layout or layout_member(spec, k)
    n = spec.resolution
    tree = layout.tree
    charts: List[AtlasChart] = []
    for sheet in layout.sheets:
        charts.append(_far_chart(layout, sheet, n))
        charts.append(_root_annulus(layout, sheet, n))
        for node in tree.internal_nodes():
            charts.append(_rect_chart(layout, node, sheet, n))
            for child in tree.children(node):
                charts.append(_child_annulus(layout, child, sheet, n))
    for leaf in tree.leaves():
        charts.append(_neck_chart(layout, leaf, n))
    logger.debug("member k=%d: %d charts, h=%.3e", k, len(charts), layout.h)
    return Atlas(charts=charts, genus=spec.genus, name=f"member_k{k}")


# ---------------------------------------------------------------- families

@dataclass
class Family:
    spec: FamilySpec
    members: Dict[int, Atlas]
    layouts: Dict[int, MemberLayout]
    graph: BubbleGraph


def ground_truth_graph(spec: FamilySpec, layouts: Optional[Dict[int, MemberLayout]] = None) -> BubbleGraph:
    ks = spec.ks()
    layouts = layouts or {k: layout_member(spec, k) for k in ks}
    last = layouts[ks[-1]]

    def scale(node, k):
        return layouts[k].scales[node]

    def position(node, k, copy):
        return tuple(float(x) for x in layouts[k].frames[node].origin)

    return from_tree_spec(spec.tree, ks, scale=scale, position=position,
                          axis=lambda node: last.frames[node].axis,
                          sphere_position=lambda copy: last.sheets[copy - 1].center)


def synthesize_family(spec: FamilySpec) -> Family:
    """Members Phi_k for every k of the range plus the ground-truth bubble graph."""
    layouts = {k: layout_member(spec, k) for k in spec.ks()}
    members = {}
    for k, layout in layouts.items():
        members[k] = build_member(spec, k, layout)
        logger.info("synthesized member k=%d (p=%d, %s, h=%.3e)", k, spec.genus, spec.configuration, layout.h)
    return Family(spec=spec, members=members, layouts=layouts, graph=ground_truth_graph(spec, layouts))


def star_tree(p: int) -> TreeSpec:
    """Root with p + 1 leaves c1..c{p+1}."""
    if p < 1:
        raise InvalidParameters(f"genus must be at least 1, got {p}")
    return TreeSpec(parent={"r": None, **{f"c{j}": "r" for j in range(1, p + 2)}})


@dataclass
class TorusMember:
    index: int
    l: float
    # measured on the built surface, reduced
    modulus: TorusModulus
    # i L(l) / 2 pi of the thin-part collar, reduced
    target: TorusModulus
    atlas: Atlas
    layout: MemberLayout


def induced_modulus(atlas: Atlas) -> TorusModulus:
    """Modulus of a genus one member read off its neck cylinders.

    The torus is a cyclic chain of annuli. Each neck cylinder adds its
    conformal length; each sheet adds the annulus between the two neck
    circles it carries, log(d^2 / (rho_a rho_b)) for circles of radii rho at
    distance d. Im omega is the total over 2 pi.
    """
    necks = [c.immersion for c in atlas.charts if c.immersion.name.startswith("neck:")]
    if atlas.genus != 1 or len(necks) != 2:
        raise InvalidParameters(f"induced modulus needs a genus one member with two necks, got {len(necks)}")
    total = 0.0
    ends: Tuple[List, List] = ([], [])
    for imm in necks:
        t = imm.chart.axis(0)
        total += float(t[-1] - t[0])
        for side, row in enumerate((0, -1)):
            ring = imm.positions[row]
            centre = ring.mean(axis=0)
            ends[side].append((centre, float(np.linalg.norm(ring - centre, axis=1).mean())))
    for (ca, ra), (cb, rb) in ends:
        d = float(np.linalg.norm(ca - cb))
        total += math.log(d * d / (ra * rb))
    return reduce_modulus(TorusModulus(re=0.0, im=total / (2 * math.pi)))


def degenerate_torus(lengths: Sequence[float], spec: Optional[FamilySpec] = None) -> List[TorusMember]:
    """Tori whose neck waists shrink like the thin-part length l_k.

    The leaf ratio follows kappa_k = kappa_0 (l_0 / l_k)^2, so the neck
    scale is proportional to l_k. Each member carries the modulus induced by
    its own geometry next to the collar target i L(l_k) / 2 pi, both reduced
    to the fundamental domain.
    """
    spec = spec or FamilySpec(tree=star_tree(1), genus=1)
    if spec.genus != 1:
        raise InvalidParameters("degenerating tori need a genus one tree")
    if not lengths:
        raise InvalidParameters("empty length schedule")
    if any(b >= a for a, b in zip(lengths, lengths[1:])):
        raise InvalidParameters(f"thin-part lengths must decrease strictly, got {list(lengths)}")
    l0 = lengths[0]
    out = []
    for j, l in enumerate(lengths):
        ThinPartGeometry(l=l)
        kappa = spec.leaf_ratio[0] * (l0 / l) ** 2
        layout = layout_member(spec, j, leaf_kappa=kappa)
        atlas = build_member(spec, j, layout)
        modulus = induced_modulus(atlas)
        target = reduce_modulus(torus_modulus_from_length(l))
        out.append(TorusMember(index=j, l=l, modulus=modulus, target=target, atlas=atlas, layout=layout))
        logger.info("torus member %d: l=%.4g Im(omega)=%.4g (collar %.4g)", j, l, modulus.im, target.im)
    return out


# ---------------------------------------------------------------- neck functionals

class NeckFunctionals(BaseModel):
    alpha: float
    A: float
    V: float
    M: float
    diameter: float


def _edge_geometry(family: Family, k: int, edge: BubbleEdge):
    layout = family.layouts[k]
    tail = family.graph.vertex(edge.tail)
    head = family.graph.vertex(edge.head)
    copy = tail.copy_index
    head_node = head.tree_node if head.kind != "conc" else None
    if head_node is None:
        raise InvalidParameters(f"edge {edge.tail}->{edge.head} does not end at a tree vertex")
    outer = family.spec.sphere_radius if tail.kind == "conc" else layout.scales[tail.tree_node]
    return layout, copy, head_node, outer


def _restricted(atlas: Atlas, copy: int, keep: Callable[[np.ndarray], np.ndarray]) -> Atlas:
    charts = []
    for chart in atlas.charts:
        kind, sheet = chart.role.split(":")
        if sheet != "0" and int(sheet) != copy:
            continue

        def weight(U, V, P, chart=chart, sheet=sheet):
            w = np.ones(U.shape) if chart.weight is None else chart.weight(U, V, P)
            mask = keep(P)
            if sheet == "0":
                mask = mask & ((U >= 0) if copy == 1 else (U < 0))
            return np.where(mask, w, 0.0)
        charts.append(AtlasChart(immersion=chart.immersion, weight=weight, role=chart.role))
    return Atlas(charts=charts, genus=atlas.genus, name=f"{atlas.name}:restricted")


def _diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    a = points[np.argmax(np.linalg.norm(points - points[0], axis=1))]
    b = points[np.argmax(np.linalg.norm(points - a, axis=1))]
    return float(np.linalg.norm(points - b, axis=1).max())


def neck_contribution(family: Family, k: int, edge: BubbleEdge, alpha: float,
                      alpha0: float = 0.25) -> NeckFunctionals:
    """A, V, M and diameter of the neck region of ``edge`` in member k.

    The region is the part of the tail's sheet with alpha^-1 s_head <= rho <=
    alpha s_tail, rho measured in the head's frame.
    """
    if alpha0 > MAX_NECK_ALPHA:
        raise InvalidParameters(f"alpha0 = {alpha0} exceeds {MAX_NECK_ALPHA}")
    if not 0 < alpha <= alpha0:
        raise OutOfRange(f"alpha = {alpha} outside (0, {alpha0}]")
    layout, copy, head_node, outer = _edge_geometry(family, k, edge)
    lo, hi = layout.scales[head_node] / alpha, alpha * outer
    if lo >= hi:
        raise OutOfRange(f"neck region of {edge.tail}->{edge.head} is empty at alpha = {alpha}")
    frame = layout.frames[head_node]

    def keep(P):
        rho = frame.radius(P)
        return (rho >= lo) & (rho <= hi)

    region = _restricted(family.members[k], copy, keep)
    points = [c.immersion.positions[c.partition > 0] for c in region.charts]
    return NeckFunctionals(alpha=alpha, A=area(region), V=volume(region), M=total_mean_curvature(region),
                           diameter=_diameter(np.concatenate(points)) if points else 0.0)


# ---------------------------------------------------------------- macroscopic sums

class MacroscopicRow(BaseModel):
    k: int
    name: str
    measured: float
    macroscopic: float
    gap: float


def macroscopic_bubbles(spec: FamilySpec) -> List[Atlas]:
    """The two unit spheres with the orientations of the sheets, in the limit h = 0."""
    layout = layout_member(spec, spec.k_range[0])
    return [sphere_atlas(spec.sphere_radius, sheet.center, 1 if sheet.inward else -1) for sheet in layout.sheets]


def macroscopic_functional_sum(family: Family) -> List[MacroscopicRow]:
    """A, V, M of every member against the sum over the concentration spheres.

    Gaps are normalised by the value of one unit sphere (4 pi R^2, 4 pi R^3 / 3, 4 pi R).
    """
    R = family.spec.sphere_radius
    units = {"A": 4 * math.pi * R ** 2, "V": 4 * math.pi * R ** 3 / 3, "M": 4 * math.pi * R}
    bubbles = [functionals(b) for b in macroscopic_bubbles(family.spec)]
    macro = {name: math.fsum(getattr(b, name) for b in bubbles) for name in units}
    rows = []
    for k, member in sorted(family.members.items()):
        f = functionals(member)
        for name, unit in units.items():
            measured = getattr(f, name)
            rows.append(MacroscopicRow(k=k, name=name, measured=measured, macroscopic=macro[name],
                                       gap=abs(measured - macro[name]) / unit))
        logger.info("k=%d A=%.5f V=%.5f M=%.5f", k, f.A, f.V, f.M)
    return rows
