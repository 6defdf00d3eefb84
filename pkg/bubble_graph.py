"""Bubble graphs: construction, traversal and structural checks.

Edges are stored tail -> head with m >= 1, the tail carrying the branch point
(larger scale) and the head the end (smaller scale).
"""
import logging
import math
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel
from scipy.stats import linregress

from errors import CycleDetected, InconsistentBehavior, Mismatch, NoIsomorphism, NotDoubleTree
from models import BubbleEdge, BubbleGraph, BubbleVertex, TreeSpec, Vec3

logger = logging.getLogger("willmore_lab.bubble_graph")

INFINITY = "∞"
ZERO = "0"
ROOT_POINT = "y_root"

ScaleSchedule = Callable[[str, int], float]
PositionSchedule = Callable[[str, int, int], Vec3]


def thick_id(node: str, copy: int) -> str:
    return f"{node}@{copy}"


def sphere_id(copy: int) -> str:
    return f"S{copy}"


def tree_scales(tree: TreeSpec, root_scale: float = 1e-3, root_growth: float = 2.0,
                internal_ratio: Tuple[float, float] = (500.0, 2.0),
                leaf_ratio: Tuple[float, float] = (2000.0, 4.0)) -> ScaleSchedule:
    """Default schedule: sigma_root 2^-k, each edge dividing by base * growth^k."""
    def scale(node: str, k: int) -> float:
        parent = tree.parent[node]
        if parent is None:
            return root_scale * root_growth ** (-k)
        default = leaf_ratio if not tree.children(node) else internal_ratio
        base, growth = tree.edge_ratio.get(node, default)
        return scale(parent, k) / (base * growth ** k)
    return scale


def polygon_positions(tree: TreeSpec, scale: ScaleSchedule) -> PositionSchedule:
    """Children on a regular polygon of radius sigma_parent about their parent, in the plane z = 0."""
    def position(node: str, k: int, copy: int) -> Vec3:
        parent = tree.parent[node]
        if parent is None:
            return (0.0, 0.0, 0.0)
        siblings = tree.children(parent)
        angle = 2 * math.pi * siblings.index(node) / len(siblings)
        px, py, pz = position(parent, k, copy)
        r = scale(parent, k)
        return (px + r * math.cos(angle), py + r * math.sin(angle), pz)
    return position


def from_tree_spec(tree: TreeSpec, ks: Sequence[int], scale: Optional[ScaleSchedule] = None,
                   position: Optional[PositionSchedule] = None,
                   axis: Optional[Callable[[str], Vec3]] = None,
                   sphere_position: Optional[Callable[[int], Vec3]] = None) -> BubbleGraph:
    """Ground-truth double tree (T + T)/~ with the two concentration spheres."""
    sphere_position = sphere_position or (lambda copy: (0.0, 0.0, 0.0))
    scale = scale or tree_scales(tree)
    position = position or polygon_positions(tree, scale)
    axis = axis or (lambda node: (0.0, 0.0, 1.0))
    ks = list(ks)
    vertices: List[BubbleVertex] = []
    edges: List[BubbleEdge] = []
    leaves = tree.leaves()

    def puncture_images(node: str, copy: int) -> Dict[str, Vec3]:
        k = ks[-1]
        o = np.asarray(position(node, k, copy))
        s = scale(node, k)
        return {c: tuple((np.asarray(position(c, k, copy)) - o) / s) for c in tree.children(node)}

    for copy in (1, 2):
        vertices.append(BubbleVertex(
            id=sphere_id(copy), kind="conc", limit_class="S",
            scales={k: 1.0 for k in ks}, positions={k: sphere_position(copy) for k in ks},
            concentration=[ROOT_POINT], copy_index=copy))
        for node in tree.internal_nodes():
            vertices.append(BubbleVertex(
                id=thick_id(node, copy), kind="thick", limit_class="P",
                scales={k: scale(node, k) for k in ks},
                positions={k: position(node, k, copy) for k in ks},
                punctures=tree.children(node) + [INFINITY], axis=axis(node),
                puncture_images=puncture_images(node, copy), copy_index=copy, tree_node=node))
        edges.append(BubbleEdge(tail=sphere_id(copy), head=thick_id(tree.root, copy), q1=ROOT_POINT,
                                q2=INFINITY, m=1))
        for node in tree.internal_nodes():
            for child in tree.children(node):
                if child in leaves:
                    edges.append(BubbleEdge(tail=thick_id(node, copy), head=child, q1=child,
                                            q2=INFINITY if copy == 1 else ZERO, m=1))
                else:
                    edges.append(BubbleEdge(tail=thick_id(node, copy), head=thick_id(child, copy), q1=child,
                                            q2=INFINITY, m=1))
    for leaf in leaves:
        vertices.append(BubbleVertex(
            id=leaf, kind="thin", limit_class="C",
            scales={k: scale(leaf, k) for k in ks}, positions={k: position(leaf, k, 1) for k in ks},
            punctures=[ZERO, INFINITY], axis=axis(leaf), tree_node=leaf))
    return BubbleGraph(vertices=vertices, edges=edges, genus=tree.genus, k_range=ks)


def normalize_orientation(edges: Iterable[BubbleEdge]) -> List[BubbleEdge]:
    """Flip edges with m <= -1 so that every edge runs branch point -> end."""
    out = []
    for e in edges:
        if e.m < 0:
            out.append(BubbleEdge(tail=e.head, head=e.tail, q1=e.q2, q2=e.q1, m=-e.m))
        else:
            out.append(e)
    return out


def to_networkx(G: BubbleGraph) -> nx.DiGraph:
    D = nx.DiGraph()
    for v in G.vertices:
        D.add_node(v.id, kind=v.kind, limit_class=v.limit_class)
    for e in G.edges:
        D.add_edge(e.tail, e.head, q1=e.q1, q2=e.q2, m=e.m)
    return D


def _branch_points(G: BubbleGraph, vid: str) -> List[Tuple[str, str, str]]:
    """(label at vid, next vertex, label at next) for edges leaving a branch point of vid."""
    out = []
    for e in G.edges:
        if e.tail == vid and e.m >= 1:
            out.append((e.q1, e.head, e.q2))
        elif e.head == vid and e.m <= -1:
            out.append((e.q2, e.tail, e.q1))
    return sorted(out)


def _ends(G: BubbleGraph, vid: str) -> List[Tuple[str, str, str]]:
    out = []
    for e in G.edges:
        if e.head == vid and e.m >= 1:
            out.append((e.q2, e.tail, e.q1))
        elif e.tail == vid and e.m <= -1:
            out.append((e.q1, e.head, e.q2))
    return sorted(out)


def _traverse(G: BubbleGraph, v: str, q: str, steps: Callable[[BubbleGraph, str], List[Tuple[str, str, str]]],
              what: str) -> List[str]:
    options = steps(G, v)
    if not options:
        return [v]
    first = [o for o in options if o[0] == q]
    if not first:
        raise ValueError(f"{q} is not a {what} of {v}")
    path = [v]
    _, current, arrival = first[0]
    while True:
        if current in path:
            raise CycleDetected(f"bubble {what} revisits {current} after {path}")
        path.append(current)
        nxt = [o for o in steps(G, current) if o[0] != arrival]
        if not nxt:
            return path
        _, current, arrival = nxt[0]


def bubble_descent(G: BubbleGraph, v: str, q: str) -> List[str]:
    """Maximal path leaving v at branch point q, never re-using the arrival point."""
    return _traverse(G, v, q, _branch_points, "branch point")


def bubble_ascent(G: BubbleGraph, v: str, q: str) -> List[str]:
    """Maximal path leaving v through its end q towards larger scales."""
    return _traverse(G, v, q, _ends, "end")


class ScaleOrder(BaseModel):
    tail: str
    head: str
    slope: float
    final_ratio: float
    passed: bool


def check_scale_order(G: BubbleGraph, factor: float = 10.0) -> List[ScaleOrder]:
    """Per edge: slope of log(s_tail / s_head) in k and the final ratio."""
    ks = sorted(G.k_range) if G.k_range else sorted(G.vertices[0].scales)
    if len(ks) < 4:
        raise ValueError("scale order needs at least four k indices")
    report = []
    for e in G.edges:
        tail, head = G.vertex(e.tail), G.vertex(e.head)
        ratios = np.array([tail.scales[k] / head.scales[k] for k in ks])
        slope = float(linregress(ks, np.log(ratios)).slope)
        final = float(ratios[-1])
        passed = slope > 0 and final > factor
        if not passed:
            logger.warning("edge %s->%s fails scale order (slope %.3f, ratio %.3g)", e.tail, e.head, slope, final)
        report.append(ScaleOrder(tail=e.tail, head=e.head, slope=slope, final_ratio=final, passed=passed))
    return report


def reduced_graph(G: BubbleGraph) -> nx.Graph:
    """G' = (V', E'): the graph without concentration vertices, undirected."""
    conc = {v.id for v in G.vertices if v.kind == "conc"}
    H = nx.Graph()
    H.add_nodes_from(v.id for v in G.vertices if v.id not in conc)
    H.add_edges_from((e.tail, e.head) for e in G.edges if e.tail not in conc and e.head not in conc)
    return H


def euler_catenoid_count(G: BubbleGraph) -> int:
    H = reduced_graph(G)
    return H.number_of_edges() - H.number_of_nodes() + 2


def first_betti_number(G: BubbleGraph) -> int:
    H = reduced_graph(G)
    betti = H.number_of_edges() - H.number_of_nodes() + nx.number_connected_components(H)
    if betti != len(nx.cycle_basis(H)):
        raise Mismatch("cycle basis size disagrees with the Euler count")
    return betti


def count_catenoids(G: BubbleGraph) -> int:
    """#{v : class C}, cross-checked against #E' - #V' + 2."""
    by_class = sum(1 for v in G.vertices if v.limit_class == "C")
    by_euler = euler_catenoid_count(G)
    if by_class != by_euler:
        raise Mismatch(f"{by_class} catenoid vertices but the Euler count gives {by_euler}")
    if by_class != G.genus + 1:
        logger.warning("%d catenoids for genus %d", by_class, G.genus)
    return by_class


def _tree_from_component(G: BubbleGraph, nodes: Iterable[str], root: str) -> TreeSpec:
    H = reduced_graph(G).subgraph(nodes)
    if not nx.is_tree(H):
        raise NotDoubleTree("two_trees", f"component rooted at {root} is not a tree")
    names = {vid: (G.vertex(vid).tree_node or vid) for vid in H.nodes}
    parent = {names[root]: None}
    for a, b in nx.bfs_edges(H, root):
        parent[names[b]] = names[a]
    try:
        return TreeSpec(parent=parent)
    except ValueError as exc:
        raise NotDoubleTree("branching", str(exc)) from exc


def leaf_fixed_isomorphism(T1: TreeSpec, T2: TreeSpec) -> Dict[str, str]:
    """gamma with D_gamma(v) = D_v, v mapped to the lowest common ancestor of D_v."""
    if set(T1.leaves()) != set(T2.leaves()):
        raise NoIsomorphism("trees have different leaf labels")
    D2 = nx.DiGraph((p, c) for c, p in T2.parent.items() if p is not None)
    gamma = {leaf: leaf for leaf in T1.leaves()}
    for v in T1.internal_nodes():
        leaves = sorted(T1.leaf_set(v))
        w = leaves[0]
        for leaf in leaves[1:]:
            w = nx.lowest_common_ancestor(D2, w, leaf)
        if T2.leaf_set(w) != T1.leaf_set(v):
            raise NoIsomorphism(f"leaf set of {v} is not the leaf set of any vertex of the second tree")
        gamma[v] = w
    if len(set(gamma.values())) != len(gamma) or len(T1.internal_nodes()) != len(T2.internal_nodes()):
        raise NoIsomorphism("leaf-set matching is not a bijection")
    return gamma


class DoubleTree(BaseModel):
    tree: TreeSpec
    second: TreeSpec
    gamma: Dict[str, str]


def double_tree_check(G: BubbleGraph, p: int, scale_band: Tuple[float, float] = (0.5, 2.0),
                      slope_tolerance: float = 0.1, position_factor: float = 2.0) -> DoubleTree:
    """Verify G = (T + T)/~ and recover T; raises NotDoubleTree naming the clause."""
    conc = [v for v in G.vertices if v.kind == "conc"]
    if len(conc) != 2 or any(v.limit_class != "S" for v in conc):
        raise NotDoubleTree("sphere_vertices", f"expected two sphere concentration vertices, found {len(conc)}")
    leaves = sorted(v.id for v in G.vertices if v.limit_class == "C")
    if len(leaves) != p + 1:
        raise NotDoubleTree("catenoid_count", f"{len(leaves)} catenoids for genus {p}")
    H = reduced_graph(G)
    inner = H.subgraph(n for n in H.nodes if n not in leaves)
    parts = [set(c) for c in nx.connected_components(inner)]
    if len(parts) != 2:
        raise NotDoubleTree("two_trees", f"removing spheres and catenoids leaves {len(parts)} components")
    roots = []
    for s in sorted(v.id for v in conc):
        attached = [e.head if e.tail == s else e.tail for e in G.edges if s in (e.tail, e.head)]
        if len(attached) != 1:
            raise NotDoubleTree("two_trees", f"sphere {s} must carry exactly one tree")
        roots.append(attached[0])
    comps = []
    for root in roots:
        owner = [c for c in parts if root in c]
        if not owner:
            raise NotDoubleTree("two_trees", f"root {root} is not a thick vertex")
        comps.append(owner[0])
    if comps[0] is comps[1]:
        raise NotDoubleTree("two_trees", "both spheres attach to the same tree")
    for leaf in leaves:
        sides = {i for i, c in enumerate(comps) for nb in H.neighbors(leaf) if nb in c}
        if sides != {0, 1} or H.degree(leaf) != 2:
            raise NotDoubleTree("leaves_shared", f"catenoid {leaf} is not attached once to each tree")
    T1 = _tree_from_component(G, comps[0] | set(leaves), roots[0])
    T2 = _tree_from_component(G, comps[1] | set(leaves), roots[1])
    try:
        gamma = leaf_fixed_isomorphism(T1, T2)
    except NoIsomorphism as exc:
        raise NotDoubleTree("isomorphism", exc.detail) from exc

    by_node = {}
    for i, comp in enumerate(comps):
        for vid in comp:
            by_node[(i, G.vertex(vid).tree_node or vid)] = G.vertex(vid)
    ks = sorted(G.k_range)
    for v in T1.internal_nodes():
        a, b = by_node[(0, v)], by_node[(1, gamma[v])]
        common = [k for k in ks if k in a.scales and k in b.scales]
        ratios = np.array([a.scales[k] / b.scales[k] for k in common])
        if ratios.min() < scale_band[0] or ratios.max() > scale_band[1]:
            raise NotDoubleTree("scale_agreement", f"{a.id} and {b.id} have scale ratios outside {scale_band}")
        if len(common) >= 2:
            slope = float(linregress(common, np.log(ratios)).slope)
            if abs(slope) > slope_tolerance:
                raise NotDoubleTree("scale_agreement", f"{a.id}/{b.id} scale ratio drifts (slope {slope:.3f})")
        for k in common:
            gap = float(np.linalg.norm(np.subtract(a.positions[k], b.positions[k])))
            if gap > position_factor * max(a.scales[k], b.scales[k]):
                raise NotDoubleTree("scale_agreement", f"{a.id} and {b.id} sit {gap:.3g} apart at k={k}")
    return DoubleTree(tree=T1, second=T2, gamma=gamma)


def isomorphic(G1: BubbleGraph, G2: BubbleGraph) -> bool:
    """Isomorphism of directed graphs respecting vertex kind and neck exponent."""
    return nx.is_isomorphic(
        to_networkx(G1), to_networkx(G2),
        node_match=lambda a, b: a["kind"] == b["kind"],
        edge_match=lambda a, b: a["m"] == b["m"],
    )


def matched_isomorphism(G1: BubbleGraph, G2: BubbleGraph, limit: int = 1000) -> Optional[Dict[str, str]]:
    """Vertex map G1 -> G2 among the kind- and m-preserving isomorphisms.

    Symmetric candidates are told apart by the scale-normalised distance of
    the final positions; None when the graphs are not isomorphic.
    """
    matcher = nx.algorithms.isomorphism.DiGraphMatcher(
        to_networkx(G1), to_networkx(G2),
        node_match=lambda a, b: a["kind"] == b["kind"],
        edge_match=lambda a, b: a["m"] == b["m"],
    )
    k1, k2 = max(G1.k_range or [0]), max(G2.k_range or [0])

    def cost(mapping: Dict[str, str]) -> float:
        total = 0.0
        for a, b in mapping.items():
            va, vb = G1.vertex(a), G2.vertex(b)
            if k1 not in va.positions or k2 not in vb.positions:
                continue
            reach = max(va.scales[k1], vb.scales[k2])
            total += float(np.linalg.norm(np.subtract(va.positions[k1], vb.positions[k2]))) / reach
        return total

    best, best_cost = None, math.inf
    for i, mapping in enumerate(matcher.isomorphisms_iter()):
        if i >= limit:
            break
        c = cost(mapping)
        if c < best_cost:
            best, best_cost = dict(mapping), c
    return best


class Telescope(BaseModel):
    offsets: Dict[int, Vec3]
    differences: List[float]
    tail: float


def position_telescoping(G: BubbleGraph, path: Sequence[str]) -> Telescope:
    """(s^{v1}_k)^-1 (y^{vn}_k - y^{v1}_k) along a descent and its Cauchy tail."""
    first, last = G.vertex(path[0]), G.vertex(path[-1])
    ks = sorted(k for k in first.scales if k in last.scales)
    offsets = {k: tuple((np.asarray(last.positions[k]) - np.asarray(first.positions[k])) / first.scales[k])
               for k in ks}
    diffs = [float(np.linalg.norm(np.subtract(offsets[b], offsets[a]))) for a, b in zip(ks[:-1], ks[1:])]
    return Telescope(offsets=offsets, differences=diffs, tail=diffs[-1] if diffs else 0.0)


class CenterBehavior(BaseModel):
    finite: bool
    limit: Optional[Vec3] = None
    on_image: Optional[bool] = None
    at_puncture: Optional[bool] = None


def center_behavior(G: BubbleGraph, centers: Dict[int, Vec3], bound: float = 50.0, step_tolerance: float = 0.1,
                    image_tolerance: float = 0.05, puncture_radius: float = 0.25) -> Dict[str, CenterBehavior]:
    """Limit of p^v_k = (p_k - y^v_k) / s^v_k for every vertex.

    Finite when the last rescaled centre is bounded and the last step is
    small. Catenoid images are tested in the axis frame (rho = cosh z), plane
    images by <p, axis> = 0, punctures against the recorded puncture images.
    """
    out = {}
    for v in G.vertices:
        ks = sorted(k for k in centers if k in v.scales)
        if len(ks) < 2:
            out[v.id] = CenterBehavior(finite=False)
            continue
        seq = [(np.asarray(centers[k]) - np.asarray(v.positions[k])) / v.scales[k] for k in ks]
        last, prev = seq[-1], seq[-2]
        norm = float(np.linalg.norm(last))
        finite = norm <= bound and float(np.linalg.norm(last - prev)) <= step_tolerance * max(1.0, norm)
        if not finite:
            out[v.id] = CenterBehavior(finite=False)
            continue
        axis = np.asarray(v.axis if v.axis is not None else (0.0, 0.0, 1.0))
        axis = axis / np.linalg.norm(axis)
        z = float(last @ axis)
        on_image = None
        if v.limit_class == "C":
            rho = float(np.linalg.norm(last - z * axis))
            on_image = abs(rho - math.cosh(z)) <= image_tolerance * math.cosh(z)
        elif v.limit_class == "P":
            on_image = abs(z) <= image_tolerance
        at_puncture = any(float(np.linalg.norm(last - np.asarray(q))) <= puncture_radius
                          for q in v.puncture_images.values())
        out[v.id] = CenterBehavior(finite=True, limit=tuple(last), on_image=on_image, at_puncture=at_puncture)
        logger.debug("center behaviour at %s: limit %s on_image=%s at_puncture=%s", v.id, tuple(last), on_image,
                     at_puncture)
    return out


def classify_inversion_type(G: BubbleGraph, behavior: Dict[str, CenterBehavior]) -> int:
    """Type 1-4 of an inverting sequence from its per-vertex centre behaviour.

    Only finite limits away from puncture images decide Types 1-3; if every
    finite limit sits at a puncture image the type is 4, and if none is finite
    only a reflection changes, which is reported as Type 3.
    """
    flags = set()
    finite_any = False
    for v in G.vertices:
        b = behavior.get(v.id)
        if b is None or not b.finite or v.kind == "conc":
            continue
        finite_any = True
        if v.limit_class == "C":
            flags.add(2 if b.on_image else 1)
        elif not b.at_puncture:
            flags.add(3)
    if len(flags) > 1:
        raise InconsistentBehavior(f"centre behaviour fits types {sorted(flags)} at once")
    if flags:
        return flags.pop()
    return 4 if finite_any else 3
