import math
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

Vec3 = Tuple[float, float, float]
DomainKind = Literal["rectangle", "log_polar", "cylinder"]

# neck energies are compared against eps < 8*pi/3
EPSILON_MAX = 8.0 * math.pi / 3.0


class ChartGrid(BaseModel):
    """Sample lattice of a conformal chart.

    ``log_polar`` charts store radii in ``bounds[0]`` and sample the
    computational coordinate s = log r. The angular axis of ``log_polar`` and
    ``cylinder`` charts is periodic and sampled at cell centres.
    """
    model_config = ConfigDict(frozen=True)

    domain_kind: DomainKind = "rectangle"
    bounds: Tuple[Tuple[float, float], Tuple[float, float]]
    resolution: Tuple[int, int]
    periodic: Tuple[bool, bool] = (False, False)

    @field_validator('resolution')
    def validate_resolution(cls, v):
        if min(v) < 8:
            raise ValueError('resolution must be at least 8 samples per axis')
        return v

    @field_validator('bounds')
    def validate_bounds(cls, v):
        for lo, hi in v:
            if not hi > lo:
                raise ValueError('chart bounds must have positive length')
        return v

    @model_validator(mode='after')
    def validate_kind(self):
        if self.domain_kind == "log_polar" and self.bounds[0][0] <= 0:
            raise ValueError('log-polar annulus needs inner radius > 0')
        if self.domain_kind in ("log_polar", "cylinder") and self.periodic != (False, True):
            raise ValueError('annular charts are periodic in the angular axis only')
        return self

    @classmethod
    def annulus(cls, r_in: float, r_out: float, n_radial: int, n_angular: int = 64):
        return cls(domain_kind="log_polar", bounds=((r_in, r_out), (0.0, 2 * math.pi)),
                   resolution=(n_radial, n_angular), periodic=(False, True))

    @classmethod
    def cylinder(cls, t_min: float, t_max: float, n_axial: int, n_angular: int = 64):
        return cls(domain_kind="cylinder", bounds=((t_min, t_max), (0.0, 2 * math.pi)),
                   resolution=(n_axial, n_angular), periodic=(False, True))

    @classmethod
    def square(cls, half_width: float, n: int):
        return cls(bounds=((-half_width, half_width), (-half_width, half_width)), resolution=(n, n))

    def computational_bounds(self, axis: int) -> Tuple[float, float]:
        lo, hi = self.bounds[axis]
        if axis == 0 and self.domain_kind == "log_polar":
            return math.log(lo), math.log(hi)
        return lo, hi

    def spacing(self, axis: int) -> float:
        lo, hi = self.computational_bounds(axis)
        n = self.resolution[axis]
        return (hi - lo) / n if self.periodic[axis] else (hi - lo) / (n - 1)

    def axis(self, axis: int) -> np.ndarray:
        lo, hi = self.computational_bounds(axis)
        n = self.resolution[axis]
        if self.periodic[axis]:
            return lo + (np.arange(n) + 0.5) * self.spacing(axis)
        return np.linspace(lo, hi, n)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis(0), self.axis(1), indexing="ij")

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoidal weights in computational coordinates (periodic wrap)."""
        factors = []
        for a in (0, 1):
            w = np.full(self.resolution[a], self.spacing(a))
            if not self.periodic[a]:
                w[0] *= 0.5
                w[-1] *= 0.5
            factors.append(w)
        return np.outer(factors[0], factors[1])

    def refined(self, factor: int = 2) -> "ChartGrid":
        res = tuple(
            n * factor if self.periodic[a] else (n - 1) * factor + 1
            for a, n in enumerate(self.resolution)
        )
        return self.model_copy(update={"resolution": res})


class ModelTag(str, Enum):
    P = "P"
    S = "S"
    C = "C"
    IC1 = "IC1"
    IC2 = "IC2"


class ModelKind(BaseModel):
    tag: ModelTag
    scale: float = 1.0
    center: Vec3 = (0.0, 0.0, 0.0)
    axis: Vec3 = (0.0, 0.0, 1.0)
    inversion_center: Optional[Vec3] = None
    orientation: Literal[1, -1] = 1

    @model_validator(mode='after')
    def validate_ic(self):
        if self.tag in (ModelTag.IC1, ModelTag.IC2) and self.inversion_center is None:
            raise ValueError('inverted catenoids need an inversion_center')
        return self


class ChartRequest(BaseModel):
    # None picks the per-kind default lattice
    resolution: Optional[Tuple[int, int]] = None
    half_width: float = Field(4.5, gt=0)
    truncation: Optional[float] = Field(None, gt=0)


class ThinPartGeometry(BaseModel):
    model_config = ConfigDict(frozen=True)

    l: float = Field(..., gt=0, lt=2 * math.asinh(1.0))

    @property
    def phi(self) -> float:
        return math.asin(math.sinh(self.l / 2))

    @property
    def length(self) -> float:
        return (2 * math.pi / self.l) * (math.pi - 2 * self.phi)


class TorusModulus(BaseModel):
    model_config = ConfigDict(frozen=True)

    re: float
    im: float = Field(..., gt=0)
    degenerating: bool = False

    @property
    def omega(self) -> complex:
        return complex(self.re, self.im)

    @classmethod
    def from_complex(cls, w: complex, degenerating: bool = False):
        return cls(re=w.real, im=w.imag, degenerating=degenerating)


class Functionals(BaseModel):
    W: float = Field(..., ge=0)
    E: float = Field(..., ge=0)
    A: float = Field(..., ge=0)
    V: float
    I: float
    M: float
    T: float

    @classmethod
    def from_measures(cls, W: float, E: float, A: float, V: float, M: float):
        iso = A / V ** (2.0 / 3.0) if V > 0 else float("nan")
        tot = M / math.sqrt(A) if A > 0 else float("nan")
        return cls(W=W, E=E, A=A, V=V, I=iso, M=M, T=tot)


class Zone(BaseModel):
    kind: Literal["neck", "bubble"]
    lo: float
    hi: float
    energy: float


class AnnulusDecomposition(BaseModel):
    """Alternating neck / bubble zones ordered from the outer radius inward.

    ``radii`` lists a^0 > b^0 > a^1 > ... > b^N (radial coordinate of the
    chart), ``gap_energies`` the energy of each bubble gap between necks.
    """
    radii: List[float]
    gap_energies: List[float]
    zones: List[Zone]
    epsilon: float

    @property
    def N(self) -> int:
        return len(self.gap_energies)

    @property
    def necks(self) -> List[Zone]:
        return [z for z in self.zones if z.kind == "neck"]


VertexKind = Literal["thick", "thin", "conc"]


class BubbleVertex(BaseModel):
    id: str
    kind: VertexKind
    limit_class: str = "unclassified"
    scales: Dict[int, float]
    positions: Dict[int, Vec3]
    punctures: List[str] = []
    concentration: List[str] = []
    axis: Optional[Vec3] = None
    puncture_images: Dict[str, Vec3] = {}
    copy_index: Optional[int] = None
    tree_node: Optional[str] = None

    @field_validator('scales')
    def validate_scales(cls, v):
        if any(s <= 0 for s in v.values()):
            raise ValueError('bubble scales must be strictly positive')
        return v

    @model_validator(mode='after')
    def validate_punctures(self):
        if self.kind == "thin" and len(self.punctures) != 2:
            raise ValueError(f'thin vertex {self.id} must have exactly two punctures')
        if self.kind == "conc" and self.punctures:
            raise ValueError(f'concentration vertex {self.id} has no punctures')
        return self

    def labels(self) -> List[str]:
        return list(self.punctures) + list(self.concentration)


class BubbleEdge(BaseModel):
    tail: str
    head: str
    q1: str
    q2: str
    m: int

    @field_validator('m')
    def validate_m(cls, v):
        if v == 0:
            raise ValueError('neck exponent m must be nonzero')
        return v


class BubbleGraph(BaseModel):
    vertices: List[BubbleVertex]
    edges: List[BubbleEdge]
    genus: int = Field(..., ge=0)
    k_range: List[int] = []

    @model_validator(mode='after')
    def validate_structure(self):
        ids = {v.id for v in self.vertices}
        if len(ids) != len(self.vertices):
            raise ValueError('vertex ids must be unique')
        by_id = {v.id: v for v in self.vertices}
        for e in self.edges:
            if e.tail == e.head:
                raise ValueError(f'loop at vertex {e.tail}')
            if e.tail not in ids or e.head not in ids:
                raise ValueError(f'edge {e.tail}->{e.head} references unknown vertex')
            if e.q1 not in by_id[e.tail].labels():
                raise ValueError(f'{e.q1} is not a puncture or concentration point of {e.tail}')
            if e.q2 not in by_id[e.head].labels():
                raise ValueError(f'{e.q2} is not a puncture or concentration point of {e.head}')
        return self

    def vertex(self, vid: str) -> BubbleVertex:
        for v in self.vertices:
            if v.id == vid:
                return v
        raise KeyError(vid)


class TreeSpec(BaseModel):
    """Rooted tree with labelled leaves (the catenoid set).

    ``parent`` maps every node to its parent, the root to ``None``.
    ``edge_ratio`` optionally overrides the scale-ratio schedule
    rho_e(k) = base * growth**k of the edge ending at a child.
    """
    parent: Dict[str, Optional[str]]
    edge_ratio: Dict[str, Tuple[float, float]] = {}

    @model_validator(mode='after')
    def validate_tree(self):
        roots = [n for n, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise ValueError('tree must have exactly one root')
        for n, p in self.parent.items():
            if p is not None and p not in self.parent:
                raise ValueError(f'unknown parent {p} of {n}')
        for n in self.parent:
            seen, cur = set(), n
            while cur is not None:
                if cur in seen:
                    raise ValueError('parent map contains a cycle')
                seen.add(cur)
                cur = self.parent[cur]
        for n in self.internal_nodes():
            if len(self.children(n)) < 2:
                raise ValueError(f'internal vertex {n} needs at least two children')
        if len(self.leaves()) < 2:
            raise ValueError('a double tree needs at least two leaves (p >= 1)')
        for child, (base, growth) in self.edge_ratio.items():
            if base <= 1 or growth <= 1:
                raise ValueError(f'scale ratio schedule of {child} must diverge')
        return self

    @property
    def root(self) -> str:
        return next(n for n, p in self.parent.items() if p is None)

    def children(self, node: str) -> List[str]:
        return sorted(n for n, p in self.parent.items() if p == node)

    def leaves(self) -> List[str]:
        return sorted(n for n in self.parent if not self.children(n))

    def internal_nodes(self) -> List[str]:
        return sorted(n for n in self.parent if self.children(n))

    def depth(self, node: str) -> int:
        d = 0
        while self.parent[node] is not None:
            node = self.parent[node]
            d += 1
        return d

    @property
    def genus(self) -> int:
        return len(self.leaves()) - 1

    def leaf_set(self, node: str) -> frozenset:
        if not self.children(node):
            return frozenset([node])
        return frozenset().union(*(self.leaf_set(c) for c in self.children(node)))


class FamilySpec(BaseModel):
    tree: TreeSpec
    genus: int = Field(..., ge=1)
    k_range: Tuple[int, int] = (0, 3)
    # sigma_root = root_scale * root_growth**-k
    root_scale: float = Field(1e-3, gt=0, lt=0.1)
    root_growth: float = Field(2.0, gt=1)
    # internal edges: sigma_child = sigma_parent / (base * growth**k)
    internal_ratio: Tuple[float, float] = (500.0, 2.0)
    # leaf edges: sigma_parent / waist ~ base * growth**k
    leaf_ratio: Tuple[float, float] = (2000.0, 4.0)
    # child -> polar angle about its parent; defaults to a regular polygon
    attachment_angles: Dict[str, float] = {}
    sphere_radius: float = Field(1.0, gt=0)
    overlap_exponent: float = Field(0.5, gt=0, lt=1)
    configuration: Literal["coincident", "tangent"] = "coincident"
    resolution: int = Field(64, ge=16)

    @model_validator(mode='after')
    def validate_family(self):
        if self.genus != self.tree.genus:
            raise ValueError(f'tree has {len(self.tree.leaves())} leaves, genus {self.genus} needs {self.genus + 1}')
        if self.k_range[1] < self.k_range[0]:
            raise ValueError('empty k-range')
        for base, growth in (self.internal_ratio, self.leaf_ratio):
            if base <= 1 or growth <= 1:
                raise ValueError('scale schedules must diverge (base > 1, growth > 1)')
        if self.configuration == "tangent" and any(
                self.tree.depth(leaf) != 1 for leaf in self.tree.leaves()):
            raise ValueError('the tangent configuration supports star trees only')
        return self

    def ks(self) -> List[int]:
        return list(range(self.k_range[0], self.k_range[1] + 1))


class PipelineConfig(BaseSettings):
    """Pipeline parameters, read from a KEY=value text file or JSON."""
    model_config = SettingsConfigDict(env_prefix='PIPELINE_', extra='ignore')

    resolution: int = Field(64, ge=8)
    epsilon: float = 1.0
    k_min: int = 0
    k_max: int = 3
    output_dir: str = "out"
    seed: int = 20240611
    energy_tolerance: float = Field(0.05, gt=0)
    functional_tolerance: float = Field(0.02, gt=0)
    scale_factor: float = Field(10.0, gt=1)
    slope_tolerance: float = Field(0.1, gt=0)

    @field_validator('epsilon')
    def validate_epsilon(cls, v):
        if not 0 < v < EPSILON_MAX:
            raise ValueError(f'epsilon must lie in (0, 8*pi/3), got {v}')
        return v

    @model_validator(mode='after')
    def validate_k_range(self):
        if self.k_max - self.k_min < 3:
            raise ValueError('k-range must contain at least 4 indices')
        return self


class CheckResult(BaseModel):
    name: str
    measured: float
    target: float
    tolerance: float
    passed: bool
    detail: str = ""
