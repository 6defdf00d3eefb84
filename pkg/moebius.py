"""Moebius transformations of R^3 stored as words of atoms.

Atoms are centred inversions, reflections through planes and similarities.
Words are kept in application order and never multiplied out.
"""
import logging
import math
from typing import Annotated, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.spatial import cKDTree
from scipy.stats import linregress

from errors import CenterOnSurface, PoleHit
from geometry import Atlas, AtlasChart, DiscreteImmersion, Jet, Surface, willmore_energy
from models import Vec3
from settings import get_settings

logger = logging.getLogger("willmore_lab.moebius")

IDENTITY3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...k,...k->...", a, b)[..., None]


class Inversion(BaseModel):
    """x -> c + (x - c)/|x - c|^2, an involution fixing the unit sphere about c."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["inversion"] = "inversion"
    center: Vec3

    def apply(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        y = x - c
        return c + y / _dot(y, y)

    def differential(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        y = x - np.asarray(self.center)
        rho2 = _dot(y, y)
        return v / rho2 - 2 * _dot(y, v) * y / rho2 ** 2

    def second_differential(self, x: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        y = x - np.asarray(self.center)
        rho2 = _dot(y, y)
        yv, yw = _dot(y, v), _dot(y, w)
        return (-2 * (yw * v + yv * w + _dot(v, w) * y) / rho2 ** 2
                + 8 * yv * yw * y / rho2 ** 3)

    def inverse(self) -> "Inversion":
        return self

    def poles(self) -> List[np.ndarray]:
        return [np.asarray(self.center)]

    def is_inverse_of(self, other) -> bool:
        return isinstance(other, Inversion) and np.allclose(self.center, other.center, rtol=0, atol=1e-14)


class Reflection(BaseModel):
    """J_nu(x) = x - 2 <x, nu> nu."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["reflection"] = "reflection"
    normal: Vec3

    @field_validator('normal')
    def validate_normal(cls, v):
        n = math.sqrt(sum(c * c for c in v))
        if n == 0:
            raise ValueError('reflection normal must be nonzero')
        return tuple(c / n for c in v)

    def apply(self, x: np.ndarray) -> np.ndarray:
        nu = np.asarray(self.normal)
        return x - 2 * _dot(x, nu) * nu

    def differential(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.apply(v)

    def second_differential(self, x, v, w):
        return np.zeros_like(v)

    def inverse(self) -> "Reflection":
        return self

    def poles(self) -> List[np.ndarray]:
        return []

    def is_inverse_of(self, other) -> bool:
        return isinstance(other, Reflection) and abs(abs(float(np.dot(self.normal, other.normal))) - 1) < 1e-14


class Similarity(BaseModel):
    """x -> scale * R x + translation."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["similarity"] = "similarity"
    scale: float = Field(1.0, gt=0)
    rotation: Tuple[Vec3, Vec3, Vec3] = IDENTITY3
    translation: Vec3 = (0.0, 0.0, 0.0)

    @field_validator('rotation')
    def validate_rotation(cls, v):
        R = np.asarray(v, dtype=float)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError('rotation must be a proper orthogonal matrix')
        return v

    def _matrix(self) -> np.ndarray:
        return self.scale * np.asarray(self.rotation, dtype=float)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self._matrix().T + np.asarray(self.translation)

    def differential(self, x, v):
        return v @ self._matrix().T

    def second_differential(self, x, v, w):
        return np.zeros_like(v)

    def inverse(self) -> "Similarity":
        Rt = np.asarray(self.rotation, dtype=float).T
        b = -(Rt @ np.asarray(self.translation)) / self.scale
        return Similarity(scale=1.0 / self.scale, rotation=_rows(Rt), translation=tuple(b))

    def poles(self) -> List[np.ndarray]:
        return []

    def is_identity(self) -> bool:
        return (abs(self.scale - 1) < 1e-15 and np.allclose(self.rotation, IDENTITY3, atol=1e-15)
                and np.allclose(self.translation, 0, atol=1e-15))

    def is_inverse_of(self, other) -> bool:
        if not isinstance(other, Similarity):
            return False
        inv = other.inverse()
        return (abs(inv.scale - self.scale) < 1e-14 * self.scale
                and np.allclose(inv.rotation, self.rotation, atol=1e-14)
                and np.allclose(inv.translation, self.translation, atol=1e-14))


def _rows(M: np.ndarray) -> Tuple[Vec3, Vec3, Vec3]:
    return tuple(tuple(float(c) for c in row) for row in M)


Atom = Annotated[Union[Inversion, Reflection, Similarity], Field(discriminator="kind")]


class MoebiusMap(BaseModel):
    """Finite word of atoms, ``word[0]`` applied first."""
    model_config = ConfigDict(frozen=True)

    word: List[Atom] = []

    def apply(self, x: np.ndarray, scale: Optional[float] = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        for atom in self.word:
            _check_poles(atom, x, scale)
            x = atom.apply(x)
        return x

    def apply_jet(self, jet: Jet, scale: Optional[float] = None) -> Jet:
        """Push a 2-jet through the word by the chain rule."""
        p, du, dv, duu, duv, dvv = jet
        for atom in self.word:
            _check_poles(atom, p, scale)
            D = lambda a: atom.differential(p, a)
            D2 = lambda a, b: atom.second_differential(p, a, b)
            duu, duv, dvv = D2(du, du) + D(duu), D2(du, dv) + D(duv), D2(dv, dv) + D(dvv)
            du, dv = D(du), D(dv)
            p = atom.apply(p)
        return Jet(p, du, dv, duu, duv, dvv)

    def inverse(self) -> "MoebiusMap":
        return MoebiusMap(word=[a.inverse() for a in reversed(self.word)])

    def __matmul__(self, other: "MoebiusMap") -> "MoebiusMap":
        return compose(self, other)


def _check_poles(atom, x: np.ndarray, scale: Optional[float]):
    poles = atom.poles()
    if not poles:
        return
    pts = x.reshape(-1, 3)
    if scale is None:
        scale = max(float(np.ptp(pts, axis=0).max()) if len(pts) > 1 else 1.0, 1.0)
    limit = get_settings().pole_exclusion * scale
    for c in poles:
        d = float(np.min(np.linalg.norm(pts - c, axis=1)))
        if d <= limit:
            raise PoleHit(f"sample at distance {d:.3e} from inversion center {tuple(c)}")


def compose(a: MoebiusMap, b: MoebiusMap) -> MoebiusMap:
    """a o b: apply b first."""
    return MoebiusMap(word=list(b.word) + list(a.word))


def simplify(m: MoebiusMap) -> MoebiusMap:
    stack: List = []
    for atom in m.word:
        if isinstance(atom, Similarity) and atom.is_identity():
            continue
        if stack and atom.is_inverse_of(stack[-1]):
            stack.pop()
        else:
            stack.append(atom)
    return MoebiusMap(word=stack)


def identity() -> MoebiusMap:
    return MoebiusMap()


def inversion(p: Sequence[float] = (0.0, 0.0, 0.0)) -> MoebiusMap:
    """I_p(x) = (x - p)/|x - p|^2."""
    p = tuple(float(c) for c in p)
    return MoebiusMap(word=[Inversion(center=p), Similarity(translation=tuple(-c for c in p))])


def reflection(nu: Sequence[float]) -> MoebiusMap:
    return MoebiusMap(word=[Reflection(normal=tuple(nu))])


def similarity(scale: float = 1.0, rotation=IDENTITY3, translation=(0.0, 0.0, 0.0)) -> MoebiusMap:
    return MoebiusMap(word=[Similarity(scale=scale, rotation=_rows(np.asarray(rotation, dtype=float)),
                                       translation=tuple(float(c) for c in translation))])


def apply(m: MoebiusMap, x: np.ndarray) -> np.ndarray:
    return m.apply(x)


def apply_immersion(m: MoebiusMap, imm: DiscreteImmersion) -> DiscreteImmersion:
    """Image immersion; an analytic sampler is carried through by composition."""
    name = imm.name
    if imm.sampler is not None:
        inner = imm.sampler
        return DiscreteImmersion.from_sampler(imm.chart, lambda U, V: m.apply_jet(inner(U, V)), name)
    if imm.position_map is not None:
        pmap = imm.position_map
        return DiscreteImmersion.from_map(imm.chart, lambda U, V: m.apply(pmap(U, V)), name)
    return DiscreteImmersion(chart=imm.chart, positions=m.apply(imm.positions), name=name)


def apply_surface(m: MoebiusMap, surface: Surface) -> Surface:
    """Image of an immersion or atlas; partition weights follow the points."""
    if isinstance(surface, DiscreteImmersion):
        return apply_immersion(m, surface)
    back = m.inverse()
    charts = []
    for chart in surface.charts:
        weight = chart.weight
        if weight is not None:
            weight = _pulled_back_weight(weight, back)
        charts.append(AtlasChart(immersion=apply_immersion(m, chart.immersion), weight=weight, role=chart.role))
    return Atlas(charts=charts, genus=surface.genus, name=surface.name)


def _pulled_back_weight(weight, back: MoebiusMap):
    def pulled(U, V, P):
        return weight(U, V, back.apply(P))
    return pulled


def conformal_invariance_check(surface: Surface, m: MoebiusMap) -> float:
    """|W(m o surface) - W(surface)|, a pure discretization diagnostic."""
    if not m.word:
        return 0.0
    defect = abs(willmore_energy(apply_surface(m, surface)) - willmore_energy(surface))
    logger.debug("conformal invariance defect %.3e", defect)
    return defect


class InversionLimit(NamedTuple):
    distances: List[float]
    defects: List[float]
    order: float


def rescaled_inversion_limit(p_seq: Sequence[Sequence[float]], points: np.ndarray) -> InversionLimit:
    """sup_K | |p|^2 I_p(x) + p - J_nu(x) | along a sequence of centres.

    The fitted order is the decay exponent of the defect in |p|.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    dists, defects = [], []
    for p in p_seq:
        p = np.asarray(p, dtype=float)
        R = float(np.linalg.norm(p))
        nu = p / R
        y = pts - p
        rescaled = R ** 2 * y / _dot(y, y) + p
        target = pts - 2 * _dot(pts, nu) * nu
        dists.append(R)
        defects.append(float(np.max(np.linalg.norm(rescaled - target, axis=1))))
    order = float("nan")
    positive = [(r, d) for r, d in zip(dists, defects) if d > 0]
    if len(positive) >= 2:
        fit = linregress(np.log([r for r, _ in positive]), np.log([d for _, d in positive]))
        order = -fit.slope
    return InversionLimit(distances=dists, defects=defects, order=order)


def choose_inversion_center(scale: float, position: Sequence[float], offset: Sequence[float],
                            samples: np.ndarray) -> np.ndarray:
    """center = s * p_tilde + y, rejected when it lies on the sampled surface."""
    center = scale * np.asarray(offset, dtype=float) + np.asarray(position, dtype=float)
    dist, _ = cKDTree(np.asarray(samples).reshape(-1, 3)).query(center)
    if dist <= 1e-6 * scale:
        raise CenterOnSurface(f"inversion center {tuple(center)} lies {dist:.2e} from the surface")
    return center


class Normalization(NamedTuple):
    map: MoebiusMap
    first_center: np.ndarray
    second_center: np.ndarray


def normalizing_map(samples: np.ndarray, scale: float, position: Sequence[float], offset: Sequence[float],
                    seed: int = 0, grid: int = 9, clearance: float = 0.05) -> Normalization:
    """I_{Q0} o I_{P}: P from the anchor bubble, Q0 by rejection sampling.

    Q0 is drawn in seeded random order from a grid over the bounding box of the
    first image and accepted once its distance to that image exceeds
    ``clearance`` times the box diameter. The farthest candidate is kept when
    none qualifies.
    """
    pts = np.asarray(samples, dtype=float).reshape(-1, 3)
    P = choose_inversion_center(scale, position, offset, pts)
    first = inversion(P)
    image = first.apply(pts)
    lo, hi = image.min(axis=0), image.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(3)]
    candidates = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    order = np.random.default_rng(seed).permutation(len(candidates))
    tree = cKDTree(image)
    dist, _ = tree.query(candidates)
    chosen = None
    for idx in order:
        if dist[idx] > clearance * diam:
            chosen = candidates[idx]
            break
        logger.debug("rejected Q0 candidate %s at distance %.3e", candidates[idx], dist[idx])
    if chosen is None:
        chosen = candidates[int(np.argmax(dist))]
        logger.warning("no Q0 candidate cleared %.2f of the diameter, using the farthest", clearance)
    return Normalization(map=compose(inversion(chosen), first), first_center=P, second_center=chosen)
