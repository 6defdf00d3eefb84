"""Discrete conformal immersions and their geometric quantities.

An immersion is a grid of points in R^3 sampled on a :class:`ChartGrid`.
First and second derivatives come from an analytic jet sampler when one is
available and from second order finite differences otherwise. All fields live
in the chart's computational coordinates (s = log r for log-polar annuli).
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from errors import DegenerateMetric, NotConformal, QuadratureUnderResolved
from models import ChartGrid, Functionals
from settings import get_settings

logger = logging.getLogger("willmore_lab.geometry")


class Jet(NamedTuple):
    position: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    duu: np.ndarray
    duv: np.ndarray
    dvv: np.ndarray


JetSampler = Callable[[np.ndarray, np.ndarray], Jet]
PositionMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


def symbolic_sampler(exprs: Sequence[sp.Expr], u: sp.Symbol, v: sp.Symbol) -> JetSampler:
    """Build a jet sampler from closed-form coordinate expressions.

    Args:
        exprs: three sympy expressions in the chart variables.
        u, v: the chart variables.

    Returns:
        A callable evaluating positions and exact first/second derivatives.
    """
    table = [
        [e for e in exprs],
        [sp.diff(e, u) for e in exprs],
        [sp.diff(e, v) for e in exprs],
        [sp.diff(e, u, 2) for e in exprs],
        [sp.diff(e, u, v) for e in exprs],
        [sp.diff(e, v, 2) for e in exprs],
    ]
    funcs = [[sp.lambdify((u, v), e, modules="numpy") for e in row] for row in table]

    def sample(U: np.ndarray, V: np.ndarray) -> Jet:
        parts = []
        for row in funcs:
            comps = [np.broadcast_to(np.asarray(f(U, V), dtype=float), U.shape) for f in row]
            parts.append(np.stack(comps, axis=-1))
        return Jet(*parts)

    return sample


def _d1(f: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)
    return np.gradient(f, h, axis=axis, edge_order=2)


def _d2(f: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(f, -1, axis=axis) - 2 * f + np.roll(f, 1, axis=axis)) / h ** 2
    g = np.moveaxis(f, axis, 0)
    out = np.empty_like(g)
    out[1:-1] = (g[2:] - 2 * g[1:-1] + g[:-2]) / h ** 2
    out[0] = (2 * g[0] - 5 * g[1] + 4 * g[2] - g[3]) / h ** 2
    out[-1] = (2 * g[-1] - 5 * g[-2] + 4 * g[-3] - g[-4]) / h ** 2
    return np.moveaxis(out, 0, axis)


def finite_difference_jet(chart: ChartGrid, positions: np.ndarray) -> Jet:
    hu, hv = chart.spacing(0), chart.spacing(1)
    pu, pv = chart.periodic
    du = _d1(positions, hu, 0, pu)
    dv = _d1(positions, hv, 1, pv)
    return Jet(
        position=positions,
        du=du,
        dv=dv,
        duu=_d2(positions, hu, 0, pu),
        duv=_d1(du, hv, 1, pv),
        dvv=_d2(positions, hv, 1, pv),
    )


@dataclass
class SurfaceFields:
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    det: np.ndarray
    normal: np.ndarray
    h11: np.ndarray
    h12: np.ndarray
    h22: np.ndarray

    @property
    def area_element(self) -> np.ndarray:
        return np.sqrt(self.det)

    @property
    def scalar_mean_curvature(self) -> np.ndarray:
        return 0.5 * (self.G * self.h11 - 2 * self.F * self.h12 + self.E * self.h22) / self.det

    @property
    def mean_curvature_vector(self) -> np.ndarray:
        return self.scalar_mean_curvature[..., None] * self.normal

    @property
    def second_fundamental_norm2(self) -> np.ndarray:
        # |II|_g^2 = tr((g^{-1} h)^2)
        s11 = (self.G * self.h11 - self.F * self.h12) / self.det
        s12 = (self.G * self.h12 - self.F * self.h22) / self.det
        s21 = (self.E * self.h12 - self.F * self.h11) / self.det
        s22 = (self.E * self.h22 - self.F * self.h12) / self.det
        return s11 ** 2 + 2 * s12 * s21 + s22 ** 2


@dataclass(eq=False)
class DiscreteImmersion:
    """Sampled immersion of a chart into R^3.

    ``sampler`` returns exact jets; ``position_map`` only positions (the
    derivatives then come from finite differences). Either one makes the
    immersion refinable.
    """
    chart: ChartGrid
    positions: np.ndarray
    sampler: Optional[JetSampler] = None
    position_map: Optional[PositionMap] = None
    name: str = ""

    def __post_init__(self):
        expected = tuple(self.chart.resolution) + (3,)
        if self.positions.shape != expected:
            raise ValueError(f"positions have shape {self.positions.shape}, chart needs {expected}")

    @classmethod
    def from_sampler(cls, chart: ChartGrid, sampler: JetSampler, name: str = ""):
        U, V = chart.mesh()
        jet = sampler(U, V)
        imm = cls(chart=chart, positions=jet.position, sampler=sampler, name=name)
        imm.__dict__["jet"] = jet
        return imm

    @classmethod
    def from_map(cls, chart: ChartGrid, position_map: PositionMap, name: str = ""):
        U, V = chart.mesh()
        return cls(chart=chart, positions=position_map(U, V), position_map=position_map, name=name)

    @property
    def analytic(self) -> bool:
        return self.sampler is not None

    @cached_property
    def jet(self) -> Jet:
        if self.sampler is not None:
            U, V = self.chart.mesh()
            return self.sampler(U, V)
        return finite_difference_jet(self.chart, self.positions)

    @cached_property
    def fields(self) -> SurfaceFields:
        return _surface_fields(self)

    def refinable(self) -> bool:
        return self.sampler is not None or self.position_map is not None

    def refined(self, factor: int = 2) -> Optional["DiscreteImmersion"]:
        return self.resampled(self.chart.refined(factor))

    def resampled(self, chart: ChartGrid) -> Optional["DiscreteImmersion"]:
        if self.sampler is not None:
            return DiscreteImmersion.from_sampler(chart, self.sampler, self.name)
        if self.position_map is not None:
            return DiscreteImmersion.from_map(chart, self.position_map, self.name)
        return None


PartitionWeight = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(eq=False)
class AtlasChart:
    immersion: DiscreteImmersion
    weight: Optional[PartitionWeight] = None
    role: str = ""

    @cached_property
    def partition(self) -> np.ndarray:
        if self.weight is None:
            return np.ones(self.immersion.chart.resolution)
        U, V = self.immersion.chart.mesh()
        return np.asarray(self.weight(U, V, self.immersion.positions), dtype=float)

    def refined(self, factor: int = 2) -> Optional["AtlasChart"]:
        imm = self.immersion.refined(factor)
        if imm is None:
            return None
        return AtlasChart(immersion=imm, weight=self.weight, role=self.role)


@dataclass(eq=False)
class Atlas:
    charts: List[AtlasChart] = field(default_factory=list)
    genus: int = 0
    name: str = ""

    def refined(self, factor: int = 2) -> Optional["Atlas"]:
        charts = [c.refined(factor) for c in self.charts]
        if any(c is None for c in charts):
            return None
        return Atlas(charts=charts, genus=self.genus, name=self.name)

    def chart(self, name: str) -> AtlasChart:
        for c in self.charts:
            if c.immersion.name == name:
                return c
        raise KeyError(name)


Surface = Union[DiscreteImmersion, Atlas]


def as_atlas(surface: Surface) -> Atlas:
    if isinstance(surface, Atlas):
        return surface
    return Atlas(charts=[AtlasChart(immersion=surface)], name=surface.name)


def _surface_fields(imm: DiscreteImmersion) -> SurfaceFields:
    E, F, G = pullback_metric(imm)
    jet = imm.jet
    det = E * G - F ** 2
    normal = np.cross(jet.du, jet.dv) / np.sqrt(det)[..., None]
    return SurfaceFields(
        E=E, F=F, G=G, det=det, normal=normal,
        h11=np.einsum("...k,...k->...", jet.duu, normal),
        h12=np.einsum("...k,...k->...", jet.duv, normal),
        h22=np.einsum("...k,...k->...", jet.dvv, normal),
    )


def pullback_metric(imm: DiscreteImmersion) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Metric coefficients (E, F, G) of the pulled back Euclidean metric."""
    jet = imm.jet
    E = np.einsum("...k,...k->...", jet.du, jet.du)
    F = np.einsum("...k,...k->...", jet.du, jet.dv)
    G = np.einsum("...k,...k->...", jet.dv, jet.dv)
    det = E * G - F ** 2
    bad = ~(det > 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DegenerateMetric(
            f"metric degenerates at {int(bad.sum())} node(s) of chart '{imm.name}', first at ({i}, {j})")
    return E, F, G


def conformal_factor(imm: DiscreteImmersion, tau: Optional[float] = None) -> np.ndarray:
    """lambda with pullback metric = e^{2 lambda} * identity.

    The default tolerance is the analytic one for sampled jets and the looser
    detector tolerance for finite-difference charts.
    """
    if tau is None:
        settings = get_settings()
        tau = settings.tau_conf_analytic if imm.analytic else settings.tau_conf_detector
    E, F, G = pullback_metric(imm)
    trace = E + G
    defect = np.maximum(np.abs(F), np.abs(E - G)) / trace
    worst = float(defect.max())
    if worst > tau:
        raise NotConformal(f"chart '{imm.name}' has relative conformality defect {worst:.3e} > {tau:.1e}")
    logger.debug("chart %s conformality defect %.3e", imm.name, worst)
    return 0.5 * np.log(E)


def gauss_map(imm: DiscreteImmersion) -> np.ndarray:
    return imm.fields.normal


def second_fundamental_form(imm: DiscreteImmersion) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (h11, h12, h22, |II|_g^2) with h_ij = <d_ij Phi, n>."""
    f = imm.fields
    return f.h11, f.h12, f.h22, f.second_fundamental_norm2


def mean_curvature(imm: DiscreteImmersion) -> np.ndarray:
    """Mean curvature vector 1/2 tr_g(II) n via the trace formula."""
    return imm.fields.mean_curvature_vector


def scalar_mean_curvature(imm: DiscreteImmersion) -> np.ndarray:
    return imm.fields.scalar_mean_curvature


def conformal_mean_curvature(imm: DiscreteImmersion, tau: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """H = e^{-2 lambda} Laplace(Phi) / 2 and its tangential defect.

    The defect is max |<H, d_i Phi>| / e^lambda over the grid, which vanishes
    for an exactly conformal chart.
    """
    lam = conformal_factor(imm, tau)
    jet = imm.jet
    conf = np.exp(-2 * lam)[..., None]
    H = 0.5 * conf * (jet.duu + jet.dvv)
    scale = np.exp(lam)
    defect = max(
        float(np.max(np.abs(np.einsum("...k,...k->...", H, jet.du)) / scale)),
        float(np.max(np.abs(np.einsum("...k,...k->...", H, jet.dv)) / scale)),
    )
    logger.debug("chart %s orthogonality defect %.3e", imm.name, defect)
    return H, defect


Density = Callable[[DiscreteImmersion], np.ndarray]


def _chart_integral(chart: AtlasChart, density: Density) -> float:
    imm = chart.immersion
    weights = imm.chart.quadrature_weights() * imm.fields.area_element * chart.partition
    return math.fsum((density(imm) * weights).ravel())


def integrate(surface: Surface, density: Density, tolerance: Optional[float] = None, label: str = "integral") -> float:
    """Partition-weighted integral of a density over every chart.

    With a ``tolerance`` the surface is resampled at twice the resolution and
    QuadratureUnderResolved is raised when the value moves by more than
    tolerance * max(1, |value|).
    """
    atlas = as_atlas(surface)
    value = math.fsum(_chart_integral(c, density) for c in atlas.charts)
    if tolerance is None:
        return value
    fine = atlas.refined(2)
    if fine is None:
        logger.debug("%s: surface not refinable, refinement check skipped", label)
        return value
    fine_value = math.fsum(_chart_integral(c, density) for c in fine.charts)
    delta = abs(fine_value - value)
    logger.debug("%s refinement delta %.3e", label, delta)
    if delta > tolerance * max(1.0, abs(value)):
        raise QuadratureUnderResolved(
            f"{label} changed by {delta:.3e} under 2x refinement ({value:.6g} -> {fine_value:.6g})")
    return value


def _willmore_density(imm):
    return imm.fields.scalar_mean_curvature ** 2


def _dirichlet_density(imm):
    return imm.fields.second_fundamental_norm2


def _unit_density(imm):
    return np.ones(imm.chart.resolution)


def _volume_density(imm):
    return -np.einsum("...k,...k->...", imm.fields.normal, imm.positions) / 3.0


def _mean_density(imm):
    return imm.fields.scalar_mean_curvature


def willmore_energy(surface: Surface, tolerance: Optional[float] = None) -> float:
    return integrate(surface, _willmore_density, tolerance, "willmore energy")


def dirichlet_energy(surface: Surface, tolerance: Optional[float] = None) -> float:
    return integrate(surface, _dirichlet_density, tolerance, "dirichlet energy")


def area(surface: Surface) -> float:
    return integrate(surface, _unit_density, label="area")


def volume(surface: Surface) -> float:
    return integrate(surface, _volume_density, label="volume")


def total_mean_curvature(surface: Surface) -> float:
    return integrate(surface, _mean_density, label="total mean curvature")


def isoperimetric_ratio(surface: Surface) -> float:
    V = volume(surface)
    return area(surface) / V ** (2.0 / 3.0) if V > 0 else float("nan")


def normalized_total_mean_curvature(surface: Surface) -> float:
    return total_mean_curvature(surface) / math.sqrt(area(surface))


def gauss_bonnet_residual(surface: Surface, genus: Optional[int] = None) -> float:
    """E - 4W + 8 pi (1 - p); vanishes for closed surfaces up to discretization."""
    p = as_atlas(surface).genus if genus is None else genus
    return dirichlet_energy(surface) - 4 * willmore_energy(surface) + 8 * math.pi * (1 - p)


def functionals(surface: Surface) -> Functionals:
    return Functionals.from_measures(
        W=willmore_energy(surface),
        E=dirichlet_energy(surface),
        A=area(surface),
        V=volume(surface),
        M=total_mean_curvature(surface),
    )


def lorentz_quasinorm(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    """Weak-L^p quasinorm (sup_t t^p mu{|f| >= t})^{1/p} over sample thresholds."""
    if p <= 1:
        raise ValueError("Lorentz exponent must exceed 1")
    f = np.abs(np.asarray(values, dtype=float)).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if f.size == 0:
        return 0.0
    if (w < 0).any():
        raise ValueError("area weights must be nonnegative")
    order = np.argsort(-f, kind="stable")
    f, w = f[order], w[order]
    mass = np.cumsum(w)
    # ties share the measure of the whole level set
    last_of_level = np.r_[f[1:] != f[:-1], True]
    return float(np.max(f[last_of_level] ** p * mass[last_of_level]) ** (1.0 / p))


def observed_order(errors: Sequence[float]) -> List[float]:
    """log2 ratios of successive errors under halving of the grid spacing."""
    return [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]
