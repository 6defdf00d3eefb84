"""Closed-form bubble models and thin-part geometry.

Planes, round spheres, catenoids and inverted catenoids come with exact jet
samplers built from sympy expressions. The thin-part helpers describe the
hyperbolic cylinder metric and the torus modulus of a degenerating family.
"""
import logging
import math
from typing import Callable, Literal, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from pydantic import BaseModel
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize
from scipy.special import erfc
from scipy.stats import linregress

from errors import (AmbiguousOrder, ICCenterMisclassified, InvalidParameters, NonConvergence, OutOfRange,
                    ZeroOrder)
from geometry import Atlas, AtlasChart, DiscreteImmersion, Surface, conformal_factor, symbolic_sampler
from models import ChartGrid, ChartRequest, ModelKind, ModelTag, ThinPartGeometry, TorusModulus
from moebius import apply_immersion, inversion
from settings import get_settings

logger = logging.getLogger("willmore_lab.model_surfaces")

u, v = sp.symbols("u v", real=True)

# width (in log|z|) of the erfc blend between the two stereographic charts
STEREO_BLEND = 0.35

DEFAULT_RESOLUTION = {
    ModelTag.P: (64, 64),
    ModelTag.S: (96, 96),
    ModelTag.C: (128, 64),
    ModelTag.IC1: (256, 64),
    ModelTag.IC2: (256, 64),
}


def rotation_to(axis: Sequence[float]) -> np.ndarray:
    """Rotation taking e3 to ``axis`` (Rodrigues)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    e3 = np.array([0.0, 0.0, 1.0])
    c = float(np.dot(e3, a))
    if c < -1 + 1e-12:
        return np.diag([1.0, -1.0, -1.0])
    k = np.cross(e3, a)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + K + K @ K / (1 + c)


def place_exprs(exprs, scale: float, center: Sequence[float], axis: Sequence[float]):
    R = rotation_to(axis)
    return [float(center[i]) + scale * sum(float(R[i, j]) * exprs[j] for j in range(3)) for i in range(3)]


def _on_log_polar(exprs):
    """Rewrite planar expressions in x + iy = e^{s + i theta}."""
    return [e.subs({u: sp.exp(u) * sp.cos(v), v: sp.exp(u) * sp.sin(v)}, simultaneous=True) for e in exprs]


def stereographic_exprs(north: bool):
    """Inverse stereographic projection; ``north`` puts z = 0 at the north pole.

    Both charts induce the inward normal on the unit sphere.
    """
    r2 = u ** 2 + v ** 2
    if north:
        return [2 * u / (1 + r2), -2 * v / (1 + r2), (1 - r2) / (1 + r2)]
    return [2 * u / (1 + r2), 2 * v / (1 + r2), (r2 - 1) / (1 + r2)]


def catenoid_exprs():
    return [sp.cosh(u) * sp.cos(v), sp.cosh(u) * sp.sin(v), u]


def flip_exprs(exprs, orientation: int):
    return exprs if orientation == 1 else [e.subs(v, -v) for e in exprs]


def _stereo_weight():
    def weight(U, V, P):
        r = np.hypot(U, V)
        return 0.5 * erfc(np.log(r) / STEREO_BLEND)
    return weight


def sphere_atlas(radius: float = 1.0, center: Sequence[float] = (0.0, 0.0, 0.0), orientation: int = 1,
                 half_width: float = 4.5, n: int = 96) -> Atlas:
    """Round sphere as two stereographic charts glued by an erfc partition."""
    if radius <= 0:
        raise InvalidParameters(f"sphere radius must be positive, got {radius}")
    grid = ChartGrid.square(half_width, n)
    charts = []
    for north in (False, True):
        exprs = place_exprs(flip_exprs(stereographic_exprs(north), orientation), radius, center, (0, 0, 1))
        name = "sphere_north" if north else "sphere_south"
        imm = DiscreteImmersion.from_sampler(grid, symbolic_sampler(exprs, u, v), name)
        charts.append(AtlasChart(immersion=imm, weight=_stereo_weight(), role="sphere"))
    return Atlas(charts=charts, genus=0, name="sphere")


def plane_model(scale: float = 1.0, center=(0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0), orientation: int = 1,
                half_width: float = 4.5, n: int = 64) -> DiscreteImmersion:
    if scale <= 0:
        raise InvalidParameters(f"plane scale must be positive, got {scale}")
    exprs = place_exprs(flip_exprs([u, v, sp.Integer(0)], orientation), scale, center, axis)
    return DiscreteImmersion.from_sampler(ChartGrid.square(half_width, n), symbolic_sampler(exprs, u, v), "plane")


def catenoid_truncation(eps_geo: Optional[float] = None) -> float:
    """|t| bound whose discarded tails carry Dirichlet energy below eps_geo."""
    eps = get_settings().eps_geo if eps_geo is None else eps_geo
    return 4.0 + math.log(1.0 / eps)


def catenoid_model(scale: float = 1.0, center=(0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0), orientation: int = 1,
                   truncation: Optional[float] = None, resolution: Tuple[int, int] = (128, 64)) -> DiscreteImmersion:
    if scale <= 0:
        raise InvalidParameters(f"catenoid scale must be positive, got {scale}")
    T = catenoid_truncation() if truncation is None else truncation
    exprs = place_exprs(flip_exprs(catenoid_exprs(), orientation), scale, center, axis)
    grid = ChartGrid.cylinder(-T, T, *resolution)
    return DiscreteImmersion.from_sampler(grid, symbolic_sampler(exprs, u, v), "catenoid")


def distance_to_catenoid(point: Sequence[float], scale: float = 1.0, center=(0.0, 0.0, 0.0),
                         axis=(0.0, 0.0, 1.0), truncation: Optional[float] = None) -> float:
    """Distance from ``point`` to the placed catenoid (dense sample then BFGS)."""
    T = catenoid_truncation() if truncation is None else truncation
    R = rotation_to(axis)
    q = R.T @ (np.asarray(point, dtype=float) - np.asarray(center, dtype=float)) / scale
    t, th = np.meshgrid(np.linspace(-T, T, 801), np.linspace(0, 2 * np.pi, 400, endpoint=False), indexing="ij")
    pts = np.stack([np.cosh(t) * np.cos(th), np.cosh(t) * np.sin(th), t], axis=-1)
    d2 = np.sum((pts - q) ** 2, axis=-1)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)

    def objective(x):
        p = np.array([math.cosh(x[0]) * math.cos(x[1]), math.cosh(x[0]) * math.sin(x[1]), x[0]])
        pt = np.array([math.sinh(x[0]) * math.cos(x[1]), math.sinh(x[0]) * math.sin(x[1]), 1.0])
        pth = np.array([-math.cosh(x[0]) * math.sin(x[1]), math.cosh(x[0]) * math.cos(x[1]), 0.0])
        r = p - q
        return float(r @ r), np.array([2 * r @ pt, 2 * r @ pth])

    res = minimize(objective, x0=[t[i, j], th[i, j]], jac=True, method="BFGS", options={"gtol": 1e-14})
    best = min(float(res.fun), float(d2[i, j]))
    return scale * math.sqrt(max(best, 0.0))


def inverted_catenoid_model(kind: ModelKind, truncation: Optional[float] = None,
                            resolution: Tuple[int, int] = (256, 64)) -> DiscreteImmersion:
    """I_p o catenoid with p = kind.inversion_center, checked against the IC tag."""
    p = kind.inversion_center
    dist = distance_to_catenoid(p, kind.scale, kind.center, kind.axis, truncation)
    on_image = dist < kind.scale * 1e-6
    logger.debug("inversion center %s at distance %.3e from the catenoid", p, dist)
    if kind.tag == ModelTag.IC1 and not on_image:
        raise ICCenterMisclassified(f"IC1 needs the inversion center on the catenoid, distance is {dist:.3e}")
    if kind.tag == ModelTag.IC2 and on_image:
        raise ICCenterMisclassified(f"IC2 needs the inversion center off the catenoid, distance is {dist:.3e}")
    cat = catenoid_model(kind.scale, kind.center, kind.axis, kind.orientation, truncation, resolution)
    imm = apply_immersion(inversion(p), cat)
    imm.name = kind.tag.value.lower()
    return imm


def make_model(kind: ModelKind, request: Optional[ChartRequest] = None) -> Surface:
    """Analytic surface for a taxonomy entry.

    Spheres come back as a two-chart :class:`Atlas`, every other kind as a
    single chart immersion.
    """
    request = request or ChartRequest()
    if kind.scale <= 0:
        raise InvalidParameters(f"model scale must be positive, got {kind.scale}")
    res = request.resolution or DEFAULT_RESOLUTION[kind.tag]
    if kind.tag == ModelTag.P:
        return plane_model(kind.scale, kind.center, kind.axis, kind.orientation, request.half_width, res[0])
    if kind.tag == ModelTag.S:
        return sphere_atlas(kind.scale, kind.center, kind.orientation, request.half_width, res[0])
    if kind.tag == ModelTag.C:
        return catenoid_model(kind.scale, kind.center, kind.axis, kind.orientation, request.truncation, res)
    return inverted_catenoid_model(kind, request.truncation, res)


def ic_kind(tag: ModelTag, scale: float = 1.0) -> ModelKind:
    """IC model with the canonical centre: the waist point for IC1, the axis centre for IC2."""
    p = (scale, 0.0, 0.0) if tag == ModelTag.IC1 else (0.0, 0.0, 0.0)
    return ModelKind(tag=tag, scale=scale, inversion_center=p)


def annulus_model(exprs, r_in: float, r_out: float, n_radial: int = 128, n_angular: int = 64,
                  name: str = "annulus") -> DiscreteImmersion:
    """Planar-chart expressions in (u, v) = (x, y) sampled on a log-polar annulus."""
    grid = ChartGrid.annulus(r_in, r_out, n_radial, n_angular)
    return DiscreteImmersion.from_sampler(grid, symbolic_sampler(_on_log_polar(exprs), u, v), name)


def branched_plane(m: int, r_in: float = 1e-2, r_out: float = 1.0, n_radial: int = 128) -> DiscreteImmersion:
    """z -> z^m / m, branched of order m - 1 at the origin."""
    z = (u + sp.I * v) ** m / m
    exprs = [sp.re(sp.expand(z)), sp.im(sp.expand(z)), sp.Integer(0)]
    return annulus_model(exprs, r_in, r_out, n_radial, name=f"branched_plane_{m}")


def catenoid_end(r_in: float = 10.0, r_out: float = 1e4, n_radial: int = 128) -> DiscreteImmersion:
    """Upper catenoid end in z = e^{t + i theta}."""
    grid = ChartGrid.annulus(r_in, r_out, n_radial, 64)
    return DiscreteImmersion.from_sampler(grid, symbolic_sampler(catenoid_exprs(), u, v), "catenoid_end")


def mercator_sphere(resolution: Tuple[int, int] = (128, 64), band: float = 2.0) -> DiscreteImmersion:
    """Unit sphere in Mercator coordinates, derivatives by finite differences."""
    def position(T, TH):
        s = 1.0 / np.cosh(T)
        return np.stack([s * np.cos(TH), s * np.sin(TH), np.tanh(T)], axis=-1)
    return DiscreteImmersion.from_map(ChartGrid.cylinder(-band, band, *resolution), position, "mercator")


def clifford_torus(n: int = 64) -> Atlas:
    """Stereographic image of (cos u, sin u, cos v, sin v)/sqrt(2)."""
    denom = sp.sqrt(2) - sp.sin(v)
    exprs = [sp.cos(u) / denom, sp.sin(u) / denom, sp.cos(v) / denom]
    grid = ChartGrid(bounds=((0.0, 2 * math.pi), (0.0, 2 * math.pi)), resolution=(n, n), periodic=(True, True))
    imm = DiscreteImmersion.from_sampler(grid, symbolic_sampler(exprs, u, v), "clifford_torus")
    return Atlas(charts=[AtlasChart(immersion=imm)], genus=1, name="clifford_torus")


def thin_cylinder_model(geom: ThinPartGeometry, n_radial: int = 256, n_angular: int = 64) -> DiscreteImmersion:
    """Flat round cylinder over the annulus e^{-L} <= r <= 1.

    Sampled as (cos theta, sin theta, -log r) / sqrt(2 pi l); W = pi L / 2.
    """
    c = 1.0 / math.sqrt(2 * math.pi * geom.l)
    exprs = [c * sp.cos(v), c * sp.sin(v), -c * u]
    grid = ChartGrid.annulus(math.exp(-geom.length), 1.0, n_radial, n_angular)
    return DiscreteImmersion.from_sampler(grid, symbolic_sampler(exprs, u, v), "thin_cylinder")


def revolution_surface(turning: Callable[[np.ndarray], np.ndarray], t_range: Tuple[float, float],
                       resolution: Tuple[int, int] = (512, 64), rho0: float = 1.0, oversample: int = 8,
                       name: str = "revolution") -> DiscreteImmersion:
    """Conformal surface of revolution from a turning angle phi(t).

    rho'/rho = cos(phi), zeta' = rho sin(phi); the chart (t, theta) is
    conformal with energy density (phi'^2 + sin^2 phi) dt dtheta.
    """
    t0, t1 = t_range

    def position(T, TH):
        ts = T[:, 0]
        fine = np.linspace(t0, t1, (len(ts) - 1) * oversample + 1)
        phi = turning(fine)
        log_rho = np.log(rho0) + cumulative_trapezoid(np.cos(phi), fine, initial=0.0)
        rho = np.exp(log_rho)
        zeta = cumulative_trapezoid(rho * np.sin(phi), fine, initial=0.0)
        r = np.interp(ts, fine, rho)[:, None]
        z = np.interp(ts, fine, zeta)[:, None]
        return np.stack([r * np.cos(TH), r * np.sin(TH), np.broadcast_to(z, TH.shape)], axis=-1)

    return DiscreteImmersion.from_map(ChartGrid.cylinder(t0, t1, *resolution), position, name)


def thin_metric_coeff(geom: ThinPartGeometry, t):
    """Conformal coefficient (l / (2 pi sin(l t / 2 pi + phi)))^2 on [0, L]."""
    t_arr = np.asarray(t, dtype=float)
    L = geom.length
    if np.any(t_arr < -1e-12 * L) or np.any(t_arr > L * (1 + 1e-12)):
        raise OutOfRange(f"t must lie in [0, {L:.6g}]")
    val = (geom.l / (2 * np.pi * np.sin(geom.l * t_arr / (2 * np.pi) + geom.phi))) ** 2
    return float(val) if np.ndim(val) == 0 else val


def cylinder_chart(geom: ThinPartGeometry, r: float, theta: float) -> Tuple[float, float]:
    L = geom.length
    if not math.exp(-L) * (1 - 1e-12) <= r <= 1 + 1e-12:
        raise OutOfRange(f"radius {r} outside [e^-L, 1]")
    return math.log(r) + L, theta


def inverse_cylinder_chart(geom: ThinPartGeometry, t: float, theta: float) -> Tuple[float, float]:
    L = geom.length
    if not -1e-12 * L <= t <= L * (1 + 1e-12):
        raise OutOfRange(f"t = {t} outside [0, {L:.6g}]")
    return math.exp(t - L), theta


def reduce_modulus(omega: TorusModulus, max_iter: int = 1000, threshold: Optional[float] = None) -> TorusModulus:
    """PSL2(Z) representative in the closed fundamental domain.

    Boundary identifications: Re = -1/2 goes to +1/2, and points on the unit
    circle with Re < 0 go to their mirror image under z -> -1/z.
    """
    threshold = get_settings().degeneration_threshold if threshold is None else threshold
    z = omega.omega
    tol = 1e-12
    for _ in range(max_iter):
        z = complex(z.real - math.floor(z.real + 0.5), z.imag)
        if abs(z) < 1 - tol:
            z = -1 / z
            continue
        if z.real < -0.5 + tol:
            z += 1
        if abs(abs(z) - 1) <= tol and z.real < -tol:
            z = -1 / z
        break
    else:
        raise NonConvergence(f"modulus reduction of {omega.omega} did not settle in {max_iter} steps")
    return TorusModulus.from_complex(z, degenerating=z.imag > threshold)


def torus_modulus_from_length(l: float) -> TorusModulus:
    """Modulus i L(l) / 2 pi of the torus closed up from the thin cylinder."""
    geom = ThinPartGeometry(l=l)
    return TorusModulus(re=0.0, im=geom.length / (2 * math.pi))


class EndOrderFit(BaseModel):
    m: int
    coefficient: float
    slope: float
    residual: float
    growth_ratio: float
    growth_consistent: bool


def end_order_fit(imm: DiscreteImmersion, end: Literal["infinity", "puncture"] = "infinity",
                  tau: Optional[float] = None) -> EndOrderFit:
    """Order m and coefficient e^omega of an end or branch point.

    The circle averaged flat conformal factor lambda - log r is regressed on
    log r; its slope is m - 1. The growth ratio |Phi - Phi_lim| / |z|^m at the
    extreme ring is compared with e^omega / |m|.
    """
    if imm.chart.domain_kind not in ("log_polar", "cylinder"):
        raise InvalidParameters("end order fits need a log-polar or cylinder chart")
    s = imm.chart.axis(0)
    if (s[-1] - s[0]) / math.log(10) < 2 - 1e-9:
        raise InvalidParameters("end order fits need at least two decades of radii")
    lam = conformal_factor(imm, tau)
    flat = lam.mean(axis=1) - s
    fit = linregress(s, flat)
    nearest = round(fit.slope)
    residual = abs(fit.slope - nearest)
    logger.debug("end order slope %.4f residual %.4f", fit.slope, residual)
    if residual > 0.2:
        raise AmbiguousOrder(f"slope {fit.slope:.3f} is {residual:.3f} from an integer")
    m = int(nearest) + 1
    if m == 0:
        raise ZeroOrder("fitted end order rounds to zero")
    idx = -1 if end == "infinity" else 0
    coefficient = math.exp(flat[idx] - (m - 1) * s[idx])
    ring = imm.positions[idx]
    finite_limit = (end == "infinity" and m <= -1) or (end == "puncture" and m >= 1)
    offset = ring - ring.mean(axis=0) if finite_limit else ring
    growth = float(np.median(np.linalg.norm(offset, axis=-1))) / math.exp(m * s[idx])
    expected = coefficient / abs(m)
    consistent = abs(growth - expected) <= 0.05 * expected
    if not consistent:
        logger.warning("growth ratio %.4g disagrees with e^omega/|m| = %.4g", growth, expected)
    return EndOrderFit(m=m, coefficient=coefficient, slope=float(fit.slope), residual=residual,
                       growth_ratio=growth, growth_consistent=consistent)
