"""Discrete integral 2-varifolds.

A varifold is a weighted cloud of atoms, each carrying a point, a unit normal
to its tangent plane, an area weight, an integer density and optionally a
mean curvature vector. First variations are evaluated against compactly
supported polynomial test fields.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial import cKDTree
from scipy.stats import linregress

from errors import NonConvergent, PoleHit
from geometry import Surface, as_atlas, gauss_map, mean_curvature
from models import Vec3

logger = logging.getLogger("willmore_lab.varifold")

# successive density estimates further apart than this are not trusted
DENSITY_JUMP = 0.2


@dataclass(eq=False)
class Varifold2:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    H: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.points)
        if self.normals.shape != (n, 3) or self.weights.shape != (n,) or self.density.shape != (n,):
            raise ValueError("atom arrays must share their length")
        if not np.all(np.isfinite(self.weights)) or (self.weights <= 0).any():
            raise ValueError("atom weights must be positive and finite")
        if (self.density < 1).any() or not np.issubdtype(self.density.dtype, np.integer):
            raise ValueError("densities must be integers >= 1")
        if self.H is not None and self.H.shape != (n, 3):
            raise ValueError("mean curvature must be given per atom")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def mass_weights(self) -> np.ndarray:
        return self.weights * self.density

    @property
    def mass(self) -> float:
        return math.fsum(self.mass_weights)

    def willmore(self) -> float:
        if self.H is None:
            raise ValueError("varifold carries no mean curvature")
        return math.fsum(self.mass_weights * np.einsum("ij,ij->i", self.H, self.H))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def union(self, other: "Varifold2") -> "Varifold2":
        H = None
        if self.H is not None and other.H is not None:
            H = np.concatenate([self.H, other.H])
        return Varifold2(
            points=np.concatenate([self.points, other.points]),
            normals=np.concatenate([self.normals, other.normals]),
            weights=np.concatenate([self.weights, other.weights]),
            density=np.concatenate([self.density, other.density]),
            H=H,
        )


def from_immersion(surface: Surface, density: Optional[Dict[str, int]] = None, default_density: int = 1,
                   with_curvature: bool = True) -> Varifold2:
    """Atoms at the quadrature nodes of every chart.

    Weights are quadrature weight times area element times partition weight;
    nodes with vanishing weight are dropped. ``density`` maps chart names to
    multiplicities.
    """
    density = density or {}
    pts, nrm, wts, dens, Hs = [], [], [], [], []
    for chart in as_atlas(surface).charts:
        imm = chart.immersion
        w = (imm.chart.quadrature_weights() * imm.fields.area_element * chart.partition).ravel()
        keep = w > 0
        pts.append(imm.positions.reshape(-1, 3)[keep])
        nrm.append(gauss_map(imm).reshape(-1, 3)[keep])
        wts.append(w[keep])
        dens.append(np.full(int(keep.sum()), density.get(imm.name, default_density), dtype=int))
        if with_curvature:
            Hs.append(mean_curvature(imm).reshape(-1, 3)[keep])
    return Varifold2(
        points=np.concatenate(pts),
        normals=np.concatenate(nrm),
        weights=np.concatenate(wts),
        density=np.concatenate(dens),
        H=np.concatenate(Hs) if with_curvature else None,
    )


def estimate_normals(points: np.ndarray, weights: np.ndarray, k: int = 12) -> np.ndarray:
    """Unit normals by weighted PCA over the k nearest atoms."""
    tree = cKDTree(points)
    _, idx = tree.query(points, k=min(k, len(points)))
    nbr = points[idx]
    w = weights[idx][..., None]
    mean = (w * nbr).sum(axis=1, keepdims=True) / w.sum(axis=1, keepdims=True)
    d = nbr - mean
    cov = np.einsum("nki,nkj->nij", w * d, d)
    _, vecs = np.linalg.eigh(cov)
    return vecs[..., 0]


def from_points(points: np.ndarray, weights: np.ndarray, density: Optional[np.ndarray] = None,
                normals: Optional[np.ndarray] = None, H: Optional[np.ndarray] = None) -> Varifold2:
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if normals is None:
        normals = estimate_normals(points, weights)
    if density is None:
        density = np.ones(len(points), dtype=int)
    return Varifold2(points=points, normals=np.asarray(normals, dtype=float), weights=weights,
                     density=np.asarray(density), H=H)


class TestField(BaseModel):
    """f(x) = (d + A (x - c)) * (1 - |x - c|^2 / rho^2)^3_+ ."""
    __test__ = False

    center: Vec3
    radius: float = Field(..., gt=0)
    direction: Vec3 = (0.0, 0.0, 0.0)
    linear: Optional[Tuple[Vec3, Vec3, Vec3]] = None

    def _parts(self, x: np.ndarray):
        y = x - np.asarray(self.center)
        q = np.einsum("ij,ij->i", y, y) / self.radius ** 2
        inside = q < 1
        base = np.where(inside, 1 - q, 0.0)
        g = np.broadcast_to(np.asarray(self.direction, dtype=float), y.shape).copy()
        A = None
        if self.linear is not None:
            A = np.asarray(self.linear, dtype=float)
            g = g + y @ A.T
        return y, base, g, A

    def value(self, x: np.ndarray) -> np.ndarray:
        _, base, g, _ = self._parts(x)
        return g * (base ** 3)[:, None]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Df[n, i, j] = d f_i / d x_j."""
        y, base, g, A = self._parts(x)
        grad_b = (-6 * base ** 2 / self.radius ** 2)[:, None] * y
        J = np.einsum("ni,nj->nij", g, grad_b)
        if A is not None:
            J = J + (base ** 3)[:, None, None] * A
        return J

    def support(self, mu: Varifold2, tree: Optional[cKDTree] = None) -> np.ndarray:
        tree = cKDTree(mu.points) if tree is None else tree
        return np.asarray(tree.query_ball_point(np.asarray(self.center), self.radius), dtype=int)


def tangential_divergence(J: np.ndarray, normals: np.ndarray) -> np.ndarray:
    return np.trace(J, axis1=1, axis2=2) - np.einsum("ni,nij,nj->n", normals, J, normals)


def first_variation(mu: Varifold2, f: TestField, idx: Optional[np.ndarray] = None) -> float:
    """Integral of the tangential divergence Div_mu f."""
    if idx is None:
        idx = f.support(mu)
    if len(idx) == 0:
        return 0.0
    div = tangential_divergence(f.jacobian(mu.points[idx]), mu.normals[idx])
    return math.fsum(mu.mass_weights[idx] * div)


def _pairing(mu: Varifold2, f: TestField, idx: np.ndarray) -> float:
    fv = f.value(mu.points[idx])
    return math.fsum(mu.mass_weights[idx] * np.einsum("ij,ij->i", fv, mu.H[idx]))


def _field_mass(mu: Varifold2, f: TestField, idx: np.ndarray) -> float:
    return math.fsum(mu.mass_weights[idx] * np.linalg.norm(f.value(mu.points[idx]), axis=1))


def test_field_family(mu: Varifold2, scales: Sequence[float] = (0.1, 0.2, 0.4), lattice: int = 5,
                      box: Optional[Tuple[Sequence[float], Sequence[float]]] = None) -> List[TestField]:
    """Fields on a lattice over the bounding box, radii scale * diameter, directions +-e_i."""
    lo, hi = (mu.points.min(axis=0), mu.points.max(axis=0)) if box is None else map(np.asarray, box)
    diam = float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))
    axes = [np.linspace(lo[i], hi[i], lattice) for i in range(3)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    fields = []
    for s in scales:
        for c in centers:
            for i in range(3):
                for sign in (1.0, -1.0):
                    d = [0.0, 0.0, 0.0]
                    d[i] = sign
                    fields.append(TestField(center=tuple(c), radius=s * diam, direction=tuple(d)))
    return fields


# keep pytest from collecting the builder when test modules import it
test_field_family.__test__ = False


def random_test_fields(mu: Varifold2, count: int, seed: int = 0, scale: float = 0.3,
                       box: Optional[Tuple[Sequence[float], Sequence[float]]] = None) -> List[TestField]:
    rng = np.random.default_rng(seed)
    lo, hi = (mu.points.min(axis=0), mu.points.max(axis=0)) if box is None else map(np.asarray, box)
    lo, hi = np.asarray(lo), np.asarray(hi)
    diam = float(np.linalg.norm(hi - lo))
    fields = []
    for _ in range(count):
        fields.append(TestField(
            center=tuple(rng.uniform(lo, hi)),
            radius=float(rng.uniform(0.5, 1.5) * scale * diam),
            direction=tuple(rng.normal(size=3)),
            linear=tuple(tuple(r) for r in rng.normal(scale=1.0 / diam, size=(3, 3))),
        ))
    return fields


def mean_curvature_residual(mu: Varifold2, fields: Iterable[TestField]) -> float:
    """max_f |int Div f + 2 int <f, H>| / mass."""
    if mu.H is None:
        raise ValueError("varifold carries no mean curvature")
    tree = cKDTree(mu.points)
    worst = 0.0
    for f in fields:
        idx = f.support(mu, tree)
        if len(idx) == 0:
            continue
        worst = max(worst, abs(first_variation(mu, f, idx) + 2 * _pairing(mu, f, idx)))
    return worst / mu.mass


def stationarity_defect(nu: Varifold2, fields: Iterable[TestField]) -> float:
    """max_f |delta nu(f)| / int |f| d nu over fields meeting the cloud."""
    tree = cKDTree(nu.points)
    worst = 0.0
    floor = 1e-12 * nu.mass
    for f in fields:
        idx = f.support(nu, tree)
        if len(idx) == 0:
            continue
        size = _field_mass(nu, f, idx)
        if size <= floor:
            continue
        worst = max(worst, abs(first_variation(nu, f, idx)) / size)
    logger.debug("stationarity defect %.3e", worst)
    return worst


def ball_mass(mu: Varifold2, center: Sequence[float], r: float, tree: Optional[cKDTree] = None) -> float:
    """theta-weighted mass of the atoms in the closed ball B_r(center).

    An atom of area w counts as a disc of radius sqrt(w / pi); atoms whose
    disc straddles the sphere of radius r contribute the linear share of it
    lying inside.
    """
    tree = cKDTree(mu.points) if tree is None else tree
    c = np.asarray(center, dtype=float)
    reach = float(np.sqrt(mu.weights.max() / math.pi)) if len(mu) else 0.0
    idx = np.asarray(tree.query_ball_point(c, r + reach), dtype=int)
    if len(idx) == 0:
        return 0.0
    d = np.linalg.norm(mu.points[idx] - c, axis=1)
    rho = np.sqrt(mu.weights[idx] / math.pi)
    share = np.clip((r - d) / (2 * np.maximum(rho, 1e-300)) + 0.5, 0.0, 1.0)
    return math.fsum(mu.mass_weights[idx] * share)


def ball_density(mu: Varifold2, x0: Sequence[float], r: float, tree: Optional[cKDTree] = None) -> float:
    """mu(B_r(x0)) / (pi r^2)."""
    return ball_mass(mu, x0, r, tree) / (math.pi * r ** 2)


class DensityEstimate(NamedTuple):
    value: float
    rounded: int
    radii: List[float]
    estimates: List[float]


def default_radii(mu: Varifold2, x0: Sequence[float], tree: cKDTree) -> List[float]:
    """sqrt(2)-geometric radii from three local spacings to 1.5 decades above, capped by the cloud size."""
    _, idx = tree.query(np.asarray(x0, dtype=float), k=min(32, len(mu)))
    local = mu.points[np.atleast_1d(idx)]
    spacing = float(np.median(cKDTree(local).query(local, k=2)[0][:, 1]))
    r_min = 3 * spacing
    r_max = min(r_min * 10 ** 1.5, 0.45 * mu.diameter())
    if r_max <= r_min:
        r_max = 2 * r_min
    n = max(int(math.floor(2 * math.log2(r_max / r_min))) + 1, 3)
    return list(r_min * np.sqrt(2) ** np.arange(n))


def _extrapolate(radii: Sequence[float], estimates: Sequence[float], abscissa: np.ndarray) -> float:
    for a, b in zip(estimates[:-1], estimates[1:]):
        if abs(a - b) > DENSITY_JUMP:
            raise NonConvergent(f"density estimates {a:.3f} and {b:.3f} differ by more than {DENSITY_JUMP}")
    if len(radii) < 2:
        return float(estimates[0])
    fit = linregress(abscissa, estimates)
    return float(fit.intercept)


def density(mu: Varifold2, x0: Sequence[float], radii: Optional[Sequence[float]] = None) -> DensityEstimate:
    """Theta^2(mu, x0), extrapolated linearly in r to r = 0."""
    tree = cKDTree(mu.points)
    radii = list(radii) if radii is not None else default_radii(mu, x0, tree)
    estimates = [ball_density(mu, x0, r, tree) for r in radii]
    logger.debug("density estimates at %s: %s", tuple(x0), np.round(estimates, 4))
    value = _extrapolate(radii, estimates, np.asarray(radii))
    return DensityEstimate(value=value, rounded=int(round(value)), radii=list(radii), estimates=estimates)


def density_at_infinity(mu: Varifold2, radii: Optional[Sequence[float]] = None) -> DensityEstimate:
    """Theta^2(mu, infinity) from balls about the origin, extrapolated in 1/r."""
    tree = cKDTree(mu.points)
    if radii is None:
        norms = np.linalg.norm(mu.points, axis=1)
        r_hi = 0.5 * float(norms.max())
        r_lo = min(float(np.median(norms)), r_hi / 4)
        radii = list(np.geomspace(r_lo, r_hi, 8))
    radii = list(radii)
    estimates = [ball_density(mu, np.zeros(3), r, tree) for r in radii]
    value = _extrapolate(radii, estimates, 1.0 / np.asarray(radii))
    return DensityEstimate(value=value, rounded=int(round(value)), radii=radii, estimates=estimates)


class Monotonicity(NamedTuple):
    lhs: float
    rhs: float
    residual: float
    density: float


def monotonicity_residual(mu: Varifold2, x0: Sequence[float], radii: Optional[Sequence[float]] = None,
                          theta: Optional[float] = None) -> Monotonicity:
    """pi Theta + int |H/2 + y_perp/|y|^2|^2 against W/4, y = x - x0."""
    if mu.H is None:
        raise ValueError("varifold carries no mean curvature")
    x0 = np.asarray(x0, dtype=float)
    if theta is None:
        theta = density(mu, x0, radii).value
    y = mu.points - x0
    rho2 = np.einsum("ij,ij->i", y, y)
    keep = rho2 > 1e-24
    y_perp = np.einsum("ij,ij->i", y, mu.normals)[:, None] * mu.normals
    vec = mu.H[keep] / 2 + y_perp[keep] / rho2[keep, None]
    integral = math.fsum(mu.mass_weights[keep] * np.einsum("ij,ij->i", vec, vec))
    lhs = math.pi * theta + integral
    rhs = mu.willmore() / 4
    return Monotonicity(lhs=lhs, rhs=rhs, residual=lhs - rhs, density=theta)


def li_yau_gap(mu: Varifold2, x0: Sequence[float], radii: Optional[Sequence[float]] = None) -> float:
    """W / 4 pi - Theta^2(mu, x0); nonnegative up to discretization."""
    return mu.willmore() / (4 * math.pi) - density(mu, x0, radii).value


def _check_clearance(mu: Varifold2, x0: np.ndarray, scale: Optional[float] = None):
    scale = scale or max(mu.diameter(), 1.0)
    d = float(np.min(np.linalg.norm(mu.points - x0, axis=1)))
    if d <= 1e-6 * scale:
        raise PoleHit(f"atom at distance {d:.3e} from the inversion center")


def pushforward_inversion(mu: Varifold2, x0: Sequence[float], scale: Optional[float] = None) -> Varifold2:
    """Image under I_{x0}(x) = (x - x0)/|x - x0|^2.

    Weights pick up the area Jacobian |x - x0|^-4, normals the reflection
    I - 2 y y^T / |y|^2 and curvature H -> R (|y|^2 H + 2 y_perp).
    """
    x0 = np.asarray(x0, dtype=float)
    _check_clearance(mu, x0, scale)
    y = mu.points - x0
    rho2 = np.einsum("ij,ij->i", y, y)
    yhat = y / np.sqrt(rho2)[:, None]

    def reflect(a):
        return a - 2 * np.einsum("ij,ij->i", a, yhat)[:, None] * yhat

    H = None
    if mu.H is not None:
        y_perp = np.einsum("ij,ij->i", y, mu.normals)[:, None] * mu.normals
        H = reflect(rho2[:, None] * mu.H + 2 * y_perp)
    return Varifold2(points=y / rho2[:, None], normals=reflect(mu.normals), weights=mu.weights / rho2 ** 2,
                     density=mu.density.copy(), H=H)


def mass_under_inversion(mu: Varifold2, x0: Sequence[float]) -> float:
    """sum theta w / |x - x0|^4, the area formula for I_{x0}."""
    y = mu.points - np.asarray(x0, dtype=float)
    rho2 = np.einsum("ij,ij->i", y, y)
    return math.fsum(mu.mass_weights / rho2 ** 2)


def inversion_divergence_identity(mu: Varifold2, x0: Sequence[float], f: TestField) -> float:
    """Atomwise residual of Div_nu f(I(x)) = Div_mu g(x) - 4 <y, g>/|y|^2.

    g = DI(x)^{-1} f(I(x)) = M F with M = |y|^2 Id - 2 y y^T, F = f(I(x)).
    Returns max |lhs - rhs| over max(|lhs| + |rhs|), zero when both vanish.
    """
    x0 = np.asarray(x0, dtype=float)
    _check_clearance(mu, x0)
    y = mu.points - x0
    rho2 = np.einsum("ij,ij->i", y, y)
    ix = y / rho2[:, None]
    eye = np.eye(3)[None]
    M = rho2[:, None, None] * eye - 2 * np.einsum("ni,nj->nij", y, y)
    R = M / rho2[:, None, None]

    F = f.value(ix)
    DF = f.jacobian(ix)
    nu_image = np.einsum("nij,nj->ni", R, mu.normals)
    lhs = tangential_divergence(DF, nu_image)

    g = np.einsum("nij,nj->ni", M, F)
    yF = np.einsum("ni,ni->n", y, F)
    Dg = (2 * np.einsum("ni,nj->nij", F, y) - 2 * yF[:, None, None] * eye - 2 * np.einsum("ni,nj->nij", y, F)
          + np.einsum("nij,njk,nkl->nil", M, DF, M) / rho2[:, None, None] ** 2)
    rhs = tangential_divergence(Dg, mu.normals) - 4 * np.einsum("ni,ni->n", y, g) / rho2

    scale = float(np.max(np.abs(lhs) + np.abs(rhs)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(lhs - rhs))) / scale
