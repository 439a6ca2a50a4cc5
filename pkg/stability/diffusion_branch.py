"""Thinning-diffusion on the torus: configurations, Gaussian-mixture measures and stable constructions.

The heat kernel at time -ln t has per-coordinate variance -ln t. On the torus it is
wrapped, so it preserves total mass and the uniform density is a fixed shape.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats

from stability.errors import ConfigError
from stability.processes import (
    Grid,
    GridFunction,
    PointConfig,
    Window,
    check_placeable,
    cox_sample,
    scatter_uniform,
    thin_config
)

logger = logging.getLogger(__name__)


def _require_torus(window: Window):
    if not window.is_torus:
        raise ConfigError("Diffusion needs a torus window; box boundaries are undefined")


def _check_t(t: float):
    if not 0.0 < t <= 1.0:
        raise ConfigError(f"t must lie in (0, 1], got {t}")


def _wrapped_interval_probability(lo: np.ndarray, hi: np.ndarray, center: float, var: float, side: float) -> np.ndarray:
    """P(X mod side in [lo, hi]) for X ~ N(center, var)."""
    sd = math.sqrt(var)
    n_wraps = int(math.ceil(8.0 * sd / side)) + 1
    shifts = np.arange(-n_wraps, n_wraps + 1) * side
    upper = stats.norm.cdf((hi[:, None] + shifts - center) / sd)
    lower = stats.norm.cdf((lo[:, None] + shifts - center) / sd)
    return np.sum(upper - lower, axis=1)


@dataclass(frozen=True, eq=False)
class GaussMixMeasure:
    """
    Finite mixture of wrapped Gaussians on a torus plus a uniform (Lebesgue) part.

    Component i has mass c_i, per-coordinate variance v_i and center m_i; v_i = 0
    is an atom at m_i. ``uniform_mass`` is the total mass of the uniform part.
    """

    window: Window
    masses: np.ndarray
    variances: np.ndarray
    centers: np.ndarray
    uniform_mass: float = 0.0

    def __post_init__(self):
        _require_torus(self.window)
        masses = np.asarray(self.masses, dtype=float).reshape(-1)
        variances = np.asarray(self.variances, dtype=float).reshape(-1)
        centers = self.window.wrap(np.asarray(self.centers, dtype=float).reshape(-1, self.window.dim))
        if not (len(masses) == len(variances) == len(centers)):
            raise ConfigError("masses, variances and centers differ in length")
        if np.any(masses <= 0) or np.any(variances < 0) or self.uniform_mass < 0:
            raise ConfigError("masses must be positive, variances and uniform mass non-negative")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "uniform_mass", float(self.uniform_mass))

    @classmethod
    def atom(cls, window: Window, center: Sequence[float], mass: float = 1.0) -> "GaussMixMeasure":
        return cls(window, np.array([mass]), np.array([0.0]), np.asarray([center], dtype=float))

    @classmethod
    def uniform(cls, window: Window, total: float) -> "GaussMixMeasure":
        return cls(window, np.empty(0), np.empty(0), np.empty((0, window.dim)), float(total))

    @classmethod
    def from_dict(cls, window: Window, data: Dict[str, Any]) -> "GaussMixMeasure":
        components = data.get("components", [])
        return cls(
            window,
            np.asarray([c["mass"] for c in components], dtype=float),
            np.asarray([c.get("variance", 0.0) for c in components], dtype=float),
            np.asarray([c["center"] for c in components], dtype=float).reshape(-1, window.dim),
            float(data.get("uniform_mass", 0.0))
        )

    @property
    def n_components(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum() + self.uniform_mass)

    def cell_probabilities(self, grid: Grid) -> np.ndarray:
        """(components, cells) probability of each normalised component per grid cell."""
        probs = np.zeros((self.n_components, grid.n_cells))
        for i, (var, center) in enumerate(zip(self.variances, self.centers)):
            if var == 0.0:
                cell = grid.cell_index(center[None, :])[0]
                if cell >= 0:
                    probs[i, cell] = 1.0
                continue
            per_axis = []
            for axis in range(self.window.dim):
                edges = grid.edges(axis)
                per_axis.append(_wrapped_interval_probability(
                    edges[:-1], edges[1:], center[axis], var, self.window.sides[axis]))
            outer = per_axis[0]
            for factor in per_axis[1:]:
                outer = np.multiply.outer(outer, factor)
            probs[i] = np.asarray(outer).reshape(-1)
        return probs

    def integrate(self, u: GridFunction) -> float:
        """<u, mu>"""
        result = u.fill * self.total_mass
        shifted = u.values - u.fill
        if self.n_components:
            result += float(self.masses @ self.cell_probabilities(u.grid) @ shifted)
        if self.uniform_mass:
            result += self.uniform_mass / self.window.volume * u.grid.cell_volume * float(shifted.sum())
        return result

    def sample_poisson(self, rng: np.random.Generator) -> PointConfig:
        """Poisson process with this intensity."""
        counts = rng.poisson(self.masses)
        parts = [_component_points(self.window, center, var, int(count), rng)
                 for center, var, count in zip(self.centers, self.variances, counts) if count > 0]
        n_uniform = int(rng.poisson(self.uniform_mass)) if self.uniform_mass > 0 else 0
        if n_uniform:
            parts.append(_uniform_points(self.window, n_uniform, rng))
        return PointConfig.superpose_all(self.window, parts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "components": [
                {"mass": float(c), "variance": float(v), "center": m.tolist()}
                for c, v, m in zip(self.masses, self.variances, self.centers)
            ],
            "uniform_mass": self.uniform_mass
        }


@dataclass(frozen=True, eq=False)
class RadialShapeDecomp:
    radial: float
    shape: GaussMixMeasure


def _displaced_sites(window: Window, center: np.ndarray, var: float, count: int, rng: np.random.Generator):
    """``count`` independent wrapped-Gaussian displacements of ``center``, one site each."""
    check_placeable(count, "a Gaussian component")
    sites = window.wrap(center + math.sqrt(var) * rng.standard_normal((count, window.dim)))
    return sites, np.ones(count, dtype=np.int64)


def _component_points(window: Window, center: np.ndarray, var: float, count: int, rng: np.random.Generator) -> PointConfig:
    if var == 0.0:
        return PointConfig(window, center[None, :], np.array([count]))
    sites, mult = _displaced_sites(window, center, var, count, rng)
    return PointConfig(window, sites, mult)


def _uniform_points(window: Window, count: int, rng: np.random.Generator) -> PointConfig:
    return scatter_uniform(window, np.zeros(window.dim), window.side_array(), count, rng)


def diffuse_config(t: float, phi: PointConfig, rng: np.random.Generator) -> PointConfig:
    """
    Displace every multiplicity unit by an independent wrapped Gaussian of variance -ln t.

    Unmarked blocks spanning the torus are uniform already and stay as they are;
    other blocks are placed first.
    """
    _check_t(t)
    _require_torus(phi.window)
    if t == 1.0 or phi.is_null:
        return phi
    keep = [b for b in phi.blocks if not b.is_marked and b.spans(phi.window)]
    moving = PointConfig.superpose_all(phi.window, [
        PointConfig(phi.window, phi.locations, phi.multiplicities),
        *[b.place(phi.window, rng) for b in phi.blocks if b.is_marked or not b.spans(phi.window)]
    ])
    check_placeable(moving.total, "diffusing a configuration")
    units = np.repeat(moving.locations, moving.multiplicities, axis=0)
    sites = phi.window.wrap(units + math.sqrt(-math.log(t)) * rng.standard_normal(units.shape))
    return PointConfig(phi.window, sites, np.ones(len(sites), dtype=np.int64), tuple(keep))


def thin_diffuse_config(t: float, phi: PointConfig, rng: np.random.Generator) -> PointConfig:
    """t o_dt: each unit survives with probability t, survivors diffuse for time -ln t."""
    _check_t(t)
    _require_torus(phi.window)
    return diffuse_config(t, thin_config(t, phi, rng), rng)


def measure_op_dt(t: float, mu: GaussMixMeasure) -> GaussMixMeasure:
    """t (heat kernel at -ln t) * mu: masses times t, variances plus -ln t."""
    _check_t(t)
    return GaussMixMeasure(
        mu.window,
        mu.masses * t,
        mu.variances - math.log(t),
        mu.centers,
        mu.uniform_mass * t
    )


def spectral_decompose(mu: GaussMixMeasure) -> RadialShapeDecomp:
    """
    Factor mu = radial o_dt shape with an irreducible shape (one component of variance 0).

    Raises:
        ConfigError: For the zero measure and for purely uniform measures, which
            have no irreducible shape
    """
    if mu.total_mass == 0.0:
        raise ConfigError("Cannot decompose the zero measure")
    if mu.n_components == 0:
        raise ConfigError("A purely uniform measure has no irreducible shape")
    reduction = float(mu.variances.min())
    radial = math.exp(-reduction)
    shape = GaussMixMeasure(
        mu.window,
        mu.masses / radial,
        mu.variances - reduction,
        mu.centers,
        mu.uniform_mass / radial
    )
    return RadialShapeDecomp(radial=radial, shape=shape)


def one_sided_stable_sample(alpha: float, rng: np.random.Generator, size=None):
    """
    Positive alpha-stable draws with Laplace transform exp{-z^alpha} (Kanter's representation).

    S = [sin(a U)^a sin((1-a) U)^(1-a) / sin U]^(1/a) E^{-(1-a)/a}, U ~ Unif(0, pi), E ~ Exp(1),
    evaluated in logs.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"One-sided stable exponent must lie in (0, 1), got {alpha}")
    u = rng.uniform(0.0, math.pi, size)
    e = rng.standard_exponential(size)
    log_s = (
        (alpha * np.log(np.sin(alpha * u)) + (1.0 - alpha) * np.log(np.sin((1.0 - alpha) * u)) - np.log(np.sin(u)))
        / alpha
        - (1.0 - alpha) / alpha * np.log(e)
    )
    out = np.exp(log_s)
    return float(out) if size is None else out


def stable_measure_sample(alpha: float, total_scale: float, window: Window, rng: np.random.Generator) -> GaussMixMeasure:
    """xi = total_scale * S * Lebesgue with S one-sided alpha-stable."""
    if not total_scale > 0:
        raise ConfigError(f"total_scale must be positive, got {total_scale}")
    return GaussMixMeasure.uniform(window, total_scale * one_sided_stable_sample(alpha, rng) * window.volume)


def stable_measure_laplace_closed(alpha: float, total_scale: float, window: Window, v: float) -> float:
    """E exp{-v xi(W)} = exp{-(total_scale v |W|)^alpha}"""
    return math.exp(-(total_scale * v * window.volume) ** alpha)


def dt_stable_pp_sample(alpha: float, total_scale: float, window: Window, rng: np.random.Generator) -> PointConfig:
    """Cox process driven by :func:`stable_measure_sample`."""
    return cox_sample(lambda g: stable_measure_sample(alpha, total_scale, window, g), rng)


def levy_radial_draws(alpha: float, eps: float, rng: np.random.Generator, size=None):
    """Radials from theta_alpha normalised on (eps, 1]: P(t > x) = (x^-a - 1) / (eps^-a - 1)."""
    low = eps ** (-alpha)
    u = rng.random(size)
    return (low - u * (low - 1.0)) ** (-1.0 / alpha)


def levy_radial_sample(
    alpha: float,
    sigma_shapes: Sequence[Tuple[float, Sequence[float]]],
    eps: float,
    window: Window,
    rng: np.random.Generator
) -> GaussMixMeasure:
    """
    Poisson atoms of theta_alpha x sigma restricted to radials in (eps, 1].

    Shape j contributes Poisson(w_j (eps^-alpha - 1)) atoms, each the measure
    t o_dt delta_{center_j} for an independent radial t.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"Levy exponent must lie in (0, 1), got {alpha}")
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"Truncation eps must lie in (0, 1), got {eps}")
    masses: List[np.ndarray] = []
    centers: List[np.ndarray] = []
    for weight, center in sigma_shapes:
        if not weight > 0:
            raise ConfigError(f"Shape weights must be positive, got {weight}")
        n_atoms = int(rng.poisson(weight * (eps ** (-alpha) - 1.0)))
        if n_atoms:
            masses.append(np.atleast_1d(levy_radial_draws(alpha, eps, rng, n_atoms)))
            centers.append(np.tile(np.asarray(center, dtype=float), (n_atoms, 1)))
    if not masses:
        return GaussMixMeasure(window, np.empty(0), np.empty(0), np.empty((0, window.dim)))
    radials = np.concatenate(masses)
    return GaussMixMeasure(window, radials, -np.log(radials), np.concatenate(centers))


def levy_truncated_mass(alpha: float, weights: Sequence[float], eps: float) -> float:
    """Expected measure mass discarded below radial eps: sum_j w_j alpha eps^(1-alpha) / (1-alpha)."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"Levy exponent must lie in (0, 1), got {alpha}")
    return float(sum(weights)) * alpha * eps ** (1.0 - alpha) / (1.0 - alpha)


def levy_cox_sample(
    alpha: float,
    sigma_shapes: Sequence[Tuple[float, Sequence[float]]],
    eps: float,
    window: Window,
    rng: np.random.Generator
) -> PointConfig:
    return cox_sample(lambda g: levy_radial_sample(alpha, sigma_shapes, eps, window, g), rng)


def random_mixture(window: Window, n_components: int, rng: np.random.Generator, max_variance: float = 2.0) -> GaussMixMeasure:
    """Random mixture for round-trip checks."""
    return GaussMixMeasure(
        window,
        rng.uniform(0.1, 3.0, n_components),
        rng.uniform(0.0, max_variance, n_components),
        rng.random((n_components, window.dim)) * window.side_array()
    )
