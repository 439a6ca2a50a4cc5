"""Sibuya, discrete-stable and F-stable point processes (regular case) and their functionals."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from stability.discrete_ops import branch_count, checked_total, sibuya_sample
from stability.errors import ConfigError
from stability.processes import GridFunction, IntensityMeasure, PointConfig, Window, measure_from_dict
from stability.semigroups import BranchingSemigroup, YaglomLaw

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12


@dataclass(frozen=True)
class SpectralMeasureM1:
    """Finite spectral measure on probability measures: (weight, mu_j) pairs."""

    components: Tuple[Tuple[float, IntensityMeasure], ...]

    def __post_init__(self):
        if not self.components:
            raise ConfigError("Spectral measure needs at least one component")
        for weight, mu in self.components:
            if not (weight > 0 and math.isfinite(weight)):
                raise ConfigError(f"Spectral weights must be positive and finite, got {weight}")
            if abs(mu.total_mass - 1.0) > MASS_TOL:
                raise ConfigError(
                    f"Spectral components must be probability measures (mass {mu.total_mass!r})",
                    {"mass": mu.total_mass}
                )

    @classmethod
    def single(cls, mu: IntensityMeasure, weight: float = 1.0) -> "SpectralMeasureM1":
        return cls(((float(weight), mu),))

    @property
    def window(self) -> Window:
        return self.components[0][1].window

    @property
    def total_weight(self) -> float:
        return float(sum(w for w, _ in self.components))

    def scaled(self, factor: float) -> "SpectralMeasureM1":
        return SpectralMeasureM1(tuple((w * factor, mu) for w, mu in self.components))


def spectral_from_config(window: Window, items: Sequence[Dict[str, Any]]) -> SpectralMeasureM1:
    """Spectral measure from config: list of {weight, measure}."""
    return SpectralMeasureM1(tuple(
        (float(item["weight"]), measure_from_dict(window, item["measure"])) for item in items
    ))


def _mean_deficit(mu: IntensityMeasure, h: GridFunction) -> float:
    """<1 - h, mu>"""
    return mu.integrate(h.map(lambda v: 1.0 - v))


def sibuya_pp_sample(alpha: float, mu: IntensityMeasure, rng: np.random.Generator) -> PointConfig:
    """Sibuya(alpha) many i.i.d. points from the probability measure ``mu``."""
    return mu.sample_iid(sibuya_sample(alpha, rng), rng)


def sibuya_pgfl_closed(alpha: float, mu: IntensityMeasure, h: GridFunction) -> float:
    """1 - <1 - h, mu>^alpha"""
    return 1.0 - _mean_deficit(mu, h) ** alpha


def das_pp_sample(alpha: float, sigma: SpectralMeasureM1, rng: np.random.Generator) -> PointConfig:
    """
    Poisson cluster process with Sibuya clusters.

    Component j contributes Poisson(w_j) clusters; their points are i.i.d. from mu_j,
    so all of them are drawn in one batch per component.
    """
    parts = []
    for weight, mu in sigma.components:
        n_clusters = int(rng.poisson(weight))
        if n_clusters == 0:
            continue
        total = checked_total(sibuya_sample(alpha, rng, n_clusters))
        parts.append(mu.sample_iid(total, rng))
    return PointConfig.superpose_all(sigma.window, parts)


def das_pp_pgfl_closed(alpha: float, sigma: SpectralMeasureM1, h: GridFunction) -> float:
    """exp{-sum_j w_j <1 - h, mu_j>^alpha}"""
    return math.exp(-sum(w * _mean_deficit(mu, h) ** alpha for w, mu in sigma.components))


def fstable_pp_sample(
    sg: BranchingSemigroup,
    alpha: float,
    sigma: SpectralMeasureM1,
    rng: np.random.Generator,
    yaglom: Optional[YaglomLaw] = None
) -> PointConfig:
    """Discrete-stable centre process with an independent Yaglom multiplicity per unit."""
    law = yaglom or sg.yaglom_law()
    centers = das_pp_sample(alpha, sigma, rng)
    if centers.is_null:
        return centers
    return centers.apply_units(law.sample_sum, rng)


def fstable_pp_pgfl_closed(sg: BranchingSemigroup, alpha: float, sigma: SpectralMeasureM1, h: GridFunction) -> float:
    """exp{-sum_j w_j <1 - B(h), mu_j>^alpha}"""
    b_of_h = h.map(sg.b_function)
    return math.exp(-sum(w * _mean_deficit(mu, b_of_h) ** alpha for w, mu in sigma.components))


def fstable_pp_pgfl_sibuya_form(sg: BranchingSemigroup, alpha: float, sigma: SpectralMeasureM1, h: GridFunction) -> float:
    """exp{sum_j w_j (G_Sib(mu_j)[B(h)] - 1)}"""
    b_of_h = h.map(sg.b_function)
    return math.exp(sum(w * (sibuya_pgfl_closed(alpha, mu, b_of_h) - 1.0) for w, mu in sigma.components))


def branch_op_pp(sg: BranchingSemigroup, t: float, phi: PointConfig, rng: np.random.Generator) -> PointConfig:
    """Replace every multiplicity unit by Y_{-ln t} units at the same site."""
    if not 0.0 < t <= 1.0:
        raise ConfigError(f"Branching operation needs t in (0, 1], got {t}")
    if phi.is_null or t == 1.0:
        return phi
    return phi.apply_units(lambda counts, g: branch_count(sg, t, counts, g), rng)


def branched_pgfl_closed(sg: BranchingSemigroup, t: float, pgfl, h: GridFunction) -> float:
    """G_{t o_F Phi}[h] = G_Phi[F_{-ln t}(h)] for a closed-form functional ``pgfl``."""
    s = -math.log(t)
    return pgfl(h.map(lambda v: sg.evaluate_F(s, v)))

