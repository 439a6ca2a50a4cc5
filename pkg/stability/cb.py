"""Feller continuous-state branching processes, V-stable variables and the Cox coupling."""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from stability import streams
from stability.discrete_ops import StableParams, branch_count, das_rv_sample
from stability.errors import ConfigError
from stability.semigroups import BranchingSemigroup, LinearBirthDeath, PureDeath
from stability.stattest import TestReport, stability_identity_test, transform_band_test, two_sample_reals

logger = logging.getLogger(__name__)

COUPLING_TOL = 1e-12


@dataclass(frozen=True)
class FellerParams:
    """Feller diffusion dZ = -Z dt + sqrt(b Z) dW (drift fixed to -1)."""

    b: float

    def __post_init__(self):
        if not (self.b > 0 and math.isfinite(self.b)):
            raise ConfigError(f"Feller diffusion coefficient b must be positive, got {self.b}")

    @property
    def half_b(self) -> float:
        return 0.5 * self.b


def _finish(values, like):
    return float(values) if np.ndim(like) == 0 else values


def v_transform(p: FellerParams, t: float, z):
    """V_t(z) = z e^{-t} / (1 + (b/2)(1 - e^{-t}) z)"""
    if t < 0:
        raise ConfigError(f"t must be non-negative, got {t}")
    z_arr = np.asarray(z, dtype=float)
    if t == 0:
        return _finish(z_arr.copy(), z)
    decay = math.exp(-t)
    return _finish(z_arr * decay / (1.0 + p.half_b * (-math.expm1(-t)) * z_arr), z)


def cb_laplace_closed(p: FellerParams, x: float, t: float, z: float) -> float:
    """E exp{-z Z_t} from Z_0 = x: exp{-x V_t(z)}."""
    return math.exp(-x * v_transform(p, t, z))


def _compound_parameters(p: FellerParams, x: np.ndarray, t: float):
    c_t = p.half_b * (-math.expm1(-t))
    return x * math.exp(-t) / c_t, c_t


def feller_transition_sample(p: FellerParams, x, t: float, rng: np.random.Generator):
    """
    Exact draw of Z_t given Z_0 = x.

    Poisson(x e^{-t} / c_t) many Exponential(mean c_t) summands, c_t = (b/2)(1 - e^{-t}).
    """
    if t < 0:
        raise ConfigError(f"t must be non-negative, got {t}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ConfigError("Starting mass must be non-negative")
    if t == 0:
        return _finish(x_arr.copy(), x)
    rate, c_t = _compound_parameters(p, x_arr, t)
    n = rng.poisson(rate)
    return _finish(rng.gamma(n, c_t) * (n > 0), x)


def feller_transition_sample_conditioned(p: FellerParams, x, t: float, rng: np.random.Generator):
    """Z_t given Z_t > 0: the Poisson count is drawn zero-truncated by inversion."""
    x_arr = np.asarray(x, dtype=float)
    if not t > 0 or np.any(x_arr <= 0):
        raise ConfigError("Conditioning on survival needs t > 0 and x > 0")
    rate, c_t = _compound_parameters(p, x_arr, t)
    p_zero = np.exp(-rate)
    u = p_zero + rng.random(np.shape(rate)) * (-np.expm1(-rate))
    n = np.maximum(stats.poisson.ppf(u, rate), 1.0)
    return _finish(rng.gamma(n, c_t), x)


def cb_mult(p: FellerParams, t: float, xi, rng: np.random.Generator):
    """t o_V xi: run the process from xi for time -ln t."""
    if not 0.0 < t <= 1.0:
        raise ConfigError(f"t must lie in (0, 1], got {t}")
    if t == 1.0:
        return _finish(np.asarray(xi, dtype=float).copy(), xi)
    return feller_transition_sample(p, xi, -math.log(t), rng)


def yaglom_cb_sample(p: FellerParams, rng: np.random.Generator, size=None):
    """Quasi-stationary law: Exponential with mean b/2."""
    return rng.exponential(p.half_b, size)


def yaglom_cb_laplace(p: FellerParams, z):
    """1 / (1 + (b/2) z)"""
    z_arr = np.asarray(z, dtype=float)
    return _finish(1.0 / (1.0 + p.half_b * z_arr), z)


def yaglom_cocycle_gap(p: FellerParams, t: float, z: float) -> float:
    """|L(V_t(z)) - (1 - e^{-t} + e^{-t} L(z))|"""
    decay = math.exp(-t)
    return abs(yaglom_cb_laplace(p, v_transform(p, t, z)) - (1.0 - decay + decay * yaglom_cb_laplace(p, z)))


def thinning_identity_check(
    p: FellerParams,
    t: float,
    N: int,
    rng: np.random.Generator,
    mismatch_t: Optional[float] = None,
    workers: Optional[int] = None
) -> TestReport:
    """
    t o_V Z_inf against Bernoulli(t) * Z_inf'.

    Args:
        mismatch_t: Survival probability used on the thinning side; differs from t
            only for power controls
    """
    if not 0.0 < t <= 1.0:
        raise ConfigError(f"t must lie in (0, 1], got {t}")
    keep = t if mismatch_t is None else mismatch_t
    rng_a, rng_b = rng.spawn(2)

    def evolved(g: np.random.Generator, n: int) -> np.ndarray:
        return cb_mult(p, t, yaglom_cb_sample(p, g, n), g)

    def thinned(g: np.random.Generator, n: int) -> np.ndarray:
        return (g.random(n) < keep) * yaglom_cb_sample(p, g, n)

    a = streams.replicate_batch(evolved, N, rng_a, workers)
    b = streams.replicate_batch(thinned, N, rng_b, workers)
    report = two_sample_reals(a, b, name=f"cb-thinning[t={t:g}]")
    return report.model_copy(update={"details": {**report.details, "t": t, "thinning_t": keep}})


def vstable_sample(p: FellerParams, sp: StableParams, rng: np.random.Generator, size=None):
    """Discrete-stable many Yaglom (Exponential(mean b/2)) summands."""
    counts = np.asarray(das_rv_sample(sp, rng, 1 if size is None else size))
    out = rng.gamma(counts, p.half_b) * (counts > 0)
    return float(out.reshape(-1)[0]) if size is None else out


def vstable_laplace_closed(p: FellerParams, sp: StableParams, z):
    """exp{-c ((b/2) z / (1 + (b/2) z))^alpha}"""
    z_arr = np.asarray(z, dtype=float)
    ratio = p.half_b * z_arr / (1.0 + p.half_b * z_arr)
    return _finish(np.exp(-sp.c * ratio ** sp.alpha), z)


def vstability_test(
    p: FellerParams,
    sp: StableParams,
    t: float,
    N: int,
    rng: np.random.Generator,
    scaling_alpha: Optional[float] = None,
    workers: Optional[int] = None
) -> TestReport:
    """t^{1/alpha} o_V xi' + (1-t)^{1/alpha} o_V xi'' against xi."""
    return stability_identity_test(
        lambda g, n: vstable_sample(p, sp, g, n),
        lambda s, xi, g: cb_mult(p, s, xi, g),
        sp.alpha, t, N, rng,
        compare="reals",
        scaling_alpha=scaling_alpha,
        name=f"v-stability[t={t:g}]",
        workers=workers
    )


def _coupled_v(sg: BranchingSemigroup, p: Optional[FellerParams], t: float, w: float) -> float:
    if isinstance(sg, PureDeath):
        return w * math.exp(-t)
    return v_transform(p, t, w)


def cox_coupling_check(
    sg: BranchingSemigroup,
    p: Optional[FellerParams],
    sp: StableParams,
    N: int,
    rng: np.random.Generator,
    t: float = 0.5,
    z_grid: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
    scaling_alpha: Optional[float] = None,
    workers: Optional[int] = None
) -> TestReport:
    """
    Poisson mixture over a V-stable mass is F-stable for the coupled semigroup.

    Checks F_t(z) = 1 - V_t(1 - z) on a grid, the F-stability identity of the
    mixed-Poisson count at ``t``, and its p.g.f. against exp{-c kappa^alpha A(z)^alpha}
    with kappa = lambda / (lambda + 1).

    For PureDeath the coupled process is deterministic decay: alpha must be 1 and
    the mixing mass is the constant c.

    Raises:
        ConfigError: If b != 2 lambda, or PureDeath is paired with alpha != 1
    """
    if isinstance(sg, LinearBirthDeath):
        if p is None or abs(p.b - 2.0 * sg.lam) > COUPLING_TOL:
            raise ConfigError(
                f"Cox coupling needs b = 2 lambda (lambda={sg.lam}, b={None if p is None else p.b})"
            )
        kappa = sg.lam / (sg.lam + 1.0)

        def mixing(g: np.random.Generator, n: int) -> np.ndarray:
            return vstable_sample(p, sp, g, n)
    elif isinstance(sg, PureDeath):
        if sp.alpha != 1.0:
            raise ConfigError("The PureDeath coupling is degenerate and needs alpha = 1")
        kappa = 1.0

        def mixing(g: np.random.Generator, n: int) -> np.ndarray:
            return np.full(n, sp.c)
    else:
        raise ConfigError(f"No continuous-state counterpart for {sg.kind} semigroups")

    grid_gap = 0.0
    for s in (0.1, 0.5, 1.0, 2.0, 5.0):
        for z in z_grid:
            grid_gap = max(grid_gap, abs(sg.evaluate_F(s, z) - (1.0 - _coupled_v(sg, p, s, 1.0 - z))))
    coupling = TestReport.deterministic("coupling-grid", grid_gap, grid_gap <= COUPLING_TOL, 5 * len(z_grid),
                                        details={"tolerance": COUPLING_TOL})

    def mixed_poisson(g: np.random.Generator, n: int) -> np.ndarray:
        return g.poisson(mixing(g, n))

    rng_stab, rng_pgf = rng.spawn(2)
    stability = stability_identity_test(
        mixed_poisson,
        lambda s, x, g: branch_count(sg, s, x, g),
        sp.alpha, t, N, rng_stab,
        compare="counts",
        scaling_alpha=scaling_alpha,
        name=f"cox-f-stability[t={t:g}]",
        workers=workers
    )

    counts = streams.replicate_batch(mixed_poisson, N, rng_pgf, workers)
    estimates = []
    for z in z_grid:
        powers = np.power(z, counts)
        estimates.append((float(powers.mean()), float(powers.std(ddof=1) / math.sqrt(len(powers)))))
    targets = [math.exp(-sp.c * (kappa * sg.a_function(z)) ** sp.alpha) for z in z_grid]
    pgf = transform_band_test(estimates, targets, name="cox-pgf")

    logger.info(f"[CB] Cox coupling: grid gap {grid_gap:.2e}, stability p={stability.p_value:.4g}, pgf {pgf.verdict}")
    return TestReport.combine("cox-coupling", [coupling, stability, pgf])
