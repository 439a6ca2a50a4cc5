"""Branching operation on counts, Sibuya and discrete-stable samplers."""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from stability.errors import ConfigError, SimulationError
from stability.semigroups import BranchingSemigroup, YaglomLaw

logger = logging.getLogger(__name__)

# Sibuya draws at or above this raise SimulationError; int64 sums stay exact below it
SIBUYA_CAP = 2 ** 62
# Smallest sampled exponent: P(K >= SIBUYA_CAP) is about 2e-7 here and grows fast below
SIBUYA_MIN_ALPHA = 0.35


@dataclass(frozen=True)
class StableParams:
    """
    Exponent alpha and scale c > 0 of exp{-c A(z)^alpha}.

    Samplers draw Sibuya summands, so alpha is limited to [SIBUYA_MIN_ALPHA, 1].
    """

    alpha: float
    c: float

    def __post_init__(self):
        if not SIBUYA_MIN_ALPHA <= self.alpha <= 1.0:
            raise ConfigError(
                f"Stability exponent must lie in [{SIBUYA_MIN_ALPHA}, 1], got {self.alpha}",
                {"alpha": self.alpha, "min_alpha": SIBUYA_MIN_ALPHA}
            )
        if not self.c > 0.0:
            raise ConfigError(f"Scale c must be positive, got {self.c}")


def _check_alpha(alpha: float):
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"Sibuya exponent must lie in (0, 1], got {alpha}")


def _check_sampled_alpha(alpha: float):
    _check_alpha(alpha)
    if alpha < SIBUYA_MIN_ALPHA:
        raise ConfigError(
            f"Sibuya sampling needs alpha >= {SIBUYA_MIN_ALPHA}, got {alpha}",
            {"alpha": alpha, "min_alpha": SIBUYA_MIN_ALPHA}
        )


def checked_total(values) -> int:
    """
    Exact int64 sum of non-negative counts.

    Raises:
        SimulationError: If the sum reaches SIBUYA_CAP
    """
    values = np.asarray(values, dtype=np.int64)
    if float(values.sum(dtype=float)) >= SIBUYA_CAP:
        raise SimulationError("Count total too large for exact int64 arithmetic", {"n": int(values.size)})
    return int(values.sum())


def _as_output(values: np.ndarray, size):
    if size is None:
        return int(values.reshape(-1)[0])
    return values.reshape(size)


def _log_sibuya_survival(alpha: float, k: np.ndarray) -> np.ndarray:
    """log P(K > k) = log Gamma(k+1-alpha) - log Gamma(k+1) - log Gamma(1-alpha)."""
    k = np.asarray(k, dtype=float)
    # poch keeps the ratio accurate for huge k
    return -np.log(special.poch(k + 1.0 - alpha, alpha)) - special.gammaln(1.0 - alpha)


def sibuya_survival(alpha: float, k):
    """P(K > k) for K ~ Sibuya(alpha)."""
    _check_alpha(alpha)
    k_arr = np.asarray(k, dtype=np.int64)
    if alpha == 1.0:
        out = (k_arr < 1).astype(float)
    else:
        out = np.where(k_arr < 1, 1.0, np.exp(_log_sibuya_survival(alpha, np.maximum(k_arr, 1))))
    return float(out) if np.ndim(k) == 0 else out


def sibuya_pmf(alpha: float, k):
    """P(K = k) = (alpha / k) prod_{j < k} (1 - alpha / j)."""
    k_arr = np.asarray(k, dtype=np.int64)
    prev = np.asarray(sibuya_survival(alpha, np.maximum(k_arr - 1, 0)))
    out = np.where(k_arr >= 1, prev * alpha / np.maximum(k_arr, 1), 0.0)
    return float(out) if np.ndim(k) == 0 else out


def sibuya_sample(alpha: float, rng: np.random.Generator, size=None):
    """
    First-success index of independent Bernoulli(alpha / k) trials.

    Inverts the closed-form survival function: K = min{k >= 1 : P(K > k) <= U},
    bracketing by doubling and then bisecting.

    Raises:
        ConfigError: If alpha is below SIBUYA_MIN_ALPHA
        SimulationError: If a draw reaches SIBUYA_CAP
    """
    _check_sampled_alpha(alpha)
    n = 1 if size is None else int(np.prod(size))
    if alpha == 1.0:
        return _as_output(np.ones(n, dtype=np.int64), size)

    log_u = np.log1p(-rng.random(n))
    hi = np.ones(n, dtype=np.int64)
    need = _log_sibuya_survival(alpha, hi) > log_u
    while need.any():
        hi[need] *= 2
        need &= hi < SIBUYA_CAP
        need[need] = _log_sibuya_survival(alpha, hi[need]) > log_u[need]
    lo = hi // 2
    while True:
        active = hi - lo > 1
        if not active.any():
            break
        mid = (lo + hi) // 2
        below = _log_sibuya_survival(alpha, mid) <= log_u
        hi = np.where(active & below, mid, hi)
        lo = np.where(active & ~below, mid, lo)

    capped = int(np.count_nonzero(hi >= SIBUYA_CAP))
    if capped:
        logger.error(f"[SIBUYA] {capped} draw(s) reached 2^62 (alpha={alpha})")
        raise SimulationError("Sibuya draw beyond the exact int64 range", {"alpha": alpha, "count": capped})
    return _as_output(hi, size)


def das_pgf(alpha: float, c: float, z):
    """exp{-c (1 - z)^alpha}"""
    z_arr = np.asarray(z, dtype=float)
    out = np.exp(-c * (1.0 - z_arr) ** alpha)
    return float(out) if np.ndim(z) == 0 else out


def das_rv_sample(params: StableParams, rng: np.random.Generator, size=None):
    """Discrete alpha-stable count: Poisson(c) many i.i.d. Sibuya(alpha) summands."""
    n = 1 if size is None else int(np.prod(size))
    clusters = rng.poisson(params.c, n)
    summands = sibuya_sample(params.alpha, rng, int(clusters.sum()))
    owners = np.repeat(np.arange(n), clusters)
    if np.any(np.bincount(owners, weights=summands.astype(float), minlength=n) >= SIBUYA_CAP):
        raise SimulationError("Discrete-stable count beyond the exact int64 range", {"alpha": params.alpha})
    out = np.zeros(n, dtype=np.int64)
    np.add.at(out, owners, summands)
    return _as_output(out, size)


def fstable_rv_sample(
    sg: BranchingSemigroup,
    params: StableParams,
    rng: np.random.Generator,
    size=None,
    yaglom: Optional[YaglomLaw] = None
):
    """
    F-stable count with p.g.f. exp{-c A(z)^alpha}.

    Args:
        sg: Branching semigroup defining the operation
        params: Exponent and scale
        rng: Caller-owned generator
        size: Batch size; None returns one int
        yaglom: Precomputed Yaglom law of ``sg``

    Returns:
        Sum of a discrete-stable number of independent Yaglom draws
    """
    law = yaglom or sg.yaglom_law()
    centers = np.atleast_1d(das_rv_sample(params, rng, 1 if size is None else size))
    return _as_output(law.sample_sum(centers.reshape(-1), rng), size)


def pgf_closed(sg: BranchingSemigroup, params: StableParams, z):
    """exp{-c A(z)^alpha}"""
    a = np.asarray(sg.a_function(z), dtype=float)
    out = np.exp(-params.c * a ** params.alpha)
    return float(out) if np.ndim(z) == 0 else out


def thin(x, t: float, rng: np.random.Generator):
    """Binomial thinning t o x."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"Thinning probability must lie in [0, 1], got {t}")
    out = rng.binomial(np.asarray(x, dtype=np.int64), t)
    return int(out) if np.ndim(x) == 0 else out


def branch_count(sg: BranchingSemigroup, t: float, x, rng: np.random.Generator):
    """
    t o_F x: the sum of x independent copies of Y_{-ln t}.

    Raises:
        ConfigError: If t is outside (0, 1]; the t = 0 limit is thin(x, 0)
    """
    if not 0.0 < t <= 1.0:
        raise ConfigError(f"Branching operation needs t in (0, 1], got {t}")
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if np.any(x_arr < 0):
        raise ConfigError("Counts must be non-negative")
    out = x_arr.copy() if t == 1.0 else np.asarray(sg.sample_sum(-math.log(t), x_arr, rng), dtype=np.int64)
    return int(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))
