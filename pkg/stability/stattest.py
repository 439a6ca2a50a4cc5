"""Two-sample and transform tests that certify equality in distribution."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, ClassVar, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import stats

import config
from stability import streams
from stability.errors import ConfigError, InsufficientSampleError
from stability.processes import Grid, PointConfig, Window

logger = logging.getLogger(__name__)

MIN_SAMPLES = 1000
MIN_PP_REPLICATES = 10_000
MIN_EXPECTED = 5.0
# p-value threshold equivalent to "every deviation within 3 standard errors"
BAND_LEVEL = float(2.0 * stats.norm.sf(3.0))


class TestReport(BaseModel):
    """Named verdict of one statistical or deterministic check."""

    __test__: ClassVar[bool] = False

    name: str
    statistic: float
    p_value: float
    n_a: int
    n_b: int
    seed: Optional[int] = None
    alpha_level: float
    verdict: Literal["pass", "fail"]
    details: Dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def from_p_value(
        cls,
        name: str,
        statistic: float,
        p_value: float,
        n_a: int,
        n_b: int,
        alpha_level: Optional[float] = None,
        details: Optional[Dict[str, Any]] = None
    ) -> "TestReport":
        level = config.settings.alpha_level if alpha_level is None else alpha_level
        p_value = float(min(max(p_value, 0.0), 1.0))
        return cls(
            name=name,
            statistic=float(statistic),
            p_value=p_value,
            n_a=int(n_a),
            n_b=int(n_b),
            alpha_level=float(level),
            verdict="pass" if p_value > level else "fail",
            details=details or {}
        )

    @classmethod
    def deterministic(
        cls,
        name: str,
        statistic: float,
        passed: bool,
        n: int,
        details: Optional[Dict[str, Any]] = None
    ) -> "TestReport":
        """Exact check: p-value 1 on pass, 0 on failure, worst violation as statistic."""
        return cls.from_p_value(name, statistic, 1.0 if passed else 0.0, n, n, details=details)

    @classmethod
    def combine(cls, name: str, reports: Sequence["TestReport"]) -> "TestReport":
        """
        Joint verdict that passes iff every component passes.

        Component p-values are rescaled to the configured level before taking the
        minimum, so components tested at different levels keep their own verdicts.
        """
        if not reports:
            raise ConfigError("Nothing to combine")
        level = config.settings.alpha_level
        rescaled = [min(1.0, r.p_value * level / r.alpha_level) for r in reports]
        worst = int(np.argmin(rescaled))
        return cls.from_p_value(
            name,
            reports[worst].statistic,
            rescaled[worst],
            sum(r.n_a for r in reports),
            sum(r.n_b for r in reports),
            alpha_level=level,
            details={"worst": reports[worst].name, "components": [r.model_dump() for r in reports]}
        )

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def with_seed(self, seed: int) -> "TestReport":
        return self.model_copy(update={"seed": int(seed)})


class CalibrationResult(BaseModel):
    name: str
    runs: int
    rejections: int
    rate: float
    alpha_level: float


@dataclass(frozen=True, eq=False)
class CellPartition(Grid):
    """Grid tiling the whole window into at least two cells."""

    def __post_init__(self):
        super().__post_init__()
        if self.n_cells < 2:
            raise ConfigError(f"A cell partition needs at least 2 cells, got {self.n_cells}")
        if not self.covers_window:
            raise ConfigError("A cell partition must tile the whole window")

    @classmethod
    def regular(cls, window: Window, per_axis: int = 4) -> "CellPartition":
        return cls.covering(window, (per_axis,) * window.dim)

    def counts(self, phi: PointConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return phi.cell_counts(self, rng)


def _require(n: int, minimum: int, what: str):
    if n < minimum:
        raise InsufficientSampleError(f"{what} needs at least {minimum} samples, got {n}", {"n": n})


def _merged_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2 x k table over pooled values, adjacent bins merged until every expected count is >= 5."""
    values, inverse = np.unique(np.concatenate([a, b]), return_inverse=True)
    counts_a = np.bincount(inverse[:len(a)], minlength=len(values))
    counts_b = np.bincount(inverse[len(a):], minlength=len(values))
    pooled = counts_a + counts_b
    needed = MIN_EXPECTED * (len(a) + len(b)) / min(len(a), len(b))

    bins: List[Tuple[int, int]] = []
    acc_a = acc_b = 0
    for ca, cb in zip(counts_a, counts_b):
        acc_a += int(ca)
        acc_b += int(cb)
        if acc_a + acc_b >= needed:
            bins.append((acc_a, acc_b))
            acc_a = acc_b = 0
    if acc_a + acc_b > 0:
        if bins:
            last_a, last_b = bins.pop()
            bins.append((last_a + acc_a, last_b + acc_b))
        else:
            bins.append((acc_a, acc_b))
    return np.array(bins, dtype=float).T if bins else np.zeros((2, 0))


def _count_pvalues(a: np.ndarray, b: np.ndarray) -> Dict[str, float]:
    table = _merged_table(a, b)
    if table.shape[1] < 2:
        chi_stat, p_chi = 0.0, 1.0
    else:
        chi_stat, p_chi, _, _ = stats.chi2_contingency(table, correction=False)
    ks = stats.ks_2samp(a, b, method="asymp")
    return {
        "chi2": float(chi_stat),
        "p_chi2": float(p_chi),
        "bins": int(table.shape[1]),
        "ks": float(ks.statistic),
        "p_ks": float(ks.pvalue),
        "p": float(min(1.0, 2.0 * min(p_chi, ks.pvalue)))
    }


def two_sample_counts(
    a: Sequence[int],
    b: Sequence[int],
    name: str = "two-sample-counts",
    alpha_level: Optional[float] = None
) -> TestReport:
    """
    Chi-square on merged bins combined with a two-sample KS, Bonferroni over both.

    Raises:
        InsufficientSampleError: If either sample has fewer than 1000 entries
    """
    a = np.asarray(a, dtype=np.int64).reshape(-1)
    b = np.asarray(b, dtype=np.int64).reshape(-1)
    _require(min(len(a), len(b)), MIN_SAMPLES, name)
    result = _count_pvalues(a, b)
    logger.debug(f"[STATTEST] {name}: p={result['p']:.4g} (chi2 p={result['p_chi2']:.4g}, ks p={result['p_ks']:.4g})")
    return TestReport.from_p_value(
        name, result["chi2"], result["p"], len(a), len(b), alpha_level,
        details={**result, "mean_a": float(a.mean()), "mean_b": float(b.mean())}
    )


def two_sample_reals(
    a: Sequence[float],
    b: Sequence[float],
    name: str = "two-sample-reals",
    alpha_level: Optional[float] = None
) -> TestReport:
    """
    Two-sample KS on non-negative reals; an atom at zero is tested separately.

    The zero frequencies get a two-proportion z-test and the positive parts a KS
    test, Bonferroni-combined. Samples without zeros get the plain KS test.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    _require(min(len(a), len(b)), MIN_SAMPLES, name)

    zeros_a, zeros_b = a == 0.0, b == 0.0
    details: Dict[str, Any] = {"zero_fraction_a": float(zeros_a.mean()), "zero_fraction_b": float(zeros_b.mean())}
    pos_a, pos_b = a[~zeros_a], b[~zeros_b]
    if len(pos_a) and len(pos_b):
        ks = stats.ks_2samp(pos_a, pos_b, method="asymp")
        ks_stat, p_ks = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, p_ks = 0.0, 1.0
    details.update(ks=ks_stat, p_ks=p_ks)

    if not zeros_a.any() and not zeros_b.any():
        p_value = p_ks
    else:
        pooled = (zeros_a.sum() + zeros_b.sum()) / (len(a) + len(b))
        if 0.0 < pooled < 1.0:
            z = (zeros_a.mean() - zeros_b.mean()) / math.sqrt(pooled * (1 - pooled) * (1 / len(a) + 1 / len(b)))
            p_zero = float(2.0 * stats.norm.sf(abs(z)))
        else:
            z, p_zero = 0.0, 1.0
        details.update(z_zero=float(z), p_zero=p_zero)
        p_value = min(1.0, 2.0 * min(p_zero, p_ks))

    return TestReport.from_p_value(name, ks_stat, p_value, len(a), len(b), alpha_level, details)


def compare_cell_counts(
    counts_a: np.ndarray,
    counts_b: np.ndarray,
    name: str = "cell-counts",
    alpha_level: Optional[float] = None
) -> TestReport:
    """Per-cell and total-count tests on (N, k) count matrices, Bonferroni over all k + 1."""
    counts_a = np.asarray(counts_a, dtype=np.int64)
    counts_b = np.asarray(counts_b, dtype=np.int64)
    columns = [(f"cell-{j}", counts_a[:, j], counts_b[:, j]) for j in range(counts_a.shape[1])]
    columns.append(("total", counts_a.sum(axis=1), counts_b.sum(axis=1)))

    results = {label: _count_pvalues(col_a, col_b) for label, col_a, col_b in columns}
    worst = min(results, key=lambda label: results[label]["p"])
    p_value = min(1.0, len(results) * results[worst]["p"])
    logger.info(f"[STATTEST] {name}: p={p_value:.4g}, worst {worst}")
    return TestReport.from_p_value(
        name, results[worst]["chi2"], p_value, len(counts_a), len(counts_b), alpha_level,
        details={
            "worst_cell": worst,
            "cell_p_values": {label: r["p"] for label, r in results.items()},
            "mean_total_a": float(columns[-1][1].mean()),
            "mean_total_b": float(columns[-1][2].mean())
        }
    )


def pp_equality_test(
    sampler_a: Callable[[np.random.Generator], PointConfig],
    sampler_b: Callable[[np.random.Generator], PointConfig],
    partition: CellPartition,
    N: int,
    rng: np.random.Generator,
    name: str = "pp-equality",
    workers: Optional[int] = None,
    alpha_level: Optional[float] = None
) -> TestReport:
    """
    Equality in law of two point processes through their cell-count vectors.

    Raises:
        InsufficientSampleError: If N < 10000
    """
    _require(N, MIN_PP_REPLICATES, name)
    rng_a, rng_b = rng.spawn(2)
    counts_a = np.array(streams.replicate(lambda g: partition.counts(sampler_a(g), g), N, rng_a, workers))
    counts_b = np.array(streams.replicate(lambda g: partition.counts(sampler_b(g), g), N, rng_b, workers))
    return compare_cell_counts(counts_a, counts_b, name, alpha_level)


def transform_band_test(
    estimates: Sequence[Tuple[float, float]],
    targets: Sequence[float],
    name: str = "transform-band"
) -> TestReport:
    """
    Pass iff every |estimate - target| <= 3 se.

    Reports p = 2(1 - Phi(max |z|)) against the level 2(1 - Phi(3)).
    """
    if len(estimates) != len(targets):
        raise ConfigError(f"{len(estimates)} estimates for {len(targets)} targets")
    if not estimates:
        raise ConfigError("transform_band_test needs at least one estimate")
    z_scores = []
    for (value, se), target in zip(estimates, targets):
        if se < 0:
            raise ConfigError(f"Standard error must be non-negative, got {se}")
        deviation = abs(value - target)
        if se == 0:
            z_scores.append(0.0 if deviation == 0 else math.inf)
        else:
            z_scores.append(deviation / se)
    worst = float(max(z_scores))
    p_value = 0.0 if math.isinf(worst) else float(2.0 * stats.norm.sf(worst))
    return TestReport.from_p_value(
        name, worst if math.isfinite(worst) else 1e300, p_value, len(estimates), len(targets),
        alpha_level=BAND_LEVEL,
        details={
            "z_scores": [z if math.isfinite(z) else None for z in z_scores],
            "estimates": [list(map(float, e)) for e in estimates],
            "targets": [float(t) for t in targets]
        }
    )


def superposition_identity_test(
    sampler: Callable,
    scale: Callable,
    alpha: float,
    weights: Sequence[float],
    N: int,
    rng: np.random.Generator,
    compare: Union[str, CellPartition] = "counts",
    scaling_alpha: Optional[float] = None,
    name: str = "superposition-identity",
    workers: Optional[int] = None,
    alpha_level: Optional[float] = None
) -> TestReport:
    """
    Test X against sum_i scale(w_i^{1/alpha}, X_i) for independent copies X_i.

    With ``compare`` equal to "counts" or "reals" the sampler and scale act on
    batches (``sampler(g, n)``, ``scale(t, array, g)``); with a CellPartition they
    act on single point configurations.

    Args:
        weights: Non-negative weights summing to 1
        scaling_alpha: Exponent used in the scale factors; differs from ``alpha``
            only for power controls
    """
    weights = [float(w) for w in weights]
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
        raise ConfigError(f"Superposition weights must be non-negative and sum to 1, got {weights}")
    exponent = 1.0 / (alpha if scaling_alpha is None else scaling_alpha)
    factors = [w ** exponent for w in weights]
    rng_a, rng_b = rng.spawn(2)
    details = {"alpha": alpha, "scaling_alpha": scaling_alpha or alpha, "weights": weights}

    if isinstance(compare, CellPartition):
        _require(N, MIN_PP_REPLICATES, name)

        def combined(g: np.random.Generator) -> np.ndarray:
            return sum(compare.counts(scale(f, sampler(g), g), g) for f in factors)

        counts_a = np.array(streams.replicate(lambda g: compare.counts(sampler(g), g), N, rng_a, workers))
        counts_b = np.array(streams.replicate(combined, N, rng_b, workers))
        report = compare_cell_counts(counts_a, counts_b, name, alpha_level)
    else:
        def combined_batch(g: np.random.Generator, n: int) -> np.ndarray:
            return sum(np.asarray(scale(f, sampler(g, n), g)) for f in factors)

        sample_a = streams.replicate_batch(sampler, N, rng_a, workers)
        sample_b = streams.replicate_batch(combined_batch, N, rng_b, workers)
        if compare == "counts":
            report = two_sample_counts(sample_a, sample_b, name, alpha_level)
        elif compare == "reals":
            report = two_sample_reals(sample_a, sample_b, name, alpha_level)
        else:
            raise ConfigError(f"Unknown comparison: {compare}. Expected counts, reals or a CellPartition.")

    return report.model_copy(update={"details": {**report.details, **details}})


def stability_identity_test(
    sampler: Callable,
    scale: Callable,
    alpha: float,
    t: float,
    N: int,
    rng: np.random.Generator,
    compare: Union[str, CellPartition] = "counts",
    scaling_alpha: Optional[float] = None,
    name: Optional[str] = None,
    workers: Optional[int] = None
) -> TestReport:
    """t^{1/alpha} X' + (1-t)^{1/alpha} X'' against X."""
    if not 0.0 < t < 1.0:
        raise ConfigError(f"Stability split t must lie in (0, 1), got {t}")
    return superposition_identity_test(
        sampler, scale, alpha, [t, 1.0 - t], N, rng,
        compare=compare,
        scaling_alpha=scaling_alpha,
        name=name or f"stability[t={t:g}]",
        workers=workers
    )


def calibrate_type_one(
    run_test: Callable[[np.random.Generator], TestReport],
    runs: int,
    rng: np.random.Generator,
    name: str = "calibration"
) -> CalibrationResult:
    """Rejection rate of a test over independent null runs, one substream per run."""
    if runs < 1:
        raise ConfigError("calibrate_type_one needs at least one run")
    reports = [run_test(child) for child in rng.spawn(runs)]
    rejections = sum(1 for r in reports if not r.passed)
    rate = rejections / runs
    logger.info(f"[STATTEST] {name}: {rejections}/{runs} rejections (rate {rate:.4f})")
    return CalibrationResult(
        name=name,
        runs=runs,
        rejections=rejections,
        rate=rate,
        alpha_level=reports[0].alpha_level
    )
