"""The registered scenarios.

Every handler draws its substreams from ``ctx.spawn()`` in a fixed order, so a
(config, seed) pair always produces the same reports.
"""
import itertools
import logging
import math
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

import config
from scenarios.base import SampleTable, ScenarioContext, ScenarioOutcome, ScenarioRegistry
from scenarios.models import ScenarioConfig
from stability import streams
from stability.cb import (
    FellerParams,
    cb_laplace_closed,
    cox_coupling_check,
    feller_transition_sample,
    feller_transition_sample_conditioned,
    thinning_identity_check,
    vstability_test,
    vstable_laplace_closed,
    vstable_sample,
    yaglom_cb_sample,
    yaglom_cocycle_gap,
)
from stability.diffusion_branch import (
    GaussMixMeasure,
    dt_stable_pp_sample,
    levy_cox_sample,
    levy_radial_draws,
    levy_truncated_mass,
    measure_op_dt,
    stable_measure_laplace_closed,
    stable_measure_sample,
    thin_diffuse_config,
)
from stability.discrete_ops import branch_count, fstable_rv_sample, pgf_closed
from stability.errors import ConfigError
from stability.processes import (
    GridFunction,
    IntensityMeasure,
    PointConfig,
    TestFunction,
    Window,
    empirical_laplace,
    empirical_pgfl,
    parse_test_function,
    thin_config,
)
from stability.semigroups import GeneralSemigroup, make_semigroup, validate_conditions, validate_cocycles
from stability.stable_pp import (
    SpectralMeasureM1,
    branch_op_pp,
    branched_pgfl_closed,
    das_pp_pgfl_closed,
    das_pp_sample,
    fstable_pp_pgfl_closed,
    fstable_pp_pgfl_sibuya_form,
    fstable_pp_sample,
    spectral_from_config,
)
from stability.stattest import (
    CellPartition,
    TestReport,
    pp_equality_test,
    stability_identity_test,
    superposition_identity_test,
    transform_band_test,
    two_sample_reals,
)
from stability.tracing import trace_span

logger = logging.getLogger(__name__)

registry = ScenarioRegistry("branchstab")

# point configurations written to CSV per scenario, at most
MAX_CSV_CONFIGS = 200
CLOSED_FORM_TOL = 1e-12
LAPLACE_POINTS = (0.25, 0.5, 1.0, 2.0, 4.0)
SUPERPOSITION_WEIGHTS = (0.5, 0.3, 0.2)


# ============================================
# Helpers
# ============================================

def _battery(name: str, **attributes: Any):
    return trace_span(f"battery.{name}", attributes or None)


def _value_table(column: str, values: Any, limit: int) -> SampleTable:
    return [column], [[v] for v in np.asarray(values).reshape(-1)[:limit].tolist()]


def _config_table(window: Window, configs: Sequence[PointConfig]) -> SampleTable:
    columns = ["replicate"] + [f"x{k + 1}" for k in range(window.dim)] + ["multiplicity"]
    rows = [[i, *row] for i, phi in enumerate(configs) for row in phi.to_rows()]
    return columns, rows


def _sample_configs(ctx: ScenarioContext, sampler) -> List[PointConfig]:
    n = min(ctx.config.csv_samples, MAX_CSV_CONFIGS)
    if n == 0:
        return []
    g = ctx.spawn()
    return [sampler(g) for _ in range(n)]


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def _pgf_estimates(samples: np.ndarray, z_grid: Iterable[float]) -> List[Tuple[float, float]]:
    return [_mean_se(np.power(z, samples.astype(float))) for z in z_grid]


def _semigroup(cfg: ScenarioConfig):
    return cfg.require("semigroup").build()


def _window(cfg: ScenarioConfig) -> Window:
    return cfg.window.build()


def _spectral(cfg: ScenarioConfig, window: Window) -> SpectralMeasureM1:
    """Configured spectral measure; default c * (uniform probability on the window)."""
    if cfg.spectral is None:
        c = cfg.stable.c if cfg.stable is not None else 1.0
        return SpectralMeasureM1.single(IntensityMeasure.uniform(window, 1.0), weight=c)
    uniform = IntensityMeasure.uniform(window, 1.0).to_dict()
    return spectral_from_config(window, [
        {"weight": item.weight, "measure": item.measure if item.measure is not None else uniform}
        for item in cfg.spectral
    ])


def default_test_functions(window: Window) -> List[TestFunction]:
    """Five test functions: two constants, a checkerboard, a sub-box indicator and a ramp."""
    d = window.dim
    sides = list(window.sides)
    n_cells = 2 ** d
    checker = [0.3 if sum(np.unravel_index(i, (2,) * d)) % 2 == 0 else 0.9 for i in range(n_cells)]
    return [
        TestFunction.constant(window, 0.5),
        TestFunction.constant(window, 0.9),
        parse_test_function(window, {"shape": [2] * d, "values": checker}),
        parse_test_function(window, {"shape": [1] * d, "upper": [s / 2 for s in sides], "values": [0.4]}),
        parse_test_function(window, {"shape": [2] * d, "values": np.linspace(0.2, 0.95, n_cells).tolist()}),
    ]


def _test_functions(cfg: ScenarioConfig, window: Window) -> List[TestFunction]:
    if cfg.test_functions is None:
        return default_test_functions(window)
    return [parse_test_function(window, item) for item in cfg.test_functions]


def _pgfl_band(
    ctx: ScenarioContext,
    sampler,
    functions: Sequence[GridFunction],
    closed,
    name: str
) -> TestReport:
    estimates = [empirical_pgfl(sampler, h, ctx.config.N, ctx.spawn(), ctx.workers) for h in functions]
    return transform_band_test(estimates, [closed(h) for h in functions], name=name)


def _stability_battery(
    ctx: ScenarioContext,
    prefix: str,
    sampler,
    scale,
    alpha: float,
    compare
) -> List[TestReport]:
    cfg = ctx.config
    reports = []
    for t in cfg.t:
        with _battery(prefix, t=t):
            reports.append(stability_identity_test(
                sampler, scale, alpha, t, cfg.N, ctx.spawn(),
                compare=compare,
                scaling_alpha=cfg.scaling_alpha,
                name=f"{prefix}[t={t:g}]",
                workers=ctx.workers
            ))
    return reports


def _superposition_battery(ctx: ScenarioContext, prefix: str, sampler, scale, alpha: float, compare) -> TestReport:
    """Three-copy superposition sum_i w_i^{1/alpha} o X_i against X."""
    cfg = ctx.config
    with _battery(prefix, m=len(SUPERPOSITION_WEIGHTS)):
        return superposition_identity_test(
            sampler, scale, alpha, SUPERPOSITION_WEIGHTS, cfg.N, ctx.spawn(),
            compare=compare,
            scaling_alpha=cfg.scaling_alpha,
            name=f"{prefix}[m={len(SUPERPOSITION_WEIGHTS)}]",
            workers=ctx.workers
        )


# ============================================
# Scenarios
# ============================================

@registry.scenario("semigroup-validate", "Branching semigroups [Sec. 2.1 (C1)-(C4), Eqs. (2)-(5), Def. 2.3]: composition and mean laws, A/B cocycles, Yaglom p.g.f. = B")
def semigroup_validate(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    sg = _semigroup(cfg)
    general = isinstance(sg, GeneralSemigroup)
    tol = cfg.tol or (1e-6 if general else 1e-9)
    n = cfg.grid_points or (4 if general else 10)
    s_values = np.linspace(0.1, 3.0, n).tolist()
    z_values = np.linspace(0.0, 0.95, n).tolist()

    outcome = ScenarioOutcome()
    with _battery("semigroup-conditions", kind=sg.kind):
        outcome.reports.append(validate_conditions(sg, itertools.product(s_values, s_values, z_values), tol))
        outcome.reports.append(validate_cocycles(sg, itertools.product(s_values, z_values), tol))

    with _battery("yaglom-pgf", kind=sg.kind):
        law = sg.yaglom_law()
        z_arr = np.asarray(z_values)
        gap = float(np.max(np.abs(np.asarray(law.pgf(z_arr)) - np.asarray(sg.b_function(z_arr)))))
        yaglom_tol = max(tol, config.settings.yaglom_tv_threshold) if general else tol
        outcome.reports.append(TestReport.deterministic(
            f"yaglom-pgf[{sg.kind}]", gap, gap <= yaglom_tol, len(z_values),
            details={"tolerance": yaglom_tol, "yaglom": law.to_dict()}
        ))

    with _battery("transition-pmf", kind=sg.kind):
        pmf_gap = 0.0
        for s in (0.5, 2.0):
            pmf, _ = sg.transition_pmf(s, config.settings.yaglom_cutoff)
            powers = np.power.outer(z_arr, np.arange(len(pmf)))
            pmf_gap = max(pmf_gap, float(np.max(np.abs(powers @ pmf - np.asarray(sg.evaluate_F(s, z_arr))))))
        outcome.reports.append(TestReport.deterministic(
            f"transition-pmf[{sg.kind}]", pmf_gap, pmf_gap <= tol, 2 * len(z_values),
            details={"tolerance": tol, "cutoff": config.settings.yaglom_cutoff}
        ))

    rows = []
    for s in s_values:
        f = np.asarray(sg.evaluate_F(s, z_arr))
        rows.extend([s, z, fz, a, b] for z, fz, a, b in zip(
            z_values, f.tolist(), np.asarray(sg.a_function(z_arr)).tolist(), np.asarray(sg.b_function(z_arr)).tolist()))
    outcome.samples["functions"] = (["s", "z", "F_s(z)", "A(z)", "B(z)"], rows)
    return outcome


@registry.scenario("fstable-rv", "F-stable integer variables [Def. 2.5, Thm. 2.7, Eq. (9)]: p.g.f. exp{-c A(z)^alpha} and two-copy stability")
def fstable_rv(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    sg = _semigroup(cfg)
    params = cfg.require("stable").build()
    law = sg.yaglom_law()

    def sampler(g: np.random.Generator, n: int) -> np.ndarray:
        return fstable_rv_sample(sg, params, g, n, yaglom=law)

    outcome = ScenarioOutcome()
    with _battery("fstable-pgf"):
        samples = streams.replicate_batch(sampler, cfg.N, ctx.spawn(), ctx.workers)
        outcome.reports.append(transform_band_test(
            _pgf_estimates(samples, cfg.z_grid),
            np.asarray(pgf_closed(sg, params, np.asarray(cfg.z_grid))).tolist(),
            name="fstable-pgf"
        ))
    outcome.reports.extend(_stability_battery(
        ctx, "fstable-rv-stability", sampler,
        lambda t, x, g: branch_count(sg, t, x, g),
        params.alpha, "counts"
    ))
    outcome.samples["counts"] = _value_table("count", samples, cfg.csv_samples)
    return outcome


@registry.scenario("das-pp", "Discrete-stable point processes [Def. 2.9, Thm. 2.10, Eqs. (15)-(16)]: thinning stability, p.g.fl. and the PureDeath reduction")
def das_pp(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    window = _window(cfg)
    alpha = cfg.require("stable").alpha
    sigma = _spectral(cfg, window)
    partition = CellPartition.regular(window, cfg.partition)

    def sampler(g: np.random.Generator) -> PointConfig:
        return das_pp_sample(alpha, sigma, g)

    outcome = ScenarioOutcome()
    outcome.reports.extend(_stability_battery(
        ctx, "das-pp-stability", sampler,
        lambda t, phi, g: thin_config(t, phi, g),
        alpha, partition
    ))
    outcome.reports.append(_superposition_battery(
        ctx, "das-pp-superposition", sampler,
        lambda t, phi, g: thin_config(t, phi, g),
        alpha, partition
    ))
    with _battery("das-pp-pgfl"):
        outcome.reports.append(_pgfl_band(
            ctx, sampler, _test_functions(cfg, window),
            lambda h: das_pp_pgfl_closed(alpha, sigma, h), "das-pp-pgfl"
        ))
    with _battery("puredeath-reduction"):
        pure_death = make_semigroup("PureDeath")
        outcome.reports.append(pp_equality_test(
            lambda g: fstable_pp_sample(pure_death, alpha, sigma, g),
            sampler,
            partition, cfg.N, ctx.spawn(),
            name="puredeath-reduction",
            workers=ctx.workers
        ))
    outcome.samples["configs"] = _config_table(window, _sample_configs(ctx, sampler))
    return outcome


@registry.scenario("fstable-pp", "F-stable point processes [Thm. 3.2, Cor. 3.3-3.4, Thm. 3.5, Eqs. (17)-(20)]: branching stability, cluster p.g.fl. with B-composition")
def fstable_pp(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    sg = _semigroup(cfg)
    window = _window(cfg)
    alpha = cfg.require("stable").alpha
    sigma = _spectral(cfg, window)
    partition = CellPartition.regular(window, cfg.partition)
    law = sg.yaglom_law()
    functions = _test_functions(cfg, window)
    tol = cfg.tol or (1e-6 if isinstance(sg, GeneralSemigroup) else 1e-10)

    def sampler(g: np.random.Generator) -> PointConfig:
        return fstable_pp_sample(sg, alpha, sigma, g, yaglom=law)

    def closed(h: GridFunction) -> float:
        return fstable_pp_pgfl_closed(sg, alpha, sigma, h)

    outcome = ScenarioOutcome()
    outcome.reports.extend(_stability_battery(
        ctx, "fstable-pp-stability", sampler,
        lambda t, phi, g: branch_op_pp(sg, t, phi, g),
        alpha, partition
    ))
    outcome.reports.append(_superposition_battery(
        ctx, "fstable-pp-superposition", sampler,
        lambda t, phi, g: branch_op_pp(sg, t, phi, g),
        alpha, partition
    ))
    with _battery("fstable-pp-pgfl"):
        outcome.reports.append(_pgfl_band(ctx, sampler, functions, closed, "fstable-pp-pgfl"))

    with _battery("pgfl-forms"):
        gap = max(abs(closed(h) - fstable_pp_pgfl_sibuya_form(sg, alpha, sigma, h)) for h in functions)
        outcome.reports.append(TestReport.deterministic(
            "pgfl-forms", gap, gap <= CLOSED_FORM_TOL, len(functions),
            details={"tolerance": CLOSED_FORM_TOL}
        ))
        # G[h] = G_{t o Phi}[h]^{t^-alpha}
        gap = 0.0
        for t in cfg.t:
            for h in functions:
                branched = branched_pgfl_closed(sg, t, closed, h)
                gap = max(gap, abs(closed(h) - branched ** (t ** (-alpha))))
        outcome.reports.append(TestReport.deterministic(
            "functional-stability", gap, gap <= tol, len(cfg.t) * len(functions),
            details={"tolerance": tol}
        ))
    outcome.samples["configs"] = _config_table(window, _sample_configs(ctx, sampler))
    return outcome


def _default_mixture(window: Window) -> GaussMixMeasure:
    sides = window.side_array()
    return GaussMixMeasure(
        window,
        np.array([3.0, 1.5]),
        np.array([0.01, 0.05]) * float(sides.min()) ** 2,
        np.stack([0.25 * sides, 0.7 * sides]),
        uniform_mass=1.0
    )


@registry.scenario("dt-pp", "Thinning-diffusion [Example 4.2, Prop. 4.6, Prop. 4.8]: S-Lebesgue Cox stability and t o_dt Pi_mu = Pi_{t (.) mu}")
def dt_pp(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    window = _window(cfg)
    alpha = cfg.require("stable").alpha
    partition = CellPartition.regular(window, cfg.partition)

    def sampler(g: np.random.Generator) -> PointConfig:
        return dt_stable_pp_sample(alpha, cfg.total_scale, window, g)

    outcome = ScenarioOutcome()
    outcome.reports.extend(_stability_battery(
        ctx, "dt-pp-stability", sampler,
        lambda t, phi, g: thin_diffuse_config(t, phi, g),
        alpha, partition
    ))
    with _battery("stable-measure-laplace"):
        estimates = [
            empirical_laplace(lambda g: stable_measure_sample(alpha, cfg.total_scale, window, g),
                              GridFunction.constant(window, v), cfg.N, ctx.spawn(), ctx.workers)
            for v in LAPLACE_POINTS
        ]
        targets = [stable_measure_laplace_closed(alpha, cfg.total_scale, window, v) for v in LAPLACE_POINTS]
        outcome.reports.append(transform_band_test(estimates, targets, name="stable-measure-laplace"))

    with _battery("cox-thinning-diffusion"):
        mu = GaussMixMeasure.from_dict(window, cfg.mixture) if cfg.mixture else _default_mixture(window)
        t = cfg.t[len(cfg.t) // 2]
        mu_t = measure_op_dt(t, mu)
        report = pp_equality_test(
            lambda g: thin_diffuse_config(t, mu.sample_poisson(g), g),
            lambda g: mu_t.sample_poisson(g),
            partition, cfg.N, ctx.spawn(),
            name=f"cox-thinning-diffusion[t={t:g}]",
            workers=ctx.workers
        )
        outcome.reports.append(report.model_copy(update={"details": {**report.details, "mixture": mu.to_dict()}}))
    outcome.samples["configs"] = _config_table(window, _sample_configs(ctx, sampler))
    return outcome


@registry.scenario(
    "dt-levy-probe",
    "Thinning-diffusion Levy construction [Sec. 4.4, Prop. 4.9]: radial law check plus an open stability probe",
    gating=False
)
def dt_levy_probe(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    window = _window(cfg)
    alpha = cfg.require("stable").alpha
    eps = cfg.epsilon
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"Levy exponent must lie in (0, 1), got {alpha}")
    if cfg.shapes is None:
        shapes = [(1.0, (0.5 * window.side_array()).tolist())]
    else:
        shapes = [(s.weight, s.center) for s in cfg.shapes]
    partition = CellPartition.regular(window, cfg.partition)
    truncated = levy_truncated_mass(alpha, [w for w, _ in shapes], eps)
    logger.info(f"[SCENARIO] Levy truncation at eps={eps:g} discards expected mass {truncated:.4g}")

    def sampler(g: np.random.Generator) -> PointConfig:
        return levy_cox_sample(alpha, shapes, eps, window, g)

    outcome = ScenarioOutcome()
    with _battery("levy-radial-law"):
        draws = levy_radial_draws(alpha, eps, ctx.spawn(), cfg.N)
        low = eps ** (-alpha)
        ks = stats.kstest(draws, lambda x: 1.0 - (np.power(x, -alpha) - 1.0) / (low - 1.0))
        outcome.reports.append(TestReport.from_p_value(
            "levy-radial-law", ks.statistic, ks.pvalue, cfg.N, cfg.N,
            details={"alpha": alpha, "eps": eps}
        ))
    for report in _stability_battery(
        ctx, "dt-levy-stability", sampler,
        lambda t, phi, g: thin_diffuse_config(t, phi, g),
        alpha, partition
    ):
        outcome.probes.append(report.model_copy(update={
            "details": {**report.details, "eps": eps, "truncated_mass": truncated}
        }))
    outcome.samples["radials"] = _value_table("radial", draws, cfg.csv_samples)
    return outcome


@registry.scenario("cb-feller", "Feller CB-process [Example 4.10, (C1')-(C4')]: exact transitions, Yaglom law Exp(b/2), thinning identity")
def cb_feller(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    p = FellerParams(cfg.require("feller").b)
    outcome = ScenarioOutcome()

    with _battery("feller-transition"):
        estimates, targets = [], []
        for x, t, z in cfg.transition_points:
            values = streams.replicate_batch(
                lambda g, n, x=x, t=t, z=z: np.exp(-z * feller_transition_sample(p, np.full(n, x), t, g)),
                cfg.N, ctx.spawn(), ctx.workers
            )
            estimates.append(_mean_se(values))
            targets.append(cb_laplace_closed(p, x, t, z))
        outcome.reports.append(transform_band_test(estimates, targets, name="feller-transition-laplace"))

    with _battery("cb-yaglom"):
        conditioned = streams.replicate_batch(
            lambda g, n: feller_transition_sample_conditioned(p, np.ones(n), cfg.yaglom_time, g),
            cfg.N, ctx.spawn(), ctx.workers
        )
        limit = streams.replicate_batch(lambda g, n: yaglom_cb_sample(p, g, n), cfg.N, ctx.spawn(), ctx.workers)
        report = two_sample_reals(conditioned, limit, name="cb-yaglom")
        outcome.reports.append(report.model_copy(update={"details": {**report.details, "time": cfg.yaglom_time}}))

        gap = max(yaglom_cocycle_gap(p, t, z) for t in cfg.t for z in (*cfg.z_grid, 1.0, 2.0))
        outcome.reports.append(TestReport.deterministic(
            "cb-yaglom-cocycle", gap, gap <= CLOSED_FORM_TOL, len(cfg.t) * (len(cfg.z_grid) + 2),
            details={"tolerance": CLOSED_FORM_TOL}
        ))

    for t in cfg.t:
        with _battery("cb-thinning", t=t):
            outcome.reports.append(thinning_identity_check(p, t, cfg.N, ctx.spawn(), workers=ctx.workers))

    g = ctx.spawn()
    outcome.samples["transitions"] = _value_table(
        "z_t", feller_transition_sample(p, np.ones(cfg.csv_samples), cfg.t[0], g), cfg.csv_samples)
    return outcome


@registry.scenario("cb-vstable", "V-stable variables of the Feller family [Sec. 4.5, Prop. 4.13]: stability under CB scaling and Laplace transform")
def cb_vstable(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    p = FellerParams(cfg.require("feller").b)
    sp = cfg.require("stable").build()
    outcome = ScenarioOutcome()

    for t in cfg.t:
        with _battery("v-stability", t=t):
            outcome.reports.append(vstability_test(
                p, sp, t, cfg.N, ctx.spawn(), scaling_alpha=cfg.scaling_alpha, workers=ctx.workers))

    with _battery("vstable-laplace"):
        samples = streams.replicate_batch(lambda g, n: vstable_sample(p, sp, g, n), cfg.N, ctx.spawn(), ctx.workers)
        estimates = [_mean_se(np.exp(-z * samples)) for z in LAPLACE_POINTS]
        targets = np.asarray(vstable_laplace_closed(p, sp, np.asarray(LAPLACE_POINTS))).tolist()
        outcome.reports.append(transform_band_test(estimates, targets, name="vstable-laplace"))
    outcome.samples["values"] = _value_table("xi", samples, cfg.csv_samples)
    return outcome


def _coupled_feller(cfg: ScenarioConfig, sg) -> Optional[FellerParams]:
    """Configured Feller parameters, or b = 2 lambda when a LinearBirthDeath coupling leaves them out."""
    if cfg.feller is not None:
        return FellerParams(cfg.feller.b)
    lam = getattr(sg, "lam", None)
    return FellerParams(2.0 * lam) if lam is not None else None


@registry.scenario("cox-coupling", "Poisson mixtures over V-stable masses are F-stable for the coupled semigroup [Prop. 4.12]")
def cox_coupling(ctx: ScenarioContext) -> ScenarioOutcome:
    cfg = ctx.config
    sg = _semigroup(cfg)
    sp = cfg.require("stable").build()
    p = _coupled_feller(cfg, sg)
    outcome = ScenarioOutcome()
    for t in cfg.t:
        with _battery("cox-coupling", t=t):
            report = cox_coupling_check(
                sg, p, sp, cfg.N, ctx.spawn(),
                t=t,
                z_grid=cfg.z_grid,
                scaling_alpha=cfg.scaling_alpha,
                workers=ctx.workers
            )
            outcome.reports.append(report.model_copy(update={"name": f"cox-coupling[t={t:g}]"}))
    return outcome
