import math

import numpy as np
import pytest

import config
from stability.errors import ConfigError, InsufficientSampleError
from stability.processes import IntensityMeasure, Window, poisson_sample, thin_config
from stability.stattest import (
    BAND_LEVEL,
    CellPartition,
    TestReport,
    calibrate_type_one,
    pp_equality_test,
    stability_identity_test,
    superposition_identity_test,
    transform_band_test,
    two_sample_counts,
    two_sample_reals,
)


def test_two_sample_counts_null(rng):
    report = two_sample_counts(rng.poisson(3.0, 5000), rng.poisson(3.0, 5000))
    assert report.p_value > 1e-4
    assert report.details["bins"] >= 2
    assert report.n_a == report.n_b == 5000


def test_two_sample_counts_shift(rng):
    report = two_sample_counts(rng.poisson(3.0, 5000), rng.poisson(3.3, 5000), name="shifted")
    assert report.name == "shifted"
    assert report.verdict == "fail"
    assert report.p_value < 1e-3


def test_minimum_sample_sizes(rng):
    with pytest.raises(InsufficientSampleError):
        two_sample_counts(rng.poisson(1.0, 999), rng.poisson(1.0, 5000))
    with pytest.raises(InsufficientSampleError):
        two_sample_reals(rng.random(5000), rng.random(10))


def test_degenerate_counts_pass(rng):
    report = two_sample_counts(np.zeros(2000, dtype=int), np.zeros(2000, dtype=int))
    assert report.passed
    assert report.p_value == 1.0


def test_two_sample_reals_with_atom(rng):
    def sample(zero_prob, n):
        return (rng.random(n) >= zero_prob) * rng.exponential(1.0, n)

    null = two_sample_reals(sample(0.3, 5000), sample(0.3, 5000))
    assert null.p_value > 1e-4
    assert "p_zero" in null.details

    shifted = two_sample_reals(sample(0.3, 5000), sample(0.4, 5000))
    assert shifted.p_value < 1e-3
    assert shifted.details["zero_fraction_b"] > shifted.details["zero_fraction_a"]


def test_transform_band_exact_and_shifted():
    exact = transform_band_test([(0.5, 0.01), (0.2, 0.0)], [0.5, 0.2])
    assert exact.passed
    assert exact.statistic == 0.0
    assert exact.alpha_level == pytest.approx(BAND_LEVEL)

    shifted = transform_band_test([(0.5, 0.01), (0.25, 0.01)], [0.5, 0.2], name="band")
    assert shifted.verdict == "fail"
    assert shifted.statistic == pytest.approx(5.0)
    assert shifted.details["z_scores"] == [0.0, pytest.approx(5.0)]

    inside = transform_band_test([(0.229, 0.01)], [0.2])
    assert inside.passed


def test_transform_band_zero_se_mismatch():
    report = transform_band_test([(0.3, 0.0)], [0.2])
    assert report.p_value == 0.0
    assert report.details["z_scores"] == [None]


def test_transform_band_errors():
    with pytest.raises(ConfigError):
        transform_band_test([(0.1, 0.01)], [0.1, 0.2])
    with pytest.raises(ConfigError):
        transform_band_test([], [])
    with pytest.raises(ConfigError):
        transform_band_test([(0.1, -0.01)], [0.1])


def test_band_level():
    assert BAND_LEVEL == pytest.approx(0.0027, abs=1e-4)


def test_deterministic_and_combine():
    ok = TestReport.deterministic("grid", 1e-14, True, 10)
    bad = TestReport.deterministic("cocycle", 0.2, False, 10)
    assert (ok.p_value, ok.verdict) == (1.0, "pass")
    assert (bad.p_value, bad.verdict) == (0.0, "fail")

    band = transform_band_test([(0.5, 0.01)], [0.52])
    assert band.passed

    joint = TestReport.combine("joint", [ok, band])
    assert joint.passed
    assert joint.details["worst"] == band.name
    assert joint.alpha_level == config.settings.alpha_level

    failing = TestReport.combine("joint", [ok, band, bad])
    assert failing.verdict == "fail"
    assert failing.details["worst"] == "cocycle"
    with pytest.raises(ConfigError):
        TestReport.combine("empty", [])


def test_combine_keeps_component_verdicts():
    # fails its own level, so the rescaled p-value must fail too
    band_fail = TestReport.from_p_value("band", 3.1, 0.002, 1, 1, alpha_level=BAND_LEVEL)
    assert not band_fail.passed
    assert not TestReport.combine("joint", [band_fail]).passed


def test_with_seed():
    report = TestReport.deterministic("x", 0.0, True, 1).with_seed(42)
    assert report.seed == 42


def test_cell_partition(torus, box):
    part = CellPartition.regular(box, 3)
    assert part.n_cells == 9
    with pytest.raises(ConfigError):
        CellPartition.regular(torus, 1)
    with pytest.raises(ConfigError):
        CellPartition(box, (2, 2), (0.0, 0.0), (1.0, 1.0))


def test_superposition_weights(rng):
    with pytest.raises(ConfigError):
        superposition_identity_test(lambda g, n: g.poisson(1.0, n), lambda t, x, g: x, 1.0, [0.5, 0.6], 1000, rng)
    with pytest.raises(ConfigError):
        stability_identity_test(lambda g, n: g.poisson(1.0, n), lambda t, x, g: x, 1.0, 1.0, 1000, rng)
    with pytest.raises(ConfigError):
        stability_identity_test(lambda g, n: g.poisson(1.0, n), lambda t, x, g: g.binomial(x, t), 1.0, 0.5, 1000,
                                rng, compare="ranks")


def _poisson_thinning(mean, rng, N=10_000):
    # Poisson is discrete 1-stable under thinning
    return stability_identity_test(
        lambda g, n: g.poisson(mean, n),
        lambda t, x, g: g.binomial(x, t),
        1.0, 0.4, N, rng
    )


def test_poisson_is_thinning_stable(rng):
    assert _poisson_thinning(4.0, rng).p_value > 1e-4


def test_three_way_superposition(rng):
    report = superposition_identity_test(
        lambda g, n: g.poisson(4.0, n),
        lambda t, x, g: g.binomial(x, t),
        1.0, [0.2, 0.3, 0.5], 10_000, rng
    )
    assert report.p_value > 1e-4
    assert report.details["weights"] == [0.2, 0.3, 0.5]


def test_inflated_poisson_is_not_stable(rng):
    # Poisson(mu) against two thinned Poisson(1.1 mu) copies
    report = stability_identity_test(
        lambda g, n: g.poisson(4.0, n),
        lambda t, x, g: g.binomial(g.poisson(4.4, len(x)), t),
        1.0, 0.5, 20_000, rng
    )
    assert report.p_value < 1e-3


def test_point_process_stability(torus, rng):
    mu = IntensityMeasure.uniform(torus, 3.0)
    report = stability_identity_test(
        lambda g: poisson_sample(mu, g),
        lambda t, phi, g: thin_config(t, phi, g),
        1.0, 0.5, 10_000, rng,
        compare=CellPartition.regular(torus, 2)
    )
    assert report.p_value > 1e-4
    assert set(report.details["cell_p_values"]) == {"cell-0", "cell-1", "cell-2", "cell-3", "total"}


@pytest.mark.slow
def test_count_test_calibration(rng):
    result = calibrate_type_one(
        lambda g: two_sample_counts(g.poisson(2.0, 1000), g.poisson(2.0, 1000)),
        4000, rng, name="counts"
    )
    assert 0.002 <= result.rate <= 0.03


@pytest.mark.slow
def test_reals_test_calibration(rng):
    result = calibrate_type_one(
        lambda g: two_sample_reals(g.exponential(1.0, 1000), g.exponential(1.0, 1000)),
        4000, rng, name="reals"
    )
    assert 0.002 <= result.rate <= 0.03


def test_calibration_needs_runs(rng):
    with pytest.raises(ConfigError):
        calibrate_type_one(lambda g: TestReport.deterministic("x", 0.0, True, 1), 0, rng)


def test_partition_cell_volume():
    torus = Window.torus([1.0, 1.0])
    assert math.isclose(CellPartition.regular(torus, 4).cell_volume, 1 / 16)


@pytest.mark.slow
def test_pp_equality_calibration(rng):
    torus = Window.torus([1.0, 1.0])
    mu = IntensityMeasure.uniform(torus, 1.0)
    partition = CellPartition.regular(torus, 2)
    result = calibrate_type_one(
        lambda g: pp_equality_test(
            lambda h: poisson_sample(mu, h), lambda h: poisson_sample(mu, h),
            partition, 10_000, g, alpha_level=0.05
        ),
        200, rng, name="pp-equality"
    )
    assert result.alpha_level == 0.05
    assert result.rate <= 0.1


def test_transform_band_calibration(rng):
    def run(g):
        x = g.normal(0.5, 1.0, 1000)
        return transform_band_test([(x.mean(), x.std(ddof=1) / math.sqrt(len(x)))], [0.5])

    result = calibrate_type_one(run, 4000, rng, name="band")
    assert result.alpha_level == pytest.approx(BAND_LEVEL)
    assert 0.0005 <= result.rate <= 0.007
