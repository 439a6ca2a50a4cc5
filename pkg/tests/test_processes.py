import csv
import math

import numpy as np
import numpy.testing as npt
import pytest

import config
from stability.errors import ConfigError, InsufficientSampleError, SimulationError
from stability.processes import (
    Grid,
    GridFunction,
    IntensityMeasure,
    PointConfig,
    TestFunction,
    UniformBlock,
    Window,
    cluster_compose,
    cox_sample,
    empirical_laplace,
    empirical_pgfl,
    measure_from_dict,
    parse_test_function,
    place_in_cells,
    poisson_pgfl_closed,
    poisson_sample,
    scatter_uniform,
    thin_config,
    window_from_dict,
)
from stability.stattest import CellPartition, pp_equality_test, two_sample_counts
from stability.streams import make_rng


def test_window_basics(torus, box):
    assert torus.is_torus and not box.is_torus
    assert box.volume == pytest.approx(2.0)
    npt.assert_allclose(torus.wrap(np.array([[1.25, -0.25]])), [[0.25, 0.75]])
    npt.assert_array_equal(box.contains(np.array([[1.5, 0.5], [2.5, 0.5]])), [True, False])
    assert window_from_dict(torus.to_dict()) == torus


@pytest.mark.parametrize("kind,sides", [("sphere", (1.0,)), ("box", ()), ("torus", (1.0, 0.0))])
def test_window_validation(kind, sides):
    with pytest.raises(ConfigError):
        Window(kind, sides)


def test_grid_cells(box):
    grid = Grid.covering(box, (4, 2))
    assert grid.n_cells == 8
    assert grid.cell_volume == pytest.approx(0.25)
    assert grid.covers_window
    idx = grid.cell_index(np.array([[0.1, 0.1], [1.9, 0.9], [2.0, 1.0]]))
    npt.assert_array_equal(idx, [0, 7, 7])

    sub = Grid(box, (2, 1), (0.0, 0.0), (1.0, 0.5))
    assert not sub.covers_window
    assert sub.cell_index(np.array([[1.5, 0.2]]))[0] == -1
    with pytest.raises(ConfigError):
        Grid(box, (2, 1), (0.0, 0.0), (3.0, 0.5))


def test_test_function_bounds(torus):
    grid = Grid.covering(torus, (2, 1))
    with pytest.raises(ConfigError):
        TestFunction(grid, np.array([0.0, 0.5]))
    with pytest.raises(ConfigError):
        TestFunction(grid, np.array([1.2, 0.5]))
    h = TestFunction(Grid(torus, (1, 1), (0.0, 0.0), (0.5, 1.0)), np.array([0.3]))
    npt.assert_allclose(h.at(np.array([[0.2, 0.5], [0.8, 0.5]])), [0.3, 1.0])


def test_point_config(torus):
    phi = PointConfig.from_counts(torus, np.array([[0.1, 0.1], [0.6, 0.6], [0.9, 0.2]]), np.array([2, 0, 3]))
    assert phi.n_sites == 2
    assert phi.total == 5
    assert (phi + PointConfig.empty(torus)).total == 5
    assert PointConfig.empty(torus).is_null

    grid = Grid.covering(torus, (2, 2))
    npt.assert_array_equal(phi.cell_counts(grid), [2, 0, 3, 0])

    h = GridFunction(grid, np.array([0.5, 1.0, 0.9, 1.0]))
    assert phi.pgfl_value(h) == pytest.approx(0.5 ** 2 * 0.9 ** 3)
    assert phi.integrate(h) == pytest.approx(2 * 0.5 + 3 * 0.9)
    assert PointConfig.empty(torus).pgfl_value(h) == 1.0

    with pytest.raises(ConfigError):
        PointConfig(torus, np.array([[0.1, 0.1]]), np.array([0]))


def test_intensity_measure_integrate(box):
    mu = IntensityMeasure(
        box,
        np.array([[0.5, 0.5]]),
        np.array([1.5]),
        Grid.covering(box, (2, 1)),
        np.array([1.0, 3.0])
    )
    assert mu.total_mass == pytest.approx(1.5 + 1.0 + 3.0)
    # u = 2 on [0, 0.5] x [0, 1], 0 elsewhere
    u = GridFunction(Grid(box, (1, 1), (0.0, 0.0), (0.5, 1.0)), np.array([2.0]), fill=0.0)
    assert mu.integrate(u) == pytest.approx(2.0 * 1.5 + 2.0 * 0.5)
    assert mu.normalised().total_mass == pytest.approx(1.0)
    assert mu.scaled(0.0).total_mass == 0.0
    with pytest.raises(ConfigError):
        mu.scaled(-1.0)
    with pytest.raises(ConfigError):
        IntensityMeasure.atom(box, [3.0, 0.5], 1.0)


def test_poisson_pgfl_matches_closed_form(torus, rng, assert_within_se):
    mu = IntensityMeasure.uniform(torus, 3.0, (2, 2))
    functions = [
        TestFunction.constant(torus, 0.6),
        parse_test_function(torus, {"shape": [2, 2], "values": [0.2, 1.0, 1.0, 0.7]}),
    ]
    estimates = [empirical_pgfl(lambda g: poisson_sample(mu, g), h, 20_000, rng) for h in functions]
    assert_within_se(estimates, [poisson_pgfl_closed(mu, h) for h in functions])
    assert poisson_pgfl_closed(mu, functions[0]) == pytest.approx(math.exp(-3.0 * 0.4))


def test_functional_estimates_need_replicates(torus, rng):
    mu = IntensityMeasure.uniform(torus, 1.0)
    with pytest.raises(InsufficientSampleError):
        empirical_pgfl(lambda g: poisson_sample(mu, g), TestFunction.constant(torus, 0.5), 999, rng)
    with pytest.raises(InsufficientSampleError):
        empirical_laplace(lambda g: mu, GridFunction.constant(torus, 1.0), 10, rng)


def test_empirical_laplace(torus, rng):
    mu = IntensityMeasure.uniform(torus, 2.0)
    assert empirical_laplace(lambda g: mu, GridFunction.constant(torus, 0.0), 1000, rng) == (1.0, 0.0)
    value, se = empirical_laplace(lambda g: mu.scaled(g.exponential()), GridFunction.constant(torus, 0.5), 20_000, rng)
    # E exp{-E} = 1/2
    assert abs(value - 0.5) < 4.5 * se


def _left_half_counts(phi, torus, rng):
    return phi.cell_counts(Grid.covering(torus, (2, 1)), rng)[0]


@pytest.mark.parametrize("make_measure", [
    lambda w: IntensityMeasure.uniform(w, 10_000.0),
    lambda w: IntensityMeasure.uniform(w, 10_000.0, (1, 2)),
], ids=["one-cell", "two-cells"])
def test_poisson_counts_on_subcells_are_poisson(make_measure, torus, rng):
    mu = make_measure(torus)
    counts = np.array([_left_half_counts(poisson_sample(mu, rng), torus, rng) for _ in range(400)])
    assert abs(counts.mean() - 5000.0) < 4.5 * math.sqrt(5000.0 / 400)
    assert 0.75 < counts.var(ddof=1) / counts.mean() < 1.3


def test_place_in_cells_places_every_point(torus, rng):
    grid = Grid.covering(torus, (2, 1))
    phi = place_in_cells(grid, np.array([3, 1000]), rng)
    assert phi.n_sites == 1003
    assert np.all(phi.multiplicities == 1)
    assert not phi.blocks
    npt.assert_array_equal(phi.cell_counts(grid), [3, 1000])


def test_place_in_cells_keeps_blocks_above_limit(torus, rng, monkeypatch):
    monkeypatch.setattr(config.settings, "max_placed_points", 50)
    grid = Grid.covering(torus, (2, 1))
    phi = place_in_cells(grid, np.array([3, 1000]), rng)
    assert phi.n_sites == 0 and len(phi.blocks) == 2
    assert phi.total == 1003
    npt.assert_array_equal(phi.cell_counts(grid, rng), [3, 1000])
    finer = phi.cell_counts(Grid.covering(torus, (4, 1)), rng)
    assert finer[:2].sum() == 3 and finer[2:].sum() == 1000
    with pytest.raises(ConfigError):
        phi.cell_counts(grid)


def test_block_counts_on_subcells_are_poisson(torus, rng, monkeypatch):
    monkeypatch.setattr(config.settings, "max_placed_points", 100)
    mu = IntensityMeasure.uniform(torus, 2000.0)
    samples = [poisson_sample(mu, rng) for _ in range(400)]
    assert all(phi.blocks for phi in samples)
    counts = np.array([_left_half_counts(phi, torus, rng) for phi in samples])
    assert 0.75 < counts.var(ddof=1) / counts.mean() < 1.3


def test_scatter_uniform_switches_to_block(torus, rng, monkeypatch):
    lower, upper = np.zeros(2), torus.side_array()
    assert scatter_uniform(torus, lower, upper, 0, rng).is_null
    assert scatter_uniform(torus, lower, upper, 40, rng).n_sites == 40
    monkeypatch.setattr(config.settings, "max_placed_points", 30)
    phi = scatter_uniform(torus, lower, upper, 40, rng)
    assert phi.n_sites == 0 and phi.total == 40
    assert phi.blocks[0].spans(torus)
    assert phi.to_rows() == [["0..1", "0..1", 40]]


def test_block_thinning_is_binomial(torus, rng, mean_se):
    block = PointConfig.empty(torus).with_blocks([UniformBlock(np.zeros(2), np.ones(2), 400)])
    totals = np.array([thin_config(0.5, block, rng).total for _ in range(4000)])
    mean, se = mean_se(totals)
    assert abs(mean - 200.0) < 4.5 * se
    assert 0.85 < totals.var(ddof=1) / 100.0 < 1.15


def test_marked_block_is_evaluated_with_its_unit_maps(torus, rng, monkeypatch):
    block = UniformBlock(np.zeros(2), np.ones(2), 60)
    phi = PointConfig.empty(torus).with_blocks([block]).apply_units(lambda counts, g: 2 * counts, rng)
    assert phi.blocks[0].is_marked
    with pytest.raises(ConfigError):
        phi.total
    assert phi.cell_counts(Grid.covering(torus, (3, 3)), rng).sum() == 120
    assert phi.pgfl_value(TestFunction.constant(torus, 0.5), rng) == pytest.approx(0.5 ** 120)
    assert phi.integrate(GridFunction.constant(torus, 1.5), rng) == pytest.approx(180.0)

    monkeypatch.setattr(config.settings, "max_placed_points", 50)
    with pytest.raises(SimulationError):
        phi.placed(rng)
    monkeypatch.setattr(config.settings, "max_placed_points", 100)
    placed = phi.placed(rng)
    assert placed.n_sites == 60 and np.all(placed.multiplicities == 2)
    assert not placed.blocks


def test_uniform_block_validation():
    with pytest.raises(ConfigError):
        UniformBlock(np.zeros(2), np.array([1.0, 0.0]), 5)
    with pytest.raises(ConfigError):
        UniformBlock(np.zeros(2), np.ones(2), 0)


def test_sample_iid_and_cluster_compose(torus, rng):
    mu = IntensityMeasure.atom(torus, [0.25, 0.25], 1.0)
    phi = mu.sample_iid(7, rng)
    assert phi.total == 7 and phi.n_sites == 1
    center = PointConfig(torus, np.array([[0.5, 0.5], [0.1, 0.9]]), np.array([2, 1]))
    composed = cluster_compose(center, lambda loc, g: PointConfig(torus, loc[None, :], np.array([3])), rng)
    assert composed.total == 9


def test_thin_config(torus, rng):
    phi = PointConfig(torus, np.array([[0.5, 0.5]]), np.array([10]))
    assert thin_config(1.0, phi, rng).total == 10
    assert thin_config(0.0, phi, rng).is_null
    with pytest.raises(ConfigError):
        thin_config(-0.1, phi, rng)


def test_measure_from_dict(torus):
    mu = measure_from_dict(torus, {
        "atoms": [{"location": [0.5, 0.5], "mass": 0.25}],
        "density": {"shape": [2, 2], "values": [0.75]}
    })
    assert mu.total_mass == pytest.approx(1.0)
    npt.assert_allclose(mu.cell_masses, 0.75 / 4)
    assert measure_from_dict(torus, mu.to_dict()).total_mass == pytest.approx(1.0)


def test_write_csv(torus, tmp_path):
    phi = PointConfig(torus, np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([1, 4]))
    path = tmp_path / "phi.csv"
    phi.write_csv(str(path), header={"seed": 7})
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["# seed=7"]
    assert rows[1] == ["x1", "x2", "multiplicity"]
    assert [int(r[2]) for r in rows[2:]] == [1, 4]


@pytest.mark.slow
def test_thinned_poisson_is_poisson(torus, rng):
    mu = IntensityMeasure.uniform(torus, 4.0)
    report = pp_equality_test(
        lambda g: thin_config(0.5, poisson_sample(mu, g), g),
        lambda g: poisson_sample(mu.scaled(0.5), g),
        CellPartition.regular(torus, 2),
        10_000, rng
    )
    assert report.p_value > 1e-4


def test_cox_of_constant_measure_is_poisson(torus, rng, assert_within_se):
    mu = IntensityMeasure.uniform(torus, 2.0)
    h = TestFunction.constant(torus, 0.5)
    estimate = empirical_pgfl(lambda g: cox_sample(lambda _: mu, g), h, 10_000, rng)
    assert_within_se([estimate], [poisson_pgfl_closed(mu, h)])


def test_poisson_counts_on_disjoint_cells_are_independent(torus, rng):
    mu = IntensityMeasure.uniform(torus, 5.0, (2, 1))
    grid = Grid.covering(torus, (2, 1))
    counts = np.array([poisson_sample(mu, rng).cell_counts(grid) for _ in range(20_000)])
    assert abs(np.corrcoef(counts[:, 0], counts[:, 1])[0, 1]) < 4.5 / math.sqrt(len(counts))
    for cell in range(2):
        fresh = rng.poisson(2.5, len(counts))
        assert two_sample_counts(counts[:, cell], fresh, name="cell-count-law").p_value > 1e-4


def test_empirical_pgfl_is_monotone_in_h(torus):
    mu = IntensityMeasure.uniform(torus, 3.0, (2, 2))
    lower = parse_test_function(torus, {"shape": [2, 2], "values": [0.2, 0.6, 0.5, 0.9]})
    upper = parse_test_function(torus, {"shape": [2, 2], "values": [0.3, 0.6, 0.8, 1.0]})
    # a shared seed draws the same configurations for both functions
    low, _ = empirical_pgfl(lambda g: poisson_sample(mu, g), lower, 5000, make_rng(31))
    high, _ = empirical_pgfl(lambda g: poisson_sample(mu, g), upper, 5000, make_rng(31))
    assert low <= high


def test_cluster_pgfl_composes_center_and_component(torus, rng, assert_within_se):
    # Poisson(m) offspring stacked on each center: G[h] = G_center[exp{-m (1 - h)}]
    mu = IntensityMeasure.uniform(torus, 2.0)
    m = 1.5

    def component(location, g):
        return PointConfig.from_counts(torus, location[None, :], np.array([g.poisson(m)]))

    h = parse_test_function(torus, {"shape": [2, 2], "values": [0.3, 0.9, 0.6, 1.0]})
    estimate = empirical_pgfl(lambda g: cluster_compose(poisson_sample(mu, g), component, g), h, 20_000, rng)
    target = poisson_pgfl_closed(mu, h.map(lambda v: np.exp(-m * (1.0 - v))))
    assert_within_se([estimate], [target])


def test_gamma_mixed_poisson_is_negative_binomial(torus, rng, assert_within_se):
    shape, scale = 2.0, 1.5

    def sampler(g):
        return cox_sample(lambda inner: IntensityMeasure.uniform(torus, inner.gamma(shape, scale)), g)

    zs = [0.3, 0.7]
    estimates = [empirical_pgfl(sampler, TestFunction.constant(torus, z), 20_000, rng) for z in zs]
    assert_within_se(estimates, [(1.0 + scale * (1.0 - z)) ** (-shape) for z in zs])

    totals = np.array([sampler(rng).total for _ in range(10_000)])
    reference = rng.negative_binomial(shape, 1.0 / (1.0 + scale), len(totals))
    assert two_sample_counts(totals, reference, name="cox-negative-binomial").p_value > 1e-4
