"""Point configurations on boxes and tori, Poisson/Cox/cluster samplers and functional estimators."""
import csv
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

import config
from stability import streams
from stability.errors import ConfigError, InsufficientSampleError, SimulationError

logger = logging.getLogger(__name__)

MIN_REPLICATES = 1000


@dataclass(frozen=True)
class Window:
    """Axis-aligned box [0, L_1] x ... x [0, L_d], optionally with periodic boundary."""

    kind: str
    sides: Tuple[float, ...]

    BOX = "box"
    TORUS = "torus"

    def __post_init__(self):
        if self.kind not in (self.BOX, self.TORUS):
            raise ConfigError(f"Unknown window kind: {self.kind}. Expected box or torus.")
        if not self.sides or any(not side > 0 for side in self.sides):
            raise ConfigError(f"Window sides must be positive, got {self.sides}")

    @classmethod
    def torus(cls, sides: Sequence[float]) -> "Window":
        return cls(cls.TORUS, tuple(float(s) for s in sides))

    @classmethod
    def box(cls, sides: Sequence[float]) -> "Window":
        return cls(cls.BOX, tuple(float(s) for s in sides))

    @property
    def dim(self) -> int:
        return len(self.sides)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def is_torus(self) -> bool:
        return self.kind == self.TORUS

    def side_array(self) -> np.ndarray:
        return np.asarray(self.sides, dtype=float)

    def wrap(self, locations: np.ndarray) -> np.ndarray:
        return np.mod(locations, self.side_array())

    def contains(self, locations: np.ndarray) -> np.ndarray:
        locations = np.atleast_2d(locations)
        return np.all((locations >= 0.0) & (locations <= self.side_array()), axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "sides": list(self.sides)}


@dataclass(frozen=True, eq=False)
class Grid:
    """Rectangular grid of ``shape`` cells over the sub-box [lower, upper] of a window."""

    window: Window
    shape: Tuple[int, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        d = self.window.dim
        if len(self.shape) != d or len(self.lower) != d or len(self.upper) != d:
            raise ConfigError(f"Grid needs {d} entries per axis")
        if any(n < 1 for n in self.shape):
            raise ConfigError(f"Grid shape must be positive, got {self.shape}")
        for lo, hi, side in zip(self.lower, self.upper, self.window.sides):
            if not (0.0 <= lo < hi <= side):
                raise ConfigError(f"Grid bounds [{lo}, {hi}] outside window side {side}")

    @classmethod
    def covering(cls, window: Window, shape: Sequence[int]) -> "Grid":
        return cls(window, tuple(int(n) for n in shape), (0.0,) * window.dim, tuple(window.sides))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_widths(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    @property
    def covers_window(self) -> bool:
        return all(lo == 0.0 for lo in self.lower) and tuple(self.upper) == tuple(self.window.sides)

    def edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.shape[axis] + 1)

    def cell_index(self, locations: np.ndarray) -> np.ndarray:
        """Flat cell index per location, -1 outside the grid."""
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        if locations.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        lower = np.asarray(self.lower)
        rel = (locations - lower) / self.cell_widths
        inside = np.all((locations >= lower) & (locations <= np.asarray(self.upper)), axis=1)
        idx = np.clip(np.floor(rel).astype(np.int64), 0, np.asarray(self.shape) - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.shape)
        return np.where(inside, flat, -1)

    def cell_lower_corners(self) -> np.ndarray:
        """(n_cells, d) lower corners in flat (C) order."""
        grids = np.meshgrid(*[self.edges(k)[:-1] for k in range(self.window.dim)], indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def overlap_lengths(self, other: "Grid", axis: int) -> np.ndarray:
        """Matrix of interval-overlap lengths between this grid's and ``other``'s cells on one axis."""
        a, b = self.edges(axis), other.edges(axis)
        lo = np.maximum(a[:-1, None], b[None, :-1])
        hi = np.minimum(a[1:, None], b[None, 1:])
        return np.clip(hi - lo, 0.0, None)

    def uniform_in_cells(self, cells: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One uniform location inside each listed cell."""
        corners = self.cell_lower_corners()[cells]
        return corners + rng.random(corners.shape) * self.cell_widths

    def to_dict(self) -> Dict[str, Any]:
        return {"shape": list(self.shape), "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function: cell values on a grid, ``fill`` elsewhere in the window."""

    grid: Grid
    values: np.ndarray
    fill: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.n_cells:
            raise ConfigError(f"Expected {self.grid.n_cells} cell values, got {values.size}")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, window: Window, value: float) -> "GridFunction":
        grid = Grid.covering(window, (1,) * window.dim)
        return cls(grid, np.array([value]), fill=value)

    def at(self, locations: np.ndarray) -> np.ndarray:
        cells = self.grid.cell_index(locations)
        return np.where(cells >= 0, self.values[np.maximum(cells, 0)], self.fill)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """Apply ``fn`` pointwise (cell values and fill alike)."""
        return GridFunction(self.grid, np.asarray(fn(self.values), dtype=float),
                            float(np.asarray(fn(np.array([self.fill])))[0]))

    def to_dict(self) -> Dict[str, Any]:
        return {**self.grid.to_dict(), "values": self.values.tolist(), "fill": self.fill}


class TestFunction(GridFunction):
    """Test function h with 0 < h <= 1 and h = 1 outside its grid."""

    __test__ = False

    def __init__(self, grid: Grid, values: np.ndarray):
        super().__init__(grid, values, fill=1.0)
        if np.any(self.values <= 0.0) or np.any(self.values > 1.0):
            raise ConfigError("Test function values must lie in (0, 1]")

    @classmethod
    def constant(cls, window: Window, value: float) -> "TestFunction":
        return cls(Grid.covering(window, (1,) * window.dim), np.array([value]))


# n units -> per-entry sum of n independent unit outcomes
UnitMap = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def check_placeable(n: int, what: str = "placement"):
    """
    Raises:
        SimulationError: If ``n`` exceeds settings.max_placed_points
    """
    limit = config.settings.max_placed_points
    if n > limit:
        raise SimulationError(
            f"{what} needs {n} individually placed points, above max_placed_points={limit}",
            {"points": int(n), "limit": limit}
        )


def _box_shares(lower: np.ndarray, upper: np.ndarray, grid: Grid) -> np.ndarray:
    """Share of the box [lower, upper] inside each grid cell, flat order."""
    shares = None
    for axis in range(grid.window.dim):
        edges = grid.edges(axis)
        overlap = np.minimum(edges[1:], upper[axis]) - np.maximum(edges[:-1], lower[axis])
        part = np.clip(overlap, 0.0, None) / (upper[axis] - lower[axis])
        shares = part if shares is None else np.multiply.outer(shares, part)
    return np.asarray(shares).reshape(-1)


@dataclass(frozen=True, eq=False)
class UniformBlock:
    """
    ``count`` units i.i.d. uniform on the box [lower, upper], not yet placed.

    ``unit_maps`` are pending thinning, branching or marking steps. Each sends n units
    to a sum of n independent outcomes, so it can be applied to any split of the
    block's units.
    """

    lower: np.ndarray
    upper: np.ndarray
    count: int
    unit_maps: Tuple[UnitMap, ...] = ()

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or np.any(upper <= lower):
            raise ConfigError("Block box needs lower < upper on every axis")
        if int(self.count) < 1:
            raise ConfigError(f"Block count must be positive, got {self.count}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "unit_maps", tuple(self.unit_maps))

    @property
    def is_marked(self) -> bool:
        return bool(self.unit_maps)

    def spans(self, window: Window) -> bool:
        return bool(np.all(self.lower == 0.0) and np.allclose(self.upper, window.side_array()))

    def then(self, unit_map: UnitMap) -> "UniformBlock":
        return UniformBlock(self.lower, self.upper, self.count, self.unit_maps + (unit_map,))

    def thinned(self, t: float, rng: np.random.Generator) -> Optional["UniformBlock"]:
        if self.is_marked:
            return self.then(lambda counts, g: g.binomial(counts, t))
        kept = int(rng.binomial(self.count, t))
        return UniformBlock(self.lower, self.upper, kept) if kept else None

    def split(self, grid: Grid, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
        """Unit totals per grid cell and outside the grid, pending maps applied."""
        shares = _box_shares(self.lower, self.upper, grid)
        probs = np.append(shares, max(0.0, 1.0 - float(shares.sum())))
        counts = rng.multinomial(self.count, probs / probs.sum()).astype(np.int64)
        for unit_map in self.unit_maps:
            counts = np.asarray(unit_map(counts, rng), dtype=np.int64)
        return counts[:-1], int(counts[-1])

    def place(self, window: Window, rng: np.random.Generator) -> "PointConfig":
        check_placeable(self.count, "placing a uniform block")
        locations = self.lower + rng.random((self.count, len(self.lower))) * (self.upper - self.lower)
        units = np.ones(self.count, dtype=np.int64)
        for unit_map in self.unit_maps:
            units = np.asarray(unit_map(units, rng), dtype=np.int64)
        return PointConfig.from_counts(window, locations, units)


def scatter_uniform(
    window: Window,
    lower: np.ndarray,
    upper: np.ndarray,
    count: int,
    rng: np.random.Generator
) -> "PointConfig":
    """``count`` i.i.d. uniform points on a box: placed up to the limit, a block above it."""
    if count <= 0:
        return PointConfig.empty(window)
    if count > config.settings.max_placed_points:
        return PointConfig(window, np.empty((0, window.dim)), np.empty(0, dtype=np.int64),
                           (UniformBlock(lower, upper, count),))
    lower = np.asarray(lower, dtype=float)
    locations = lower + rng.random((count, window.dim)) * (np.asarray(upper, dtype=float) - lower)
    return PointConfig(window, locations, np.ones(count, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class PointConfig:
    """
    Finite counting measure: sites with positive integer multiplicities.

    ``blocks`` hold further units that are i.i.d. uniform on boxes but not placed.
    Functionals split them over their own grid with the caller's generator, so every
    evaluation of a configuration with blocks is a fresh draw of those units.
    """

    window: Window
    locations: np.ndarray
    multiplicities: np.ndarray
    blocks: Tuple[UniformBlock, ...] = ()

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float).reshape(-1, self.window.dim)
        multiplicities = np.asarray(self.multiplicities, dtype=np.int64).reshape(-1)
        if len(locations) != len(multiplicities):
            raise ConfigError("locations and multiplicities differ in length")
        if np.any(multiplicities < 1):
            raise ConfigError("multiplicities must be positive")
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "multiplicities", multiplicities)
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @classmethod
    def empty(cls, window: Window) -> "PointConfig":
        return cls(window, np.empty((0, window.dim)), np.empty(0, dtype=np.int64))

    @classmethod
    def from_counts(cls, window: Window, locations: np.ndarray, counts: np.ndarray) -> "PointConfig":
        """Drop zero-count sites."""
        counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        keep = counts > 0
        return cls(window, np.asarray(locations).reshape(-1, window.dim)[keep], counts[keep])

    @classmethod
    def superpose_all(cls, window: Window, configs: Iterable["PointConfig"]) -> "PointConfig":
        configs = list(configs)
        if not configs:
            return cls.empty(window)
        return cls(
            window,
            np.concatenate([c.locations for c in configs]),
            np.concatenate([c.multiplicities for c in configs]),
            tuple(b for c in configs for b in c.blocks)
        )

    @property
    def total(self) -> int:
        """
        Raises:
            ConfigError: If a block still has pending unit maps
        """
        if any(b.is_marked for b in self.blocks):
            raise ConfigError("The total of a marked block is random; use cell_counts with a generator")
        return int(self.multiplicities.sum()) + sum(b.count for b in self.blocks)

    @property
    def n_sites(self) -> int:
        return len(self.multiplicities)

    @property
    def is_null(self) -> bool:
        return self.n_sites == 0 and not self.blocks

    def superpose(self, other: "PointConfig") -> "PointConfig":
        return PointConfig.superpose_all(self.window, [self, other])

    def __add__(self, other: "PointConfig") -> "PointConfig":
        return self.superpose(other)

    def with_multiplicities(self, counts: np.ndarray) -> "PointConfig":
        """New site multiplicities; blocks are kept as they are."""
        counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        keep = counts > 0
        return PointConfig(self.window, self.locations[keep], counts[keep], self.blocks)

    def with_blocks(self, blocks: Iterable[UniformBlock]) -> "PointConfig":
        return PointConfig(self.window, self.locations, self.multiplicities, tuple(blocks))

    def apply_units(self, unit_map: UnitMap, rng: np.random.Generator) -> "PointConfig":
        """Apply a per-unit map to the sites now and defer it on the blocks."""
        sites = self.with_multiplicities(unit_map(self.multiplicities, rng)) if self.n_sites else self
        return sites.with_blocks(b.then(unit_map) for b in self.blocks)

    def placed(self, rng: np.random.Generator) -> "PointConfig":
        """Every block drawn out as explicit sites."""
        if not self.blocks:
            return self
        sites = PointConfig(self.window, self.locations, self.multiplicities)
        return PointConfig.superpose_all(self.window, [sites] + [b.place(self.window, rng) for b in self.blocks])

    def _block_totals(self, grid: Grid, rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, int]:
        inside = np.zeros(grid.n_cells, dtype=np.int64)
        outside = 0
        if not self.blocks:
            return inside, outside
        if rng is None:
            raise ConfigError("Configurations with unplaced blocks need a generator to evaluate")
        for block in self.blocks:
            cells, rest = block.split(grid, rng)
            inside += cells
            outside += rest
        return inside, outside

    def cell_counts(self, grid: Grid, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        cells = grid.cell_index(self.locations)
        inside = cells >= 0
        counts = np.bincount(cells[inside], weights=self.multiplicities[inside],
                             minlength=grid.n_cells).astype(np.int64)
        return counts + self._block_totals(grid, rng)[0]

    def pgfl_value(self, h: GridFunction, rng: Optional[np.random.Generator] = None) -> float:
        """prod_x h(x)^{multiplicity}"""
        if self.is_null:
            return 1.0
        values = np.concatenate([h.at(self.locations), h.values, [h.fill]])
        block_cells, block_rest = self._block_totals(h.grid, rng)
        powers = np.concatenate([self.multiplicities, block_cells, [block_rest]])
        used = powers > 0
        if np.any(values[used] == 0.0):
            return 0.0
        return float(np.exp(np.dot(powers[used], np.log(values[used]))))

    def integrate(self, u: GridFunction, rng: Optional[np.random.Generator] = None) -> float:
        if self.is_null:
            return 0.0
        block_cells, block_rest = self._block_totals(u.grid, rng)
        return float(np.dot(self.multiplicities, u.at(self.locations))
                     + np.dot(block_cells, u.values) + block_rest * u.fill)

    def to_rows(self) -> List[List[Any]]:
        """One row per site; a block is one row of coordinate ranges and its unit count."""
        rows = [[*loc.tolist(), int(m)] for loc, m in zip(self.locations, self.multiplicities)]
        for block in self.blocks:
            ranges = [f"{lo:g}..{hi:g}" for lo, hi in zip(block.lower, block.upper)]
            rows.append([*ranges, block.count])
        return rows

    def write_csv(self, path: str, header: Optional[Dict[str, Any]] = None) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            if header:
                writer.writerow([f"# {key}={value}" for key, value in header.items()])
            writer.writerow([f"x{k + 1}" for k in range(self.window.dim)] + ["multiplicity"])
            writer.writerows(self.to_rows())


def place_in_cells(grid: Grid, counts: np.ndarray, rng: np.random.Generator) -> "PointConfig":
    """
    ``counts[c]`` i.i.d. uniform points in each cell c, every one at its own location.

    When the total exceeds settings.max_placed_points each occupied cell becomes an
    unplaced block instead.
    """
    counts = np.asarray(counts, dtype=np.int64)
    occupied = np.flatnonzero(counts > 0)
    if counts.sum() > config.settings.max_placed_points:
        corners = grid.cell_lower_corners()
        blocks = [UniformBlock(corners[c], corners[c] + grid.cell_widths, counts[c]) for c in occupied]
        return PointConfig.empty(grid.window).with_blocks(blocks)
    cells = np.repeat(occupied, counts[occupied])
    locations = grid.uniform_in_cells(cells, rng)
    return PointConfig(grid.window, locations, np.ones(len(cells), dtype=np.int64))


@dataclass(frozen=True, eq=False)
class IntensityMeasure:
    """Atoms plus a piecewise-constant density (per unit volume) on a grid."""

    window: Window
    atom_locations: np.ndarray
    atom_masses: np.ndarray
    grid: Grid
    density: np.ndarray

    def __post_init__(self):
        locations = np.asarray(self.atom_locations, dtype=float).reshape(-1, self.window.dim)
        masses = np.asarray(self.atom_masses, dtype=float).reshape(-1)
        density = np.asarray(self.density, dtype=float).reshape(-1)
        if len(locations) != len(masses):
            raise ConfigError("atom locations and masses differ in length")
        if np.any(masses <= 0) or np.any(density < 0):
            raise ConfigError("atom masses must be positive and the density non-negative")
        if not np.all(self.window.contains(locations)) and len(locations):
            raise ConfigError("atoms must lie inside the window")
        if density.size != self.grid.n_cells:
            raise ConfigError(f"Expected {self.grid.n_cells} density values, got {density.size}")
        if not self.grid.covers_window:
            raise ConfigError("Density grid must cover the window")
        object.__setattr__(self, "atom_locations", locations)
        object.__setattr__(self, "atom_masses", masses)
        object.__setattr__(self, "density", density)

    @classmethod
    def zero(cls, window: Window) -> "IntensityMeasure":
        grid = Grid.covering(window, (1,) * window.dim)
        return cls(window, np.empty((0, window.dim)), np.empty(0), grid, np.zeros(1))

    @classmethod
    def uniform(cls, window: Window, total: float, shape: Optional[Sequence[int]] = None) -> "IntensityMeasure":
        grid = Grid.covering(window, shape or (1,) * window.dim)
        density = np.full(grid.n_cells, total / window.volume)
        return cls(window, np.empty((0, window.dim)), np.empty(0), grid, density)

    @classmethod
    def atom(cls, window: Window, location: Sequence[float], mass: float) -> "IntensityMeasure":
        grid = Grid.covering(window, (1,) * window.dim)
        return cls(window, np.asarray([location], dtype=float), np.asarray([mass]), grid, np.zeros(1))

    @property
    def cell_masses(self) -> np.ndarray:
        return self.density * self.grid.cell_volume

    @property
    def total_mass(self) -> float:
        return float(self.atom_masses.sum() + self.cell_masses.sum())

    def scaled(self, factor: float) -> "IntensityMeasure":
        if factor < 0:
            raise ConfigError(f"Scale factor must be non-negative, got {factor}")
        if factor == 0:
            return IntensityMeasure.zero(self.window)
        return IntensityMeasure(self.window, self.atom_locations, self.atom_masses * factor,
                                self.grid, self.density * factor)

    def normalised(self) -> "IntensityMeasure":
        total = self.total_mass
        if total <= 0:
            raise ConfigError("Cannot normalise the zero measure")
        return self.scaled(1.0 / total)

    def integrate(self, u: GridFunction) -> float:
        """<u, mu>"""
        atoms = float(np.dot(self.atom_masses, u.at(self.atom_locations))) if len(self.atom_masses) else 0.0
        if not np.any(self.density):
            return atoms
        # fill over the whole density, then correct on the function's grid
        result = u.fill * float(self.cell_masses.sum())
        overlap = self.density.reshape(self.grid.shape)
        for axis in range(self.window.dim):
            overlap = np.tensordot(overlap, self.grid.overlap_lengths(u.grid, axis), axes=([0], [0]))
        result += float(np.sum(overlap * (u.values.reshape(u.grid.shape) - u.fill)))
        return atoms + result

    def _split(self, counts: np.ndarray, rng: np.random.Generator) -> "PointConfig":
        n_atoms = len(self.atom_masses)
        atom_counts, cell_counts = counts[:n_atoms], counts[n_atoms:]
        return PointConfig.superpose_all(self.window, [
            PointConfig.from_counts(self.window, self.atom_locations, atom_counts),
            place_in_cells(self.grid, cell_counts, rng)
        ])

    def sample_poisson(self, rng: np.random.Generator) -> PointConfig:
        masses = np.concatenate([self.atom_masses, self.cell_masses])
        return self._split(rng.poisson(masses), rng)

    def sample_iid(self, count: int, rng: np.random.Generator) -> PointConfig:
        """``count`` i.i.d. points from the normalised measure."""
        if count == 0:
            return PointConfig.empty(self.window)
        masses = np.concatenate([self.atom_masses, self.cell_masses])
        return self._split(rng.multinomial(int(count), masses / masses.sum()), rng)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "atoms": [{"location": loc.tolist(), "mass": float(m)}
                      for loc, m in zip(self.atom_locations, self.atom_masses)],
            "density": {"shape": list(self.grid.shape), "values": self.density.tolist()}
        }


def poisson_sample(mu: IntensityMeasure, rng: np.random.Generator) -> PointConfig:
    return mu.sample_poisson(rng)


def cox_sample(measure_sampler: Callable[[np.random.Generator], Any], rng: np.random.Generator) -> PointConfig:
    """Poisson process driven by a random measure drawn from ``measure_sampler``."""
    return measure_sampler(rng).sample_poisson(rng)


def cluster_compose(
    center: PointConfig,
    component_sampler: Callable[[np.ndarray, np.random.Generator], PointConfig],
    rng: np.random.Generator
) -> PointConfig:
    """Superpose one independent component per unit of center multiplicity."""
    center = center.placed(rng)
    components = []
    for location, multiplicity in zip(center.locations, center.multiplicities):
        for _ in range(int(multiplicity)):
            components.append(component_sampler(location, rng))
    return PointConfig.superpose_all(center.window, components)


def thin_config(t: float, phi: PointConfig, rng: np.random.Generator) -> PointConfig:
    """Independent Bernoulli(t) retention of every multiplicity unit."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"Thinning probability must lie in [0, 1], got {t}")
    if phi.is_null:
        return phi
    kept = phi.with_multiplicities(rng.binomial(phi.multiplicities, t))
    blocks = [b.thinned(t, rng) for b in phi.blocks]
    return kept.with_blocks(b for b in blocks if b is not None)


def _mean_and_se(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def _check_replicates(N: int):
    if N < MIN_REPLICATES:
        raise InsufficientSampleError(
            f"Functional estimates need at least {MIN_REPLICATES} replicates, got {N}",
            {"N": N}
        )


def empirical_pgfl(
    process_sampler: Callable[[np.random.Generator], PointConfig],
    h: GridFunction,
    N: int,
    rng: np.random.Generator,
    workers: Optional[int] = None
) -> Tuple[float, float]:
    """
    Monte Carlo estimate of G[h] = E prod h(x)^{multiplicity}.

    Returns:
        (estimate, standard error)
    """
    _check_replicates(N)
    values = streams.replicate(lambda g: process_sampler(g).pgfl_value(h, g), N, rng, workers)
    return _mean_and_se(values)


def empirical_laplace(
    measure_sampler: Callable[[np.random.Generator], Any],
    u: GridFunction,
    N: int,
    rng: np.random.Generator,
    workers: Optional[int] = None
) -> Tuple[float, float]:
    """Monte Carlo estimate of L[u] = E exp{-<u, xi>} with its standard error."""
    _check_replicates(N)
    if np.all(u.values == 0) and u.fill == 0:
        return 1.0, 0.0
    values = streams.replicate(lambda g: math.exp(-measure_sampler(g).integrate(u)), N, rng, workers)
    return _mean_and_se(values)


def poisson_pgfl_closed(mu: IntensityMeasure, h: GridFunction) -> float:
    """exp{-<1 - h, mu>}"""
    return math.exp(-mu.integrate(h.map(lambda v: 1.0 - v)))


def window_from_dict(data: Dict[str, Any]) -> Window:
    return Window(data.get("kind", Window.TORUS), tuple(float(s) for s in data["sides"]))


def measure_from_dict(window: Window, data: Dict[str, Any]) -> IntensityMeasure:
    """IntensityMeasure from its config JSON: atoms list plus an optional density grid."""
    atoms = data.get("atoms", [])
    density = data.get("density")
    if density is None:
        grid = Grid.covering(window, (1,) * window.dim)
        values = np.zeros(1)
    else:
        grid = Grid.covering(window, density["shape"])
        values = np.asarray(density["values"], dtype=float)
        if values.size == 1 and grid.n_cells > 1:
            values = np.full(grid.n_cells, float(values[0]))
    return IntensityMeasure(
        window,
        np.asarray([a["location"] for a in atoms], dtype=float).reshape(-1, window.dim),
        np.asarray([a["mass"] for a in atoms], dtype=float),
        grid,
        values
    )


def parse_test_function(window: Window, data: Dict[str, Any]) -> TestFunction:
    shape = data.get("shape", [1] * window.dim)
    lower = data.get("lower", [0.0] * window.dim)
    upper = data.get("upper", list(window.sides))
    grid = Grid(window, tuple(int(n) for n in shape), tuple(map(float, lower)), tuple(map(float, upper)))
    values = np.asarray(data["values"], dtype=float)
    if values.size == 1 and grid.n_cells > 1:
        values = np.full(grid.n_cells, float(values[0]))
    return TestFunction(grid, values)

