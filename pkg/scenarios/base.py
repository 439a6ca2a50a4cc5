"""Scenario registry and the seeded run loop."""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

import config
from scenarios.models import ScenarioConfig
from scenarios.protocol import UnknownScenarioError
from stability.stattest import TestReport
from stability.streams import make_rng
from stability.tracing import trace_span

logger = logging.getLogger(__name__)

# column names, rows
SampleTable = Tuple[List[str], List[List[Any]]]


@dataclass
class ScenarioContext:
    """Everything a scenario handler may read."""

    config: ScenarioConfig
    seed: int
    rng: np.random.Generator
    workers: Optional[int] = None

    def spawn(self) -> np.random.Generator:
        """Next independent substream; handlers get the same sequence on every run."""
        return self.rng.spawn(1)[0]


@dataclass
class ScenarioOutcome:
    """Gating reports, non-gating probes and CSV sample tables of one run."""

    reports: List[TestReport] = field(default_factory=list)
    probes: List[TestReport] = field(default_factory=list)
    samples: Dict[str, SampleTable] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


@dataclass(frozen=True)
class Scenario:
    name: str
    handler: Callable[[ScenarioContext], ScenarioOutcome]
    citation: str
    gating: bool = True


@contextmanager
def settings_override(**overrides: Any) -> Iterator[None]:
    """Temporarily replace settings fields; None values are ignored."""
    previous = {}
    for key, value in overrides.items():
        if value is None:
            continue
        previous[key] = getattr(config.settings, key)
        setattr(config.settings, key, value)
    try:
        yield
    finally:
        for key, value in previous.items():
            setattr(config.settings, key, value)


class ScenarioRegistry:
    """Named scenarios, listed in registration order."""

    def __init__(self, registry_name: str):
        self.registry_name = registry_name
        self.scenarios: Dict[str, Scenario] = {}

    def register_scenario(
        self,
        name: str,
        handler: Callable[[ScenarioContext], ScenarioOutcome],
        citation: str,
        gating: bool = True
    ) -> None:
        self.scenarios[name] = Scenario(name, handler, citation, gating)
        logger.debug(f"Registered scenario {name} on {self.registry_name}")

    def scenario(self, name: str, citation: str, gating: bool = True):
        """Decorator form of :meth:`register_scenario`."""
        def decorator(handler: Callable[[ScenarioContext], ScenarioOutcome]):
            self.register_scenario(name, handler, citation, gating)
            return handler
        return decorator

    def get(self, name: str) -> Scenario:
        if name not in self.scenarios:
            raise UnknownScenarioError(name, list(self.scenarios))
        return self.scenarios[name]

    def list_scenarios(self) -> List[str]:
        """One line per scenario: name, reference and whether it gates."""
        width = max(len(name) for name in self.scenarios)
        return [
            f"{s.name:<{width}}  {s.citation}" + ("" if s.gating else "  [probe, non-gating]")
            for s in self.scenarios.values()
        ]

    def resolve_seed(self, cfg: ScenarioConfig, seed: Optional[int] = None) -> int:
        """--seed beats the config seed, which beats settings.default_seed."""
        if seed is not None:
            return int(seed)
        if cfg.seed is not None:
            return int(cfg.seed)
        return int(config.settings.default_seed)

    def run(
        self,
        cfg: ScenarioConfig,
        seed: Optional[int] = None,
        workers: Optional[int] = None
    ) -> Tuple[ScenarioConfig, ScenarioOutcome]:
        """
        Execute one scenario.

        Args:
            cfg: Validated config
            seed: Seed override
            workers: Worker count override

        Returns:
            (config with the resolved seed filled in, outcome with seeds stamped on every report)
        """
        scenario = self.get(cfg.scenario)
        resolved = self.resolve_seed(cfg, seed)
        cfg = cfg.model_copy(update={"seed": resolved})
        ctx = ScenarioContext(config=cfg, seed=resolved, rng=make_rng(resolved), workers=workers)

        logger.info(f"[SCENARIO] Running {scenario.name} (seed={resolved}, N={cfg.N})")
        attributes = {"scenario": scenario.name, "seed": resolved, "N": cfg.N}
        with settings_override(alpha_level=cfg.alpha_level), trace_span(f"scenario.{scenario.name}", attributes):
            outcome = scenario.handler(ctx)

        outcome.reports = [r.with_seed(resolved) for r in outcome.reports]
        outcome.probes = [r.with_seed(resolved) for r in outcome.probes]
        failed = [r.name for r in outcome.reports if not r.passed]
        if failed:
            logger.warning(f"[SCENARIO] {scenario.name}: {len(failed)} failing report(s): {', '.join(failed)}")
        else:
            logger.info(f"[SCENARIO] {scenario.name}: all {len(outcome.reports)} report(s) pass")
        return cfg, outcome
