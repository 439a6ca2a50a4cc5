"""JSON reports, CSV sample dumps and replay.

Reports hold the full config and the seed and nothing run-dependent (no
timestamps, timings or worker counts), so a rerun renders byte-identical JSON.
"""
import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

from scenarios.base import SampleTable, ScenarioOutcome, ScenarioRegistry
from scenarios.models import SCHEMA_VERSION, ScenarioConfig
from scenarios.protocol import InvalidConfigError, ReplayMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunOutputs:
    """Artefacts of one scenario run."""

    report: Dict[str, Any]
    report_path: Optional[Path]
    sample_paths: List[Path]

    @property
    def passed(self) -> bool:
        return bool(self.report["passed"])


def build_report(cfg: ScenarioConfig, outcome: ScenarioOutcome) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "config": cfg.report_dict(),
        "reports": [r.model_dump(mode="json") for r in outcome.reports],
        "probes": [r.model_dump(mode="json") for r in outcome.probes],
        "passed": outcome.passed
    }


def render_report(report: Dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_stem(cfg: ScenarioConfig) -> str:
    return f"{cfg.scenario}-{cfg.seed}"


def write_samples_csv(path: Path, table: SampleTable, header: Dict[str, Any]) -> Path:
    """RFC-4180 CSV; the first row carries seed and parameters as ``# key=value`` cells."""
    columns, rows = table
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow([f"# {key}={value}" for key, value in header.items()])
        writer.writerow(columns)
        writer.writerows(rows)
    return path


def write_outputs(cfg: ScenarioConfig, outcome: ScenarioOutcome, out_dir: Path) -> RunOutputs:
    out_dir = Path(out_dir).expanduser()
    out_dir.mkdir(parents=True, exist_ok=True)
    report = build_report(cfg, outcome)
    stem = report_stem(cfg)

    report_path = out_dir / f"{stem}.json"
    report_path.write_text(render_report(report))
    logger.info(f"[REPORT] Wrote {report_path}")

    header = {"scenario": cfg.scenario, "seed": cfg.seed, "config": json.dumps(cfg.report_dict(), sort_keys=True)}
    sample_paths = []
    for name, table in outcome.samples.items():
        sample_paths.append(write_samples_csv(out_dir / f"{stem}-{name}.csv", table, header))
    if sample_paths:
        logger.info(f"[REPORT] Wrote {len(sample_paths)} sample file(s) to {out_dir}")
    return RunOutputs(report=report, report_path=report_path, sample_paths=sample_paths)


def load_report(path: Path) -> Dict[str, Any]:
    try:
        report = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfigError(f"cannot read report {path}: {e}")
    for key in ("seed", "config", "reports"):
        if key not in report:
            raise InvalidConfigError(f"report {path} has no '{key}'")
    return report


def _diff_names(stored: List[Dict[str, Any]], fresh: List[Dict[str, Any]]) -> List[str]:
    names = []
    for old, new in zip(stored, fresh):
        if old != new:
            names.append(old.get("name", "?"))
    if len(stored) != len(fresh):
        names.append(f"<{len(stored)} stored vs {len(fresh)} rerun reports>")
    return names


def replay(path: Path, registry: ScenarioRegistry, workers: Optional[int] = None) -> Dict[str, Any]:
    """
    Rerun the config and seed stored in a report and require identical JSON.

    Returns:
        The freshly rendered report

    Raises:
        ReplayMismatchError: If any byte differs
    """
    stored = load_report(path)
    cfg = ScenarioConfig.model_validate(stored["config"])
    cfg, outcome = registry.run(cfg, seed=stored["seed"], workers=workers)
    fresh = build_report(cfg, outcome)

    if render_report(fresh) != render_report(stored):
        differing = [key for key in sorted(set(stored) | set(fresh)) if stored.get(key) != fresh.get(key)]
        data = {"fields": differing, "reports": _diff_names(stored.get("reports", []), fresh["reports"])}
        logger.warning(f"[REPORT] Replay mismatch for {path}: {data}")
        raise ReplayMismatchError(str(path), data)
    logger.info(f"[REPORT] Replay of {path} reproduced {len(fresh['reports'])} report(s) exactly")
    return fresh
