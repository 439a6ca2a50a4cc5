"""Command-line entry point: run, list and replay scenarios."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import settings

# Configure logging
logging.basicConfig(
    level=settings.log_level,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)

logger = logging.getLogger(__name__)

from scenarios import registry  # noqa: E402
from scenarios.models import ScenarioConfig  # noqa: E402
from scenarios.protocol import ExitCode, InvalidConfigError, ScenarioError, exit_code_for  # noqa: E402
from scenarios.report import replay, write_outputs  # noqa: E402
from stability.errors import BranchStabError  # noqa: E402
from stability.tracing import initialize_tracing  # noqa: E402


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {value}")
    return seed


def _workers(value: str) -> int:
    workers = int(value)
    if workers < 1:
        raise argparse.ArgumentTypeError(f"workers must be at least 1, got {value}")
    return workers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchstab",
        description="Simulate branching-stable processes and certify their stability identities."
    )
    parser.add_argument("--config", type=Path, help="Scenario config (JSON)")
    parser.add_argument("--seed", type=_seed, help="Seed override (unsigned 64-bit)")
    parser.add_argument("--out", type=Path, help=f"Report directory (default: config 'out' or {settings.out_dir})")
    parser.add_argument("--workers", type=_workers,
                        help=f"Worker threads (default: BRANCHSTAB_WORKERS, currently {settings.workers})")
    parser.add_argument("--list", action="store_true", help="List the registered scenarios")
    parser.add_argument("--replay", type=Path, metavar="REPORT", help="Rerun a report and require identical output")
    return parser


def load_config(path: Path) -> ScenarioConfig:
    """
    Read and validate a scenario config.

    Raises:
        InvalidConfigError: Unreadable file, malformed JSON or schema violation
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfigError(f"cannot read {path}: {e}")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise InvalidConfigError(str(path), e.errors(include_url=False, include_context=False))


def run(args: argparse.Namespace) -> ExitCode:
    if args.list:
        for line in registry.list_scenarios():
            print(line)
        return ExitCode.PASS

    if args.replay is not None:
        fresh = replay(args.replay, registry, workers=args.workers)
        print(f"replay ok: {args.replay} ({len(fresh['reports'])} reports identical)")
        return ExitCode.PASS

    cfg = load_config(args.config)
    cfg, outcome = registry.run(cfg, seed=args.seed, workers=args.workers)
    out_dir = args.out or Path(cfg.out or settings.out_dir)
    outputs = write_outputs(cfg, outcome, out_dir)

    for report in outcome.reports:
        print(f"{report.verdict.upper():<5} {report.name}  p={report.p_value:.4g}")
    for report in outcome.probes:
        print(f"PROBE {report.name}  p={report.p_value:.4g} ({report.verdict})")
    print(f"report: {outputs.report_path}")
    return ExitCode.PASS if outputs.passed else ExitCode.STATISTICAL_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.list and args.replay is None and args.config is None:
        parser.error("one of --config, --list or --replay is required")

    initialize_tracing()
    try:
        code = run(args)
    except (ScenarioError, BranchStabError, ValidationError) as e:
        code = exit_code_for(e)
        detail = e.to_dict() if hasattr(e, "to_dict") else str(e)
        logger.error(f"[CLI] {type(e).__name__}: {json.dumps(detail, default=str)}")
        print(f"error: {getattr(e, 'message', e)}", file=sys.stderr)
    return code.value


if __name__ == "__main__":
    sys.exit(main())
