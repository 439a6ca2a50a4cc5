"""Scenario runner: named, configured, seeded experiments with JSON reports."""
from scenarios.catalog import registry

__all__ = ["registry"]
