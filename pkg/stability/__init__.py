"""Branching-stable random variables, point processes and measures."""
# Lazy imports keep `import stability` cheap for the CLI

__all__ = [
    "make_semigroup",
    "StableParams",
    "Window",
    "PointConfig",
    "IntensityMeasure",
    "SpectralMeasureM1",
    "GaussMixMeasure",
    "FellerParams",
    "TestReport",
    "make_rng",
]

_LOCATIONS = {
    "make_semigroup": "semigroups",
    "StableParams": "discrete_ops",
    "Window": "processes",
    "PointConfig": "processes",
    "IntensityMeasure": "processes",
    "SpectralMeasureM1": "stable_pp",
    "GaussMixMeasure": "diffusion_branch",
    "FellerParams": "cb",
    "TestReport": "stattest",
    "make_rng": "streams",
}


def __getattr__(name):
    """Lazy import of the public names."""
    if name in _LOCATIONS:
        import importlib
        module = importlib.import_module(f".{_LOCATIONS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
