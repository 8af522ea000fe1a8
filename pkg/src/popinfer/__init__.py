"""popinfer: population-informed priors for Bayesian inference via data-consistent inversion."""

from .core import init, get_run_id, set_run_id, generate_run_id
from .errors import (
    ConfigError,
    DimensionMismatch,
    NumericalError,
    PopInferError,
    PredictabilityViolated,
)
from .gaussian import GaussianDensity, LinearMap, make_gaussian, make_linear_map
from .version import __version__

__all__ = [
    "init",
    "get_run_id",
    "set_run_id",
    "generate_run_id",
    "ConfigError",
    "DimensionMismatch",
    "NumericalError",
    "PopInferError",
    "PredictabilityViolated",
    "GaussianDensity",
    "LinearMap",
    "make_gaussian",
    "make_linear_map",
    "__version__",
]


def main():
    """Entry point for the CLI."""
    import sys

    from .cli import main as cli_main
    sys.exit(cli_main())
