"""Command-line surface: configuration, SVG rendering and the benchmark harness."""

from .bench import BenchOptions, run_bench
from .config import ConfigError, RunConfig, config_from_dict, config_to_dict, parse_config, serialize
from .main import main
from .svg import SvgOptions, render_svg

__all__ = [
    "BenchOptions",
    "ConfigError",
    "RunConfig",
    "SvgOptions",
    "config_from_dict",
    "config_to_dict",
    "main",
    "parse_config",
    "render_svg",
    "run_bench",
    "serialize",
]
