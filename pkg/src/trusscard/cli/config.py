"""Run configuration: JSON documents with unit-annotated quantities.

Every physical quantity is written as ``"<number> <unit>"`` (``"200 GPa"``,
``"0.1 mm2"``) and stored in SI.  Unknown keys are rejected so that typos
surface as errors instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..admm import AdmmParams
from ..ground import GroundStructure
from ..models import PAPER_E, PAPER_LOAD, ProblemSpec, paper_volume, point_load

ALGORITHMS = ("relax", "admm", "misocp-node", "misocp-member")
INITS = ("A", "B", "C", "D")

# unit -> (dimension, factor to SI)
UNITS: dict[str, tuple[str, float]] = {
    "m": ("length", 1.0), "cm": ("length", 1e-2), "mm": ("length", 1e-3),
    "m2": ("area", 1.0), "cm2": ("area", 1e-4), "mm2": ("area", 1e-6),
    "m3": ("volume", 1.0), "cm3": ("volume", 1e-6), "mm3": ("volume", 1e-9),
    "N": ("force", 1.0), "kN": ("force", 1e3), "MN": ("force", 1e6),
    "Pa": ("pressure", 1.0), "kPa": ("pressure", 1e3), "MPa": ("pressure", 1e6),
    "GPa": ("pressure", 1e9),
    "s": ("time", 1.0), "min": ("time", 60.0), "h": ("time", 3600.0),
}
SI_UNIT = {"length": "m", "area": "m2", "volume": "m3", "force": "N", "pressure": "Pa", "time": "s"}
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf)\s*([A-Za-z]+(?:\^?[23]|[²³])?)\s*$")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def parse_quantity(text: Any, dimension: str, where: str) -> float:
    """``"20 GPa"`` -> ``2e10``; the unit must carry the requested dimension."""
    if not isinstance(text, str):
        raise ConfigError(f"{where}: expected a string like '1 {SI_UNIT[dimension]}', got {text!r}")
    m = _QTY.match(text)
    if not m:
        raise ConfigError(f"{where}: cannot read {text!r}; a number followed by a unit is required")
    unit = m.group(2).replace("^", "").replace("²", "2").replace("³", "3")
    if unit not in UNITS:
        raise ConfigError(f"{where}: unknown unit {m.group(2)!r}")
    dim, factor = UNITS[unit]
    if dim != dimension:
        raise ConfigError(f"{where}: unit {unit!r} is a {dim}, expected a {dimension}")
    return float(m.group(1)) * factor


def format_quantity(value: float, dimension: str) -> str:
    return f"{value!r} {SI_UNIT[dimension]}"


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run settings; quantities in SI."""

    nx: int | None = None
    ny: int | None = None
    lmax: float = 5.0                       # m
    ground_structure: str | None = None     # path to a ground-structure JSON file
    E: float = PAPER_E                      # Pa
    load: float = PAPER_LOAD                # N, applied downward
    load_node: int | None = None            # default: bottom-right free node
    V: float = 0.0                          # m^3
    n_nodes: int | None = None
    algorithm: str = "relax"
    rho0: float = 1.0
    mu: float = 1.5
    rho_max: float = 1e6
    eps_node: float = 1e-7                  # m^2
    max_iter: int = 100
    init: str = "A"
    seed: int | None = None
    big_m: float | None = None              # m^2; None selects the automatic bound
    x_min: float = 0.0                      # m^2
    enforce_overlaps: bool = False
    gap_tol: float = 1e-6
    node_limit: int = 10_000
    time_limit: float | None = None         # s
    out: str | None = None

    def admm_params(self) -> AdmmParams:
        return AdmmParams(rho0=self.rho0, mu=self.mu, rho_max=self.rho_max,
                          eps_node=self.eps_node, max_iter=self.max_iter)

    def ground(self) -> GroundStructure:
        if self.ground_structure is not None:
            return GroundStructure.from_json(Path(self.ground_structure).read_text())
        return GroundStructure.grid(self.nx, self.ny, self.lmax)

    def problem(self, gs: GroundStructure | None = None) -> ProblemSpec:
        gs = gs or self.ground()
        node = gs.bottom_right_free_node() if self.load_node is None else self.load_node
        return ProblemSpec(gs, point_load(gs, node, (0.0, -self.load)), self.E, self.V, self.n_nodes)


# schema: key -> (kind, extra); kinds: int, float, bool, str, choice, qty, section
_ADMM_KEYS = {
    "rho0": ("float", None), "mu": ("float", None), "rho_max": ("float", None),
    "eps_node": ("qty", "area"), "max_iter": ("int", None),
    "init": ("choice", INITS), "seed": ("int?", None),
}
_MISOCP_KEYS = {
    "big_m": ("qty_auto", "area"), "x_min": ("qty", "area"), "enforce_overlaps": ("bool", None),
    "gap_tol": ("float", None), "node_limit": ("int", None), "time_limit": ("qty?", "time"),
}
_TOP_KEYS = {
    "grid": ("section", None), "lmax": ("qty", "length"), "ground_structure": ("str", None),
    "E": ("qty", "pressure"), "load": ("qty", "force"), "load_node": ("int?", None),
    "V": ("qty", "volume"), "n_nodes": ("int?", None), "algorithm": ("choice", ALGORITHMS),
    "admm": ("section", None), "misocp": ("section", None), "out": ("str?", None),
}


def _value(kind: str, extra, raw: Any, where: str):
    if kind.endswith("?"):
        if raw is None:
            return None
        kind = kind[:-1]
    if kind == "int":
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{where}: expected an integer, got {raw!r}")
        return raw
    if kind == "float":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {raw!r}")
        return float(raw)
    if kind == "bool":
        if not isinstance(raw, bool):
            raise ConfigError(f"{where}: expected true or false, got {raw!r}")
        return raw
    if kind == "str":
        if not isinstance(raw, str):
            raise ConfigError(f"{where}: expected a string, got {raw!r}")
        return raw
    if kind == "choice":
        if raw not in extra:
            raise ConfigError(f"{where}: {raw!r} is not one of {', '.join(extra)}")
        return raw
    if kind == "qty":
        return parse_quantity(raw, extra, where)
    if kind == "qty_auto":
        return None if raw == "auto" else parse_quantity(raw, extra, where)
    raise AssertionError(kind)


def _section(doc: Any, schema: dict, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'document'}: expected an object")
    out = {}
    for key, raw in doc.items():
        path = f"{where}.{key}" if where else key
        if key not in schema:
            raise ConfigError(f"{path}: unknown key")
        kind, extra = schema[key]
        out[key] = raw if kind == "section" else _value(kind, extra, raw, path)
    return out


def config_from_dict(doc: Any) -> RunConfig:
    top = _section(doc, _TOP_KEYS, "")
    kw: dict[str, Any] = {k: v for k, v in top.items() if k not in ("grid", "admm", "misocp")}
    if "grid" in top:
        grid = _section(top["grid"], {"nx": ("int", None), "ny": ("int", None)}, "grid")
        for k in ("nx", "ny"):
            if k not in grid:
                raise ConfigError(f"grid.{k}: required")
            if grid[k] < 1:
                raise ConfigError(f"grid.{k}: must be at least 1")
        kw.update(grid)
    if "admm" in top:
        kw.update(_section(top["admm"], _ADMM_KEYS, "admm"))
    if "misocp" in top:
        kw.update(_section(top["misocp"], _MISOCP_KEYS, "misocp"))

    has_grid = "nx" in kw
    if has_grid == ("ground_structure" in kw):
        raise ConfigError("grid / ground_structure: give exactly one of them")
    if "V" not in kw:
        if not has_grid:
            raise ConfigError("V: required when the ground structure comes from a file")
        kw["V"] = paper_volume(kw["nx"], kw["ny"])
    for key in ("lmax", "E", "load", "V"):
        if key in kw and not kw[key] > 0:
            raise ConfigError(f"{key}: must be positive")
    if kw.get("x_min", 0.0) < 0:
        raise ConfigError("misocp.x_min: must be nonnegative")
    if kw.get("big_m") is not None and not kw["big_m"] > 0:
        raise ConfigError("misocp.big_m: must be positive")
    if not 0 <= kw.get("gap_tol", 0.0) < 1:
        raise ConfigError("misocp.gap_tol: must lie in [0, 1)")
    if kw.get("node_limit", 1) < 1:
        raise ConfigError("misocp.node_limit: must be at least 1")
    if kw.get("n_nodes") is not None and kw["n_nodes"] < 1:
        raise ConfigError("n_nodes: must be at least 1")
    cfg = RunConfig(**kw)
    if cfg.algorithm != "relax" and cfg.n_nodes is None:
        raise ConfigError(f"n_nodes: required for algorithm {cfg.algorithm!r}")
    if cfg.init in ("C", "D") and cfg.seed is None and cfg.algorithm == "admm":
        raise ConfigError(f"admm.seed: initial point {cfg.init} needs a seed")
    try:
        cfg.admm_params()
    except ValueError as exc:
        raise ConfigError(f"admm: {exc}") from None
    return cfg


def parse_config(document: str | bytes) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    """Inverse of :func:`config_from_dict`; quantities are written in SI units."""
    d = dataclasses.asdict(cfg)
    doc: dict[str, Any] = {}
    if cfg.ground_structure is None:
        doc["grid"] = {"nx": cfg.nx, "ny": cfg.ny}
    else:
        doc["ground_structure"] = cfg.ground_structure
    doc["lmax"] = format_quantity(cfg.lmax, "length")
    doc["E"] = format_quantity(cfg.E, "pressure")
    doc["load"] = format_quantity(cfg.load, "force")
    doc["load_node"] = cfg.load_node
    doc["V"] = format_quantity(cfg.V, "volume")
    doc["n_nodes"] = cfg.n_nodes
    doc["algorithm"] = cfg.algorithm
    doc["admm"] = {k: d[k] for k in _ADMM_KEYS}
    doc["admm"]["eps_node"] = format_quantity(cfg.eps_node, "area")
    doc["misocp"] = {k: d[k] for k in _MISOCP_KEYS}
    doc["misocp"]["big_m"] = "auto" if cfg.big_m is None else format_quantity(cfg.big_m, "area")
    doc["misocp"]["x_min"] = format_quantity(cfg.x_min, "area")
    if cfg.time_limit is not None:
        doc["misocp"]["time_limit"] = format_quantity(cfg.time_limit, "time")
    doc["out"] = cfg.out
    return doc


def serialize(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2)
