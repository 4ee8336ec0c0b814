"""``trusscard`` command line.

Exit codes: 0 success, 2 configuration error, 3 the final required solve
stopped at a numerical limit (or a search limit left no incumbent), 4 infeasible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..admm import InfeasibleError, admm_solve, initial_point
from ..ground import GroundStructure, TrussDesign
from ..misocp import BnbOptions, branch_and_bound, build_member_model, build_node_model
from ..models import build_min_compliance
from .bench import TABLES, BenchOptions, run_bench
from .config import ConfigError, RunConfig, config_from_dict
from .svg import SvgOptions, render_svg

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4

# flag -> (config section or None, key, kind); "qty" flags accept unit strings, bare numbers are SI
_FLAGS = {
    "nx": ("grid", "nx", int), "ny": ("grid", "ny", int),
    "lmax": (None, "lmax", "m"), "ground_structure": (None, "ground_structure", str),
    "E": (None, "E", "Pa"), "load": (None, "load", "N"), "load_node": (None, "load_node", int),
    "V": (None, "V", "m3"), "n_nodes": (None, "n_nodes", int),
    "init": ("admm", "init", str), "seed": ("admm", "seed", int),
    "rho0": ("admm", "rho0", float), "mu": ("admm", "mu", float), "rho_max": ("admm", "rho_max", float),
    "eps_node": ("admm", "eps_node", "m2"), "max_iter": ("admm", "max_iter", int),
    "big_m": ("misocp", "big_m", "m2"), "x_min": ("misocp", "x_min", "m2"),
    "gap_tol": ("misocp", "gap_tol", float), "node_limit": ("misocp", "node_limit", int),
    "time_limit": ("misocp", "time_limit", "s"), "out": (None, "out", str),
}


def _qty(text: str, unit: str) -> str:
    try:
        float(text)
    except ValueError:
        return text
    return f"{text} {unit}"


def build_config(args: argparse.Namespace, algorithm: str) -> RunConfig:
    """Config file (if any) overlaid with explicit command-line flags."""
    doc: dict = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    for flag, (section, key, kind) in _FLAGS.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if isinstance(kind, str):
            val = "auto" if (key == "big_m" and val == "auto") else _qty(val, kind)
        if flag == "ground_structure":
            doc.pop("grid", None)
        if section == "grid":
            doc.pop("ground_structure", None)
        target = doc.setdefault(section, {}) if section else doc
        target[key] = val
    if getattr(args, "overlaps", False):
        doc.setdefault("misocp", {})["enforce_overlaps"] = True
    doc["algorithm"] = algorithm
    return config_from_dict(doc)


def design_document(gs: GroundStructure, design: TrussDesign, eps_node: float, **extra) -> dict:
    active = design.active_nodes(eps_node)
    return {"x": [float(v) for v in design.x], "compliance_J": design.compliance,
            "active_free_nodes": int(active.size),
            "active_node_ids": [int(gs.free_nodes[j]) for j in active], **extra}


def _emit(cfg: RunConfig, spec, doc: dict, files: dict[str, str]) -> None:
    text = json.dumps(doc, indent=2)
    if cfg.out is None:
        print(text)
        return
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "design.json").write_text(text + "\n")
    for name, content in files.items():
        (out / name).write_text(content)
    design = TrussDesign.from_areas(spec.gs, np.array(doc["x"]), doc["compliance_J"])
    (out / "design.svg").write_text(render_svg(spec.gs, design, SvgOptions(eps_node=cfg.eps_node), spec.p))
    print(f"compliance {doc['compliance_J']:.6f} J, {doc['active_free_nodes']} active free nodes -> {out}")


def cmd_gen_gs(args) -> int:
    cfg = build_config(args, "relax")
    gs = cfg.ground()
    text = gs.to_json(indent=1)
    if cfg.out:
        Path(cfg.out).write_text(text + "\n")
    else:
        print(text)
    print(f"nodes {len(gs.nodes)}, members {gs.m}, dofs {gs.d}, free nodes {gs.l}, "
          f"overlapping pairs {len(gs.overlaps)}", file=sys.stderr)
    return EXIT_OK


def cmd_solve_relax(args) -> int:
    cfg = build_config(args, "relax")
    spec = cfg.problem()
    tp = build_min_compliance(spec)
    sol = tp.solve()
    if sol.status in ("infeasible", "unbounded"):
        print(f"relaxation {sol.status}", file=sys.stderr)
        return EXIT_INFEASIBLE
    design = tp.design(sol)
    _emit(cfg, spec, design_document(spec.gs, design, cfg.eps_node, status=sol.status), {})
    return EXIT_OK if sol.status == "optimal" else EXIT_NUMERICAL


def cmd_solve_admm(args) -> int:
    cfg = build_config(args, "admm")
    spec = cfg.problem()
    params = cfg.admm_params()
    try:
        init = initial_point(cfg.init, spec, cfg.seed)
        res = admm_solve(spec, params, init)
    except InfeasibleError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE
    doc = design_document(spec.gs, res.design, cfg.eps_node, status=res.status,
                          iterations=res.iterations, final_status=res.final_status)
    _emit(cfg, spec, doc, {"trace.csv": res.trace.to_csv()})
    return EXIT_OK if res.final_status == "optimal" else EXIT_NUMERICAL


def cmd_solve_misocp(args) -> int:
    algorithm = "misocp-member" if args.model == "member" else "misocp-node"
    cfg = build_config(args, algorithm)
    spec = cfg.problem()
    if algorithm == "misocp-node":
        model = build_node_model(spec, cfg.big_m)
    else:
        model = build_member_model(spec, cfg.big_m, cfg.x_min, cfg.enforce_overlaps)
    res = branch_and_bound(model, BnbOptions(cfg.gap_tol, cfg.node_limit, cfg.time_limit))
    if res.design is None:
        if res.status == "infeasible":
            print("branch and bound: infeasible", file=sys.stderr)
            return EXIT_INFEASIBLE
        print(f"branch and bound: {res.status} after {res.nodes} nodes without an incumbent "
              f"(bound {res.bound:.6f} J)", file=sys.stderr)
        return EXIT_NUMERICAL
    doc = design_document(spec.gs, res.design, cfg.eps_node, status=res.status,
                          bound_J=res.bound, gap=res.gap, nodes=res.nodes)
    _emit(cfg, spec, doc, {"search.csv": res.log_csv()})
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = build_config(args, "relax")
    spec = cfg.problem()
    doc = json.loads(Path(args.design).read_text())
    x = np.asarray(doc["x"], dtype=float)
    if x.shape != (spec.gs.m,):
        raise ConfigError(f"{args.design}: design has {x.size} areas, ground structure has {spec.gs.m} members")
    svg = render_svg(spec.gs, TrussDesign.from_areas(spec.gs, x, doc.get("compliance_J")),
                     SvgOptions(max_width=args.max_width, eps_node=cfg.eps_node), spec.p)
    if cfg.out:
        Path(cfg.out).write_text(svg)
    else:
        sys.stdout.write(svg)
    return EXIT_OK


def cmd_bench(args) -> int:
    opts = BenchOptions(workers=args.workers, node_limit=args.node_limit or 200,
                        time_limit=args.time_limit, seeds=args.seeds)
    rows = run_bench(args.table, args.out or f"bench-{args.table}", opts)
    errors = sum(1 for r in rows if r.get("status") == "error")
    print(f"{args.table}: {len(rows)} rows, {errors} errors -> {args.out or f'bench-{args.table}'}")
    return EXIT_OK


def _instance_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("instance")
    g.add_argument("--config", help="JSON run configuration; flags below override it")
    g.add_argument("--nx", type=int)
    g.add_argument("--ny", type=int)
    g.add_argument("--lmax", help="member length cap, e.g. '7 m' (bare numbers in m)")
    g.add_argument("--ground-structure", dest="ground_structure", help="ground-structure JSON instead of a grid")
    g.add_argument("--E", dest="E", help="Young's modulus, e.g. '200 GPa'")
    g.add_argument("--load", help="downward load magnitude, e.g. '100 kN'")
    g.add_argument("--load-node", dest="load_node", type=int)
    g.add_argument("--V", dest="V", help="volume bound, e.g. '2e6 mm3'")
    g.add_argument("--eps-node", dest="eps_node", help="node activity threshold, e.g. '0.1 mm2'")
    g.add_argument("--out", help="output directory (file for gen-gs and render)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trusscard", description="Truss topology optimization with a node budget.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-gs", help="write the ground structure as JSON")
    _instance_flags(p)
    p.set_defaults(func=cmd_gen_gs)

    p = sub.add_parser("solve-relax", help="minimum compliance without a node bound")
    _instance_flags(p)
    p.set_defaults(func=cmd_solve_relax)

    p = sub.add_parser("solve-admm", help="ADMM heuristic with a node bound")
    _instance_flags(p)
    p.add_argument("--n-nodes", dest="n_nodes", type=int, help="maximum number of free nodes")
    p.add_argument("--init", choices=("A", "B", "C", "D"))
    p.add_argument("--seed", type=int)
    p.add_argument("--rho0", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--rho-max", dest="rho_max", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.set_defaults(func=cmd_solve_admm)

    p = sub.add_parser("solve-misocp", help="global optimum by branch and bound")
    _instance_flags(p)
    p.add_argument("--n-nodes", dest="n_nodes", type=int)
    p.add_argument("--model", choices=("node", "member"), default="node")
    p.add_argument("--big-m", dest="big_m", help="linking bound, e.g. '2000 mm2' or 'auto'")
    p.add_argument("--x-min", dest="x_min", help="minimum area of an existing member, e.g. '200 mm2'")
    p.add_argument("--overlaps", action="store_true", help="forbid overlapping member pairs")
    p.add_argument("--gap-tol", dest="gap_tol", type=float)
    p.add_argument("--node-limit", dest="node_limit", type=int)
    p.add_argument("--time-limit", dest="time_limit", help="e.g. '600 s'")
    p.set_defaults(func=cmd_solve_misocp)

    p = sub.add_parser("render", help="draw a design JSON as SVG")
    _instance_flags(p)
    p.add_argument("--design", required=True)
    p.add_argument("--max-width", dest="max_width", type=float, default=12.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench", help="rerun a reference table")
    p.add_argument("--table", choices=TABLES, required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--node-limit", dest="node_limit", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float, help="seconds per B&B run")
    p.add_argument("--seeds", type=int, default=100)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
