"""Benchmark harness: reruns the reference experiment grid and writes CSV/Markdown/SVG.

Every row is an independent task.  A failing row records its error and the
remaining rows still run.  Reference columns (``*_ref``) hold the published
numbers where they exist.  Wall-clock times are reported but not compared.
"""

from __future__ import annotations

import csv
import functools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ..admm import AdmmParams, admm_solve, initial_point, run_until_convergence
from ..ground import active_overlaps, hinge_cancel
from ..misocp import BnbOptions, branch_and_bound, build_member_model, build_node_model
from ..models import MM2, build_min_compliance, evaluate_compliance, paper_instance
from .svg import SvgOptions, render_svg

TABLES = ("T1", "T2", "T3", "T4", "T5", "random-init")
SLACK = 1e-6

# published reference values -------------------------------------------------------------
REF_T1 = {  # (nx, ny): (m, d, w_hat, free nodes after hinge cancellation)
    (5, 2): (147, 30, 12100.00, 9), (5, 3): (264, 40, 5007.41, 7), (5, 4): (411, 50, 2812.50, 5),
    (8, 2): (273, 48, 34515.63, 15), (9, 2): (315, 54, 45125.00, 8), (8, 4): (750, 80, 6937.81, 10),
    (9, 4): (863, 90, 8900.28, 10), (8, 6): (1296, 112, 3080.39, 10), (9, 6): (1489, 126, 3847.25, 12),
}
REF_ADMM = {  # (nx, ny, n, init): (w_star, iterations)
    (5, 2, 4, "A"): (12100.00, 5), (5, 2, 4, "B"): (12100.00, 3),
    (5, 3, 4, "A"): (5007.41, 5), (5, 3, 4, "B"): (5052.45, 3),
    (5, 4, 4, "A"): (2812.50, 2), (5, 4, 4, "B"): (2812.50, 3),
    (8, 2, 5, "A"): (37515.63, 11), (8, 2, 5, "B"): (37515.63, 13),
    (9, 2, 5, "A"): (50000.00, 20), (9, 2, 5, "B"): (50000.00, 18),
    (8, 4, 5, "A"): (7031.25, 11), (8, 4, 5, "B"): (7031.25, 6),
    (9, 4, 5, "A"): (9167.44, 13), (9, 4, 5, "B"): (9000.00, 8),
    (8, 6, 5, "A"): (3287.84, 10), (8, 6, 5, "B"): (3440.05, 7),
    (9, 6, 5, "A"): (4353.91, 9), (9, 6, 5, "B"): (4221.65, 12),
    (12, 6, 6, "A"): (7817.72, 10), (12, 6, 6, "B"): (9527.47, 10),
    (13, 6, 6, "A"): (10142.88, 10), (13, 6, 6, "B"): (13631.69, 11),
    (14, 6, 7, "A"): (9720.09, 9), (14, 6, 7, "B"): (14928.49, 14),
}
REF_MISOCP = {  # (nx, ny, n): w_bar
    (5, 2, 4): 12100.00, (5, 3, 4): 5007.41, (5, 4, 4): 2812.50,
    (8, 2, 5): 35006.93, (9, 2, 5): 46722.20, (8, 4, 5): 7031.25, (9, 4, 5): 8999.91,
    (8, 6, 5): 3168.98, (9, 6, 5): 3983.34,
    (12, 6, 6): 7012.95, (13, 6, 6): 8258.85, (14, 6, 7): 9550.97,
}
REF_SLENDER = {(8, 6, 5): 3168.97, (9, 6, 5): 4028.94}     # member model, x_min = 200 mm^2
REF_STUDY = {  # (nx, ny, n, init): (K_tilde, K_tilde_p, K_star)
    (8, 2, 5, "A"): (35, 18, 11), (8, 2, 5, "B"): (35, 18, 13),
    (9, 2, 5, "A"): (100, 77, 20), (9, 2, 5, "B"): (81, 58, 18),
    (8, 4, 5, "A"): (27, 15, 11), (8, 4, 5, "B"): (21, 15, 6),
    (9, 4, 5, "A"): (29, 15, 13), (9, 4, 5, "B"): (25, 15, 8),
    (8, 6, 5, "A"): (26, 12, 10), (8, 6, 5, "B"): (21, 15, 7),
    (9, 6, 5, "A"): (24, 16, 9), (9, 6, 5, "B"): (36, 25, 12),
}
REF_RANDOM = {  # (nx, ny, n, kind): (min, max, mean, var)
    (5, 3, 4, "C"): (5052.45, 5052.45, 5052.45, 0.00),
    (5, 3, 4, "D"): (5007.41, 5052.45, 5049.74, 115.56),
    (9, 4, 5, "C"): (9000.00, 9143.42, 9039.78, 3344.71),
    (9, 4, 5, "D"): (9000.00, 9768.04, 9076.47, 13916.47),
}
LMAX_T5 = 7.0


@dataclass(frozen=True)
class BenchOptions:
    workers: int = 1
    node_limit: int = 200           # B&B cap for the larger instances
    time_limit: float | None = None
    seeds: int = 100
    svg: bool = True


# row tasks (module level so they can run in worker processes) -----------------------------

@functools.lru_cache(maxsize=None)
def _w_hat(nx: int, ny: int, lmax: float) -> float:
    spec = paper_instance(nx, ny, lmax=lmax)
    tp = build_min_compliance(spec)
    return tp.objective(tp.solve())


def _rel(ours: float, ref: float | None) -> float | None:
    return None if ref is None else (ours - ref) / ref


def _svg(spec, design) -> str:
    return render_svg(spec.gs, design, SvgOptions(), spec.p)


def task_relax(nx: int, ny: int, lmax: float = 5.0):
    spec = paper_instance(nx, ny, lmax=lmax)
    tp = build_min_compliance(spec)
    sol = tp.solve()
    design = tp.design(sol)
    w = tp.objective(sol)
    fem = evaluate_compliance(spec.gs, spec.E, design.x, spec.p)
    nof = spec.with_gs(spec.gs.without_overlaps())
    tq = build_min_compliance(nof)
    sq = tq.solve()
    count = hinge_cancel(nof.gs, tq.stressed_areas(sq), 1e-7)[1]
    m_ref, d_ref, w_ref, c_ref = REF_T1.get((nx, ny), (None,) * 4)
    row = {"m": spec.gs.m, "m_ref": m_ref, "d": spec.gs.d, "d_ref": d_ref,
           "w_hat": w, "w_hat_ref": w_ref, "rel_dev": _rel(w, w_ref),
           "fem_J": fem, "fem_rel_diff": abs(fem - w) / w, "status": sol.status,
           "free_nodes": count, "free_nodes_ref": c_ref}
    return row, _svg(spec, design)


def task_admm(nx: int, ny: int, n: int, init: str, lmax: float = 5.0, seed: int | None = None):
    spec = paper_instance(nx, ny, n, lmax)
    params = AdmmParams()
    res = admm_solve(spec, params, initial_point(init, spec, seed))
    d = res.design
    ref = REF_ADMM.get((nx, ny, n, init), (None, None)) if seed is None else (None, None)
    w_hat = _w_hat(nx, ny, lmax)
    row = {"init": init, "seed": seed, "w_star": d.compliance, "w_star_ref": ref[0],
           "rel_dev": _rel(d.compliance, ref[0]), "iters": res.iterations, "iters_ref": ref[1],
           "status": res.status, "active_nodes": int(d.active_nodes(params.eps_node).size),
           "overlap_pairs": len(active_overlaps(spec.gs, d.x, params.eps_node)),
           "w_hat": w_hat}
    return row, _svg(spec, d)


def task_misocp(nx: int, ny: int, n: int, lmax: float = 5.0, kind: str = "node", x_min: float = 0.0,
                node_limit: int = 10_000, time_limit: float | None = None):
    spec = paper_instance(nx, ny, n, lmax)
    model = build_node_model(spec) if kind == "node" else build_member_model(spec, x_min=x_min)
    res = branch_and_bound(model, BnbOptions(node_limit=node_limit, time_limit=time_limit))
    ref = REF_MISOCP.get((nx, ny, n)) if kind == "node" else REF_SLENDER.get((nx, ny, n))
    row = {"init": f"MISOCP-{kind}" + (f" x_min={x_min / MM2:g}mm2" if x_min else ""),
           "w_bar": res.objective, "w_bar_ref": ref, "rel_dev": _rel(res.objective, ref),
           "bound": res.bound, "gap": res.gap, "bnb_nodes": res.nodes, "status": res.status,
           "w_hat": _w_hat(nx, ny, lmax)}
    if ref is not None:
        row["ref_bracketed"] = bool(res.bound <= ref * (1 + SLACK) and ref <= res.objective * (1 + SLACK))
    return row, (_svg(spec, res.design) if res.design is not None else None)


def task_study(nx: int, ny: int, n: int, init: str):
    spec = paper_instance(nx, ny, n)
    st = run_until_convergence(spec, AdmmParams(), initial_point(init, spec))
    first = st.qualifying[0][0] if st.qualifying else None
    ref = REF_STUDY.get((nx, ny, n, init), (None,) * 3)
    row = {"init": init, "K_tilde": st.converged_at, "K_tilde_ref": ref[0],
           "K_tilde_p": st.n_qualifying, "K_tilde_p_ref": ref[1],
           "K_star": first, "K_star_ref": ref[2], "supports_agree": st.supports_agree(),
           "objectives": ";".join(sorted({f"{q[1]:.2f}" for q in st.qualifying}))}
    return row, None


# grids ----------------------------------------------------------------------------------

def _tasks(table: str, opts: BenchOptions) -> list[tuple[dict, Callable, dict]]:
    out: list[tuple[dict, Callable, dict]] = []

    def inst(nx, ny, n=None, lmax=5.0):
        return {"nx": nx, "ny": ny, "n": n, "lmax": lmax}

    if table == "T1":
        for nx, ny in REF_T1:
            out.append((inst(nx, ny), task_relax, {"nx": nx, "ny": ny}))
    elif table in ("T2", "T3", "T5"):
        grid = {"T2": [(5, 2, 4), (5, 3, 4), (5, 4, 4)],
                "T3": [(8, 2, 5), (9, 2, 5), (8, 4, 5), (9, 4, 5), (8, 6, 5), (9, 6, 5)],
                "T5": [(12, 6, 6), (13, 6, 6), (14, 6, 7)]}[table]
        lmax = LMAX_T5 if table == "T5" else 5.0
        limit = 10_000 if table == "T2" else opts.node_limit
        for nx, ny, n in grid:
            for init in ("A", "B"):
                out.append((inst(nx, ny, n, lmax), task_admm,
                            {"nx": nx, "ny": ny, "n": n, "init": init, "lmax": lmax}))
            out.append((inst(nx, ny, n, lmax), task_misocp,
                        {"nx": nx, "ny": ny, "n": n, "lmax": lmax, "node_limit": limit,
                         "time_limit": opts.time_limit}))
        if table == "T3":
            for nx, ny, n in REF_SLENDER:
                out.append((inst(nx, ny, n), task_misocp,
                            {"nx": nx, "ny": ny, "n": n, "kind": "member", "x_min": 200 * MM2,
                             "node_limit": limit, "time_limit": opts.time_limit}))
    elif table == "T4":
        for nx, ny, n, init in REF_STUDY:
            out.append((inst(nx, ny, n), task_study, {"nx": nx, "ny": ny, "n": n, "init": init}))
    elif table == "random-init":
        for nx, ny, n, kind in REF_RANDOM:
            for seed in range(opts.seeds):
                out.append((inst(nx, ny, n), task_admm,
                            {"nx": nx, "ny": ny, "n": n, "init": kind, "seed": seed}))
    else:
        raise ValueError(f"unknown table {table!r}; choose from {', '.join(TABLES)}")
    return out


def _run_one(fn: Callable, kw: dict) -> tuple[dict, str | None]:
    t0 = time.perf_counter()
    try:
        row, svg = fn(**kw)
    except Exception as exc:   # recorded per row; the harness keeps going
        row, svg = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}, None
    row["time_s"] = round(time.perf_counter() - t0, 3)
    return row, svg


def _sandwich(rows: list[dict]) -> None:
    """Fill ``sandwich_ok`` with the check w_hat <= w_bar <= w_star per instance."""
    lower: dict[tuple, float] = {}
    for r in rows:
        if str(r.get("init", "")).startswith("MISOCP-node") and r.get("bound") is not None:
            lower[(r["nx"], r["ny"], r["n"], r["lmax"])] = r["bound"]
    for r in rows:
        w_hat = r.get("w_hat")
        if w_hat is None or r.get("status") == "error":
            continue
        key = (r["nx"], r["ny"], r["n"], r["lmax"])
        if "w_star" in r:
            ok = w_hat <= r["w_star"] * (1 + SLACK)
            if key in lower:
                ok = ok and lower[key] <= r["w_star"] * (1 + SLACK)
            r["sandwich_ok"] = bool(ok)
        elif "w_bar" in r:
            r["sandwich_ok"] = bool(w_hat <= r["bound"] * (1 + SLACK) and r["bound"] <= r["w_bar"] * (1 + SLACK))


def summarize_random(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r.get("status") != "error":
            groups.setdefault((r["nx"], r["ny"], r["n"], r["init"]), []).append(r["w_star"])
    out = []
    for key in sorted(groups):
        w = np.array(groups[key])
        ref = REF_RANDOM.get(key, (None,) * 4)
        out.append({"nx": key[0], "ny": key[1], "n": key[2], "init": key[3], "runs": w.size,
                    "min": w.min(), "min_ref": ref[0], "max": w.max(), "max_ref": ref[1],
                    "mean": w.mean(), "mean_ref": ref[2],
                    "var": w.var(ddof=1) if w.size > 1 else 0.0, "var_ref": ref[3]})
    return out


def _columns(rows: list[dict]) -> list[str]:
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    return cols


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if abs(v) < 1e-2 or abs(v) >= 1e7 else f"{v:.2f}" if abs(v) >= 100 else f"{v:.4f}"
    return str(v)


def write_tables(rows: list[dict], stem: Path) -> None:
    cols = _columns(rows)
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in cols})
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(_fmt(r.get(k)) for k in cols) + " |" for r in rows]
    stem.with_suffix(".md").write_text("\n".join(lines) + "\n")


def run_bench(table: str, out_dir: str | Path, opts: BenchOptions | None = None) -> list[dict]:
    """Run one table's grid; returns the rows and writes ``<table>.csv/.md`` plus SVGs."""
    opts = opts or BenchOptions()
    tasks = _tasks(table, opts)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if opts.workers > 1:
        with ProcessPoolExecutor(opts.workers) as pool:
            futures = [pool.submit(_run_one, fn, kw) for _, fn, kw in tasks]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(fn, kw) for _, fn, kw in tasks]
    rows = []
    for (head, _, _), (row, svg) in zip(tasks, results):
        full = {**head, **row}
        rows.append(full)
        if svg is not None and opts.svg:
            label = str(full.get("init", "relax")).split()[0]
            if full.get("seed") is not None:
                label += f"_s{full['seed']}"
            n = f"_n{head['n']}" if head["n"] is not None else ""
            (out / f"{table}_{head['nx']}x{head['ny']}{n}_{label}.svg").write_text(svg)
    _sandwich(rows)
    if table == "random-init":
        write_tables(rows, out / "random-init_runs")
        summary = summarize_random(rows)
        write_tables(summary, out / table)
        return summary
    write_tables(rows, out / table)
    return rows
