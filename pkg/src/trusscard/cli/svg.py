"""Deterministic SVG drawings of truss designs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ground import GroundStructure, TrussDesign


@dataclass(frozen=True)
class SvgOptions:
    max_width: float = 12.0     # px, stroke of the largest member
    eps_node: float = 1e-7      # m^2; members and nodes at or below this are hidden
    px_per_m: float = 60.0
    margin: float = 40.0        # px
    arrow: float = 36.0         # px, load arrow length


def _f(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def render_svg(gs: GroundStructure, design: TrussDesign, options: SvgOptions | None = None,
               p: np.ndarray | None = None) -> str:
    """Members drawn with stroke width proportional to area, plus supports and loads.

    Only free nodes with activity above ``eps_node`` get a circle; supports
    are triangles and each loaded node gets an arrow along its force.
    """
    opt = options or SvgOptions()
    x = np.asarray(design.x, dtype=float)
    if x.shape != (gs.m,):
        raise ValueError(f"design has {x.size} areas, structure has {gs.m} members")
    if np.any(x < 0):
        raise ValueError("areas must be nonnegative")
    xy = gs.xy
    lo = xy.min(axis=0)
    span = xy.max(axis=0) - lo
    s, mg = opt.px_per_m, opt.margin
    width, height = span[0] * s + 2 * mg, span[1] * s + 2 * mg

    def pt(k: int) -> tuple[float, float]:
        return mg + (xy[k, 0] - lo[0]) * s, mg + (lo[1] + span[1] - xy[k, 1]) * s

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}">',
        f'<rect width="{_f(width)}" height="{_f(height)}" fill="white"/>',
    ]
    xmax = float(x.max(initial=0.0))
    for i in np.flatnonzero(x > opt.eps_node):
        a, b = gs.members[i].ends
        (x1, y1), (x2, y2) = pt(a), pt(b)
        w = opt.max_width * x[i] / xmax
        out.append(f'<line class="member" data-id="{i}" x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" '
                   f'y2="{_f(y2)}" stroke="black" stroke-width="{w:.4f}" stroke-linecap="round"/>')
    activity = gs.Z @ x
    for pos in np.flatnonzero(activity > opt.eps_node):
        cx, cy = pt(int(gs.free_nodes[pos]))
        out.append(f'<circle class="node" cx="{_f(cx)}" cy="{_f(cy)}" r="3" fill="red"/>')
    for nd in gs.nodes:
        if not any(nd.fixed):
            continue
        cx, cy = pt(nd.id)
        out.append(f'<polygon class="support" points="{_f(cx)},{_f(cy)} {_f(cx - 7)},{_f(cy + 10)} '
                   f'{_f(cx + 7)},{_f(cy + 10)}" fill="none" stroke="blue"/>')
    if p is not None:
        p = np.asarray(p, dtype=float)
        for nd in gs.nodes:
            f = np.array([p[d] if d >= 0 else 0.0 for d in gs.dof_map[nd.id]])
            norm = float(np.linalg.norm(f))
            if norm == 0:
                continue
            u = np.array([f[0], -f[1]]) / norm            # screen coordinates
            cx, cy = pt(nd.id)
            tx, ty = cx + opt.arrow * u[0], cy + opt.arrow * u[1]
            nx_, ny_ = -u[1], u[0]
            hx, hy = tx - 8 * u[0], ty - 8 * u[1]
            out.append(f'<line class="load" x1="{_f(cx)}" y1="{_f(cy)}" x2="{_f(hx)}" y2="{_f(hy)}" '
                       f'stroke="green" stroke-width="2"/>')
            out.append(f'<polygon class="load" points="{_f(tx)},{_f(ty)} {_f(hx + 4 * nx_)},{_f(hy + 4 * ny_)} '
                       f'{_f(hx - 4 * nx_)},{_f(hy - 4 * ny_)}" fill="green"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
