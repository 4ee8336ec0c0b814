"""Scaled-form ADMM heuristic for compliance minimization with a node budget.

Each iteration solves an SOCP for the areas ``x`` (compliance plus a
quadratic pull of ``Zx`` towards ``z - v``), projects ``Zx + v`` onto the
vectors with at most ``n`` nonzeros, and accumulates the residual in ``v``.
The loop stops once the design itself has at most ``n`` active free nodes;
a final SOCP with the inactive nodes forced to zero produces the output.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .ground import TrussDesign, hinge_cancel, split_collinear
from .models import ProblemSpec, build_min_compliance, build_x_update, evaluate_compliance, fully_stressed_areas

InitKind = Literal["A", "B", "C", "D"]
TRACE_COLUMNS = ("k", "obj", "residual", "active_nodes", "rho", "inner_status")


class InfeasibleError(RuntimeError):
    """Raised when a forced-zero node set leaves no equilibrium design."""

    status = "infeasible"


@dataclass(frozen=True)
class AdmmParams:
    """Penalty schedule and stopping data.

    ``rho`` values are expressed per ``rho_unit`` J/m^4.  The default unit is
    N mm per mm^4, i.e. the penalty is measured as if compliance were in
    N mm and areas in mm^2.
    """

    rho0: float = 1.0
    mu: float = 1.5
    rho_max: float = 1e6
    eps_node: float = 1e-7        # m^2
    max_iter: int = 100
    inner_tol: float = 1e-8
    rho_unit: float = 1e9         # J/m^4 per unit of rho

    def __post_init__(self):
        if not self.mu > 1:
            raise ValueError("mu must exceed 1")
        if not 0 < self.rho0 < self.rho_max:
            raise ValueError("need 0 < rho0 < rho_max")
        if not self.eps_node > 0:
            raise ValueError("eps_node must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.rho_unit > 0:
            raise ValueError("rho_unit must be positive")


@dataclass
class AdmmState:
    k: int
    x: np.ndarray
    z: np.ndarray
    v: np.ndarray
    rho: float


@dataclass(frozen=True)
class TraceRecord:
    k: int
    obj: float
    residual: float
    active_nodes: int
    rho: float
    inner_status: str


@dataclass
class AdmmTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.k <= self.records[-1].k:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.k, repr(r.obj), repr(r.residual), r.active_nodes, repr(r.rho), r.inner_status])
        return buf.getvalue()


@dataclass
class AdmmResult:
    design: TrussDesign
    trace: AdmmTrace
    status: Literal["converged", "iter_cap"]
    forced_zero: np.ndarray     # free-node positions held at zero in post-processing
    iterations: int
    state: AdmmState
    final_status: str = "optimal"   # solver status of the post-processing solve


def project_cardinality(z: np.ndarray, n: int) -> np.ndarray:
    """Keep the ``n`` largest-magnitude entries of ``z``; ties favour lower indices."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("z must be one-dimensional")
    l = z.size
    if not 1 <= n <= l:
        raise ValueError(f"n={n} outside [1, {l}]")
    order = np.lexsort((np.arange(l), -np.abs(z)))
    out = np.zeros_like(z)
    keep = order[:n]
    out[keep] = z[keep]
    return out


def _areas_to_init(spec: ProblemSpec, x0: np.ndarray) -> np.ndarray:
    return spec.gs.Z @ x0


def initial_point(kind: InitKind, spec: ProblemSpec, seed: int | None = None,
                  tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Starting ``(z0, v0)`` for the four initialization rules.

    A: relaxation optimum, solved with ``x >= 0`` stated as its own cone.
    B: uniform areas.  C: random areas scaled to the
    volume bound.  D: as C with a random nonnegative ``v0``.
    """
    gs = spec.gs
    c = gs.lengths
    if kind == "A":
        tp = build_min_compliance(spec, explicit_nonneg=True)
        sol = tp.solve(tol)
        if sol.status in ("infeasible", "unbounded") or not np.all(np.isfinite(sol.x)):
            raise InfeasibleError(f"relaxation failed with status {sol.status}")
        x0 = tp.areas(sol)
        return _areas_to_init(spec, x0), np.zeros(gs.l)
    if kind == "B":
        x0 = np.full(gs.m, spec.V / c.sum())
        return _areas_to_init(spec, x0), np.zeros(gs.l)
    if kind not in ("C", "D"):
        raise ValueError(f"unknown initial point kind {kind!r}")
    if seed is None:
        raise ValueError(f"initial point {kind} needs a seed")
    rng = np.random.default_rng(seed)
    xi = rng.uniform(0.0, 1.0, gs.m)
    x0 = spec.V / (c @ xi) * xi
    z0 = _areas_to_init(spec, x0)
    if kind == "C":
        return z0, np.zeros(gs.l)
    zeta = rng.uniform(0.0, 1.0, gs.l)
    return z0, z0.max() * zeta


def _solve_forced(spec: ProblemSpec, forced: Sequence[int], tol: float):
    tp = build_min_compliance(spec, forced)
    sol = tp.solve(tol)
    if sol.status in ("infeasible", "unbounded") or not np.all(np.isfinite(sol.x)):
        return None, sol
    return tp, sol


def post_process(spec: ProblemSpec, J0: Iterable[int], activity: np.ndarray | None = None,
                 tol: float = 1e-8) -> tuple[TrussDesign, np.ndarray]:
    """Re-solve the relaxation with every node of ``J0`` forced to zero.

    If that is infeasible and ``activity`` is given, the forced node with the
    smallest activity is released and the solve repeated.  Returns the design
    and the forced set actually used.
    """
    design, J, _ = _post_process(spec, J0, activity, tol)
    return design, J


def _post_process(spec, J0, activity, tol):
    gs = spec.gs
    J = np.array(sorted(set(int(j) for j in J0)), dtype=int)
    if J.size and (J.min() < 0 or J.max() >= gs.l):
        raise ValueError("forced node positions out of range")
    while True:
        tp, sol = _solve_forced(spec, J, tol)
        if tp is not None:
            return canonical_design(tp, sol), J, sol.status
        if activity is None or J.size == 0:
            raise InfeasibleError(f"forcing nodes {J.tolist()} to zero leaves no feasible design")
        drop = J[np.argmin(np.asarray(activity)[J])]
        J = J[J != drop]


def canonical_design(tp, sol, rel_tol: float = 1e-7) -> TrussDesign:
    """Design at ``sol`` with overlapping members resolved.

    Optimal sets are often non-unique along a line: overlapping members can
    trade force, and an interior-point solve spreads it among all of them.
    The forces are first moved onto the elementary segments of each line,
    then equal-force chains are folded into their spanning member, which
    keeps volume and compliance while dropping hinge nodes.  The fold is kept only if the finite-element
    compliance still matches the optimum; otherwise the solver areas are used.
    """
    spec = tp.spec
    gs = spec.gs
    J = tp.objective(sol)
    x = tp.areas(sol)
    q = tp.forces(sol)
    scale = np.abs(q).max()
    try:
        xs = fully_stressed_areas(gs, split_collinear(gs, q, 1e-6 * scale), spec.V)
    except ValueError:
        return TrussDesign.from_areas(gs, x, J)
    merged, _ = hinge_cancel(gs, xs, 1e-6 * xs.max())
    merged = np.where(merged > 1e-9 * xs.max(), merged, 0.0)
    fem = evaluate_compliance(gs, spec.E, merged, spec.p)
    if np.isfinite(fem) and abs(fem - J) <= rel_tol * J and gs.lengths @ merged <= spec.V * (1 + rel_tol):
        return TrussDesign.from_areas(gs, merged, J)
    return TrussDesign.from_areas(gs, x, J)


def _require_n(spec: ProblemSpec) -> int:
    if spec.n is None:
        raise ValueError("problem has no node bound n")
    return spec.n


class _Runner:
    """Shared iteration machinery for the stopping and study modes."""

    def __init__(self, spec: ProblemSpec, params: AdmmParams, init: tuple[np.ndarray, np.ndarray]):
        self.spec = spec
        self.params = params
        self.n = _require_n(spec)
        l = spec.gs.l
        z0, v0 = (np.array(a, dtype=float) for a in init)
        if z0.shape != (l,) or v0.shape != (l,):
            raise ValueError(f"initial z and v must have {l} entries")
        self.state = AdmmState(0, np.zeros(spec.gs.m), z0, v0, params.rho0)
        self.trace = AdmmTrace()
        self.have_x = False

    def step(self) -> np.ndarray:
        """One x/z/v update; returns ``Zx`` of the new areas."""
        st, prm, spec = self.state, self.params, self.spec
        tp = build_x_update(spec, st.z, st.v, st.rho * prm.rho_unit)
        sol = tp.solve(prm.inner_tol)
        usable = np.all(np.isfinite(sol.x)) and sol.status not in ("infeasible", "unbounded")
        if usable:
            x = tp.areas(sol)
            obj = tp.objective(sol)
            self.have_x = True
        else:
            x = st.x
            obj = float("nan")
        Zx = spec.gs.Z @ x
        z_new = project_cardinality(Zx + st.v, self.n)
        r = Zx - z_new
        v_new = st.v + r
        active = int(np.count_nonzero(Zx > prm.eps_node))
        self.trace.append(TraceRecord(st.k + 1, obj, float(np.linalg.norm(r)), active, st.rho, sol.status))
        self.state = AdmmState(st.k + 1, x, z_new, v_new, min(prm.mu * st.rho, prm.rho_max))
        return Zx

    def vanishing(self, Zx: np.ndarray) -> np.ndarray:
        return np.flatnonzero(Zx <= self.params.eps_node)


def admm_solve(spec: ProblemSpec, params: AdmmParams | None = None,
               init: tuple[np.ndarray, np.ndarray] | None = None) -> AdmmResult:
    """Run ADMM until the design has at most ``n`` active free nodes, then post-process."""
    params = params or AdmmParams()
    if init is None:
        init = initial_point("A", spec, tol=params.inner_tol)
    run = _Runner(spec, params, init)
    l, n = spec.gs.l, run.n
    status = "iter_cap"
    Zx = spec.gs.Z @ run.state.x
    for _ in range(params.max_iter):
        Zx = run.step()
        J0 = run.vanishing(Zx)
        if l - J0.size <= n:
            status = "converged"
            break
    else:
        # keep the n most active nodes
        J0 = np.sort(np.lexsort((np.arange(l), -Zx))[n:])
    design, used, final = _post_process(spec, J0, Zx, params.inner_tol)
    return AdmmResult(design, run.trace, status, used, run.state.k, run.state, final)


@dataclass
class StudyResult:
    trace: AdmmTrace
    converged_at: int | None          # iteration where ||x^{k+1} - x^k|| fell below tol
    qualifying: list[tuple[int, float, tuple[int, ...]]]   # (k, objective J, vanishing nodes)

    @property
    def n_qualifying(self) -> int:
        return len(self.qualifying)

    def supports_agree(self) -> bool:
        return len({q[2] for q in self.qualifying}) <= 1


def run_until_convergence(spec: ProblemSpec, params: AdmmParams | None = None,
                          init: tuple[np.ndarray, np.ndarray] | None = None,
                          step_tol: float = 1e-7, max_iter: int = 100) -> StudyResult:
    """Iterate past the heuristic stop until the areas settle; post-process every qualifying iterate."""
    params = params or AdmmParams()
    if init is None:
        init = initial_point("A", spec, tol=params.inner_tol)
    run = _Runner(spec, params, init)
    l, n = spec.gs.l, run.n
    qualifying: list[tuple[int, float, tuple[int, ...]]] = []
    cache: dict[tuple[int, ...], float] = {}
    converged_at = None
    x_prev = None
    for _ in range(max_iter):
        Zx = run.step()
        J0 = run.vanishing(Zx)
        if l - J0.size <= n:
            key = tuple(int(j) for j in J0)
            if key not in cache:
                cache[key] = post_process(spec, key, Zx, params.inner_tol)[0].compliance
            qualifying.append((run.state.k, cache[key], key))
        x = run.state.x
        if x_prev is not None and np.linalg.norm(x - x_prev) <= step_tol:
            converged_at = run.state.k
            break
        x_prev = x.copy()
    return StudyResult(run.trace, converged_at, qualifying)
