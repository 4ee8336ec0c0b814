"""Mixed-integer SOCP models with node or member binaries, and a branch-and-bound solver.

Every search node rebuilds its continuous relaxation with the fixed binaries
substituted: a binary fixed to zero removes the members it controls from the
program, so no relaxation ever pins a member cone to its vertex.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import time
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping

import numpy as np
import scipy.sparse as sp

from .conic import ConeBlock, ConicProgram, ConicSolution
from .ground import TrussDesign
from .models import (
    ProblemSpec,
    Scaling,
    TrussProgram,
    _compliance_blocks,
    _infeasible_solution,
    _Layout,
    evaluate_compliance,
)

ModelKind = Literal["node", "member"]
BnbStatus = Literal["optimal", "gap_limit", "node_limit", "infeasible"]
INTEGRALITY_TOL = 1e-6
TRUST_TOL = 1e-6         # residual level at which a stalled solve is still accepted
FEM_TOL = 1e-5           # relative agreement required between an incumbent and its FEM compliance


def auto_big_m(spec: ProblemSpec) -> float:
    """Valid area bound ``V / min c``, since ``z_j <= sum x <= c^T x / min c <= V / min c``."""
    return float(spec.V / spec.gs.lengths.min())


@dataclass(frozen=True)
class Binary:
    role: Literal["node", "member"]
    index: int      # free-node position or member id

    @property
    def tag(self) -> str:
        return f"{'s' if self.role == 'node' else 't'}{self.index}"


@dataclass
class Relaxation:
    """A solved search-node relaxation."""

    program: TrussProgram
    solution: ConicSolution
    free: np.ndarray            # undetermined binary indices
    values: np.ndarray          # tightest binary values implied by the continuous part

    @property
    def feasible(self) -> bool:
        """Solved to a trusted optimum (a stalled solve only counts with tight residuals)."""
        sol = self.solution
        if not np.all(np.isfinite(sol.x)):
            return False
        if sol.status == "optimal":
            return True
        return sol.status == "numerical_limit" and max(
            sol.primal_residual, sol.dual_residual, sol.duality_gap) <= TRUST_TOL

    @property
    def uncertain(self) -> bool:
        """Neither a trusted optimum nor a certificate: the bound is unknown."""
        return not self.feasible and self.solution.status not in ("infeasible", "unbounded")

    @property
    def objective(self) -> float:
        return self.program.objective(self.solution) if self.feasible else np.inf

    def areas(self) -> np.ndarray:
        return self.program.areas(self.solution)


class _Rows:
    """Accumulates sparse equality rows ``sum a_k v_k = rhs``."""

    def __init__(self):
        self.r: list[int] = []
        self.c: list[int] = []
        self.v: list[float] = []
        self.rhs: list[float] = []

    def add(self, cols, vals, rhs: float) -> None:
        k = len(self.rhs)
        for cc, vv in zip(cols, vals):
            self.r.append(k)
            self.c.append(int(cc))
            self.v.append(float(vv))
        self.rhs.append(float(rhs))

    def matrix(self, n_total: int):
        A = sp.coo_matrix((self.v, (self.r, self.c)), shape=(len(self.rhs), n_total))
        return A, np.array(self.rhs)


@dataclass
class MisocpModel:
    """Compliance minimization with a node budget and binary existence variables.

    ``kind == "node"``: one binary ``s_j`` per free node with ``z_j <= M s_j``
    and ``sum s <= n``.  ``kind == "member"``: one binary ``t_i`` per member with
    ``x_min t_i <= x_i <= M t_i``, continuous node indicators ``s_j >= t_i``
    with ``sum s <= n``, and optionally ``t_a + t_b <= 1`` for overlapping pairs.
    """

    kind: ModelKind
    spec: ProblemSpec
    bigM: float
    x_min: float = 0.0
    enforce_overlaps: bool = False
    fixed: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.spec.n is None:
            raise ValueError("problem has no node bound n")
        if not self.bigM > 0:
            raise ValueError("bigM must be positive")
        if self.x_min < 0:
            raise ValueError("x_min must be nonnegative")
        if self.x_min > self.bigM:
            raise ValueError("x_min exceeds bigM")
        for k, v in self.fixed.items():
            if v not in (0, 1) or not 0 <= k < self.n_binaries:
                raise ValueError(f"bad fixing {k}={v}")

    @property
    def n_binaries(self) -> int:
        return self.spec.gs.l if self.kind == "node" else self.spec.gs.m

    @property
    def binaries(self) -> tuple[Binary, ...]:
        return tuple(Binary(self.kind, i) for i in range(self.n_binaries))

    @property
    def base(self) -> ConicProgram:
        """Continuous relaxation with only the model's own fixings."""
        return self.relaxation_program(dict(self.fixed))[0].program

    def with_fixed(self, fixed: Mapping[int, int]) -> "MisocpModel":
        return MisocpModel(self.kind, self.spec, self.bigM, self.x_min, self.enforce_overlaps,
                           {**self.fixed, **{int(k): int(v) for k, v in fixed.items()}})

    # -- relaxations ---------------------------------------------------------------

    def propagate(self, fixed: Mapping[int, int]) -> dict[int, int] | None:
        """Implied fixings; ``None`` when the fixings are contradictory."""
        fx = dict(fixed)
        n = self.spec.n
        gs = self.spec.gs
        if self.kind == "node":
            ones = sum(1 for v in fx.values() if v == 1)
            if ones > n:
                return None
            if ones == n:
                for j in range(gs.l):
                    fx.setdefault(j, 0)
            return fx
        # member model: overlaps and node budget
        if self.enforce_overlaps:
            for a, b in gs.overlaps:
                va, vb = fx.get(a), fx.get(b)
                if va == 1 and vb == 1:
                    return None
                if va == 1:
                    fx[b] = 0
                elif vb == 1:
                    fx[a] = 0
        used = self._nodes_of([i for i, v in fx.items() if v == 1])
        if len(used) > n:
            return None
        if len(used) == n:
            for i in range(gs.m):
                if i not in fx and not self._nodes_of([i]) <= used:
                    fx[i] = 0
        return fx

    def _nodes_of(self, members) -> set[int]:
        gs = self.spec.gs
        out: set[int] = set()
        for i in members:
            for e in gs.ends[i]:
                if gs.nodes[e].is_free:
                    out.add(gs.free_index(int(e)))
        return out

    def relaxation_program(self, fixed: Mapping[int, int]):
        """Program for the relaxation under ``fixed``; returns ``(TrussProgram, free binaries)``."""
        spec = self.spec
        gs = spec.gs
        sc = Scaling.for_spec(spec)
        M = self.bigM / sc.area
        if self.kind == "node":
            zero_nodes = [j for j, v in fixed.items() if v == 0]
            drop = set()
            for j in zero_nodes:
                drop.update(gs.node_members[j])
        else:
            drop = {i for i, v in fixed.items() if v == 0}
        members = np.array([i for i in range(gs.m) if i not in drop], dtype=int)
        pos = {int(i): k for k, i in enumerate(members)}
        free = np.array([b for b in range(self.n_binaries) if b not in fixed], dtype=int)
        if self.kind == "member":
            free = np.array([b for b in free if b in pos], dtype=int)

        if self.kind == "node":
            live = [j for j in range(gs.l) if fixed.get(j) != 0]
            n_extra = free.size * 2 + len(live) + 1
        else:
            xm = self.x_min / sc.area
            nodes = sorted(self._nodes_of(members))
            pairs = []
            if self.enforce_overlaps:
                pairs = [(a, b) for a, b in sorted(gs.overlaps) if a in pos and b in pos
                         and fixed.get(a) is None and fixed.get(b) is None]
            fixed_one = [i for i in members if fixed.get(int(i)) == 1]
            n_links = sum(len([i for i in gs.node_members[j] if int(i) in pos]) for j in nodes)
            n_extra = (free.size * (3 + (xm > 0)) + len(fixed_one) * (1 + (xm > 0))
                       + len(nodes) + n_links + len(pairs) + 1)
        lay = _Layout(members.size, n_extra)
        rows, rhs, cones, infeasible = _compliance_blocks(spec, sc, lay, members)
        R = _Rows()
        nn: list[int] = []          # extra nonnegative variables
        cursor = itertools.count(lay.extra0)
        xcol = lambda i: lay.x0 + pos[int(i)]  # noqa: E731
        bin_col: dict[int, int] = {}
        budget = spec.n

        if self.kind == "node":
            for b in free:
                bin_col[int(b)] = next(cursor)
                nn.append(bin_col[int(b)])
            for j in live:
                cols, vals = [], []
                for i in gs.node_members[j]:
                    if int(i) in pos:
                        cols.append(xcol(i))
                        vals.append(1.0)
                e = next(cursor)
                nn.append(e)
                if j in bin_col:        # z_j + e = M s_j
                    R.add(cols + [e, bin_col[j]], vals + [1.0, -M], 0.0)
                else:                   # s_j = 1
                    R.add(cols + [e], vals + [1.0], M)
            budget -= sum(1 for v in fixed.values() if v == 1)
            for b in free:              # s <= 1
                g = next(cursor)
                nn.append(g)
                R.add([bin_col[int(b)], g], [1.0, 1.0], 1.0)
            h = next(cursor)
            nn.append(h)
            R.add([bin_col[int(b)] for b in free] + [h], [1.0] * free.size + [1.0], budget)
        else:
            for b in free:
                bin_col[int(b)] = next(cursor)
                nn.append(bin_col[int(b)])
            for b in free:
                t = bin_col[int(b)]
                e = next(cursor)
                nn.append(e)
                R.add([xcol(b), e, t], [1.0, 1.0, -M], 0.0)         # x <= M t
                if xm > 0:
                    e2 = next(cursor)
                    nn.append(e2)
                    R.add([xcol(b), e2, t], [1.0, -1.0, -xm], 0.0)  # x >= x_min t
                g = next(cursor)
                nn.append(g)
                R.add([t, g], [1.0, 1.0], 1.0)                      # t <= 1
            for i in fixed_one:
                e = next(cursor)
                nn.append(e)
                R.add([xcol(i), e], [1.0, 1.0], M)
                if xm > 0:
                    e2 = next(cursor)
                    nn.append(e2)
                    R.add([xcol(i), e2], [1.0, -1.0], xm)
            s_col = {}
            for j in nodes:
                s_col[j] = next(cursor)
                nn.append(s_col[j])
            for j in nodes:
                for i in gs.node_members[j]:
                    if int(i) not in pos:
                        continue
                    e = next(cursor)
                    nn.append(e)
                    if int(i) in bin_col:       # s_j - t_i - e = 0
                        R.add([s_col[j], bin_col[int(i)], e], [1.0, -1.0, -1.0], 0.0)
                    else:                       # s_j - e = 1
                        R.add([s_col[j], e], [1.0, -1.0], 1.0)
            for a, b in pairs:
                e = next(cursor)
                nn.append(e)
                R.add([bin_col[a], bin_col[b], e], [1.0, 1.0, 1.0], 1.0)
            h = next(cursor)
            nn.append(h)
            R.add([s_col[j] for j in nodes] + [h], [1.0] * len(nodes) + [1.0], budget)

        n_total = lay.n_total
        assert next(cursor) == n_total, "extra variable count mismatch"
        A_link, b_link = R.matrix(n_total)
        rows.append(A_link)
        rhs.append(b_link)
        cones[0] = ConeBlock("nonneg", (lay.slack, *nn))
        cvec = np.zeros(n_total)
        cvec[lay.slices()["w"]] = 1.0
        prog = ConicProgram(n_total, cvec, sp.vstack(rows).tocsr(), np.concatenate(rhs), tuple(cones))
        extra = {"trivially_infeasible": infeasible or budget < 0, "binary_cols": bin_col}
        return TrussProgram(prog, spec, sc, lay.slices(), members, extra), free

    def solve_relaxation(self, fixed: Mapping[int, int] | None = None, tol: float = 1e-8) -> Relaxation:
        fx = self.propagate({**self.fixed, **(fixed or {})})
        if fx is None:
            tp, free = self.relaxation_program(dict(self.fixed))
            return Relaxation(tp, _infeasible_solution(tp.program), free, np.zeros(free.size))
        tp, free = self.relaxation_program(fx)
        sol = tp.solve(tol)
        rel = Relaxation(tp, sol, free, np.zeros(free.size))
        if rel.feasible:
            rel.values = self._implied_values(rel.areas(), free)
        return rel

    def _implied_values(self, x: np.ndarray, free: np.ndarray) -> np.ndarray:
        if self.kind == "node":
            z = self.spec.gs.Z @ x
            return np.clip(z[free] / self.bigM, 0.0, 1.0)
        return np.clip(x[free] / self.bigM, 0.0, 1.0)

    def evaluate(self, assignment: Mapping[int, int], tol: float = 1e-8) -> Relaxation:
        """Solve with every binary fixed."""
        full = {b: int(assignment.get(b, 0)) for b in range(self.n_binaries)}
        return self.solve_relaxation(full, tol)


def build_node_model(spec: ProblemSpec, bigM: float | None = None) -> MisocpModel:
    return MisocpModel("node", spec, auto_big_m(spec) if bigM is None else float(bigM))


def build_member_model(spec: ProblemSpec, bigM: float | None = None, x_min: float = 0.0,
                       enforce_overlaps: bool = False) -> MisocpModel:
    return MisocpModel("member", spec, auto_big_m(spec) if bigM is None else float(bigM),
                       float(x_min), bool(enforce_overlaps))


# -- branch and bound ----------------------------------------------------------------------

@dataclass(frozen=True)
class BnbOptions:
    gap_tol: float = 1e-6
    node_limit: int = 10_000
    time_limit: float | None = None     # seconds
    inner_tol: float = 1e-8


@dataclass
class BnbResult:
    design: TrussDesign | None
    objective: float
    bound: float
    gap: float
    nodes: int
    status: BnbStatus
    assignment: dict[int, int] | None
    log: list[tuple] = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "depth", "bound", "incumbent", "fixed"])
        for row in self.log:
            w.writerow(row)
        return buf.getvalue()


def _gap(incumbent: float, bound: float) -> float:
    if not np.isfinite(incumbent):
        return np.inf
    return max(0.0, (incumbent - bound) / max(1.0, abs(incumbent)))


def _summary(model: MisocpModel, fixed: Mapping[int, int]) -> str:
    prefix = "s" if model.kind == "node" else "t"
    return ";".join(f"{prefix}{k}={v}" for k, v in sorted(fixed.items()))


def _round(model: MisocpModel, rel: Relaxation, fixed: Mapping[int, int]) -> dict[int, int] | None:
    """Binary assignment from the ``n`` most active nodes of a relaxation."""
    spec = model.spec
    gs = spec.gs
    n = spec.n
    x = rel.areas()
    z = gs.Z @ x
    if model.kind == "node":
        ones = [j for j, v in fixed.items() if v == 1]
        cand = [j for j in np.lexsort((np.arange(gs.l), -z)) if j not in fixed]
        chosen = set(ones) | set(int(j) for j in cand[:max(0, n - len(ones))])
        return {j: int(j in chosen) for j in range(gs.l)}
    # member model: pick nodes first, then members inside them
    forced_nodes = model._nodes_of([i for i, v in fixed.items() if v == 1])
    if len(forced_nodes) > n:
        return None
    order = [int(j) for j in np.lexsort((np.arange(gs.l), -z)) if int(j) not in forced_nodes]
    chosen = forced_nodes | set(order[:n - len(forced_nodes)])
    thresh = max(0.5 * model.x_min, 1e-12)
    assign: dict[int, int] = {}
    for i in range(gs.m):
        if fixed.get(i) is not None:
            assign[i] = fixed[i]
            continue
        ok = model._nodes_of([i]) <= chosen and x[i] >= thresh
        assign[i] = int(ok)
    if model.enforce_overlaps:
        for a, b in sorted(gs.overlaps, key=lambda p: -max(x[p[0]], x[p[1]])):
            if assign[a] and assign[b]:
                loser = b if (fixed.get(a) == 1 or x[a] >= x[b]) and fixed.get(b) != 1 else a
                assign[loser] = 0
    if model.x_min > 0:
        assign = _thin(model, assign, fixed)
    return assign


def _thin(model: MisocpModel, assign: dict[int, int], fixed: Mapping[int, int],
          rounds: int = 8) -> dict[int, int] | None:
    """Drop members that the support's own optimum keeps below ``x_min``, then re-solve."""
    free_model = replace(model, x_min=0.0, fixed={})
    for _ in range(rounds):
        rel = free_model.evaluate(assign)
        if not rel.feasible:
            return assign
        x = rel.areas()
        thin = [i for i, v in assign.items() if v == 1 and fixed.get(i) is None
                and x[i] < model.x_min * (1 - 1e-9)]
        if not thin:
            return assign
        drop = min(thin, key=lambda i: (x[i], i))
        assign = {**assign, drop: 0}
    return assign


def _unsupported(model: MisocpModel, assign: Mapping[int, int]) -> bool:
    """True when the members allowed by ``assign`` cannot carry the load at any areas."""
    gs = model.spec.gs
    if model.kind == "node":
        on = np.ones(gs.m)
        for j, v in assign.items():
            if v == 0:
                on[list(gs.node_members[j])] = 0.0
    else:
        on = np.array([float(assign.get(i, 0) == 1) for i in range(gs.m)])
    return not np.isfinite(evaluate_compliance(gs, model.spec.E, on, model.spec.p))


def branch_and_bound(model: MisocpModel, opts: BnbOptions | None = None) -> BnbResult:
    """Best-first branch and bound over conic relaxations."""
    opts = opts or BnbOptions()
    t0 = time.monotonic()
    counter = itertools.count()
    log: list[tuple] = []
    inc_obj = np.inf
    inc_design: TrussDesign | None = None
    inc_assign: dict[int, int] | None = None
    tried: set[tuple] = set()
    nodes = 0
    unresolved = np.inf        # smallest bound among leaves the solver could not settle

    def try_assignment(assign: dict[int, int] | None):
        nonlocal inc_obj, inc_design, inc_assign
        if assign is None:
            return
        key = tuple(sorted(k for k, v in assign.items() if v == 1))
        if key in tried:
            return
        tried.add(key)
        leaf = model.evaluate(assign, opts.inner_tol)
        if not leaf.feasible or leaf.objective >= inc_obj:
            return
        design = leaf.program.design(leaf.solution)
        fem = evaluate_compliance(model.spec.gs, model.spec.E, design.x, model.spec.p)
        if not abs(fem - leaf.objective) <= FEM_TOL * leaf.objective:
            return
        inc_obj = leaf.objective
        inc_design = design
        inc_assign = dict(assign)

    def solve_node(fixed: dict[int, int]):
        nonlocal nodes
        nodes += 1
        return model.solve_relaxation(fixed, opts.inner_tol)

    root_fixed = dict(model.fixed)
    root = solve_node(root_fixed)
    if not root.feasible and not root.uncertain:
        return BnbResult(None, np.inf, np.inf, np.inf, nodes, "infeasible", None, log)
    heap = [(root.objective if root.feasible else 0.0, next(counter), 0, root_fixed, root)]
    status: BnbStatus = "optimal"
    while heap:
        bound, nid, depth, fixed, rel = heapq.heappop(heap)
        if bound >= inc_obj * (1.0 - opts.gap_tol) and np.isfinite(inc_obj):
            log.append((nid, depth, bound, inc_obj, "pruned:" + _summary(model, fixed)))
            continue
        if rel.feasible:
            try_assignment(_round(model, rel, fixed))
        log.append((nid, depth, bound, inc_obj, _summary(model, fixed)))
        if bound >= inc_obj * (1.0 - opts.gap_tol):
            continue
        if rel.free.size == 0:
            # every binary fixed: the relaxation is the leaf itself
            if rel.uncertain and not _unsupported(model, fixed):
                unresolved = min(unresolved, bound)
            try_assignment({**fixed})
            continue
        frac = np.abs(rel.values - np.round(rel.values))
        if rel.feasible and frac.max(initial=0.0) <= INTEGRALITY_TOL:
            assign = {**fixed, **{int(b): int(round(v)) for b, v in zip(rel.free, rel.values)}}
            try_assignment(assign)
            # rounding a near-integral point may still miss the bound; branch anyway
            if bound >= inc_obj * (1.0 - opts.gap_tol):
                continue
        k = int(np.lexsort((rel.free, -np.minimum(rel.values, 1.0 - rel.values)))[0])
        b = int(rel.free[k])
        if nodes >= opts.node_limit or (opts.time_limit is not None and time.monotonic() - t0 > opts.time_limit):
            heapq.heappush(heap, (bound, nid, depth, fixed, rel))
            status = "node_limit"
            break
        for v in (0, 1):
            child_fixed = {**fixed, b: v}
            child = solve_node(child_fixed)
            if child.feasible:
                heapq.heappush(heap, (max(bound, child.objective), next(counter), depth + 1, child_fixed, child))
            elif child.uncertain:
                # keep the parent bound and branch in index order
                child.values = np.full(child.free.size, 0.5)
                heapq.heappush(heap, (bound, next(counter), depth + 1, child_fixed, child))
    open_bound = min((h[0] for h in heap), default=np.inf)
    bound = min(open_bound, inc_obj, unresolved)
    gap = _gap(inc_obj, bound)
    if status == "optimal" and not np.isfinite(inc_obj):
        status = "infeasible"
        bound = np.inf
    elif status == "optimal" and gap > opts.gap_tol:
        status = "gap_limit"
    return BnbResult(inc_design, inc_obj, bound, gap, nodes, status, inc_assign, log)
