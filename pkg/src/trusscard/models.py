"""Truss data to conic programs, plus a finite-element compliance oracle.

Internal units are SI (N, m, m^2, Pa, J).  Programs are built on scaled
variables (areas in units of ``V / sum(c)``, forces in units of ``|p|``,
energies in units of ``|p|^2 L^2 / (E V)``) and mapped back by
:class:`TrussProgram`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .conic import ConeBlock, ConicProgram, ConicSolution, solve
from .ground import GroundStructure, TrussDesign

PAPER_E = 200e9         # Pa; see README on the modulus
PAPER_LOAD = 1e5        # N, downward
MM3 = 1e-9              # m^3 per mm^3
MM2 = 1e-6              # m^2 per mm^2


@dataclass(frozen=True)
class LoadCase:
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if not np.all(np.isfinite(p)) or not np.any(p):
            raise ValueError("load vector must be finite and nonzero")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    gs: GroundStructure
    load: LoadCase
    E: float
    V: float
    n: int | None = None

    def __post_init__(self):
        if not self.E > 0 or not self.V > 0:
            raise ValueError("E and V must be positive")
        if self.load.p.shape != (self.gs.d,):
            raise ValueError(f"load has {self.load.p.size} entries, structure has {self.gs.d} DOFs")
        if self.n is not None and not 1 <= self.n <= self.gs.l:
            raise ValueError(f"node bound n={self.n} outside [1, {self.gs.l}]")

    @property
    def p(self) -> np.ndarray:
        return self.load.p

    def with_n(self, n: int | None) -> "ProblemSpec":
        return ProblemSpec(self.gs, self.load, self.E, self.V, n)

    def with_gs(self, gs: GroundStructure) -> "ProblemSpec":
        return ProblemSpec(gs, self.load, self.E, self.V, self.n)


def point_load(gs: GroundStructure, node: int, force: tuple[float, float]) -> LoadCase:
    p = np.zeros(gs.d)
    for ax in range(2):
        dof = gs.dof_map[node, ax]
        if force[ax] != 0:
            if dof < 0:
                raise ValueError(f"load applied to restrained DOF of node {node}")
            p[dof] = force[ax]
    return LoadCase(p)


def paper_volume(nx: int, ny: int) -> float:
    """``V = 2 NX NY 1e5 mm^3`` in m^3."""
    return 2.0 * nx * ny * 1e5 * MM3


def paper_instance(nx: int, ny: int, n: int | None = None, lmax: float = 5.0) -> ProblemSpec:
    gs = GroundStructure.grid(nx, ny, lmax)
    load = point_load(gs, gs.bottom_right_free_node(), (0.0, -PAPER_LOAD))
    return ProblemSpec(gs, load, PAPER_E, paper_volume(nx, ny), n)


# finite-element oracle --------------------------------------------------------------

def assemble_stiffness(gs: GroundStructure, E: float, x: np.ndarray) -> sp.csr_matrix:
    """``K(x) = sum_i (E / c_i) x_i b_i b_i^T`` as a sparse ``d x d`` matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape != (gs.m,):
        raise ValueError(f"x must have {gs.m} entries")
    if np.any(x < 0):
        raise ValueError("areas must be nonnegative")
    B = gs.B
    return (B @ sp.diags(E * x / gs.lengths) @ B.T).tocsr()


def evaluate_compliance(gs: GroundStructure, E: float, x: np.ndarray, p: np.ndarray) -> float:
    """``p^T u`` with ``K(x) u = p``; ``inf`` when ``p`` is outside the range of ``K``."""
    K = assemble_stiffness(gs, E, x).toarray()
    p = np.asarray(p, dtype=float)
    pn = np.linalg.norm(p)
    try:
        cf = sla.cho_factor(K, lower=True, check_finite=False)
        u = sla.cho_solve(cf, p, check_finite=False)
        if np.all(np.isfinite(u)) and np.linalg.norm(K @ u - p) <= 1e-10 * pn:
            return float(p @ u)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        pass
    lam, Q = np.linalg.eigh(K)
    cut = 1e-13 * max(lam.max(initial=0.0), 0.0)
    keep = lam > cut
    if not keep.any():
        return np.inf
    pq = Q[:, keep].T @ p
    u = Q[:, keep] @ (pq / lam[keep])
    if np.linalg.norm(K @ u - p) > 1e-8 * pn:
        return np.inf
    return float(p @ u)


def fully_stressed_areas(gs: GroundStructure, q: np.ndarray, V: float) -> np.ndarray:
    """Uniform-stress areas carrying forces ``q`` with volume exactly ``V``."""
    aq = np.abs(np.asarray(q, dtype=float))
    total = float(gs.lengths @ aq)
    if total <= 0:
        raise ValueError("forces are all zero")
    return V * aq / total


# conic models ----------------------------------------------------------------------

@dataclass(frozen=True)
class Scaling:
    area: float     # m^2 per unit scaled area
    force: float    # N per unit scaled force
    energy: float   # J per unit scaled objective

    @classmethod
    def for_spec(cls, spec: ProblemSpec) -> "Scaling":
        gs = spec.gs
        span = np.ptp(gs.xy, axis=0)
        lc2 = float(span @ span) or 1.0
        f0 = float(np.linalg.norm(spec.p))
        return cls(
            area=spec.V / (float(gs.lengths.sum()) or 1.0),
            force=f0,
            energy=f0 * f0 * lc2 / (spec.E * spec.V),
        )


@dataclass
class TrussProgram:
    """A conic program over scaled truss variables plus the map back to SI.

    Only the members listed in ``members`` carry variables; the rest are
    held at zero area and force.
    """

    program: ConicProgram
    spec: ProblemSpec
    scaling: Scaling
    sl: dict[str, slice]
    members: np.ndarray
    extra: dict = field(default_factory=dict)

    def _scatter(self, vals: np.ndarray) -> np.ndarray:
        out = np.zeros(self.spec.gs.m)
        out[self.members] = vals
        return out

    def areas(self, sol: ConicSolution) -> np.ndarray:
        return self._scatter(np.maximum(sol.x[self.sl["x"]], 0.0) * self.scaling.area)

    def forces(self, sol: ConicSolution) -> np.ndarray:
        return self._scatter(sol.x[self.sl["q"]] * self.scaling.force)

    def energies(self, sol: ConicSolution) -> np.ndarray:
        return self._scatter(sol.x[self.sl["w"]] * self.scaling.energy)

    def objective(self, sol: ConicSolution) -> float:
        """Objective value in joules."""
        return sol.primal_objective * self.scaling.energy

    def stressed_areas(self, sol: ConicSolution) -> np.ndarray:
        """Areas rebuilt from the member forces as ``x = V |q| / c^T |q|``.

        For fixed forces this is the volume-feasible minimizer of the
        compliance, so at an optimum it matches :meth:`areas` in value while
        inheriting the tighter accuracy of ``q`` (equilibrium is an equality
        row, area equalities are only met to the duality gap).
        """
        return fully_stressed_areas(self.spec.gs, self.forces(sol), self.spec.V)

    def design(self, sol: ConicSolution, with_fem: bool = False) -> TrussDesign:
        gs = self.spec.gs
        x = self.areas(sol)
        comp = evaluate_compliance(gs, self.spec.E, x, self.spec.p) if with_fem else float(self.energies(sol).sum())
        return TrussDesign.from_areas(gs, x, comp)

    def solve(self, tol: float = 1e-8) -> ConicSolution:
        if self.extra.get("trivially_infeasible"):
            return _infeasible_solution(self.program)
        return solve(self.program, tol=tol)


def _infeasible_solution(prog: ConicProgram) -> ConicSolution:
    nan = np.full(prog.n_vars, np.nan)
    return ConicSolution("infeasible", nan, np.full(prog.b.size, np.nan), [], np.inf, np.inf,
                         np.nan, np.nan, np.nan, 0, {"reason": "load on a DOF without members"})


def forced_members(gs: GroundStructure, nodes: Iterable[int]) -> np.ndarray:
    """Members incident to any of the given free-node positions."""
    ids: set[int] = set()
    for j in nodes:
        ids.update(gs.node_members[int(j)])
    return np.array(sorted(ids), dtype=int)


def kept_members(gs: GroundStructure, forced_zero_nodes: Iterable[int] = (),
                 fixed_members: Iterable[int] = ()) -> np.ndarray:
    drop = np.union1d(forced_members(gs, forced_zero_nodes), np.asarray(list(fixed_members), dtype=int))
    return np.setdiff1d(np.arange(gs.m), drop)


class _Layout:
    """Variable layout ``[x, q, w, slack, extra...]`` over a member subset."""

    def __init__(self, k: int, n_extra: int = 0):
        self.k = k
        self.x0, self.q0, self.w0 = 0, k, 2 * k
        self.slack = 3 * k
        self.extra0 = 3 * k + 1
        self.n_total = 3 * k + 1 + n_extra

    def slices(self) -> dict[str, slice]:
        k = self.k
        return {"x": slice(0, k), "q": slice(k, 2 * k), "w": slice(2 * k, 3 * k),
                "slack": slice(3 * k, 3 * k + 1)}


def _compliance_blocks(spec: ProblemSpec, sc: Scaling, lay: _Layout, members: np.ndarray):
    """Rows and cones shared by every model: equilibrium, volume, member cones.

    Returns ``(rows, rhs, cones, infeasible)``; ``infeasible`` flags a load on
    a DOF that no kept member reaches.
    """
    gs = spec.gs
    k = lay.k
    n_total = lay.n_total
    ix = np.arange(lay.x0, lay.x0 + k)
    iq = np.arange(lay.q0, lay.q0 + k)
    iw = np.arange(lay.w0, lay.w0 + k)
    c = gs.lengths[members]
    ctot = gs.lengths.sum()
    rows = []
    rhs = []
    # equilibrium: B q = p, dropping DOFs no kept member touches
    Bk = gs.B[:, members].tocsr()
    touched = np.diff(Bk.indptr) > 0
    pk = spec.p / sc.force
    infeasible = bool(np.any(pk[~touched] != 0))
    B = Bk[touched].tocoo()
    rows.append(sp.coo_matrix((B.data, (B.row, iq[B.col])), shape=(int(touched.sum()), n_total)))
    rhs.append(pk[touched])
    # volume: c'x + slack = V
    vol = sp.coo_matrix(
        (np.append(c / ctot, 1.0), (np.zeros(k + 1, dtype=int), np.append(ix, lay.slack))),
        shape=(1, n_total),
    )
    rows.append(vol)
    rhs.append(np.ones(1))
    kappa = np.sqrt(c * sc.force ** 2 / (spec.E * sc.area * sc.energy))
    cones = [ConeBlock("nonneg", (lay.slack,))]
    cones += [
        ConeBlock("rsoc", (int(iq[i]), int(iw[i]), int(ix[i])), (float(kappa[i]), 1.0, 1.0))
        for i in range(k)
    ]
    return rows, rhs, cones, infeasible


def build_min_compliance(spec: ProblemSpec, forced_zero_nodes: Iterable[int] = (),
                         fixed_members: Iterable[int] = (), explicit_nonneg: bool = False) -> TrussProgram:
    """Minimum-compliance SOCP; ``forced_zero_nodes`` are free-node positions.

    Members touching a forced node, and ``fixed_members``, are left out of the
    program rather than pinned by equality rows, which keeps it strictly
    feasible.  ``explicit_nonneg`` adds ``x >= 0`` as a separate orthant on a
    copy of ``x``.  The cones already imply it, so the optimal value is the
    same, but an interior-point method then converges to a different point of
    a non-unique optimal set.
    """
    sc = Scaling.for_spec(spec)
    members = kept_members(spec.gs, forced_zero_nodes, fixed_members)
    k = members.size
    lay = _Layout(k, k if explicit_nonneg else 0)
    rows, rhs, cones, infeasible = _compliance_blocks(spec, sc, lay, members)
    if explicit_nonneg:
        iu = np.arange(lay.extra0, lay.extra0 + k)
        rows.append(sp.coo_matrix(
            (np.concatenate([np.ones(k), -np.ones(k)]),
             (np.tile(np.arange(k), 2), np.concatenate([np.arange(lay.x0, lay.x0 + k), iu]))),
            shape=(k, lay.n_total)))
        rhs.append(np.zeros(k))
        cones.append(ConeBlock("nonneg", tuple(int(i) for i in iu)))
    cvec = np.zeros(lay.n_total)
    cvec[lay.slices()["w"]] = 1.0
    A = sp.vstack(rows).tocsr()
    prog = ConicProgram(lay.n_total, cvec, A, np.concatenate(rhs), tuple(cones))
    return TrussProgram(prog, spec, sc, lay.slices(), members, {"trivially_infeasible": infeasible})


def build_x_update(spec: ProblemSpec, z_k: np.ndarray, v_k: np.ndarray, rho: float) -> TrussProgram:
    """``min sum w + (rho/2) t`` with ``||Z x - z_k + v_k||^2 <= t``; ``rho`` in J/m^4."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    gs = spec.gs
    sc = Scaling.for_spec(spec)
    m, l = gs.m, gs.l
    members = np.arange(m)
    lay = _Layout(m, l + 2)
    ir = np.arange(lay.extra0, lay.extra0 + l)
    it = lay.extra0 + l
    ione = it + 1
    n_total = lay.n_total
    rows, rhs, cones, _ = _compliance_blocks(spec, sc, lay, members)
    # sigma r - Z x = v_k - z_k  (scaled); sigma keeps r and t of order one
    shift = (np.asarray(v_k, dtype=float) - np.asarray(z_k, dtype=float)) / sc.area
    sigma = max(1.0, float(np.linalg.norm(shift)))
    Z = gs.Z.tocoo()
    link = sp.coo_matrix(
        (np.concatenate([np.full(l, sigma), -Z.data]),
         (np.concatenate([np.arange(l), Z.row]), np.concatenate([ir, Z.col]))),
        shape=(l, n_total),
    )
    rows.append(link)
    rhs.append(shift)
    rows.append(sp.coo_matrix(([1.0], ([0], [ione])), shape=(1, n_total)))
    rhs.append(np.ones(1))
    cones.append(ConeBlock("rsoc", tuple(int(i) for i in ir) + (it, ione)))
    sl = lay.slices()
    cvec = np.zeros(n_total)
    cvec[sl["w"]] = 1.0
    cvec[it] = 0.5 * rho * sc.area ** 2 * sigma ** 2 / sc.energy
    A = sp.vstack(rows).tocsr()
    prog = ConicProgram(n_total, cvec, A, np.concatenate(rhs), tuple(cones))
    sl = {**sl, "r": slice(ir[0], ir[-1] + 1), "t": slice(it, it + 1)}
    return TrussProgram(prog, spec, sc, sl, members, {"rho": rho, "sigma": sigma})


def solve_min_compliance(spec: ProblemSpec, forced_zero_nodes: Iterable[int] = (), tol: float = 1e-8):
    """Build, solve and unscale; returns ``(design or None, objective J, solution)``."""
    tp = build_min_compliance(spec, forced_zero_nodes)
    sol = tp.solve(tol)
    if sol.status in ("infeasible", "unbounded") or not np.all(np.isfinite(sol.x)):
        return None, np.inf, sol
    return tp.design(sol), tp.objective(sol), sol
