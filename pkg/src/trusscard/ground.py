"""Planar ground structures: grid nodes, length-capped members, incidence and overlaps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

LENGTH_TOL = 1e-9
COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class Node:
    id: int
    coord: tuple[float, float]
    fixed: tuple[bool, bool] = (False, False)

    @property
    def is_free(self) -> bool:
        return not all(self.fixed)


@dataclass(frozen=True)
class Member:
    id: int
    ends: tuple[int, int]
    length: float


def generate_grid(nx: int, ny: int, spacing: float = 1.0) -> list[Node]:
    """(nx+1) x (ny+1) grid, row-major from the bottom-left; left column pinned."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be integers >= 1, got ({nx}, {ny})")
    if not spacing > 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    nodes = []
    for row in range(ny + 1):
        for col in range(nx + 1):
            pinned = col == 0
            nodes.append(Node(len(nodes), (col * spacing, row * spacing), (pinned, pinned)))
    return nodes


def generate_members(nodes: Sequence[Node], lmax: float) -> list[Member]:
    """One member per node pair no longer than ``lmax``; overlapping pairs are kept."""
    if len(nodes) < 2:
        raise ValueError("need at least two nodes")
    if not lmax > 0:
        raise ValueError(f"lmax must be positive, got {lmax}")
    xy = np.array([nd.coord for nd in nodes], dtype=float)
    members = []
    for a in range(len(nodes)):
        dist = np.hypot(*(xy[a + 1:] - xy[a]).T)
        for off in np.nonzero(dist <= lmax + LENGTH_TOL)[0]:
            members.append(Member(len(members), (a, a + 1 + int(off)), float(dist[off])))
    return members


def _line_keys(xy: np.ndarray, ends: np.ndarray):
    """Canonical unit direction and signed offset of each member's supporting line."""
    d = xy[ends[:, 1]] - xy[ends[:, 0]]
    u = d / np.linalg.norm(d, axis=1)[:, None]
    flip = (u[:, 0] < -COLLINEAR_TOL) | ((np.abs(u[:, 0]) <= COLLINEAR_TOL) & (u[:, 1] < 0))
    u[flip] *= -1
    offset = xy[ends[:, 0], 0] * u[:, 1] - xy[ends[:, 0], 1] * u[:, 0]
    return u, offset


def detect_overlaps(members: Sequence[Member], nodes: Sequence[Node]) -> set[tuple[int, int]]:
    """Pairs ``(i1, i2)``, ``i1 < i2``, of collinear members sharing a segment of positive length."""
    if not members:
        return set()
    xy = np.array([nd.coord for nd in nodes], dtype=float)
    ends = np.array([mb.ends for mb in members], dtype=int)
    u, offset = _line_keys(xy, ends)
    scale = max(1.0, float(np.abs(xy).max()))
    key = np.round(np.column_stack([u, offset / scale]) / (1e3 * COLLINEAR_TOL)).astype(np.int64)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, k in enumerate(map(tuple, key)):
        groups.setdefault(k, []).append(i)
    pairs: set[tuple[int, int]] = set()
    for idx in groups.values():
        if len(idx) < 2:
            continue
        idx = np.array(idx)
        t0 = xy[ends[idx, 0]] @ u[idx[0]]
        t1 = xy[ends[idx, 1]] @ u[idx[0]]
        lo, hi = np.minimum(t0, t1), np.maximum(t0, t1)
        order = np.argsort(lo, kind="stable")
        for a_pos, a in enumerate(order):
            for b in order[a_pos + 1:]:
                if lo[b] >= hi[a] - LENGTH_TOL:
                    break
                if min(hi[a], hi[b]) - max(lo[a], lo[b]) > LENGTH_TOL:
                    i1, i2 = sorted((int(idx[a]), int(idx[b])))
                    pairs.add((i1, i2))
    return pairs


def incidence(members: Sequence[Member], nodes: Sequence[Node]):
    """Members touching each free node, and the 0/1 matrix ``Z`` (free nodes x members)."""
    free = [nd.id for nd in nodes if nd.is_free]
    pos = {nid: j for j, nid in enumerate(free)}
    sets: list[list[int]] = [[] for _ in free]
    rows, cols = [], []
    for mb in members:
        for e in mb.ends:
            if e in pos:
                sets[pos[e]].append(mb.id)
                rows.append(pos[e])
                cols.append(mb.id)
    Z = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(free), len(members)))
    return {j: tuple(s) for j, s in enumerate(sets)}, Z


@dataclass(frozen=True, eq=False)
class GroundStructure:
    nodes: tuple[Node, ...]
    members: tuple[Member, ...]

    def __post_init__(self):
        ids = [nd.id for nd in self.nodes]
        if ids != list(range(len(self.nodes))):
            raise ValueError("node ids must be 0..N-1 in order")
        for i, mb in enumerate(self.members):
            a, b = mb.ends
            if mb.id != i or a == b or not (0 <= a < len(ids) and 0 <= b < len(ids)):
                raise ValueError(f"invalid member {mb}")
            if not mb.length > 0:
                raise ValueError(f"member {i} has non-positive length")

    @classmethod
    def from_ends(cls, nodes: Sequence[Node], ends: Iterable[tuple[int, int]]) -> "GroundStructure":
        xy = np.array([nd.coord for nd in nodes], dtype=float)
        members = []
        for a, b in ends:
            members.append(Member(len(members), (int(a), int(b)), float(np.linalg.norm(xy[b] - xy[a]))))
        return cls(tuple(nodes), tuple(members))

    @classmethod
    def grid(cls, nx: int, ny: int, lmax: float = 5.0, spacing: float = 1.0) -> "GroundStructure":
        nodes = generate_grid(nx, ny, spacing)
        return cls(tuple(nodes), tuple(generate_members(nodes, lmax)))

    # derived quantities ---------------------------------------------------------
    @property
    def m(self) -> int:
        return len(self.members)

    @cached_property
    def xy(self) -> np.ndarray:
        return np.array([nd.coord for nd in self.nodes], dtype=float)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([mb.length for mb in self.members])

    @cached_property
    def ends(self) -> np.ndarray:
        return np.array([mb.ends for mb in self.members], dtype=int).reshape(-1, 2)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        return np.array([nd.id for nd in self.nodes if nd.is_free], dtype=int)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.free_nodes)

    @cached_property
    def dof_map(self) -> np.ndarray:
        """``dof_map[node, axis]`` is the free DOF index, or -1 if restrained."""
        dm = -np.ones((len(self.nodes), 2), dtype=int)
        k = 0
        for nd in self.nodes:
            for ax in range(2):
                if not nd.fixed[ax]:
                    dm[nd.id, ax] = k
                    k += 1
        return dm

    @property
    def d(self) -> int:
        return int((self.dof_map >= 0).sum())

    @cached_property
    def B(self) -> sp.csc_matrix:
        """``d x m`` matrix whose column ``i`` is the equilibrium vector ``b_i``."""
        ends = self.ends
        dvec = self.xy[ends[:, 1]] - self.xy[ends[:, 0]]
        cos = dvec / self.lengths[:, None]
        rows, cols, vals = [], [], []
        for end, sign in ((0, -1.0), (1, 1.0)):
            for ax in range(2):
                dof = self.dof_map[ends[:, end], ax]
                ok = dof >= 0
                rows.append(dof[ok])
                cols.append(np.nonzero(ok)[0])
                vals.append(sign * cos[ok, ax])
        B = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.d, self.m),
        )
        B.eliminate_zeros()
        return B

    @cached_property
    def _incidence(self):
        return incidence(self.members, self.nodes)

    @property
    def node_members(self) -> dict[int, tuple[int, ...]]:
        """``I(j)`` keyed by free-node position ``j``."""
        return self._incidence[0]

    @property
    def Z(self) -> sp.csr_matrix:
        return self._incidence[1]

    @cached_property
    def overlaps(self) -> frozenset[tuple[int, int]]:
        return frozenset(detect_overlaps(self.members, self.nodes))

    def free_index(self, node_id: int) -> int:
        hit = np.nonzero(self.free_nodes == node_id)[0]
        if hit.size == 0:
            raise KeyError(f"node {node_id} is not free")
        return int(hit[0])

    def member_between(self, a: int, b: int) -> int | None:
        return self._pair_index.get((min(a, b), max(a, b)))

    @cached_property
    def _pair_index(self) -> dict[tuple[int, int], int]:
        return {(min(mb.ends), max(mb.ends)): mb.id for mb in self.members}

    def without_overlaps(self) -> "GroundStructure":
        """Drop every member that has a node lying strictly inside it."""
        xy = self.xy
        keep = []
        for mb in self.members:
            a, b = (xy[e] for e in mb.ends)
            t = (xy - a) @ (b - a) / mb.length ** 2
            cross = np.abs((xy[:, 0] - a[0]) * (b[1] - a[1]) - (xy[:, 1] - a[1]) * (b[0] - a[0])) / mb.length
            inside = (cross <= COLLINEAR_TOL * max(1.0, mb.length)) & (t > LENGTH_TOL) & (t < 1 - LENGTH_TOL)
            if not inside.any():
                keep.append(mb.ends)
        return GroundStructure.from_ends(self.nodes, keep)

    def bottom_right_free_node(self) -> int:
        free = self.free_nodes
        y = self.xy[free, 1]
        cand = free[np.abs(y - y.min()) <= LENGTH_TOL]
        return int(cand[np.argmax(self.xy[cand, 0])])

    # serialization ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": nd.id, "x": nd.coord[0], "y": nd.coord[1], "fixed": list(nd.fixed)}
                for nd in self.nodes
            ],
            "members": [{"id": mb.id, "ends": list(mb.ends)} for mb in self.members],
            "units": "SI",
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundStructure":
        if doc.get("units", "SI") != "SI":
            raise ValueError(f"unsupported units {doc.get('units')!r}")
        nodes = [
            Node(int(nd["id"]), (float(nd["x"]), float(nd["y"])), tuple(bool(f) for f in nd.get("fixed", (False, False))))
            for nd in doc["nodes"]
        ]
        nodes.sort(key=lambda nd: nd.id)
        members = sorted(doc["members"], key=lambda mb: mb["id"])
        if [mb["id"] for mb in members] != list(range(len(members))):
            raise ValueError("member ids must be 0..m-1")
        return cls.from_ends(nodes, [tuple(mb["ends"]) for mb in members])

    @classmethod
    def from_json(cls, text: str) -> "GroundStructure":
        return cls.from_dict(json.loads(text))


@dataclass
class TrussDesign:
    x: np.ndarray
    volume: float
    compliance: float | None = None
    node_activity: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_areas(cls, gs: GroundStructure, x: np.ndarray, compliance: float | None = None) -> "TrussDesign":
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return cls(x=x, volume=float(gs.lengths @ x), compliance=compliance, node_activity=gs.Z @ x)

    def active_nodes(self, eps: float) -> np.ndarray:
        return np.nonzero(self.node_activity > eps)[0]


def _collinear_opposite(xy: np.ndarray, j: int, a: int, b: int) -> bool:
    u = xy[a] - xy[j]
    v = xy[b] - xy[j]
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    cross = abs(u[0] * v[1] - u[1] * v[0]) / (nu * nv)
    return cross <= COLLINEAR_TOL * 1e3 and float(u @ v) < 0


def hinge_cancel(gs: GroundStructure, x: np.ndarray, tol_area: float, rel_tol: float = 1e-6):
    """Merge chains of collinear, equal-area members through unloaded free nodes.

    Returns ``(x_merged, free_node_count)`` where the count is taken after the
    hinge nodes have been removed.  ``x_merged`` replaces each chain by the
    overlapping member spanning it; if some chain has no such member the input
    areas are returned unchanged.
    """
    x = np.asarray(x, dtype=float)
    xy = gs.xy
    # bars: id -> (a, b, area, member ids)
    bars: dict[int, tuple[int, int, float, tuple[int, ...]]] = {}
    at: dict[int, set[int]] = {}
    for i in np.nonzero(x > tol_area)[0]:
        a, b = gs.members[i].ends
        bars[int(i)] = (a, b, float(x[i]), (int(i),))
        at.setdefault(a, set()).add(int(i))
        at.setdefault(b, set()).add(int(i))
    free = set(int(v) for v in gs.free_nodes)
    next_id = gs.m
    changed = True
    while changed:
        changed = False
        for j in sorted(at):
            if j not in free or len(at[j]) != 2:
                continue
            k1, k2 = sorted(at[j])
            a1, b1, x1, m1 = bars[k1]
            a2, b2, x2, m2 = bars[k2]
            o1 = b1 if a1 == j else a1
            o2 = b2 if a2 == j else a2
            if abs(x1 - x2) > rel_tol * max(x1, x2):
                continue
            if not _collinear_opposite(xy, j, o1, o2):
                continue
            for k in (k1, k2):
                del bars[k]
                for e in (o1, o2, j):
                    at.get(e, set()).discard(k)
            del at[j]
            bars[next_id] = (o1, o2, 0.5 * (x1 + x2), m1 + m2)
            at[o1].add(next_id)
            at[o2].add(next_id)
            next_id += 1
            changed = True
    count = sum(1 for j, ks in at.items() if j in free and ks)
    merged = np.where(x > tol_area, 0.0, x)
    for a, b, area, ids in bars.values():
        if len(ids) == 1:
            merged[ids[0]] = x[ids[0]]
            continue
        i = gs.member_between(a, b)
        if i is None:
            return x.copy(), count
        merged[i] += area
    return merged, count


def active_overlaps(gs: GroundStructure, x: np.ndarray, tol_area: float) -> list[tuple[int, int]]:
    """Overlapping pairs whose members both have area above ``tol_area``."""
    x = np.asarray(x, dtype=float)
    return sorted((a, b) for a, b in gs.overlaps if x[a] > tol_area and x[b] > tol_area)


def split_collinear(gs: GroundStructure, q: np.ndarray, tol_force: float) -> np.ndarray:
    """Replace each cluster of overlapping members by the elementary segments it covers.

    Members whose axial force exceeds ``tol_force`` and that overlap pairwise
    (transitively) lie on one line.  Their endpoints cut the line into
    consecutive segments; each segment receives the summed force of the
    members spanning it.  Equilibrium is preserved.  A cluster is left alone
    when some segment has no member in ``gs``.
    """
    q = np.asarray(q, dtype=float)
    active = np.abs(q) > tol_force
    parent = {int(i): int(i) for i in np.nonzero(active)[0]}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in gs.overlaps:
        if active[a] and active[b]:
            parent[find(a)] = find(b)
    clusters: dict[int, list[int]] = {}
    for i in parent:
        clusters.setdefault(find(i), []).append(i)
    out = q.copy()
    xy = gs.xy
    for ids in clusters.values():
        if len(ids) < 2:
            continue
        a0, b0 = gs.members[ids[0]].ends
        u = xy[b0] - xy[a0]
        ends = sorted({e for i in ids for e in gs.members[i].ends}, key=lambda e: float((xy[e] - xy[a0]) @ u))
        t = {e: float((xy[e] - xy[a0]) @ u) for e in ends}
        spans = [(min(t[e] for e in gs.members[i].ends), max(t[e] for e in gs.members[i].ends), i) for i in ids]
        seg = []
        for s, e in zip(ends, ends[1:]):
            k = gs.member_between(s, e)
            if k is None:
                break
            lo, hi = t[s], t[e]
            seg.append((k, sum(q[i] for a, b, i in spans if a <= lo and hi <= b)))
        else:
            out[ids] = 0.0
            for k, f in seg:
                out[k] += f
    return out
