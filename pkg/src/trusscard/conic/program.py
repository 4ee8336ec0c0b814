"""Conic program container and its reduction to the solver's standard form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

from .cones import ConeLayout, SocGroup

ConeKind = Literal["nonneg", "soc", "rsoc"]
Status = Literal["optimal", "infeasible", "unbounded", "numerical_limit"]


def rsoc_to_soc(x_dim: int) -> np.ndarray:
    """Matrix taking an rsoc point ``(x, y, z)`` to the soc point ``(y+z, y-z, 2x)``.

    ``x^T x <= y z, y >= 0, z >= 0`` holds iff the image lies in the
    second-order cone of the same dimension ``x_dim + 2``.
    """
    if x_dim < 1:
        raise ValueError(f"x_dim must be >= 1, got {x_dim}")
    q = x_dim + 2
    R = np.zeros((q, q))
    R[0, x_dim] = R[0, x_dim + 1] = 1.0
    R[1, x_dim] = 1.0
    R[1, x_dim + 1] = -1.0
    R[2:, :x_dim] = 2.0 * np.eye(x_dim)
    return R


def in_soc(u: np.ndarray, tol: float = 0.0) -> bool:
    u = np.asarray(u, dtype=float)
    return bool(np.linalg.norm(u[1:]) <= u[0] + tol)


def in_rsoc(u: np.ndarray, tol: float = 0.0) -> bool:
    u = np.asarray(u, dtype=float)
    x, y, z = u[:-2], u[-2], u[-1]
    return bool(y >= -tol and z >= -tol and x @ x <= y * z + tol)


@dataclass(frozen=True)
class ConeBlock:
    """Cone membership of ``scale * program_vars[index]``.

    For ``rsoc`` the block is ordered ``(x..., y, z)`` and encodes
    ``x^T x <= y z``; for ``soc`` it is ``(s0, s1...)`` with ``||s1|| <= s0``.
    """

    kind: ConeKind
    index: tuple[int, ...]
    scale: tuple[float, ...] | None = None

    def coefficients(self) -> np.ndarray:
        if self.scale is None:
            return np.ones(len(self.index))
        return np.asarray(self.scale, dtype=float)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ConicProgram:
    """``min c^T v  s.t.  A v = b`` and each cone block membership.

    Variables not referenced by any cone block are free.
    """

    n_vars: int
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: tuple[ConeBlock, ...]

    def __post_init__(self):
        object.__setattr__(self, "c", _frozen(self.c))
        object.__setattr__(self, "b", _frozen(self.b))
        object.__setattr__(self, "A", sp.csr_matrix(self.A, dtype=float))
        object.__setattr__(self, "cones", tuple(self.cones))
        self.validate()

    def validate(self) -> None:
        n = self.n_vars
        if self.c.shape != (n,):
            raise ValueError(f"objective has shape {self.c.shape}, expected ({n},)")
        if self.A.shape != (self.b.shape[0], n):
            raise ValueError(f"A has shape {self.A.shape}, expected ({self.b.shape[0]}, {n})")
        seen = np.zeros(n, dtype=bool)
        for blk in self.cones:
            idx = np.asarray(blk.index, dtype=int)
            if blk.kind not in ("nonneg", "soc", "rsoc"):
                raise ValueError(f"unknown cone kind {blk.kind!r}")
            if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
                raise ValueError(f"cone block index out of range: {blk.index}")
            if blk.kind == "rsoc" and idx.size < 3:
                raise ValueError("rsoc block needs at least 3 entries")
            if blk.kind == "soc" and idx.size < 2:
                raise ValueError("soc block needs at least 2 entries")
            if blk.scale is not None and len(blk.scale) != idx.size:
                raise ValueError("cone scale length differs from index length")
            if seen[idx].any() or np.unique(idx).size != idx.size:
                raise ValueError("a variable may appear in at most one cone block")
            seen[idx] = True
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.A.data))):
            raise ValueError("program data must be finite")

    def objective(self, v: np.ndarray) -> float:
        return float(self.c @ v)


@dataclass
class ConicSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    cone_duals: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class StandardForm:
    """``min c^T x  s.t.  A x = b,  h - G x in K`` with the rows of ``G``
    ordered by ``layout``.  ``block_rows[k]`` lists the rows of user block ``k``."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    layout: ConeLayout
    block_rows: list[np.ndarray]
    block_maps: list[np.ndarray | None]


def to_standard_form(prog: ConicProgram) -> StandardForm:
    lp_blocks: list[int] = []
    soc_blocks: dict[int, list[int]] = {}
    for k, blk in enumerate(prog.cones):
        if blk.kind == "nonneg":
            lp_blocks.append(k)
        else:
            soc_blocks.setdefault(len(blk.index), []).append(k)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    block_rows: list[np.ndarray] = [np.empty(0, dtype=int)] * len(prog.cones)
    block_maps: list[np.ndarray | None] = [None] * len(prog.cones)

    r0 = 0
    for k in lp_blocks:
        blk = prog.cones[k]
        n = len(blk.index)
        rr = np.arange(r0, r0 + n)
        rows.append(rr)
        cols.append(np.asarray(blk.index))
        vals.append(-blk.coefficients())
        block_rows[k] = rr
        r0 += n
    layout = ConeLayout(n_lp=r0)

    for dim in sorted(soc_blocks):
        ks = soc_blocks[dim]
        layout.groups.append(SocGroup(offset=r0, count=len(ks), dim=dim))
        R = rsoc_to_soc(dim - 2) if dim >= 3 else None
        for k in ks:
            blk = prog.cones[k]
            idx = np.asarray(blk.index)
            coef = blk.coefficients()
            rr = np.arange(r0, r0 + dim)
            if blk.kind == "soc":
                rows.append(rr)
                cols.append(idx)
                vals.append(-coef)
            else:
                M = R * coef[None, :]
                nz_r, nz_c = np.nonzero(M)
                rows.append(rr[nz_r])
                cols.append(idx[nz_c])
                vals.append(-M[nz_r, nz_c])
                block_maps[k] = R
            block_rows[k] = rr
            r0 += dim

    G = sp.csr_matrix(
        (np.concatenate(vals) if vals else np.empty(0),
         (np.concatenate(rows) if rows else np.empty(0, dtype=int),
          np.concatenate(cols) if cols else np.empty(0, dtype=int))),
        shape=(r0, prog.n_vars),
    )
    return StandardForm(
        c=np.array(prog.c), A=prog.A.copy(), b=np.array(prog.b), G=G,
        h=np.zeros(r0), layout=layout, block_rows=block_rows, block_maps=block_maps,
    )
