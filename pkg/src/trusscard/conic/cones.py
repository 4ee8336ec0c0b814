"""Vectorized operations on products of nonnegative orthants and second-order cones.

Cone rows are laid out as one nonnegative block followed by groups of
second-order cones; all cones in a group share a dimension and are stored
contiguously so that a group can be viewed as a ``(k, q)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def soc_det(v: np.ndarray) -> np.ndarray:
    """Row-wise ``v0^2 - ||v1||^2`` evaluated as ``(v0 - ||v1||)(v0 + ||v1||)``."""
    nrm = np.linalg.norm(v[:, 1:], axis=1)
    return (v[:, 0] - nrm) * (v[:, 0] + nrm)


@dataclass
class SocGroup:
    offset: int
    count: int
    dim: int

    @property
    def stop(self) -> int:
        return self.offset + self.count * self.dim

    def view(self, u: np.ndarray) -> np.ndarray:
        return u[self.offset:self.stop].reshape(self.count, self.dim)


@dataclass
class ConeLayout:
    n_lp: int
    groups: list[SocGroup] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.groups[-1].stop if self.groups else self.n_lp

    @property
    def degree(self) -> int:
        return self.n_lp + sum(g.count for g in self.groups)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[:self.n_lp] = 1.0
        for g in self.groups:
            g.view(e)[:, 0] = 1.0
        return e

    def max_shift(self, u: np.ndarray) -> float:
        """Smallest alpha with ``u + alpha * e`` in the cone."""
        alpha = -np.inf
        if self.n_lp:
            alpha = max(alpha, float(-u[:self.n_lp].min()))
        for g in self.groups:
            v = g.view(u)
            alpha = max(alpha, float(np.max(np.linalg.norm(v[:, 1:], axis=1) - v[:, 0])))
        return alpha

    def jprod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product ``u o v``."""
        out = np.empty_like(u)
        out[:self.n_lp] = u[:self.n_lp] * v[:self.n_lp]
        for g in self.groups:
            a, b, o = g.view(u), g.view(v), g.view(out)
            o[:, 0] = np.einsum("ij,ij->i", a, b)
            o[:, 1:] = a[:, :1] * b[:, 1:] + b[:, :1] * a[:, 1:]
        return out

    def jdiv(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve ``lam o u = d`` for ``u``."""
        out = np.empty_like(d)
        out[:self.n_lp] = d[:self.n_lp] / lam[:self.n_lp]
        for g in self.groups:
            l, dd, o = g.view(lam), g.view(d), g.view(out)
            det = soc_det(l)
            l1d1 = np.einsum("ij,ij->i", l[:, 1:], dd[:, 1:])
            u0 = (l[:, 0] * dd[:, 0] - l1d1) / det
            o[:, 0] = u0
            o[:, 1:] = (dd[:, 1:] - u0[:, None] * l[:, 1:]) / l[:, :1]
        return out

    def max_step(self, u: np.ndarray, d: np.ndarray) -> float:
        """Largest ``alpha`` (capped at ``inf``) with ``u + alpha * d`` in the cone.

        ``u`` must be interior.
        """
        inv = 0.0
        if self.n_lp:
            r = -d[:self.n_lp] / u[:self.n_lp]
            inv = max(inv, float(r.max(initial=0.0)))
        for g in self.groups:
            a, b = g.view(u), g.view(d)
            sq = np.sqrt(soc_det(a))
            un = a / sq[:, None]
            dn = b / sq[:, None]
            d0 = un[:, 0] * dn[:, 0] - np.einsum("ij,ij->i", un[:, 1:], dn[:, 1:])
            jd = dn[:, 0] ** 2 - np.einsum("ij,ij->i", dn[:, 1:], dn[:, 1:])
            nrm = np.sqrt(np.maximum(d0 * d0 - jd, 0.0))
            inv = max(inv, float(np.max(nrm - d0, initial=0.0)))
        return np.inf if inv <= 0.0 else 1.0 / inv


class NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lam``."""

    def __init__(self, layout: ConeLayout, s: np.ndarray, z: np.ndarray):
        self.layout = layout
        n = layout.n_lp
        self.d_lp = np.sqrt(s[:n] / z[:n])
        self.beta: list[np.ndarray] = []
        self.wbar: list[np.ndarray] = []
        for g in layout.groups:
            sv, zv = g.view(s), g.view(z)
            sjs = soc_det(sv)
            zjz = soc_det(zv)
            sn = sv / np.sqrt(sjs)[:, None]
            zn = zv / np.sqrt(zjz)[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.einsum("ij,ij->i", sn, zn)))
            w = sn.copy()
            w[:, 0] += zn[:, 0]
            w[:, 1:] -= zn[:, 1:]
            w /= (2.0 * gamma)[:, None]
            self.beta.append((sjs / zjz) ** 0.25)
            self.wbar.append(w)
        self.lam = self.apply(z)

    def _apply(self, u: np.ndarray, inverse: bool) -> np.ndarray:
        out = np.empty_like(u)
        n = self.layout.n_lp
        out[:n] = u[:n] / self.d_lp if inverse else u[:n] * self.d_lp
        sign = -1.0 if inverse else 1.0
        for g, beta, w in zip(self.layout.groups, self.beta, self.wbar):
            uv, o = g.view(u), g.view(out)
            w1u1 = np.einsum("ij,ij->i", w[:, 1:], uv[:, 1:])
            o[:, 0] = w[:, 0] * uv[:, 0] + sign * w1u1
            coef = sign * uv[:, 0] + w1u1 / (1.0 + w[:, 0])
            o[:, 1:] = uv[:, 1:] + coef[:, None] * w[:, 1:]
            scale = (1.0 / beta) if inverse else beta
            o *= scale[:, None]
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self._apply(u, inverse=False)

    def apply_inv(self, u: np.ndarray) -> np.ndarray:
        return self._apply(u, inverse=True)

    def squared_blocks(self) -> tuple[np.ndarray, list[np.ndarray]]:
        """Diagonal of ``W^2`` on the orthant and dense ``W^2`` per SOC block."""
        blocks = []
        for beta, w in zip(self.beta, self.wbar):
            k, q = w.shape
            mat = np.empty((k, q, q))
            mat[:, 0, 0] = w[:, 0]
            mat[:, 0, 1:] = w[:, 1:]
            mat[:, 1:, 0] = w[:, 1:]
            outer = np.einsum("ki,kj->kij", w[:, 1:], w[:, 1:]) / (1.0 + w[:, 0])[:, None, None]
            mat[:, 1:, 1:] = outer + np.eye(q - 1)[None, :, :]
            mat *= beta[:, None, None]
            blocks.append(np.matmul(mat, mat))
        return self.d_lp ** 2, blocks
