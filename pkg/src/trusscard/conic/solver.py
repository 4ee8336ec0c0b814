"""Primal-dual interior-point method for linear/second-order cone programs.

Homogeneous self-dual embedding with Nesterov-Todd scaling and a Mehrotra
predictor-corrector, in the spirit of ECOS.  Each iteration factors one
quasi-definite KKT matrix with SuperLU (no pivoting, symmetric ordering) and
polishes the solves by iterative refinement against the unregularized matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeLayout, NTScaling
from .program import ConicProgram, ConicSolution, StandardForm, to_standard_form

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 150
    static_reg: float = 1e-10
    refine_steps: int = 6
    step_fraction: float = 0.99
    equilibrate: bool = True
    ruiz_iters: int = 15
    # iterates whose residuals reach this are accepted on stalls
    reduced_tol: float = 1e-5


class KKTError(RuntimeError):
    pass


def _ruiz(sf: StandardForm, iters: int):
    """Ruiz equilibration of ``[A; G]``; rows of one SOC block share a scale."""
    n = sf.A.shape[1]
    p = sf.A.shape[0]
    M = sp.vstack([sf.A, sf.G]).tocsr()
    D = np.ones(n)
    E = np.ones(M.shape[0])
    layout = sf.layout
    Mk = M.copy()
    for _ in range(iters):
        absM = abs(Mk)
        cn = np.asarray(absM.max(axis=0).todense()).ravel()
        rn = np.asarray(absM.max(axis=1).todense()).ravel()
        cn[cn == 0] = 1.0
        rn[rn == 0] = 1.0
        for g in layout.groups:
            seg = rn[p + g.offset:p + g.stop].reshape(g.count, g.dim)
            seg[:] = seg.max(axis=1, keepdims=True)
        dc = 1.0 / np.sqrt(cn)
        dr = 1.0 / np.sqrt(rn)
        D *= dc
        E *= dr
        Mk = sp.diags(dr) @ Mk @ sp.diags(dc)
        if max(abs(1 - cn).max(initial=0), abs(1 - rn).max(initial=0)) < 1e-2:
            break
    Mk = Mk.tocsr()
    return D, E[:p], E[p:], Mk[:p].tocsr(), Mk[p:].tocsr()


class _KKT:
    """Assembles and factors ``[[dI, A', G'], [A, -dI, 0], [G, 0, -W^2 - dI]]``."""

    def __init__(self, A: sp.csr_matrix, G: sp.csr_matrix, layout: ConeLayout, reg: float):
        self.n = A.shape[1]
        self.p = A.shape[0]
        self.m = G.shape[0]
        self.layout = layout
        self.reg = reg
        n, p, m = self.n, self.p, self.m
        N = n + p + m
        Ac = A.tocoo()
        Gc = G.tocoo()
        # static entries: off-diagonal A, G blocks (both triangles)
        sr = np.concatenate([Ac.row + n, Ac.col, Gc.row + n + p, Gc.col])
        sc = np.concatenate([Ac.col, Ac.row + n, Gc.col, Gc.row + n + p])
        sv = np.concatenate([Ac.data, Ac.data, Gc.data, Gc.data])
        # diagonal entries (always present)
        diag = np.arange(N)
        # W^2 blocks
        br, bc = [], []
        for g in layout.groups:
            base = n + p + g.offset + np.arange(g.count)[:, None, None] * g.dim
            ii = np.arange(g.dim)
            shape = (g.count, g.dim, g.dim)
            br.append(np.broadcast_to(base + ii[None, :, None], shape).ravel())
            bc.append(np.broadcast_to(base + ii[None, None, :], shape).ravel())
        rows = np.concatenate([sr, diag] + br).astype(np.int64)
        cols = np.concatenate([sc, diag] + bc).astype(np.int64)
        self.static_vals = sv
        self.N = N
        # fixed CSC pattern; COO entries (some repeated on block diagonals) scatter into it
        pat = sp.csc_matrix((np.ones(rows.size), (rows, cols)), shape=(N, N))
        pat.sum_duplicates()
        self.indptr = pat.indptr
        self.indices = pat.indices
        slot_key = np.repeat(np.arange(N, dtype=np.int64), np.diff(pat.indptr)) * N + pat.indices
        self.slot = np.searchsorted(slot_key, cols * N + rows)
        self.nnz = pat.indices.size
        self.lu = None
        self.dsign = np.concatenate([np.ones(n), -np.ones(p), -np.ones(m)])

    def factor(self, w2_lp: np.ndarray, w2_blocks: list[np.ndarray], reg: float | None = None):
        n, p = self.n, self.p
        reg = self.reg if reg is None else reg
        diag = np.zeros(self.N)
        diag[:n] = reg
        diag[n:n + p] = -reg
        diag[n + p:] = -reg
        diag[n + p:n + p + self.layout.n_lp] -= w2_lp
        vals = np.concatenate([self.static_vals, diag] + [-b.ravel() for b in w2_blocks])
        data = np.zeros(self.nnz)
        np.add.at(data, self.slot, vals)
        K = sp.csc_matrix((data, self.indices, self.indptr), shape=(self.N, self.N))
        self.K = K
        self.reg_used = reg
        try:
            self.lu = spla.splu(
                K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise KKTError(str(exc)) from exc
        if not np.all(np.isfinite(self.lu.U.diagonal())):
            raise KKTError("non-finite pivot")

    def solve(self, rhs: np.ndarray, steps: int) -> np.ndarray:
        x = self.lu.solve(rhs)
        # refine against the matrix without static regularization; refinement
        # can diverge when reg * ||K^-1|| > 1, so keep the best iterate
        stop = 1e-14 * (1 + np.linalg.norm(rhs, np.inf))
        r = rhs - (self.K @ x - self.reg_used * self.dsign * x)
        rn = np.linalg.norm(r, np.inf)
        for _ in range(steps):
            if rn <= stop:
                break
            xn = x + self.lu.solve(r)
            r_new = rhs - (self.K @ xn - self.reg_used * self.dsign * xn)
            rn_new = np.linalg.norm(r_new, np.inf)
            if not rn_new < 0.9 * rn:
                if rn_new < rn:
                    x, rn = xn, rn_new
                break
            x, r, rn = xn, r_new, rn_new
        return x


def solve(program: ConicProgram, tol: float = 1e-8, options: SolverOptions | None = None) -> ConicSolution:
    """Solve a conic program; see :class:`ConicSolution` for the residual contract."""
    if not isinstance(program, ConicProgram):
        raise TypeError("solve() expects a ConicProgram")
    if not tol > 0:
        raise ValueError("tol must be positive")
    opts = options or SolverOptions()
    opts = SolverOptions(**{**opts.__dict__, "tol": tol})
    sf = to_standard_form(program)
    return _Hsde(sf, opts).run(program)


class _Hsde:
    def __init__(self, sf: StandardForm, opts: SolverOptions):
        self.sf = sf
        self.opts = opts
        n = sf.A.shape[1]
        if opts.equilibrate and (sf.A.nnz + sf.G.nnz) > 0:
            D, EA, EG, As, Gs = _ruiz(sf, opts.ruiz_iters)
        else:
            D, EA, EG = np.ones(n), np.ones(sf.A.shape[0]), np.ones(sf.G.shape[0])
            As, Gs = sf.A.tocsr(), sf.G.tocsr()
        self.D, self.EA, self.EG = D, EA, EG
        c = D * sf.c
        self.cscale = 1.0 / max(1.0, np.abs(c).max(initial=0.0))
        self.c = c * self.cscale
        self.A, self.G = As, Gs
        self.b = EA * sf.b
        self.h = EG * sf.h
        self.layout = sf.layout

    # -- residuals measured on the original data ------------------------------------
    def _unscale(self, x, y, s, z, tau):
        x_o = self.D * x / tau
        y_o = self.EA * y / (tau * self.cscale)
        z_o = self.EG * z / (tau * self.cscale)
        s_o = s / (self.EG * tau)
        return x_o, y_o, s_o, z_o

    def _metrics(self, x, y, s, z, tau):
        sf = self.sf
        x_o, y_o, s_o, z_o = self._unscale(x, y, s, z, tau)
        # residuals relative to the size of the data and of the iterate
        Ax, Gx = sf.A @ x_o, sf.G @ x_o
        Aty, Gtz = sf.A.T @ y_o, sf.G.T @ z_o
        nrm = np.linalg.norm
        p_eq = nrm(Ax - sf.b) / max(1.0, nrm(sf.b), nrm(Ax)) if sf.b.size else 0.0
        p_cone = nrm(Gx + s_o - sf.h) / max(1.0, nrm(sf.h), nrm(Gx), nrm(s_o)) if sf.h.size else 0.0
        pres = max(p_eq, p_cone)
        dres = nrm(Aty + Gtz + sf.c) / max(1.0, nrm(sf.c), nrm(Aty), nrm(Gtz))
        pcost = float(sf.c @ x_o)
        dcost = float(-(sf.b @ y_o) - (sf.h @ z_o))
        comp = float(s_o @ z_o)
        gap = max(abs(pcost - dcost), abs(comp)) / max(1.0, min(abs(pcost), abs(dcost)))
        return pres, dres, gap, pcost, dcost, (x_o, y_o, s_o, z_o)

    def _init_point(self, kkt: _KKT):
        n, p, m = kkt.n, kkt.p, kkt.m
        L = self.layout
        kkt.factor(np.ones(L.n_lp), [np.broadcast_to(np.eye(g.dim), (g.count, g.dim, g.dim)) for g in L.groups])
        sol = kkt.solve(np.concatenate([np.zeros(n), self.b, self.h]), self.opts.refine_steps)
        x = sol[:n]
        s = -sol[n + p:]
        sol = kkt.solve(np.concatenate([-self.c, np.zeros(p), np.zeros(m)]), self.opts.refine_steps)
        y = sol[n:n + p]
        z = sol[n + p:]
        e = L.identity()
        if m:
            a = L.max_shift(s)
            if a >= -1e-8:
                s = s + (1.0 + a) * e
            a = L.max_shift(z)
            if a >= -1e-8:
                z = z + (1.0 + a) * e
        return x, y, s, z

    def run(self, program: ConicProgram) -> ConicSolution:
        # a collapsing iterate can produce nan/inf; the step-length test turns that into a stall
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._run(program)

    def _run(self, program: ConicProgram) -> ConicSolution:
        opts = self.opts
        L = self.layout
        A, G, b, h, c = self.A, self.G, self.b, self.h, self.c
        n, p, m = A.shape[1], A.shape[0], G.shape[0]
        nu = L.degree
        kkt = _KKT(A, G, L, opts.static_reg)
        e = L.identity()
        try:
            x, y, s, z = self._init_point(kkt)
        except KKTError:
            return self._finish(program, "numerical_limit", None, 0, {"reason": "init factorization"})
        tau = kappa = 1.0
        best = None
        stall = 0
        status = "numerical_limit"
        it = 0
        info: dict = {}
        for it in range(opts.max_iter + 1):
            rx = A.T @ y + G.T @ z + c * tau
            ry = A @ x - b * tau
            rz = G @ x + s - h * tau
            rt = c @ x + b @ y + h @ z + kappa
            mu = (s @ z + tau * kappa) / (nu + 1)

            pres, dres, gap, pcost, dcost, vals = self._metrics(x, y, s, z, tau)
            cand = (max(pres, dres, gap), it, (x.copy(), y.copy(), s.copy(), z.copy(), tau))
            if best is None or cand[0] < best[0]:
                best = cand
            if pres <= opts.tol and dres <= opts.tol and gap <= opts.tol:
                status = "optimal"
                break
            # infeasibility certificates (scaled data; unit-free ratios)
            byhz = b @ y + h @ z
            if byhz < 0:
                ratio = np.linalg.norm(A.T @ y + G.T @ z) / -byhz
                if ratio <= opts.tol and tau < kappa:
                    status = "infeasible"
                    info["certificate"] = "farkas"
                    break
            cx = c @ x
            if cx < 0:
                ratio = max(np.linalg.norm(A @ x), np.linalg.norm(G @ x + s)) / -cx
                if ratio <= opts.tol and tau < kappa:
                    status = "unbounded"
                    info["certificate"] = "ray"
                    break
            if it == opts.max_iter:
                break

            W = NTScaling(L, s, z)
            lam = W.lam
            w2_lp, w2_blocks = W.squared_blocks()
            reg = opts.static_reg
            for _attempt in range(4):
                try:
                    kkt.factor(w2_lp, w2_blocks, reg)
                    break
                except KKTError:
                    reg *= 100.0
            else:
                info["reason"] = "kkt factorization failed"
                break

            sol1 = kkt.solve(np.concatenate([-c, b, h]), opts.refine_steps)
            x1, y1, z1 = sol1[:n], sol1[n:n + p], sol1[n + p:]
            den = c @ x1 + b @ y1 + h @ z1 - kappa / tau

            def direction(ds, dk, sig):
                d1 = -(1.0 - sig) * rx
                d2 = -(1.0 - sig) * ry
                d3 = -(1.0 - sig) * rz - W.apply(L.jdiv(lam, ds))
                d4 = -(1.0 - sig) * rt - dk / tau
                sol2 = kkt.solve(np.concatenate([d1, d2, d3]), opts.refine_steps)
                x2, y2, z2 = sol2[:n], sol2[n:n + p], sol2[n + p:]
                dtau = (d4 - (c @ x2 + b @ y2 + h @ z2)) / den
                dx = x2 + dtau * x1
                dy = y2 + dtau * y1
                dz = z2 + dtau * z1
                dsv = W.apply(L.jdiv(lam, ds) - W.apply(dz))
                dkap = (dk - kappa * dtau) / tau
                return dx, dy, dsv, dz, dtau, dkap

            def step_len(dsv, dz, dtau, dkap):
                a = min(L.max_step(s, dsv), L.max_step(z, dz))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkap < 0:
                    a = min(a, -kappa / dkap)
                return a

            # predictor
            ds_a = -L.jprod(lam, lam)
            dk_a = -kappa * tau
            dxa, dya, dsa, dza, dta, dka = direction(ds_a, dk_a, 0.0)
            alpha_a = min(1.0, step_len(dsa, dza, dta, dka))
            sigma = float(np.clip((1.0 - alpha_a) ** 3, 0.0, 1.0))
            # corrector
            ds_c = ds_a - L.jprod(W.apply_inv(dsa), W.apply(dza)) + sigma * mu * e
            dk_c = dk_a - dta * dka + sigma * mu
            dx, dy, dsv, dz, dtau, dkap = direction(ds_c, dk_c, sigma)
            alpha = min(1.0, opts.step_fraction * step_len(dsv, dz, dtau, dkap))
            if not np.isfinite(alpha) or alpha < 1e-10:
                stall += 1
                if stall >= 3:
                    info["reason"] = "step length collapsed"
                    break
                alpha = 0.0 if not np.isfinite(alpha) else alpha
            else:
                stall = 0

            # roundoff in the step length test can land on the boundary; back off
            for _ in range(20):
                s_new = s + alpha * dsv
                z_new = z + alpha * dz
                tau_new = tau + alpha * dtau
                kap_new = kappa + alpha * dkap
                if L.max_shift(s_new) < 0 and L.max_shift(z_new) < 0 and tau_new > 0 and kap_new > 0:
                    break
                alpha *= 0.5
            else:
                info["reason"] = "left the cone"
                break
            x = x + alpha * dx
            y = y + alpha * dy
            s, z, tau, kappa = s_new, z_new, tau_new, kap_new
            log.debug("it=%d pres=%.2e dres=%.2e gap=%.2e alpha=%.3f", it, pres, dres, gap, alpha)

        if status == "optimal" or status in ("infeasible", "unbounded"):
            return self._finish(program, status, (x, y, s, z, tau), it, info)
        # fall back to the best iterate seen
        return self._finish(program, "numerical_limit", best[2], best[1], info)

    def _finish(self, program, status, state, it, info) -> ConicSolution:
        sf = self.sf
        n = sf.A.shape[1]
        if state is None:
            nan = np.full(n, np.nan)
            return ConicSolution(status, nan, np.full(sf.A.shape[0], np.nan), [], np.nan, np.nan,
                                 np.inf, np.inf, np.inf, it, info)
        x, y, s, z, tau = state
        if status in ("infeasible", "unbounded"):
            # report the certificate itself, normalized
            x_o = self.D * x
            y_o = self.EA * y
            z_o = self.EG * z
            if status == "infeasible":
                scale = -(self.b @ y + self.h @ z)
                y_o, z_o = y_o / scale, z_o / scale
                cert_res = np.linalg.norm(sf.A.T @ y_o + sf.G.T @ z_o)
                info["certificate_residual"] = float(cert_res)
                pobj, dobj = np.inf, np.inf
            else:
                scale = -(self.c @ x) / self.cscale
                x_o = x_o / scale
                info["certificate_residual"] = float(np.linalg.norm(sf.A @ x_o))
                pobj, dobj = -np.inf, -np.inf
            duals = [z_o[r] if mp is None else mp.T @ z_o[r] for r, mp in zip(sf.block_rows, sf.block_maps)]
            return ConicSolution(status, x_o, y_o, duals, pobj, dobj, np.nan, np.nan, np.nan, it, info)
        pres, dres, gap, pcost, dcost, (x_o, y_o, s_o, z_o) = self._metrics(x, y, s, z, tau)
        if status == "numerical_limit":
            info.setdefault("reason", "iteration limit")
            info["reduced_accuracy"] = bool(max(pres, dres, gap) <= self.opts.reduced_tol)
        duals = [z_o[r] if mp is None else mp.T @ z_o[r] for r, mp in zip(sf.block_rows, sf.block_maps)]
        # equality multipliers reported with the sign of ``min c'x + y'(Ax - b)``
        return ConicSolution(status, x_o, y_o, duals, pcost, dcost, pres, dres, gap, it, info)
