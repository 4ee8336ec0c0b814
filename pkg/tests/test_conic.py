from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from trusscard.conic import ConeBlock, ConicProgram, in_rsoc, in_soc, rsoc_to_soc, solve
from trusscard.conic.cones import soc_det

TOL = 1e-8


def prog(n, c, A, b, cones):
    A = sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float)))
    return ConicProgram(n, np.asarray(c, dtype=float), A, np.asarray(b, dtype=float), tuple(cones))


def nonneg(*idx):
    return ConeBlock("nonneg", tuple(idx))


def soc(*idx, scale=None):
    return ConeBlock("soc", tuple(idx), scale)


def rsoc(*idx):
    return ConeBlock("rsoc", tuple(idx))


def _planted_lp(seed):
    """LP with a planted complementary primal-dual pair, hence a known optimum."""
    rng = np.random.default_rng(seed)
    m, n = 4, 10
    A = rng.normal(size=(m, n))
    x = np.where(np.arange(n) < m, rng.uniform(0.5, 2.0, n), 0.0)
    s = np.where(np.arange(n) < m, 0.0, rng.uniform(0.5, 2.0, n))
    y = rng.normal(size=m)
    c = A.T @ y + s
    return prog(n, c, A, A @ x, [nonneg(*range(n))]), float(c @ x)


def _planted_soc(seed):
    """One soc block of dimension 5 with boundary solution and complementary dual."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=4)
    u /= np.linalg.norm(u)
    x = np.concatenate([[1.0], u])
    s = np.concatenate([[1.0], -u]) * rng.uniform(0.5, 2.0)
    A = rng.normal(size=(2, 5))
    y = rng.normal(size=2)
    c = A.T @ y + s
    return prog(5, c, A, A @ x, [soc(*range(5))]), float(c @ x)


def _fixtures():
    f = {}
    # linear programs
    f["lp_two_vars"] = (prog(2, [2, 3], [[1, 1]], [1], [nonneg(0, 1)]), 2.0)
    f["lp_vertex"] = (prog(4, [-1, -1, 0, 0], [[1, 2, 1, 0], [3, 1, 0, 1]], [4, 6], [nonneg(0, 1, 2, 3)]), -2.8)
    f["lp_free_var"] = (prog(3, [1, 0, 0], [[1, -1, 0], [0, 1, -1]], [0, 3], [nonneg(2)]), 3.0)
    f["lp_chain"] = (prog(3, [1, 1, 1], [[1, 1, 0], [0, 1, 1]], [2, 3], [nonneg(0, 1, 2)]), 3.0)
    f["lp_zero_objective"] = (prog(2, [0, 0], [[1, 1]], [1], [nonneg(0, 1)]), 0.0)
    for seed in range(3):
        f[f"lp_planted_{seed}"] = _planted_lp(seed)
    # second-order cones: variables ordered (t, x...)
    f["soc_norm_3_4"] = (prog(3, [1, 0, 0], [[0, 1, 0], [0, 0, 1]], [3, 4], [soc(0, 1, 2)]), 5.0)
    f["soc_unit_disc"] = (prog(3, [0, 1, 1], [[1, 0, 0]], [1], [soc(0, 1, 2)]), -math.sqrt(2))
    f["soc_fixed_leg"] = (prog(3, [0, -1, 0], [[1, 0, 0], [0, 0, 1]], [1, 0.6], [soc(0, 1, 2)]), -0.8)
    # distance from a = (1,2,3) to the plane sum(x) = 0: vars (t, d1..d3, x1..x3), d = x - a
    A = np.zeros((4, 7))
    A[:3, 1:4] = np.eye(3)
    A[:3, 4:7] = -np.eye(3)
    A[3, 4:7] = 1.0
    f["soc_plane_distance"] = (prog(7, [1, 0, 0, 0, 0, 0, 0], A, [-1, -2, -3, 0], [soc(0, 1, 2, 3)]),
                               2.0 * math.sqrt(3))
    f["soc_dim5_linear"] = (prog(5, [0, 1, 2, 2, 4], [[1, 0, 0, 0, 0]], [1], [soc(0, 1, 2, 3, 4)]), -5.0)
    f["soc_with_bound"] = (prog(4, [0, -1, 0, 0], [[1, 0, 0, 0], [0, 1, 0, 1]], [2, 1],
                                [soc(0, 1, 2), nonneg(3)]), -1.0)
    f["soc_scaled_block"] = (prog(3, [1, 0, 0], [[0, 1, 0], [0, 0, 1]], [3, 4], [soc(0, 1, 2, scale=(2, 1, 1))]), 2.5)
    for seed in range(3):
        f[f"soc_planted_{seed}"] = _planted_soc(seed)
    # rotated cones: blocks ordered (x..., y, z) meaning x.x <= y z
    f["rsoc_fixed_z"] = (prog(3, [0, 1, 0], [[1, 0, 0], [0, 0, 1]], [3, 2], [rsoc(0, 1, 2)]), 4.5)
    f["rsoc_sum"] = (prog(3, [0, 1, 1], [[1, 0, 0]], [2], [rsoc(0, 1, 2)]), 4.0)
    f["rsoc_single_bar"] = (prog(4, [0, 1, 0, 0], [[1, 0, 0, 0], [0, 0, 1, 1]], [1, 2],
                                 [rsoc(0, 1, 2), nonneg(3)]), 0.5)
    # two bars: min w1 + w2, q = (1, 2), x1 + x2 = 3 -> (|q1| + |q2|)^2 / 3
    f["rsoc_two_bars"] = (prog(6, [0, 1, 0, 0, 1, 0], [[1, 0, 0, 0, 0, 0], [0, 0, 0, 1, 0, 0], [0, 0, 1, 0, 0, 1]],
                               [1, 2, 3], [rsoc(0, 1, 2), rsoc(3, 4, 5)]), 3.0)
    f["rsoc_dim5"] = (prog(5, [0, 0, 0, 1, 0], [[1, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0], [0, 0, 0, 0, 1]],
                           [1, 2, 2, 1], [rsoc(0, 1, 2, 3, 4)]), 9.0)
    f["rsoc_am_gm"] = (prog(3, [0, 1, 1], [[1, 0, 0]], [1], [rsoc(0, 1, 2)]), 2.0)
    f["rsoc_geo_mean"] = (prog(3, [-1, 0, 0], [[0, 1, 1]], [2], [rsoc(0, 1, 2)]), -1.0)
    return f


FIXTURES = _fixtures()


def test_fixture_count():
    assert len(FIXTURES) >= 20


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_known_optimum(name):
    p, expected = FIXTURES[name]
    sol = solve(p, tol=TOL)
    assert sol.status == "optimal"
    assert abs(sol.primal_objective - expected) <= TOL * max(1.0, abs(expected))
    assert sol.primal_residual <= TOL
    assert sol.dual_residual <= TOL
    assert sol.duality_gap <= TOL


@pytest.mark.parametrize("name", ["soc_norm_3_4", "rsoc_two_bars", "lp_vertex"])
def test_cone_membership_of_solution(name):
    p, _ = FIXTURES[name]
    sol = solve(p)
    for blk in p.cones:
        v = sol.x[list(blk.index)] * blk.coefficients()
        tol = TOL * max(1.0, float(np.linalg.norm(v)))
        if blk.kind == "nonneg":
            assert v.min() >= -tol
        elif blk.kind == "soc":
            assert in_soc(v, tol)
        else:
            assert in_rsoc(v, tol)


class TestCertificates:
    def test_primal_infeasible(self):
        p = prog(2, [1, 1], [[1, 1]], [-1], [nonneg(0, 1)])
        assert solve(p).status == "infeasible"

    def test_soc_infeasible(self):
        # t = 1 with x = (3, 4) cannot satisfy ||x|| <= t
        p = prog(3, [0, 0, 0], [[1, 0, 0], [0, 1, 0], [0, 0, 1]], [1, 3, 4], [soc(0, 1, 2)])
        assert solve(p).status == "infeasible"

    def test_unbounded(self):
        p = prog(2, [-1, 0], [[1, -1]], [0], [nonneg(0, 1)])
        assert solve(p).status == "unbounded"


class TestValidation:
    def test_overlapping_blocks_rejected(self):
        with pytest.raises(ValueError):
            prog(3, [0, 0, 0], [[1, 0, 0]], [1], [nonneg(0, 1), soc(1, 2)])

    def test_small_rsoc_rejected(self):
        with pytest.raises(ValueError):
            prog(2, [0, 0], [[1, 0]], [1], [rsoc(0, 1)])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            prog(2, [0, 0, 0], [[1, 0]], [1], [])


class TestRsocMapping:
    def test_thousand_samples(self):
        rng = np.random.default_rng(7)
        agree = 0
        for _ in range(1000):
            k = int(rng.integers(1, 6))
            u = rng.normal(size=k + 2) * rng.choice([0.1, 1.0, 10.0])
            R = rsoc_to_soc(k)
            a = in_rsoc(u)
            b = in_soc(R @ u)
            agree += a == b
        assert agree == 1000

    def test_boundary_points_map_to_boundary(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(size=3)
            y = rng.uniform(0.1, 5)
            u = np.concatenate([x, [y, x @ x / y]])
            w = rsoc_to_soc(3) @ u
            assert w[0] == pytest.approx(np.linalg.norm(w[1:]), rel=1e-12)

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            rsoc_to_soc(0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=6))
def test_soc_det_matches_definition(v):
    v = np.asarray(v)
    got = soc_det(v[None, :])[0]
    want = v[0] ** 2 - v[1:] @ v[1:]
    assert got == pytest.approx(want, rel=1e-9, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_random_feasible_lp_certified(seed):
    p, expected = _planted_lp(seed)
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.primal_objective == pytest.approx(expected, rel=1e-7, abs=1e-7)
