from __future__ import annotations

import numpy as np
import pytest

from trusscard.ground import GroundStructure, Node
from trusscard.models import (
    PAPER_E,
    LoadCase,
    ProblemSpec,
    assemble_stiffness,
    build_min_compliance,
    build_x_update,
    evaluate_compliance,
    fully_stressed_areas,
    paper_instance,
    point_load,
    solve_min_compliance,
)

RHO_UNIT = 1e9   # J/m^4 per unit penalty used by the ADMM driver


def textbook_stiffness(gs: GroundStructure, E: float, x: np.ndarray) -> np.ndarray:
    """Element-by-element 4x4 global-axis stiffness, scattered into the reduced DOFs."""
    K = np.zeros((gs.d, gs.d))
    for mb in gs.members:
        a, b = mb.ends
        (x1, y1), (x2, y2) = gs.nodes[a].coord, gs.nodes[b].coord
        L = np.hypot(x2 - x1, y2 - y1)
        cth, sth = (x2 - x1) / L, (y2 - y1) / L
        k = E * x[mb.id] / L
        T = np.array([[cth * cth, cth * sth], [cth * sth, sth * sth]])
        ke = k * np.block([[T, -T], [-T, T]])
        dofs = [gs.dof_map[a, 0], gs.dof_map[a, 1], gs.dof_map[b, 0], gs.dof_map[b, 1]]
        for r, dr in enumerate(dofs):
            for c, dc in enumerate(dofs):
                if dr >= 0 and dc >= 0:
                    K[dr, dc] += ke[r, c]
    return K


def single_bar(L=2.0):
    nodes = [Node(0, (0.0, 0.0), (True, True)), Node(1, (L, 0.0))]
    return GroundStructure.from_ends(nodes, [(0, 1)])


@pytest.fixture(scope="module")
def spec52():
    return paper_instance(5, 2)


@pytest.fixture(scope="module")
def relax52(spec52):
    tp = build_min_compliance(spec52)
    return tp, tp.solve()


class TestStiffness:
    def test_zero_areas(self, spec52):
        K = assemble_stiffness(spec52.gs, PAPER_E, np.zeros(spec52.gs.m))
        assert K.nnz == 0 or np.abs(K.data).max() == 0

    def test_single_horizontal_bar(self):
        gs = single_bar(2.0)
        K = assemble_stiffness(gs, 200e9, np.array([1e-4])).toarray()
        np.testing.assert_allclose(K, np.diag([200e9 * 1e-4 / 2.0, 0.0]), atol=1e-6)

    def test_textbook_assembly(self, spec52):
        gs = spec52.gs
        x = np.random.default_rng(1).uniform(0, 1e-3, gs.m)
        np.testing.assert_allclose(assemble_stiffness(gs, PAPER_E, x).toarray(),
                                   textbook_stiffness(gs, PAPER_E, x), rtol=1e-12, atol=1e-3)

    def test_symmetric_linear(self, spec52):
        gs = spec52.gs
        rng = np.random.default_rng(2)
        x1, x2 = rng.uniform(0, 1, gs.m), rng.uniform(0, 1, gs.m)
        K1, K2 = assemble_stiffness(gs, 1.0, x1), assemble_stiffness(gs, 1.0, x2)
        K12 = assemble_stiffness(gs, 1.0, 2 * x1 + 3 * x2)
        assert abs(K1 - K1.T).max() <= 1e-14 * abs(K1).max()
        np.testing.assert_allclose(K12.toarray(), (2 * K1 + 3 * K2).toarray(), atol=1e-12)

    def test_negative_area_rejected(self):
        with pytest.raises(ValueError):
            assemble_stiffness(single_bar(), 1.0, np.array([-1.0]))


class TestCompliance:
    def test_single_bar_closed_form(self):
        gs = single_bar(2.0)
        E, A, F = 200e9, 1e-4, 1e5
        assert evaluate_compliance(gs, E, np.array([A]), np.array([F, 0.0])) == pytest.approx(F * F * 2.0 / (E * A))

    def test_unsupported_load(self):
        gs = single_bar()
        assert evaluate_compliance(gs, 1.0, np.array([1.0]), np.array([0.0, 1.0])) == np.inf
        assert evaluate_compliance(gs, 1.0, np.array([0.0]), np.array([1.0, 0.0])) == np.inf

    def test_singular_but_in_range(self):
        # horizontal load on a bar whose free end can still move vertically
        gs = single_bar(1.0)
        assert evaluate_compliance(gs, 2.0, np.array([0.5]), np.array([3.0, 0.0])) == pytest.approx(9.0)


class TestMinCompliance:
    def test_socp_matches_fem(self, spec52, relax52):
        tp, sol = relax52
        x = tp.areas(sol)
        assert sol.status == "optimal"
        assert evaluate_compliance(spec52.gs, spec52.E, x, spec52.p) == pytest.approx(tp.objective(sol), rel=1e-5)

    def test_rsoc_tightness(self, spec52, relax52):
        tp, sol = relax52
        gs = spec52.gs
        x, q, w = tp.areas(sol), tp.forces(sol), tp.energies(sol)
        on = x > 1e-9
        lhs = w[on] * x[on]
        rhs = gs.lengths[on] / spec52.E * q[on] ** 2
        assert np.all(np.abs(lhs - rhs) <= 1e-6 * (1 + lhs))

    def test_volume_tight(self, spec52, relax52):
        tp, sol = relax52
        assert spec52.gs.lengths @ tp.areas(sol) == pytest.approx(spec52.V, rel=1e-6)

    def test_equilibrium(self, spec52, relax52):
        tp, sol = relax52
        r = spec52.gs.B @ tp.forces(sol) - spec52.p
        assert np.linalg.norm(r) <= 1e-6 * np.linalg.norm(spec52.p)

    def test_stressed_areas(self, spec52, relax52):
        tp, sol = relax52
        xs = tp.stressed_areas(sol)
        assert spec52.gs.lengths @ xs == pytest.approx(spec52.V, rel=1e-12)
        assert evaluate_compliance(spec52.gs, spec52.E, xs, spec52.p) == pytest.approx(tp.objective(sol), rel=1e-7)

    def test_explicit_nonneg_same_value(self, spec52, relax52):
        tp, sol = relax52
        tq = build_min_compliance(spec52, explicit_nonneg=True)
        assert tq.objective(tq.solve()) == pytest.approx(tp.objective(sol), rel=1e-7)

    def test_single_member_closed_form(self):
        # pinned top node, loaded bottom node directly below it, two extra free nodes
        nodes = [Node(0, (0.0, 2.0), (True, True)), Node(1, (0.0, 0.0)), Node(2, (1.0, 1.0)), Node(3, (1.0, 0.0))]
        gs = GroundStructure.from_ends(nodes, [(a, b) for a in range(4) for b in range(a + 1, 4)])
        F, E, V = 1e5, 200e9, 1e-3
        spec = ProblemSpec(gs, point_load(gs, 1, (0.0, -F)), E, V)
        _, free_obj, _ = solve_min_compliance(spec)
        design, obj, sol = solve_min_compliance(spec, forced_zero_nodes=[gs.free_index(2), gs.free_index(3)])
        L = 2.0
        assert sol.status == "optimal"
        assert obj == pytest.approx(F * F * L * L / (E * V), rel=1e-7)
        assert obj >= free_obj * (1 - 1e-9)
        assert np.count_nonzero(design.x > 1e-12) == 1

    def test_forcing_loaded_node_is_infeasible(self, spec52):
        j = spec52.gs.free_index(spec52.gs.bottom_right_free_node())
        design, obj, sol = solve_min_compliance(spec52, [j])
        assert design is None and obj == np.inf and sol.status == "infeasible"


class TestXUpdate:
    def test_vanishing_penalty(self, spec52, relax52):
        tp, sol = relax52
        l = spec52.gs.l
        tx = build_x_update(spec52, np.zeros(l), np.zeros(l), 1e-12)
        assert tx.objective(tx.solve()) == pytest.approx(tp.objective(sol), rel=1e-6)

    def test_penalty_zero_at_optimum(self, spec52, relax52):
        tp, sol = relax52
        x_star = tp.areas(sol)
        tx = build_x_update(spec52, spec52.gs.Z @ x_star, np.zeros(spec52.gs.l), RHO_UNIT)
        sx = tx.solve()
        assert tx.objective(sx) == pytest.approx(tp.objective(sol), rel=1e-6)
        assert np.linalg.norm(spec52.gs.Z @ (tx.areas(sx) - x_star)) <= 1e-3 * np.linalg.norm(spec52.gs.Z @ x_star)

    def test_rejects_nonpositive_rho(self, spec52):
        with pytest.raises(ValueError):
            build_x_update(spec52, np.zeros(spec52.gs.l), np.zeros(spec52.gs.l), 0.0)

    @pytest.mark.parametrize("seed", [None, 0])
    def test_against_clarabel(self, spec52, seed):
        cp = pytest.importorskip("cvxpy")
        gs, l = spec52.gs, spec52.gs.l
        if seed is None:
            z, v = np.zeros(l), np.zeros(l)
        else:
            rng = np.random.default_rng(seed)
            z, v = rng.uniform(0, 4e-4, l), rng.normal(0, 1e-4, l)
        rho = RHO_UNIT
        tx = build_x_update(spec52, z, v, rho)
        ours = tx.objective(tx.solve())
        # independent model in mm^2 / kN units, objective in J
        c = gs.lengths
        E_kn_mm2 = spec52.E * 1e-3 * 1e-6          # Pa -> kN/mm^2
        X = cp.Variable(gs.m)
        Q = cp.Variable(gs.m)
        energy = cp.sum(cp.multiply(c * 1e3 / E_kn_mm2, cp.hstack([cp.quad_over_lin(Q[i], X[i]) for i in range(gs.m)])))
        # energy: (kN^2 mm)/(kN/mm^2 * mm^2) = kN mm = J; penalty: J/m^4 * (1e-12 m^4 per mm^4)
        pen = 0.5 * rho * 1e-12 * cp.sum_squares(gs.Z @ X - (z - v) * 1e6)
        cons = [gs.B @ Q == spec52.p * 1e-3, c @ X <= spec52.V * 1e6, X >= 0]
        prob = cp.Problem(cp.Minimize(energy + pen), cons)
        prob.solve(solver="CLARABEL")
        assert prob.status == "optimal"
        assert ours == pytest.approx(prob.value, rel=1e-6)


class TestSpec:
    def test_validation(self, spec52):
        with pytest.raises(ValueError):
            ProblemSpec(spec52.gs, spec52.load, -1.0, spec52.V)
        with pytest.raises(ValueError):
            spec52.with_n(0)
        with pytest.raises(ValueError):
            LoadCase(np.zeros(3))

    def test_instance_data(self, spec52):
        assert spec52.V == pytest.approx(2e-3)
        assert spec52.p.sum() == -1e5
        assert spec52.p[spec52.gs.dof_map[5, 1]] == -1e5

    def test_load_on_support_rejected(self, spec52):
        with pytest.raises(ValueError):
            point_load(spec52.gs, 0, (0.0, -1.0))

    def test_fully_stressed_areas(self):
        gs = single_bar(2.0)
        np.testing.assert_allclose(fully_stressed_areas(gs, np.array([-5.0]), 4.0), [2.0])
        with pytest.raises(ValueError):
            fully_stressed_areas(gs, np.array([0.0]), 1.0)
