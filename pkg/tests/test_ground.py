from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trusscard.ground import (
    GroundStructure,
    Node,
    TrussDesign,
    active_overlaps,
    detect_overlaps,
    generate_grid,
    generate_members,
    hinge_cancel,
    incidence,
    split_collinear,
)


def brute_overlaps(gs: GroundStructure) -> set[tuple[int, int]]:
    """Pairwise check in exact integer arithmetic (grid coordinates are integers)."""
    xy = [tuple(int(round(c)) for c in nd.coord) for nd in gs.nodes]
    out = set()
    for i, j in itertools.combinations(range(gs.m), 2):
        (a, b), (c, d) = gs.members[i].ends, gs.members[j].ends
        ax, ay = xy[a]
        ux, uy = xy[b][0] - ax, xy[b][1] - ay
        cross = lambda p: ux * (xy[p][1] - ay) - uy * (xy[p][0] - ax)
        if cross(c) or cross(d):
            continue
        dot = lambda p: ux * (xy[p][0] - ax) + uy * (xy[p][1] - ay)
        lo, hi = sorted((dot(c), dot(d)))
        if min(hi, ux * ux + uy * uy) - max(lo, 0) > 0:
            out.add((i, j))
    return out


def brute_member_count(nx, ny, lmax):
    pts = [(c, r) for r in range(ny + 1) for c in range(nx + 1)]
    return sum(1 for p, q in itertools.combinations(pts, 2) if math.dist(p, q) <= lmax + 1e-9)


class TestGrid:
    @pytest.mark.parametrize("nx,ny,nodes,l,d", [(5, 2, 18, 15, 30), (8, 4, 45, 40, 80), (1, 1, 4, 2, 4)])
    def test_counts(self, nx, ny, nodes, l, d):
        gs = GroundStructure.grid(nx, ny)
        assert len(gs.nodes) == nodes
        assert gs.l == l
        assert gs.d == d == 2 * gs.l

    def test_left_column_pinned(self):
        nodes = generate_grid(3, 2)
        for nd in nodes:
            assert nd.fixed == ((True, True) if nd.coord[0] == 0 else (False, False))

    def test_row_major_order(self):
        nodes = generate_grid(2, 1)
        assert [nd.coord for nd in nodes] == [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]

    @pytest.mark.parametrize("args", [(0, 1), (1, 0), (1.5, 1), (2, 2, -1.0)])
    def test_bad_dimensions(self, args):
        with pytest.raises(ValueError):
            generate_grid(*args)


class TestMembers:
    @pytest.mark.parametrize("nx,ny,m", [(5, 2, 147), (8, 2, 273), (5, 3, 264), (9, 6, 1489)])
    def test_reference_counts(self, nx, ny, m):
        assert GroundStructure.grid(nx, ny, 5.0).m == m

    @pytest.mark.parametrize("nx,ny,lmax", [(3, 2, 2.5), (4, 4, 3.0), (6, 3, 5.0), (2, 2, 100.0)])
    def test_brute_force_count(self, nx, ny, lmax):
        assert GroundStructure.grid(nx, ny, lmax).m == brute_member_count(nx, ny, lmax)

    def test_exact_cap_kept(self):
        gs = GroundStructure.grid(5, 1, 5.0)
        assert gs.member_between(0, 5) is not None

    def test_two_nodes(self):
        nodes = [Node(0, (0.0, 0.0), (True, True)), Node(1, (3.0, 4.0))]
        assert len(generate_members(nodes, 5.0)) == 1
        assert generate_members(nodes, 5.0)[0].length == 5.0
        assert generate_members(nodes, 4.9) == []

    def test_lexicographic_order(self):
        ends = [mb.ends for mb in GroundStructure.grid(3, 2).members]
        assert ends == sorted(ends)

    def test_equilibrium_vectors(self):
        gs = GroundStructure.grid(4, 3)
        B = gs.B.toarray()
        for mb in gs.members:
            col = B[:, mb.id]
            assert np.count_nonzero(col) <= 4
            parts = [col[gs.dof_map[e]] for e in mb.ends if gs.nodes[e].is_free]
            for part in parts:
                assert np.linalg.norm(part) == pytest.approx(1.0)
            if len(parts) == 2:
                np.testing.assert_allclose(parts[0], -parts[1])


class TestOverlaps:
    @pytest.mark.parametrize("nx,ny,lmax", [(5, 2, 5.0), (5, 3, 5.0), (3, 3, 5.0), (4, 2, 2.3)])
    def test_brute_force_oracle(self, nx, ny, lmax):
        gs = GroundStructure.grid(nx, ny, lmax)
        assert gs.m <= 500
        assert set(gs.overlaps) == brute_overlaps(gs)

    def test_chain_contained(self):
        nodes = [Node(0, (0.0, 0.0), (True, True)), Node(1, (1.0, 0.0)), Node(2, (2.0, 0.0))]
        gs = GroundStructure.from_ends(nodes, [(0, 1), (0, 2), (1, 2)])
        assert gs.overlaps == {(0, 1), (1, 2)}

    def test_perpendicular_crossing(self):
        nodes = [Node(0, (0.0, 0.0)), Node(1, (2.0, 2.0)), Node(2, (0.0, 2.0)), Node(3, (2.0, 0.0))]
        assert detect_overlaps(GroundStructure.from_ends(nodes, [(0, 1), (2, 3)]).members, nodes) == set()

    def test_collinear_touching_only(self):
        nodes = [Node(0, (0.0, 0.0)), Node(1, (1.0, 0.0)), Node(2, (2.0, 0.0))]
        gs = GroundStructure.from_ends(nodes, [(0, 1), (1, 2)])
        assert gs.overlaps == frozenset()

    def test_pairs_are_ordered_and_irreflexive(self):
        for a, b in GroundStructure.grid(4, 2).overlaps:
            assert a < b

    def test_without_overlaps_is_clean(self):
        gs = GroundStructure.grid(5, 2).without_overlaps()
        assert gs.overlaps == frozenset()

    def test_active_overlaps(self):
        nodes = [Node(0, (0.0, 0.0), (True, True)), Node(1, (1.0, 0.0)), Node(2, (2.0, 0.0))]
        gs = GroundStructure.from_ends(nodes, [(0, 1), (0, 2), (1, 2)])
        assert active_overlaps(gs, np.array([1.0, 1.0, 0.0]), 1e-9) == [(0, 1)]
        assert active_overlaps(gs, np.array([1.0, 0.0, 1.0]), 1e-9) == []


class TestIncidence:
    def test_columns(self):
        nodes = [Node(0, (0.0, 0.0), (True, True)), Node(1, (1.0, 0.0)), Node(2, (1.0, 1.0))]
        gs = GroundStructure.from_ends(nodes, [(0, 1), (1, 2)])
        Z = gs.Z.toarray()
        assert Z[:, 0].sum() == 1
        assert Z[:, 1].sum() == 2

    def test_direct_summation(self):
        gs = GroundStructure.grid(5, 2)
        x = np.random.default_rng(0).uniform(size=gs.m)
        z = np.zeros(gs.l)
        pos = {int(nid): j for j, nid in enumerate(gs.free_nodes)}
        for mb in gs.members:
            for e in mb.ends:
                if e in pos:
                    z[pos[e]] += x[mb.id]
        np.testing.assert_allclose(gs.Z @ x, z)
        assert gs.Z.nnz == sum(len(v) for v in gs.node_members.values())

    def test_incidence_function(self):
        gs = GroundStructure.grid(2, 1)
        sets, Z = incidence(gs.members, gs.nodes)
        assert set(sets) == set(range(gs.l))
        assert np.all(np.asarray(Z.sum(axis=0)).ravel() <= 2)


class TestHinge:
    def _chain(self):
        nodes = [Node(0, (0.0, 0.0), (True, True)), Node(1, (1.0, 0.0)), Node(2, (2.0, 0.0)),
                 Node(3, (2.0, 1.0), (True, True))]
        return GroundStructure.from_ends(nodes, [(0, 1), (0, 2), (1, 2), (2, 3)])

    def test_chain_merged(self):
        gs = self._chain()
        merged, count = hinge_cancel(gs, np.array([2.0, 0.0, 2.0, 1.0]), 1e-9)
        assert count == 1
        np.testing.assert_allclose(merged, [0.0, 2.0, 0.0, 1.0])

    def test_unequal_areas_untouched(self):
        gs = self._chain()
        x = np.array([2.0, 0.0, 1.0, 1.0])
        merged, count = hinge_cancel(gs, x, 1e-9)
        assert count == 2
        np.testing.assert_array_equal(merged, x)

    def test_bent_chain_untouched(self):
        gs = self._chain()
        x = np.array([0.0, 1.0, 0.0, 1.0])
        assert hinge_cancel(gs, x, 1e-9)[1] == 1


class TestSplitCollinear:
    def _line(self):
        nodes = [Node(0, (0.0, 0.0), (True, True)), Node(1, (1.0, 0.0)), Node(2, (2.0, 0.0)), Node(3, (3.0, 0.0))]
        return GroundStructure.from_ends(nodes, [(a, b) for a in range(4) for b in range(a + 1, 4)])

    def test_forces_summed_per_segment(self):
        gs = self._line()
        q = np.zeros(gs.m)
        q[gs.member_between(0, 2)] = 3.0
        q[gs.member_between(1, 3)] = 2.0
        out = split_collinear(gs, q, 1e-12)
        want = {(0, 1): 3.0, (1, 2): 5.0, (2, 3): 2.0}
        for (a, b), f in want.items():
            assert out[gs.member_between(a, b)] == pytest.approx(f)
        assert np.count_nonzero(out) == 3
        np.testing.assert_allclose(gs.B @ out, gs.B @ q, atol=1e-12)

    def test_disjoint_members_untouched(self):
        gs = self._line()
        q = np.zeros(gs.m)
        q[gs.member_between(0, 1)] = 1.0
        q[gs.member_between(2, 3)] = -4.0
        np.testing.assert_array_equal(split_collinear(gs, q, 1e-12), q)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
    def test_equilibrium_and_no_overlap(self, f):
        gs = self._line()
        q = np.asarray(f)
        out = split_collinear(gs, q, 1e-9)
        np.testing.assert_allclose(gs.B @ out, gs.B @ q, atol=1e-9)
        assert active_overlaps(gs, np.abs(out), 1e-9) == []


class TestSerialization:
    def test_round_trip(self):
        gs = GroundStructure.grid(3, 2, 2.5)
        back = GroundStructure.from_json(gs.to_json())
        assert [m.ends for m in back.members] == [m.ends for m in gs.members]
        assert back.overlaps == gs.overlaps
        np.testing.assert_array_equal(back.B.toarray(), gs.B.toarray())

    def test_document_shape(self):
        doc = json.loads(GroundStructure.grid(1, 1).to_json())
        assert doc["units"] == "SI"
        assert set(doc["nodes"][0]) == {"id", "x", "y", "fixed"}
        assert set(doc["members"][0]) == {"id", "ends"}

    def test_bad_units(self):
        doc = GroundStructure.grid(1, 1).to_dict()
        doc["units"] = "imperial"
        with pytest.raises(ValueError):
            GroundStructure.from_dict(doc)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.sampled_from([1.0, 1.5, 2.3, 3.0, 10.0]))
def test_overlap_oracle_property(nx, ny, lmax):
    gs = GroundStructure.grid(nx, ny, lmax)
    assert set(gs.overlaps) == brute_overlaps(gs)


def test_design_from_areas_clips_and_accumulates():
    gs = GroundStructure.grid(2, 1)
    x = np.linspace(-1, 1, gs.m)
    d = TrussDesign.from_areas(gs, x)
    assert d.x.min() == 0.0
    assert d.volume == pytest.approx(gs.lengths @ np.maximum(x, 0))
    np.testing.assert_allclose(d.node_activity, gs.Z @ d.x)
