from __future__ import annotations

import itertools

import numpy as np
import pytest

from trusscard.ground import active_overlaps
from trusscard.misocp import (
    BnbOptions,
    auto_big_m,
    branch_and_bound,
    build_member_model,
    build_node_model,
)
from trusscard.models import build_min_compliance, evaluate_compliance, paper_instance, solve_min_compliance


def exhaustive_optimum(spec) -> float:
    """Best relaxation over every choice of n kept free nodes."""
    l, n = spec.gs.l, spec.n
    best = np.inf
    for keep in itertools.combinations(range(l), n):
        forced = [j for j in range(l) if j not in keep]
        _, obj, _ = solve_min_compliance(spec, forced)
        best = min(best, obj)
    return best


def relaxation_value(spec) -> float:
    tp = build_min_compliance(spec)
    return tp.objective(tp.solve())


class TestBigM:
    def test_auto_value(self):
        spec = paper_instance(5, 2, 4)
        assert auto_big_m(spec) == pytest.approx(0.002)

    def test_dominates_relaxation_activity(self):
        spec = paper_instance(5, 2, 4)
        tp = build_min_compliance(spec)
        z = spec.gs.Z @ tp.areas(tp.solve())
        assert z.max() <= auto_big_m(spec)

    def test_too_small_changes_optimum(self):
        spec = paper_instance(5, 2, 4)
        ref = branch_and_bound(build_node_model(spec))
        z = spec.gs.Z @ ref.design.x
        tight = branch_and_bound(build_node_model(spec, bigM=0.5 * z.max()))
        assert tight.objective > ref.objective * (1 + 1e-6)

    @pytest.mark.parametrize("kw", [{"bigM": 0.0}, {"bigM": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            build_node_model(paper_instance(5, 2, 4), **kw)

    def test_x_min_checks(self):
        spec = paper_instance(5, 2, 4)
        with pytest.raises(ValueError):
            build_member_model(spec, x_min=-1.0)
        with pytest.raises(ValueError):
            build_member_model(spec, bigM=1e-3, x_min=2e-3)

    def test_needs_n(self):
        with pytest.raises(ValueError):
            build_node_model(paper_instance(5, 2))


class TestNodeModel:
    @pytest.mark.parametrize("ny,want", [(2, 12100.00), (3, 5007.41), (4, 2812.50)])
    def test_reference_values(self, ny, want):
        res = branch_and_bound(build_node_model(paper_instance(5, ny, 4)))
        assert res.status == "optimal"
        assert res.objective == pytest.approx(want, rel=1e-4)
        assert res.gap <= 1e-6
        assert res.design.active_nodes(1e-7).size <= 4

    def test_n_equal_l_is_relaxation(self):
        spec = paper_instance(3, 1, 6)
        res = branch_and_bound(build_node_model(spec))
        assert res.objective == pytest.approx(relaxation_value(spec), rel=1e-6)

    def test_root_relaxation_sandwiched(self):
        spec = paper_instance(5, 2, 4)
        rel = build_node_model(spec).solve_relaxation()
        assert rel.objective == pytest.approx(12100.00, rel=1e-4)

    def test_all_binaries_fixed(self):
        spec = paper_instance(5, 2, 4)
        ref = branch_and_bound(build_node_model(spec))
        model = build_node_model(spec).with_fixed(ref.assignment)
        res = branch_and_bound(model)
        assert res.nodes == 1
        assert res.objective == pytest.approx(ref.objective, rel=1e-8)

    def test_log(self):
        res = branch_and_bound(build_node_model(paper_instance(5, 2, 3)))
        lines = res.log_csv().splitlines()
        assert lines[0] == "node,depth,bound,incumbent,fixed"
        assert len(lines) == res.nodes + 1

    def test_node_limit_keeps_valid_bound(self):
        spec = paper_instance(4, 2, 3)
        full = branch_and_bound(build_node_model(spec))
        capped = branch_and_bound(build_node_model(spec), BnbOptions(node_limit=2))
        assert capped.nodes <= 2
        assert capped.bound <= full.objective * (1 + 1e-6)
        if np.isfinite(capped.objective):
            assert capped.objective >= full.objective * (1 - 1e-6)
            assert capped.bound <= capped.objective * (1 + 1e-6)


@pytest.mark.parametrize("nx,ny,n", [(2, 1, 2), (3, 1, 3), (2, 2, 3), (3, 2, 4), (4, 1, 3), (2, 3, 4)])
def test_exhaustive_equivalence(nx, ny, n):
    spec = paper_instance(nx, ny, n)
    assert spec.gs.l <= 9
    res = branch_and_bound(build_node_model(spec))
    assert res.status == "optimal"
    want = exhaustive_optimum(spec)
    assert res.objective == pytest.approx(want, rel=1e-6)
    assert res.bound <= want * (1 + 1e-6)
    assert relaxation_value(spec) <= res.objective * (1 + 1e-6)


class TestMemberModel:
    @pytest.mark.parametrize("ny,n", [(2, 4), (2, 3), (3, 3)])
    def test_equivalent_to_node_model(self, ny, n):
        spec = paper_instance(5, ny, n)
        a = branch_and_bound(build_node_model(spec))
        b = branch_and_bound(build_member_model(spec))
        assert a.status == b.status == "optimal"
        assert b.objective == pytest.approx(a.objective, rel=1e-6)

    @pytest.mark.parametrize("ny,n", [(2, 4), (3, 3), (4, 4)])
    def test_overlap_exclusion(self, ny, n):
        spec = paper_instance(5, ny, n)
        res = branch_and_bound(build_member_model(spec, enforce_overlaps=True))
        assert res.status == "optimal"
        assert active_overlaps(spec.gs, res.design.x, 1e-7) == []
        on = [i for i, t in res.assignment.items() if t == 1]
        assert not any((a in on and b in on) for a, b in spec.gs.overlaps)

    def test_slenderness(self):
        spec = paper_instance(5, 2, 4)
        x_min = 6e-5
        res = branch_and_bound(build_member_model(spec, x_min=x_min))
        assert res.status == "optimal"
        x = res.design.x
        used = x > 1e-9
        assert np.all(x[used] >= x_min * (1 - 1e-6))
        assert res.objective >= 12100.00 * (1 - 1e-6)
        assert evaluate_compliance(spec.gs, spec.E, x, spec.p) == pytest.approx(res.objective, rel=1e-5)

    def test_unsupported_leaf_is_not_an_incumbent(self):
        # three thick members cannot carry the load; a stalled solve must not count
        spec = paper_instance(5, 2, 4)
        on = {1, 76, 121}
        model = build_member_model(spec, x_min=2e-4).with_fixed({i: int(i in on) for i in range(spec.gs.m)})
        res = branch_and_bound(model)
        assert res.status == "infeasible"
        assert res.design is None
