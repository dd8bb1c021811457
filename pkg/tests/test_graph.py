import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperwalk.graph import (
    ArcGraphModel,
    BoxGraphSpec,
    DirectedGraph,
    GraphError,
    TorusSpec,
    arc_reversal_map,
    build_arc_graph,
    build_box_graph,
    build_torus,
    div_arc,
    div_vertex,
    max_flow_min_cut,
)

from conftest import random_strongly_connected


def brute_force_arcs(g: DirectedGraph):
    """Independent enumeration of all succeeding edge pairs."""
    return sorted(
        (e, e2)
        for e in range(g.n_edges)
        for e2 in range(g.n_edges)
        if g.edge_head[e] == g.edge_tail[e2]
    )


class TestArcGraph:
    def test_three_cycle_counts(self, three_cycle):
        h = build_arc_graph(three_cycle)
        assert h.n_nodes == 3
        assert h.n_arcs == 3  # each edge has exactly one successor

    def test_torus_d3_n2_counts(self):
        g, h = build_torus(TorusSpec(3, 2))
        assert g.n_edges == 48
        assert all(len(h.out_arcs(e)) == 6 for e in range(g.n_edges))
        assert h.n_arcs == 288

    def test_arcs_match_brute_force(self):
        rng = np.random.default_rng(3)
        for k in range(5):
            g = random_strongly_connected(rng, 5 + k, 6)
            h = build_arc_graph(g)
            assert list(zip(h.arc_src, h.arc_dst)) == brute_force_arcs(g)

    def test_rejects_sink_vertex(self):
        with pytest.raises(GraphError):
            DirectedGraph(3, [0, 1, 0], [1, 2, 2])  # vertex 2 has no out-edge

    def test_reversal_is_involution(self, three_cycle):
        h = build_arc_graph(three_cycle)
        h_rev = build_arc_graph(three_cycle.reverse())
        fwd = arc_reversal_map(h, h_rev)
        back = arc_reversal_map(h_rev, h)
        assert np.array_equal(back[fwd], np.arange(h.n_arcs))

    def test_reversed_arc_graph_equals_arc_graph_of_reversal(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            g = random_strongly_connected(rng, 6, 8)
            h_rev = build_arc_graph(g.reverse())
            pairs = {(int(s), int(d)) for s, d in zip(h_rev.arc_src, h_rev.arc_dst)}
            expected = {(e2, e) for e, e2 in brute_force_arcs(g)}
            assert pairs == expected


class TestLatticeBuilders:
    def test_torus_d1_counts(self):
        g, _ = build_torus(TorusSpec(1, 3))
        assert g.n_vertices == 3
        assert g.n_edges == 6

    def test_torus_d3_n4_counts(self):
        g, _ = build_torus(TorusSpec(3, 4))
        assert g.n_vertices == 64
        assert g.n_edges == 384

    def test_torus_n2_parallel_edges_are_distinct(self):
        g, _ = build_torus(TorusSpec(2, 2))
        # opposite directions reach the same head but stay distinct edges
        pairs = list(zip(g.edge_tail, g.edge_head))
        assert len(pairs) == 16
        assert len(set(pairs)) == 8  # every endpoint pair carried twice

    def test_torus_rejects_small_side(self):
        with pytest.raises(GraphError):
            TorusSpec(2, 1)

    def test_root_edge_head_is_origin(self):
        g, _ = build_torus(TorusSpec(3, 4))
        meta = g.lattice
        assert g.edge_head[meta.root_edge] == meta.origin

    def test_box_d3_n2_structure(self):
        g, _ = build_box_graph(BoxGraphSpec(3, 2))
        meta = g.lattice
        assert g.n_vertices == 27 + 1
        assert len(g.out_edges(meta.boundary_vertex)) == 1
        assert g.edge_tail[meta.special_edge] == meta.boundary_vertex

    def test_box_strongly_connected_any_spec(self):
        # construction raises if not strongly connected
        for d, N in [(1, 2), (2, 3), (3, 2)]:
            g, _ = build_box_graph(BoxGraphSpec(d, N))
            assert g.lattice.special_edge == g.n_edges - 1

    def test_box_d3_n4_arcs_match_enumeration(self):
        g, h = build_box_graph(BoxGraphSpec(3, 4))
        # independent count: arcs out of e = out-degree of head(e)
        expected = int(sum(len(g.out_edges(int(v))) for v in g.edge_head))
        assert h.n_arcs == expected
        assert list(zip(h.arc_src, h.arc_dst)) == brute_force_arcs(g)


class TestDivergence:
    def test_constant_on_regular_graph_is_zero(self):
        g, h = build_torus(TorusSpec(2, 3))
        assert np.abs(div_vertex(g, np.full(g.n_edges, 2.5))).max() == 0.0
        assert np.abs(div_arc(h, np.full(h.n_arcs, 0.75))).max() == 0.0

    def test_indicator_edge(self, three_cycle):
        theta = np.array([1.0, 0.0, 0.0])  # edge (0, 1)
        d = div_vertex(three_cycle, theta)
        assert d[0] == 1.0 and d[1] == -1.0 and d[2] == 0.0

    def test_indicator_arc(self, three_cycle):
        h = build_arc_graph(three_cycle)
        Theta = np.zeros(h.n_arcs)
        Theta[0] = 1.0
        d = div_arc(h, Theta)
        assert d[h.arc_src[0]] == 1.0 and d[h.arc_dst[0]] == -1.0

    def test_hand_computed_on_three_cycle(self, three_cycle):
        theta = np.array([0.3, -1.2, 2.0])
        # at vertex x: out edge x, in edge (x-1) mod 3
        expected = np.array([0.3 - 2.0, -1.2 - 0.3, 2.0 + 1.2])
        assert np.allclose(div_vertex(three_cycle, theta), expected, atol=1e-15)

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_arc_divergence_sums_to_zero_exactly(self, seed):
        rng = np.random.default_rng(seed)
        g = random_strongly_connected(rng, int(rng.integers(3, 8)), int(rng.integers(0, 9)))
        h = build_arc_graph(g)
        # dyadic rationals make float sums exact
        Theta = rng.integers(-64, 64, h.n_arcs) / 16.0
        assert div_arc(h, Theta).sum() == 0.0

    def test_reversal_identity_exhaustive_torus_d2_n2(self):
        model = ArcGraphModel.from_graph(build_torus(TorusSpec(2, 2))[0])
        rng = np.random.default_rng(0)
        Theta = rng.random(model.n_arcs)
        rev_Theta = np.empty_like(Theta)
        rev_Theta[model.reversal] = Theta
        lhs = div_arc(model.arcs, Theta)
        rhs = -div_arc(model.reversed_arcs, rev_Theta)  # same edge ids
        assert np.abs(lhs - rhs).max() <= 1e-12


class TestMaxFlow:
    def test_unit_capacity_box_cut_is_2d(self):
        g, _ = build_box_graph(BoxGraphSpec(3, 2))
        meta = g.lattice
        cap = np.ones(g.n_edges)
        cap[meta.special_edge] = g.n_edges + 1.0
        res = max_flow_min_cut(g, cap, meta.origin, meta.boundary_vertex)
        assert res.cut_value == pytest.approx(6.0, abs=1e-12)
        assert res.flow_value == pytest.approx(res.cut_value, abs=1e-9)

    def test_agrees_with_networkx(self):
        nx = pytest.importorskip("networkx")
        rng = np.random.default_rng(5)
        for _ in range(5):
            g = random_strongly_connected(rng, 7, 10)
            cap = rng.uniform(0.1, 3.0, g.n_edges)
            res = max_flow_min_cut(g, cap, 0, 3)
            G = nx.DiGraph()
            for e in range(g.n_edges):
                t, h = int(g.edge_tail[e]), int(g.edge_head[e])
                if G.has_edge(t, h):
                    G[t][h]["capacity"] += cap[e]  # parallel edges add
                else:
                    G.add_edge(t, h, capacity=cap[e])
            expected, _ = nx.maximum_flow(G, 0, 3)
            assert res.flow_value == pytest.approx(expected, rel=1e-9)

    def test_bridge_bottleneck(self):
        # path gadget 0 -> 1 -> 2 with a 0.5 bridge and a return path
        g = DirectedGraph(3, [0, 1, 2], [1, 2, 0])
        res = max_flow_min_cut(g, np.array([2.0, 0.5, 1.0]), 0, 2)
        assert res.cut_value == pytest.approx(0.5)

    def test_monotone_in_capacities(self):
        rng = np.random.default_rng(11)
        g = random_strongly_connected(rng, 6, 8)
        cap = rng.uniform(0.5, 2.0, g.n_edges)
        base = max_flow_min_cut(g, cap, 0, 2).flow_value
        for e in range(0, g.n_edges, 3):
            bigger = cap.copy()
            bigger[e] += 1.0
            assert max_flow_min_cut(g, bigger, 0, 2).flow_value >= base - 1e-12

    def test_flow_conservation_and_feasibility(self):
        rng = np.random.default_rng(13)
        g = random_strongly_connected(rng, 8, 12)
        cap = rng.uniform(0.2, 2.0, g.n_edges)
        res = max_flow_min_cut(g, cap, 1, 5)
        assert np.all(res.flow >= -1e-12)
        assert np.all(res.flow <= cap + 1e-12)
        d = div_vertex(g, res.flow)
        interior = np.delete(np.arange(g.n_vertices), [1, 5])
        assert np.abs(d[interior]).max() <= 1e-9
        assert d[1] == pytest.approx(res.flow_value, abs=1e-9)

    def test_source_equals_sink_rejected(self, three_cycle):
        with pytest.raises(GraphError):
            max_flow_min_cut(three_cycle, np.ones(3), 0, 0)

    def test_cut_saturated(self):
        rng = np.random.default_rng(17)
        g = random_strongly_connected(rng, 7, 9)
        cap = rng.uniform(0.2, 2.0, g.n_edges)
        res = max_flow_min_cut(g, cap, 0, 4)
        assert np.all(cap[res.cut_edges] - res.flow[res.cut_edges] <= 1e-9)
