import numpy as np
import pytest

from hyperwalk.chain import (
    CycleOnArcs,
    check_weak_reversal,
    collection_weight,
    cycle_moment_exact,
    cycle_weight,
    escape_probability,
    green_function_killed,
    hitting_prob_check,
    last_exit_distribution,
    random_cycles,
    reverse_environment,
    stationary,
    stationary_batch,
    trap_round_trip_prob,
    trap_time_mean_quenched,
    trap_time_sample,
    trap_edges,
)
from hyperwalk.environment import (
    Environment,
    WeightSystem,
    lattice_weights,
    omega_from_u_batch,
    sample_environment,
    sample_u_batch,
)
from hyperwalk.graph import (
    ArcGraphModel,
    BoxGraphSpec,
    DirectedGraph,
    TorusSpec,
    box_model,
    torus_model,
)
from hyperwalk.hypergeom import ParameterError, estimate_from_samples

from conftest import random_strongly_connected


def env_from_omega(model, omega):
    """Hand-built environment from explicit arc probabilities (no u)."""
    ws = WeightSystem(np.ones(model.n_edges), np.ones(model.n_arcs))
    return Environment(model, ws, np.asarray(omega, dtype=np.float64))


def two_state_gadget(p: float):
    """Chain on two edges of a 2-cycle plus an escape loop.

    Edge 0 = (0, 1); from edge 0 the chain returns via edge 2 = (1, 0) with
    probability p or leaves through edge 3 = (1, 2); the walk then passes
    edge 1 = (2, 0) and is back at vertex 0 where only edge 0 exits.
    """
    g = DirectedGraph(3, [0, 2, 1, 1], [1, 0, 0, 2])
    model = ArcGraphModel.from_graph(g)
    h = model.arcs
    omega = np.ones(h.n_arcs)
    k_ret = h.arc_index(0, 2)
    k_esc = h.arc_index(0, 3)
    omega[k_ret] = p
    omega[k_esc] = 1.0 - p
    return model, env_from_omega(model, omega)


class TestStationary:
    def test_deterministic_cycle_uniform(self, three_cycle):
        model = ArcGraphModel.from_graph(three_cycle)
        env = env_from_omega(model, np.ones(3))
        law = stationary(env)
        assert np.allclose(law.pi, 1.0 / 3.0, atol=1e-14)

    def test_doubly_stochastic_uniform(self):
        model = torus_model(TorusSpec(2, 3))
        # equal arc probabilities: row sums and column sums both uniform
        env = env_from_omega(model, np.full(model.n_arcs, 1.0 / 4.0))
        law = stationary(env)
        assert np.abs(law.pi - 1.0 / model.n_edges).max() <= 1e-13

    def test_two_state_closed_form(self):
        # two edges of a 2-cycle with parallel duplicates: chain on 2 states
        g = DirectedGraph(2, [0, 1], [1, 0])
        model = ArcGraphModel.from_graph(g)
        # single arc out of each edge: deterministic, uniform law
        env = env_from_omega(model, np.ones(model.n_arcs))
        assert np.allclose(stationary(env).pi, 0.5)

    def test_off_diagonal_two_state(self):
        # explicit 2-state chain: stay/leave probabilities (1-p, p), (q, 1-q)
        g = DirectedGraph(1, [0, 0], [0, 0])  # two self-loops at one vertex
        model = ArcGraphModel.from_graph(g)
        h = model.arcs
        p, q = 0.3, 0.8
        omega = np.empty(4)
        omega[h.arc_index(0, 0)] = 1 - p
        omega[h.arc_index(0, 1)] = p
        omega[h.arc_index(1, 0)] = q
        omega[h.arc_index(1, 1)] = 1 - q
        law = stationary(env_from_omega(model, omega))
        assert np.allclose(law.pi, [q / (p + q), p / (p + q)], atol=1e-13)

    def test_residual_contract(self, two_vertex_model):
        ws = WeightSystem(np.array([0.7, 1.3, 2.0, 0.5]), np.linspace(0.5, 2.0, 8))
        env = sample_environment(two_vertex_model, ws, 0)
        law = stationary(env)
        assert law.residual <= 1e-12
        assert np.all(law.pi > 0)

    def test_batch_matches_single(self, two_vertex_model):
        ws = WeightSystem(np.ones(4), np.linspace(0.5, 2.0, 8))
        u = sample_u_batch(two_vertex_model, ws, 8, 5)
        omegas, _ = omega_from_u_batch(two_vertex_model, ws, u)
        pis = stationary_batch(two_vertex_model, omegas)
        for i in range(8):
            env = Environment(two_vertex_model, ws, omegas[i], u=u[i])
            assert np.abs(pis[i] - stationary(env).pi).max() <= 1e-12


class TestReversal:
    def test_deterministic_two_cycle(self):
        g = DirectedGraph(2, [0, 1], [1, 0])
        model = ArcGraphModel.from_graph(g)
        env = env_from_omega(model, np.ones(model.n_arcs))
        rev = reverse_environment(env)
        assert np.all(rev.omega == 1.0)

    def test_reversed_invariant_law_is_transported(self, two_vertex_model):
        ws = WeightSystem(np.array([1.0, 2.0, 1.5, 0.5]), np.linspace(0.5, 2.0, 8))
        env = sample_environment(two_vertex_model, ws, 1)
        law = stationary(env)
        rev = reverse_environment(env, law)
        law_rev = stationary(rev)
        assert np.abs(law_rev.pi - law.pi).max() <= 1e-12

    def test_double_reversal_is_identity(self, two_vertex_model):
        ws = WeightSystem(np.array([1.0, 2.0, 1.5, 0.5]), np.linspace(0.5, 2.0, 8))
        env = sample_environment(two_vertex_model, ws, 2)
        back = reverse_environment(reverse_environment(env))
        assert np.abs(back.omega - env.omega).max() <= 1e-12

    def test_reversible_chain_detailed_balance(self):
        # a reversible chain: reversed kernel equals the kernel on swapped arcs
        g = DirectedGraph(2, [0, 1], [1, 0])
        model = ArcGraphModel.from_graph(g)
        env = env_from_omega(model, np.ones(model.n_arcs))
        rev = reverse_environment(env)
        assert np.abs(rev.omega[model.reversal] - env.omega).max() <= 1e-13


class TestCycles:
    def test_cycle_weight_deterministic(self, three_cycle):
        model = ArcGraphModel.from_graph(three_cycle)
        env = env_from_omega(model, np.ones(3))
        assert cycle_weight(env, CycleOnArcs((0, 1, 2, 0))) == 1.0

    def test_forward_reversed_weights_agree(self, two_vertex_model):
        ws = WeightSystem(np.array([1.0, 2.0, 1.5, 0.5]), np.linspace(0.5, 2.0, 8))
        env = sample_environment(two_vertex_model, ws, 3)
        rev = reverse_environment(env)
        for cyc in random_cycles(two_vertex_model, 25, 7):
            w = cycle_weight(env, cyc)
            w_rev = cycle_weight(rev, cyc.reversed_cycle())
            assert abs(w - w_rev) <= 1e-13 * max(w, 1e-30)

    def test_invalid_cycle_rejected(self):
        with pytest.raises(ParameterError):
            CycleOnArcs((0, 1, 2))

    def test_empty_collection_moment_is_one(self, two_vertex_model):
        ws = WeightSystem(np.ones(4), np.ones(8))
        assert cycle_moment_exact(two_vertex_model, ws, []) == 1.0

    def test_dirichlet_single_cycle_beta_ratio(self, two_vertex_model):
        # with all-ones Z the closed form is a ratio of multivariate betas
        from hyperwalk.hypergeom import beta_multivariate

        alpha = np.array([1.5, 2.5, 1.0, 2.0])
        ws = WeightSystem(alpha, np.ones(8))
        cyc = CycleOnArcs((0, 2, 0))
        counts = cyc.visit_counts(4)
        expect = 1.0
        for idx in ([0, 1], [2, 3]):
            expect *= beta_multivariate(alpha[idx] + counts[idx]) / beta_multivariate(
                alpha[idx]
            )
        assert cycle_moment_exact(two_vertex_model, ws, [cyc]) == pytest.approx(
            expect, rel=1e-7
        )

    def test_collection_moment_matches_mc(self, two_vertex_model):
        ws = WeightSystem(np.array([1.0, 2.0, 1.5, 1.5]), np.linspace(0.5, 2.0, 8))
        cycles = [CycleOnArcs((0, 2, 0)), CycleOnArcs((1, 3, 1)), CycleOnArcs((0, 2, 0))]
        exact = cycle_moment_exact(two_vertex_model, ws, cycles, 1e-9)
        u = sample_u_batch(two_vertex_model, ws, 40000, 4)
        omegas, _ = omega_from_u_batch(two_vertex_model, ws, u)
        vals = np.ones(len(u))
        for c in cycles:
            vals *= np.exp(np.log(omegas[:, c.arcs(two_vertex_model)]).sum(axis=1))
        est = estimate_from_samples(vals)
        assert abs(est.mean - exact) <= 3 * est.std_error


class TestWeakReversal:
    def test_balanced_anisotropic_torus(self):
        model = torus_model(TorusSpec(2, 2))
        ws = lattice_weights(model, [1.3, 0.7, 1.1, 0.9])
        cycles = random_cycles(model, 5, 3)
        results = check_weak_reversal(model, ws, cycles, 20000, 11)
        for r in results:
            assert abs(r.z_score) <= 4.0

    def test_exact_side_on_low_degree_graph(self, two_vertex_model):
        # div(alpha) = 0 needs equal in/out weight at both vertices
        ws = WeightSystem(np.array([1.0, 2.0, 1.0, 2.0]), np.linspace(0.5, 2.0, 8))
        cycles = [CycleOnArcs((0, 2, 0))]
        results = check_weak_reversal(two_vertex_model, ws, cycles, 30000, 13)
        r = results[0]
        assert r.exact is not None
        assert abs(r.forward_mean - r.exact) <= 4 * r.forward_se
        assert abs(r.reversed_mean - r.exact) <= 4 * r.reversed_se

    def test_unbalanced_rejected(self, two_vertex_model):
        ws = WeightSystem(np.array([1.0, 2.0, 1.5, 0.5]), np.ones(8))
        with pytest.raises(ParameterError, match="div"):
            check_weak_reversal(two_vertex_model, ws, [CycleOnArcs((0, 2, 0))], 100, 0)

    def test_deterministic_graph_both_sides_one(self, three_cycle):
        model = ArcGraphModel.from_graph(three_cycle)
        ws = WeightSystem(np.ones(3), np.ones(3))
        results = check_weak_reversal(model, ws, [CycleOnArcs((0, 1, 2, 0))], 100, 0)
        r = results[0]
        assert r.forward_mean == 1.0 and r.reversed_mean == 1.0 and r.z_score == 0.0


class TestHitting:
    def test_deterministic_cycle(self, three_cycle):
        model = ArcGraphModel.from_graph(three_cycle)
        env = env_from_omega(model, np.ones(3))
        lhs, rhs = hitting_prob_check(env, 0)
        assert np.allclose(lhs, 1.0) and np.allclose(rhs, 1.0)

    def test_two_vertex_hand_solve(self, two_vertex_model):
        ws = WeightSystem(np.array([1.0, 2.0, 1.5, 0.5]), np.linspace(0.5, 2.0, 8))
        env = sample_environment(two_vertex_model, ws, 6)
        lhs, rhs = hitting_prob_check(env, 0)
        assert np.abs(lhs - rhs).max() <= 1e-12
        assert lhs.sum() == pytest.approx(1.0, abs=1e-10)  # certain first return

    def test_random_small_graphs(self):
        rng = np.random.default_rng(14)
        for trial in range(20):
            g = random_strongly_connected(rng, int(rng.integers(4, 7)), int(rng.integers(2, 7)))
            model = ArcGraphModel.from_graph(g)
            ws = WeightSystem(
                rng.uniform(0.5, 3.0, model.n_edges), rng.uniform(0.5, 2.0, model.n_arcs)
            )
            env = sample_environment(model, ws, trial)
            lhs, rhs = hitting_prob_check(env, 0)
            assert np.abs(lhs - rhs).max() <= 1e-10

    def test_last_exit_sums_to_one(self, two_vertex_model):
        ws = WeightSystem(np.ones(4), np.linspace(0.5, 2.0, 8))
        env = sample_environment(two_vertex_model, ws, 7)
        mu = last_exit_distribution(env, 1)
        assert mu.sum() == pytest.approx(1.0, abs=1e-10)


class TestGreenFunction:
    def test_forced_exit_gives_one(self, three_cycle):
        # after the root edge every continuation passes the kill edge first
        model = ArcGraphModel.from_graph(three_cycle)
        env = env_from_omega(model, np.ones(3))
        assert green_function_killed(env, e0=0, kill_edge=1) == pytest.approx(1.0)

    def test_geometric_gadget(self):
        for p in (0.1, 0.5, 0.9):
            model, env = two_state_gadget(p)
            G = green_function_killed(env, e0=0, kill_edge=3)
            assert G == pytest.approx(1.0 / (1.0 - p), rel=1e-12)

    def test_reciprocal_inequality_on_boxes(self):
        model = box_model(BoxGraphSpec(2, 3))
        ws = lattice_weights(model, 1.0)
        for seed in range(5):
            env = sample_environment(model, ws, seed)
            G = green_function_killed(env)
            P = escape_probability(env)
            assert G <= 1.0 / P + 1e-9 * G
            assert G * P == pytest.approx(1.0, rel=1e-9)

    def test_monotone_under_stronger_escape(self):
        # raising the escape probability of the gadget lowers the Green value
        vals = [
            green_function_killed(two_state_gadget(p)[1], e0=0, kill_edge=3)
            for p in (0.8, 0.5, 0.2)
        ]
        assert vals[0] > vals[1] > vals[2]


class TestTrapTimes:
    def test_trap_edges_are_mutual_reversals(self):
        model = torus_model(TorusSpec(3, 4))
        for i in range(6):
            e_fwd, e_back = trap_edges(model, i)
            g = model.graph
            assert g.edge_tail[e_fwd] == g.edge_head[e_back]
            assert g.edge_head[e_fwd] == g.edge_tail[e_back]

    def test_minimal_exit_gadget(self, three_cycle):
        # out-degree one everywhere: the walk leaves the pair immediately
        model = torus_model(TorusSpec(1, 3))
        env = env_from_omega(model, _uturn_free_omega(model))
        assert trap_time_sample(env, 0, 1) == 1

    def test_quenched_geometric_agreement(self):
        model = torus_model(TorusSpec(2, 3))
        ws = lattice_weights(model, 1.0)
        env = sample_environment(model, ws, 9)
        mean_q = trap_time_mean_quenched(env, 0)
        sims = np.array([trap_time_sample(env, 0, 1000 + k) for k in range(3000)], float)
        est = estimate_from_samples(sims)
        assert abs(est.mean - mean_q) <= 3 * est.std_error


def _uturn_free_omega(model):
    """Arc kernel that never takes the reversal arc (mass on the rest)."""
    h = model.arcs
    g = model.graph
    omega = np.empty(h.n_arcs)
    for e in range(g.n_edges):
        sl = h.out_slice(e)
        dsts = h.arc_dst[sl]
        rev_mask = (g.edge_tail[dsts] == g.edge_head[e]) & (
            g.edge_head[dsts] == g.edge_tail[e]
        )
        w = np.where(rev_mask, 1e-12, 1.0)
        omega[sl] = w / w.sum()
    return omega
