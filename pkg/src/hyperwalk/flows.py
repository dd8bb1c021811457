"""Trap-strength parameters, min-cuts, and energy-bounded flows on lattices.

``kappa`` is the largest total edge weight leaving a two-vertex set
``{0, e_i}``; it governs whether the walk admits an absolutely continuous
invariant measure from the walker's point of view.  ``kappa_tilde`` is the
smallest single-edge weight and governs the proven moment window of the
killed Green function.

The flow machinery builds, on the torus, a nonnegative arc function whose
divergence is a uniform "total flow" out of a root edge while staying
(almost) below prescribed capacities with uniformly bounded energy:

* a vertex flow with exact uniform divergence is found as a feasible
  transshipment (max-flow reduction) and then driven to low energy by
  convex descent over a fundamental cycle basis;
* the arc lift distributes each vertex flow value over succeeding pairs
  proportionally, which reproduces the prescribed out-sums, in-sums, and
  divergence exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import Environment, WeightSystem
from .graph import (
    ArcGraphModel,
    BoxGraphSpec,
    DirectedGraph,
    GraphError,
    box_model,
    direction_vectors,
    div_arc,
    div_vertex,
    max_flow_min_cut,
)
from .hypergeom import ParameterError


def _pattern(ws: WeightSystem, d: int | None = None) -> np.ndarray:
    if ws.pattern_alpha is None:
        raise ParameterError("weights carry no translation-invariant lattice pattern")
    return ws.pattern_alpha


def kappa(ws: WeightSystem) -> float:
    """Largest total weight leaving a two-vertex set {0, e_i}, i = 1..d.

    Computed by explicit enumeration of the outer boundary of each set; for
    the pair in direction i this consists of the 4d - 2 edges leaving either
    endpoint without entering the other.
    """
    pat = _pattern(ws)
    d = len(pat) // 2
    dirs = direction_vectors(d)
    best = -np.inf
    for i in range(d):
        members = {tuple(np.zeros(d, dtype=np.int64)), tuple(dirs[i])}
        total = 0.0
        for v in members:
            for k in range(2 * d):
                head = tuple(np.asarray(v) + dirs[k])
                if head not in members:
                    total += pat[k]
        best = max(best, total)
    return float(best)


def kappa_tilde(ws: WeightSystem) -> float:
    """Smallest single-edge weight min_i alpha_{e_i}."""
    return float(_pattern(ws).min())


def kappa_pair_formula(ws: WeightSystem) -> float:
    """Alternate closed form ``max_i 2 sum_{j<=d} alpha_j - (alpha_i - alpha_{-i})``.

    Reported for comparison only; :func:`kappa` (the boundary enumeration)
    is the authoritative value and the two differ in general.
    """
    pat = _pattern(ws)
    d = len(pat) // 2
    s = float(pat[:d].sum())
    return float(max(2 * s - (pat[i] - pat[i + d]) for i in range(d)))


def alpha_boosted(model: ArcGraphModel, ws: WeightSystem, direction: int) -> WeightSystem:
    """Weights with kappa added on the single origin edge in ``direction``.

    The boost breaks translation invariance, so the result carries per-edge
    weights only; the underlying pattern is kept for reporting.
    """
    meta = model.graph.lattice
    if meta is None:
        raise GraphError("boosting needs a lattice model")
    k = kappa(ws)
    alpha = ws.alpha.copy()
    e = meta.edge_id(np.zeros(meta.d, dtype=np.int64), direction)
    alpha[e] += k
    boosted = ws.with_alpha(alpha)
    object.__setattr__(boosted, "pattern_alpha", ws.pattern_alpha)
    return boosted


@dataclass(frozen=True)
class MinCutResult:
    value: float
    single_vertex_cut: float  # total capacity leaving the origin, for comparison
    cut_edges: np.ndarray


def min_cut_lattice(
    capacities_pattern,
    N: int,
    d: int,
    boosts: dict | None = None,
) -> MinCutResult:
    """Minimum cut separating the origin from the collapsed boundary of the
    radius-N box, as the finite surrogate of the cut to infinity.

    ``capacities_pattern`` is a scalar or per-direction vector; ``boosts``
    maps ``(coord tuple, direction)`` to additive capacity. Cuts to the box
    boundary can only over-estimate the infinite-volume value, and shrink
    with N toward it.
    """
    model = box_model(BoxGraphSpec(d, N))
    g = model.graph
    meta = g.lattice
    pat = np.broadcast_to(np.asarray(capacities_pattern, dtype=np.float64), (2 * d,))
    cap = np.where(meta.edge_dir >= 0, pat[np.clip(meta.edge_dir, 0, None)], 1.0)
    cap = cap.copy()
    if boosts:
        for (coord, direction), extra in boosts.items():
            cap[meta.edge_id(coord, direction)] += extra
    # the boundary return edge cannot belong to a cut separating 0 from the
    # boundary; a capacity dominating every other cut keeps it out
    cap[meta.special_edge] = float(cap[: meta.special_edge].sum()) + 1.0
    res = max_flow_min_cut(g, cap, meta.origin, meta.boundary_vertex)
    single = float(cap[g.out_edges(meta.origin)].sum())
    return MinCutResult(res.cut_value, single, res.cut_edges)


def boosted_min_cut(ws: WeightSystem, N: int, direction: int) -> MinCutResult:
    """Box min-cut of the pattern with the kappa boost on the origin edge."""
    pat = _pattern(ws)
    d = len(pat) // 2
    boosts = {(tuple([0] * d), direction): kappa(ws)}
    return min_cut_lattice(pat, N, d, boosts)


# ---------------------------------------------------------------------------
# vertex flows on the torus


@dataclass(frozen=True)
class VertexFlow:
    """Nonnegative edge flow with uniform divergence m 1_{x=0} - m/N^d."""

    theta: np.ndarray
    strength: float  # m
    source: int
    energy: float  # sum of squares

    def divergence_target(self, g: DirectedGraph) -> np.ndarray:
        t = np.full(g.n_vertices, -self.strength / g.n_vertices)
        t[self.source] += self.strength
        return t


class FlowError(RuntimeError):
    """Raised when a requested flow is infeasible."""


def _feasible_transshipment(
    g: DirectedGraph, capacities: np.ndarray, source: int, m: float
) -> np.ndarray:
    """theta <= capacities with div(theta) = m 1_source - m/|V| via max flow.

    Augments the graph with a super source feeding ``source`` and a super
    sink drawing ``m/|V|`` from every other vertex; the transshipment is
    feasible iff the max flow saturates the super arcs.
    """
    n = g.n_vertices
    demand = m / n
    S, T = n, n + 1
    tails = np.concatenate([g.edge_tail, [S], np.delete(np.arange(n), source)])
    heads = np.concatenate([g.edge_head, [source], np.full(n - 1, T)])
    caps = np.concatenate([capacities, [m - demand], np.full(n - 1, demand)])
    aug = DirectedGraph(n + 2, tails, heads, check=False)
    res = max_flow_min_cut(aug, caps, S, T)
    want = m - demand
    if res.flow_value < want - 1e-9 * max(m, 1.0):
        raise FlowError(
            f"transshipment infeasible: routed {res.flow_value:.6g} of {want:.6g}"
        )
    theta = np.clip(res.flow[: g.n_edges], 0.0, capacities)
    return theta


def _fundamental_cycles(g: DirectedGraph) -> list[tuple[np.ndarray, np.ndarray]]:
    """Signed fundamental cycles of a BFS spanning tree of the undirected support.

    Returns (edge ids, signs) per non-tree edge; +1 edges are traversed
    forward.  Antiparallel edge pairs appear as 2-cycles, which lets the
    descent cancel opposing flow.
    """
    n = g.n_vertices
    # undirected adjacency via edge list
    parent = np.full(n, -1, dtype=np.int64)
    parent_edge = np.full(n, -1, dtype=np.int64)
    parent_sign = np.zeros(n, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    queue = [0]
    in_tree = np.zeros(g.n_edges, dtype=bool)
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(n)]
    for e in range(g.n_edges):
        adj[g.edge_tail[e]].append((int(g.edge_head[e]), e, 1))
        adj[g.edge_head[e]].append((int(g.edge_tail[e]), e, -1))
    qi = 0
    while qi < len(queue):
        v = queue[qi]
        qi += 1
        for w, e, sgn in adj[v]:
            if not visited[w]:
                visited[w] = True
                parent[w] = v
                parent_edge[w] = e
                parent_sign[w] = sgn
                depth[w] = depth[v] + 1
                in_tree[e] = True
                queue.append(w)

    def tree_path(v: int):
        edges, signs = [], []
        while parent[v] >= 0:
            edges.append(parent_edge[v])
            signs.append(parent_sign[v])
            v = int(parent[v])
        return edges, signs, v

    cycles = []
    for e in range(g.n_edges):
        if in_tree[e]:
            continue
        a, b = int(g.edge_tail[e]), int(g.edge_head[e])
        # path a -> root and b -> root; cancel the common suffix
        ea, sa, _ = tree_path(a)
        eb, sb, _ = tree_path(b)
        while ea and eb and ea[-1] == eb[-1]:
            ea.pop(), sa.pop(), eb.pop(), sb.pop()
        # closed walk: e forward, then b up to the meeting vertex (each tree
        # edge against its discovery direction), then down to a (with it)
        ids = [e] + eb + ea[::-1]
        signs = [1] + [-s for s in sb] + [s for s in sa[::-1]]
        cycles.append((np.array(ids, dtype=np.int64), np.array(signs, dtype=np.float64)))
    return cycles


def _energy_descent(
    theta: np.ndarray,
    capacities: np.ndarray,
    cycles,
    *,
    max_sweeps: int = 400,
    rel_tol: float = 1e-12,
) -> np.ndarray:
    """Minimize sum theta^2 over cycle moves subject to 0 <= theta <= cap.

    Each move shifts flow around a cycle, which leaves the divergence
    untouched; the 1-d quadratic is solved exactly and clipped to the box.
    """
    theta = theta.copy()
    energy = float(theta @ theta)
    for _ in range(max_sweeps):
        shifted = 0.0
        for ids, signs in cycles:
            vals = theta[ids]
            grad = float(signs @ vals)
            step = -grad / len(ids)
            lo = np.where(signs > 0, -vals, vals - capacities[ids]).max()
            hi = np.where(signs > 0, capacities[ids] - vals, vals).min()
            step = min(max(step, lo), hi)
            if step != 0.0:
                theta[ids] = vals + signs * step
                shifted = max(shifted, abs(step))
        new_energy = float(theta @ theta)
        if energy - new_energy <= rel_tol * max(energy, 1e-30) and shifted <= 1e-14:
            break
        energy = new_energy
    return np.clip(theta, 0.0, capacities)


def build_vertex_flow(
    model: ArcGraphModel,
    capacities,
    *,
    strength: float | None = None,
    source: int | None = None,
) -> VertexFlow:
    """Capacity-respecting vertex flow with uniform divergence on the torus.

    ``strength`` defaults to the box min-cut of the capacity pattern at the
    same N (the finite surrogate of the cut to infinity).  A zero strength
    request returns the zero flow.
    """
    g = model.graph
    meta = g.lattice
    if meta is None or meta.kind != "torus":
        raise GraphError("vertex flows are built on torus models")
    cap = np.asarray(capacities, dtype=np.float64)
    if cap.shape != (g.n_edges,):
        raise ParameterError("capacities must be defined on all edges")
    lo, hi = cap.min(), cap.max()
    if lo <= 0 or not np.isfinite(hi):
        raise ParameterError("capacities must be uniformly bounded and positive")
    if source is None:
        source = meta.origin
    if strength is None:
        strength = _boost_aware_min_cut(meta, cap)
    if strength == 0.0:
        return VertexFlow(np.zeros(g.n_edges), 0.0, source, 0.0)
    theta = _feasible_transshipment(g, cap, source, strength)
    theta = _energy_descent(theta, cap, _fundamental_cycles(g))
    target = np.full(g.n_vertices, -strength / g.n_vertices)
    target[source] += strength
    resid = np.abs(div_vertex(g, theta) - target).max()
    if resid > 1e-9:
        raise FlowError(f"divergence residual {resid:.2e} after descent")
    return VertexFlow(theta, float(strength), int(source), float(theta @ theta))


def _boost_aware_min_cut(meta, cap: np.ndarray) -> float:
    """Box min-cut at the torus N for torus capacities given per edge.

    The capacity pattern is read off a vertex far from the origin; edges
    whose capacity differs from the pattern (boosts near the origin) are
    transplanted into the box at the same offsets.
    """
    d, N = meta.d, meta.N
    g_box = box_model(BoxGraphSpec(d, max(N, 2)))
    box_meta = g_box.graph.lattice
    far = meta.coords[len(meta.coords) // 2]
    pattern = np.array([cap[meta.edge_id(far, k)] for k in range(2 * d)])
    boosts: dict = {}
    for v_idx in range(len(meta.coords)):
        coord = meta.coords[v_idx]
        for k in range(2 * d):
            c = cap[2 * d * v_idx + k]
            if c != pattern[k]:
                # torus coordinates live in [0, N); recenter around the origin
                centered = tuple(int(x) if x <= N // 2 else int(x) - N for x in coord)
                if max(abs(x) for x in centered) < box_meta.N:
                    boosts[(centered, k)] = float(c - pattern[k])
    return min_cut_lattice(pattern, max(N, 2), d, boosts).value


# ---------------------------------------------------------------------------
# arc lift


@dataclass(frozen=True)
class ArcFlow:
    """Nonnegative arc flow; when total, div = gamma (|E| 1_{e0} - 1)."""

    Theta: np.ndarray
    strength: float  # gamma
    source_edge: int
    total: bool = True

    def scaled(self, factor: float) -> "ArcFlow":
        return ArcFlow(self.Theta * factor, self.strength * factor, self.source_edge, self.total)

    def divergence_target(self, n_edges: int) -> np.ndarray:
        t = np.full(n_edges, -self.strength)
        t[self.source_edge] += self.strength * n_edges
        return t


def lift_to_arc_flow(
    model: ArcGraphModel,
    flow: VertexFlow,
    e0: int | None = None,
) -> ArcFlow:
    """Distribute a vertex flow over succeeding edge pairs.

    With ``m`` the vertex flow strength and ``x`` the common vertex of a pair
    ``(e, e')``,

        Theta(e, e') = (theta_e + m 1_{e=e0}) (theta_{e'} + m / (2 d N^d))
                       / (theta_out(x) + m / N^d),

    which yields exactly out-sums ``theta_e + m 1_{e=e0}`` (almost below the
    capacity), in-sums ``theta_{e'} + m/(2dN^d)``, and the total-flow
    divergence of strength ``gamma = m / (2 d N^d)``.  The denominators are
    positive whenever m > 0.
    """
    g = model.graph
    h = model.arcs
    meta = g.lattice
    if meta is None or meta.kind != "torus":
        raise GraphError("arc lifts are built on torus models")
    if e0 is None:
        e0 = meta.root_edge
    m = flow.strength
    if m <= 0.0:
        raise ParameterError("the lift needs positive strength (zero flow is degenerate)")
    d, n_vert = meta.d, g.n_vertices
    gamma = m / (2 * d * n_vert)
    theta = flow.theta
    out_sum = np.bincount(g.edge_tail, weights=theta, minlength=n_vert)
    a = theta.copy()
    a[e0] += m
    b = theta + gamma
    denom = out_sum + m / n_vert
    Theta = a[h.arc_src] * b[h.arc_dst] / denom[g.edge_head[h.arc_src]]
    return ArcFlow(Theta, float(gamma), int(e0))


def total_flow_for_exponent(
    model: ArcGraphModel,
    ws: WeightSystem,
    p: float,
    *,
    boost_direction: int = 0,
) -> tuple[ArcFlow, VertexFlow, float]:
    """The total arc flow of strength p/(2dN^d) used by the stationary-density
    bound, built from the boosted capacities.

    Returns (arc flow, underlying vertex flow, min-cut m of the boosted
    network).  Requires p <= m so the scaled flow stays below capacity.
    """
    boosted = alpha_boosted(model, ws, boost_direction)
    m = boosted_min_cut(ws, model.graph.lattice.N, boost_direction).value
    if p > m + 1e-12:
        raise ParameterError(f"exponent p={p} exceeds the min-cut {m}")
    vflow = build_vertex_flow(model, boosted.alpha, strength=m)
    lift = lift_to_arc_flow(model, vflow)
    return lift.scaled(p / m), vflow, m


# ---------------------------------------------------------------------------
# flow identities


@dataclass(frozen=True)
class FlowIdentityResult:
    """Log-domain values of the three expressions that must agree."""

    log_reversal_ratio: float  # log of rev_omega^rev_Theta / omega^Theta
    log_pi_divergence: float  # log of prod pi(e)^{div Theta (e)}
    log_pi_total: float | None  # log of prod (pi(e0)/pi(e))^gamma, total flows

    def max_relative_gap(self) -> float:
        vals = [self.log_reversal_ratio, self.log_pi_divergence]
        if self.log_pi_total is not None:
            vals.append(self.log_pi_total)
        scale = max(1.0, max(abs(v) for v in vals))
        return float((max(vals) - min(vals)) / scale)


def flow_identity_check(
    env: Environment,
    Theta: ArcFlow | np.ndarray,
    law=None,
) -> FlowIdentityResult:
    """Evaluate the reversal-ratio and stationary-power identities in logs.

    The ratio of reversed to forward cycle-type weights, the stationary law
    raised to the arc divergence, and (for total flows) the product of
    stationary ratios from the source edge are three routes to one number;
    all powers are computed as sums of logs, never by exponentiation.
    """
    from .chain import reverse_environment, stationary

    model = env.model
    if isinstance(Theta, ArcFlow):
        arr = Theta.Theta
        gamma = Theta.strength
        e0 = Theta.source_edge
        total = Theta.total
    else:
        arr = np.asarray(Theta, dtype=np.float64)
        gamma = None
        e0 = None
        total = False
    if np.any(arr < 0):
        raise ParameterError("arc flows must be nonnegative")
    if law is None:
        law = stationary(env)
    rev = reverse_environment(env, law)
    log_ratio = float(
        arr @ (np.log(rev.omega[model.reversal]) - np.log(env.omega))
    )
    log_pi = np.log(law.pi)
    div = div_arc(model.arcs, arr)
    log_div = float(div @ log_pi)
    log_total = None
    if total and gamma is not None:
        log_total = float(gamma * (model.n_edges * log_pi[e0] - log_pi.sum()))
    return FlowIdentityResult(log_ratio, log_div, log_total)
