"""Quenched chains on the arc graph: stationary law, time reversal, cycles,
hitting probabilities, killed Green functions, and trap times.

The chain state is the current edge; a step moves along an arc ``(e, e')``
with probability ``omega(e, e')``.  Everything here is per-environment and
deterministic given its inputs; Monte Carlo lives in the experiments module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import (
    Environment,
    WeightSystem,
    omega_power,
    reversed_weights,
)
from .graph import ArcGraphModel, GraphError, direction_vectors
from .hypergeom import ParameterError

_DENSE_LIMIT = 600  # states; beyond this the solvers go sparse


class SolverError(RuntimeError):
    """Raised when a linear solve fails its residual contract."""


@dataclass(frozen=True)
class StationaryLaw:
    """Stationary distribution over edges; positive, sums to 1, residual <= 1e-12."""

    pi: np.ndarray
    residual: float


def _transition_matrix(env: Environment) -> sp.csr_matrix:
    h = env.model.arcs
    return sp.csr_matrix(
        (env.omega, (h.arc_src, h.arc_dst)), shape=(h.n_nodes, h.n_nodes)
    )


def stationary_residual(env: Environment, pi: np.ndarray) -> float:
    h = env.model.arcs
    flow = np.bincount(
        h.arc_dst, weights=pi[h.arc_src] * env.omega, minlength=h.n_nodes
    )
    return float(np.abs(flow - pi).max())


def stationary(env: Environment, tol: float = 1e-12) -> StationaryLaw:
    """Unique stationary law of the quenched chain by direct linear solve.

    One balance equation is replaced by the normalization row; a couple of
    iterative-refinement sweeps push the residual to rounding level.
    """
    n = env.model.arcs.n_nodes
    P = _transition_matrix(env)

    if n <= _DENSE_LIMIT:
        A = P.toarray().T - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
        for _ in range(2):  # iterative refinement at fixed matrix
            r = b - A @ pi
            pi = pi + np.linalg.solve(A, r)
    else:
        A = (P.T - sp.eye(n)).tolil()
        A[-1, :] = 1.0
        A = A.tocsc()
        b = np.zeros(n)
        b[-1] = 1.0
        lu = spla.splu(A)
        pi = lu.solve(b)
        for _ in range(2):
            pi = pi + lu.solve(b - A @ pi)

    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi <= 0):
        raise SolverError("stationary law has nonpositive entries")
    pi = pi / pi.sum()
    res = stationary_residual(env, pi)
    if res > tol:
        raise SolverError(f"stationarity residual {res:.2e} exceeds {tol:.0e}")
    return StationaryLaw(pi, res)


def stationary_batch(env_model: ArcGraphModel, omegas: np.ndarray) -> np.ndarray:
    """Stationary laws for a batch of small environments (dense, batched LAPACK)."""
    h = env_model.arcs
    n = h.n_nodes
    B = omegas.shape[0]
    A = np.zeros((B, n, n))
    A[:, h.arc_dst, h.arc_src] = omegas  # transposed kernel
    A -= np.eye(n)[None, :, :]
    A[:, -1, :] = 1.0
    b = np.zeros((B, n))
    b[:, -1] = 1.0
    pi = np.linalg.solve(A, b[..., None])[..., 0]
    resid = b - np.einsum("bij,bj->bi", A, pi)
    pi = pi + np.linalg.solve(A, resid[..., None])[..., 0]
    pi /= pi.sum(axis=1, keepdims=True)
    return pi


def reverse_environment(env: Environment, law: StationaryLaw | None = None) -> Environment:
    """Time-reversed environment on the reversed model.

    ``rev_omega(rev k) = pi(e) omega(k) / pi(e')`` for ``k = (e, e')``; its
    rows sum to 1 by stationarity and its stationary law is ``pi`` itself
    transported to reversed edges.
    """
    if law is None:
        law = stationary(env)
    model = env.model
    h = model.arcs
    w = law.pi[h.arc_src] * env.omega / law.pi[h.arc_dst]
    omega_rev = np.empty_like(w)
    omega_rev[model.reversal] = w
    ws_rev = reversed_weights(model, env.ws)
    # the reversed row sums equal (stationarity defect)/pi entrywise; tiny
    # stationary masses bound the accuracy any solver can certify
    row_tol = max(1e-12, 16.0 * max(law.residual, 1e-16) / float(law.pi.min()))
    return Environment(
        model.reverse(), ws_rev, np.clip(omega_rev, None, 1.0), row_sum_tol=row_tol
    )


def reversed_omega_batch(model: ArcGraphModel, omegas: np.ndarray, pis: np.ndarray) -> np.ndarray:
    h = model.arcs
    w = pis[:, h.arc_src] * omegas / pis[:, h.arc_dst]
    out = np.empty_like(w)
    out[:, model.reversal] = w
    return np.clip(out, None, 1.0)


# ---------------------------------------------------------------------------
# cycles


@dataclass(frozen=True)
class CycleOnArcs:
    """A closed edge sequence ``e_0, ..., e_n = e_0`` with consecutive arcs."""

    edges: tuple

    def __post_init__(self):
        if len(self.edges) < 2 or self.edges[0] != self.edges[-1]:
            raise ParameterError("cycle must be closed (first edge repeated last)")

    def arcs(self, model: ArcGraphModel) -> np.ndarray:
        h = model.arcs
        return np.array(
            [
                h.arc_index(int(self.edges[k]), int(self.edges[k + 1]))
                for k in range(len(self.edges) - 1)
            ],
            dtype=np.int64,
        )

    def reversed_cycle(self) -> "CycleOnArcs":
        """The corresponding cycle of reversed edges, traversed backwards.

        Edge ids are shared between a model and its reversal, so the result
        is a cycle on the reversed model with the same id tuple reversed.
        """
        return CycleOnArcs(tuple(reversed(self.edges)))

    def visit_counts(self, n_edges: int) -> np.ndarray:
        counts = np.zeros(n_edges)
        for e in self.edges[:-1]:
            counts[e] += 1
        return counts


def collection_arc_counts(model: ArcGraphModel, cycles) -> np.ndarray:
    """Multiplicity of every arc across a collection of cycles."""
    xi = np.zeros(model.n_arcs)
    for c in cycles:
        np.add.at(xi, c.arcs(model), 1.0)
    return xi


def cycle_weight(env: Environment, cycle: CycleOnArcs) -> float:
    """Product of the arc probabilities along the cycle."""
    return float(np.exp(np.log(env.omega[cycle.arcs(env.model)]).sum()))


def collection_weight(env: Environment, cycles) -> float:
    return float(
        np.exp(sum(np.log(env.omega[c.arcs(env.model)]).sum() for c in cycles))
    )


def cycle_moment_exact(
    model: ArcGraphModel, ws: WeightSystem, cycles, tol: float = 1e-9
) -> float:
    """Mean of the cycle-collection weight in closed form.

    Equals ``Z_C * F(alpha + N; Z) / F(alpha; Z)`` where ``N_e`` counts the
    visits of the collection to edge ``e``; only vertices the collection
    touches contribute to the ratio.  Empty collections give 1.
    """
    cycles = list(cycles)
    if not cycles:
        return 1.0
    xi = collection_arc_counts(model, cycles)
    from .environment import moments_exact

    return moments_exact(model, ws, xi, tol)


def random_cycles(
    model: ArcGraphModel,
    n_cycles: int,
    seed,
    max_len: int = 12,
) -> list[CycleOnArcs]:
    """Short cycles found by seeded random walks on the arc graph."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77,)))
    h = model.arcs
    out: list[CycleOnArcs] = []
    seen = set()
    attempts = 0
    while len(out) < n_cycles:
        attempts += 1
        if attempts > 10000 * n_cycles:
            raise GraphError("could not find enough short cycles")
        start = int(rng.integers(model.n_edges))
        path = [start]
        for _ in range(max_len):
            e = path[-1]
            sl = h.out_slice(e)
            nxt = int(h.arc_dst[int(rng.integers(sl.start, sl.stop))])
            path.append(nxt)
            if nxt == start:
                break
        if path[-1] != start or len(path) < 2:
            continue
        key = tuple(path)
        if key in seen:
            continue
        seen.add(key)
        out.append(CycleOnArcs(tuple(path)))
    return out


# ---------------------------------------------------------------------------
# hitting probabilities and Green functions


def last_exit_distribution(env: Environment, e0: int) -> np.ndarray:
    """For each edge ``e``, the chance that the step entering the first
    return to ``e0`` is taken from ``e``.

    Computed from expected visit counts before the return: ``v`` solves
    ``v (I - Q) = delta_{e0}`` with transitions into ``e0`` removed, and the
    result is ``v(e) * omega(e, e0)``.  Nonzero only on in-neighbors of e0.
    """
    model = env.model
    n = model.arcs.n_nodes
    P = _transition_matrix(env).toarray() if n <= _DENSE_LIMIT else None
    if P is None:
        raise SolverError("last_exit_distribution supports dense sizes only")
    Q = P.copy()
    Q[:, e0] = 0.0
    rhs = np.zeros(n)
    rhs[e0] = 1.0
    v = np.linalg.solve(np.eye(n) - Q.T, rhs)
    return v * P[:, e0]


def hitting_prob_check(env: Environment, e0: int | None = None):
    """Both sides of the per-environment first-return identity.

    Left: the last-step distribution of the first return to ``e0``, by a
    linear solve.  Right: the first-step probabilities of the reversed chain
    out of the reversed ``e0``, read off the reversed kernel.  Returns
    ``(lhs, rhs)`` over the in-neighbor edges of ``e0`` (ascending), which
    agree to solver accuracy for every environment.
    """
    model = env.model
    if e0 is None:
        meta = model.graph.lattice
        e0 = meta.root_edge if meta is not None else 0
    law = stationary(env)
    rev = reverse_environment(env, law)
    h = model.arcs
    in_arcs = h.in_arcs(e0)
    order = np.argsort(h.arc_src[in_arcs], kind="stable")
    in_arcs = in_arcs[order]
    lhs_full = last_exit_distribution(env, e0)
    lhs = lhs_full[h.arc_src[in_arcs]]
    rhs = rev.omega[model.reversal[in_arcs]]
    return lhs, rhs


def killed_transition_matrix(env: Environment, absorbed) -> sp.csr_matrix:
    """Transition matrix with the rows and columns of absorbed edges removed
    (set to zero): walkers entering an absorbed edge vanish."""
    h = env.model.arcs
    absorbed = np.asarray(list(absorbed), dtype=np.int64)
    keep = ~(np.isin(h.arc_src, absorbed) | np.isin(h.arc_dst, absorbed))
    return sp.csr_matrix(
        (env.omega[keep], (h.arc_src[keep], h.arc_dst[keep])),
        shape=(h.n_nodes, h.n_nodes),
    )


def _solve_killed(A, b: np.ndarray, *, dense: bool) -> np.ndarray:
    """Killed-chain linear solve: dense LU below the size cutoff, classical
    AMG with GMRES acceleration above it, direct sparse LU as fallback."""
    if dense:
        return np.linalg.solve(A, b)
    try:
        import pyamg
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ml = pyamg.ruge_stuben_solver(sp.csr_matrix(A))
            x = ml.solve(b, tol=1e-12, accel="gmres", maxiter=100)
        if np.abs(A @ x - b).max() <= 1e-10 * max(1.0, np.abs(b).max()):
            return x
    except Exception:
        pass
    return spla.splu(sp.csc_matrix(A)).solve(b)


def green_function_killed(env: Environment, e0: int | None = None, kill_edge: int | None = None) -> float:
    """Expected visits to ``e0`` (counting time 0) before hitting the kill edge.

    On a box graph the kill edge defaults to the boundary return edge, so
    this is the Green function of the walk killed on exit.  By the Markov
    property it equals the reciprocal of the escape probability; it is
    computed here by its own visit-count solve so the two routes stay
    independent.
    """
    model = env.model
    meta = model.graph.lattice
    if kill_edge is None:
        if meta is None or meta.special_edge is None:
            raise GraphError("kill_edge is required outside box graphs")
        kill_edge = meta.special_edge
    if e0 is None:
        e0 = meta.root_edge if meta is not None else 0
    if e0 == kill_edge:
        raise ParameterError("e0 must differ from the kill edge")
    n = model.arcs.n_nodes
    Q = killed_transition_matrix(env, [kill_edge])
    b = np.zeros(n)
    b[e0] = 1.0
    dense = n <= _DENSE_LIMIT
    A = (sp.eye(n) - Q).toarray() if dense else (sp.eye(n, format="csr") - Q)
    g = _solve_killed(A, b, dense=dense)
    val = float(g[e0])
    if val < 1.0 - 1e-9:
        raise SolverError(f"Green value {val} below the certain time-0 visit")
    return val


def escape_probability(env: Environment, e0: int | None = None, kill_edge: int | None = None) -> float:
    """Chance of hitting the kill edge before returning to ``e0``.

    Independent route from :func:`green_function_killed`: a first-step
    decomposition with both ``e0`` and the kill edge absorbing.
    """
    model = env.model
    meta = model.graph.lattice
    if kill_edge is None:
        if meta is None or meta.special_edge is None:
            raise GraphError("kill_edge is required outside box graphs")
        kill_edge = meta.special_edge
    if e0 is None:
        e0 = meta.root_edge if meta is not None else 0
    n = model.arcs.n_nodes
    arcs = model.arcs
    b = np.zeros(n)
    into_kill = arcs.in_arcs(kill_edge)
    b[arcs.arc_src[into_kill]] = env.omega[into_kill]
    Q = killed_transition_matrix(env, [kill_edge, e0])
    dense = n <= _DENSE_LIMIT
    A = (sp.eye(n) - Q).toarray() if dense else (sp.eye(n, format="csr") - Q)
    rhs = b.copy()
    rhs[e0] = 0.0
    rhs[kill_edge] = 0.0
    h = _solve_killed(A, rhs, dense=dense)
    row = env.omega_row(e0)
    dsts = arcs.arc_dst[arcs.out_slice(e0)]
    p = 0.0
    for w, dst in zip(row, dsts):
        if dst == kill_edge:
            p += float(w)
        elif dst != e0:
            p += float(w) * float(h[dst])
    return p


# ---------------------------------------------------------------------------
# trap times


def trap_edges(model: ArcGraphModel, direction: int) -> tuple[int, int]:
    """Edge ids of the two-edge trap in lattice ``direction``: the edge out
    of the origin and its reversal."""
    meta = model.graph.lattice
    if meta is None:
        raise GraphError("trap times need a lattice model")
    d = meta.d
    e_fwd = meta.edge_id(np.zeros(d, dtype=np.int64), direction)
    dirs = direction_vectors(d)
    opp = direction + d if direction < d else direction - d
    e_back = meta.edge_id(dirs[direction], opp)
    return e_fwd, e_back


def trap_round_trip_prob(env: Environment, direction: int) -> float:
    """omega(e_i, rev e_i) * omega(rev e_i, e_i) for the trap in ``direction``."""
    e_fwd, e_back = trap_edges(env.model, direction)
    h = env.model.arcs
    a1 = h.arc_index(e_fwd, e_back)
    a2 = h.arc_index(e_back, e_fwd)
    return float(env.omega[a1] * env.omega[a2])


def trap_time_mean_quenched(env: Environment, direction: int) -> float:
    """Quenched mean trap time 1 / (1 - round-trip probability)."""
    return 1.0 / (1.0 - trap_round_trip_prob(env, direction))


def trap_time_sample(env: Environment, direction: int, seed) -> int:
    """Simulate the walk inside the trap; returns the number of forward-edge
    visits before it leaves the two-edge set (a geometric variable with mean
    ``1/(1 - round-trip probability)`` under the quenched law)."""
    e_fwd, e_back = trap_edges(env.model, direction)
    h = env.model.arcs
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(direction,)))
    visits = 1
    state = e_fwd
    while True:
        sl = h.out_slice(state)
        nxt = int(h.arc_dst[sl][rng.choice(sl.stop - sl.start, p=env.omega[sl])])
        if state == e_fwd:
            if nxt != e_back:
                return visits
        else:
            if nxt != e_fwd:
                return visits
            visits += 1
        state = nxt


# ---------------------------------------------------------------------------
# weak time reversal


@dataclass(frozen=True)
class WeakReversalResult:
    """Per-cycle two-sided comparison of the reversal identity."""

    cycle: CycleOnArcs
    forward_mean: float
    forward_se: float
    reversed_mean: float
    reversed_se: float
    exact: float | None
    z_score: float


def check_weak_reversal(
    model: ArcGraphModel,
    ws: WeightSystem,
    cycles,
    n_samples: int,
    seed,
    *,
    with_exact: bool = True,
    exact_tol: float = 1e-6,
    exact_max_degree: int = 3,
    batch: int = 4096,
) -> list[WeakReversalResult]:
    """Compare both laws of the cycle weights under time reversal.

    Side one samples the environment, reverses it through its stationary law
    and evaluates the reversed cycles; side two samples the reversed weight
    system directly.  Valid only when the edge weights have zero vertex
    divergence, which is what makes the two laws coincide.
    """
    from .environment import omega_from_u_batch, sample_u_batch
    from .graph import div_vertex

    div = div_vertex(model.graph, ws.alpha)
    if np.abs(div).max() > 1e-9:
        raise ParameterError("weak reversal requires div(alpha) = 0")
    if ws.xi is not None:
        raise ParameterError("weak reversal is stated for the untilted law")

    cycles = list(cycles)
    rev_model = model.reverse()
    ws_rev = reversed_weights(model, ws)
    rev_cycles = [c.reversed_cycle() for c in cycles]
    # both sides evaluate the reversed cycles on the reversed model
    rev_arcs = [c.arcs(rev_model) for c in rev_cycles]

    sums1 = np.zeros((len(cycles), 2))
    sums2 = np.zeros((len(cycles), 2))
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        u = sample_u_batch(model, ws, m, seed, first_replica=done)
        omega, _ = omega_from_u_batch(model, ws, u)
        pi = stationary_batch(model, omega)
        om_rev = reversed_omega_batch(model, omega, pi)
        logw = np.log(om_rev)
        for i, arcs in enumerate(rev_arcs):
            vals = np.exp(logw[:, arcs].sum(axis=1))
            sums1[i] += (vals.sum(), (vals**2).sum())

        # disjoint replica block so the two sides are independent
        u2 = sample_u_batch(rev_model, ws_rev, m, seed, first_replica=n_samples + done)
        omega2, _ = omega_from_u_batch(rev_model, ws_rev, u2)
        logw2 = np.log(omega2)
        for i, arcs in enumerate(rev_arcs):
            vals = np.exp(logw2[:, arcs].sum(axis=1))
            sums2[i] += (vals.sum(), (vals**2).sum())
        done += m

    out = []
    nn = float(n_samples)
    for i, c in enumerate(cycles):
        m1, s1 = sums1[i, 0] / nn, np.sqrt(
            max(sums1[i, 1] / nn - (sums1[i, 0] / nn) ** 2, 0.0) / nn
        )
        m2, s2 = sums2[i, 0] / nn, np.sqrt(
            max(sums2[i, 1] / nn - (sums2[i, 0] / nn) ** 2, 0.0) / nn
        )
        denom = float(np.hypot(s1, s2))
        z = 0.0 if denom == 0 and m1 == m2 else float((m1 - m2) / denom) if denom else np.inf
        exact = None
        # deterministic quadrature is cheap enough for routine use only up
        # to 2-d vertex integrals; beyond that the two MC sides stand alone
        if with_exact and int(model.graph.out_degree.max()) <= exact_max_degree:
            exact = cycle_moment_exact(rev_model, ws_rev, [rev_cycles[i]], exact_tol)
        out.append(WeakReversalResult(c, m1, s1, m2, s2, exact, z))
    return out
