"""Random environments on arc graphs: sampling, tilted laws, and moments.

A weight system assigns a positive weight ``alpha_e`` to every edge, a
positive weight ``Z_k`` to every arc, and an optional real tilt ``xi_k`` per
arc.  At each vertex the out-edge shares ``u`` follow the density
proportional to

    prod_{out e'} u_{e'}^(alpha_{e'} + xi_in_{e'} - 1)
        * prod_{in e} ( sum_{out e'} Z_{e,e'} u_{e'} )^(-(alpha_e + xi_out_e))

(the tilts add the total arc weight entering, resp. leaving, an edge), and
the arc transition kernel is

    omega(e, e') = Z_{e,e'} u_{e'} / sum_{e''} Z_{e,e''} u_{e''}.

Sampling is exact rejection from the Dirichlet proposal with the analytic
envelope ``prod_j (min_i Z_ji)^(-beta_j)``; with constant Z rows the
acceptance probability is identically 1 and the law reduces to Dirichlet.

Reproducibility: one counter-based stream per environment replica, derived
as ``SeedSequence(entropy=seed, spawn_key=(n_edges, replica))``; inside an
environment, vertices are sampled in one vectorized rejection sweep per
group of identical vertex parameters, in ascending order of the group's
first vertex id.  Identical ``(model, weights, seed)`` give bit-identical
environments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import json
import numpy as np
from pathlib import Path

from .graph import ArcGraphModel, GraphError, direction_vectors
from .hypergeom import (
    Estimate,
    HypergeomParams,
    ParameterError,
    SimplexPoint,
    estimate_from_samples,
    log_phi_quadrature,
)

_U_FLOOR = 1e-300  # simplex coordinates are clamped away from exact zero


class SamplerError(RuntimeError):
    """Raised when rejection sampling is hopeless for the given weights."""


@dataclass(frozen=True)
class WeightSystem:
    """Edge weights alpha, arc weights Z, and an optional arc tilt xi.

    ``pattern_alpha``/``pattern_Z`` record the translation-invariant lattice
    pattern (indexed by direction) when the system was built from one.
    """

    alpha: np.ndarray  # (n_edges,)
    Z: np.ndarray  # (n_arcs,)
    xi: np.ndarray | None = None  # (n_arcs,) or None for the untilted law
    pattern_alpha: np.ndarray | None = None  # (2d,) lattice pattern
    pattern_Z: np.ndarray | None = None  # (2d, 2d) lattice pattern

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        Z = np.asarray(self.Z, dtype=np.float64)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "Z", Z)
        if np.any(alpha <= 0):
            raise ParameterError("alpha must be strictly positive")
        if np.any(Z <= 0):
            raise ParameterError("Z must be strictly positive")
        if self.xi is not None:
            xi = np.asarray(self.xi, dtype=np.float64)
            if np.all(xi == 0):
                xi = None
            object.__setattr__(self, "xi", xi)

    def with_xi(self, xi) -> "WeightSystem":
        return replace(self, xi=None if xi is None else np.asarray(xi, dtype=np.float64))

    def with_alpha(self, alpha) -> "WeightSystem":
        return replace(self, alpha=np.asarray(alpha, dtype=np.float64), pattern_alpha=None)


def lattice_weights(
    model: ArcGraphModel,
    alpha_by_dir,
    Z_by_dir=None,
    *,
    special_alpha: float = 1.0,
) -> WeightSystem:
    """Translation-invariant weights on a torus or box model.

    ``alpha_by_dir`` is a scalar or a length-2d vector over directions
    ``(+e_1..+e_d, -e_1..-e_d)``; ``Z_by_dir`` is a scalar or a 2d x 2d
    matrix indexed by (direction of the incoming edge, direction of the
    outgoing edge).  On a box graph, edges into the boundary keep their
    direction's weights, the boundary return edge gets ``special_alpha``,
    and every arc touching it has Z = 1.
    """
    meta = model.graph.lattice
    if meta is None:
        raise GraphError("model was not built by a lattice builder")
    two_d = 2 * meta.d
    alpha_by_dir = np.broadcast_to(
        np.asarray(alpha_by_dir, dtype=np.float64), (two_d,)
    ).copy()
    if Z_by_dir is None:
        Z_by_dir = np.ones((two_d, two_d))
    Z_by_dir = np.broadcast_to(
        np.asarray(Z_by_dir, dtype=np.float64), (two_d, two_d)
    ).copy()

    edge_dir = meta.edge_dir
    alpha = np.where(edge_dir >= 0, alpha_by_dir[np.clip(edge_dir, 0, None)], special_alpha)
    h = model.arcs
    src_dir = edge_dir[h.arc_src]
    dst_dir = edge_dir[h.arc_dst]
    regular = (src_dir >= 0) & (dst_dir >= 0)
    Z = np.ones(h.n_arcs)
    Z[regular] = Z_by_dir[src_dir[regular], dst_dir[regular]]
    return WeightSystem(alpha, Z, pattern_alpha=alpha_by_dir, pattern_Z=Z_by_dir)


def reversed_weights(model: ArcGraphModel, ws: WeightSystem) -> WeightSystem:
    """Weights of the reversed model: alpha is shared (edge ids agree) and
    Z, xi are transported along the arc reversal map."""
    rev = model.reversal
    Z_rev = np.empty_like(ws.Z)
    Z_rev[rev] = ws.Z
    xi_rev = None
    if ws.xi is not None:
        xi_rev = np.empty_like(ws.xi)
        xi_rev[rev] = ws.xi
    return WeightSystem(ws.alpha.copy(), Z_rev, xi_rev)


def arc_tilt_sums(model: ArcGraphModel, xi) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge totals of an arc function: (leaving e, entering e)."""
    xi = np.asarray(xi, dtype=np.float64)
    h = model.arcs
    out = np.bincount(h.arc_src, weights=xi, minlength=h.n_nodes)
    inc = np.bincount(h.arc_dst, weights=xi, minlength=h.n_nodes)
    return out, inc


def tilted_edge_weights(model: ArcGraphModel, ws: WeightSystem) -> tuple[np.ndarray, np.ndarray]:
    """(u-side, denominator-side) edge exponents of the tilted law.

    The u-side exponent of e is alpha_e plus the tilt entering e; the
    denominator-side exponent is alpha_e plus the tilt leaving e.  Both must
    be strictly positive for the law to exist.
    """
    if ws.xi is None:
        return ws.alpha, ws.alpha
    xi_out, xi_in = arc_tilt_sums(model, ws.xi)
    u_side = ws.alpha + xi_in
    den_side = ws.alpha + xi_out
    if np.any(u_side <= 0) or np.any(den_side <= 0):
        raise ParameterError("tilt makes an edge exponent nonpositive")
    return u_side, den_side


def vertex_params(model: ArcGraphModel, ws: WeightSystem, x: int) -> HypergeomParams:
    """The simplex-integral parameters of vertex ``x`` under ``ws`` (with tilt)."""
    u_side, den_side = tilted_edge_weights(model, ws)
    return _vertex_params_from(model, ws, x, u_side, den_side)


def _vertex_params_from(model, ws, x, u_side, den_side) -> HypergeomParams:
    g, h = model.graph, model.arcs
    out_e = g.out_edges(x)
    in_e = g.in_edges(x)
    Z = np.empty((len(in_e), len(out_e)))
    for i, e in enumerate(in_e):
        sl = h.out_slice(int(e))
        # out-arcs of e target exactly the out-edges of x, ascending
        Z[i, :] = ws.Z[sl]
    return HypergeomParams(u_side[out_e], den_side[in_e], Z)


def log_F(model: ArcGraphModel, ws: WeightSystem, tol: float = 1e-9) -> float:
    """log of the product over vertices of the per-vertex simplex integrals.

    Identical vertex parameter sets are evaluated once (translation-invariant
    lattices pay for a single quadrature).
    """
    u_side, den_side = tilted_edge_weights(model, ws)
    cache: dict[bytes, float] = {}
    total = 0.0
    for x in range(model.n_vertices):
        p = _vertex_params_from(model, ws, x, u_side, den_side)
        key = p.alpha.tobytes() + p.beta.tobytes() + p.Z.tobytes()
        if key not in cache:
            cache[key] = log_phi_quadrature(p, tol)
        total += cache[key]
    return total


def F_product(model: ArcGraphModel, ws: WeightSystem, xi=None, tol: float = 1e-9) -> float:
    """Product over vertices of the per-vertex simplex integrals, with an
    optional extra arc tilt added on top of the system's own."""
    if xi is not None:
        base = np.zeros(model.n_arcs) if ws.xi is None else ws.xi
        ws = ws.with_xi(base + np.asarray(xi, dtype=np.float64))
    return float(np.exp(log_F(model, ws, tol)))


def marginal_moment(model: ArcGraphModel, ws: WeightSystem, arc: int, s: float, tol: float = 1e-9) -> float:
    """E[omega(e, e')^s] for a single arc, by the ratio of vertex integrals.

    Finite for ``s > -min(alpha_e, alpha_e')``; outside that window the
    integral diverges and a ParameterError is raised.
    """
    h = model.arcs
    e, e2 = int(h.arc_src[arc]), int(h.arc_dst[arc])
    x = int(model.graph.edge_head[e])
    base = np.zeros(model.n_arcs) if ws.xi is None else ws.xi.copy()
    delta = np.zeros(model.n_arcs)
    delta[arc] = s
    ws_shift = ws.with_xi(base + delta)
    try:
        p1 = vertex_params(model, ws_shift, x)
    except ParameterError as exc:
        raise ParameterError(
            f"moment order s={s} outside the finiteness window "
            f"(need s > -min(alpha_e, alpha_e') = {-min(ws.alpha[e], ws.alpha[e2])})"
        ) from exc
    p0 = vertex_params(model, ws, x)
    log_ratio = log_phi_quadrature(p1, tol) - log_phi_quadrature(p0, tol)
    return float(np.exp(s * np.log(ws.Z[arc]) + log_ratio))


# ---------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class Environment:
    """A realization of the environment: per-edge u and the arc kernel omega.

    ``u`` groups into one simplex per vertex (over its out-edges); ``omega``
    rows (arcs out of a fixed edge) sum to 1.  Environments obtained by time
    reversal carry ``omega`` only (``u`` is None); all invariants that
    involve u are enforced only when it is present.
    """

    model: ArcGraphModel
    ws: WeightSystem
    omega: np.ndarray
    u: np.ndarray | None = None
    denom: np.ndarray | None = None  # per-edge sum_{e'} Z_{e,e'} u_{e'}
    # sampled environments meet 1e-12; environments derived by time reversal
    # carry the weaker bound dictated by the stationary-law conditioning
    row_sum_tol: float = 1e-12

    def __post_init__(self):
        check_environment(self, self.row_sum_tol)

    def omega_row(self, e: int) -> np.ndarray:
        return self.omega[self.model.arcs.out_slice(e)]


def check_environment(env: Environment, tol: float = 1e-12) -> None:
    model = env.model
    h = model.arcs
    if env.omega.shape != (h.n_arcs,):
        raise ParameterError("omega must be defined on all arcs")
    if np.any(env.omega <= 0) or np.any(env.omega > 1):
        raise ParameterError("omega entries must lie in (0, 1]")
    row = np.bincount(h.arc_src, weights=env.omega, minlength=h.n_nodes)
    if np.abs(row - 1.0).max() > tol:
        raise ParameterError("omega rows must sum to 1")
    if env.u is not None:
        u = env.u
        if np.any(u <= 0) or np.any(u > 1):
            raise ParameterError("u must lie in (0, 1]")
        g = model.graph
        vsum = np.bincount(g.edge_tail, weights=u, minlength=g.n_vertices)
        if np.abs(vsum - 1.0).max() > tol:
            raise ParameterError("per-vertex u must sum to 1")
        omega = _omega_from_u(model, env.ws, u)[0]
        if np.abs(omega - env.omega).max() > tol:
            raise ParameterError("omega is not the kernel induced by u")


def _omega_from_u(model: ArcGraphModel, ws: WeightSystem, u: np.ndarray):
    h = model.arcs
    num = ws.Z * u[h.arc_dst]
    # arcs are grouped contiguously by source edge
    denom = np.add.reduceat(num, h._src_ptr[:-1])
    return num / denom[h.arc_src], denom


def _replica_rng(n_edges: int, seed, replica: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(n_edges, replica))
    )


def _rejection_batch(
    rng: np.random.Generator,
    alpha: np.ndarray,
    beta: np.ndarray,
    Z: np.ndarray,
    size: int,
    *,
    probe: int = 64,
    min_rate: float = 1e-4,
    max_rounds: int = 100000,
) -> np.ndarray:
    """``size`` exact draws from the vertex law by envelope rejection.

    Proposes Dirichlet(alpha) and accepts with probability
    ``prod_j ((Z u)_j / min_i Z_ji)^(-beta_j) <= 1``.  Aborts with
    SamplerError when a probe batch shows an acceptance rate below
    ``min_rate`` (use the importance-weighted moment path instead).
    """
    n = len(alpha)
    if n == 1:
        return np.ones((size, 1))
    log_zmin = np.log(Z.min(axis=1))
    out = np.empty((size, n))
    need = np.arange(size)
    first = True
    rounds = 0
    while len(need):
        rounds += 1
        if rounds > max_rounds:
            raise SamplerError("rejection sampling did not terminate")
        m = max(len(need), probe if first else 0)
        u = rng.dirichlet(alpha, size=m)
        u = np.clip(u, _U_FLOOR, None)
        log_acc = ((log_zmin - np.log(u @ Z.T)) @ beta)
        accept = np.log(rng.random(m)) < log_acc
        if first:
            rate = max(accept.mean(), np.exp(log_acc).mean())
            if rate < min_rate:
                raise SamplerError(
                    f"acceptance rate ~{rate:.2e} below {min_rate:.0e}; "
                    "use importance-weighted moments instead of exact sampling"
                )
            first = False
        got = u[accept][: len(need)]
        out[need[: len(got)]] = got
        need = need[len(got) :]
    return out


def _vertex_groups(model: ArcGraphModel, ws: WeightSystem):
    """Vertices grouped by identical (alpha, beta, Z) parameter sets,
    ordered by first vertex id."""
    u_side, den_side = tilted_edge_weights(model, ws)
    groups: dict[bytes, list[int]] = {}
    params: dict[bytes, HypergeomParams] = {}
    for x in range(model.n_vertices):
        p = _vertex_params_from(model, ws, x, u_side, den_side)
        key = p.alpha.tobytes() + p.beta.tobytes() + p.Z.tobytes()
        groups.setdefault(key, []).append(x)
        params.setdefault(key, p)
    ordered = sorted(groups.items(), key=lambda kv: kv[1][0])
    return [(params[k], np.array(vs, dtype=np.int64)) for k, vs in ordered]


def sample_u_vertex(model: ArcGraphModel, ws: WeightSystem, x: int, seed) -> SimplexPoint:
    """One exact draw of the out-edge shares at vertex ``x``."""
    p = vertex_params(model, ws, x)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(x,)))
    u = _rejection_batch(rng, p.alpha, p.beta, p.Z, 1)[0]
    return SimplexPoint(u)


def sample_environment(
    model: ArcGraphModel, ws: WeightSystem, seed, replica: int = 0
) -> Environment:
    """Sample a full environment; deterministic given (model, ws, seed, replica)."""
    u = sample_u_batch(model, ws, 1, seed, first_replica=replica)[0]
    omega, denom = _omega_from_u(model, ws, u)
    return Environment(model, ws, omega, u=u, denom=denom)


def sample_u_batch(
    model: ArcGraphModel,
    ws: WeightSystem,
    n_envs: int,
    seed,
    *,
    first_replica: int = 0,
) -> np.ndarray:
    """u for ``n_envs`` independent environments, shape (n_envs, n_edges).

    Replica ``i`` uses its own counter-based stream, so any single replica
    can be regenerated in isolation.
    """
    groups = _vertex_groups(model, ws)
    g = model.graph
    group_cols = [
        np.concatenate([g.out_edges(int(x)) for x in verts]) for _, verts in groups
    ]
    out = np.empty((n_envs, g.n_edges))
    for i in range(n_envs):
        rng = _replica_rng(g.n_edges, seed, first_replica + i)
        for (p, verts), cols in zip(groups, group_cols):
            draws = _rejection_batch(rng, p.alpha, p.beta, p.Z, len(verts))
            out[i, cols] = draws.reshape(-1)
    return out


def omega_from_u_batch(model: ArcGraphModel, ws: WeightSystem, u: np.ndarray):
    """Arc kernels for a batch of u rows: returns (omega, denom) arrays."""
    h = model.arcs
    num = ws.Z[None, :] * u[:, h.arc_dst]
    denom = np.add.reduceat(num, h._src_ptr[:-1], axis=1)
    return num / denom[:, h.arc_src], denom


# ---------------------------------------------------------------------------
# change of measure and moments


def rn_weight(env: Environment, theta) -> float:
    """The reweighting factor ``prod_e (u_e / denom_e)^(-theta_e)``.

    With ``Y`` any environment functional, the mean of ``rn_weight * Y``
    under the law with edge weights ``alpha + theta``, times
    ``F(alpha+theta)/F(alpha)``, equals the mean of ``Y`` under the law with
    weights ``alpha``.
    """
    if env.u is None or env.denom is None:
        raise ParameterError("rn_weight needs an environment with stored u")
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise ParameterError("theta must be nonnegative")
    logw = -float(theta @ (np.log(env.u) - np.log(env.denom)))
    return float(np.exp(logw))


def omega_power(env: Environment, xi) -> float:
    """``prod_k omega(k)^xi(k)`` in the log domain."""
    xi = np.asarray(xi, dtype=np.float64)
    return float(np.exp(xi @ np.log(env.omega)))


def moments_mc(
    model: ArcGraphModel,
    ws: WeightSystem,
    xi,
    n_samples: int,
    seed,
) -> Estimate:
    """Monte Carlo estimate of E[omega^xi] under the (possibly tilted) law."""
    xi = np.asarray(xi, dtype=np.float64)
    # validity of both the sampling law and the tilted one defining the moment
    base = np.zeros(model.n_arcs) if ws.xi is None else ws.xi
    tilted_edge_weights(model, ws.with_xi(base + xi))
    u = sample_u_batch(model, ws, n_samples, seed)
    omega, _ = omega_from_u_batch(model, ws, u)
    vals = np.exp(np.log(omega) @ xi)
    return estimate_from_samples(vals)


def moments_exact(
    model: ArcGraphModel, ws: WeightSystem, xi, tol: float = 1e-9
) -> float:
    """Closed form for E[omega^xi]: ``Z^xi * F(alpha; Theta+xi; Z) / F(alpha; Theta; Z)``.

    ``Theta`` is the system's own tilt.  Valid as long as both tilted
    parameter sets are strictly positive.
    """
    xi = np.asarray(xi, dtype=np.float64)
    base = np.zeros(model.n_arcs) if ws.xi is None else ws.xi
    log_num = log_F(model, ws.with_xi(base + xi), tol)
    log_den = log_F(model, ws, tol)
    return float(np.exp(xi @ np.log(ws.Z) + log_num - log_den))


# ---------------------------------------------------------------------------
# environment dumps


def dump_environment(env: Environment, path, provenance: dict | None = None) -> None:
    """Replayable full-precision dump: per-vertex u plus provenance header."""
    if env.u is None:
        raise ParameterError("only environments with stored u can be dumped")
    g = env.model.graph
    payload = {
        "provenance": {
            "n_vertices": g.n_vertices,
            "n_edges": g.n_edges,
            "alpha": [float(a) for a in env.ws.alpha],
            "Z": [float(z) for z in env.ws.Z],
            **(provenance or {}),
        },
        "u": {
            str(x): [float(env.u[e]) for e in g.out_edges(x)]
            for x in range(g.n_vertices)
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


def load_environment(model: ArcGraphModel, ws: WeightSystem, path) -> Environment:
    payload = json.loads(Path(path).read_text())
    g = model.graph
    u = np.empty(g.n_edges)
    for x in range(g.n_vertices):
        u[g.out_edges(x)] = payload["u"][str(x)]
    omega, denom = _omega_from_u(model, ws, u)
    return Environment(model, ws, omega, u=u, denom=denom)
