"""Directed multigraphs, their arc graphs, lattice builders, and flow primitives.

The walks studied by this package are chains on the *arc graph* of a base
directed graph: states are directed edges, transitions are succeeding edge
pairs.  Everything downstream (environments, stationary laws, flows) indexes
edges and arcs by the dense integer ids assigned here, so id assignment is
deterministic and documented:

* lattice graphs enumerate vertices in row-major (C) order over coordinates
  and edges as ``2d * vertex_rank + direction``, directions ordered
  ``(+e_1 .. +e_d, -e_1 .. -e_d)``;
* general graphs keep edge insertion order;
* arcs are sorted lexicographically by ``(source edge id, target edge id)``.

Graphs are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised for invalid graph construction or queries."""


def direction_vectors(d: int) -> np.ndarray:
    """Unit steps ``(+e_1 .. +e_d, -e_1 .. -e_d)`` as a ``(2d, d)`` int array."""
    eye = np.eye(d, dtype=np.int64)
    return np.vstack([eye, -eye])


def opposite_direction(k: int, d: int) -> int:
    return k + d if k < d else k - d


class DirectedGraph:
    """Finite strongly connected directed multigraph with dense edge ids.

    Parallel edges are permitted (and needed, e.g. by the N=2 torus); edges
    are identified by id, not by their endpoints.
    """

    def __init__(
        self,
        n_vertices: int,
        edge_tail,
        edge_head,
        *,
        vertex_labels: list | None = None,
        check: bool = True,
    ):
        self.n_vertices = int(n_vertices)
        self.edge_tail = np.asarray(edge_tail, dtype=np.int64)
        self.edge_head = np.asarray(edge_head, dtype=np.int64)
        if self.edge_tail.shape != self.edge_head.shape or self.edge_tail.ndim != 1:
            raise GraphError("edge_tail and edge_head must be 1-d arrays of equal length")
        self.n_edges = len(self.edge_tail)
        if self.n_edges == 0:
            raise GraphError("graph has no edges")
        for arr in (self.edge_tail, self.edge_head):
            if arr.min() < 0 or arr.max() >= self.n_vertices:
                raise GraphError("edge endpoint out of range")
        self.vertex_labels = vertex_labels
        self.lattice = None  # set by lattice builders

        order = np.argsort(self.edge_tail, kind="stable")
        self._out_idx = order.astype(np.int64)
        self._out_ptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(self._out_ptr, self.edge_tail + 1, 1)
        np.cumsum(self._out_ptr, out=self._out_ptr)

        order = np.argsort(self.edge_head, kind="stable")
        self._in_idx = order.astype(np.int64)
        self._in_ptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(self._in_ptr, self.edge_head + 1, 1)
        np.cumsum(self._in_ptr, out=self._in_ptr)

        self.out_degree = np.diff(self._out_ptr)
        self.in_degree = np.diff(self._in_ptr)
        if check:
            self._check_strongly_connected()

    def _check_strongly_connected(self) -> None:
        # The standing assumption behind every identity in this package.
        if self.out_degree.min() == 0 or self.in_degree.min() == 0:
            raise GraphError("graph has a sink or source vertex")
        data = np.ones(self.n_edges, dtype=np.int8)
        adj = sp.csr_matrix(
            (data, (self.edge_tail, self.edge_head)),
            shape=(self.n_vertices, self.n_vertices),
        )
        n_comp, _ = connected_components(adj, directed=True, connection="strong")
        if n_comp != 1:
            raise GraphError("graph is not strongly connected")

    def out_edges(self, v: int) -> np.ndarray:
        """Edge ids leaving ``v``, ascending."""
        return self._out_idx[self._out_ptr[v] : self._out_ptr[v + 1]]

    def in_edges(self, v: int) -> np.ndarray:
        """Edge ids entering ``v``, ascending."""
        return self._in_idx[self._in_ptr[v] : self._in_ptr[v + 1]]

    def reverse(self) -> "DirectedGraph":
        """Graph with every edge reversed; edge ids are preserved."""
        rev = DirectedGraph(
            self.n_vertices,
            self.edge_head.copy(),
            self.edge_tail.copy(),
            vertex_labels=self.vertex_labels,
            check=False,
        )
        rev.lattice = self.lattice
        return rev


class ArcGraph:
    """Graph whose nodes are the edges of a base graph and whose arcs are
    the succeeding pairs ``(e, e')`` with ``head(e) = tail(e')``.

    Arc ids sort lexicographically by ``(arc_src, arc_dst)``, so the arcs
    leaving a given edge form one contiguous id range.
    """

    def __init__(self, base: DirectedGraph, arc_src, arc_dst):
        self.base = base
        self.arc_src = np.asarray(arc_src, dtype=np.int64)
        self.arc_dst = np.asarray(arc_dst, dtype=np.int64)
        self.n_arcs = len(self.arc_src)
        self.n_nodes = base.n_edges

        self._src_ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(self._src_ptr, self.arc_src + 1, 1)
        np.cumsum(self._src_ptr, out=self._src_ptr)

        order = np.argsort(self.arc_dst, kind="stable")
        self._dst_idx = order.astype(np.int64)
        self._dst_ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(self._dst_ptr, self.arc_dst + 1, 1)
        np.cumsum(self._dst_ptr, out=self._dst_ptr)

    def out_arcs(self, e: int) -> np.ndarray:
        """Arc ids with source edge ``e`` (a contiguous range)."""
        return np.arange(self._src_ptr[e], self._src_ptr[e + 1], dtype=np.int64)

    def in_arcs(self, e: int) -> np.ndarray:
        """Arc ids with target edge ``e``."""
        return self._dst_idx[self._dst_ptr[e] : self._dst_ptr[e + 1]]

    def out_slice(self, e: int) -> slice:
        return slice(int(self._src_ptr[e]), int(self._src_ptr[e + 1]))

    def arc_index(self, e: int, e2: int) -> int:
        """Id of the arc ``(e, e2)``; raises GraphError if absent."""
        lo, hi = self._src_ptr[e], self._src_ptr[e + 1]
        pos = lo + np.searchsorted(self.arc_dst[lo:hi], e2)
        if pos >= hi or self.arc_dst[pos] != e2:
            raise GraphError(f"({e}, {e2}) is not an arc")
        return int(pos)


def build_arc_graph(g: DirectedGraph) -> ArcGraph:
    """Arc graph of ``g``: all couples of succeeding edges.

    Rejects graphs with a sink or source vertex (every edge must have at
    least one successor and one predecessor).
    """
    if g.out_degree.min() == 0 or g.in_degree.min() == 0:
        raise GraphError("graph has a sink or source vertex")
    # arcs out of edge e: (e, e') for each e' leaving head(e); e' ids ascending
    counts = g.out_degree[g.edge_head]
    src = np.repeat(np.arange(g.n_edges, dtype=np.int64), counts)
    dst = np.concatenate([g.out_edges(int(h)) for h in g.edge_head])
    return ArcGraph(g, src, dst)


def arc_reversal_map(h: ArcGraph, h_rev: ArcGraph) -> np.ndarray:
    """For each arc ``(e, e')`` of ``h``, the id of ``(e', e)`` in ``h_rev``.

    ``h_rev`` must be the arc graph of the reversed base graph (edge ids are
    shared between a graph and its reversal).  The map is an involution
    between the two arc sets.
    """
    if h.n_arcs != h_rev.n_arcs:
        raise GraphError("arc graphs are not reversals of each other")
    # find (e', e) among arcs of h_rev, which are sorted by (src, dst)
    key_rev = h_rev.arc_src * h_rev.n_nodes + h_rev.arc_dst
    key = h.arc_dst * h.n_nodes + h.arc_src
    pos = np.searchsorted(key_rev, key)
    if np.any(pos >= h_rev.n_arcs) or np.any(key_rev[pos] != key):
        raise GraphError("arc graphs are not reversals of each other")
    return pos.astype(np.int64)


@dataclass(frozen=True)
class ArcGraphModel:
    """A strongly connected graph bundled with its arc graph and reversal maps.

    ``reversal[k]`` maps arc ``k = (e, e')`` to the arc ``(e', e)`` of the
    reversed model; edge ids agree between the two models.
    """

    graph: DirectedGraph
    arcs: ArcGraph
    reversed_graph: DirectedGraph
    reversed_arcs: ArcGraph
    reversal: np.ndarray

    @classmethod
    def from_graph(cls, g: DirectedGraph) -> "ArcGraphModel":
        h = build_arc_graph(g)
        g_rev = g.reverse()
        h_rev = build_arc_graph(g_rev)
        return cls(g, h, g_rev, h_rev, arc_reversal_map(h, h_rev))

    def reverse(self) -> "ArcGraphModel":
        inv = np.empty_like(self.reversal)
        inv[self.reversal] = np.arange(len(self.reversal))
        return ArcGraphModel(
            self.reversed_graph, self.reversed_arcs, self.graph, self.arcs, inv
        )

    @property
    def n_vertices(self) -> int:
        return self.graph.n_vertices

    @property
    def n_edges(self) -> int:
        return self.graph.n_edges

    @property
    def n_arcs(self) -> int:
        return self.arcs.n_arcs


# ---------------------------------------------------------------------------
# lattice builders


@dataclass(frozen=True)
class TorusSpec:
    """d-dimensional discrete torus of side N, rooted at an edge into the origin."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise GraphError("dimension must be >= 1")
        if self.N < 2:
            raise GraphError("torus side must be >= 2")


@dataclass(frozen=True)
class BoxGraphSpec:
    """Box of radius N around the origin with its boundary collapsed to one
    vertex, plus a single return edge from the boundary vertex to ``x0``.

    Interior vertices are the lattice points with sup-norm < N; every lattice
    edge from an interior vertex to a boundary point becomes a distinct edge
    into the boundary vertex.  ``x0`` must be an interior neighbor of the
    origin so the root edge ``(x0, 0)`` exists.
    """

    d: int
    N: int
    x0: tuple | None = None

    def __post_init__(self):
        if self.d < 1:
            raise GraphError("dimension must be >= 1")
        if self.N < 2:
            raise GraphError("box radius must be >= 2")
        x0 = self.x0
        if x0 is None:
            x0 = tuple([-1] + [0] * (self.d - 1))
            object.__setattr__(self, "x0", x0)
        if len(x0) != self.d or sum(abs(c) for c in x0) != 1:
            raise GraphError("x0 must be a lattice neighbor of the origin")
        if max(abs(c) for c in x0) >= self.N:
            raise GraphError("x0 must be interior")


@dataclass
class LatticeMeta:
    """Lattice bookkeeping attached to graphs built by the lattice builders."""

    kind: str  # "torus" | "box"
    d: int
    N: int
    coords: np.ndarray  # (n lattice vertices, d) integer coordinates
    edge_dir: np.ndarray  # direction index per edge; -1 for the special edge
    origin: int  # vertex id of the lattice origin
    root_edge: int  # edge (x0, 0) with head at the origin
    boundary_vertex: int | None = None  # box only
    special_edge: int | None = None  # box only: the edge (boundary, x0)

    def vertex_id(self, coord) -> int:
        coord = np.asarray(coord, dtype=np.int64)
        if self.kind == "torus":
            coord = np.mod(coord, self.N)
            return int(np.ravel_multi_index(coord, (self.N,) * self.d))
        shifted = coord + (self.N - 1)
        if np.any(shifted < 0) or np.any(shifted > 2 * self.N - 2):
            raise GraphError(f"{tuple(coord)} is not an interior vertex")
        return int(np.ravel_multi_index(shifted, (2 * self.N - 1,) * self.d))

    def edge_id(self, coord, direction: int) -> int:
        """Id of the edge leaving ``coord`` in lattice direction ``direction``."""
        return 2 * self.d * self.vertex_id(coord) + int(direction)


def build_torus(spec: TorusSpec) -> tuple[DirectedGraph, ArcGraph]:
    """Directed N-torus in d dimensions and its arc graph.

    Every vertex has the 2d out-edges ``(x, x + e_k)``; for N = 2 the two
    edges in opposite directions share endpoints and are kept as distinct
    parallel edges.
    """
    d, N = spec.d, spec.N
    shape = (N,) * d
    n_v = N**d
    dirs = direction_vectors(d)
    coords = np.stack(np.unravel_index(np.arange(n_v), shape), axis=1)
    tails = np.repeat(np.arange(n_v, dtype=np.int64), 2 * d)
    head_coords = (coords[:, None, :] + dirs[None, :, :]) % N
    heads = np.ravel_multi_index(
        np.moveaxis(head_coords.reshape(-1, d), 1, 0), shape
    ).astype(np.int64)
    g = DirectedGraph(n_v, tails, heads)
    origin = int(np.ravel_multi_index((0,) * d, shape))
    meta = LatticeMeta(
        kind="torus",
        d=d,
        N=N,
        coords=coords,
        edge_dir=np.tile(np.arange(2 * d, dtype=np.int64), n_v),
        origin=origin,
        root_edge=0,  # fixed below
    )
    # root edge (x0, 0) with x0 = -e_1: the +e_1 edge out of x0
    x0 = np.zeros(d, dtype=np.int64)
    x0[0] = -1
    meta.root_edge = meta.edge_id(x0, 0)
    g.lattice = meta
    return g, build_arc_graph(g)


def build_box_graph(spec: BoxGraphSpec) -> tuple[DirectedGraph, ArcGraph]:
    """Box graph with collapsed boundary and its arc graph.

    Every interior vertex keeps its 2d out-edges (those crossing the boundary
    point at the boundary vertex, one distinct edge per crossing); the
    boundary vertex has the single out-edge to ``x0``, appended last.
    """
    d, N = spec.d, spec.N
    side = 2 * N - 1
    shape = (side,) * d
    n_int = side**d
    boundary = n_int
    dirs = direction_vectors(d)
    coords = np.stack(np.unravel_index(np.arange(n_int), shape), axis=1) - (N - 1)

    tails = np.repeat(np.arange(n_int, dtype=np.int64), 2 * d)
    head_coords = coords[:, None, :] + dirs[None, :, :]
    flat = head_coords.reshape(-1, d)
    inside = np.all(np.abs(flat) <= N - 1, axis=1)
    heads = np.full(len(flat), boundary, dtype=np.int64)
    shifted = flat[inside] + (N - 1)
    heads[inside] = np.ravel_multi_index(np.moveaxis(shifted, 1, 0), shape)

    tails = np.concatenate([tails, [boundary]])
    x0_id = int(
        np.ravel_multi_index(np.asarray(spec.x0, dtype=np.int64) + (N - 1), shape)
    )
    heads = np.concatenate([heads, [x0_id]])
    edge_dir = np.concatenate(
        [np.tile(np.arange(2 * d, dtype=np.int64), n_int), [-1]]
    )

    g = DirectedGraph(n_int + 1, tails, heads)
    meta = LatticeMeta(
        kind="box",
        d=d,
        N=N,
        coords=coords,
        edge_dir=edge_dir,
        origin=int(np.ravel_multi_index((N - 1,) * d, shape)),
        root_edge=0,
        boundary_vertex=boundary,
        special_edge=g.n_edges - 1,
    )
    # root edge (x0, 0): the edge out of x0 pointing at the origin
    x0 = np.asarray(spec.x0, dtype=np.int64)
    direction = int(np.where(np.all(dirs == -x0, axis=1))[0][0])
    meta.root_edge = meta.edge_id(x0, direction)
    g.lattice = meta
    return g, build_arc_graph(g)


def torus_model(spec: TorusSpec) -> ArcGraphModel:
    g, h = build_torus(spec)
    return _model_from_parts(g, h)


def box_model(spec: BoxGraphSpec) -> ArcGraphModel:
    g, h = build_box_graph(spec)
    return _model_from_parts(g, h)


def _model_from_parts(g: DirectedGraph, h: ArcGraph) -> ArcGraphModel:
    g_rev = g.reverse()
    h_rev = build_arc_graph(g_rev)
    return ArcGraphModel(g, h, g_rev, h_rev, arc_reversal_map(h, h_rev))


# ---------------------------------------------------------------------------
# divergence operators


def div_vertex(g: DirectedGraph, theta) -> np.ndarray:
    """Vertex divergence of an edge function: out-sum minus in-sum at each vertex."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (g.n_edges,):
        raise GraphError("theta must be defined on all edges")
    out = np.bincount(g.edge_tail, weights=theta, minlength=g.n_vertices)
    inc = np.bincount(g.edge_head, weights=theta, minlength=g.n_vertices)
    return out - inc


def div_arc(h: ArcGraph, Theta) -> np.ndarray:
    """Edge divergence of an arc function: out-arc sum minus in-arc sum at each edge."""
    Theta = np.asarray(Theta, dtype=np.float64)
    if Theta.shape != (h.n_arcs,):
        raise GraphError("Theta must be defined on all arcs")
    out = np.bincount(h.arc_src, weights=Theta, minlength=h.n_nodes)
    inc = np.bincount(h.arc_dst, weights=Theta, minlength=h.n_nodes)
    return out - inc


# ---------------------------------------------------------------------------
# max-flow / min-cut (Dinic)


@dataclass
class MaxFlowResult:
    """Certified max-flow: the flow attains the value of the returned cut."""

    flow: np.ndarray  # per original edge
    flow_value: float
    cut_value: float
    cut_edges: np.ndarray  # edge ids crossing the returned minimum cut
    source_side: np.ndarray  # bool mask of vertices on the source side


def max_flow_min_cut(
    g: DirectedGraph, capacities, source: int, sink: int
) -> MaxFlowResult:
    """Max flow from ``source`` to ``sink`` with a min-cut certificate.

    Dinic's algorithm on the residual network; augmenting paths scan
    out-edges in ascending edge id for determinism.  Real capacities are used
    directly; residuals below ``1e-12 * max capacity`` count as saturated.
    """
    cap = np.asarray(capacities, dtype=np.float64)
    if cap.shape != (g.n_edges,):
        raise GraphError("capacities must be defined on all edges")
    if np.any(cap <= 0):
        raise GraphError("capacities must be strictly positive")
    if source == sink:
        raise GraphError("source and sink must differ")
    eps = 1e-12 * float(cap.max())

    n = g.n_vertices
    m = g.n_edges
    # residual arcs 2*e (forward) and 2*e+1 (backward)
    res = np.empty(2 * m, dtype=np.float64)
    res[0::2] = cap
    res[1::2] = 0.0
    to = np.empty(2 * m, dtype=np.int64)
    to[0::2] = g.edge_head
    to[1::2] = g.edge_tail
    # adjacency: for each vertex the residual arc ids, ascending edge id
    adj: list[list[int]] = [[] for _ in range(n)]
    for e in range(m):
        adj[g.edge_tail[e]].append(2 * e)
        adj[g.edge_head[e]].append(2 * e + 1)

    level = np.empty(n, dtype=np.int64)

    def bfs() -> bool:
        level.fill(-1)
        level[source] = 0
        queue = [source]
        qi = 0
        while qi < len(queue):
            v = queue[qi]
            qi += 1
            for a in adj[v]:
                w = to[a]
                if res[a] > eps and level[w] < 0:
                    level[w] = level[v] + 1
                    queue.append(w)
        return level[sink] >= 0

    def dfs(v: int, pushed: float, it: list[int]) -> float:
        if v == sink:
            return pushed
        while it[v] < len(adj[v]):
            a = adj[v][it[v]]
            w = to[a]
            if res[a] > eps and level[w] == level[v] + 1:
                got = dfs(w, min(pushed, res[a]), it)
                if got > 0:
                    res[a] -= got
                    res[a ^ 1] += got
                    return got
            it[v] += 1
        return 0.0

    import sys

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, n + 100))
    try:
        total = 0.0
        while bfs():
            it = [0] * n
            while True:
                pushed = dfs(source, np.inf, it)
                if pushed <= 0:
                    break
                total += pushed
    finally:
        sys.setrecursionlimit(old_limit)

    flow = cap - res[0::2]
    # cut: vertices reachable from source in the residual network
    reach = np.zeros(n, dtype=bool)
    reach[source] = True
    stack = [source]
    while stack:
        v = stack.pop()
        for a in adj[v]:
            w = to[a]
            if res[a] > eps and not reach[w]:
                reach[w] = True
                stack.append(int(w))
    cut_mask = reach[g.edge_tail] & ~reach[g.edge_head]
    cut_edges = np.where(cut_mask)[0]
    cut_value = float(cap[cut_edges].sum())
    if abs(cut_value - total) > 1e-9 * max(1.0, cut_value, total):
        raise GraphError(
            f"max-flow certificate failed: flow {total:.12g} vs cut {cut_value:.12g}"
        )
    return MaxFlowResult(flow, float(total), cut_value, cut_edges, reach)


# ---------------------------------------------------------------------------
# graph file format

_LATTICE_KINDS = {"torus", "box"}


def load_graph_file(path) -> tuple[DirectedGraph, ArcGraph, dict]:
    """Load a graph description from structured text (JSON).

    Two shapes are accepted.  Lattice graphs::

        {"kind": "torus" | "box", "d": 3, "N": 4}

    Explicit graphs::

        {"vertices": 3,
         "edges": [{"id": 0, "tail": 0, "head": 1, "alpha": 1.0}, ...],
         "Z": {"kind": "ones"} | {"kind": "arcs", "values": [[src, dst, z], ...]}}

    Edge ids must be dense ``0..|E|-1``.  Returns the graph, its arc graph,
    and a dict with any weight data found in the file.
    """
    spec = json.loads(Path(path).read_text())
    if spec.get("kind") in _LATTICE_KINDS:
        d, N = int(spec["d"]), int(spec["N"])
        if spec["kind"] == "torus":
            g, h = build_torus(TorusSpec(d, N))
        else:
            g, h = build_box_graph(BoxGraphSpec(d, N))
        return g, h, {k: spec[k] for k in ("alpha", "Z") if k in spec}

    edges = sorted(spec["edges"], key=lambda e: e["id"])
    ids = [e["id"] for e in edges]
    if ids != list(range(len(edges))):
        raise GraphError("edge ids must be dense 0..|E|-1")
    tails = [e["tail"] for e in edges]
    heads = [e["head"] for e in edges]
    g = DirectedGraph(int(spec["vertices"]), tails, heads)
    h = build_arc_graph(g)
    weights: dict = {}
    if any("alpha" in e for e in edges):
        weights["alpha"] = [float(e.get("alpha", 1.0)) for e in edges]
    if "Z" in spec:
        weights["Z"] = spec["Z"]
    return g, h, weights


def save_graph_file(path, g: DirectedGraph, alpha=None) -> None:
    edges = []
    for e in range(g.n_edges):
        rec = {"id": e, "tail": int(g.edge_tail[e]), "head": int(g.edge_head[e])}
        if alpha is not None:
            rec["alpha"] = float(alpha[e])
        edges.append(rec)
    Path(path).write_text(
        json.dumps({"vertices": g.n_vertices, "edges": edges}, indent=1)
    )
