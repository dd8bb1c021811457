import numpy as np
import pytest

from hyperwalk.graph import ArcGraphModel, DirectedGraph


@pytest.fixture
def three_cycle():
    return DirectedGraph(3, [0, 1, 2], [1, 2, 0])


@pytest.fixture
def two_vertex_model():
    # two vertices joined by two parallel edges each way; out-degree 2
    g = DirectedGraph(2, [0, 0, 1, 1], [1, 1, 0, 0])
    return ArcGraphModel.from_graph(g)


def random_strongly_connected(rng: np.random.Generator, n_vertices: int, extra_edges: int):
    """A Hamiltonian cycle plus random extra edges: strongly connected by
    construction, out-degrees stay small."""
    tails = list(range(n_vertices))
    heads = list(range(1, n_vertices)) + [0]
    for _ in range(extra_edges):
        a = int(rng.integers(n_vertices))
        b = int(rng.integers(n_vertices))
        if a != b:
            tails.append(a)
            heads.append(b)
    return DirectedGraph(n_vertices, tails, heads)
