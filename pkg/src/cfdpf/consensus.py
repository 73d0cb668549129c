"""Network topology, Metropolis consensus weights and iterative average consensus."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphError(RuntimeError):
    pass


@dataclass
class NetworkGraph:
    adjacency: np.ndarray
    positions: np.ndarray
    connectivity_radius: float

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=bool)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GraphError("adjacency must be square")
        if np.any(np.diag(A)):
            raise GraphError("self-loops are not allowed")
        if not np.array_equal(A, A.T):
            raise GraphError("adjacency must be symmetric")
        self.adjacency = A
        self.positions = np.asarray(self.positions, dtype=float).reshape(A.shape[0], 2)

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1)

    def neighbours(self, l):
        return np.flatnonzero(self.adjacency[l])

    def edges(self):
        i, j = np.nonzero(np.triu(self.adjacency))
        return list(zip(i.tolist(), j.tolist()))

    def is_connected(self):
        n = self.n_nodes
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(self.adjacency[u] & ~seen):
                seen[v] = True
                stack.append(v)
        return bool(seen.all())

    @classmethod
    def from_edges(cls, n, edges, positions=None, radius=float("nan")):
        A = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            A[i, j] = A[j, i] = True
        if positions is None:
            positions = np.zeros((n, 2))
        return cls(A, positions, radius)


def default_radius(n, region_side=1.0):
    """sqrt(2 log N / N), scaled to the side of the region."""
    return region_side * math.sqrt(2.0 * math.log(n) / n)


def random_geometric_graph(n, radius=None, region_side=16.0, rng=None, origin=None, max_tries=1000):
    """Uniform nodes in a square, edge iff distance <= radius; redrawn until connected.

    ``origin`` is the lower-left corner (default: square centred on 0).
    """
    if n < 2:
        raise GraphError("need at least two nodes")
    rng = rng if rng is not None else np.random.default_rng()
    if radius is None:
        radius = default_radius(n, region_side)
    lo = np.asarray(origin if origin is not None else (-region_side / 2.0, -region_side / 2.0), dtype=float)
    for _ in range(max_tries):
        pos = lo + region_side * rng.random((n, 2))
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        A = d <= radius
        np.fill_diagonal(A, False)
        g = NetworkGraph(A, pos, radius)
        if g.is_connected():
            return g
    raise GraphError("could not generate connected graph")


@dataclass
class ConsensusMatrix:
    U: np.ndarray
    eigenvalues: np.ndarray = field(init=False)
    convergence_time: float = field(init=False)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        ev = np.linalg.eigvals(self.U)
        self.eigenvalues = np.sort(np.abs(ev))[::-1]
        self.convergence_time = convergence_time(self.U)

    @property
    def n_nodes(self):
        return self.U.shape[0]


def metropolis_weights(graph: NetworkGraph) -> ConsensusMatrix:
    """U_lj = 1 / (1 + max(deg_l, deg_j)) on edges, diagonal fills rows to 1."""
    A = graph.adjacency
    deg = graph.degrees
    U = np.where(A, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
    np.fill_diagonal(U, 1.0 - U.sum(axis=1))
    return ConsensusMatrix(U)


def convergence_time(U) -> float:
    """N_c(U) = -1 / max_{i>=2} log|lambda_i(U)|."""
    U = U.U if isinstance(U, ConsensusMatrix) else np.asarray(U, dtype=float)
    if U.shape[0] == 1:
        return 0.0
    lam = np.sort(np.abs(np.linalg.eigvals(U)))[::-1]
    lam2 = lam[1]
    if lam2 >= 1.0 - 1e-15:
        return math.inf
    if lam2 <= 1e-15:
        return 0.0
    return -1.0 / math.log(lam2)


@dataclass
class ConsensusState:
    values: np.ndarray  # shape (N, *value_shape)
    iteration: int = 0
    disagreement: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("consensus values must be finite")

    @classmethod
    def from_list(cls, per_node):
        arrs = [np.asarray(v, dtype=float) for v in per_node]
        if len({a.shape for a in arrs}) != 1:
            raise ValueError("shape mismatch between node values")
        return cls(np.stack(arrs))


def _max_disagreement(values):
    mean = values.mean(axis=0)
    diff = (values - mean).reshape(values.shape[0], -1)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def run_consensus(state: ConsensusState, U, iterations: int) -> ConsensusState:
    """Synchronous rounds X_l <- sum_j U_lj X_j, elementwise on any value shape."""
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    Umat = U.U if isinstance(U, ConsensusMatrix) else np.asarray(U, dtype=float)
    X = state.values
    if X.shape[0] != Umat.shape[0]:
        raise ValueError("shape mismatch: one value per node required")
    flat = X.reshape(X.shape[0], -1)
    trace = [_max_disagreement(X)]
    for _ in range(iterations):
        flat = Umat @ flat
        trace.append(_max_disagreement(flat))
    return ConsensusState(flat.reshape(X.shape), state.iteration + iterations, trace)


# -- JSON fixtures -------------------------------------------------------------


def graph_to_dict(graph: NetworkGraph, U: ConsensusMatrix | None = None):
    U = U or metropolis_weights(graph)
    return {
        "n_nodes": graph.n_nodes,
        "connectivity_radius": graph.connectivity_radius,
        "nodes": [{"id": i, "x": float(p[0]), "y": float(p[1])} for i, p in enumerate(graph.positions)],
        "edges": [list(e) for e in graph.edges()],
        "U": U.U.tolist(),
        "convergence_time": U.convergence_time,
    }


def graph_from_dict(doc):
    n = doc["n_nodes"]
    pos = np.array([[nd["x"], nd["y"]] for nd in sorted(doc["nodes"], key=lambda d: d["id"])])
    g = NetworkGraph.from_edges(n, doc["edges"], pos, doc.get("connectivity_radius", float("nan")))
    U = ConsensusMatrix(np.array(doc["U"])) if "U" in doc else metropolis_weights(g)
    return g, U


def save_graph(graph, path, U=None):
    Path(path).write_text(json.dumps(graph_to_dict(graph, U), indent=2))


def load_graph(path):
    return graph_from_dict(json.loads(Path(path).read_text()))
