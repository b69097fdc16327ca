"""Weighted undirected communication graphs and their Laplacian spectra."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError

SPECTRAL_TOL = 1e-9


@dataclass(frozen=True)
class NetworkGraph:
    n_agents: int
    adjacency: np.ndarray
    laplacian: np.ndarray = field(repr=False)
    spectrum: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def degrees(self) -> np.ndarray:
        # symmetric adjacency, so in- and out-degree coincide
        return self.adjacency.sum(axis=0)

    @property
    def lambda_2(self) -> float:
        return float(self.spectrum[1]) if self.n_agents > 1 else 0.0

    @property
    def lambda_n(self) -> float:
        return float(self.spectrum[-1])

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        row = self.adjacency[i]
        return [(int(j), float(row[j])) for j in np.flatnonzero(row)]

    def edges(self) -> list[tuple[int, int, float]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j), float(self.adjacency[i, j])) for i, j in zip(iu, ju)]


@dataclass(frozen=True)
class GammaMatrix:
    matrix: np.ndarray
    lambda_gamma: float


def _finish(adjacency: np.ndarray) -> NetworkGraph:
    adjacency = np.array(adjacency, dtype=float)
    adjacency.setflags(write=False)
    # L = D_out - A with d_i^out = sum_j a_ji
    laplacian = np.diag(adjacency.sum(axis=0)) - adjacency
    laplacian.setflags(write=False)
    vals, vecs = np.linalg.eigh(laplacian)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return NetworkGraph(adjacency.shape[0], adjacency, laplacian, vals, vecs)


def build_graph(n: int, edges) -> NetworkGraph:
    """Build a graph on ``n`` nodes from ``(i, j, weight)`` triples.

    Each undirected edge is given once; listing both orientations counts as a
    duplicate and is rejected.
    """
    if int(n) != n or n < 1:
        raise GraphError(f"node count must be a positive integer, got {n!r}")
    n = int(n)
    adjacency = np.zeros((n, n))
    seen = {}
    for k, edge in enumerate(edges):
        try:
            i, j, w = edge
        except (TypeError, ValueError):
            raise GraphError(f"edge #{k} must be an (i, j, weight) triple, got {edge!r}") from None
        if int(i) != i or int(j) != j:
            raise GraphError(f"edge #{k}: endpoints must be integers, got ({i!r}, {j!r})")
        i, j, w = int(i), int(j), float(w)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge #{k}: endpoint out of range for n={n}: ({i}, {j})")
        if i == j:
            raise GraphError(f"edge #{k}: self-loop on node {i} is not allowed")
        if not np.isfinite(w) or w <= 0:
            raise GraphError(f"edge ({i}, {j}): weight must be positive and finite, got {w}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(
                f"duplicate edge between nodes {key[0]} and {key[1]} "
                f"(entries #{seen[key]} and #{k})"
            )
        seen[key] = k
        adjacency[i, j] = adjacency[j, i] = w
    return _finish(adjacency)


def graph_from_adjacency(adjacency, atol: float = 0.0) -> NetworkGraph:
    """Convert a dense adjacency matrix, rejecting asymmetric or looped input."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise GraphError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GraphError("adjacency contains non-finite entries")
    if np.any(np.diag(a) != 0):
        raise GraphError("adjacency has nonzero diagonal (self-loops)")
    if np.any(a < 0):
        raise GraphError("adjacency has negative weights")
    bad = np.argwhere(np.abs(a - a.T) > atol)
    if bad.size:
        i, j = bad[0]
        raise GraphError(f"adjacency is not symmetric: a[{i},{j}]={a[i, j]} but a[{j},{i}]={a[j, i]}")
    return _finish((a + a.T) / 2)


def ring_graph(n: int, weight: float = 1.0) -> NetworkGraph:
    if n < 3:
        raise GraphError("a ring needs at least 3 nodes")
    return build_graph(n, [(i, (i + 1) % n, weight) for i in range(n)])


def is_connected(g: NetworkGraph) -> bool:
    """Breadth-first reachability from node 0."""
    seen = np.zeros(g.n_agents, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(g.adjacency[i] > 0):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


def spectrally_connected(g: NetworkGraph, tol: float = SPECTRAL_TOL) -> bool:
    if g.n_agents == 1:
        return True
    return g.lambda_2 > tol


def consensus_projector(n: int) -> np.ndarray:
    return np.eye(n) - np.ones((n, n)) / n


def gamma_matrix(g: NetworkGraph, lambda_gamma: float = 1.0) -> GammaMatrix:
    """Positive definite Gamma with Gamma L = L Gamma = I - 11^T/N.

    Built from the Laplacian eigenbasis: the consensus direction gets the free
    eigenvalue ``lambda_gamma``, every other eigenvector gets 1/lambda_k.
    """
    if not lambda_gamma > 0:
        raise GraphError(f"lambda_gamma must be positive, got {lambda_gamma}")
    if not is_connected(g):
        raise GraphError("Gamma requires a connected graph (Assumption 1: undirected and connected)")
    n = g.n_agents
    vecs = g.eigenvectors[:, 1:]
    gamma = lambda_gamma * np.ones((n, n)) / n + (vecs / g.spectrum[1:]) @ vecs.T
    gamma = (gamma + gamma.T) / 2
    gamma.setflags(write=False)
    return GammaMatrix(gamma, float(lambda_gamma))
