"""
Communication graphs for the n-agent network.

A Graph wraps an undirected networkx graph with positive edge weights and
exposes the Laplacian L = D - W and its spectral bounds (smallest positive and
largest eigenvalue), which feed both the algorithms and the theory ledgers.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
import scipy.linalg

from src.utils.error_handler import GraphConstructionError, NumericalError, ParameterError

logger = logging.getLogger(__name__)

GRAPH_KINDS = ('ring', 'torus', 'complete', 'edge_list')

Edge = Tuple[int, int]


@dataclass(frozen=True)
class SpectralBounds:
    lambda_min_pos: float
    lambda_max: float

    def __post_init__(self):
        if not (0 < self.lambda_min_pos <= self.lambda_max * (1 + 1e-12)):
            raise NumericalError(
                f"invalid spectral bounds ({self.lambda_min_pos}, {self.lambda_max})"
            )


class Graph:
    """Connected undirected graph over agents 0..n-1 with positive weights"""

    def __init__(self, n: int, edges: Union[Iterable[Edge], Dict[Edge, float]], kind: str = 'edge_list'):
        if n < 1:
            raise ParameterError(f"agent count must be positive, got {n}", condition="n≥1")

        weights = dict(edges) if isinstance(edges, dict) else {tuple(e): 1.0 for e in edges}

        graph = nx.Graph()
        graph.add_nodes_from(range(n))
        for (i, j), w in weights.items():
            i, j = int(i), int(j)
            if i == j:
                raise GraphConstructionError(f"self-loop on agent {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphConstructionError(f"edge ({i},{j}) outside agents 0..{n - 1}")
            if not np.isfinite(w) or w <= 0:
                raise GraphConstructionError(f"edge ({i},{j}) has non-positive weight {w}")
            graph.add_edge(i, j, weight=float(w))

        if not nx.is_connected(graph):
            components = nx.number_connected_components(graph)
            raise GraphConstructionError(f"graph is disconnected ({components} components)")

        self.n = n
        self.kind = kind
        self._graph = graph

    @property
    def edges(self) -> FrozenSet[Edge]:
        return frozenset((min(i, j), max(i, j)) for i, j in self._graph.edges())

    @property
    def weights(self) -> Dict[Edge, float]:
        return {(min(i, j), max(i, j)): d['weight'] for i, j, d in self._graph.edges(data=True)}

    def neighbors(self, i: int) -> List[int]:
        return sorted(self._graph.neighbors(i))

    def degree(self, i: int) -> int:
        return self._graph.degree(i)

    @cached_property
    def laplacian(self) -> np.ndarray:
        """Dense L = D - W; rows and columns sum to zero"""
        mat = nx.laplacian_matrix(self._graph, nodelist=list(range(self.n)), weight='weight')
        lap = np.asarray(mat.toarray(), dtype=float)
        lap.setflags(write=False)
        return lap

    def describe(self) -> Dict[str, object]:
        return {'kind': self.kind, 'n': self.n, 'edges': len(self.edges)}


def build_graph(kind: str, n: int, rows: Optional[int] = None, cols: Optional[int] = None,
                edges: Optional[Union[Iterable[Edge], Dict[Edge, float]]] = None,
                path: Optional[str] = None) -> Graph:
    """Build a ring, torus(rows, cols), complete or edge-list graph with unit weights"""
    if kind not in GRAPH_KINDS:
        raise ParameterError(f"unknown graph kind '{kind}'", condition="graph.kind")
    if n < 2:
        raise ParameterError(f"need at least 2 agents, got {n}", condition="n≥2")

    if kind == 'ring':
        base = nx.cycle_graph(n)
    elif kind == 'complete':
        base = nx.complete_graph(n)
    elif kind == 'torus':
        if rows is None or cols is None or rows < 2 or cols < 2 or rows * cols != n:
            raise ParameterError(
                f"torus needs rows·cols = n with rows, cols ≥ 2 (rows={rows}, cols={cols}, n={n})",
                condition="rows·cols=n",
            )
        base = nx.grid_2d_graph(rows, cols, periodic=True)
        # (r, c) -> r*cols + c
        base = nx.convert_node_labels_to_integers(base, ordering='sorted')
    else:
        if edges is None and path is None:
            raise ParameterError("edge_list graph needs edges or a path", condition="graph.edges")
        if edges is None:
            edges = load_edge_list(path)
        graph = Graph(n, edges, kind='edge_list')
        logger.debug(f"🔗 Built edge_list graph: n={n}, {len(graph.edges)} edges")
        return graph

    graph = Graph(n, list(base.edges()), kind=kind)
    logger.debug(f"🔗 Built {kind} graph: n={n}, {len(graph.edges)} edges")
    return graph


def load_edge_list(path: str) -> Dict[Edge, float]:
    """Read `i j [w]` lines (0-indexed, '#' comments) into an edge-weight map"""
    try:
        frame = pd.read_csv(path, sep=r'\s+', header=None, comment='#', engine='python')
    except (OSError, pd.errors.ParserError) as e:
        raise GraphConstructionError(f"cannot read edge list {path}: {e}") from e

    if frame.shape[1] not in (2, 3):
        raise GraphConstructionError(f"edge list {path} needs 2 or 3 columns, found {frame.shape[1]}")

    weights: Dict[Edge, float] = {}
    for values in frame.itertuples(index=False):
        i, j = int(values[0]), int(values[1])
        w = float(values[2]) if len(values) == 3 else 1.0
        if (j, i) in weights or (i, j) in weights:
            continue
        weights[(i, j)] = w
    return weights


def laplacian(g: Graph) -> np.ndarray:
    return g.laplacian


def spectral_bounds(g: Graph) -> SpectralBounds:
    """Second-smallest and largest Laplacian eigenvalue"""
    try:
        eigenvalues = scipy.linalg.eigh(g.laplacian, eigvals_only=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigensolver failed: {e}") from e
    return SpectralBounds(lambda_min_pos=float(eigenvalues[1]), lambda_max=float(eigenvalues[-1]))


def mixing_matrix(g: Graph, epsilon: Optional[float] = None) -> np.ndarray:
    """Doubly stochastic W = I - L/(lambda_max + epsilon); epsilon defaults to lambda_max"""
    if g.n == 1:
        return np.ones((1, 1))
    bounds = spectral_bounds(g)
    eps = bounds.lambda_max if epsilon is None else epsilon
    if eps <= 0:
        raise ParameterError(f"mixing epsilon must be positive, got {eps}", condition="ε>0")
    return np.eye(g.n) - g.laplacian / (bounds.lambda_max + eps)
