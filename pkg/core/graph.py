from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import networkx as nx
import numpy as np

from core.models import ExchangeMatrix


@dataclass(frozen=True, slots=True)
class ExchangeGraph:
    n: int
    alpha: float
    edges: tuple[tuple[int, int], ...]

    def digraph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph


@dataclass(frozen=True, slots=True)
class TopologicalResult:
    acyclic: bool
    order: tuple[int, ...] | None
    cycle: tuple[int, ...] | None


def build_exchange_graph(x: ExchangeMatrix, alpha: float) -> ExchangeGraph:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    mask = x.values < 1.0 - alpha
    np.fill_diagonal(mask, False)
    edges = tuple((int(i), int(j)) for i, j in np.argwhere(mask))
    return ExchangeGraph(n=x.n, alpha=alpha, edges=edges)


def topological_order(g: ExchangeGraph) -> TopologicalResult:
    """Kahn's algorithm taking the lowest ready index first; a witness cycle otherwise."""
    graph = g.digraph()
    try:
        order = tuple(int(node) for node in nx.lexicographical_topological_sort(graph))
    except nx.NetworkXUnfeasible:
        cycle_edges = nx.find_cycle(graph)
        cycle = tuple(int(edge[0]) for edge in cycle_edges) + (int(cycle_edges[0][0]),)
        return TopologicalResult(acyclic=False, order=None, cycle=cycle)
    return TopologicalResult(acyclic=True, order=order, cycle=None)


def is_acyclic(g: ExchangeGraph) -> tuple[bool, tuple[int, ...] | None]:
    result = topological_order(g)
    return result.acyclic, result.cycle


def edges_from_to(g: ExchangeGraph, sources: Iterable[int], targets: Iterable[int]) -> list[tuple[int, int]]:
    a = set(sources)
    b = set(targets)
    if a & b:
        raise ValueError(f"agent sets overlap: {sorted(a & b)}")
    return sorted((j, i) for j, i in g.edges if j in a and i in b)
