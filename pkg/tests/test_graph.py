from __future__ import annotations

import numpy as np
import pytest

from core.graph import ExchangeGraph, build_exchange_graph, edges_from_to, is_acyclic, topological_order
from core.models import ExchangeMatrix


def test_full_exchange_has_no_edges() -> None:
    graph = build_exchange_graph(ExchangeMatrix.full(3), 0.1)
    assert graph.edges == ()
    assert is_acyclic(graph) == (True, None)
    assert topological_order(graph).order == (0, 1, 2)


def test_empty_exchange_is_a_two_cycle() -> None:
    graph = build_exchange_graph(ExchangeMatrix.zeros(2), 0.1)
    assert set(graph.edges) == {(0, 1), (1, 0)}
    acyclic, cycle = is_acyclic(graph)
    assert not acyclic
    assert cycle == (0, 1, 0)
    assert topological_order(graph).order is None


def test_threshold_is_strict() -> None:
    x = ExchangeMatrix.from_rows([[0.0, 0.95], [0.2, 0.0]])
    assert build_exchange_graph(x, 0.1).edges == ((1, 0),)

    alpha = 0.025
    edge = ExchangeMatrix.from_rows([[0.0, 1.0 - alpha], [0.0, 0.0]])
    assert build_exchange_graph(edge, alpha).edges == ((1, 0),)


def test_rejects_alpha_outside_unit_interval() -> None:
    with pytest.raises(ValueError, match="alpha"):
        build_exchange_graph(ExchangeMatrix.full(2), 0.0)
    with pytest.raises(ValueError, match="alpha"):
        build_exchange_graph(ExchangeMatrix.full(2), 1.0)


def test_dag_orders_lowest_ready_index_first() -> None:
    dag = ExchangeGraph(n=3, alpha=0.1, edges=((0, 1), (1, 2), (0, 2)))
    assert is_acyclic(dag) == (True, None)
    assert topological_order(dag).order == (0, 1, 2)

    fan = ExchangeGraph(n=3, alpha=0.1, edges=((2, 0), (2, 1)))
    assert topological_order(fan).order == (2, 0, 1)


def test_witness_is_a_closed_walk_along_edges() -> None:
    graph = ExchangeGraph(n=4, alpha=0.1, edges=((0, 1), (1, 2), (2, 3), (3, 1)))
    result = topological_order(graph)
    assert not result.acyclic
    assert result.cycle is not None
    assert result.cycle[0] == result.cycle[-1]
    for a, b in zip(result.cycle, result.cycle[1:]):
        assert (a, b) in graph.edges


def test_edges_from_to() -> None:
    assert edges_from_to(build_exchange_graph(ExchangeMatrix.full(2), 0.1), [1], [0]) == []
    cycle = build_exchange_graph(ExchangeMatrix.zeros(2), 0.1)
    assert edges_from_to(cycle, [1], [0]) == [(1, 0)]
    dag = ExchangeGraph(n=3, alpha=0.1, edges=((0, 1), (1, 2), (0, 2)))
    assert edges_from_to(dag, [1, 2], [0]) == []
    assert edges_from_to(dag, [0], [2, 1]) == [(0, 1), (0, 2)]


def test_edges_from_to_rejects_overlap() -> None:
    dag = ExchangeGraph(n=3, alpha=0.1, edges=((0, 1),))
    with pytest.raises(ValueError, match="overlap"):
        edges_from_to(dag, [0, 1], [1])


def test_raising_flows_never_adds_edges() -> None:
    rng = np.random.default_rng(3)
    for _ in range(100):
        low = rng.uniform(size=(4, 4))
        np.fill_diagonal(low, 0.0)
        high = np.minimum(1.0, low + rng.uniform(0.0, 0.2, size=(4, 4)))
        np.fill_diagonal(high, 0.0)
        before = set(build_exchange_graph(ExchangeMatrix(low), 0.05).edges)
        after = set(build_exchange_graph(ExchangeMatrix(high), 0.05).edges)
        assert after <= before
