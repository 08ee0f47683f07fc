import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schursort import (
    InputError,
    ParameterError,
    TopoOrder,
    WeightedDag,
    chain_graph,
    collider_graph,
    generate_er,
    generate_sf,
    is_valid_topo,
)
from schursort.dag import parents


def test_single_node_er_has_no_edges():
    g = generate_er(1, 0, 0)
    assert g.d == 1 and not g.edges


def test_two_node_er_density_one_gives_single_edge():
    g = generate_er(2, 1, 0)
    assert len(g.edges) == 1


def test_er_edge_count_matches_binomial_mean():
    # d=50, 1225 pairs, p=100/1225; mean over seeds within 3 standard errors
    d, target = 50, 100
    counts = [len(generate_er(d, target, seed).edges) for seed in range(1000)]
    p = target / (d * (d - 1) / 2)
    se = np.sqrt(d * (d - 1) / 2 * p * (1 - p) / len(counts))
    assert abs(np.mean(counts) - target) < 3 * se


def test_er_invalid_density_rejected():
    with pytest.raises(ParameterError):
        generate_er(3, 10, 0)


def test_er_reproducible():
    assert generate_er(20, 40, 7).to_json() == generate_er(20, 40, 7).to_json()


def test_sf_two_nodes():
    g = generate_sf(2, 1, 0)
    assert g.edges == {(0, 1)}


def test_sf_tree_shape():
    g = generate_sf(5, 1, 0)
    assert len(g.edges) == 4
    for i in range(1, 5):
        assert len(g.parents(i)) == 1


def test_sf_attach_m_out_of_range():
    with pytest.raises(ParameterError):
        generate_sf(5, 5, 0)


def test_sf_hubs_exceed_er_out_degree():
    # preferential attachment forms hubs; compare max out-degree distributions
    def max_out(g):
        return max((len(g.children(i)) for i in range(g.d)), default=0)

    sf = []
    er = []
    for seed in range(100):
        gsf = generate_sf(100, 2, seed)
        sf.append(max_out(gsf))
        er.append(max_out(generate_er(100, len(gsf.edges), seed)))
    assert np.mean(sf) > np.mean(er)


def test_parents_queries():
    g = chain_graph(3)
    assert parents(g, 2) == {1}
    assert parents(g, 0) == set()
    assert collider_graph().parents(2) == {0, 1}


def test_is_valid_topo_on_chain():
    g = chain_graph(3)
    assert is_valid_topo(g, TopoOrder([[0], [1], [2]]))
    assert not is_valid_topo(g, TopoOrder([[2], [1], [0]]))


def test_is_valid_topo_parallel_leaves_any_block_order():
    g = WeightedDag(3, {(0, 1), (0, 2)}, {(0, 1): 1.0, (0, 2): 1.0}, np.ones(3))
    assert is_valid_topo(g, TopoOrder([[0], [1, 2]]))
    assert is_valid_topo(g, TopoOrder([[0], [2, 1]]))


def test_is_valid_topo_rejects_non_cover():
    g = chain_graph(3)
    with pytest.raises(InputError):
        is_valid_topo(g, TopoOrder([[0], [1]]))
    with pytest.raises(InputError):
        is_valid_topo(g, TopoOrder([[0], [1], [1, 2]]))


def test_cycle_rejected():
    with pytest.raises(InputError):
        WeightedDag(2, {(0, 1), (1, 0)}, {(0, 1): 1.0, (1, 0): 1.0}, np.ones(2))


def test_weights_must_cover_edges():
    with pytest.raises(InputError):
        WeightedDag(2, {(0, 1)}, {}, np.ones(2))


def test_sigma_positive():
    with pytest.raises(ParameterError):
        WeightedDag(2, set(), {}, np.array([1.0, 0.0]))


@settings(max_examples=25, deadline=None)
@given(
    d=st.integers(min_value=1, max_value=30),
    density=st.floats(min_value=0.0, max_value=1.0),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_generated_graphs_are_acyclic_with_valid_generating_order(d, density, seed):
    max_edges = d * (d - 1) // 2
    g = generate_er(d, density * max_edges, seed)
    order = g.topological_sort()
    assert order is not None and sorted(order) == list(range(d))
    assert is_valid_topo(g, TopoOrder.from_permutation(order))


@settings(max_examples=25, deadline=None)
@given(
    d=st.integers(min_value=2, max_value=30),
    seed=st.integers(min_value=0, max_value=2**31),
    data=st.data(),
)
def test_sf_graphs_are_acyclic(d, seed, data):
    m = data.draw(st.integers(min_value=1, max_value=d - 1))
    g = generate_sf(d, m, seed)
    assert g.topological_sort() is not None


def test_json_round_trip_lossless():
    g = generate_er(15, 40, 3)
    g2 = WeightedDag.from_json(g.to_json())
    assert g2.edges == g.edges
    for e in g.edges:
        assert g2.weights[e] == g.weights[e]  # bitwise
    assert np.array_equal(g2.noise_scales, g.noise_scales)


def test_json_malformed_rejected():
    with pytest.raises(InputError):
        WeightedDag.from_json(json.dumps({"d": 2, "edges": [[0]], "sigma": [1, 1]}))


def test_topo_order_flatten_and_positions():
    order = TopoOrder([[2, 0], [1]])
    assert order.flatten() == [2, 0, 1]
    assert order.positions() == {2: 0, 0: 1, 1: 2}
    assert order.n_nodes() == 3


def test_weight_matrix_convention():
    g = chain_graph(2, weights=[3.0])
    B = g.weight_matrix()
    assert B[1, 0] == 3.0 and B[0, 1] == 0.0


def test_delete_node_reindexes():
    g = chain_graph(3, weights=[1.5, -2.0])
    g2 = g.delete_node(2)
    assert g2.d == 2 and g2.edges == {(0, 1)} and g2.weights[(0, 1)] == 1.5
    g3 = g.delete_node(0)
    assert g3.edges == {(0, 1)} and g3.weights[(0, 1)] == -2.0
