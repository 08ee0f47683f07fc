import numpy as np
import pytest

from schursort import (
    EliminationError,
    InputError,
    LinearPopulationProvider,
    MechanismSpec,
    OracleProvider,
    SjimState,
    WeightedDag,
    build_sjim,
    chain_graph,
    diag_energy,
    generate_er,
    sample,
    schur_eliminate,
)
from schursort.hessian import linear_population_precision


def pop_state(g, ridge=0.0):
    return SjimState(linear_population_precision(g), active=list(range(g.d)), ridge=ridge)


def test_build_from_population_provider_exact():
    g = generate_er(12, 30, 0)
    data = sample(g, MechanismSpec(kind="linear"), 50, 0)
    state = build_sjim(LinearPopulationProvider(g), data)
    assert np.allclose(state.matrix, linear_population_precision(g))
    assert state.active == list(range(12))


def test_build_symmetrizes_exactly():
    g = generate_er(8, 16, 1)
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 400, 1)
    state = build_sjim(OracleProvider(g, spec), data)
    assert np.abs(state.matrix - state.matrix.T).max() == 0.0


def test_build_single_node_inverse_variance():
    g = WeightedDag(1, set(), {}, np.array([2.0]))
    spec = MechanismSpec(kind="linear")
    data = sample(g, spec, 50, 0)
    state = build_sjim(OracleProvider(g, spec), data)
    assert np.allclose(state.matrix, [[0.25]])


def test_schur_two_node_cancellation():
    b = 2.0
    state = SjimState(
        np.array([[1 + b * b, -b], [-b, 1.0]]), active=[0, 1], ridge=0.0
    )
    out = schur_eliminate(state, [1])
    assert out.active == [0]
    assert np.allclose(out.active_matrix(), [[1.0]])
    assert out.eliminated_blocks == [[1]]
    # original untouched (value semantics)
    assert state.active == [0, 1]


def test_schur_eliminate_whole_active_set():
    state = pop_state(chain_graph(3))
    out = schur_eliminate(state, [0, 1, 2])
    assert out.active == []
    assert out.active_matrix().shape == (0, 0)


def test_schur_diagonal_matrix_unchanged():
    state = SjimState(np.diag([3.0, 2.0, 1.0]), active=[0, 1, 2], ridge=0.0)
    out = schur_eliminate(state, [1])
    assert np.allclose(out.active_matrix(), np.diag([3.0, 1.0]))


def test_schur_block_not_in_active_rejected():
    state = pop_state(chain_graph(3))
    out = schur_eliminate(state, [2])
    with pytest.raises(InputError):
        schur_eliminate(out, [2])
    with pytest.raises(InputError):
        schur_eliminate(out, [])


def test_schur_singular_block_suggests_ridge():
    m = np.zeros((3, 3))
    m[2, 2] = 0.0
    m[0, 0] = m[1, 1] = 1.0
    m[0, 2] = m[2, 0] = 1.0
    state = SjimState(m, active=[0, 1, 2], ridge=0.0)
    with pytest.raises(EliminationError, match="ridge"):
        schur_eliminate(state, [2])
    state.ridge = 1e-4
    out = schur_eliminate(state, [2])
    assert np.all(np.isfinite(out.active_matrix()))


def test_diag_energy_chain_and_after_elimination():
    g = chain_graph(3)
    state = pop_state(g)
    ids, diag = diag_energy(state)
    assert np.allclose(diag, [2.0, 2.0, 1.0])
    assert ids[np.argmin(diag)] == 2
    out = schur_eliminate(state, [2])
    ids, diag = diag_energy(out)
    assert np.allclose(diag, [2.0, 1.0])
    assert ids[np.argmin(diag)] == 1


def test_diag_energy_empty_active_rejected():
    state = pop_state(chain_graph(2))
    out = schur_eliminate(state, [0, 1])
    with pytest.raises(InputError):
        diag_energy(out)


def test_linear_exactness_leaf_deletion_matches_reduced_population():
    # eliminating the true leaf reproduces the reduced model's precision
    for seed in range(5):
        g = generate_er(40, 80, seed)
        order = g.topological_sort()
        leaf = order[-1]
        state = schur_eliminate(pop_state(g), [leaf])
        reduced = linear_population_precision(g.delete_node(leaf))
        got = state.active_matrix()
        scale = max(np.abs(reduced).max(), 1.0)
        assert np.abs(got - reduced).max() / scale < 1e-10


def test_interleaving_single_vs_block_parallel_leaves():
    # two parallel leaves: eliminating one at a time equals one block step
    g = WeightedDag(
        3, {(0, 1), (0, 2)}, {(0, 1): 1.2, (0, 2): -0.5}, np.ones(3)
    )
    state = pop_state(g)
    one = schur_eliminate(schur_eliminate(state, [1]), [2])
    both = schur_eliminate(state, [1, 2])
    assert np.allclose(one.active_matrix(), both.active_matrix(), atol=1e-12)


def test_positive_definiteness_preserved():
    rng = np.random.default_rng(0)
    for seed in range(5):
        g = generate_er(30, 90, seed)
        state = pop_state(g)
        while len(state.active) > 1:
            block = [int(rng.choice(state.active))]
            state = schur_eliminate(state, block)
            eig = np.linalg.eigvalsh(state.active_matrix())
            assert eig.min() > 0


def test_symmetry_invariant_maintained():
    g = generate_er(20, 60, 3)
    state = pop_state(g)
    state = schur_eliminate(state, [int(state.active[5])])
    state = schur_eliminate(state, [int(state.active[0]), int(state.active[3])])
    M = state.active_matrix()
    assert np.abs(M - M.T).max() <= 1e-12 * max(np.abs(M).max(), 1.0)


def test_dimension_mismatch_rejected():
    g = chain_graph(3)
    data = sample(chain_graph(2), MechanismSpec(kind="linear"), 20, 0)
    with pytest.raises(InputError):
        build_sjim(LinearPopulationProvider(g), data)


def test_float32_mode():
    g = generate_er(10, 20, 0)
    data = sample(g, MechanismSpec(kind="linear"), 100, 0)
    state = build_sjim(LinearPopulationProvider(g), data, dtype=np.float32)
    assert state.matrix.dtype == np.float32
    out = schur_eliminate(state, [int(state.active[0])])
    assert np.all(np.isfinite(out.active_matrix()))
