import numpy as np
import pytest

from schursort import (
    CapabilityError,
    CriterionError,
    LinearEmpiricalProvider,
    LinearPopulationProvider,
    MechanismSpec,
    OracleProvider,
    ParameterError,
    SjimState,
    SortConfig,
    WeightedDag,
    block_ssts,
    build_sjim,
    chain_graph,
    collider_graph,
    covariance_patch,
    edge_violations,
    exact_samplewise_ssts,
    generate_er,
    is_valid_topo,
    leaf_criterion_cv2,
    run_sort,
    sample,
    schur_eliminate,
)
from schursort.hessian import linear_population_precision, oracle_hessian_batch
from schursort.sort import samplewise_schur_mean
from schursort.verify import heteroscedastic_chain


def pop_state(g, ridge=0.0):
    return SjimState(linear_population_precision(g), active=list(range(g.d)), ridge=ridge)


def test_chain_population_order():
    g = chain_graph(3)
    trace = block_ssts(pop_state(g), SortConfig(gamma=0.0, ridge=0.0))
    assert trace.order.blocks == [[0], [1], [2]]
    assert trace.block_iters == 3


def test_exact_ties_grouped_at_gamma_zero_tolerance():
    state = SjimState(np.eye(3), active=[0, 1, 2], ridge=0.0)
    trace = block_ssts(state, SortConfig(gamma=0.05, ridge=0.0))
    assert trace.block_iters == 1
    assert sorted(trace.order.blocks[0]) == [0, 1, 2]


def test_population_linear_random_dag_zero_violations():
    for seed in range(10):
        g = generate_er(50, 100, seed)
        trace = block_ssts(pop_state(g), SortConfig(gamma=0.0, ridge=0.0))
        assert edge_violations(g, trace.order) == 0
        assert is_valid_topo(g, trace.order)


def random_tie_free_state(d, seed):
    # dense random PD matrix: no structural zero couplings, so exact diagonal
    # ties never arise during elimination
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    M = A @ A.T + d * np.eye(d)
    return SjimState(M, active=list(range(d)), ridge=0.0)


def test_gamma_zero_matches_naive_argmin_loop_on_tie_free_matrix():
    state = random_tie_free_state(15, 0)
    trace = block_ssts(state, SortConfig(gamma=0.0, ridge=0.0))
    # naive loop
    work = state.copy()
    naive = []
    while work.active:
        idx = np.asarray(work.active)
        diag = work.matrix.diagonal()[idx]
        leaf = int(idx[np.argmin(diag)])
        naive.insert(0, [leaf])
        work = schur_eliminate(work, [leaf])
    assert trace.order.blocks == naive


def test_block_iters_monotone_in_gamma():
    # distinct noise scales keep parallel leaves off the exact-tie path
    rng = np.random.default_rng(1)
    g = generate_er(40, 80, rng)
    g = WeightedDag(g.d, g.edges, g.weights, np.linspace(0.8, 1.2, g.d))
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 4000, rng)
    state = build_sjim(OracleProvider(g, spec), data)
    iters = [
        block_ssts(state, SortConfig(gamma=gam, ridge=1e-4)).block_iters
        for gam in (0.0, 0.01, 0.05, 0.15)
    ]
    assert iters[0] == 40  # tie-free diagonals
    assert all(a >= b for a, b in zip(iters, iters[1:]))


def test_exact_leaf_ties_grouped_even_at_gamma_zero():
    # homoscedastic linear population: every current leaf sits at exactly
    # 1/sigma^2, so the zero-tolerance block still groups whole leaf strata
    rng = np.random.default_rng(1)
    g = generate_er(40, 80, rng)
    trace = block_ssts(pop_state(g), SortConfig(gamma=0.0, ridge=0.0))
    assert trace.block_iters < 40
    assert edge_violations(g, trace.order) == 0


def test_permutation_equivariance():
    rng = np.random.default_rng(2)
    M = random_tie_free_state(12, 2).matrix
    perm = rng.permutation(12)
    P = np.eye(12)[perm]
    Mp = P @ M @ P.T  # relabeled: new index i corresponds to old perm[i]
    t1 = block_ssts(SjimState(M, active=list(range(12)), ridge=0.0), SortConfig(gamma=0.0, ridge=0.0))
    t2 = block_ssts(SjimState(Mp, active=list(range(12)), ridge=0.0), SortConfig(gamma=0.0, ridge=0.0))
    inv = np.empty(12, dtype=int)
    inv[perm] = np.arange(12)
    mapped = [[int(inv[i]) for i in b] for b in t1.order.blocks]
    assert mapped == t2.order.blocks


def test_block_ssts_mode_guard():
    state = pop_state(chain_graph(2))
    with pytest.raises(ParameterError):
        block_ssts(state, SortConfig(mode="exact_samplewise"))
    with pytest.raises(ParameterError):
        block_ssts(state, SortConfig(criterion="relative_variance"))


def test_exact_mode_linear_matches_expected():
    g = generate_er(12, 25, 5)
    spec = MechanismSpec(kind="linear")
    data = sample(g, spec, 300, 5)
    provider = LinearPopulationProvider(g)
    cfg = SortConfig(gamma=0.0, ridge=0.0, mode="exact_samplewise")
    exact = exact_samplewise_ssts(provider, data, cfg)
    expected = block_ssts(build_sjim(provider, data), SortConfig(gamma=0.0, ridge=0.0))
    assert exact.order.blocks == expected.order.blocks


def test_exact_mode_requires_per_sample():
    data = sample(chain_graph(3), MechanismSpec(kind="linear"), 100, 0)
    with pytest.raises(CapabilityError):
        exact_samplewise_ssts(
            LinearEmpiricalProvider(3), data, SortConfig(mode="exact_samplewise")
        )


def test_exact_mode_streaming_replay_matches_resident():
    rng = np.random.default_rng(3)
    g = generate_er(8, 16, rng)
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 500, rng)
    provider = OracleProvider(g, spec)
    resident = exact_samplewise_ssts(
        provider, data, SortConfig(gamma=0.0, ridge=1e-4, mode="exact_samplewise")
    )
    streamed = exact_samplewise_ssts(
        provider,
        data,
        SortConfig(
            gamma=0.0, ridge=1e-4, mode="exact_samplewise", resident_budget_bytes=0
        ),
    )
    assert resident.order.blocks == streamed.order.blocks


def test_samplewise_schur_mean_matches_marginal_oracle():
    # one exact sample-wise elimination reproduces the leaf-deleted model's
    # mean Hessian within Monte Carlo tolerance
    rng = np.random.default_rng(4)
    g = collider_graph(weights=(1.1, -0.8))
    spec = MechanismSpec(kind="tanh-anm")
    n = 10000
    X = sample(g, spec, n, rng).data
    H = oracle_hessian_batch(g, spec, X)
    remaining, marg = samplewise_schur_mean(H, [2])
    g2 = g.delete_node(2)
    X2 = sample(g2, spec, n, np.random.default_rng(99)).data
    H2 = oracle_hessian_batch(g2, spec, X2).mean(axis=0)
    assert remaining == [0, 1]
    assert np.abs(marg - H2).max() < 0.1


def test_covariance_patch_zero_for_linear():
    g = generate_er(6, 12, 7)
    spec = MechanismSpec(kind="linear")
    data = sample(g, spec, 400, 7)
    provider = OracleProvider(g, spec)
    state = build_sjim(provider, data)
    leaf = g.topological_sort()[-1]
    plain = schur_eliminate(state, [leaf])
    patched = covariance_patch(state, provider, data, [leaf])
    assert np.abs(plain.active_matrix() - patched.active_matrix()).max() < 1e-10


def test_covariance_patch_equals_samplewise_mean():
    # patched expected Schur == mean per-sample Schur (same samples), since
    # the leaf pivot is constant under the oracle
    rng = np.random.default_rng(8)
    g = collider_graph(weights=(1.3, 0.9))
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 20000, rng)
    provider = OracleProvider(g, spec)
    state = build_sjim(provider, data)
    patched = covariance_patch(state, provider, data, [2])
    H = oracle_hessian_batch(g, spec, data.data)
    _, exact = samplewise_schur_mean(H, [2])
    assert np.abs(patched.active_matrix() - exact).max() < 1e-10


def test_covariance_patch_localized_to_parents():
    # patch vanishes (within MC noise) outside pa(leaf) x pa(leaf)
    rng = np.random.default_rng(9)
    g = chain_graph(3, weights=(1.2, 0.9))
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 100000, rng)
    provider = OracleProvider(g, spec)
    state = build_sjim(provider, data)
    plain = schur_eliminate(state, [2])
    patched = covariance_patch(state, provider, data, [2])
    delta = patched.active_matrix() - plain.active_matrix()
    # pa(2) = {1}: the (1,1) entry carries the patch, node-0 entries are noise
    assert abs(delta[1, 1]) > 10 * abs(delta[0, 0])
    assert abs(delta[1, 1]) > 10 * abs(delta[0, 1])


def test_cv2_zero_at_leaf_for_any_noise_scale():
    g = heteroscedastic_chain()
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 5000, 0)
    provider = OracleProvider(g, spec)
    ids, cv2 = leaf_criterion_cv2(provider, data)
    assert ids[np.argmin(cv2)] == 4
    # exactly-constant leaf diagonal: zero up to float cancellation
    assert cv2[-1] < 1e-10


def test_cv2_heteroscedastic_beats_diag_energy():
    g = heteroscedastic_chain()
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 10000, 1)
    provider = OracleProvider(g, spec)
    ids, cv2 = leaf_criterion_cv2(provider, data)
    diag = provider.hessian_diag_batch(data.data).mean(axis=0)
    assert ids[np.argmin(cv2)] == 4
    assert np.argmin(diag) != 4  # documented failure of raw diagonal energy


def test_cv2_linear_undefined_variance_zero_everywhere():
    # linear: every node's diagonal is constant; criterion returns zeros
    g = chain_graph(3)
    spec = MechanismSpec(kind="linear")
    data = sample(g, spec, 1000, 0)
    ids, cv2 = leaf_criterion_cv2(OracleProvider(g, spec), data)
    assert np.allclose(cv2, 0.0, atol=1e-12)


def test_cv2_requires_per_sample():
    data = sample(chain_graph(3), MechanismSpec(kind="linear"), 100, 0)
    with pytest.raises(CapabilityError):
        leaf_criterion_cv2(LinearEmpiricalProvider(3), data)


def test_exact_mode_cv2_heteroscedastic_order():
    g = heteroscedastic_chain()
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 10000, 2)
    provider = OracleProvider(g, spec)
    trace = exact_samplewise_ssts(
        provider,
        data,
        SortConfig(gamma=0.0, ridge=1e-4, mode="exact_samplewise", criterion="relative_variance"),
    )
    # first two extracted leaves are exact; ancestor composition is an
    # extension of the criterion and only needs to stay near-valid
    assert trace.order.blocks[-1] == [4]
    assert trace.order.blocks[-2] == [3]
    assert edge_violations(g, trace.order) <= 2


def test_run_sort_dispatch_patched_mode():
    rng = np.random.default_rng(11)
    g = generate_er(8, 16, rng)
    spec = MechanismSpec(kind="tanh-anm")
    data = sample(g, spec, 3000, rng)
    provider = OracleProvider(g, spec)
    trace = run_sort(provider, data, SortConfig(gamma=0.0, ridge=1e-4, mode="expected_with_patch"))
    assert trace.order.n_nodes() == 8
    assert trace.block_iters == len(trace.order.blocks)


def test_trace_records_steps_and_timing():
    g = chain_graph(4)
    trace = block_ssts(pop_state(g), SortConfig(gamma=0.0, ridge=0.0))
    assert len(trace.steps) == trace.block_iters == 4
    assert trace.t_disc >= 0.0
    d = trace.to_dict()
    assert d["order"] == trace.order.blocks
