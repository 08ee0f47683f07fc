import numpy as np
import pytest

from schursort import (
    GenerationError,
    MechanismSpec,
    ParameterError,
    SampleMatrix,
    UnsupportedMechanismError,
    WeightedDag,
    chain_graph,
    mech_grad,
    mech_hess_diag,
    sample,
)
from schursort.mechanisms import draw_noise, grad_batch, hess_diag_batch


def single_node():
    return WeightedDag(1, set(), {}, np.ones(1))


def test_single_node_pure_noise_moments():
    data = sample(single_node(), MechanismSpec(kind="linear"), 40000, 0)
    x = data.data[:, 0]
    n = len(x)
    assert abs(x.mean()) < 4 / np.sqrt(n)
    assert abs(x.var() - 1.0) < 4 * np.sqrt(2.0 / n) * 2


def test_two_node_linear_variance_propagation():
    g = chain_graph(2, weights=[2.0])
    data = sample(g, MechanismSpec(kind="linear"), 100000, 1)
    # Var(x1) = 2^2 * 1 + 1 = 5
    assert abs(data.data[:, 1].var() - 5.0) < 0.2


def test_sampling_deterministic():
    g = chain_graph(3)
    a = sample(g, MechanismSpec(kind="tanh-anm"), 100, 42).data
    b = sample(g, MechanismSpec(kind="tanh-anm"), 100, 42).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("family", ["gaussian", "exponential", "gumbel"])
def test_noise_families_centered(family):
    n = 200000
    sigma = np.array([1.0, 2.5])
    eps = draw_noise(family, sigma, n, 0)
    for j in range(2):
        assert abs(eps[:, j].mean()) < 4 * sigma[j] / np.sqrt(n)


def test_sigma_to_zero_degenerates_to_deterministic():
    g = chain_graph(3, weights=[1.0, -1.0])
    spec = MechanismSpec(kind="tanh-anm", noise_scales=np.full(3, 1e-12))
    data = sample(g, spec, 50, 0).data
    # x0 ~ 0, x1 = tanh(x0) ~ 0, x2 = -tanh(x1) ~ 0
    assert np.abs(data).max() < 1e-10


def test_mnm_scale_positive_and_sampling_runs():
    g = chain_graph(3)
    data = sample(g, MechanismSpec(kind="mnm"), 500, 0)
    assert np.all(np.isfinite(data.data))


def test_pnl_cubing_applied():
    g = chain_graph(2)
    data = sample(g, MechanismSpec(kind="pnl"), 2000, 0).data
    # standardized-then-cubed output has heavy tails: kurtosis well above gaussian
    x = data[:, 1]
    kurt = ((x - x.mean()) ** 4).mean() / x.var() ** 2
    assert kurt > 5.0


def test_mechanism_graph_mismatch_rejected():
    g = chain_graph(2)
    spec = MechanismSpec(kind="linear", noise_scales=np.ones(3))
    with pytest.raises(ParameterError):
        sample(g, spec, 10, 0)


def test_degenerate_zero_weight_rejected():
    g = WeightedDag(2, {(0, 1)}, {(0, 1): 0.0}, np.ones(2))
    with pytest.raises(ParameterError):
        sample(g, MechanismSpec(kind="linear"), 10, 0)


def test_linear_gradient_is_weight_vector():
    g = chain_graph(2, weights=[1.7])
    grad = mech_grad(MechanismSpec(kind="linear"), g, 1, np.array([0.3, 9.9]))
    assert np.allclose(grad, [1.7, 0.0])


def test_root_node_gradient_zero():
    g = chain_graph(2)
    spec = MechanismSpec(kind="tanh-anm")
    assert np.allclose(mech_grad(spec, g, 0, np.ones(2)), 0.0)
    assert np.allclose(mech_hess_diag(spec, g, 0, np.ones(2)), 0.0)


def test_linear_hess_diag_zero():
    g = chain_graph(2)
    assert np.allclose(
        mech_hess_diag(MechanismSpec(kind="linear"), g, 1, np.array([1.0, 2.0])), 0.0
    )


def test_dense_tanh_gradient_closed_form():
    g = WeightedDag(3, {(0, 2), (1, 2)}, {(0, 2): 0.9, (1, 2): -1.4}, np.ones(3))
    spec = MechanismSpec(kind="tanh-anm", tanh_dense=True, out_scale=1.3)
    x = np.array([0.4, -0.2, 0.0])
    u = 0.9 * x[0] - 1.4 * x[1]
    grad = mech_grad(spec, g, 2, x)
    assert np.allclose(grad[0], 1.3 * 0.9 * (1 - np.tanh(u) ** 2))
    assert np.allclose(grad[1], 1.3 * (-1.4) * (1 - np.tanh(u) ** 2))
    hd = mech_hess_diag(spec, g, 2, x)
    assert np.allclose(hd[0], -2 * 1.3 * 0.9**2 * np.tanh(u) * (1 - np.tanh(u) ** 2))


@pytest.mark.parametrize("kind,dense", [("linear", False), ("tanh-anm", False), ("tanh-anm", True), ("mnm", False)])
def test_derivatives_match_finite_differences(kind, dense):
    rng = np.random.default_rng(0)
    g = WeightedDag(
        4,
        {(0, 3), (1, 3), (2, 3)},
        {(0, 3): 1.1, (1, 3): -0.7, (2, 3): 0.6},
        np.ones(4),
    )
    spec = MechanismSpec(kind=kind, tanh_dense=dense)
    h = 1e-4
    from schursort.mechanisms import f_batch

    for _ in range(100):
        x = rng.normal(size=4)
        grad = mech_grad(spec, g, 3, x)
        hdiag = mech_hess_diag(spec, g, 3, x)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            fp = f_batch(spec, g, 3, (x + e)[None])[0]
            fm = f_batch(spec, g, 3, (x - e)[None])[0]
            f0 = f_batch(spec, g, 3, x[None])[0]
            g_fd = (fp - fm) / (2 * h)
            h_fd = (fp - 2 * f0 + fm) / h**2
            assert abs(grad[k] - g_fd) <= 1e-5 * max(abs(g_fd), 1.0)
            assert abs(hdiag[k] - h_fd) <= 1e-4 * max(abs(h_fd), 1.0)


def test_pnl_derivatives_unsupported():
    g = chain_graph(2)
    with pytest.raises(UnsupportedMechanismError):
        mech_grad(MechanismSpec(kind="pnl"), g, 1, np.zeros(2))


def test_gradient_localized_to_parents():
    rng = np.random.default_rng(1)
    g = WeightedDag(5, {(1, 3), (2, 3)}, {(1, 3): 1.0, (2, 3): 0.8}, np.ones(5))
    spec = MechanismSpec(kind="tanh-anm")
    G = grad_batch(spec, g, 3, rng.normal(size=(20, 5)))
    assert np.all(G[:, [0, 3, 4]] == 0.0)
    H = hess_diag_batch(spec, g, 3, rng.normal(size=(20, 5)))
    assert np.all(H[:, [0, 3, 4]] == 0.0)


def test_csv_round_trip(tmp_path):
    g = chain_graph(3)
    data = sample(g, MechanismSpec(kind="tanh-anm"), 50, 9)
    path = tmp_path / "data.csv"
    data.to_csv(path)
    loaded = SampleMatrix.from_csv(path)
    assert np.array_equal(loaded.data, data.data)
    assert loaded.columns == data.columns
