"""Neural score model: numpy MLP, score-matching training, exact Jacobians.

The model s(x) estimates grad log p(x). Training uses denoising score
matching by default: with per-column noise scale sigma_n and z ~ N(0, I),

    loss = mean_batch || s(x + sigma_n z) + z / sigma_n ||^2
           + lambda_sparse * sum_j || W1[:, j] ||_2

where the group penalty on input-layer columns suppresses spurious input
connections (applied as a proximal group soft-threshold after each Adam
step). Sliced score matching (v^T J v + (v^T s)^2 / 2 with random
projections) is available behind the ``objective`` flag.

The Jacobian of an affine + smooth-activation stack has the closed form
J = W_out D_L W_L ... D_1 W_1 with D_l = diag(act'(z_l)), so no autodiff
framework is needed; central finite differences remain available as a
cross-check mode. For the default two-hidden-layer architecture the mean
Jacobian over a dataset factorizes exactly as

    mean J = W_out ( mean[act'(z2) act'(z1)^T] * W2 ) W1

so streaming accumulation only ever holds an (h2, h1) accumulator plus one
micro-batch of activations, never a per-sample d x d stack.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError, TrainingError
from .hessian import OFFDIAG_SAMPLES, PER_SAMPLE, STREAMING_MEAN, HessianProvider
from .mechanisms import SampleMatrix

ACTIVATIONS = ("tanh", "softplus")
OBJECTIVES = ("denoising", "sliced")

HIDDEN_FLOOR = 64
HIDDEN_CAP = 256
SPARSE_DIM_THRESHOLD = 50
SPARSE_COEF = 1e-5  # lambda_sparse = coef * sqrt(d); gives 1e-4 at d = 100


@dataclass
class ScoreNetConfig:
    hidden_sizes: tuple | None = None  # None -> (h, h), h = clip(2d, 64, 256)
    activation: str = "tanh"
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    noise_level: float = 0.1
    lambda_sparse: float | None = None  # None -> 0 below d=50, else SPARSE_COEF*sqrt(d)
    objective: str = "denoising"
    lr_floor: float = 0.05  # cosine decay floor as a fraction of learning_rate

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"unknown objective {self.objective!r}")
        if self.noise_level <= 0:
            raise ParameterError("noise_level must be > 0")
        if self.lambda_sparse is not None and self.lambda_sparse < 0:
            raise ParameterError("lambda_sparse must be >= 0")

    def resolved_hidden(self, d: int) -> tuple:
        if self.hidden_sizes is not None:
            return tuple(int(h) for h in self.hidden_sizes)
        h = int(np.clip(2 * d, HIDDEN_FLOOR, HIDDEN_CAP))
        return (h, h)

    def resolved_lambda(self, d: int) -> float:
        if self.lambda_sparse is not None:
            return self.lambda_sparse
        return 0.0 if d < SPARSE_DIM_THRESHOLD else SPARSE_COEF * np.sqrt(d)


def _act(name: str, z: np.ndarray):
    """(value, first derivative, second derivative) of the activation."""
    if name == "tanh":
        a = np.tanh(z)
        d1 = 1.0 - a**2
        return a, d1, -2.0 * a * d1
    sig = 1.0 / (1.0 + np.exp(-z))
    return np.logaddexp(0.0, z), sig, sig * (1.0 - sig)


class LinearScoreModel:
    """Affine score s(x) = x W^T + b; constant Jacobian, used for testing."""

    def __init__(self, W: np.ndarray, b: np.ndarray | None = None):
        self.W = np.asarray(W, dtype=float)
        self.d = self.W.shape[1]
        self.b = np.zeros(self.W.shape[0]) if b is None else np.asarray(b, dtype=float)

    def score(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X) @ self.W.T + self.b

    def jacobian_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.broadcast_to(self.W, (X.shape[0], *self.W.shape)).copy()

    def mean_jacobian(self, X: np.ndarray, micro_batch: int = 128) -> np.ndarray:
        return self.W.copy()


class ScoreNet:
    """MLP score model with exact layerwise Jacobians."""

    def __init__(self, weights, biases, center, config: ScoreNetConfig):
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.center = np.asarray(center, dtype=float)
        self.config = config
        self.d = self.weights[0].shape[1]
        self.loss_history: list[float] = []
        self.final_loss: float = float("nan")

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def _forward(self, X: np.ndarray):
        """Centered forward pass keeping (z, a, act', act'') per hidden layer."""
        a = np.atleast_2d(X) - self.center
        acts = [a]
        zs, d1s, d2s = [], [], []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ W.T + b
            a, d1, d2 = _act(self.config.activation, z)
            zs.append(z)
            acts.append(a)
            d1s.append(d1)
            d2s.append(d2)
        s = a @ self.weights[-1].T + self.biases[-1]
        return s, acts, zs, d1s, d2s

    def score(self, X: np.ndarray) -> np.ndarray:
        return self._forward(X)[0]

    def jacobian_batch(self, X: np.ndarray) -> np.ndarray:
        """(B, d, d) exact Jacobians W_out D_L W_L ... D_1 W_1."""
        _, _, _, d1s, _ = self._forward(X)
        M = d1s[0][:, :, None] * self.weights[0][None, :, :]
        for l in range(1, self.n_hidden):
            M = np.einsum("ij,bjd->bid", self.weights[l], M, optimize=True)
            M *= d1s[l][:, :, None]
        return np.einsum("ij,bjd->bid", self.weights[-1], M, optimize=True)

    def jacobian_fd(self, X: np.ndarray, step: float | None = None) -> np.ndarray:
        """Central finite differences of the score; Jacobian cross-check mode."""
        X = np.atleast_2d(X)
        if step is None:
            step = 1e-3 * max(float(np.abs(X).std()), 1.0)
        B, d = X.shape
        J = np.empty((B, d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            J[:, :, i] = (self.score(X + e) - self.score(X - e)) / (2 * step)
        return J

    def mean_jacobian(self, X: np.ndarray, micro_batch: int = 128) -> np.ndarray:
        """Streaming mean Jacobian over rows of X.

        Two hidden layers use the exact factorized accumulation (an
        (h2, h1) Kahan-compensated sum of act'(z2) act'(z1)^T outer
        products); other depths fall back to chunked per-sample Jacobians
        accumulated into a compensated d x d sum.
        """
        X = np.atleast_2d(X)
        n = X.shape[0]
        if self.n_hidden == 2:
            W1, W2, W3 = self.weights
            G = np.zeros((W2.shape[0], W2.shape[1]))
            comp = np.zeros_like(G)
            for start in range(0, n, micro_batch):
                _, _, _, d1s, _ = self._forward(X[start : start + micro_batch])
                term = d1s[1].T @ d1s[0]
                y = term - comp
                t = G + y
                comp = (t - G) - y
                G = t
            return W3 @ ((G / n) * W2) @ W1
        acc = np.zeros((self.d, self.d))
        comp = np.zeros_like(acc)
        for start in range(0, n, micro_batch):
            term = self.jacobian_batch(X[start : start + micro_batch]).sum(axis=0)
            y = term - comp
            t = acc + y
            comp = (t - acc) - y
            acc = t
        return acc / n

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        payload = {"config": json.dumps(self.config.__dict__, default=list)}
        arrays = {"center": self.center}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        np.savez(path, meta=json.dumps(payload), **arrays)

    @classmethod
    def load(cls, path) -> "ScoreNet":
        archive = np.load(path, allow_pickle=False)
        meta = json.loads(str(archive["meta"]))
        raw = json.loads(meta["config"])
        if raw.get("hidden_sizes") is not None:
            raw["hidden_sizes"] = tuple(raw["hidden_sizes"])
        config = ScoreNetConfig(**raw)
        weights, biases = [], []
        i = 0
        while f"W{i}" in archive:
            weights.append(archive[f"W{i}"])
            biases.append(archive[f"b{i}"])
            i += 1
        return cls(weights, biases, archive["center"], config)


def _init_params(d: int, hidden: tuple, rng: np.random.Generator):
    dims = [d, *hidden, d]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _backward_from_output(model: ScoreNet, g_s, acts, d1s, grads_W, grads_b):
    """Backprop an output-space gradient through the primal network."""
    g = g_s
    grads_W[-1] += g.T @ acts[-1]
    grads_b[-1] += g.sum(axis=0)
    g = (g @ model.weights[-1]) * d1s[-1]
    for l in range(model.n_hidden - 1, -1, -1):
        grads_W[l] += g.T @ acts[l]
        grads_b[l] += g.sum(axis=0)
        if l > 0:
            g = (g @ model.weights[l]) * d1s[l - 1]


def _denoising_step(model: ScoreNet, Xb, sigma_n, rng):
    """Loss and parameter gradients for one denoising batch."""
    B = Xb.shape[0]
    z = rng.standard_normal(Xb.shape)
    noisy = Xb + sigma_n * z
    target = -z / sigma_n
    s, acts, zs, d1s, _ = model._forward(noisy)
    resid = s - target
    loss = float((resid**2).sum() / B)
    grads_W = [np.zeros_like(W) for W in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    _backward_from_output(model, 2.0 * resid / B, acts, d1s, grads_W, grads_b)
    return loss, grads_W, grads_b


def _sliced_step(model: ScoreNet, Xb, rng):
    """Loss and gradients for E[v^T J v + (v^T s)^2 / 2], v ~ N(0, I)."""
    B = Xb.shape[0]
    v = rng.standard_normal(Xb.shape)
    s, acts, zs, d1s, d2s = model._forward(Xb)
    L = model.n_hidden
    # forward JVP through the Jacobian product
    us, ts = [], []
    t = v
    for l in range(L):
        u = t @ model.weights[l].T
        t = d1s[l] * u
        us.append(u)
        ts.append(t)
    jv = t @ model.weights[-1].T
    trace_term = (v * jv).sum(axis=1)
    q = (v * s).sum(axis=1)
    loss = float((trace_term + 0.5 * q**2).mean())
    grads_W = [np.zeros_like(W) for W in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    # (v^T s)^2 / 2 term: output gradient q * v
    _backward_from_output(model, (q[:, None] * v) / B, acts, d1s, grads_W, grads_b)
    # v^T J v term: dual chain with curvature injections into the primal chain
    g_t = v @ model.weights[-1] / B
    grads_W[-1] += (v / B).T @ ts[-1]
    inj = [None] * L
    for l in range(L - 1, -1, -1):
        g_u = g_t * d1s[l]
        inj[l] = g_t * us[l] * d2s[l]
        t_prev = v if l == 0 else ts[l - 1]
        grads_W[l] += g_u.T @ t_prev
        g_t = g_u @ model.weights[l]
    g_z = inj[L - 1]
    for l in range(L - 1, -1, -1):
        grads_W[l] += g_z.T @ acts[l]
        grads_b[l] += g_z.sum(axis=0)
        if l > 0:
            g_z = (g_z @ model.weights[l]) * d1s[l - 1] + inj[l - 1]
    return loss, grads_W, grads_b


def train_score_net(data: SampleMatrix, cfg: ScoreNetConfig, rng) -> ScoreNet:
    """Fit the score model; returns it with the per-epoch loss trace attached."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n, d = data.n, data.d
    if n < cfg.batch_size:
        raise ParameterError(f"need n >= batch_size, got n={n} < {cfg.batch_size}")
    center = data.data.mean(axis=0)
    X = data.data - center
    col_std = X.std(axis=0)
    sigma_n = cfg.noise_level * np.where(col_std > 0, col_std, 1.0)
    hidden = cfg.resolved_hidden(d)
    lam = cfg.resolved_lambda(d)
    weights, biases = _init_params(d, hidden, rng)
    model = ScoreNet(weights, biases, np.zeros(d), cfg)  # trains on pre-centered X
    m_W = [np.zeros_like(W) for W in model.weights]
    v_W = [np.zeros_like(W) for W in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        frac = epoch / max(cfg.epochs - 1, 1)
        lr = cfg.learning_rate * (
            cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (1 + np.cos(np.pi * frac))
        )
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            Xb = X[perm[start : start + cfg.batch_size]]
            if cfg.objective == "denoising":
                loss, gW, gb = _denoising_step(model, Xb, sigma_n, rng)
            else:
                loss, gW, gb = _sliced_step(model, Xb, rng)
            step += 1
            for params, grads, ms, vs in (
                (model.weights, gW, m_W, v_W),
                (model.biases, gb, m_b, v_b),
            ):
                for p, g, m, v in zip(params, grads, ms, vs):
                    m *= beta1
                    m += (1 - beta1) * g
                    v *= beta2
                    v += (1 - beta2) * g**2
                    mhat = m / (1 - beta1**step)
                    vhat = v / (1 - beta2**step)
                    p -= lr * mhat / (np.sqrt(vhat) + eps)
            if lam > 0:
                W1 = model.weights[0]
                norms = np.linalg.norm(W1, axis=0)
                shrink = np.maximum(0.0, 1.0 - lr * lam / np.maximum(norms, 1e-300))
                W1 *= shrink
            penalty = lam * np.linalg.norm(model.weights[0], axis=0).sum()
            epoch_loss += loss + penalty
            n_batches += 1
        mean_loss = epoch_loss / max(n_batches, 1)
        if not np.isfinite(mean_loss):
            raise TrainingError(epoch)
        history.append(mean_loss)
    trained = ScoreNet(model.weights, model.biases, center, cfg)
    trained.loss_history = history
    trained.final_loss = history[-1] if history else float("nan")
    return trained


def smoothed_loss_trace(history, window: int = 5) -> np.ndarray:
    """Trailing moving average of the loss trace (window-5 by default)."""
    h = np.asarray(history, dtype=float)
    if len(h) == 0:
        return h
    out = np.empty_like(h)
    for k in range(len(h)):
        out[k] = h[max(0, k - window + 1) : k + 1].mean()
    return out


def score_net_hessian_stream(model, data: SampleMatrix, micro_batch: int = 128) -> np.ndarray:
    """Streaming mean over samples of -grad_x s(x) (the raw, unsymmetrized
    information-matrix estimate)."""
    if micro_batch < 1:
        raise ParameterError("micro_batch must be >= 1")
    return -model.mean_jacobian(data.data, micro_batch=micro_batch)


class ScoreNetProvider(HessianProvider):
    """Hessian provider backed by a trained (or analytic) score model.

    Per-sample Hessians are the symmetrized negative Jacobians
    -(J + J^T)/2; the streaming mean skips per-sample materialization
    entirely via the factorized accumulation.
    """

    capabilities = frozenset({PER_SAMPLE, STREAMING_MEAN, OFFDIAG_SAMPLES})

    def __init__(self, model, micro_batch: int = 128):
        super().__init__(model.d)
        self.model = model
        self.micro_batch = micro_batch

    def mean_hessian(self, data: SampleMatrix) -> np.ndarray:
        return score_net_hessian_stream(self.model, data, self.micro_batch)

    def hessian_batch(self, X: np.ndarray) -> np.ndarray:
        J = self.model.jacobian_batch(X)
        return -0.5 * (J + J.transpose(0, 2, 1))
