"""Symmetric MLP autoencoder trained on mean squared reconstruction loss.

The encoder maps inputs to the bottleneck (latent) layer, the decoder maps
back. Hidden layers use ReLU; the bottleneck and output layers are linear so
the latent space and reconstructions stay unconstrained. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .tensor_io import FeatureMatrix, read_container, write_container

_ACT_CODES = {"identity": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True)
class MlpParams:
    """Weights/biases per layer. ``weights[i]`` has shape (out, in)."""

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        dims = tuple(int(v) for v in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        n_layers = len(dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InvalidInput("weights/biases do not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise InvalidInput(f"layer {i} shapes do not chain: {w.shape}, {b.shape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise InvalidInput(f"layer {i} has non-finite parameters")
        for act in self.activations:
            if act not in _ACT_CODES:
                raise InvalidInput(f"unknown activation {act!r}")
        if len(self.activations) != n_layers:
            raise InvalidInput("one activation per layer required")

    @property
    def bottleneck_index(self) -> int:
        return (len(self.layer_dims) - 1) // 2

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_dims[self.bottleneck_index]


@dataclass(frozen=True)
class Gradients:
    """Per-layer loss gradients, shaped like the network parameters."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class AdamState:
    """Adam moment accumulators, shaped like MlpParams."""

    step_count: int
    m_weights: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def _validate_symmetric(layer_dims) -> tuple[int, ...]:
    dims = tuple(int(v) for v in layer_dims)
    if len(dims) < 3 or len(dims) % 2 == 0:
        raise InvalidInput(f"layer_dims must have odd length >= 3, got {dims}")
    if any(v < 1 for v in dims):
        raise InvalidInput(f"layer_dims must be positive, got {dims}")
    if dims != dims[::-1]:
        raise InvalidInput(f"layer_dims must be symmetric about the bottleneck, got {dims}")
    return dims


def default_activations(layer_dims) -> tuple[str, ...]:
    """ReLU on hidden layers, identity at the bottleneck and the output."""
    dims = tuple(layer_dims)
    n_layers = len(dims) - 1
    bottleneck = (len(dims) - 1) // 2
    acts = []
    for i in range(n_layers):
        produces = i + 1
        if produces == bottleneck or i == n_layers - 1:
            acts.append("identity")
        else:
            acts.append("relu")
    return tuple(acts)


def init_params(layer_dims, seed: int = 0) -> MlpParams:
    """He-uniform weights in +-sqrt(6/fan_in), zero biases, deterministic per seed."""
    dims = _validate_symmetric(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
        biases.append(np.zeros(dims[i + 1]))
    return MlpParams(dims, tuple(weights), tuple(biases), default_activations(dims))


def _apply_act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else z


def _forward(params: MlpParams, x: np.ndarray, n_layers: int | None = None):
    """Activations [A0..AL] and pre-activations [Z1..ZL] through n_layers."""
    if n_layers is None:
        n_layers = len(params.weights)
    acts = [x]
    pre = []
    a = x
    for i in range(n_layers):
        z = a @ params.weights[i].T + params.biases[i]
        pre.append(z)
        a = _apply_act(params.activations[i], z)
        acts.append(a)
    return acts, pre


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise InvalidInput(f"input has shape {x.shape}, expected (n, {params.input_dim})")
    return x


def encode(params: MlpParams, matrix):
    """Latent codes z = encoder(x). FeatureMatrix in, FeatureMatrix out."""
    if isinstance(matrix, FeatureMatrix):
        acts, _ = _forward(params, _check_input(params, matrix.data), params.bottleneck_index)
        return FeatureMatrix(matrix.ids, acts[-1])
    acts, _ = _forward(params, _check_input(params, matrix), params.bottleneck_index)
    return acts[-1]


def reconstruct(params: MlpParams, matrix):
    """Full decoder(encoder(x)) pass."""
    if isinstance(matrix, FeatureMatrix):
        acts, _ = _forward(params, _check_input(params, matrix.data))
        return FeatureMatrix(matrix.ids, acts[-1])
    acts, _ = _forward(params, _check_input(params, matrix))
    return acts[-1]


def recon_loss(params: MlpParams, matrix) -> float:
    """(1/n) sum_i ||x'_i - x_i||^2 over rows."""
    x = matrix.data if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=np.float64)
    x = _check_input(params, x)
    acts, _ = _forward(params, x)
    diff = acts[-1] - x
    return float(np.sum(diff * diff) / x.shape[0])


def _backprop(params: MlpParams, acts, pre, grad_out: np.ndarray, n_layers: int) -> Gradients:
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers
    g = grad_out
    for i in range(n_layers - 1, -1, -1):
        if params.activations[i] == "relu":
            g = g * (pre[i] > 0)
        d_weights[i] = g.T @ acts[i]
        d_biases[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i]
    return Gradients(tuple(d_weights), tuple(d_biases))


def recon_grad(params: MlpParams, matrix) -> Gradients:
    """Exact reverse-mode gradient of recon_loss for every layer."""
    x = matrix.data if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=np.float64)
    x = _check_input(params, x)
    n_layers = len(params.weights)
    acts, pre = _forward(params, x)
    grad_out = 2.0 / x.shape[0] * (acts[-1] - x)
    return _backprop(params, acts, pre, grad_out, n_layers)


def encoder_grad_from_latent(params: MlpParams, x: np.ndarray, d_latent: np.ndarray) -> Gradients:
    """Backpropagate a latent-space gradient through the encoder layers only."""
    x = _check_input(params, x)
    n_enc = params.bottleneck_index
    acts, pre = _forward(params, x, n_enc)
    return _backprop(params, acts, pre, d_latent, n_enc)


def _adam_update(arrays, grads, m, v, step, lr, beta1, beta2, epsilon):
    """One bias-corrected Adam step over parallel lists of arrays."""
    new_arrays, new_m, new_v = [], [], []
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for a, g, mi, vi in zip(arrays, grads, m, v):
        mi = beta1 * mi + (1.0 - beta1) * g
        vi = beta2 * vi + (1.0 - beta2) * g * g
        new_arrays.append(a - lr * (mi / bc1) / (np.sqrt(vi / bc2) + epsilon))
        new_m.append(mi)
        new_v.append(vi)
    return new_arrays, new_m, new_v


def init_adam(params: MlpParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    zeros_w = tuple(np.zeros_like(w) for w in params.weights)
    zeros_b = tuple(np.zeros_like(b) for b in params.biases)
    return AdamState(0, zeros_w, zeros_w, zeros_b, zeros_b, lr, beta1, beta2, epsilon)


def adam_step(params: MlpParams, grads: Gradients, state: AdamState) -> tuple[MlpParams, AdamState]:
    """Standard Adam with bias correction; returns updated params and state."""
    if len(grads.weights) != len(params.weights):
        raise InvalidInput("gradient shapes do not match parameters")
    step = state.step_count + 1
    new_w, m_w, v_w = _adam_update(
        params.weights, grads.weights, state.m_weights, state.v_weights,
        step, state.lr, state.beta1, state.beta2, state.epsilon)
    new_b, m_b, v_b = _adam_update(
        params.biases, grads.biases, state.m_biases, state.v_biases,
        step, state.lr, state.beta1, state.beta2, state.epsilon)
    new_params = replace(params, weights=tuple(new_w), biases=tuple(new_b))
    new_state = replace(state, step_count=step,
                        m_weights=tuple(m_w), v_weights=tuple(v_w),
                        m_biases=tuple(m_b), v_biases=tuple(v_b))
    return new_params, new_state


def pretrain(
    matrix,
    layer_dims,
    seed: int = 0,
    epochs: int = 200,
    batch_size: int = 256,
    lr: float = 1e-3,
) -> tuple[MlpParams, list[float]]:
    """Mini-batch Adam on the reconstruction loss.

    Shuffle order is fixed by the seed, so identical calls produce identical
    parameters and loss histories. The returned history has one full-data
    loss value per epoch.
    """
    x = matrix.data if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=np.float64)
    if epochs < 1:
        raise InvalidInput("epochs must be >= 1")
    n = x.shape[0]
    if batch_size > n:
        raise InvalidInput(f"batch_size {batch_size} exceeds n={n}")
    params = init_params(layer_dims, seed=seed)
    state = init_adam(params, lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = x[order[start : start + batch_size]]
            grads = recon_grad(params, batch)
            params, state = adam_step(params, grads, state)
        history.append(recon_loss(params, x))
    return params, history


def save_params(params: MlpParams, path: str | Path) -> None:
    """Serialize to the section container, one weight/bias section per layer."""
    sections = [
        ("layer_dims", FeatureMatrix(("dims",), np.array([params.layer_dims], dtype=np.float64))),
        ("activation_codes", FeatureMatrix(
            ("acts",), np.array([[_ACT_CODES[a] for a in params.activations]], dtype=np.float64))),
    ]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        sections.append((f"w{i}", FeatureMatrix(tuple(f"r{j}" for j in range(w.shape[0])), w)))
        sections.append((f"b{i}", FeatureMatrix((f"b{i}",), b.reshape(1, -1))))
    write_container(sections, path)


def load_params(path: str | Path) -> MlpParams:
    sections = read_container(path)
    dims = tuple(int(v) for v in sections["layer_dims"].data[0])
    acts = tuple(_ACT_NAMES[int(v)] for v in sections["activation_codes"].data[0])
    n_layers = len(dims) - 1
    weights = tuple(sections[f"w{i}"].data for i in range(n_layers))
    biases = tuple(sections[f"b{i}"].data[0] for i in range(n_layers))
    return MlpParams(dims, weights, biases, acts)
