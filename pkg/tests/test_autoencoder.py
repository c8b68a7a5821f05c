"""Autoencoder forward/backward, Adam, pretraining, and serialization tests."""

import numpy as np
import numpy.testing as npt
import pytest

from decluster.autoencoder import (
    AdamState,
    Gradients,
    MlpParams,
    adam_step,
    default_activations,
    encode,
    encoder_grad_from_latent,
    init_adam,
    init_params,
    load_params,
    pretrain,
    recon_grad,
    recon_loss,
    reconstruct,
    save_params,
)
from decluster.errors import InvalidInput
from decluster.tensor_io import FeatureMatrix


def matrix_of(rows) -> FeatureMatrix:
    data = np.asarray(rows, dtype=np.float64)
    return FeatureMatrix(tuple(f"p{i}" for i in range(len(data))), data)


def identity_net(d: int) -> MlpParams:
    eye = np.eye(d)
    zero = np.zeros(d)
    return MlpParams((d, d, d), (eye, eye.copy()), (zero, zero.copy()),
                     ("identity", "identity"))


def zero_net(layer_dims) -> MlpParams:
    dims = tuple(layer_dims)
    weights = tuple(np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1))
    biases = tuple(np.zeros(dims[i + 1]) for i in range(len(dims) - 1))
    return MlpParams(dims, weights, biases, default_activations(dims))


def flatten_grads(grads: Gradients) -> np.ndarray:
    parts = [g.ravel() for g in grads.weights] + [g.ravel() for g in grads.biases]
    return np.concatenate(parts)


def fd_grads(loss_fn, params: MlpParams, h: float = 1e-5) -> np.ndarray:
    """Central finite differences over every weight and bias entry."""
    out = []
    for kind in ("weights", "biases"):
        for li in range(len(params.weights)):
            arr = getattr(params, kind)[li]
            flat = np.zeros(arr.size)
            for j in range(arr.size):
                for sign in (1.0, -1.0):
                    bumped = [a.copy() for a in getattr(params, kind)]
                    bumped[li] = bumped[li].copy()
                    bumped[li].ravel()[j] += sign * h
                    kwargs = {kind: tuple(bumped)}
                    p2 = MlpParams(params.layer_dims,
                                   kwargs.get("weights", params.weights),
                                   kwargs.get("biases", params.biases),
                                   params.activations)
                    flat[j] += sign * loss_fn(p2)
            out.append(flat / (2 * h))
    return np.concatenate(out)


# -------------------------------------------------------------------- params


def test_init_shapes():
    p = init_params([4, 2, 4], seed=0)
    assert p.weights[0].shape == (2, 4)
    assert p.weights[1].shape == (4, 2)
    assert p.biases[0].shape == (2,)
    assert p.biases[1].shape == (4,)
    assert p.bottleneck_index == 1
    assert p.latent_dim == 2


def test_init_deterministic():
    a = init_params([6, 4, 2, 4, 6], seed=3)
    b = init_params([6, 4, 2, 4, 6], seed=3)
    for wa, wb in zip(a.weights, b.weights):
        npt.assert_array_equal(wa, wb)


def test_init_he_bounds():
    p = init_params([16, 8, 4, 8, 16], seed=1)
    for w, fan_in in zip(p.weights, p.layer_dims[:-1]):
        bound = np.sqrt(6.0 / fan_in)
        assert np.abs(w).max() <= bound
    for b in p.biases:
        npt.assert_array_equal(b, np.zeros_like(b))


def test_init_rejects_bad_dims():
    for dims in ([4, 2, 3], [4, 2, 2, 4], [4], [4, 2], [4, 0, 4]):
        with pytest.raises(InvalidInput):
            init_params(dims, seed=0)


def test_default_activations_pattern():
    assert default_activations([8, 4, 2, 4, 8]) == (
        "relu", "identity", "relu", "identity"
    )
    assert default_activations([8, 2, 8]) == ("identity", "identity")


def test_params_reject_mismatched_shapes():
    with pytest.raises(InvalidInput):
        MlpParams((3, 2, 3), (np.zeros((2, 3)),), (np.zeros(2),), ("relu",))
    with pytest.raises(InvalidInput):
        MlpParams((3, 2, 3), (np.zeros((9, 9)), np.zeros((3, 2))),
                  (np.zeros(2), np.zeros(3)), ("relu", "identity"))
    with pytest.raises(InvalidInput):
        zero = zero_net([3, 2, 3])
        MlpParams(zero.layer_dims, zero.weights, zero.biases, ("tanh", "identity"))


# ----------------------------------------------------------- forward passes


def test_identity_net_is_identity():
    rng = np.random.default_rng(0)
    m = matrix_of(rng.standard_normal((5, 3)))
    p = identity_net(3)
    npt.assert_array_equal(encode(p, m).data, m.data)
    npt.assert_array_equal(reconstruct(p, m).data, m.data)
    assert recon_loss(p, m) == 0.0


def test_zero_net_gives_zero_latent():
    m = matrix_of(np.random.default_rng(1).standard_normal((4, 3)))
    p = zero_net([3, 4, 2, 4, 3])
    npt.assert_array_equal(encode(p, m).data, np.zeros((4, 2)))


def test_forward_matches_straight_line_reimplementation():
    rng = np.random.default_rng(2)
    p = init_params([5, 4, 3, 4, 5], seed=7)
    x = rng.standard_normal((6, 5))
    a = x
    for i in range(4):
        z = a @ p.weights[i].T + p.biases[i]
        a = np.maximum(z, 0.0) if p.activations[i] == "relu" else z
        if i + 1 == p.bottleneck_index:
            latent = a
    npt.assert_allclose(encode(p, x), latent, atol=1e-12)
    npt.assert_allclose(reconstruct(p, x), a, atol=1e-12)


def test_encode_preserves_ids_and_shape():
    m = matrix_of(np.random.default_rng(3).standard_normal((7, 6)))
    p = init_params([6, 5, 2, 5, 6], seed=0)
    out = encode(p, m)
    assert out.ids == m.ids
    assert out.data.shape == (7, 2)
    assert reconstruct(p, m).data.shape == (7, 6)


def test_encode_rejects_dim_mismatch():
    p = init_params([4, 2, 4], seed=0)
    with pytest.raises(InvalidInput):
        encode(p, matrix_of(np.ones((2, 5))))


# ---------------------------------------------------------------------- loss


def test_loss_unit_row():
    p = zero_net([2, 2, 2])
    assert recon_loss(p, matrix_of([[1.0, 0.0]])) == 1.0


def test_loss_mean_over_rows():
    # row errors 1 and 3 average to 2
    p = zero_net([3, 3, 3])
    assert recon_loss(p, matrix_of([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]])) == 2.0


def test_loss_of_zero_net_is_mean_squared_norm():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((8, 5))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    p = zero_net([5, 3, 5])
    assert recon_loss(p, matrix_of(x)) == pytest.approx(1.0, rel=1e-12)


# ----------------------------------------------------------------- gradients


def test_gradient_zero_at_identity_minimum():
    m = matrix_of(np.random.default_rng(5).standard_normal((4, 3)))
    grads = recon_grad(identity_net(3), m)
    assert np.abs(flatten_grads(grads)).max() == 0.0


# Seeds are pre-screened so no relu pre-activation sits within 5e-3 of its
# kink; central differences with h=1e-5 are only valid away from the kink.
_FD_CASES = [
    ((3, 2, 3), (0, 1, 2, 3, 4, 5, 6, 7)),
    ((4, 3, 2, 3, 4), (0, 1, 8, 9, 15, 16, 18, 19)),
    ((5, 4, 3, 4, 5), (0, 2, 3, 4, 5, 7, 11, 13)),
    ((6, 5, 4, 3, 4, 5, 6), (1, 7, 8, 9, 14, 16, 21, 22)),
    ((6, 5, 4, 3, 2, 3, 4, 5, 6), (1, 8, 9, 14, 16, 22, 23, 28)),
]


def relu_kink_margin(params: MlpParams, x: np.ndarray) -> float:
    from decluster.autoencoder import _forward

    _, pre = _forward(params, x)
    margins = [
        np.abs(z).min()
        for i, z in enumerate(pre)
        if params.activations[i] == "relu"
    ]
    return min(margins) if margins else np.inf


@pytest.mark.parametrize("dims,seeds", _FD_CASES, ids=lambda v: str(len(v)))
def test_gradient_matches_finite_differences(dims, seeds):
    for seed in seeds:
        p = init_params(dims, seed=seed)
        x = np.random.default_rng(9000 + seed).standard_normal((5, dims[0]))
        assert relu_kink_margin(p, x) > 5e-3
        analytic = flatten_grads(recon_grad(p, x))
        numeric = fd_grads(lambda q: recon_loss(q, x), p)
        npt.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_gradient_invariant_to_row_duplication():
    rng = np.random.default_rng(6)
    p = init_params([4, 3, 4], seed=2)
    x = rng.standard_normal((5, 4))
    g1 = flatten_grads(recon_grad(p, x))
    g2 = flatten_grads(recon_grad(p, np.concatenate([x, x])))
    npt.assert_allclose(g1, g2, atol=1e-12)


def test_encoder_latent_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    p = init_params([5, 4, 2, 4, 5], seed=3)
    x = rng.standard_normal((6, 5))
    c = rng.standard_normal((6, 2))  # fixed cotangent defines a scalar loss

    def latent_loss(q):
        return float(np.sum(c * encode(q, x)))

    grads = encoder_grad_from_latent(p, x, c)
    assert len(grads.weights) == p.bottleneck_index
    # pad decoder layers with zeros so the flat fd comparison lines up
    full = Gradients(
        grads.weights + tuple(np.zeros_like(w) for w in p.weights[2:]),
        grads.biases + tuple(np.zeros_like(b) for b in p.biases[2:]),
    )
    numeric = fd_grads(latent_loss, p)
    npt.assert_allclose(flatten_grads(full), numeric, rtol=1e-4, atol=1e-7)


# ---------------------------------------------------------------------- adam


def test_adam_zero_gradient_is_identity():
    p = init_params([3, 2, 3], seed=0)
    state = init_adam(p)
    zero = Gradients(tuple(np.zeros_like(w) for w in p.weights),
                     tuple(np.zeros_like(b) for b in p.biases))
    p2, state2 = adam_step(p, zero, state)
    for a, b in zip(p.weights, p2.weights):
        npt.assert_array_equal(a, b)
    assert state2.step_count == 1


def test_adam_first_step_size():
    # bias correction makes the very first step exactly lr-sized
    p = MlpParams((1, 1, 1), (np.array([[0.5]]), np.array([[0.2]])),
                  (np.zeros(1), np.zeros(1)), ("identity", "identity"))
    grads = Gradients((np.array([[1.0]]), np.array([[0.0]])),
                      (np.zeros(1), np.zeros(1)))
    p2, _ = adam_step(p, grads, init_adam(p))
    assert p2.weights[0][0, 0] == pytest.approx(0.5 - 0.001, abs=1e-9)
    assert p2.weights[1][0, 0] == 0.2


def test_adam_descends_quadratic():
    # drive w^2 through the public step function with grad 2w
    p = MlpParams((1, 1, 1), (np.array([[1.0]]), np.array([[0.0]])),
                  (np.zeros(1), np.zeros(1)), ("identity", "identity"))
    state = init_adam(p, lr=0.01)
    for _ in range(200):
        w = p.weights[0][0, 0]
        grads = Gradients((np.array([[2.0 * w]]), np.zeros((1, 1))),
                          (np.zeros(1), np.zeros(1)))
        p, state = adam_step(p, grads, state)
    assert abs(p.weights[0][0, 0]) < 0.5
    assert state.step_count == 200


def test_adam_rejects_shape_mismatch():
    p = init_params([3, 2, 3], seed=0)
    with pytest.raises(InvalidInput):
        adam_step(p, Gradients((np.zeros((2, 3)),), (np.zeros(2),)), init_adam(p))


def test_adam_state_fields():
    p = init_params([3, 2, 3], seed=0)
    s = init_adam(p, lr=0.01)
    assert isinstance(s, AdamState)
    assert s.step_count == 0 and s.lr == 0.01
    assert s.beta1 == 0.9 and s.beta2 == 0.999 and s.epsilon == 1e-8


# ------------------------------------------------------------------ pretrain


def test_pretrain_reduces_blob_loss_tenfold():
    rng = np.random.default_rng(42)
    centers = rng.standard_normal((6, 16)) * 10
    x = np.concatenate([c + rng.standard_normal((20, 16)) * 0.3 for c in centers])
    params, history = pretrain(
        matrix_of(x), [16, 32, 8, 32, 16], seed=0, epochs=30, batch_size=32, lr=1e-2
    )
    assert history[-1] <= 0.1 * history[0]
    assert np.isfinite(history).all()
    assert params.latent_dim == 8


def test_pretrain_memorizes_repeated_points():
    pts = np.random.default_rng(1).standard_normal((4, 4))
    m = matrix_of(np.repeat(pts, 8, axis=0))
    params, history = pretrain(m, [4, 16, 4, 16, 4], seed=0, epochs=500,
                               batch_size=32, lr=1e-2)
    assert recon_loss(params, m) < 1e-3
    assert history[-1] < 1e-3


def test_pretrain_linear_net_fits_k_points_exactly():
    pts = np.random.default_rng(2).standard_normal((3, 5))
    m = matrix_of(pts)
    # [5, 3, 5] has identity activations throughout; 3 points fit in z=3
    params, history = pretrain(m, [5, 3, 5], seed=0, epochs=1500,
                               batch_size=3, lr=5e-2)
    assert params.activations == ("identity", "identity")
    assert history[-1] < 1e-8


def test_pretrain_deterministic():
    rng = np.random.default_rng(8)
    m = matrix_of(rng.standard_normal((20, 6)))
    p1, h1 = pretrain(m, [6, 8, 3, 8, 6], seed=5, epochs=10, batch_size=8)
    p2, h2 = pretrain(m, [6, 8, 3, 8, 6], seed=5, epochs=10, batch_size=8)
    assert h1 == h2
    for a, b in zip(p1.weights, p2.weights):
        npt.assert_array_equal(a, b)


def test_pretrain_rejects_bad_arguments():
    m = matrix_of(np.ones((4, 3)))
    with pytest.raises(InvalidInput):
        pretrain(m, [3, 2, 3], epochs=0)
    with pytest.raises(InvalidInput):
        pretrain(m, [3, 2, 3], batch_size=5)


# ------------------------------------------------------------- serialization


def test_save_load_roundtrip(tmp_path):
    p = init_params([6, 4, 2, 4, 6], seed=9)
    path = tmp_path / "net.bin"
    save_params(p, path)
    back = load_params(path)
    assert back.layer_dims == p.layer_dims
    assert back.activations == p.activations
    for orig, loaded in zip(p.weights, back.weights):
        npt.assert_array_equal(loaded, orig.astype(np.float32).astype(np.float64))
    x = np.random.default_rng(10).standard_normal((3, 6))
    npt.assert_allclose(encode(back, x), encode(p, x), atol=1e-4)
