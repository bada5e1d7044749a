import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compodiff.compose import (OPERATORS, DecompositionModel, LatentStack, ModelConfig, TrainConfig,
                               TrainingDiverged, build_model, compose, decode_component, decomposition_loss,
                               encode, fit, parameter_checksum, reconstruct, separate, separate_batch,
                               train_decomposition)
from compodiff.diffusion import iadb_loss
from compodiff.numerics import Tensor, backward, no_grad

TINY = dict(data_channels=2, length=16, latent_dim=4, channels=8, groups=4)


def tiny(n=2, op="mean", seed=0, zero_init_output=False):
    return build_model(ModelConfig(n_latents=n, operator=op, zero_init_output=zero_init_output, **TINY), seed)


def frames(b, seed=1):
    return np.random.default_rng(seed).standard_normal((b, 2, 16))


# -- operator -------------------------------------------------------------------

@pytest.mark.parametrize("op,ref", [("sum", np.sum), ("mean", np.mean), ("min", np.min), ("max", np.max)])
def test_compose_matches_numpy(op, ref):
    parts = np.random.default_rng(0).standard_normal((3, 2, 5))
    got = compose(op, [Tensor(p) for p in parts]).data
    np.testing.assert_allclose(got, ref(parts, axis=0), rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(OPERATORS), st.integers(1, 5), st.integers(0, 10_000))
def test_compose_is_bitwise_permutation_invariant(op, n, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.standard_normal((2, 7)) * 10 ** rng.uniform(-3, 3) for _ in range(n)]
    base = compose(op, [Tensor(p) for p in parts]).data
    shuffled = compose(op, [Tensor(parts[k]) for k in rng.permutation(n)]).data
    assert np.array_equal(base, shuffled)


@pytest.mark.parametrize("op", OPERATORS)
def test_single_part_identity(op):
    p = np.random.default_rng(0).standard_normal((2, 4))
    assert np.array_equal(compose(op, [Tensor(p)]).data, p)


def test_compose_gradients():
    a = Tensor(np.array([1.0, 5.0, -2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 2.0, -1.0]), requires_grad=True)
    backward(compose("max", [a, b]).sum())
    assert a.grad.tolist() == [0.0, 1.0, 0.0] and b.grad.tolist() == [1.0, 0.0, 1.0]
    a.grad = b.grad = None
    backward(compose("mean", [a, b]).sum())
    assert a.grad.tolist() == [0.5] * 3


def test_compose_errors():
    with pytest.raises(ValueError, match="unknown"):
        compose("prod", [Tensor(np.ones(2))])
    with pytest.raises(ValueError):
        compose("sum", [])


# -- latent stacks --------------------------------------------------------------

def test_latent_stack_round_trip():
    arr = np.arange(6.0).reshape(3, 2)
    s = LatentStack.from_array(arr)
    assert s.n == 3 and s.latents[1].shape == (1, 2)
    assert np.array_equal(s.array(), arr)
    with pytest.raises(ValueError):
        LatentStack([np.ones((1, 2)), np.ones((1, 3))])
    with pytest.raises(ValueError):
        LatentStack([])


def test_encode_shapes_and_validation():
    model = tiny(n=3)
    stack = encode(model, frames(1)[0])
    assert stack.n == 3 and all(z.shape == (1, 4) for z in stack.latents)
    with pytest.raises(ValueError):
        encode(model, frames(2))
    with pytest.raises(ValueError):
        model.encode_batch(np.ones((1, 2, 12)))


def test_condition_is_nearest_neighbour_repeat():
    model = tiny()
    z = Tensor(np.arange(4.0).reshape(1, 1, 4))
    assert model.condition(z).data[0, 0].tolist() == np.repeat(np.arange(4.0), 4).tolist()


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(operator="median")
    with pytest.raises(ValueError):
        ModelConfig(n_latents=0)
    with pytest.raises(ValueError):
        build_model(ModelConfig(length=16, latent_dim=5, data_channels=2, channels=8, groups=4))


# -- loss -----------------------------------------------------------------------

def test_single_latent_mean_loss_equals_conditional_iadb_loss():
    model = tiny(n=1)
    x = frames(3)
    got = decomposition_loss(model, Tensor(x), np.random.default_rng(7)).item()
    with no_grad():
        cond = model.condition(model.encode_batch(x))
    want = iadb_loss(model.denoiser, x, cond, np.random.default_rng(7)).item()
    assert got == want


class _LinearEncoder:
    def __init__(self, w):
        self.w = w

    def __call__(self, x):
        from compodiff.numerics import affine
        return affine(x.reshape(x.shape[0], 1, -1), Tensor(self.w)).reshape(x.shape[0], self.w.shape[0] // 4, 4)


def test_loss_replays_against_numpy_oracle():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((8, 32)) * 0.2
    scale = rng.standard_normal((2, 16))

    def den(xa, alpha, cond):
        a = np.asarray(alpha).reshape(-1, 1, 1)
        return xa * Tensor(scale) * Tensor(1 - a) + cond

    model = DecompositionModel(_LinearEncoder(w), den, "sum", n_latents=2, length=16)
    x = frames(4, seed=3)
    got = decomposition_loss(model, Tensor(x), np.random.default_rng(11)).item()

    r = np.random.default_rng(11)
    alpha = r.uniform(0.0, 1.0, size=4)
    x0 = r.standard_normal(x.shape)
    a = alpha[:, None, None]
    xa = (1 - a) * x0 + a * x
    z = (x.reshape(4, -1) @ w.T).reshape(4, 2, 4)
    pred = sum(xa * scale * (1 - a) + np.repeat(z[:, i:i + 1], 4, axis=2) for i in range(2))
    want = np.mean(np.sum((pred - x) ** 2, axis=(1, 2)))
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=0)


def test_gradient_reaches_encoder_and_denoiser():
    model = tiny(zero_init_output=False)
    backward(decomposition_loss(model, Tensor(frames(2)), np.random.default_rng(0)))
    for part in (model.encoder, model.denoiser):
        assert any(p.grad is not None and np.any(p.grad != 0) for p in part.parameters())


def test_loss_is_deterministic_given_rng():
    model = tiny()
    x = Tensor(frames(2))
    a = decomposition_loss(model, x, np.random.default_rng(5)).item()
    assert a == decomposition_loss(model, x, np.random.default_rng(5)).item()
    assert a != decomposition_loss(model, x, np.random.default_rng(6)).item()


def test_single_frame_loss_matches_batch_of_one():
    model = tiny()
    x = frames(1)
    a = decomposition_loss(model, Tensor(x[0]), np.random.default_rng(2)).item()
    b = decomposition_loss(model, Tensor(x), np.random.default_rng(2)).item()
    np.testing.assert_allclose(a, b, rtol=1e-14)


# -- training -------------------------------------------------------------------

def test_training_reduces_loss():
    model = tiny(zero_init_output=True)
    _, trace = train_decomposition(model, frames(16), TrainConfig(epochs=6, lr=3e-3, batch=8))
    assert trace[-1] < trace[0]


def test_training_is_reproducible():
    sums = []
    for _ in range(2):
        model = tiny(seed=3)
        train_decomposition(model, frames(8), TrainConfig(epochs=1, lr=1e-3, batch=4, seed=9))
        sums.append(parameter_checksum(model))
    assert sums[0] == sums[1] != parameter_checksum(tiny(seed=3))


def test_divergence_is_reported():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(TrainingDiverged, match="epoch 0, step 0"):
        fit([p], lambda b, r: (p * float("nan")).sum(), np.ones((4, 1)), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        fit([p], lambda b, r: p.sum(), np.ones((0, 1)), TrainConfig(epochs=1))


# -- decoding -------------------------------------------------------------------

def test_separation_is_deterministic_and_seeded():
    model = tiny()
    x = frames(1)[0]
    a, b = separate(model, x, steps=3, seed=4), separate(model, x, steps=3, seed=4)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    c = separate(model, x, steps=3, seed=5)
    assert not np.array_equal(a[0], c[0])


def test_batched_separation_matches_single_frames():
    model = tiny()
    x = frames(3)
    batch = separate_batch(model, x, steps=2, seeds=[4, 5, 6])
    for b in range(3):
        single = separate(model, x[b], steps=2, seed=4 + b)
        for i in range(2):
            np.testing.assert_allclose(batch[i][b], single[i], rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        separate_batch(model, x, steps=2, seeds=[1])


def test_decode_component_shapes_and_broadcast():
    model = tiny()
    z = np.random.default_rng(0).standard_normal((1, 4))
    x0 = np.random.default_rng(1).standard_normal((2, 16))
    single = decode_component(model, z, x0, steps=2)
    assert single.shape == (2, 16)
    batched = decode_component(model, z, np.stack([x0, x0]), steps=2)
    np.testing.assert_allclose(batched[1], single, rtol=0, atol=1e-12)


def test_reconstruct_composes_separated_parts():
    model = tiny(op="max")
    x = frames(1)[0]
    parts = separate(model, x, steps=2, seed=1)
    assert np.array_equal(reconstruct(model, x, steps=2, seed=1), np.maximum(parts[0], parts[1]))


def test_checksum_tracks_parameters():
    model = tiny()
    before = parameter_checksum(model)
    p = model.denoiser.parameters()[0]
    p.data = p.data + 1.0
    assert parameter_checksum(model) != before
