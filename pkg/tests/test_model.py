"""Model components: shapes, determinism, parameter budgets, goal encoding."""

import numpy as np
import pytest

import ttanav.autodiff as ad
from ttanav.autodiff import Tensor
from ttanav.model import (
    Decoder,
    Encoder,
    Policy,
    frame_to_tensor,
    make_policy_input,
)


@pytest.fixture(scope="module")
def encoder():
    return Encoder(seed=0)


@pytest.fixture(scope="module")
def decoder():
    return Decoder(seed=1)


@pytest.fixture(scope="module")
def policy():
    return Policy(seed=2)


def rand_frames(n=2, res=64, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(size=(n, 3, res, res)).astype(np.float32))


def test_encoder_output_shapes(encoder):
    with ad.no_grad():
        z, e = encoder(rand_frames(2))
    assert z.data.shape == (2, 64, 8, 8)
    assert e.data.shape == (2, 128)


def test_encoder_split_paths_agree(encoder):
    x = rand_frames(1, seed=3)
    with ad.no_grad():
        z, e = encoder(x)
        z2 = encoder.features(x)
        e2 = encoder.embed_from_features(z2)
    assert np.array_equal(z.data, z2.data)
    assert np.array_equal(e.data, e2.data)


def test_encoder_seed_determinism():
    a, b = Encoder(seed=9), Encoder(seed=9)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    c = Encoder(seed=10)
    diffs = [not np.array_equal(pa.data, pc.data)
             for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters())]
    assert any(diffs)


def test_parameter_budgets(encoder, decoder, policy):
    count = lambda m: sum(p.data.size for p in m.parameters())
    assert count(encoder) == 101_932
    assert count(decoder) == 27_435
    assert count(policy) == 101_892


def test_decoder_output_is_image(decoder):
    z = Tensor(np.random.default_rng(1).normal(size=(2, 64, 8, 8)).astype(np.float32))
    with ad.no_grad():
        out = decoder(z)
    assert out.data.shape == (2, 3, 64, 64)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_decoder_rejects_wrong_latent(decoder):
    with pytest.raises(ValueError):
        decoder(Tensor(np.zeros((1, 32, 8, 8), dtype=np.float32)))


def test_policy_step_shapes(policy):
    x = Tensor(np.random.default_rng(0).normal(size=(3, Policy.IN_DIM)).astype(np.float32))
    h0 = policy.initial_state(3)
    assert np.all(h0.data == 0.0) and h0.data.shape == (3, 128)
    with ad.no_grad():
        logits, h1 = policy.step(x, h0)
    assert logits.data.shape == (3, 4)
    assert h1.data.shape == (3, 128)
    assert not np.array_equal(h1.data, h0.data)


def test_policy_state_carries_information(policy):
    x = Tensor(np.random.default_rng(4).normal(size=(1, Policy.IN_DIM)).astype(np.float32))
    with ad.no_grad():
        _, h1 = policy.step(x, policy.initial_state(1))
        l_fresh, _ = policy.step(x, policy.initial_state(1))
        l_carried, _ = policy.step(x, h1)
    assert not np.array_equal(l_fresh.data, l_carried.data)


def test_goal_encoding_layout():
    v = Policy.encode_goal(5.0, np.pi / 2)
    np.testing.assert_allclose(v, [1.0, np.cos(np.pi / 2), 1.0], atol=1e-7)
    v = Policy.encode_goal(2.5, 0.0)
    np.testing.assert_allclose(v, [0.5, 1.0, 0.0], atol=1e-7)


def test_make_policy_input_layout():
    e = Tensor(np.arange(128, dtype=np.float32).reshape(1, 128))
    x = make_policy_input(e, Policy.encode_goal(5.0, 0.0), prev_action=2)
    assert x.data.shape == (1, Policy.IN_DIM)
    np.testing.assert_array_equal(x.data[0, :128], np.arange(128))
    np.testing.assert_allclose(x.data[0, 128:131], [1.0, 1.0, 0.0])
    np.testing.assert_array_equal(x.data[0, 131:], [0.0, 0.0, 1.0, 0.0])


def test_frame_to_tensor_layout():
    frame = np.zeros((64, 64, 3))
    frame[0, 0] = [0.1, 0.2, 0.3]
    t = frame_to_tensor(frame)
    assert t.data.shape == (1, 3, 64, 64)
    assert t.data.dtype == np.float32
    np.testing.assert_allclose(t.data[0, :, 0, 0], [0.1, 0.2, 0.3], atol=1e-7)


def test_frozen_encoder_pure(encoder):
    from ttanav.norm import Mode, norm_layers

    for _, layer in norm_layers(encoder):
        layer.mode = Mode.FROZEN
    x = rand_frames(1, seed=8)
    with ad.no_grad():
        a = encoder(x)[1].data
        b = encoder(x)[1].data
    assert np.array_equal(a, b)
