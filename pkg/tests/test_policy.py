import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from megadagger.config import TrainConfig
from megadagger.policy import (Policy, TrainingError, downsample, encode_targets, forward, gradient_check,
                               init_policy, load_policy, loss_and_grads, raw_forward, save_policy,
                               squash, train, training_loss)


def zero_policy():
    p = init_policy(0)
    return Policy(tuple(np.zeros_like(q) for q in p.params))


def random_batch(seed, n=16):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.05, 1.0, (n, 108))
    actions = np.column_stack([rng.uniform(-0.4, 0.4, n), rng.uniform(0.5, 7.5, n)])
    return X, actions


def test_downsample_examples():
    scan = np.arange(1080, dtype=float) / 100
    out = downsample(scan)
    assert out.shape == (108,)
    assert out[0] == 0.0 and out[1] == pytest.approx(0.01)
    assert np.all(downsample(np.full(1080, 30.0)) == 1.0)
    with pytest.raises(ValueError):
        downsample(np.ones(1000))


def test_zero_parameters_give_neutral_action():
    a = forward(zero_policy(), np.full(108, 0.5))
    assert a.steering == 0.0 and a.speed == pytest.approx(4.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_outputs_respect_actuator_limits(seed, scale):
    p = init_policy(seed)
    X = np.random.default_rng(seed).uniform(0, 1, (8, 108)) * scale
    out = squash(p, raw_forward(p, X.astype(np.float32)).astype(np.float64))
    assert np.all(np.abs(out[:, 0]) <= 0.41) and np.all((out[:, 1] >= 0) & (out[:, 1] <= 8.0))


def test_encode_targets_inverts_squash():
    p = init_policy(0)
    actions = np.array([[0.2, 3.0], [-0.1, 7.0], [0.0, 4.0]])
    back = squash(p, encode_targets(actions, 0.41, 8.0))
    assert np.allclose(back, actions, atol=1e-9)


def test_overfits_a_single_sample():
    X = np.full((1, 108), 0.4)
    target = np.array([[0.25, 5.5]])
    p = train(init_policy(1), X, target, TrainConfig(epochs=500, batch_size=1))
    a = forward(p, X[0])
    assert abs(a.steering - 0.25) < 1e-2 and abs(a.speed - 5.5) < 5e-2


def test_zero_epochs_is_identity():
    p0 = init_policy(2)
    X, actions = random_batch(0)
    p = train(p0, X, actions, TrainConfig(epochs=0))
    assert all(np.array_equal(a, b) for a, b in zip(p.params, p0.params))


def test_training_lowers_the_loss():
    X, actions = random_batch(3, n=128)
    p0 = init_policy(3)
    p = train(p0, X, actions, TrainConfig(epochs=30, batch_size=32))
    assert training_loss(p, X, actions) < 0.5 * training_loss(p0, X, actions)


def test_training_is_deterministic():
    X, actions = random_batch(4, n=64)
    cfg = TrainConfig(epochs=3, batch_size=16, seed=9)
    a, b = train(init_policy(5), X, actions, cfg), train(init_policy(5), X, actions, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))


def test_non_finite_data_raises():
    X, actions = random_batch(0)
    X[0, 0] = np.nan
    with pytest.raises(TrainingError):
        train(init_policy(0), X, actions, TrainConfig(epochs=1))


@pytest.mark.parametrize("seed", range(5))
def test_backprop_matches_finite_differences(seed):
    X, actions = random_batch(seed)
    T = encode_targets(actions, 0.41, 8.0)
    assert gradient_check(init_policy(seed), X, T, n_params=50, seed=seed) < 1e-4


def test_linear_network_gradient_is_exact():
    p = init_policy(0, layers=(6, 4, 2), activation="linear")
    X, _ = random_batch(0, n=5)
    T = np.random.default_rng(1).normal(size=(5, 2))
    assert gradient_check(p, X[:, :6], T, n_params=38) < 1e-8


def test_zero_error_gives_zero_output_bias_gradient():
    p = init_policy(0).astype(np.float64)
    X, _ = random_batch(0)
    T = raw_forward(p, X)
    loss, grads = loss_and_grads(p, X, T)
    assert loss == 0.0 and np.all(grads[-1] == 0.0)


def test_checkpoint_round_trip(tmp_path):
    p = init_policy(7)
    save_policy(p, tmp_path / "p.bin")
    q = load_policy(tmp_path / "p.bin")
    assert q.layers == p.layers and q.max_speed == p.max_speed
    assert all(np.array_equal(a, b) for a, b in zip(p.params, q.params))
    obs = np.full(108, 0.3)
    assert forward(p, obs) == forward(q, obs)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="checkpoint not found"):
        load_policy(tmp_path / "missing.bin")
    (tmp_path / "junk.bin").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_policy(tmp_path / "junk.bin")
