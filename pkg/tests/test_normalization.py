import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from everadapt.exceptions import BatchSizeError, DimensionError, LifecycleError, ParameterError
from everadapt.gradcheck import gradcheck
from everadapt.normalization import (
    BatchNormState,
    bn_forward,
    cbn_forward,
    ema_update,
    normalize,
)
from everadapt.tensor import Tensor

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _batch(rng, shape, mean, var):
    """Values whose per-channel statistics are exactly `mean` and `var`."""
    values = rng.normal(size=shape)
    axes = (0, 2)
    values = (values - values.mean(axis=axes, keepdims=True)) / values.std(axis=axes, keepdims=True)
    return values * np.sqrt(var) + mean


def _frozen_state(channels, mu, var, epsilon=1e-5):
    state = BatchNormState.create(channels, epsilon=epsilon)
    state.mu_ema = np.asarray(mu, dtype=np.float64)
    state.var_ema = np.asarray(var, dtype=np.float64)
    state.populated = True
    state.freeze()
    return state


def test_train_bn_standardizes_batch():
    state = BatchNormState.create(2, epsilon=1e-12)
    x = _batch(np.random.default_rng(0), (8, 2, 6), 5.0, 4.0)
    out = bn_forward(Tensor(x), state).data
    assert np.abs(out.mean(axis=(0, 2))).max() < 1e-7
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-6)


def test_train_bn_affine():
    state = BatchNormState.create(3, epsilon=1e-12)
    state.gamma.data[:] = 2.0
    state.beta.data[:] = 3.0
    x = _batch(np.random.default_rng(1), (10, 3, 4), 0.0, 1.0)
    out = bn_forward(Tensor(x), state).data
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 3.0, atol=1e-7)
    np.testing.assert_allclose(out.std(axis=(0, 2)), 2.0, atol=1e-6)


def test_train_bn_folds_batch_into_running_statistics():
    state = BatchNormState.create(1, ema_momentum=1.0)
    x = _batch(np.random.default_rng(2), (6, 1, 3), 10.0, 9.0)
    bn_forward(Tensor(x), state)
    np.testing.assert_allclose(state.mu_ema, [10.0])
    np.testing.assert_allclose(state.var_ema, [9.0])
    assert state.populated


def test_train_bn_needs_two_samples():
    with pytest.raises(BatchSizeError):
        bn_forward(Tensor(np.ones((1, 2, 4))), BatchNormState.create(2))


def test_channel_mismatch():
    with pytest.raises(DimensionError):
        bn_forward(Tensor(np.ones((4, 3, 2))), BatchNormState.create(2))


def test_eval_bn_leaves_state_untouched():
    state = BatchNormState.create(2)
    state.mu_ema = np.array([1.0, -1.0])
    state.var_ema = np.array([2.0, 0.5])
    state.mode = "EVAL_BN"
    x = Tensor(np.random.default_rng(3).normal(size=(4, 2, 5)))
    first = bn_forward(x, state).data
    second = bn_forward(x, state).data
    np.testing.assert_array_equal(first, second)
    np.testing.assert_array_equal(state.mu_ema, [1.0, -1.0])
    np.testing.assert_array_equal(state.var_ema, [2.0, 0.5])


@pytest.mark.parametrize(
    "momentum,mu,batch,expected",
    [(1.0, [3.0], [7.0], [7.0]), (0.0, [3.0], [7.0], [3.0]), (0.1, [0.0], [10.0], [1.0])],
)
def test_ema_update(momentum, mu, batch, expected):
    state = BatchNormState.create(1, ema_momentum=momentum)
    state.mu_ema = np.array(mu)
    ema_update(state, batch, [1.0])
    np.testing.assert_allclose(state.mu_ema, expected)


def test_ema_update_refused_when_frozen():
    state = _frozen_state(1, [0.0], [1.0])
    with pytest.raises(LifecycleError):
        ema_update(state, [1.0], [1.0])
    with pytest.raises(LifecycleError):
        bn_forward(Tensor(np.ones((2, 1))), state)


def test_invalid_parameters():
    with pytest.raises(ParameterError):
        BatchNormState.create(2, epsilon=0.0)
    with pytest.raises(ParameterError):
        BatchNormState.create(2, ema_momentum=1.5)


def test_freeze_needs_populated_statistics():
    state = BatchNormState.create(2)
    with pytest.raises(LifecycleError):
        state.freeze()
    with pytest.raises(LifecycleError):
        cbn_forward(Tensor(np.ones((2, 2))), state)


def test_cbn_hand_value():
    state = _frozen_state(1, [5.0], [4.0], epsilon=1e-12)
    out = cbn_forward(Tensor([[7.0]]), state)
    assert out.item() == pytest.approx(1.0, abs=1e-9)


def test_cbn_with_source_statistics_standardizes():
    state = _frozen_state(2, [5.0, -1.0], [4.0, 0.25], epsilon=1e-12)
    mean = np.array([5.0, -1.0])[None, :, None]
    var = np.array([4.0, 0.25])[None, :, None]
    x = _batch(np.random.default_rng(4), (16, 2, 8), mean, var)
    out = cbn_forward(Tensor(x), state).data
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-9)


def test_cbn_uses_the_same_constants_for_every_batch():
    state = _frozen_state(2, [0.5, 1.0], [2.0, 3.0])
    rng = np.random.default_rng(5)
    shared = rng.normal(size=(1, 2, 4))
    first = cbn_forward(Tensor(np.concatenate([shared, rng.normal(size=(3, 2, 4))])), state)
    second = cbn_forward(Tensor(np.concatenate([shared, 10 + rng.normal(size=(5, 2, 4))])), state)
    np.testing.assert_array_equal(first.data[0], second.data[0])


def test_cbn_never_mutates_statistics():
    state = _frozen_state(3, [0.1, 0.2, 0.3], [1.0, 2.0, 3.0])
    mu, var = state.mu_ema.copy(), state.var_ema.copy()
    rng = np.random.default_rng(6)
    for _ in range(5):
        normalize(Tensor(rng.normal(size=(4, 3, 6))), state)
        normalize(Tensor(rng.normal(size=(4, 3, 6))), state, batch_statistics=True)
    assert np.array_equal(state.mu_ema, mu)
    assert np.array_equal(state.var_ema, var)


def test_standardize_matches_cbn_without_affine():
    state = _frozen_state(2, [1.0, 2.0], [0.5, 4.0])
    x = np.random.default_rng(7).normal(size=(3, 2, 5))
    np.testing.assert_allclose(state.standardize(x), cbn_forward(Tensor(x), state).data)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_bn_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(5, 2, 3)), requires_grad=True)
    state = BatchNormState.create(2)
    state.gamma.data = rng.uniform(0.5, 2.0, 2)
    state.beta.data = rng.normal(size=2)
    weights = rng.normal(size=(5, 2, 3))

    def fn(x, gamma, beta):
        return (bn_forward(x, state) * weights).sum()

    assert gradcheck(fn, [x, state.gamma, state.beta]) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_cbn_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(4, 2, 3)), requires_grad=True)
    state = _frozen_state(2, rng.normal(size=2), rng.uniform(0.5, 2.0, 2))
    weights = rng.normal(size=(4, 2, 3))

    def fn(x, gamma, beta):
        return (cbn_forward(x, state) * weights).sum()

    assert gradcheck(fn, [x, state.gamma, state.beta]) < 1e-4
