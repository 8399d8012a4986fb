import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from everadapt.exceptions import DimensionError, ParameterError
from everadapt.functional import (
    adaptive_avg_pool1d,
    conv1d,
    dense,
    dropout,
    log_softmax,
    maxpool1d,
    relu,
    softmax,
)
from everadapt.gradcheck import gradcheck
from everadapt.tensor import Graph, Tensor, backward

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.mark.parametrize(
    "input,weight,bias,expected",
    [
        ([[1.0, 2.0]], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], [[1.0, 2.0]]),
        ([[1.0, 1.0]], [[2.0, 3.0]], [1.0], [[6.0]]),
        ([[0.0, 0.0]], [[2.0, 3.0]], [0.0], [[0.0]]),
    ],
)
def test_dense(input, weight, bias, expected):
    out = dense(Tensor(input), Tensor(weight), Tensor(bias))
    np.testing.assert_allclose(out.data, expected)


def test_dense_shape_mismatch():
    with pytest.raises(DimensionError):
        dense(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))), Tensor(np.zeros(2)))


def test_conv1d_identity_tap():
    out = conv1d(Tensor([[[1.0, 2.0, 3.0]]]), Tensor([[[1.0]]]), Tensor([0.0]))
    np.testing.assert_allclose(out.data, [[[1.0, 2.0, 3.0]]])


def test_conv1d_sliding_sum():
    out = conv1d(Tensor([[[1.0, 2.0, 3.0, 4.0]]]), Tensor([[[1.0, 1.0]]]), Tensor([0.0]))
    np.testing.assert_allclose(out.data, [[[3.0, 5.0, 7.0]]])


def test_conv1d_output_length():
    out = conv1d(Tensor(np.ones((1, 1, 4))), Tensor(np.ones((1, 1, 2))), Tensor([0.0]), stride=2)
    assert out.shape == (1, 1, 2)
    padded = conv1d(Tensor(np.ones((2, 3, 7))), Tensor(np.ones((5, 3, 3))), Tensor(np.zeros(5)), 2, 1)
    assert padded.shape == (2, 5, math.floor((7 + 2 - 3) / 2) + 1)


def test_conv1d_kernel_too_wide():
    with pytest.raises(DimensionError):
        conv1d(Tensor(np.ones((1, 1, 2))), Tensor(np.ones((1, 1, 5))), Tensor([0.0]), padding=1)


def test_relu():
    np.testing.assert_allclose(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(relu(Tensor([0.5, 3.0])).data, [0.5, 3.0])


def test_relu_gradient():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    with Graph() as graph:
        loss = relu(x).sum()
    backward(graph, loss)
    np.testing.assert_allclose(x.grad, [0.0, 1.0])


def test_maxpool1d():
    out = maxpool1d(Tensor([[[1.0, 3.0, 2.0, 4.0]]]), 2, 2)
    np.testing.assert_allclose(out.data, [[[3.0, 4.0]]])
    constant = maxpool1d(Tensor(np.full((2, 2, 6), 1.5)), 3, 1)
    np.testing.assert_allclose(constant.data, 1.5)
    data = np.random.default_rng(0).normal(size=(2, 3, 5))
    np.testing.assert_allclose(maxpool1d(Tensor(data), 1, 1).data, data)
    with pytest.raises(DimensionError):
        maxpool1d(Tensor(np.ones((1, 1, 2))), 3, 1)


def test_maxpool1d_tie_goes_to_first():
    x = Tensor([[[2.0, 2.0]]], requires_grad=True)
    with Graph() as graph:
        loss = maxpool1d(x, 2, 2).sum()
    backward(graph, loss)
    np.testing.assert_allclose(x.grad, [[[1.0, 0.0]]])


def test_adaptive_avg_pool1d():
    out = adaptive_avg_pool1d(Tensor([[[2.0, 4.0, 6.0, 8.0]]]), 2)
    np.testing.assert_allclose(out.data, [[[3.0, 7.0]]])
    data = np.random.default_rng(1).normal(size=(2, 3, 5))
    np.testing.assert_allclose(adaptive_avg_pool1d(Tensor(data), 5).data, data)
    np.testing.assert_allclose(adaptive_avg_pool1d(Tensor(np.full((1, 2, 7), 4.0)), 3).data, 4.0)
    with pytest.raises(DimensionError):
        adaptive_avg_pool1d(Tensor(np.ones((1, 1, 3))), 4)


def test_dropout_identities():
    x = Tensor(np.arange(6.0))
    rng = np.random.default_rng(0)
    assert dropout(x, 0.0, True, rng) is x
    assert dropout(x, 0.5, False, rng) is x
    with pytest.raises(ParameterError):
        dropout(x, 1.0, True, rng)


def test_dropout_deterministic_under_seed():
    x = Tensor(np.ones(50))
    first = dropout(x, 0.5, True, np.random.default_rng(7)).data
    second = dropout(x, 0.5, True, np.random.default_rng(7)).data
    np.testing.assert_array_equal(first, second)
    assert set(np.unique(first)) <= {0.0, 2.0}


def test_dropout_preserves_expectation():
    x = Tensor([1.0, -2.0, 3.0])
    outputs = np.stack(
        [dropout(x, 0.5, True, np.random.default_rng(seed)).data for seed in range(10_000)]
    )
    np.testing.assert_allclose(outputs.mean(axis=0), x.data, rtol=0.05)


def test_softmax():
    np.testing.assert_allclose(softmax(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3, 1 / 3, 1 / 3]])
    stable = softmax(Tensor([[1000.0, 0.0]])).data
    assert np.isfinite(stable).all()
    np.testing.assert_allclose(stable, [[1.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(
        softmax(Tensor([[math.log(1.0), math.log(3.0)]])).data, [[0.25, 0.75]]
    )


def test_log_softmax_matches_softmax():
    logits = np.random.default_rng(2).normal(size=(4, 5))
    np.testing.assert_allclose(
        np.exp(log_softmax(Tensor(logits)).data), softmax(Tensor(logits)).data, atol=1e-12
    )


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_conv_pool_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 2, 9)), requires_grad=True)
    kernel = Tensor(rng.normal(size=(3, 2, 3)), requires_grad=True)
    bias = Tensor(rng.normal(size=3), requires_grad=True)
    weights = rng.normal(size=(2, 3, 2))

    def fn(x, kernel, bias):
        out = conv1d(x, kernel, bias, stride=2, padding=1)
        return (adaptive_avg_pool1d(out, 2) * weights).sum()

    assert gradcheck(fn, [x, kernel, bias]) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_dense_softmax_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    weight = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    bias = Tensor(rng.normal(size=5), requires_grad=True)
    mix = rng.normal(size=(3, 5))

    def fn(x, weight, bias):
        logits = dense(x, weight, bias)
        return (softmax(logits) * mix).sum() + (log_softmax(logits) * mix).mean()

    assert gradcheck(fn, [x, weight, bias]) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_maxpool_gradients(seed):
    rng = np.random.default_rng(seed)
    # distinct values 0.1 apart, so no perturbation changes a window's maximum
    x = Tensor(rng.permutation(2 * 3 * 9).reshape(2, 3, 9) * 0.1, requires_grad=True)
    weights = rng.normal(size=(2, 3, 4))

    def fn(x):
        return (maxpool1d(x, 3, 2) * weights).sum()

    assert gradcheck(fn, [x]) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_relu_dropout_gradients(seed):
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(4, 6))
    x = Tensor(signs * rng.uniform(0.1, 1.0, (4, 6)), requires_grad=True)
    weights = rng.normal(size=(4, 6))

    def fn(x):
        # a fresh generator per call keeps the dropout mask fixed
        mask_rng = np.random.default_rng(seed)
        return (dropout(relu(x), 0.4, True, mask_rng) * weights).sum()

    assert gradcheck(fn, [x]) < 1e-4
