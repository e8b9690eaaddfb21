import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advfilter.errors import FormatError, ShapeMismatch
from advfilter.frame_io import Frame
from advfilter.tinynet import (LAYER_SHAPES, ModelInput, SplitMix64, activation_pattern,
                               box_resample_matrix, conv3x3, dump_params, forward, init_params,
                               load_params, loss_and_input_grad, softmax, xavier_bound)


@pytest.fixture(scope="module")
def params():
    return init_params(42)


# --- independent forward pass: explicit loops and slicing, no tensordot ----------

def naive_conv_scalar(x, w, b):
    c_in, h, wd = x.shape
    out = np.zeros((w.shape[0], h, wd))
    for o in range(w.shape[0]):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for dy in range(3):
                        for dx in range(3):
                            yy, xx = i + dy - 1, j + dx - 1
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += w[o, c, dy, dx] * x[c, yy, xx]
                out[o, i, j] = acc
    return out


def shift_conv(x, w, b):
    c_in, h, wd = x.shape
    xp = np.zeros((c_in, h + 2, wd + 2))
    xp[:, 1:-1, 1:-1] = x
    out = np.zeros((w.shape[0], h, wd)) + b[:, None, None]
    for o in range(w.shape[0]):
        for c in range(c_in):
            for dy in range(3):
                for dx in range(3):
                    out[o] += w[o, c, dy, dx] * xp[c, dy:dy + h, dx:dx + wd]
    return out


def reference_logits(p, x):
    a = np.maximum(shift_conv(x, p.conv1_w, p.conv1_b), 0)
    a = (a[:, ::2, ::2] + a[:, 1::2, ::2] + a[:, ::2, 1::2] + a[:, 1::2, 1::2]) / 4
    a = np.maximum(shift_conv(a, p.conv2_w, p.conv2_b), 0)
    a = (a[:, ::2, ::2] + a[:, 1::2, ::2] + a[:, ::2, 1::2] + a[:, 1::2, 1::2]) / 4
    flat = a.reshape(-1)
    return np.array([sum(p.dense_w[k, i] * flat[i] for i in range(flat.size)) + p.dense_b[k]
                     for k in range(10)])


def test_conv_matches_six_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.random((3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    assert np.abs(conv3x3(x, w, b) - naive_conv_scalar(x, w, b)).max() < 1e-12


def test_forward_matches_reference_on_three_images(params):
    rng = np.random.default_rng(1)
    for x in (rng.random((3, 64, 64)), np.zeros((3, 64, 64)), np.ones((3, 64, 64))):
        got = forward(params, x).logits
        assert np.abs(got - reference_logits(params, x)).max() <= 1e-6


# --- parameters -------------------------------------------------------------------

def test_splitmix64_reference_vector():
    r = SplitMix64(1234567)
    assert [r.next_u64() for _ in range(5)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423,
        4593380528125082431, 16408922859458223821]


def test_init_params_draw_order_and_bounds():
    p = init_params(42)
    r = SplitMix64(42)
    for name, shape, fan_in, fan_out in LAYER_SHAPES:
        a = math.sqrt(6 / (fan_in + fan_out))
        assert xavier_bound(fan_in, fan_out) == pytest.approx(a, rel=1e-15)
        w = getattr(p, name)
        assert w.shape == shape
        assert np.all(np.abs(w) <= a)
        first = (2 * ((r.next_u64() >> 11) / 2**53) - 1) * a
        assert w.reshape(-1)[0] == first
        for _ in range(int(np.prod(shape)) - 1):
            r.next_u64()
    for b in (p.conv1_b, p.conv2_b, p.dense_b):
        assert not b.any()


def test_params_deterministic_and_seed_dependent():
    assert init_params(7) == init_params(7)
    assert not np.array_equal(init_params(1).conv1_w, init_params(2).conv1_w)


def test_params_binary_roundtrip(params):
    blob = dump_params(params)
    assert len(blob) == 8 + 8 * sum(a.size for a in params.arrays())
    assert load_params(blob) == params
    with pytest.raises(FormatError):
        load_params(blob[:-1])


def test_params_immutable(params):
    with pytest.raises(ValueError):
        params.conv1_w[0, 0, 0, 0] = 1.0


# --- forward / loss ---------------------------------------------------------------

def test_zero_input_gives_uniform_prediction(params):
    pred = forward(params, np.zeros((3, 64, 64)))
    assert np.all(pred.logits == 0)
    assert np.allclose(pred.probabilities, 0.1)
    assert pred.label == 0
    loss, _ = loss_and_input_grad(params, np.zeros((3, 64, 64)), 3)
    assert loss == pytest.approx(math.log(10), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_probabilities_normalized(seed):
    p = init_params(42)
    x = np.random.default_rng(seed).random((3, 64, 64))
    pred = forward(p, x)
    assert abs(pred.probabilities.sum() - 1) <= 1e-9
    assert np.all(pred.probabilities > 0)
    assert pred.label == int(np.argmax(pred.logits))


def test_softmax_stable_for_large_inputs(params):
    x = np.random.default_rng(2).random((3, 64, 64)) * 1e3
    pred = forward(params, x)
    assert np.all(np.isfinite(pred.probabilities))
    loss, grad = loss_and_input_grad(params, x, (pred.label + 1) % 10)
    assert math.isfinite(loss) and np.all(np.isfinite(grad))
    assert np.allclose(softmax(np.array([1e3, -1e3, 0.0])), [1, 0, 0])


def test_shape_errors(params):
    with pytest.raises(ShapeMismatch):
        forward(params, np.zeros((3, 32, 32)))
    with pytest.raises(ShapeMismatch):
        ModelInput(np.zeros((64, 64, 3)))
    with pytest.raises(ValueError):
        loss_and_input_grad(params, np.zeros((3, 64, 64)), 10)


def _central_difference_errors(seed, n=64, h=1e-4):
    p = init_params(seed)
    rng = np.random.default_rng(1000 + seed)
    x = rng.random((3, 64, 64))
    label = int(rng.integers(10))
    _, grad = loss_and_input_grad(p, x, label)
    errs = []
    while len(errs) < n:
        i = tuple(int(rng.integers(s)) for s in x.shape)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        # a ReLU switching inside the stencil makes the difference quotient meaningless
        if not np.array_equal(activation_pattern(p, xp), activation_pattern(p, xm)):
            continue
        num = (loss_and_input_grad(p, xp, label)[0] - loss_and_input_grad(p, xm, label)[0]) / (2 * h)
        errs.append(abs(grad[i] - num) / max(abs(grad[i]), abs(num), 1e-8))
    return max(errs)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_gradient_matches_finite_differences(seed):
    assert _central_difference_errors(seed) <= 1e-3


def test_gradient_nondegenerate(params):
    x = np.random.default_rng(4).random((3, 64, 64))
    _, g = loss_and_input_grad(params, x, 0)
    assert np.any(g != 0)
    doubled = params.replace(dense_w=params.dense_w * 2)
    _, g2 = loss_and_input_grad(doubled, x, 0)
    assert not np.array_equal(g, g2)


def test_gradient_deterministic(params):
    x = np.random.default_rng(5).random((3, 64, 64))
    a = loss_and_input_grad(params, x, 2)
    b = loss_and_input_grad(params, x, 2)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


# --- resampling -------------------------------------------------------------------

def test_box_resample_rows_sum_to_one():
    for n_in in (1, 7, 64, 100, 129):
        m = box_resample_matrix(n_in, 64)
        assert m.shape == (64, n_in)
        assert np.allclose(m.sum(axis=1), 1)


def test_from_frame_halving_is_2x2_mean():
    px = np.random.default_rng(6).random((128, 128, 3))
    t = ModelInput.from_frame(Frame(0, px)).tensor
    ref = px.reshape(64, 2, 64, 2, 3).mean(axis=(1, 3)).transpose(2, 0, 1)
    assert np.abs(t - ref).max() < 1e-12


def test_from_frame_identity_at_64():
    px = np.random.default_rng(7).random((64, 64, 3))
    assert np.array_equal(ModelInput.from_frame(Frame(0, px)).tensor, px.transpose(2, 0, 1))


def test_from_frame_small_frame_replicates():
    px = np.random.default_rng(8).random((4, 4, 3))
    t = ModelInput.from_frame(Frame(0, px)).tensor
    assert np.allclose(t, np.repeat(np.repeat(px, 16, 0), 16, 1).transpose(2, 0, 1))
