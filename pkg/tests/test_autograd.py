import numpy as np
import pytest

from bidense import autograd as ag
from bidense.autograd import ConvParams, ShapeError, Tape, Tensor
from bidense import gradcheck


def conv2d_oracle(x, w, b, stride, pad):
    """Direct six-nested-loop convolution, float64."""
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, oc, oh, ow))
    for ni in range(n):
        for oi in range(oc):
            for yi in range(oh):
                for xi in range(ow):
                    acc = float(b[oi])
                    for ci in range(ic):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[oi, ci, u, v] * xp[ni, ci, yi * stride + u,
                                                            xi * stride + v]
                    out[ni, oi, yi, xi] = acc
    return out


def rand_conv(rng, in_c, out_c, k, stride=1, pad=0, transposed=False, bias=True):
    shape = (in_c, out_c, k, k) if transposed else (out_c, in_c, k, k)
    w = rng.standard_normal(shape).astype(np.float32) * 0.5
    b = (rng.standard_normal(out_c).astype(np.float32) * 0.1 if bias
         else np.zeros(out_c, np.float32))
    return ConvParams(w, b, stride=stride, padding=pad, transposed=transposed)


# ---------------------------------------------------------------------------
# Tensor / ConvParams basics


def test_tensor_requires_4d():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((3, 3)))


def test_tensor_scalar_item():
    t = Tensor(np.full((1, 1, 1, 1), 2.5))
    assert t.item() == 2.5
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 2, 1, 1))).item()


def test_conv_params_bias_length_checked():
    with pytest.raises(ShapeError):
        ConvParams(np.zeros((4, 2, 3, 3)), np.zeros(3))


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_preserves_spatial_dims_with_unit_padding():
    rng = np.random.default_rng(0)
    x = Tensor(rng.random((1, 64, 24, 24), dtype=np.float32))
    p = rand_conv(rng, 64, 64, 3, stride=1, pad=1)
    assert ag.conv2d(x, p).shape == (1, 64, 24, 24)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(1)
    x = Tensor(rng.random((2, 1, 5, 7), dtype=np.float32))
    p = ConvParams(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    out = ag.conv2d(x, p)
    np.testing.assert_array_equal(out.data, x.data)


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
def test_conv2d_matches_bruteforce(stride, pad):
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((1, 2, 5, 5)).astype(np.float32))
    p = rand_conv(rng, 2, 3, 3, stride=stride, pad=pad)
    got = ag.conv2d(x, p).data
    want = conv2d_oracle(x.data, p.weight.data, p.bias_vector, stride, pad)
    np.testing.assert_allclose(got, want, atol=1e-5)


def test_conv2d_rejects_channel_mismatch():
    rng = np.random.default_rng(3)
    x = Tensor(rng.random((1, 2, 5, 5), dtype=np.float32))
    p = rand_conv(rng, 3, 4, 3)
    with pytest.raises(ShapeError, match="channel"):
        ag.conv2d(x, p)


def test_conv2d_rejects_negative_extent():
    rng = np.random.default_rng(4)
    x = Tensor(rng.random((1, 1, 2, 2), dtype=np.float32))
    p = rand_conv(rng, 1, 1, 5)
    with pytest.raises(ShapeError, match="extent"):
        ag.conv2d(x, p)


def test_conv2d_rejects_non_divisible_stride():
    rng = np.random.default_rng(5)
    x = Tensor(rng.random((1, 1, 6, 6), dtype=np.float32))
    p = rand_conv(rng, 1, 1, 3, stride=2)
    with pytest.raises(ShapeError, match="stride"):
        ag.conv2d(x, p)


# ---------------------------------------------------------------------------
# conv2d_transpose


@pytest.mark.parametrize("size,k,stride,pad,expected", [
    (24, 6, 2, 2, 48),
    (16, 9, 3, 3, 48),
])
def test_conv2d_transpose_output_extent(size, k, stride, pad, expected):
    rng = np.random.default_rng(6)
    x = Tensor(rng.random((1, 64, size, size), dtype=np.float32))
    p = rand_conv(rng, 64, 64, k, stride=stride, pad=pad, transposed=True)
    assert ag.conv2d_transpose(x, p).shape == (1, 64, expected, expected)


def test_conv2d_transpose_rejects_channel_mismatch():
    rng = np.random.default_rng(7)
    x = Tensor(rng.random((1, 3, 4, 4), dtype=np.float32))
    p = rand_conv(rng, 2, 3, 3, transposed=True)
    with pytest.raises(ShapeError, match="channel"):
        ag.conv2d_transpose(x, p)


@pytest.mark.parametrize("k,stride,pad,h", [(3, 1, 1, 5), (6, 2, 2, 4),
                                            (9, 3, 3, 3), (4, 2, 1, 4)])
def test_adjoint_identity(k, stride, pad, h):
    """<conv2d(x), y> == <x, conv2d_transpose(y)> with shared weights."""
    rng = np.random.default_rng(8)
    in_c, out_c = 2, 3
    w = rng.standard_normal((out_c, in_c, k, k)).astype(np.float32)
    zero_out = np.zeros(out_c, np.float32)
    zero_in = np.zeros(in_c, np.float32)
    x = Tensor(rng.standard_normal((2, in_c, h * stride + k, h * stride + k))
               .astype(np.float32))
    fwd = ag.conv2d(x, ConvParams(w, zero_out, stride=stride, padding=pad))
    y = Tensor(rng.standard_normal(fwd.shape).astype(np.float32))
    # the same weight array read in transposed layout is the adjoint map
    back = ag.conv2d_transpose(y, ConvParams(w, zero_in, stride=stride,
                                             padding=pad, transposed=True))
    assert back.shape == x.shape
    lhs = float(np.sum(fwd.data.astype(np.float64) * y.data))
    rhs = float(np.sum(x.data.astype(np.float64) * back.data))
    assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))


# ---------------------------------------------------------------------------
# pixel_shuffle


def test_pixel_shuffle_identity_factor():
    rng = np.random.default_rng(9)
    x = Tensor(rng.random((2, 3, 4, 5), dtype=np.float32))
    out = ag.pixel_shuffle(x, 1)
    np.testing.assert_array_equal(out.data, x.data)


def test_pixel_shuffle_two_by_two_layout():
    x = Tensor(np.array([0.0, 1.0, 2.0, 3.0], np.float32).reshape(1, 4, 1, 1))
    out = ag.pixel_shuffle(x, 2)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data[0, 0], [[0.0, 1.0], [2.0, 3.0]])


def test_pixel_shuffle_subpixel_shape():
    rng = np.random.default_rng(10)
    x = Tensor(rng.random((1, 256, 24, 24), dtype=np.float32))
    assert ag.pixel_shuffle(x, 2).shape == (1, 64, 48, 48)


def test_pixel_shuffle_index_map():
    """Every output element comes from the documented source index."""
    rng = np.random.default_rng(11)
    a, c2, h, w = 3, 2, 2, 4
    x = Tensor(rng.random((1, c2 * a * a, h, w), dtype=np.float32))
    out = ag.pixel_shuffle(x, a).data
    for c in range(c2):
        for i in range(h):
            for j in range(w):
                for di in range(a):
                    for dj in range(a):
                        src = x.data[0, c * a * a + di * a + dj, i, j]
                        assert out[0, c, a * i + di, a * j + dj] == src


def test_pixel_shuffle_is_bijection():
    rng = np.random.default_rng(12)
    x = Tensor(rng.random((2, 8, 3, 5), dtype=np.float32))
    out = ag.pixel_shuffle(x, 2)
    assert np.isclose(out.data.sum(), x.data.sum())
    np.testing.assert_array_equal(np.sort(out.data, axis=None),
                                  np.sort(x.data, axis=None))


def test_pixel_shuffle_inverse_roundtrip():
    rng = np.random.default_rng(13)
    x = Tensor(rng.random((1, 12, 4, 4), dtype=np.float32))
    shuffled = ag.pixel_shuffle(x, 2)
    # the backward map is the inverse index map; drive it through the tape
    with Tape() as tape:
        y = ag.pixel_shuffle(x, 2)
        loss = ag.sum_all(y)
        tape.backward(loss)
    assert x.grad.shape == x.data.shape
    assert shuffled.shape == (1, 3, 8, 8)


def test_pixel_shuffle_rejects_indivisible_channels():
    x = Tensor(np.zeros((1, 6, 2, 2), np.float32))
    with pytest.raises(ShapeError, match="divisible"):
        ag.pixel_shuffle(x, 2)


# ---------------------------------------------------------------------------
# concat_channels


def test_concat_single_input_passthrough():
    rng = np.random.default_rng(14)
    x = Tensor(rng.random((1, 3, 4, 4), dtype=np.float32))
    out = ag.concat_channels([x])
    np.testing.assert_array_equal(out.data, x.data)


def test_concat_two_blocks():
    rng = np.random.default_rng(15)
    a = Tensor(rng.random((1, 64, 8, 8), dtype=np.float32))
    b = Tensor(rng.random((1, 64, 8, 8), dtype=np.float32))
    assert ag.concat_channels([a, b]).shape == (1, 128, 8, 8)


def test_concat_roundtrip_slices():
    rng = np.random.default_rng(16)
    parts = [Tensor(rng.random((2, c, 3, 3), dtype=np.float32)) for c in (1, 4, 2)]
    out = ag.concat_channels(parts).data
    start = 0
    for t in parts:
        c = t.shape[1]
        np.testing.assert_array_equal(out[:, start:start + c], t.data)
        start += c


def test_concat_rejects_spatial_mismatch():
    a = Tensor(np.zeros((1, 2, 4, 4), np.float32))
    b = Tensor(np.zeros((1, 2, 5, 4), np.float32))
    with pytest.raises(ShapeError, match="mismatch"):
        ag.concat_channels([a, b])


def test_concat_backward_partitions_gradient_exactly():
    rng = np.random.default_rng(17)
    parts = [Tensor(rng.standard_normal((1, c, 3, 3)).astype(np.float32))
             for c in (2, 3, 1)]
    with Tape() as tape:
        out = ag.concat_channels(parts)
        loss = ag.l1_loss(out, Tensor(np.zeros_like(out.data)))
        tape.backward(loss)
    upstream = out.grad
    start = 0
    for t in parts:
        c = t.shape[1]
        np.testing.assert_array_equal(t.grad, upstream[:, start:start + c])
        start += c
    total = sum(float(np.abs(t.grad).sum()) for t in parts)
    assert np.isclose(total, float(np.abs(upstream).sum()))


# ---------------------------------------------------------------------------
# relu / add / l1_loss / sum_all


def test_relu_all_negative_gives_zeros():
    x = Tensor(-np.ones((1, 2, 2, 2), np.float32))
    np.testing.assert_array_equal(ag.relu(x).data, 0.0)


def test_relu_all_positive_is_identity():
    rng = np.random.default_rng(18)
    x = Tensor(rng.random((1, 2, 2, 2), dtype=np.float32) + 0.5)
    np.testing.assert_array_equal(ag.relu(x).data, x.data)


def test_relu_mixed_values():
    x = Tensor(np.array([-1.0, 0.0, 2.0], np.float32).reshape(1, 3, 1, 1))
    np.testing.assert_array_equal(ag.relu(x).data.reshape(-1), [0.0, 0.0, 2.0])


def test_add_zero_is_identity():
    rng = np.random.default_rng(19)
    x = Tensor(rng.random((1, 2, 3, 3), dtype=np.float32))
    out = ag.add(x, Tensor(np.zeros_like(x.data)))
    np.testing.assert_array_equal(out.data, x.data)


def test_add_negation_cancels():
    rng = np.random.default_rng(20)
    x = Tensor(rng.standard_normal((1, 2, 3, 3)).astype(np.float32))
    out = ag.add(x, Tensor(-x.data))
    np.testing.assert_array_equal(out.data, 0.0)


def test_add_matches_elementwise_sum():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    y = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(ag.add(Tensor(x), Tensor(y)).data, x + y)


def test_add_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        ag.add(Tensor(np.zeros((1, 1, 2, 2), np.float32)),
               Tensor(np.zeros((1, 1, 2, 3), np.float32)))


def test_l1_loss_zero_when_equal():
    rng = np.random.default_rng(22)
    x = rng.random((1, 3, 4, 4)).astype(np.float32)
    assert ag.l1_loss(Tensor(x), Tensor(x.copy())).item() == 0.0


def test_l1_loss_constant_offset():
    rng = np.random.default_rng(23)
    t = rng.random((2, 3, 5, 5)).astype(np.float32)
    loss = ag.l1_loss(Tensor(t + 0.5), Tensor(t))
    assert abs(loss.item() - 0.5) < 1e-6


def test_l1_loss_gradient_matches_finite_differences():
    assert gradcheck.check_op("l1_loss", seed=1) < 1e-3


# ---------------------------------------------------------------------------
# backward


def test_backward_of_sum_gives_ones():
    rng = np.random.default_rng(24)
    x = Tensor(rng.random((2, 3, 4, 4), dtype=np.float32))
    with Tape() as tape:
        loss = ag.sum_all(x)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_backward_conv_weights_match_finite_differences():
    assert gradcheck.check_op("conv2d", seed=2) < 1e-3


def test_backward_requires_scalar():
    x = Tensor(np.zeros((1, 2, 2, 2), np.float32))
    with Tape() as tape:
        y = ag.relu(x)
        with pytest.raises(ShapeError, match="scalar"):
            tape.backward(y)


def test_backward_rejects_foreign_tensor():
    x = Tensor(np.zeros((1, 1, 1, 1), np.float32))
    with Tape() as tape:
        with pytest.raises(ValueError, match="tape"):
            tape.backward(x)


def test_fanout_gradient_accumulates():
    """A tensor consumed twice gets the sum of both branch gradients."""
    x = Tensor(np.full((1, 1, 2, 2), 3.0, np.float32))
    with Tape() as tape:
        both = ag.add(x, ag.relu(x))   # d/dx = 1 + 1 for positive x
        loss = ag.sum_all(both)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full_like(x.data, 2.0))

    x = Tensor(np.full((1, 1, 2, 2), -3.0, np.float32))
    with Tape() as tape:
        both = ag.add(x, ag.relu(x))   # relu branch contributes nothing below 0
        loss = ag.sum_all(both)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full_like(x.data, 1.0))


def test_tapes_do_not_nest():
    with Tape():
        with pytest.raises(RuntimeError, match="nest"):
            with Tape():
                pass


def test_parameters_rewire_cleanly_across_consecutive_tapes():
    """Stale node ids from an earlier tape must not leak into the next one."""
    rng = np.random.default_rng(26)
    p = ConvParams(rng.standard_normal((2, 1, 3, 3)).astype(np.float32),
                   np.zeros(2, np.float32), padding=1)
    x = Tensor(rng.standard_normal((1, 1, 5, 5)).astype(np.float32))
    target = Tensor(np.zeros((1, 2, 5, 5), np.float32))
    grads = []
    for _ in range(3):
        p.weight.grad = None
        p.bias.grad = None
        with Tape() as tape:
            loss = ag.l1_loss(ag.conv2d(x, p), target)
            tape.backward(loss)
        assert p.weight.grad is not None and p.bias.grad is not None
        grads.append(p.weight.grad.copy())
    np.testing.assert_array_equal(grads[0], grads[1])
    np.testing.assert_array_equal(grads[0], grads[2])


def test_tape_replay_is_deterministic():
    rng = np.random.default_rng(25)
    x_data = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
    p_w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    p_b = rng.standard_normal(4).astype(np.float32)
    t_data = rng.standard_normal((2, 4, 6, 6)).astype(np.float32)

    def run():
        x = Tensor(x_data.copy())
        p = ConvParams(p_w.copy(), p_b.copy(), stride=1, padding=1)
        with Tape() as tape:
            out = ag.relu(ag.conv2d(x, p))
            loss = ag.l1_loss(out, Tensor(t_data.copy()))
            tape.backward(loss)
        return out.data.copy(), x.grad.copy(), p.weight.grad.copy(), loss.item()

    a = run()
    b = run()
    for left, right in zip(a[:3], b[:3]):
        np.testing.assert_array_equal(left, right)
    assert a[3] == b[3]


# ---------------------------------------------------------------------------
# finite-difference property suite over every op


@pytest.mark.parametrize("op", gradcheck.OP_NAMES)
def test_gradient_suite(op):
    assert gradcheck.check_op(op, seed=0) < gradcheck.THRESHOLD
