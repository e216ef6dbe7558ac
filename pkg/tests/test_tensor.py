import numpy as np
import pytest

from app.core.exceptions import DimensionError, GradientError
from app.tensor import Tensor, backward, gradcheck, no_grad, ops


def leaf(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_broadcast_add_gradients():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    backward(ops.sum(ops.add(a, b)))
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
    np.testing.assert_array_equal(b.grad, np.full(3, 2.0))


def test_gradients_accumulate_over_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    backward(ops.sum(ops.mul(x, x)))
    np.testing.assert_allclose(x.grad, [6.0])


def test_incompatible_shapes_raise():
    with pytest.raises(DimensionError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GradientError):
        backward(ops.mul(x, 2.0))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.mul(x, 2.0)
    assert not y.requires_grad
    assert y.node is None


def test_constants_adopt_tensor_dtype():
    x = Tensor(np.ones(3, dtype=np.float32))
    assert ops.add(x, 1.0).dtype == np.float32
    assert ops.scale(Tensor(np.ones(3)), 0.5).dtype == np.float64


def test_softmax_rows_sum_to_one(rng):
    out = ops.softmax(Tensor(rng.standard_normal((4, 5))), axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-12)


def test_adaptive_pool_matches_block_mean(rng):
    x = Tensor(rng.standard_normal((2, 4, 6)))
    pooled = ops.adaptive_avg_pool(x, (2, 3))
    expected = x.data.reshape(2, 2, 2, 3, 2).mean(axis=(2, 4))
    np.testing.assert_allclose(pooled.data, expected, atol=1e-12)


def test_conv2d_matches_direct_sum(rng):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=2).data
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    expected = np.zeros((3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                expected[o, i, j] = np.sum(w[o] * padded[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3])
    np.testing.assert_allclose(out, expected, atol=1e-10)


def test_conv1x1_is_a_per_pixel_matrix_product(rng):
    x = rng.standard_normal((3, 4, 5))
    w = rng.standard_normal((2, 3))
    b = rng.standard_normal(2)
    out = ops.conv1x1(Tensor(x), Tensor(w), Tensor(b)).data
    for i in range(4):
        for j in range(5):
            np.testing.assert_allclose(out[:, i, j], w @ x[:, i, j] + b, atol=1e-12)


def test_dwconv3x3_matches_direct_sum(rng):
    x = rng.standard_normal((2, 4, 5))
    w = rng.standard_normal((2, 3, 3))
    out = ops.dwconv3x3(Tensor(x), Tensor(w)).data
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    expected = np.zeros_like(x)
    for c in range(2):
        for i in range(4):
            for j in range(5):
                expected[c, i, j] = np.sum(w[c] * padded[c, i:i + 3, j:j + 3])
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv2d_same_padding_matches_direct_sum(rng):
    x = rng.standard_normal((2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    assert out.shape == (3, 4, 4)
    for o in range(3):
        for i in range(4):
            for j in range(4):
                assert out[o, i, j] == pytest.approx(np.sum(w[o] * padded[:, i:i + 3, j:j + 3]) + b[o])


def test_layer_norm_statistics(rng):
    x = Tensor(rng.normal(3.0, 2.0, size=(16, 3, 3)))
    out = ops.layer_norm(x, axis=0, eps=0.0).data
    np.testing.assert_allclose(out.mean(axis=0), np.zeros((3, 3)), atol=1e-12)
    np.testing.assert_allclose(out.var(axis=0), np.ones((3, 3)), atol=1e-10)


def test_layer_norm_constant_slice_gives_bias():
    x = Tensor(np.full((4, 2, 2), 5.0))
    bias = Tensor(np.array([0.5, -1.0, 2.0, 0.0]))
    out = ops.layer_norm(x, Tensor(np.ones(4)), bias, axis=0).data
    np.testing.assert_array_equal(out, np.broadcast_to(bias.data[:, None, None], (4, 2, 2)))


def test_softmax_is_stable_for_large_logits():
    out = ops.softmax(Tensor(np.array([1000.0, 1000.0])), axis=-1).data
    np.testing.assert_array_equal(out, [0.5, 0.5])


def test_elementwise_dispatch():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_allclose(ops.elementwise("gelu", x).data[1], 0.0)
    np.testing.assert_allclose(ops.elementwise("leaky_relu", x).data, [-0.2, 0.0, 2.0])
    np.testing.assert_allclose(ops.elementwise("add", x, 1.0).data, [0.0, 1.0, 3.0])
    np.testing.assert_allclose(ops.elementwise("mul", x, x).data, [1.0, 0.0, 4.0])
    np.testing.assert_allclose(ops.elementwise("scale", x, 0.5).data, [-0.5, 0.0, 1.0])
    with pytest.raises(ValueError):
        ops.elementwise("tanh", x)


def test_adaptive_pool_constant_and_identity(rng):
    constant = Tensor(np.full((2, 7, 5), 3.5))
    np.testing.assert_allclose(ops.adaptive_avg_pool(constant, (3, 2)).data, np.full((2, 3, 2), 3.5))
    x = Tensor(rng.standard_normal((2, 4, 6)))
    np.testing.assert_array_equal(ops.adaptive_avg_pool(x, (4, 6)).data, x.data)


@pytest.mark.parametrize("name", [
    "matmul", "softmax", "layer_norm", "l2_normalize", "conv1x1", "dwconv3x3",
    "conv2d_stride", "adaptive_pool", "upsample", "gelu", "div_sqrt", "concat_stack", "exp",
])
def test_op_gradients(name, rng):
    x = leaf(rng, 3, 4, 4)
    m = leaf(rng, 4, 3)
    w1 = leaf(rng, 5, 3)
    w3 = leaf(rng, 3, 3, 3)
    wk = leaf(rng, 2, 3, 3, 3)
    gain = leaf(rng, 3)

    def loss():
        if name == "matmul":
            out = ops.matmul(x.reshape(12, 4), m)
        elif name == "softmax":
            out = ops.softmax(x, axis=-1)
        elif name == "layer_norm":
            out = ops.layer_norm(x, gain, gain, axis=0)
        elif name == "l2_normalize":
            out = ops.l2_normalize(x, axis=-1)
        elif name == "conv1x1":
            out = ops.conv1x1(x, w1)
        elif name == "dwconv3x3":
            out = ops.dwconv3x3(x, w3, gain)
        elif name == "conv2d_stride":
            out = ops.conv2d(x, wk, stride=2)
        elif name == "adaptive_pool":
            out = ops.adaptive_avg_pool(x, (3, 2))
        elif name == "upsample":
            out = ops.upsample_nearest(x, 2)
        elif name == "gelu":
            out = ops.gelu(x)
        elif name == "exp":
            out = ops.exp(ops.scale(x, 0.5))
        elif name == "div_sqrt":
            out = ops.div(x, ops.sqrt(ops.add(ops.mul(x, x), 1.0)))
        else:
            out = ops.stack([ops.concat([x, x], axis=0), ops.concat([x, x], axis=0)], axis=0)
        weights = np.random.default_rng(1).standard_normal(out.shape)
        return ops.sum(ops.mul(out, weights))

    report = gradcheck(loss, [x, m, w1, w3, wk, gain], h=1e-5, tolerance=1e-6, max_coords=None)
    assert report.ok, report.summary()


def test_gradcheck_detects_wrong_gradient(rng):
    x = leaf(rng, 4)

    def broken():
        # the detached factor moves with x under finite differences but not in backward
        return ops.sum(ops.mul(ops.scale(x, 2.0), x.detach()))

    report = gradcheck(broken, [x], max_coords=None)
    assert not report.ok
    assert report.checked == 4
    assert report.failures()
