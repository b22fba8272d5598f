import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from wavelearn import autodiff as ad
from wavelearn.autodiff import Tape, Tensor, backward
from wavelearn.errors import ContractError, DimensionError, DomainError, InputTooShortError
from wavelearn.gradcheck import check_gradients, core_cases


def test_conv1d_dilated_example():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0, 5.0]]]))
    w = Tensor(np.array([[[1.0, 0.0, -1.0]]]))
    out = ad.conv1d(x, w, stride=1, dilation=2)
    assert_allclose(out.data, [[[-4.0]]])


def test_conv1d_identity_kernel():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    w = Tensor(np.array([[[1.0]]]))
    assert_allclose(ad.conv1d(x, w).data, [[[1.0, 2.0, 3.0]]])


def test_conv1d_strided_example():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    w = Tensor(np.array([[[1.0, 1.0]]]))
    assert_allclose(ad.conv1d(x, w, stride=2).data, [[[3.0, 7.0]]])


def _naive_conv(x, w, b, stride, dilation, padding):
    batch, chans, width = x.shape
    k_out, _, taps = w.shape
    if padding == "circular":
        out_w = -(-width // stride)
    else:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
        width = x.shape[2]
        out_w = (width - dilation * (taps - 1) - 1) // stride + 1
    out = np.zeros((batch, k_out, out_w))
    for n in range(batch):
        for k in range(k_out):
            for q in range(out_w):
                acc = 0.0 if b is None else b[k]
                for c in range(chans):
                    for s in range(taps):
                        pos = q * stride + dilation * s
                        if padding == "circular":
                            pos %= width
                        acc += x[n, c, pos] * w[k, c, s]
                out[n, k, q] = acc
    return out


@pytest.mark.parametrize("seed", range(6))
def test_conv1d_matches_naive_loop(seed):
    r = np.random.default_rng(seed)
    batch, chans, width = r.integers(1, 4), r.integers(1, 4), r.integers(4, 9)
    k_out, taps = r.integers(1, 4), r.integers(1, 4)
    stride = int(r.integers(1, 3))
    dilation = int(r.integers(1, 3))
    padding = [0, 1, 2, "circular"][r.integers(0, 4)]
    span = dilation * (taps - 1) + 1
    pad_w = width if padding == "circular" else width + 2 * padding
    if pad_w < span:
        width = span + (0 if padding == "circular" else 0)
        pad_w = width
    x = r.normal(size=(batch, chans, int(width)))
    w = r.normal(size=(int(k_out), int(chans), int(taps)))
    b = r.normal(size=(int(k_out),))
    out = ad.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride, dilation=dilation, padding=padding)
    expected = _naive_conv(x, w, b, stride, dilation, padding)
    assert_allclose(out.data, expected, atol=1e-12)


def test_conv1d_shape_errors():
    x = Tensor(np.zeros((1, 2, 5)))
    w = Tensor(np.zeros((1, 3, 2)))
    with pytest.raises(DimensionError):
        ad.conv1d(x, w)
    with pytest.raises(InputTooShortError):
        ad.conv1d(Tensor(np.zeros((1, 1, 2))), Tensor(np.zeros((1, 1, 5))))


def test_pointwise_examples():
    assert float(ad.sigmoid(Tensor(0.0)).data) == 0.5
    assert float(ad.tanh(Tensor(0.0)).data) == 0.0
    assert float(ad.leaky_relu(Tensor(-1.0), 0.01).data) == pytest.approx(-0.01)


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor(np.array([1.0, -1.0])))


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    v = Tensor(np.array([[3.0], [4.0]]))
    assert_allclose(ad.matmul(eye, v).data, [[3.0], [4.0]])
    a = Tensor(np.array([[1.0, 2.0]]))
    assert_allclose(ad.matmul(a, v).data, [[11.0]])
    r = np.random.default_rng(3)
    x, y = r.normal(size=(3, 4)), r.normal(size=(4, 2))
    naive = np.array([[sum(x[i, k] * y[k, j] for k in range(4)) for j in range(2)] for i in range(3)])
    assert_allclose(ad.matmul(Tensor(x), Tensor(y)).data, naive, atol=1e-12)
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_reduce_examples():
    assert float(ad.reduce_sum(Tensor([1.0, 2.0, 3.0])).data) == 6.0
    assert float(ad.reduce_mean(Tensor([2.0, 4.0])).data) == 3.0
    out = ad.reduce_sum(Tensor([[1.0, 2.0], [3.0, 4.0]]), axis=1)
    assert_allclose(out.data, [3.0, 7.0])
    with pytest.raises(DimensionError):
        ad.reduce_sum(Tensor([1.0]), axis=3)


def test_softmax_family():
    assert_allclose(ad.softmax(Tensor([0.0, 0.0]), axis=0).data, [0.5, 0.5])
    assert_allclose(ad.log_softmax(Tensor([0.0, 0.0]), axis=0).data, [-np.log(2)] * 2)
    big = ad.softmax(Tensor([1000.0, 1000.0]), axis=0)
    assert np.all(np.isfinite(big.data))
    assert_allclose(big.data, [0.5, 0.5])
    r = np.random.default_rng(0)
    x = Tensor(r.normal(size=(4, 5)) * 3)
    assert_allclose(ad.softmax(x, axis=1).data.sum(axis=1), np.ones(4), atol=1e-9)
    assert_allclose(
        np.exp(ad.log_softmax(x, axis=1).data), ad.softmax(x, axis=1).data, atol=1e-12
    )


def test_instance_norm_examples():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    one, zero = Tensor(np.ones(1)), Tensor(np.zeros(1))
    out = ad.instance_norm(x, one, zero, eps=1e-5)
    assert_allclose(out.data, [[[-1.2247, 0.0, 1.2247]]], atol=1e-4)
    const = ad.instance_norm(Tensor(np.full((1, 1, 4), 7.0)), one, zero)
    assert_allclose(const.data, np.zeros((1, 1, 4)))
    shifted = ad.instance_norm(x, Tensor(np.zeros(1)), Tensor(np.full(1, 5.0)))
    assert_allclose(shifted.data, np.full((1, 1, 3), 5.0))
    mean = ad.instance_norm(x, one, zero).data.mean(axis=2)
    assert_allclose(mean, np.zeros((1, 1)), atol=1e-6)


def test_backward_examples():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with Tape():
        backward(ad.reduce_sum(x))
    assert_allclose(x.grad, np.ones(3))

    y = Tensor(np.array([3.0]), requires_grad=True)
    with Tape():
        backward(ad.reduce_sum(ad.mul(y, y)))
    assert_allclose(y.grad, [6.0])


def test_backward_accumulates_without_zero_grad():
    x = Tensor(np.array([2.0]), requires_grad=True)
    for _ in range(2):
        with Tape():
            backward(ad.reduce_sum(ad.mul(x, x)))
    assert_allclose(x.grad, [8.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_contract_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x)
    with Tape():
        out = ad.mul(x, x)
        with pytest.raises(ContractError):
            backward(out)


def test_no_tape_means_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    out = ad.mul(x, x)
    assert out.node_id is None and not out.requires_grad


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=3),
    st.data(),
)
def test_broadcast_pointwise_matches_scalar_loop(shape, data):
    # collapse a random subset of axes to 1 to build a broadcastable partner
    mask = data.draw(st.lists(st.booleans(), min_size=len(shape), max_size=len(shape)))
    other_shape = [1 if m else s for m, s in zip(mask, shape)]
    r = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    a = r.normal(size=tuple(shape))
    b = r.normal(size=tuple(other_shape))
    out_add = ad.add(Tensor(a), Tensor(b)).data
    out_mul = ad.mul(Tensor(a), Tensor(b)).data
    expected_add = np.empty(np.broadcast_shapes(a.shape, b.shape))
    expected_mul = np.empty_like(expected_add)
    for idx in np.ndindex(*expected_add.shape):
        ai = a[tuple(i % s for i, s in zip(idx, a.shape))]
        bi = b[tuple(i % s for i, s in zip(idx, b.shape))]
        expected_add[idx] = ai + bi
        expected_mul[idx] = ai * bi
    assert_allclose(out_add, expected_add, atol=1e-12)
    assert_allclose(out_mul, expected_mul, atol=1e-12)


def test_forward_determinism():
    r = np.random.default_rng(11)
    x = r.normal(size=(2, 3, 16))
    w = r.normal(size=(4, 3, 3))

    def run():
        with Tape():
            out = ad.conv1d(Tensor(x), Tensor(w, requires_grad=True))
            return ad.softmax(out, axis=1).data.copy()

    first, second = run(), run()
    assert np.array_equal(first, second)


@pytest.mark.parametrize("name", sorted(core_cases().keys()))
def test_gradients_match_finite_differences(name):
    build, arrays = core_cases()[name]
    assert check_gradients(build, arrays) < 1e-4
