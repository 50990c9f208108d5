import numpy as np
import pytest

from semdepth import autodiff as ad
from semdepth.autodiff import Tensor


def test_softmax_symmetric():
    out = ad.softmax(Tensor([0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_l2_normalize_345(f64):
    out = ad.l2_normalize(Tensor([3.0, 4.0]), axis=0, eps=0.0)
    np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-12)


def test_conv1x1_hand_oracle(f64):
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    w = Tensor(np.array([[[[2.0]]]]))
    out = ad.conv2d(x, w, Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data[0, 0], [[2, 4], [6, 8]])


def test_conv3x3_matches_loop(f64, rng):
    x = rng.normal(size=(2, 3, 5, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(5):
                for j in range(6):
                    ref[n, o, i, j] = (xp[n, :, i:i + 3, j:j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_reflect_padding_and_bad_mode(f64):
    x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
    w = Tensor(np.ones((1, 1, 3, 3)) / 9)
    out = ad.conv2d(x, w, pad_mode="reflect")
    assert out.data[0, 0, 1, 1] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        ad.conv2d(x, w, pad_mode="wrap")


def test_product_rule():
    x, y = ad.parameter(2.0), ad.parameter(3.0)
    ad.backward(x * y)
    assert float(x.grad) == 3.0 and float(y.grad) == 2.0


def test_l2_normalize_grad_orthogonal(f64, rng):
    v = rng.normal(size=5)
    v /= np.linalg.norm(v)
    t = ad.parameter(v)
    ad.backward(ad.l2_normalize(t, axis=0).sum())
    assert abs(np.dot(t.grad, v)) <= 1e-6


def test_non_participating_leaf_gets_zero_grad():
    x, unused = ad.parameter([1.0, 2.0]), ad.parameter([5.0])
    ad.backward((x * x).sum())
    np.testing.assert_array_equal(unused.grad, [0.0])


def test_backward_requires_scalar():
    x = ad.parameter([1.0, 2.0])
    with pytest.raises(ValueError):
        ad.backward(x * 2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_forward_raises():
    with pytest.raises(ad.NonFiniteError):
        ad.log(Tensor([0.0]))


def test_sqrt_finite_grad_at_zero(f64):
    x = ad.parameter(np.zeros(3))
    ad.backward(ad.sqrt(x).sum())
    assert np.isfinite(x.grad).all()


def test_shape_mismatch():
    with pytest.raises(ValueError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_gradient_check_polynomial(f64, rng):
    err = ad.gradient_check(lambda t: (t * t).sum(), rng.normal(size=(4, 3)))
    assert err < 1e-7


def test_gradient_check_detects_nondeterminism(f64):
    state = {"n": 0}

    def f(t):
        state["n"] += 1
        return t.sum() * state["n"]
    with pytest.raises(ad.NonDeterministicError):
        ad.gradient_check(f, np.ones(2))


@pytest.mark.parametrize("op", [
    lambda a, b: (a * b + a / (b * b + 1)).sum(),
    lambda a, b: ad.sigmoid(a).sum() + ad.elu(b).mean(),
    lambda a, b: (ad.softmax(a, axis=1) * b).sum(),
    lambda a, b: (ad.exp(a * 0.1) + ad.log(b * b + 1.0) + ad.sqrt(a * a)).sum(),
    lambda a, b: (ad.concat([a, b], axis=0) * ad.concat([b, a], axis=0)).sum(),
    lambda a, b: ad.square(ad.matmul(a, ad.transpose(b, (1, 0)))).sum(),
    lambda a, b: ad.clamp(a, -0.5, 0.5).sum() + ad.abs(b).sum(),
])
def test_elementwise_gradients(f64, rng, op):
    a = rng.normal(size=(3, 4))
    b = rng.uniform(0.5, 1.5, size=(3, 4))
    assert ad.gradient_check(op, [a, b]) < 1e-4


def test_pool_and_resize_gradients(f64, rng):
    x = rng.normal(size=(1, 2, 4, 6))
    assert ad.gradient_check(lambda t: (ad.avg_pool3x3(t) ** 2).sum(), x) < 1e-4
    assert ad.gradient_check(lambda t: (ad.upsample_nearest(t, 2) ** 2).sum(), x) < 1e-4
    assert ad.gradient_check(lambda t: (ad.resize_bilinear(t, (7, 9)) ** 2).sum(), x) < 1e-4


def test_forward_deterministic(rng):
    x = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    a = ad.conv2d(Tensor(x), Tensor(w)).data
    b = ad.conv2d(Tensor(x), Tensor(w)).data
    assert np.array_equal(a, b)


def test_default_dtype_switch():
    assert Tensor([1.0]).dtype == np.float32
    with ad.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
