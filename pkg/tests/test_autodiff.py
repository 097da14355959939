import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from jnfbench.neural import autodiff as ad
from jnfbench.neural.lstm import bilstm, init_lstm, lstm_forward


def check(build, *arrays, tol=1e-4, h=1e-5):
    """Compare backprop gradients of sum(w * build(...)) with central differences."""
    params = [ad.parameter(a) for a in arrays]
    out = build(*params)
    w = np.random.default_rng(7).standard_normal(out.shape)
    loss = ad.sum_(ad.mul(out, w))
    loss.backward()
    for p in params:
        num = numeric_grad(lambda: float(np.sum(build(*[ad.Tensor(q.value) for q in params]).value * w)),
                           p.value, h)
        assert rel_err(p.grad, num) < tol


@pytest.fixture
def x(rng):
    return rng.standard_normal((5, 4))


@pytest.fixture
def y(rng):
    return rng.standard_normal((5, 4))


def test_add_sub_mul(x, y):
    check(ad.add, x, y)
    check(ad.sub, x, y)
    check(ad.mul, x, y)
    check(lambda a, b: ad.mul(a, b), x, y[:1])  # broadcasting


def test_matmul(x, rng):
    check(ad.matmul, x, rng.standard_normal((4, 3)))
    check(ad.matmul, rng.standard_normal((2, 5, 4)), rng.standard_normal((4, 3)))


def test_unary(x):
    check(ad.tanh, x)
    check(ad.sigmoid, x)
    check(ad.atanh_clipped, np.tanh(x))


def test_structural(x, y):
    check(lambda a, b: ad.concat([a, b], axis=1), x, y)
    check(lambda a: ad.slice_(a, (slice(1, 4), slice(None, None, 2))), x)
    check(lambda a: ad.transpose(a, (1, 0)), x)
    check(lambda a: ad.reshape(a, (2, 10)), x)
    check(lambda a: ad.sum_(a, axis=0), x)
    perm = np.argsort(np.random.default_rng(0).random((5, 4)), axis=1)
    check(lambda a: ad.take_along_axis(a, perm, axis=1), x)


def test_l1_and_magnitude(x, y):
    check(lambda a: ad.abs1_loss(a), x)
    check(ad.complex_magnitude, x, y)


def test_linear_map(x, rng):
    A = rng.standard_normal((3, 5))
    check(lambda a: ad.linear_map([a], lambda v: A @ v, lambda g: (A.T @ g,)), x)


def test_examples():
    t = ad.parameter(np.array(0.0))
    ad.tanh(t).backward()
    assert t.grad == 1.0
    a = ad.parameter(np.array([2.0, 3.0]))
    ad.abs1_loss(ad.sub(a, np.array([1.0, 1.0]))).backward()
    np.testing.assert_array_equal(a.grad, [1.0, 1.0])
    z = ad.parameter(np.zeros(3))
    ad.abs1_loss(z).backward()
    np.testing.assert_array_equal(z.grad, 0.0)


def test_shape_errors(x):
    with pytest.raises(ValueError):
        ad.add(x, np.ones((3, 3)))
    with pytest.raises(ValueError):
        ad.matmul(x, np.ones((3, 3)))
    with pytest.raises(ValueError):
        ad.complex_magnitude(x, x[:2])


def test_no_grad_and_accumulation(x):
    p = ad.parameter(x)
    with ad.no_grad():
        out = ad.tanh(p)
    assert not out.requires_grad
    loss = ad.sum_(ad.add(p, p))  # shared parent
    loss.backward()
    np.testing.assert_array_equal(p.grad, 2.0)


def test_lstm_zero():
    p = init_lstm(3, 4, np.random.default_rng(0))
    for t in p.tensors().values():
        t.value[:] = 0
    out = bilstm(p, p, ad.Tensor(np.zeros((2, 5, 3))))
    assert out.shape == (2, 5, 8)
    assert not np.any(out.value)


def test_lstm_length_one(rng):
    f, b = init_lstm(3, 4, rng), init_lstm(3, 4, rng)
    seq = ad.Tensor(rng.standard_normal((2, 1, 3)))
    out = bilstm(f, b, seq).value
    np.testing.assert_array_equal(out[..., :4], lstm_forward(f, seq).value)
    np.testing.assert_array_equal(out[..., 4:], lstm_forward(b, seq).value)


def test_lstm_matches_reference_recurrence(rng):
    p = init_lstm(3, 4, rng)
    x = rng.standard_normal((2, 6, 3))
    W, R, b = p.W.value, p.R.value, p.b.value
    h = np.zeros((2, 4))
    c = np.zeros((2, 4))
    sig = lambda v: 1 / (1 + np.exp(-v))
    ref = []
    for t in range(6):
        z = x[:, t] @ W.T + h @ R.T + b
        i, f, g, o = np.split(z, 4, axis=1)
        c = sig(f) * c + sig(i) * np.tanh(g)
        h = sig(o) * np.tanh(c)
        ref.append(h)
    np.testing.assert_allclose(lstm_forward(p, ad.Tensor(x)).value, np.stack(ref, 1), atol=1e-12)
    rev = lstm_forward(p, ad.Tensor(x), reverse=True).value
    fwd_of_flipped = lstm_forward(p, ad.Tensor(x[:, ::-1].copy())).value[:, ::-1]
    np.testing.assert_allclose(rev, fwd_of_flipped, atol=1e-12)


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_gradient(rng, reverse):
    p = init_lstm(3, 2, rng)
    x = rng.standard_normal((2, 2, 3))
    check(lambda s, W, R, b: lstm_forward(type(p)(W, R, b), s, reverse=reverse),
          x, p.W.value, p.R.value, p.b.value)


def test_two_layer_bilstm_gradient(rng):
    l1f, l1b = init_lstm(3, 3, rng), init_lstm(3, 3, rng)
    l2f, l2b = init_lstm(6, 2, rng), init_lstm(6, 2, rng)
    x = rng.standard_normal((2, 4, 3))
    names = ("W", "R", "b")
    arrays = [x] + [getattr(l, n).value for l in (l1f, l1b, l2f, l2b) for n in names]

    def build(s, *ps):
        L = [type(l1f)(*ps[3 * j:3 * j + 3]) for j in range(4)]
        return bilstm(L[2], L[3], bilstm(L[0], L[1], s))

    check(build, *arrays)
