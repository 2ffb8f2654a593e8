import copy
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmltv import autodiff as ad
from cmltv.autodiff import BNState, DimensionError, DomainError, NonFiniteError, Tensor

from helpers import assert_grad_close, finite_difference

SEEDS = range(20)


def _check_op(build, arrays_, seed):
    """Compare backward() with central differences for sum(build(...) * R)."""
    rng = np.random.default_rng(1000 + seed)
    probe = build(*[Tensor(a) for a in arrays_]).data
    weights = rng.standard_normal(probe.shape)

    def f(*raw):
        return float(np.sum(build(*[Tensor(a) for a in raw]).data * weights))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays_]
    (build(*leaves) * weights).sum().backward()
    numeric = finite_difference(f, [a.copy() for a in arrays_])
    for leaf, num in zip(leaves, numeric):
        assert_grad_close(leaf.grad, num)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


# ---------------------------------------------------------------------------
# forward examples


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((eye @ m).data, m.data)
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_gradient_example():
    a = Tensor([[1.0, 1.0]], requires_grad=True)
    b = Tensor([[2.0], [5.0]])
    (a @ b).sum().backward()
    np.testing.assert_allclose(a.grad, [[2.0, 5.0]])
    num = finite_difference(lambda x: float((x @ b.data).sum()), [np.array([[1.0, 1.0]])], h=1e-6)[0]
    np.testing.assert_allclose(num, [[2.0, 5.0]], atol=1e-8)


def test_matmul_shape_error_reports_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


def test_relu_examples():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    x = Tensor([-1.0, 2.0], requires_grad=True)
    ad.relu(x).sum().backward()
    assert x.grad.tolist() == [0.0, 1.0]
    assert ad.relu(Tensor([1e-12])).data[0] == 1e-12


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0], requires_grad=True)
    ad.relu(x).sum().backward()
    assert x.grad[0] == 0.0


def test_sigmoid_examples():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.sigmoid(Tensor(500.0)).item() == 1.0
    assert ad.sigmoid(Tensor(-2.0)).item() == pytest.approx(0.11920292202211755, abs=1e-15)
    assert ad.sigmoid(Tensor(-2.0)).item() == pytest.approx(float(1 / (1 + mpmath.e**2)), rel=1e-14)


def test_softplus_examples():
    assert ad.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2.0), abs=1e-15)
    assert abs(ad.softplus(Tensor(50.0)).item() - 50.0) < 1e-9
    expected = float(mpmath.log(1 + mpmath.exp(-20)))
    assert ad.softplus(Tensor(-20.0)).item() == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(2.0611536e-9, rel=1e-7)


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(ad.softmax(Tensor([[1000.0, 0.0]])).data, [[1.0, 0.0]])
    row = ad.softmax(Tensor([[1.0, 2.0, 3.0]])).data[0]
    z = [mpmath.e**k for k in (1, 2, 3)]
    expected = [float(v / sum(z)) for v in z]
    np.testing.assert_allclose(row, expected, rtol=1e-14)
    np.testing.assert_allclose(row, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


def test_batchnorm_constant_column_is_zero():
    state = BNState.create(1)
    out = ad.batchnorm(Tensor(np.full((4, 1), 3.0)), state, training=True)
    np.testing.assert_array_equal(out.data, np.zeros((4, 1)))


def test_batchnorm_train_example():
    state = BNState.create(1)
    out = ad.batchnorm(Tensor([[-1.0], [1.0]]), state, training=True)
    expected = np.array([[-1.0], [1.0]]) / math.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out.data, expected, rtol=1e-15)


def test_batchnorm_eval_example():
    state = BNState.create(1)
    state.gamma.data[:] = 2.0
    state.beta.data[:] = 3.0
    out = ad.batchnorm(Tensor([[1.0]]), state, training=False)
    assert out.item() == pytest.approx(2.0 / math.sqrt(1.0 + 1e-5) + 3.0, abs=1e-15)
    assert out.item() < 5.0


def test_batchnorm_running_stats_momentum():
    state = BNState.create(1)
    ad.batchnorm(Tensor([[0.0], [2.0]]), state, training=True)
    # mean 1, unbiased variance 2
    assert state.running_mean[0] == pytest.approx(0.1)
    assert state.running_var[0] == pytest.approx(0.9 + 0.1 * 2.0)


def test_batchnorm_single_row_train_is_error():
    with pytest.raises(DimensionError):
        ad.batchnorm(Tensor([[1.0, 2.0]]), BNState.create(2), training=True)


def test_lgamma_examples():
    assert ad.lgamma(1.0) == pytest.approx(0.0, abs=1e-14)
    assert ad.lgamma(2.0) == pytest.approx(0.0, abs=1e-14)
    assert ad.lgamma(0.5) == pytest.approx(float(mpmath.log(mpmath.sqrt(mpmath.pi))), abs=1e-14)
    assert ad.lgamma(0.5) == pytest.approx(0.5723649, abs=1e-7)


def test_lgamma_accuracy_over_range():
    xs = np.concatenate([np.geomspace(1e-3, 1.0, 300), np.linspace(1.0, 50.0, 300), np.geomspace(50.0, 1e4, 300)])
    approx = ad.lgamma(xs)
    exact = np.array([float(mpmath.loggamma(mpmath.mpf(float(x)))) for x in xs])
    assert np.max(np.abs(approx - exact)) <= 1e-10


@pytest.mark.parametrize("bad", [0.0, -1.0, -0.5])
def test_lgamma_domain(bad):
    with pytest.raises(DomainError):
        ad.lgamma(bad)


def test_digamma_matches_mpmath():
    xs = np.array([1e-3, 0.1, 0.49, 0.5, 1.0, 2.5, 10.0, 300.0])
    expected = [float(mpmath.digamma(x)) for x in xs]
    np.testing.assert_allclose(ad.digamma(xs), expected, rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------------------
# backward


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sigmoid_at_zero():
    x = Tensor(0.0, requires_grad=True)
    ad.sigmoid(x).backward()
    assert x.grad == 0.25


def test_backward_requires_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_repeated_backward_accumulates():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ad.square(x).sum()
    y.backward()
    y.backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])


@pytest.mark.parametrize("k", [1, 2, 5])
def test_fan_out_accumulates_k_times(k):
    x = Tensor([0.3, -1.2], requires_grad=True)
    single = ad.sigmoid(x)
    single.sum().backward()
    one = x.grad.copy()
    x.grad = None
    s = ad.sigmoid(x)
    total = s
    for _ in range(k - 1):
        total = total + s
    total.sum().backward()
    np.testing.assert_allclose(x.grad, k * one, rtol=1e-15)


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        ad.exp(Tensor([1000.0]))
    with pytest.raises(DomainError):
        ad.log(Tensor([0.0]))


def test_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        x = Tensor(rng.standard_normal((5, 4)))
        loss = ad.mean(ad.softplus(x @ w))
        loss.backward()
        return loss.item(), w.grad.copy()

    (a, ga), (b, gb) = run(), run()
    assert a == b
    assert np.array_equal(ga, gb)


def test_constants_do_not_track():
    out = Tensor([1.0]) * 3.0
    assert not out.requires_grad
    out.sum().backward()  # no-op


# ---------------------------------------------------------------------------
# finite-difference sweep over every op, 20 seeds each


@pytest.mark.parametrize("seed", SEEDS)
def test_gradients_elementwise(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    bias = rng.standard_normal(4)
    pos = rng.uniform(0.2, 3.0, (3, 4))
    _check_op(lambda x, y: x + y, [a, b], seed)
    _check_op(lambda x, y: x - y, [a, b], seed)
    _check_op(lambda x, y: x * y, [a, b], seed)
    _check_op(lambda x, y: x / y, [a, pos], seed)
    _check_op(lambda x, c: x + c, [a, bias], seed)
    _check_op(lambda x: ad.scale(x, -2.5), [a], seed)
    _check_op(lambda x: 1.5 - x, [a], seed)
    _check_op(lambda x: 2.0 / x, [pos], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_gradients_nonlinear(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 5)) * 3
    _check_op(ad.relu, [_away_from_zero(rng, (3, 5))], seed)
    _check_op(ad.sigmoid, [a], seed)
    _check_op(ad.softplus, [a], seed)
    _check_op(ad.softmax, [a], seed)
    _check_op(ad.log, [rng.uniform(0.1, 5.0, (3, 5))], seed)
    _check_op(ad.exp, [rng.standard_normal((3, 5))], seed)
    _check_op(ad.square, [a], seed)
    clipped = rng.uniform(-2, 2, (3, 5))
    clipped = np.where(np.abs(np.abs(clipped) - 1.0) < 0.05, 0.0, clipped)
    _check_op(lambda x: ad.clip(x, -1.0, 1.0), [clipped], seed)
    _check_op(ad.lgamma_tensor, [rng.uniform(0.05, 20.0, (3, 5))], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_gradients_structural(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3, 2))
    c = rng.standard_normal((2, 3))
    _check_op(lambda x, y: x @ y, [a, b], seed)
    _check_op(lambda x: ad.sum(x, axis=0), [a], seed)
    _check_op(lambda x: ad.sum(x, axis=1), [a], seed)
    _check_op(lambda x: ad.mean(x), [a], seed)
    _check_op(lambda x: ad.mean(x, axis=0), [a], seed)
    _check_op(lambda x, y: ad.concat_rows([x, y]), [a, c], seed)
    rows = np.array([2, 0, 2])
    _check_op(lambda x: ad.slice_rows(x, rows), [a], seed)
    _check_op(lambda x: x[:, 1], [a], seed)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("training", [True, False])
def test_gradients_batchnorm(seed, training):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 3)) * 2 + 1
    gamma = rng.uniform(0.5, 2.0, 3)
    beta = rng.standard_normal(3)
    base = BNState.create(3)
    base.running_mean = rng.standard_normal(3)
    base.running_var = rng.uniform(0.5, 2.0, 3)

    def build(xx, gg, bb):
        state = copy.deepcopy(base)
        state.gamma, state.beta = gg, bb
        return ad.batchnorm(xx, state, training)

    _check_op(build, [x, gamma, beta], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_gradient_composite_mlp(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 5))
    w1 = rng.standard_normal((5, 6)) * 0.5
    w2 = rng.standard_normal((6, 1)) * 0.5
    t = (rng.random(8) < 0.5).astype(float)

    def build(a, b):
        p = ad.sigmoid(ad.softplus(Tensor(x) @ a) @ b)[:, 0]
        return ad.mean(-(ad.log(p) * t + ad.log(1.0 - p) * (1.0 - t)))

    leaves = [Tensor(w1.copy(), requires_grad=True), Tensor(w2.copy(), requires_grad=True)]
    build(*leaves).backward()
    numeric = finite_difference(lambda a, b: build(Tensor(a), Tensor(b)).item(), [w1.copy(), w2.copy()])
    for leaf, num in zip(leaves, numeric):
        assert_grad_close(leaf.grad, num)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-1e6, 1e6)))
def test_softmax_rows_sum_to_one(x):
    out = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((out >= 0) & (out <= 1))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 16, elements=st.floats(-1e6, 1e6)))
def test_sigmoid_softplus_codomain(x):
    s = ad.sigmoid(Tensor(x)).data
    sp = ad.softplus(Tensor(x)).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(sp >= 0) and np.all(np.isfinite(sp))
    moderate = np.abs(x) < 36
    assert np.all((s[moderate] > 0) & (s[moderate] < 1))
