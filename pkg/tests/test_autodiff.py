import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfigen import autodiff as ad
from mfigen.autodiff import Adam, Tensor, adam_step

from helpers import numeric_grad, rel_error


def param(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise examples
# ---------------------------------------------------------------------------

def test_add_values():
    np.testing.assert_array_equal(ad.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_silu_at_zero():
    x = param([0.0])
    y = ad.silu(x)
    assert y.data[0] == 0.0
    ad.sum(y).backward()
    assert x.grad[0] == 0.5


def test_clamp_values_and_mask():
    x = param([-2.0, 0.5, 2.0])
    y = ad.clamp(x, -1.0, 1.0)
    np.testing.assert_array_equal(y.data, [-1.0, 0.5, 1.0])
    ad.sum(y).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_abs_subgradient_zero_at_kink():
    x = param([-3.0, 0.0, 2.0])
    ad.sum(ad.abs(x)).backward()
    np.testing.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])


def test_sqrt_subgradient_zero_at_zero():
    x = param([0.0, 4.0])
    ad.sum(ad.sqrt(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.25])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_forward_is_an_error():
    with pytest.raises(FloatingPointError):
        ad.exp(Tensor([1000.0]))


# ---------------------------------------------------------------------------
# reductions and backward
# ---------------------------------------------------------------------------

def test_mean_value_and_gradient():
    x = param([1.0, 2.0, 3.0, 4.0])
    m = ad.mean(x)
    assert m.item() == 2.5
    m.backward()
    np.testing.assert_array_equal(x.grad, [0.25] * 4)


def test_sum_gradient_all_ones():
    x = param(np.arange(6.0).reshape(2, 3))
    ad.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_reduce_empty_errors():
    with pytest.raises(ValueError):
        ad.mean(Tensor(np.zeros(0)))


def test_square_grad():
    x = param(3.0)
    ad.sum(ad.square(x)).backward()
    assert x.grad == 6.0


def test_product_grad():
    x, y = param(2.0), param(5.0)
    ad.sum(x * y).backward()
    assert (x.grad, y.grad) == (5.0, 2.0)


def test_backward_requires_scalar():
    x = param([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(x * 2.0)


def test_backward_twice_doubles_gradients_exactly():
    rng = np.random.default_rng(0)
    x = param(rng.standard_normal((2, 3, 5, 5)))
    w = param(rng.standard_normal((4, 3, 3, 3)))
    b = param(rng.standard_normal(4))
    loss = ad.mean(ad.square(ad.silu(ad.conv2d(x, w, b, padding=1))))
    loss.backward()
    first = [p.grad.copy() for p in (x, w, b)]
    loss.backward()
    for p, g in zip((x, w, b), first):
        np.testing.assert_array_equal(p.grad, 2 * g)


def test_shared_node_visited_once():
    x = param(2.0)
    y = x * x
    ad.sum(y + y).backward()  # d/dx 2x^2 = 4x
    assert x.grad == 8.0


def test_forward_bitwise_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
    w = rng.standard_normal((8, 4, 3, 3)).astype(np.float32)
    g = np.ones(8, np.float32)
    z = np.zeros(8, np.float32)
    a = ad.group_norm(ad.conv2d(x, w, padding=1), 4, g, z).data
    b = ad.group_norm(ad.conv2d(x, w, padding=1), 4, g, z).data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 5))
    w = np.ones((1, 1, 1, 1))
    np.testing.assert_array_equal(ad.conv2d(x, w, np.zeros(1)).data, x)


def test_conv_counts_ones():
    out = ad.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), padding=1).data
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == 4.0


def test_conv_non_integral_output_errors():
    with pytest.raises(ValueError, match="non-integral"):
        ad.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 3, 3)), stride=2, padding=1)


def test_conv_even_kernel_errors():
    with pytest.raises(ValueError, match="odd"):
        ad.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 2, 2)))


def _check_op_grads(make, tensors, seed, tol):
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(make().shape)

    def f():
        return float(np.sum(make().data * probe))

    for t in tensors:
        t.grad = None
    ad.sum(make() * Tensor(probe)).backward()
    for t in tensors:
        num = numeric_grad(f, t.data)
        assert rel_error(t.grad, num) < tol, t.name


@pytest.mark.parametrize("stride,padding,cin,cout", [(1, 1, 2, 2), (1, 0, 3, 2), (1, 1, 3, 5), (2, 1, 2, 3)])
def test_conv_gradients_match_finite_differences(stride, padding, cin, cout):
    rng = np.random.default_rng(11)
    size = 5 if stride == 2 else 4
    x = Tensor(rng.standard_normal((2, cin, size, size)), requires_grad=True, name="x")
    w = Tensor(rng.standard_normal((cout, cin, 3, 3)), requires_grad=True, name="w")
    b = Tensor(rng.standard_normal(cout), requires_grad=True, name="b")
    _check_op_grads(lambda: ad.conv2d(x, w, b, stride=stride, padding=padding), [x, w, b], 0, 1e-5)


# ---------------------------------------------------------------------------
# group norm
# ---------------------------------------------------------------------------

def test_group_norm_constant_input_gives_beta():
    beta = np.array([0.5, -1.0, 2.0, 3.0])
    out = ad.group_norm(np.full((2, 4, 3, 3), 7.0), 2, np.ones(4), beta).data
    np.testing.assert_allclose(out, np.broadcast_to(beta[None, :, None, None], out.shape))


def test_group_norm_standardizes():
    rng = np.random.default_rng(5)
    x = 5.0 + 2.0 * rng.standard_normal((1, 4, 16, 16))
    out = ad.group_norm(x, 2, np.ones(4), np.zeros(4)).data.reshape(1, 2, -1)
    np.testing.assert_allclose(out.mean(axis=2), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=2), 1.0, rtol=1e-4)


def test_group_norm_bad_groups():
    with pytest.raises(ValueError, match="divisible"):
        ad.group_norm(np.ones((1, 6, 2, 2)), 4, np.ones(6), np.zeros(6))


def test_group_norm_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((2, 4, 3, 3)), requires_grad=True, name="x")
    g = Tensor(rng.standard_normal(4), requires_grad=True, name="gamma")
    b = Tensor(rng.standard_normal(4), requires_grad=True, name="beta")
    _check_op_grads(lambda: ad.group_norm(x, 2, g, b), [x, g, b], 1, 1e-5)


# ---------------------------------------------------------------------------
# property: every differentiable op against finite differences, many seeds
# ---------------------------------------------------------------------------

UNARY = {
    "silu": ad.silu,
    "tanh": ad.tanh,
    "exp": ad.exp,
    "square": ad.square,
    "abs": ad.abs,
    "clamp": lambda x: ad.clamp(x, -0.7, 0.7),
    "sqrt": lambda x: ad.sqrt(ad.square(x) + 0.1),
    "upsample": ad.upsample2x,
    "avg_pool": ad.avg_pool2x,
    "reshape": lambda x: ad.reshape(x, (2, -1)),
    "slice": lambda x: x[:, 1:, ::2, 1:3],
    "scale": lambda x: ad.scale(x, -1.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(20))
def test_unary_ops_gradcheck_64bit(name, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 2, 4, 4)), requires_grad=True, name=name)
    if name in ("abs", "clamp"):
        # keep finite differences away from the kinks
        x.data[np.abs(x.data) < 1e-3] += 0.01
        x.data[np.abs(np.abs(x.data) - 0.7) < 1e-3] += 0.01
    _check_op_grads(lambda: UNARY[name](x), [x], seed, 1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_binary_and_structural_ops_gradcheck_64bit(seed):
    rng = np.random.default_rng(100 + seed)
    a = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True, name="a")
    b = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True, name="b")
    v = Tensor(rng.standard_normal((2, 3)), requires_grad=True, name="v")
    _check_op_grads(lambda: ad.add_channel(a * b - a, v), [a, b, v], seed, 1e-5)
    xl = Tensor(rng.standard_normal((3, 5)), requires_grad=True, name="xl")
    wl = Tensor(rng.standard_normal((4, 5)), requires_grad=True, name="wl")
    bl = Tensor(rng.standard_normal(4), requires_grad=True, name="bl")
    _check_op_grads(lambda: ad.linear(xl, wl, bl), [xl, wl, bl], seed, 1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_conv_gradcheck_32bit(seed):
    rng = np.random.default_rng(200 + seed)
    x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32), requires_grad=True, name="x")
    w = Tensor(rng.standard_normal((3, 2, 3, 3)).astype(np.float32), requires_grad=True, name="w")
    probe = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
    ad.sum(ad.conv2d(x, w, padding=1) * Tensor(probe)).backward()
    for t in (x, w):
        def f():
            return float(np.sum(ad.conv2d(x, w, padding=1).data.astype(np.float64) * probe))
        num = numeric_grad(f, t.data, h=1e-2)
        assert rel_error(t.grad, num) < 1e-3


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    state = {}
    adam_step([p], [np.zeros(2)], state, lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_moves_by_lr_sign():
    p = np.array([0.0, 0.0])
    adam_step([p], [np.array([3.0, -0.02])], {}, lr=0.01)
    np.testing.assert_allclose(p, [-0.01, 0.01], rtol=1e-5)


def test_adam_quadratic_converges():
    x = param([0.0])
    opt = Adam([x], lr=0.3)
    for _ in range(50):
        opt.zero_grad()
        ad.sum(ad.square(x - 3.0)).backward()
        opt.step()
    assert abs(x.data[0] - 3.0) < 0.5


def test_adam_rejects_non_finite_gradient_with_name():
    x = Tensor([1.0], requires_grad=True, name="weight.x")
    x.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="weight.x"):
        Adam([x]).step()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_scale_and_mean_linear(values):
    x = param(values)
    m = ad.mean(ad.scale(x, 2.0))
    assert m.item() == pytest.approx(2.0 * np.mean(values), abs=1e-12)
