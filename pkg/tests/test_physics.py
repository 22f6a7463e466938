import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfigen import autodiff as ad
from mfigen.autodiff import Tensor
from mfigen.data import encode_bwr
from mfigen.physics import (
    VectorField2D,
    boundary_loss,
    divergence,
    gauss_loss,
    physics_regularizer,
    physics_terms,
    rgb_to_field,
    ring_mask,
)

from helpers import numeric_grad, rel_error


def grid(h=10, w=12):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    return x, y


def test_divergence_of_identity_field_is_two():
    x, y = grid()
    d = divergence(VectorField2D(x, y)).data
    assert d.shape == (8, 10)
    np.testing.assert_array_equal(d, 2.0)


def test_divergence_axis_convention():
    x, y = grid()
    np.testing.assert_array_equal(divergence(VectorField2D(x, 0 * y)).data, 1.0)
    np.testing.assert_array_equal(divergence(VectorField2D(0 * x, -3 * y)).data, -3.0)


def test_divergence_exact_on_quadratic():
    # central differences are exact for quadratics: d/dx x^2 = 2x
    x, y = grid()
    np.testing.assert_allclose(divergence(VectorField2D(x ** 2, 0 * y)).data, 2 * x[1:-1, 1:-1])


def test_small_grid_rejected():
    with pytest.raises(ValueError, match="3x3"):
        divergence(VectorField2D(np.zeros((2, 5)), np.zeros((2, 5))))


def test_component_mismatch_rejected():
    with pytest.raises(ValueError):
        VectorField2D(np.zeros((4, 4)), np.zeros((4, 5)))


@pytest.mark.parametrize("make", [lambda x, y: (0 * x + 3.0, 0 * y - 1.0), lambda x, y: (y, x)])
def test_gauss_loss_zero_fields(make):
    bx, by = make(*grid())
    assert gauss_loss(VectorField2D(bx, by)).item() <= 1e-12


def test_boundary_loss_values():
    ones = np.ones((6, 6))
    assert boundary_loss(VectorField2D(ones, 0 * ones)).item() == 1.0
    inner = np.zeros((6, 6))
    inner[1:-1, 1:-1] = 5.0
    assert boundary_loss(VectorField2D(inner, inner)).item() == 0.0


def test_ring_mask_counts_corners_once():
    assert ring_mask(5, 7).sum() == 2 * 7 + 2 * 3


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(3, 12), st.floats(-4, 4), st.floats(-4, 4))
def test_gauss_loss_invariants(h, w, a, b):
    # curl-free linear field a*x + b*y pairs: divergence is a + b
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    f = VectorField2D(a * x + b * y, b * x - a * y)
    assert gauss_loss(f).item() == pytest.approx(0.0, abs=1e-9)
    g = VectorField2D(a * x, b * y)
    assert gauss_loss(g).item() == pytest.approx(abs(a + b), abs=1e-9)


def test_white_pixels_map_to_zero_vector():
    img = np.ones((3, 4, 4))
    f = rgb_to_field(img)
    assert not f.bx.data.any() and not f.by.data.any()


def test_bwr_sign_lands_on_expected_component():
    px = encode_bwr(np.array([[0.6, -0.6]])).pixels.astype(np.float64) / 127.5 - 1
    f = rgb_to_field(px.transpose(2, 0, 1))
    assert f.bx.data[0, 0] > 0 and f.by.data[0, 0] == 0
    assert f.by.data[0, 1] > 0 and f.bx.data[0, 1] == 0


def test_rgb_to_field_channel_check():
    with pytest.raises(ValueError, match="3 channels"):
        rgb_to_field(np.zeros((2, 4, 4)))


def test_regularizer_zero_weights_short_circuit():
    img = np.random.default_rng(0).uniform(-1, 1, (2, 3, 6, 6))
    assert physics_regularizer(img, 0.0, 0.0).item() == 0.0
    t = physics_terms(img, 0.5, 0.2)
    assert t.total.item() == pytest.approx(0.5 * t.gauss.item() + 0.2 * t.boundary.item())


@pytest.mark.parametrize("seed", range(5))
def test_physics_terms_gradient(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 6, 6)), requires_grad=True)
    physics_regularizer(x).backward()
    num = numeric_grad(lambda: physics_regularizer(x.data).item(), x.data)
    assert rel_error(x.grad, num) < 1e-6


def test_boundary_gradient_finite_at_zero_magnitude():
    x = Tensor(np.ones((1, 3, 5, 5)), requires_grad=True)
    physics_regularizer(x).backward()
    assert np.all(np.isfinite(x.grad))
    assert not ad.sum(Tensor(x.grad)).item()


@pytest.mark.parametrize("v,want", [(1.0, (1.0, 0.0)), (-0.5, (0.0, 127 / 255))])
def test_adapter_on_colormap_pixels(v, want):
    px = encode_bwr(np.array([[v]])).pixels.astype(np.float64) / 127.5 - 1
    f = rgb_to_field(px.transpose(2, 0, 1))
    assert (f.bx.data[0, 0], f.by.data[0, 0]) == pytest.approx(want, abs=1e-15)


def test_sinusoidal_divergence_free_field_small():
    x, y = grid(32, 32)
    assert gauss_loss(VectorField2D(np.sin(y), np.sin(x))).item() < 1e-2


@pytest.mark.parametrize("c", [-3.0, 0.5, 2.0])
def test_gauss_loss_homogeneous(c):
    rng = np.random.default_rng(0)
    bx, by = rng.standard_normal((2, 9, 9))
    base = gauss_loss(VectorField2D(bx, by)).item()
    assert gauss_loss(VectorField2D(c * bx, c * by)).item() == pytest.approx(abs(c) * base)


def test_boundary_loss_one_loaded_side():
    bx = np.zeros((8, 8))
    bx[0, :] = 1.0
    assert boundary_loss(VectorField2D(bx, 0 * bx)).item() == pytest.approx(8 / 28)


def test_white_batch_has_no_physics_penalty():
    assert physics_regularizer(np.ones((2, 3, 8, 8)), 0.7, 0.9).item() == 0.0
