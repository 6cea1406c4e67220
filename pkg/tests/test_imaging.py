import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flowpalm.imaging import (
    ShapeError,
    as_flow,
    as_image,
    center_crop,
    endpoint_error,
    jacobian,
    warp_bilinear,
    zero_flow,
)
from flowpalm.synthetic import affine_flow

finite = st.floats(-1.0, 1.0, allow_nan=False, width=64)


def brute_bilinear(img, x, y):
    """Scalar reference: clamp, then interpolate the four neighbours."""
    h, w = img.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1 - fy) * top + fy * bot


def test_as_image_clamps():
    out = as_image([[2.0, -3.0], [0.5, 0.0]])
    assert out.tolist() == [[1.0, -1.0], [0.5, 0.0]]


def test_as_flow_rejects_non_finite_and_bad_shape():
    with pytest.raises(ValueError):
        as_flow(np.full((4, 4, 2), np.nan))
    with pytest.raises(ShapeError):
        as_flow(np.zeros((4, 4, 3)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(2, 12)), elements=finite))
def test_zero_flow_warp_is_identity(img):
    out = warp_bilinear(img, zero_flow(*img.shape))
    assert np.array_equal(out, img)


def test_ramp_shift_by_one_column():
    w = 32
    ramp = np.tile(np.linspace(-1, 1, w), (16, 1))
    flow = np.zeros((16, w, 2), np.float32)
    flow[..., 0] = 1.0
    out = warp_bilinear(ramp, flow)
    np.testing.assert_allclose(out[:, :-1], ramp[:, 1:], atol=1e-12)


def test_far_outside_clamps_to_edge():
    img = np.random.default_rng(0).uniform(-1, 1, (8, 8))
    flow = np.zeros((8, 8, 2), np.float32)
    flow[0, 0] = (-100.0, -100.0)
    flow[7, 7] = (100.0, 0.0)
    out = warp_bilinear(img, flow)
    assert out[0, 0] == img[0, 0]
    assert out[7, 7] == img[7, 7]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_warp_matches_scalar_reference(seed):
    g = np.random.default_rng(seed)
    img = g.uniform(-1, 1, (7, 9))
    flow = g.uniform(-3, 3, (7, 9, 2)).astype(np.float32)
    out = warp_bilinear(img, flow)
    for y in range(7):
        for x in range(9):
            ref = brute_bilinear(img, x + float(flow[y, x, 0]), y + float(flow[y, x, 1]))
            assert out[y, x] == pytest.approx(ref, abs=1e-12)


def test_jacobian_of_translation_and_zero_is_zero():
    flow = np.zeros((10, 10, 2), np.float32)
    assert not np.any(jacobian(flow))
    flow[..., 0], flow[..., 1] = 2.5, -1.0
    assert not np.any(jacobian(flow))


def test_jacobian_of_affine_flow_is_matrix_minus_identity():
    a = np.array([[1.1, 0.2], [-0.3, 0.9]])
    flow = affine_flow(np.hstack([a, [[0.5], [-1.0]]]), 12, 14)
    jac = jacobian(flow)
    np.testing.assert_allclose(jac[1:-1, 1:-1], np.broadcast_to(a - np.eye(2), (10, 12, 2, 2)), atol=1e-4)


def test_jacobian_needs_three_pixels():
    with pytest.raises(ShapeError):
        jacobian(np.zeros((2, 5, 2)))


def test_endpoint_error_examples():
    truth = np.zeros((5, 5, 2))
    est = np.zeros((5, 5, 2))
    est[..., 0], est[..., 1] = 3.0, 4.0
    assert endpoint_error(est, truth) == pytest.approx(5.0)
    assert endpoint_error(est, est) == 0.0


def test_endpoint_error_brute_force_3x3():
    g = np.random.default_rng(3)
    a, b = g.normal(size=(3, 3, 2)), g.normal(size=(3, 3, 2))
    ref = sum(np.hypot(*(a[y, x] - b[y, x])) for y in range(3) for x in range(3)) / 9
    assert endpoint_error(a, b) == pytest.approx(ref, rel=1e-6)


def test_center_crop_keeps_interior():
    arr = np.arange(100).reshape(10, 10)
    assert center_crop(arr, 0.8).shape == (8, 8)
    assert center_crop(arr, 0.8)[0, 0] == 11
