"""Image and flow-field containers, bilinear backward warping, flow Jacobians.

Conventions used throughout the package:

* images are ``float64`` arrays of shape ``(H, W)`` with values in ``[-1, 1]``;
* flow fields are ``float32`` arrays of shape ``(H, W, 2)`` holding ``(u, v) =
  (dx, dy)`` in pixels (``float32`` so that ``.flo`` round trips are bit-exact);
* pixel centres sit on integer coordinates, ``x`` is the column, ``y`` the row.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when array extents do not match or are too small."""


def as_image(data, clamp: bool = True) -> np.ndarray:
    """Validate ``data`` as a gray image, optionally clamping into [-1, 1]."""
    img = np.array(data, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ShapeError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if clamp:
        np.clip(img, -1.0, 1.0, out=img)
    return img


def as_flow(data) -> np.ndarray:
    """Validate ``data`` as an ``(H, W, 2)`` finite flow field (returned as float32)."""
    flow = np.asarray(data)
    if flow.ndim != 3 or flow.shape[2] != 2 or flow.shape[0] == 0 or flow.shape[1] == 0:
        raise ShapeError(f"expected flow of shape (H, W, 2), got {flow.shape}")
    flow = flow.astype(np.float32, copy=False)
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    return flow


def zero_flow(height: int, width: int) -> np.ndarray:
    return np.zeros((height, width, 2), dtype=np.float32)


def _check_same_extent(img: np.ndarray, flow: np.ndarray) -> None:
    if img.shape[:2] != flow.shape[:2]:
        raise ShapeError(f"image {img.shape[:2]} and flow {flow.shape[:2]} differ in size")


def sample_bilinear(values: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Bilinearly sample ``values`` (H, W[, C]) at coordinates, clamping to the edge."""
    h, w = values.shape[:2]
    sx = np.clip(sx, 0.0, w - 1)
    sy = np.clip(sy, 0.0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if values.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    # written so that fx == fy == 0 reproduces values[y0, x0] exactly
    top = values[y0, x0] * (1.0 - fx) + values[y0, x1] * fx
    bottom = values[y1, x0] * (1.0 - fx) + values[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def warp_bilinear(img, flow) -> np.ndarray:
    """Backward warp: ``out(x) = img(x + F(x))`` with bilinear interpolation.

    Samples falling outside the image are clamped to the nearest edge pixel.
    Values are not re-clamped, so the map stays linear in ``img``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {img.shape}")
    flow = as_flow(flow)
    _check_same_extent(img, flow)
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return sample_bilinear(img, xs + flow[..., 0], ys + flow[..., 1])


def jacobian(flow) -> np.ndarray:
    """Per-pixel 2x2 Jacobian of a flow field.

    Returns an ``(H, W, 2, 2)`` array with ``J[..., 0, :] = (du/dx, du/dy)`` and
    ``J[..., 1, :] = (dv/dx, dv/dy)``. Central differences inside, one-sided
    differences on the border rows and columns.
    """
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    if h < 3 or w < 3:
        raise ShapeError(f"flow must be at least 3x3 for differentiation, got {h}x{w}")
    f = flow.astype(np.float64)
    jac = np.empty((h, w, 2, 2), dtype=np.float64)
    for c in range(2):
        jac[..., c, 0] = np.gradient(f[..., c], axis=1)
        jac[..., c, 1] = np.gradient(f[..., c], axis=0)
    return jac


def endpoint_error(estimated, truth) -> float:
    """Mean Euclidean distance between two flow fields, in pixels."""
    a = as_flow(estimated).astype(np.float64)
    b = as_flow(truth).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"flow shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])))


def center_crop(arr: np.ndarray, fraction: float = 0.8) -> np.ndarray:
    """Keep the central ``fraction`` of each spatial axis."""
    h, w = arr.shape[:2]
    mh = int(round(h * (1.0 - fraction) / 2.0))
    mw = int(round(w * (1.0 - fraction) / 2.0))
    return arr[mh:h - mh, mw:w - mw]
