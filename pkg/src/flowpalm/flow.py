"""Coarse-to-fine Horn-Schunck optical flow.

The returned field follows the backward-warp convention of
:func:`flowpalm.imaging.warp_bilinear`: ``warp_bilinear(source, F)`` approximates
``target``. At every pyramid level the source is re-warped by the current flow,
the brightness constancy constraint is linearised around it, and the
Horn-Schunck fixed-point (Jacobi) iteration refines the total flow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import ShapeError, as_image, endpoint_error, sample_bilinear  # noqa: F401  (re-export)

# classic Horn-Schunck weighted 8-neighbour average
_AVG_KERNEL = np.array([[1, 2, 1], [2, 0, 2], [1, 2, 1]], dtype=np.float64) / 12.0
# intensities are mapped from [-1, 1] onto a 0..255 scale so that the smoothness
# weight has its customary magnitude
_INTENSITY_SCALE = 127.5
MIN_SIZE = 16


class DegenerateImageWarning(UserWarning):
    """Source or target carries no gradient information; a zero field is returned."""


@dataclass(frozen=True)
class FlowEstimatorParams:
    regularization_weight: float = 30.0
    iterations_per_level: int = 200
    pyramid_levels: int = 4
    pyramid_factor: float = 0.5
    warps_per_level: int = 3
    presmooth_sigma: float = 1.0

    def __post_init__(self):
        if not self.regularization_weight > 0:
            raise ValueError("regularization_weight must be positive")
        if self.iterations_per_level < 1 or self.pyramid_levels < 1 or self.warps_per_level < 1:
            raise ValueError("iteration, level and warp counts must be >= 1")
        if not 0 < self.pyramid_factor < 1:
            raise ValueError("pyramid_factor must lie in (0, 1)")
        if self.presmooth_sigma < 0:
            raise ValueError("presmooth_sigma must be >= 0")


def _downsample(img: np.ndarray, factor: float) -> np.ndarray:
    h, w = img.shape
    if factor == 0.5:
        # 2x2 box average; odd extents are padded by edge replication
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
        return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])
    nh, nw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    blurred = ndimage.gaussian_filter(img, 0.5 / factor, mode="nearest")
    ys, xs = np.mgrid[0:nh, 0:nw].astype(np.float64)
    return sample_bilinear(blurred, (xs + 0.5) * (w / nw) - 0.5, (ys + 0.5) * (h / nh) - 0.5)


def _upsample_flow(flow: np.ndarray, shape) -> np.ndarray:
    ch, cw = flow.shape[:2]
    h, w = shape
    sx, sy = cw / w, ch / h
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    up = sample_bilinear(flow, (xs + 0.5) * sx - 0.5, (ys + 0.5) * sy - 0.5)
    up[..., 0] /= sx
    up[..., 1] /= sy
    return up


def _refine(src: np.ndarray, tgt: np.ndarray, flow: np.ndarray, p: FlowEstimatorParams) -> np.ndarray:
    h, w = src.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    alpha2 = p.regularization_weight ** 2
    u, v = flow[..., 0].copy(), flow[..., 1].copy()
    gy_t, gx_t = np.gradient(tgt)
    for _ in range(p.warps_per_level):
        warped = sample_bilinear(src, xs + u, ys + v)
        gy_w, gx_w = np.gradient(warped)
        ix = 0.5 * (gx_w + gx_t)
        iy = 0.5 * (gy_w + gy_t)
        it = warped - tgt
        u0, v0 = u.copy(), v.copy()
        denom = alpha2 + ix**2 + iy**2
        for _ in range(p.iterations_per_level):
            ubar = ndimage.correlate(u, _AVG_KERNEL, mode="nearest")
            vbar = ndimage.correlate(v, _AVG_KERNEL, mode="nearest")
            resid = (ix * (ubar - u0) + iy * (vbar - v0) + it) / denom
            u = ubar - ix * resid
            v = vbar - iy * resid
    return np.stack([u, v], axis=-1)


def estimate_flow(source, target, params: FlowEstimatorParams | None = None) -> np.ndarray:
    """Dense flow ``F`` with ``warp_bilinear(source, F) ~= target``."""
    p = params or FlowEstimatorParams()
    src = as_image(source, clamp=False)
    tgt = as_image(target, clamp=False)
    if src.shape != tgt.shape:
        raise ShapeError(f"source {src.shape} and target {tgt.shape} differ in size")
    h, w = src.shape
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ShapeError(f"images must be at least {MIN_SIZE}x{MIN_SIZE}, got {h}x{w}")
    if np.ptp(src) == 0 or np.ptp(tgt) == 0:
        warnings.warn("constant input image, returning a zero flow field", DegenerateImageWarning, stacklevel=2)
        return np.zeros((h, w, 2), dtype=np.float32)

    src = src * _INTENSITY_SCALE
    tgt = tgt * _INTENSITY_SCALE
    if p.presmooth_sigma > 0:
        src = ndimage.gaussian_filter(src, p.presmooth_sigma, mode="nearest")
        tgt = ndimage.gaussian_filter(tgt, p.presmooth_sigma, mode="nearest")

    pyramid = [(src, tgt)]
    for _ in range(p.pyramid_levels - 1):
        s, t = pyramid[-1]
        if min(s.shape) * p.pyramid_factor < 4:
            break
        pyramid.append((_downsample(s, p.pyramid_factor), _downsample(t, p.pyramid_factor)))

    flow = np.zeros(pyramid[-1][0].shape + (2,))
    for level, (s, t) in enumerate(reversed(pyramid)):
        if level > 0:
            flow = _upsample_flow(flow, s.shape)
        flow = _refine(s, t, flow, p)
    return flow.astype(np.float32)
