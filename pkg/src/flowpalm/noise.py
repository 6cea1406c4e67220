"""Distribution-preserving transport of Gaussian noise along a flow field.

Every noise pixel ``z`` is split into ``k*k`` sub-pixel carriers by a Brownian
bridge construction (``g - mean(g) + z / k`` with ``g ~ N(0, I)``), which makes
the carriers exactly i.i.d. standard normal while their sum stays ``k * z``.
Each carrier is moved to ``c - F(c)`` (the inverse direction of the backward
image warp, so noise co-moves with warped content) and dropped into the single
pixel containing its destination. A pixel receiving ``n`` carriers outputs their
sum over ``sqrt(n)``; an empty pixel gets a fresh draw. Because no carrier is
shared between pixels, the output is exactly N(0, I).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .imaging import ShapeError, as_flow, sample_bilinear
from .seeding import rng


@dataclass(frozen=True)
class TransportConfig:
    subpixel_factor: int = 4

    def __post_init__(self):
        if int(self.subpixel_factor) != self.subpixel_factor or self.subpixel_factor < 1:
            raise ValueError(f"subpixel_factor must be a positive integer, got {self.subpixel_factor}")


def warp_noise(noise, flow, config: TransportConfig | None = None, seed: int = 0) -> np.ndarray:
    k = int((config or TransportConfig()).subpixel_factor)
    z = np.asarray(noise, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"noise must be 2-D, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("noise contains non-finite values")
    flow = as_flow(flow).astype(np.float64)
    if flow.shape[:2] != z.shape:
        raise ShapeError(f"noise {z.shape} and flow {flow.shape[:2]} differ in size")
    h, w = z.shape

    g = rng(seed, "bridge").standard_normal((h, w, k, k))
    carriers = g - g.mean(axis=(2, 3), keepdims=True) + z[:, :, None, None] / k

    offs = (np.arange(k) + 0.5) / k - 0.5
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = ys[:, :, None, None] + offs[None, None, :, None]
    cx = xs[:, :, None, None] + offs[None, None, None, :]
    cy, cx = np.broadcast_arrays(cy, cx)
    disp = sample_bilinear(flow, cx, cy)
    tx = np.floor(cx - disp[..., 0] + 0.5).astype(np.intp)
    ty = np.floor(cy - disp[..., 1] + 0.5).astype(np.intp)
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)

    src = np.broadcast_to((ys * w + xs).astype(np.intp)[:, :, None, None], carriers.shape)[inside]
    dst = (ty * w + tx)[inside]
    vals = carriers[inside]

    n = np.bincount(dst, minlength=h * w)
    total = np.bincount(dst, weights=vals, minlength=h * w)
    out = rng(seed, "refill").standard_normal(h * w)
    hit = n > 0
    out[hit] = total[hit] / np.sqrt(n[hit])

    # a pixel that received exactly one parent's full carrier set reproduces
    # that parent's value; return it exactly instead of the rounded re-sum
    lo = np.full(h * w, h * w, dtype=np.intp)
    hi = np.full(h * w, -1, dtype=np.intp)
    np.minimum.at(lo, dst, src)
    np.maximum.at(hi, dst, src)
    whole = (n == k * k) & (lo == hi)
    out[whole] = z.ravel()[lo[whole]]
    return out.reshape(h, w)


def _bonferroni_z(alpha: float, m: int) -> float:
    return float(stats.norm.isf(alpha / (2 * max(m, 1))))


def gaussianity_report(samples, n_pixels: int = 64, n_pairs: int = 200, alpha: float = 0.01,
                       mean_tol: float | None = None, var_tol: float | None = None,
                       corr_tol: float | None = None, seed: int = 0) -> dict:
    """Check a stack of noise fields against i.i.d. N(0, 1).

    Tolerances left as ``None`` are Bonferroni-corrected ``alpha``-level bounds
    for the given sample count. The KS test pools the tested pixels (independent
    under the null) and compares to the exact two-sided critical value.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a (N, H, W) stack, got shape {x.shape}")
    n = x.shape[0]
    if n < 100:
        raise ValueError(f"need at least 100 fields, got {n}")
    flat = x.reshape(n, -1)
    p = flat.shape[1]
    g = rng(seed, "report")
    pix = np.sort(g.choice(p, size=min(n_pixels, p), replace=False))
    h, w = x.shape[1:]
    # half the pairs are horizontal/vertical neighbours, half arbitrary
    n_adj = n_pairs // 2
    ay, ax = g.integers(h - 1, size=n_adj), g.integers(w - 1, size=n_adj)
    down = g.random(n_adj) < 0.5
    a_adj = ay * w + ax
    b_adj = np.where(down, a_adj + w, a_adj + 1)
    a_rnd = g.integers(p, size=n_pairs - n_adj)
    b_rnd = (a_rnd + g.integers(1, p, size=n_pairs - n_adj)) % p
    a = np.concatenate([a_adj, a_rnd])
    b = np.concatenate([b_adj, b_rnd])

    mean_map = flat.mean(axis=0)
    var_map = flat.var(axis=0, ddof=1)
    fa, fb = flat[:, a], flat[:, b]
    fa = (fa - fa.mean(0)) / fa.std(0)
    fb = (fb - fb.mean(0)) / fb.std(0)
    corr = np.mean(fa * fb, axis=0)

    mean_tol = mean_tol if mean_tol is not None else _bonferroni_z(alpha, len(pix)) / np.sqrt(n)
    var_tol = var_tol if var_tol is not None else _bonferroni_z(alpha, len(pix)) * np.sqrt(2.0 / (n - 1))
    corr_tol = corr_tol if corr_tol is not None else _bonferroni_z(alpha, n_pairs) / np.sqrt(n)

    pooled = flat[:, pix].ravel()
    ks = stats.kstest(pooled, "norm")
    ks_crit = float(stats.kstwo.isf(alpha, pooled.size))

    violations = []
    bad_mean = pix[np.abs(mean_map[pix]) > mean_tol]
    bad_var = pix[np.abs(var_map[pix] - 1.0) > var_tol]
    bad_corr = np.flatnonzero(np.abs(corr) >= corr_tol)
    if bad_mean.size:
        violations.append(f"mean outside +-{mean_tol:.4g} at {bad_mean.size} pixel(s)")
    if bad_var.size:
        violations.append(f"variance outside 1+-{var_tol:.4g} at {bad_var.size} pixel(s)")
    if bad_corr.size:
        violations.append(f"|correlation| >= {corr_tol:.4g} for {bad_corr.size} pair(s)")
    if ks.statistic >= ks_crit:
        violations.append(f"KS statistic {ks.statistic:.4g} >= critical {ks_crit:.4g}")

    return {
        "n_samples": n,
        "shape": list(x.shape[1:]),
        "tested_pixels": pix.tolist(),
        "mean_map": mean_map.reshape(x.shape[1:]).tolist(),
        "var_map": var_map.reshape(x.shape[1:]).tolist(),
        "max_abs_mean": float(np.max(np.abs(mean_map[pix]))),
        "max_abs_var_dev": float(np.max(np.abs(var_map[pix] - 1.0))),
        "pairs": np.stack([a, b], axis=1).tolist(),
        "max_abs_corr": float(np.max(np.abs(corr))),
        "ks_statistic": float(ks.statistic),
        "ks_critical": ks_crit,
        "tolerances": {"mean": float(mean_tol), "var": float(var_tol), "corr": float(corr_tol), "alpha": alpha},
        "violations": violations,
        "ok": not violations,
    }
