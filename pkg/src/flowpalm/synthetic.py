"""Synthetic stand-ins for real palm data.

* crease identities: 3-5 cubic Bezier curves rasterised with a Gaussian
  cross-profile (lines toward +1 on a -1 background);
* palm-like renderings: smoothed crease blended with band-limited noise, used
  as textured input for flow estimation;
* smooth ground-truth deformations drawn on a coarse control grid, plus a
  step-corruption used to fabricate fields that must fail the smoothness check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .imaging import sample_bilinear, warp_bilinear
from .seeding import derive_seed, rng

DEFAULT_SIZE = 256


@dataclass(frozen=True)
class BezierCurve:
    control_points: tuple  # four (x, y) pairs in [0, 1]^2
    width: float = 2.0  # Gaussian sigma of the cross-profile, px
    intensity: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=np.float64)
        if pts.shape != (4, 2):
            raise ValueError(f"a cubic Bezier needs 4 control points, got shape {pts.shape}")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("control points must lie inside the unit square")
        if self.width <= 0 or not 0 < self.intensity <= 1:
            raise ValueError("width must be positive and intensity in (0, 1]")

    def points(self, n: int) -> np.ndarray:
        p = np.asarray(self.control_points, dtype=np.float64)
        t = np.linspace(0.0, 1.0, n)[:, None]
        s = 1.0 - t
        return s**3 * p[0] + 3 * s**2 * t * p[1] + 3 * s * t**2 * p[2] + t**3 * p[3]


@dataclass(frozen=True)
class CreaseIdentity:
    identity_seed: int
    curves: tuple = field(default=())

    def __post_init__(self):
        if not 3 <= len(self.curves) <= 5:
            raise ValueError(f"an identity needs 3 to 5 curves, got {len(self.curves)}")

    @classmethod
    def from_seed(cls, seed: int) -> "CreaseIdentity":
        g = rng(seed, "crease")
        curves = []
        for _ in range(int(g.integers(3, 6))):
            # endpoints far enough apart to read as a principal line
            while True:
                p0, p3 = g.uniform(0.08, 0.92, size=(2, 2))
                if np.hypot(*(p3 - p0)) > 0.35:
                    break
            d = p3 - p0
            normal = np.array([-d[1], d[0]])
            p1 = p0 + d / 3 + normal * g.uniform(-0.35, 0.35)
            p2 = p0 + 2 * d / 3 + normal * g.uniform(-0.35, 0.35)
            pts = np.clip(np.stack([p0, p1, p2, p3]), 0.0, 1.0)
            curves.append(BezierCurve(
                control_points=tuple(map(tuple, pts.tolist())),
                width=float(g.uniform(1.5, 2.5)),
                intensity=float(g.uniform(0.8, 1.0)),
            ))
        return cls(identity_seed=int(seed), curves=tuple(curves))


def gen_crease_map(identity: CreaseIdentity, size: int = DEFAULT_SIZE, width_scale: float = 1.0) -> np.ndarray:
    """Rasterise an identity's curves; per-pixel maximum over curves (order-free)."""
    ys, xs = np.mgrid[0:size, 0:size]
    pix = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    profile = np.zeros(size * size)
    for curve in identity.curves:
        ctrl = np.asarray(curve.control_points) * (size - 1)
        poly_len = np.sum(np.hypot(*np.diff(ctrl, axis=0).T))
        pts = curve.points(int(np.ceil(poly_len * 4)) + 2) * (size - 1)
        sigma = curve.width * width_scale
        d, _ = cKDTree(pts).query(pix, distance_upper_bound=5.0 * sigma)
        d = np.where(np.isfinite(d), d, np.inf)
        profile = np.maximum(profile, curve.intensity * np.exp(-0.5 * (d / sigma) ** 2))
    return (2.0 * profile - 1.0).reshape(size, size)


def band_limited_noise(shape, seed: int, fine: float = 1.0, coarse: float = 3.0) -> np.ndarray:
    """Difference-of-Gaussians filtered white noise, unit standard deviation."""
    white = rng(seed, "texture").standard_normal(shape)
    tex = ndimage.gaussian_filter(white, fine, mode="reflect") - ndimage.gaussian_filter(white, coarse, mode="reflect")
    return tex / tex.std()


def render_palm_like(crease, texture_seed: int, texture_weight: float = 0.5, crease_blur: float = 1.0) -> np.ndarray:
    crease = np.asarray(crease, dtype=np.float64)
    smooth = ndimage.gaussian_filter(crease, crease_blur, mode="nearest")
    if texture_weight == 0:
        return np.clip(smooth, -1.0, 1.0)
    tex = 0.6 * band_limited_noise(crease.shape, texture_seed)
    return np.clip((1.0 - texture_weight) * smooth + texture_weight * tex, -1.0, 1.0)


@dataclass(frozen=True)
class SyntheticDeformationParams:
    max_displacement: float = 4.0
    smoothness: float = 32.0  # control-grid spacing, px
    affine_component: tuple | None = None  # 2x3 matrix A; adds A @ (x, y, 1) - (x, y)

    def __post_init__(self):
        if self.max_displacement < 0:
            raise ValueError("max_displacement must be >= 0")
        if self.smoothness < 8:
            raise ValueError("smoothness (control spacing) must be >= 8 px")
        if self.affine_component is not None and np.asarray(self.affine_component).shape != (2, 3):
            raise ValueError("affine_component must be a 2x3 matrix")


def affine_flow(matrix, height: int, width: int) -> np.ndarray:
    a = np.asarray(matrix, dtype=np.float64)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    u = a[0, 0] * xs + a[0, 1] * ys + a[0, 2] - xs
    v = a[1, 0] * xs + a[1, 1] * ys + a[1, 2] - ys
    return np.stack([u, v], axis=-1)


def gen_smooth_deformation(params: SyntheticDeformationParams, seed: int, size=(DEFAULT_SIZE, DEFAULT_SIZE)) -> np.ndarray:
    h, w = (size, size) if np.isscalar(size) else size
    spacing = params.smoothness
    ny = int(np.ceil((h - 1) / spacing)) + 1
    nx = int(np.ceil((w - 1) / spacing)) + 1
    ctrl = rng(seed, "deformation").standard_normal((ny, nx, 2))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    flow = sample_bilinear(ctrl, xs / spacing, ys / spacing)
    peak = np.max(np.hypot(flow[..., 0], flow[..., 1]))
    if params.max_displacement == 0 or peak == 0:
        flow = np.zeros_like(flow)
    else:
        flow *= params.max_displacement / peak
    if params.affine_component is not None:
        flow += affine_flow(params.affine_component, h, w)
    return flow.astype(np.float32)


def corrupt_with_steps(flow, seed: int, magnitude: float = 12.0, block: int = 64) -> np.ndarray:
    """Add a piecewise-constant block pattern with jumps of ``magnitude`` px.

    Each jump line makes central differences of ``magnitude / 2`` on two pixel
    columns (or rows); with 64-px blocks a 256x256 field gets >= 3 such lines
    per axis, comfortably above a 1 % discontinuity ratio for ``magnitude > 10``.
    """
    flow = np.array(flow, dtype=np.float64)
    h, w = flow.shape[:2]
    g = rng(seed, "corrupt")
    px, py = g.integers(1, block, size=2)
    ys, xs = np.mgrid[0:h, 0:w]
    flow[..., 0] += magnitude * (((xs + px) // block) % 2)
    flow[..., 1] += magnitude * (((ys + py) // block) % 2)
    return flow.astype(np.float32)


@dataclass
class CorpusPair:
    source: np.ndarray
    target: np.ndarray
    flow: np.ndarray  # ground truth: warp_bilinear(source, flow) == target
    identity_id: str
    pair_id: str
    corrupted: bool = False


def identity_name(index: int) -> str:
    return f"id{index:03d}"


def gen_pair_corpus(n_identities: int, pairs_per_identity: int,
                    params: SyntheticDeformationParams | None = None, seed: int = 0,
                    size: int = DEFAULT_SIZE, corrupt_fraction: float = 0.0,
                    texture_weight: float = 0.5) -> list[CorpusPair]:
    """Render one base image per identity and warp it by ground-truth fields.

    ``round(corrupt_fraction * total)`` pairs, picked by a seeded permutation,
    use a step-corrupted field instead of a smooth one.
    """
    if n_identities < 1 or pairs_per_identity < 1:
        raise ValueError("need at least one identity and one pair per identity")
    if not 0.0 <= corrupt_fraction <= 1.0:
        raise ValueError("corrupt_fraction must be in [0, 1]")
    params = params or SyntheticDeformationParams()
    total = n_identities * pairs_per_identity
    n_bad = int(round(corrupt_fraction * total))
    bad = set(rng(seed, "corrupt-pick").permutation(total)[:n_bad].tolist())
    out = []
    for i in range(n_identities):
        ident = CreaseIdentity.from_seed(derive_seed(seed, "identity", i))
        source = render_palm_like(gen_crease_map(ident, size), derive_seed(seed, "texture", i), texture_weight)
        for j in range(pairs_per_identity):
            flow = gen_smooth_deformation(params, derive_seed(seed, "deform", i, j), (size, size))
            corrupted = i * pairs_per_identity + j in bad
            if corrupted:
                flow = corrupt_with_steps(flow, derive_seed(seed, "corrupt", i, j))
            out.append(CorpusPair(
                source=source,
                target=warp_bilinear(source, flow),
                flow=flow,
                identity_id=identity_name(i),
                pair_id=f"{identity_name(i)}_p{j:02d}",
                corrupted=corrupted,
            ))
    return out
