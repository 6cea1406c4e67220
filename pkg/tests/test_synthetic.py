import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowpalm.imaging import warp_bilinear
from flowpalm.prior import discontinuity_ratio
from flowpalm.synthetic import (
    BezierCurve,
    CreaseIdentity,
    SyntheticDeformationParams,
    band_limited_noise,
    corrupt_with_steps,
    gen_crease_map,
    gen_pair_corpus,
    gen_smooth_deformation,
    render_palm_like,
)


def test_identity_is_reproducible_and_bounded():
    a, b = CreaseIdentity.from_seed(11), CreaseIdentity.from_seed(11)
    assert a == b
    assert 3 <= len(a.curves) <= 5
    for c in a.curves:
        pts = np.asarray(c.control_points)
        assert pts.min() >= 0 and pts.max() <= 1


def test_curve_count_and_control_points_enforced():
    with pytest.raises(ValueError):
        CreaseIdentity(0, ())
    with pytest.raises(ValueError):
        BezierCurve(((0, 0), (0.5, 1.2), (1, 1), (1, 0)))


def test_bezier_endpoints():
    c = BezierCurve(((0.1, 0.2), (0.3, 0.9), (0.7, 0.1), (0.9, 0.8)))
    pts = c.points(5)
    np.testing.assert_allclose(pts[0], (0.1, 0.2))
    np.testing.assert_allclose(pts[-1], (0.9, 0.8))


def test_crease_map_deterministic():
    ident = CreaseIdentity.from_seed(3)
    a, b = gen_crease_map(ident), gen_crease_map(ident)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= -1 and a.max() <= 1


@pytest.mark.slow
def test_crease_coverage_over_100_identities():
    fractions = [np.mean(gen_crease_map(CreaseIdentity.from_seed(s)) > 0) for s in range(100)]
    assert 0.01 <= min(fractions) and max(fractions) <= 0.25


def test_render_without_texture_is_smoothed_crease():
    from scipy import ndimage

    crease = gen_crease_map(CreaseIdentity.from_seed(4), 64)
    out = render_palm_like(crease, 9, texture_weight=0.0)
    np.testing.assert_array_equal(out, np.clip(ndimage.gaussian_filter(crease, 1.0, mode="nearest"), -1, 1))
    assert np.array_equal(render_palm_like(crease, 9), render_palm_like(crease, 9))


def test_textures_from_different_seeds_are_uncorrelated():
    crease = gen_crease_map(CreaseIdentity.from_seed(5))
    background = crease < -0.99
    corrs = []
    for s in range(10):
        a = band_limited_noise(crease.shape, 2 * s)
        b = band_limited_noise(crease.shape, 2 * s + 1)
        corrs.append(abs(np.corrcoef(a[background], b[background])[0, 1]))
    assert max(corrs) < 0.2


def test_zero_displacement_gives_zero_field():
    flow = gen_smooth_deformation(SyntheticDeformationParams(0.0), 1, 64)
    assert not np.any(flow)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 8.0), st.floats(16.0, 64.0), st.integers(0, 2**31))
def test_smooth_fields_peak_and_smoothness(max_disp, smooth, seed):
    flow = gen_smooth_deformation(SyntheticDeformationParams(max_disp, smooth), seed, 96)
    assert np.hypot(flow[..., 0], flow[..., 1]).max() == pytest.approx(max_disp, abs=1e-4)
    assert discontinuity_ratio(flow, 5.0) == 0.0


def test_smoothness_floor_enforced():
    with pytest.raises(ValueError):
        SyntheticDeformationParams(4.0, 4.0)


def test_step_corruption_breaks_smoothness():
    flow = gen_smooth_deformation(SyntheticDeformationParams(), 0)
    for s in range(5):
        assert discontinuity_ratio(corrupt_with_steps(flow, s), 5.0) > 0.05


def test_single_pair_corpus_matches_warp():
    (pair,) = gen_pair_corpus(1, 1, seed=2, size=64)
    assert np.array_equal(warp_bilinear(pair.source, pair.flow), pair.target)
    (again,) = gen_pair_corpus(1, 1, seed=2, size=64)
    assert again.target.tobytes() == pair.target.tobytes()


def test_corrupt_fraction_marks_pairs():
    pairs = gen_pair_corpus(4, 2, seed=0, size=64, corrupt_fraction=0.5)
    assert sum(p.corrupted for p in pairs) == 4
