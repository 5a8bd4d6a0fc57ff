import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from careg.bench.metrics import nccc
from careg.imaging import laplacian_build, laplacian_invert
from careg.resampling import (
    BL, CC, KD16, NN, KernelSpec, ResamplingRules, adaptive_resample,
    classify_features_for_resampling, local_contrast, reflect101, sample, sample_points, warp,
)

KERNELS = [NN, BL, CC, KD16]


class Shift:
    def __init__(self, dx, dy):
        self.d = np.array([dx, dy], float)

    def apply(self, pts):
        return np.asarray(pts, float) + self.d


class Rot:
    """Rotation by ``deg`` about ``c``; pulls master pixels into the source."""

    def __init__(self, deg, c):
        th = np.radians(deg)
        self.R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        self.c = np.asarray(c, float)

    def apply(self, pts):
        return (np.asarray(pts, float) - self.c) @ self.R.T + self.c


def sinusoid(x, y, f=0.1):
    return 0.5 + 0.25 * np.sin(2 * np.pi * f * x + 0.3) + 0.2 * np.cos(2 * np.pi * f * y + 1.1)


def sinusoid_image(n=64):
    yy, xx = np.mgrid[0:n, 0:n]
    return sinusoid(xx, yy)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def test_kernel_spec_validation():
    assert [k.support for k in KERNELS] == [1, 2, 4, 16]
    with pytest.raises(ValueError):
        KernelSpec("MTF")
    with pytest.raises(ValueError):
        KernelSpec("KD16", beta=0.0)


def test_reflect101():
    assert reflect101(np.array([-2, -1, 0, 4, 5, 6]), 5).tolist() == [2, 1, 0, 4, 3, 2]


@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.kind)
def test_node_interpolation(k):
    img = np.random.default_rng(0).random((20, 24))
    yy, xx = np.mgrid[0:20, 0:24]
    out = sample_points(img, xx.astype(float), yy.astype(float), k)
    np.testing.assert_allclose(out, img, atol=1e-6 if k.kind == "KD16" else 1e-12)


@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.kind)
def test_constant_preservation(k):
    img = np.full((16, 16), 0.37)
    q = np.random.default_rng(1).uniform(-5, 20, (500, 2))
    np.testing.assert_allclose(sample_points(img, q[:, 0], q[:, 1], k), 0.37, atol=1e-6)


def test_bilinear_midpoint_and_nn_half_up():
    img = np.tile([0.0, 1.0, 0.0], (4, 1))
    assert sample(img, 0.5, 1.0, BL) == pytest.approx(0.5)
    assert sample(img, 0.5, 1.0, NN) == 1.0  # half-up tie
    assert sample(img, 0.49, 1.0, NN) == 0.0


def test_kd16_beats_cc_on_bandlimited_sinusoid():
    img = sinusoid_image()
    q = np.random.default_rng(2).uniform(16, 47, (1000, 2))
    truth = sinusoid(q[:, 0], q[:, 1])
    err = {k.kind: np.abs(sample_points(img, q[:, 0], q[:, 1], k) - truth).max() for k in (CC, KD16)}
    assert err["KD16"] < err["CC"]


def test_error_ordering_statistical():
    img = sinusoid_image()
    rng = np.random.default_rng(3)
    ok = 0
    for _ in range(100):
        q = rng.uniform(16, 47, (50, 2))
        truth = sinusoid(q[:, 0], q[:, 1])
        e = [np.abs(sample_points(img, q[:, 0], q[:, 1], k) - truth).max() for k in KERNELS]
        ok += e[0] >= e[1] >= e[2] >= e[3]
    assert ok >= 95


# ---------------------------------------------------------------------------
# Warp
# ---------------------------------------------------------------------------

def test_identity_nn_exact():
    img = np.random.default_rng(4).random((30, 40))
    assert np.array_equal(warp(img, Shift(0, 0), k=NN), img)


def test_integer_translation_reflects():
    img = np.random.default_rng(5).random((20, 25))
    out = warp(img, Shift(3, 5), k=NN)
    yy, xx = np.mgrid[0:20, 0:25]
    expect = img[reflect101(yy + 5, 20), reflect101(xx + 3, 25)]
    assert np.array_equal(out, expect)
    assert np.array_equal(out[:15, :22], img[5:, 3:])


def test_out_shape_is_rows_cols():
    img = np.random.default_rng(6).random((20, 25))
    assert warp(img, Shift(0, 0), out_shape=(7, 11), k=NN).shape == (7, 11)


def checker(x, y, period=16.0):
    """Smooth checker (product of sines) so it is well sampled at unit spacing."""
    return 0.5 + 0.4 * np.sin(np.pi * x / period) * np.sin(np.pi * y / period)


def test_rotated_checker_against_analytic_render():
    n = 128
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    src = checker(xx, yy)
    t = Rot(7.3, ((n - 1) / 2, (n - 1) / 2))
    out = warp(src, t, k=CC)
    p = t.apply(np.c_[xx.ravel(), yy.ravel()])
    truth = checker(p[:, 0], p[:, 1]).reshape(n, n)
    inside = ((p >= 0) & (p <= n - 1)).all(1).reshape(n, n)
    assert nccc(out, truth, inside).paper > 0.98


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(-7, 7), st.integers(-7, 7))
def test_nn_conserves_brightness_under_lattice_permutation(seed, dx, dy):
    img = np.random.default_rng(seed).random((12, 12))
    # a shift on a torus is a pure permutation of the lattice
    class Torus:
        def apply(self, pts):
            return np.mod(np.asarray(pts) + [dx, dy], 12)
    out = warp(img, Torus(), k=NN)
    assert np.array_equal(np.sort(out.ravel()), np.sort(img.ravel()))


# ---------------------------------------------------------------------------
# Feature classification
# ---------------------------------------------------------------------------

def test_classify_blank_image():
    img = np.zeros((32, 32))
    rules = classify_features_for_resampling(img, np.zeros((32, 32), int))
    assert not rules.flags.any()
    assert rules.table == {1: "BL", 2: "CC", 3: "KD16"}
    assert [rules.kernel_for_level(l).kind for l in range(6)] == ["CC", "BL", "CC", "KD16", "KD16", "KD16"]


def test_classify_single_dot():
    img = np.zeros((16, 16))
    img[7, 9] = 1.0
    rules = classify_features_for_resampling(img, (img > 0.5).astype(int))
    assert rules.flags.sum() == 1 and rules.flags[7, 9]


def test_classify_planted_dots_and_blobs():
    rng = np.random.default_rng(8)
    img = np.zeros((128, 128))
    img[10:30, 10:40] = 0.9
    img[60:90, 70:100] = 0.8
    img[100:120, 20:50] = 1.0
    dots = []
    while len(dots) < 20:
        r, c = rng.integers(2, 126, 2)
        if img[r - 2:r + 3, c - 2:c + 3].any():
            continue
        area = int(rng.integers(1, 4))  # 1..3 px
        cells = [(r, c), (r, c + 1), (r + 1, c)][:area]
        for rr, cc in cells:
            img[rr, cc] = rng.uniform(0.5, 1.0)
        dots.append(cells)
    labels = (img > 0.2).astype(int)
    rules = classify_features_for_resampling(img, labels)
    comp, n = ndimage.label(rules.flags, structure=np.ones((3, 3)))
    assert n == 20
    for cells in dots:
        assert all(rules.flags[rr, cc] for rr, cc in cells)
    assert not rules.flags[10:30, 10:40].any()


def test_classify_shape_errors():
    with pytest.raises(ValueError):
        classify_features_for_resampling(np.zeros((4, 4)), np.zeros((4, 5), int))
    with pytest.raises(ValueError):
        ResamplingRules(np.zeros((4, 4), bool), {1: "bogus"})


# ---------------------------------------------------------------------------
# Adaptive resampling
# ---------------------------------------------------------------------------

def test_adaptive_identity_equals_pyramid_round_trip():
    img = np.random.default_rng(9).random((64, 64))
    rules = ResamplingRules(np.zeros(img.shape, bool))
    out = adaptive_resample(img, Shift(0, 0), rules, levels=4)
    ref = laplacian_invert(laplacian_build(img, 4))
    assert np.abs(out - ref).max() < 1e-6
    assert np.abs(out - img).max() < 1e-6


@pytest.mark.parametrize("t", [Shift(0.37, -1.4), Rot(11.0, (20, 30))], ids=["shift", "rot"])
def test_adaptive_constant_image(t):
    img = np.full((48, 64), 0.62)
    flags = np.zeros(img.shape, bool)
    flags[10, 10] = True
    out = adaptive_resample(img, t, ResamplingRules(flags), levels=3)
    np.testing.assert_allclose(out, 0.62, atol=1e-6)


def test_adaptive_output_frame_and_errors():
    img = np.random.default_rng(10).random((32, 32))
    rules = ResamplingRules(np.zeros(img.shape, bool))
    assert adaptive_resample(img, Shift(0, 0), rules, levels=2, out_shape=(24, 40)).shape == (24, 40)
    with pytest.raises(ValueError):
        adaptive_resample(img, Shift(0, 0), rules, levels=1)
    with pytest.raises(ValueError):
        adaptive_resample(img, Shift(0, 0), rules, levels=7)


def dot_scene(seed=0, n=64):
    """Smooth undersampled background with one 1-px high-contrast dot."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((n, n)), 3.0, mode="mirror")
    img = 0.2 + 0.3 * (img - img.min()) / np.ptp(img)
    r, c = rng.integers(16, n - 16, 2)
    img[r, c] = 1.0
    return img, (int(r), int(c))


@pytest.mark.parametrize("seed", range(5))
def test_adaptive_keeps_dot_contrast(seed):
    img, (r, c) = dot_scene(seed)
    rules = classify_features_for_resampling(img, (img > 0.6).astype(int))
    assert rules.flags[r, c]
    t = Shift(0.5, 0.0)
    ada = adaptive_resample(img, t, rules, levels=4)
    cc = warp(img, t, k=CC)
    # master pixel (c-0.5) pulls from the dot; look around it in both outputs
    win = (slice(r - 1, r + 2), slice(c - 2, c + 1))
    assert np.ptp(ada[win]) >= np.ptp(cc[win])
    assert local_contrast(ada)[r, c - 1] >= local_contrast(cc)[r, c - 1]
