import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from careg.imaging import (
    BINOMIAL5,
    ImageError,
    LaplacianPyramid,
    canny,
    dump_pyramid,
    expand,
    gaussian_kernel,
    gaussian_pyramid,
    hysteresis,
    laplacian_build,
    laplacian_invert,
    load_image,
    save_image,
)


def reflect101(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def loop_correlate(img, kernel):
    """Separable correlation with explicit reflect-101 indexing."""
    h, w = img.shape
    r = len(kernel) // 2
    tmp = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            tmp[y, x] = sum(kernel[k + r] * img[reflect101(y + k, h), x] for k in range(-r, r + 1))
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            out[y, x] = sum(kernel[k + r] * tmp[y, reflect101(x + k, w)] for k in range(-r, r + 1))
    return out


def loop_reduce(img):
    return loop_correlate(img, BINOMIAL5)[::2, ::2]


def loop_expand(img, shape):
    up = np.zeros(shape)
    up[::2, ::2] = img[: (shape[0] + 1) // 2, : (shape[1] + 1) // 2]
    return loop_correlate(up, 2 * BINOMIAL5)


# -- I/O -------------------------------------------------------------------

def write_pgm(path, w, h, maxval, payload):
    path.write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + payload)


def test_load_pgm_scaling_endpoints(tmp_path):
    p = tmp_path / "a.pgm"
    write_pgm(p, 2, 2, 255, bytes([0, 255, 255, 0]))
    np.testing.assert_array_equal(load_image(p), [[0, 1], [1, 0]])


def test_load_pgm_single_value(tmp_path):
    p = tmp_path / "b.pgm"
    write_pgm(p, 1, 1, 255, bytes([128]))
    assert load_image(p)[0, 0] == 128 / 255


def test_load_pgm_16bit(tmp_path):
    p = tmp_path / "c.pgm"
    write_pgm(p, 2, 1, 65535, np.array([0, 65535], dtype=">u2").tobytes())
    np.testing.assert_array_equal(load_image(p), [[0.0, 1.0]])


def test_truncated_pgm_is_unreadable(tmp_path):
    p = tmp_path / "t.pgm"
    write_pgm(p, 4, 4, 255, bytes(5))
    with pytest.raises(ImageError, match="unreadable file"):
        load_image(p)


def test_missing_and_zero_size(tmp_path):
    with pytest.raises(ImageError, match="unreadable file"):
        load_image(tmp_path / "nope.png")
    p = tmp_path / "z.pgm"
    write_pgm(p, 0, 3, 255, b"")
    with pytest.raises(ImageError, match="zero-size"):
        load_image(p)


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
@pytest.mark.parametrize("depth", [8, 16])
def test_save_load_identity_at_bit_depth(tmp_path, suffix, depth):
    rng = np.random.default_rng(3)
    maxval = (1 << depth) - 1
    img = rng.integers(0, maxval + 1, size=(7, 5)) / maxval
    p = tmp_path / f"img{suffix}"
    save_image(img, p, depth)
    np.testing.assert_allclose(load_image(p), img, atol=0, rtol=0)


def test_colour_png_is_luma_converted(tmp_path):
    from PIL import Image
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[..., 1] = 255
    p = tmp_path / "rgb.png"
    Image.fromarray(rgb, "RGB").save(p)
    out = load_image(p)
    assert out.shape == (2, 2)
    assert np.allclose(out, out[0, 0]) and 0.5 < out[0, 0] < 0.7


# -- Canny -------------------------------------------------------------------

def test_canny_constant_image_is_empty():
    e = canny(np.full((32, 32), 0.4))
    assert not e.mask.any()
    assert np.all(e.gradient_mag == 0)


def test_canny_vertical_step_edge_columns():
    c = 30
    img = np.zeros((64, 64))
    img[:, c:] = 1.0
    e = canny(img, sigma=1.0, low=0.05, high=0.2)
    ys, xs = np.nonzero(e.mask)
    assert len(xs) > 0
    # brute-force Sobel magnitude on the blurred image: peak columns
    blurred = loop_correlate(img, gaussian_kernel(1.0))
    mag = np.zeros_like(img)
    for y in range(1, 63):
        for x in range(1, 63):
            gx = sum(wy * (blurred[y + dy, x + 1] - blurred[y + dy, x - 1]) for dy, wy in ((-1, 1), (0, 2), (1, 1))) / 8
            mag[y, x] = abs(gx)
    peak_cols = set(np.nonzero(np.isclose(mag[32], mag[32].max()))[0])
    assert peak_cols == {c - 1, c}
    assert set(xs.tolist()) <= {c - 1, c}
    assert np.all(e.gradient_mag[e.mask] >= 0.05)


def test_canny_bright_pixel_below_high_threshold_vanishes():
    img = np.zeros((32, 32))
    img[16, 16] = 1.0
    mag = canny(img, sigma=1.0, low=0.01, high=0.02).gradient_mag
    top = mag.max()
    e = canny(img, sigma=1.0, low=0.5 * top, high=1.1 * top)
    assert not e.mask.any()


def test_hysteresis_trace_on_3x3_neighbourhood():
    mag = np.array([[0.0, 0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.3, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.9, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 0.0, 0.35]])
    cand = mag > 0
    out = hysteresis(cand, mag, low=0.25, high=0.8)
    # the diagonal weak pixel is 8-connected to the strong one; the far one is not
    expected = np.zeros_like(cand)
    expected[1, 1] = expected[2, 2] = True
    np.testing.assert_array_equal(out, expected)
    # weak neighbours below `low` never survive
    assert not hysteresis(cand, mag, low=0.4, high=0.8)[1, 1]


def test_canny_mask_is_thin():
    rng = np.random.default_rng(1)
    img = np.clip(loop_correlate(rng.random((40, 40)), gaussian_kernel(2.0)) * 3 - 1, 0, 1)
    e = canny(img, sigma=1.0, low=0.01, high=0.03)
    from careg.imaging import sobel, gaussian_blur
    gx, gy = sobel(gaussian_blur(img, 1.0))
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    sector = np.select([(ang >= 22.5) & (ang < 67.5), (ang >= 67.5) & (ang < 112.5), (ang >= 112.5) & (ang < 157.5)], [1, 2, 3], 0)
    for y, x in zip(*np.nonzero(e.mask)):
        dy, dx = steps[int(sector[y, x])]
        along = 0
        for s in (1, -1):
            yy, xx = y + s * dy, x + s * dx
            if 0 <= yy < 40 and 0 <= xx < 40:
                along += e.mask[yy, xx] and e.gradient_mag[yy, xx] >= e.gradient_mag[y, x]
        assert along < 2


def test_canny_rejects_bad_thresholds_and_tiny_images():
    with pytest.raises(ValueError):
        canny(np.zeros((20, 20)), low=0.2, high=0.1)
    with pytest.raises(ImageError):
        canny(np.zeros((5, 5)), sigma=2.0)


# -- Pyramids ----------------------------------------------------------------

def test_gaussian_pyramid_constant_and_identity():
    img = np.full((20, 24), 0.37)
    for level in gaussian_pyramid(img, 4):
        np.testing.assert_allclose(level, 0.37, atol=1e-15)
    single = gaussian_pyramid(img, 1)
    assert len(single) == 1 and np.array_equal(single[0], img)


def test_gaussian_pyramid_noise_variance_decreases():
    rng = np.random.default_rng(0)
    img = rng.random((64, 64))
    pyr = gaussian_pyramid(img, 3)
    oracle = [img, loop_reduce(img)]
    oracle.append(loop_reduce(oracle[1]))
    for got, want in zip(pyr, oracle):
        np.testing.assert_allclose(got, want, atol=1e-12)
    var = [np.var(level) for level in oracle]
    assert var[0] > var[1] > var[2]


def test_gaussian_pyramid_too_many_levels():
    with pytest.raises(ValueError, match="too many levels"):
        gaussian_pyramid(np.zeros((8, 8)), 5)


def test_laplacian_round_trip_32():
    rng = np.random.default_rng(2)
    img = rng.random((32, 32))
    pyr = laplacian_build(img, 3)
    assert len(pyr.levels) == 2 and pyr.base.shape == (8, 8)
    assert np.abs(laplacian_invert(pyr) - img).max() < 1e-9


def test_laplacian_constant_bands_are_zero():
    pyr = laplacian_build(np.full((17, 23), 0.8), 4)
    for band in pyr.levels:
        assert np.abs(band).max() < 1e-15


def test_zeroed_finest_band_equals_upsampled_coarse():
    rng = np.random.default_rng(4)
    img = rng.random((16, 13))
    pyr = laplacian_build(img, 3)
    pyr.levels[0] = np.zeros_like(pyr.levels[0])
    got = laplacian_invert(pyr)
    want = loop_expand(loop_reduce(img), img.shape)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_laplacian_invert_rejects_inconsistent_levels():
    pyr = laplacian_build(np.zeros((16, 16)), 3)
    bad = LaplacianPyramid(levels=[pyr.levels[0], np.zeros((5, 5))], base=pyr.base)
    with pytest.raises(ValueError, match="inconsistent"):
        laplacian_invert(bad)


def test_expand_matches_loop_oracle_odd_shape():
    rng = np.random.default_rng(5)
    small = rng.random((4, 3))
    np.testing.assert_allclose(expand(small, (7, 6)), loop_expand(small, (7, 6)), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 70), w=st.integers(1, 70), levels=st.integers(1, 6), seed=st.integers(0, 2**16))
def test_round_trip_property(h, w, levels, seed):
    levels = min(levels, int(np.floor(np.log2(min(h, w)))) + 1)
    img = np.random.default_rng(seed).random((h, w))
    assert np.abs(laplacian_invert(laplacian_build(img, levels)) - img).max() < 1e-9


def test_dump_pyramid_names(tmp_path):
    pyr = laplacian_build(np.random.default_rng(0).random((16, 16)), 3)
    paths = dump_pyramid(pyr, tmp_path / "slave")
    assert [p.name for p in paths] == ["slave_L0.png", "slave_L1.png", "slave_L2.png"]
    assert all(p.exists() for p in paths)
