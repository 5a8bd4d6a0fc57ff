import logging
import math

import numpy as np
import pytest

from careg.bench.synth import synthetic_scene
from careg.sift import (
    DESC_CLAMP,
    Descriptor,
    Keypoint,
    assign_orientations,
    build_scale_space,
    compute_descriptors,
    detect_and_localize,
    load_features,
    match_descriptors,
    normalize_descriptor,
    save_features,
    sift,
)


def blob(shape, cx, cy, sigma, amp=1.0):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    return amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))


# -- scale space ---------------------------------------------------------------

def test_scale_space_structure():
    ss = build_scale_space(np.random.default_rng(0).random((64, 64)), octaves=3, scales_per_octave=3)
    assert ss.n_octaves == 3
    for g, d in zip(ss.gaussians, ss.dogs):
        assert g.shape[0] == 6 and d.shape[0] == 5
    assert np.all(np.diff(ss.sigmas) > 0)
    np.testing.assert_allclose(ss.sigmas[1] / ss.sigmas[0], 2 ** (1 / 3))
    assert [g.shape[1] for g in ss.gaussians] == [64, 32, 16]


def test_constant_image_has_zero_dog_and_no_keypoints():
    ss = build_scale_space(np.full((64, 64), 0.6), octaves=3)
    for d in ss.dogs:
        assert np.abs(d).max() < 1e-12
    assert detect_and_localize(ss) == []


def test_sigma0_limit_is_identity():
    img = np.random.default_rng(1).random((40, 40))
    ss = build_scale_space(img, octaves=1, sigma0=1e-4)
    assert np.abs(ss.gaussians[0][0] - img).max() < 1e-6


def test_too_many_octaves():
    with pytest.raises(ValueError, match="too small"):
        build_scale_space(np.zeros((32, 32)), octaves=4)


def test_dog_peak_scale_matches_analytic_sweep():
    sigma_b = 2.6
    img = blob((81, 81), 40, 40, sigma_b)
    ss = build_scale_space(img, octaves=1, scales_per_octave=5, sigma0=1.2, assumed_blur=0.0)
    got = np.abs(ss.dogs[0][:, 40, 40])
    # exhaustive sweep of the continuous DoG at the centre: blob * G(s) peaks at b^2/(b^2+s^2)
    peak = lambda s: sigma_b ** 2 / (sigma_b ** 2 + s ** 2)
    want = np.array([abs(peak(ss.sigmas[i + 1]) - peak(ss.sigmas[i])) for i in range(len(ss.sigmas) - 1)])
    assert np.argmax(got) == np.argmax(want)
    # the winning stack scale is the one nearest the blob width (geometric mid-scale)
    mids = np.sqrt(ss.sigmas[:-1] * ss.sigmas[1:])
    assert abs(np.log(mids[np.argmax(got)] / sigma_b)) <= np.log(2 ** (1 / 5))


# -- detection -----------------------------------------------------------------

def test_single_blob_detected_at_centre():
    img = blob((96, 96), 47.3, 50.6, 4.0)
    ss = build_scale_space(img)
    kps = detect_and_localize(ss)
    assert kps
    d = min(math.hypot(k.x - 47.3, k.y - 50.6) for k in kps)
    assert d < 1.0


def test_line_interior_rejected_by_edge_test():
    img = np.zeros((96, 96))
    img[47:50, :] = 1.0
    ss = build_scale_space(img, octaves=2)
    r = 10.0
    # curvature-ratio oracle from the explicit 2x2 Hessian at line pixels
    D = ss.dogs[0][1]
    for x in range(30, 66):
        y = 48
        dxx = D[y, x + 1] + D[y, x - 1] - 2 * D[y, x]
        dyy = D[y + 1, x] + D[y - 1, x] - 2 * D[y, x]
        dxy = (D[y + 1, x + 1] - D[y + 1, x - 1] - D[y - 1, x + 1] + D[y - 1, x - 1]) / 4
        tr, det = dxx + dyy, dxx * dyy - dxy ** 2
        assert det <= 0 or tr * tr / det >= (r + 1) ** 2 / r
    kps = detect_and_localize(ss, edge_ratio_thresh=r)
    interior = [k for k in kps if 20 < k.x < 76 and abs(k.y - 48) < 6]
    assert interior == []


def test_keypoints_sorted_and_in_bounds():
    img = synthetic_scene(128, 2)
    kps = detect_and_localize(build_scale_space(img))
    assert kps == sorted(kps, key=Keypoint.sort_key)
    for k in kps:
        assert 0 <= k.x < 128 and 0 <= k.y < 128 and k.scale > 0


# -- orientation ---------------------------------------------------------------

def _manual_keypoint(ss, x, y, layer=1):
    sig = ss.sigmas[layer]
    return Keypoint(x=x, y=y, scale=sig, octave=0, layer=layer, octave_scale=sig)


@pytest.mark.parametrize("axis, expected", [("x", 0.0), ("y", math.pi / 2)])
def test_ramp_orientation(axis, expected):
    yy, xx = np.mgrid[0:64, 0:64] / 64.0
    img = xx if axis == "x" else yy
    ss = build_scale_space(img, octaves=1)
    out = assign_orientations(ss, [_manual_keypoint(ss, 32, 32)])
    assert len(out) == 1
    diff = (out[0].orientation - expected + math.pi) % (2 * math.pi) - math.pi
    assert abs(diff) < 0.05


def test_two_perpendicular_populations_emit_two_orientations():
    yy, xx = np.mgrid[0:64, 0:64].astype(float)
    img = np.maximum(xx - 32, yy - 32) / 64.0
    ss = build_scale_space(img, octaves=1)
    out = assign_orientations(ss, [_manual_keypoint(ss, 32, 32)])
    angles = sorted(k.orientation for k in out)
    assert len(angles) == 2
    assert abs(angles[0]) < 0.1 and abs(angles[1] - math.pi / 2) < 0.1


# -- descriptors ---------------------------------------------------------------

def test_descriptors_unit_norm():
    descs = sift(synthetic_scene(128, 4))
    assert descs
    for d in descs:
        assert d.vector.shape == (128,)
        assert abs(np.linalg.norm(d.vector) - 1) < 1e-6
        assert np.all(d.vector >= 0)


def test_normalize_descriptor_clamps_before_renormalising():
    raw = np.zeros(128)
    raw[0], raw[1:5] = 10.0, 1.0
    v = normalize_descriptor(raw)
    clamped = np.minimum(raw / np.linalg.norm(raw), DESC_CLAMP)
    assert clamped.max() <= DESC_CLAMP
    np.testing.assert_allclose(v, clamped / np.linalg.norm(clamped))
    assert normalize_descriptor(np.zeros(128)) is None


def test_flat_window_descriptor_rejected():
    ss = build_scale_space(np.full((64, 64), 0.5), octaves=1)
    assert compute_descriptors(ss, [_manual_keypoint(ss, 32, 32)]) == []


def test_border_keypoints_dropped():
    ss = build_scale_space(synthetic_scene(64, 1), octaves=1)
    assert compute_descriptors(ss, [_manual_keypoint(ss, 2, 2)]) == []


def test_rotation_by_90_degrees_preserves_descriptors():
    img = synthetic_scene(129, 3)
    rot = np.rot90(img)  # rot[i, j] = img[j, W-1-i]
    da, db = sift(img), sift(rot)
    W = img.shape[1]
    pairs = 0
    for d in da:
        k = d.keypoint
        xp, yp = k.y, W - 1 - k.x
        cands = [e for e in db if abs(e.keypoint.x - xp) < 0.5 and abs(e.keypoint.y - yp) < 0.5]
        if not cands:
            continue
        pairs += 1
        assert min(np.linalg.norm(d.vector - e.vector) for e in cands) < 0.35
    assert pairs >= 0.9 * len(da) > 0


def test_translation_equivariance():
    big = synthetic_scene(300, 5)
    dx, dy = 8, 16
    a = big[20:276, 20:276]
    b = big[20 + dy:276 + dy, 20 + dx:276 + dx]
    ka = [d.keypoint for d in sift(a)]
    pb = np.array([[d.keypoint.x + dx, d.keypoint.y + dy] for d in sift(b)])
    m = 56
    inner = [k for k in ka if m < k.x < 256 - m and m + dy < k.y < 256 - m]
    assert len(inner) > 20
    for k in inner:
        assert np.min(np.hypot(pb[:, 0] - k.x, pb[:, 1] - k.y)) < 0.5


def test_scale_covariance_isolated_blob():
    small = blob((96, 96), 47.5, 47.5, 3.0)
    large = blob((192, 192), 95.5, 95.5, 6.0)  # ideal 2x upsampling of the same scene
    ks = detect_and_localize(build_scale_space(small))
    kl = detect_and_localize(build_scale_space(large))
    s_small = min(ks, key=lambda k: math.hypot(k.x - 47.5, k.y - 47.5)).scale
    s_large = min(kl, key=lambda k: math.hypot(k.x - 95.5, k.y - 95.5)).scale
    assert abs(s_large / s_small - 2.0) <= 0.15 * 2.0


# -- matching --------------------------------------------------------------------

def _unit_vectors(n, seed):
    v = np.abs(np.random.default_rng(seed).standard_normal((n, 128)))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _descs(vectors, offset=0.0):
    return [Descriptor(v, Keypoint(x=float(i) + offset, y=0.0, scale=1.0)) for i, v in enumerate(vectors)]


def test_identical_sets_match_themselves():
    a = _descs(_unit_vectors(15, 0))
    cs = match_descriptors(a, a)
    assert len(cs) == 15
    np.testing.assert_array_equal(cs.slave_index, cs.master_index)
    np.testing.assert_array_equal(cs.scores, 1.0)


def test_duplicate_targets_fail_ratio_test():
    v = _unit_vectors(10, 1)
    assert len(match_descriptors(_descs(v), _descs(np.vstack([v, v])))) == 0


def test_noisy_copies_match_brute_force_oracle():
    rng = np.random.default_rng(7)
    va = _unit_vectors(20, 2)
    vb = va + rng.normal(0, 0.005, va.shape)
    vb = vb[rng.permutation(20)]
    cs = match_descriptors(_descs(va), _descs(vb))
    # exhaustive all-pairs oracle
    oracle = {}
    for i in range(20):
        d = [np.linalg.norm(va[i] - vb[j]) for j in range(20)]
        oracle[i] = int(np.argmin(d))
    assert len(cs) == 20
    for i, j in zip(cs.slave_index, cs.master_index):
        assert oracle[int(i)] == int(j)
        assert np.allclose(va[i], vb[j], atol=0.05)


def test_matching_is_symmetric_on_duplicates():
    va = _unit_vectors(12, 3)
    perm = np.random.default_rng(0).permutation(12)
    a, b = _descs(va), _descs(va[perm])
    ab = set(zip(match_descriptors(a, b).slave_index, match_descriptors(a, b).master_index))
    ba = set((j, i) for i, j in zip(match_descriptors(b, a).slave_index, match_descriptors(b, a).master_index))
    assert ab == ba and len(ab) == 12


def test_too_few_targets_warns(caplog):
    with caplog.at_level(logging.WARNING):
        cs = match_descriptors(_descs(_unit_vectors(3, 4)), _descs(_unit_vectors(1, 5)))
    assert len(cs) == 0
    assert "ratio test" in caplog.text


def test_one_to_one_keeps_closest():
    base = _unit_vectors(3, 6)
    near = base[0] + 0.001
    far = base[0] + 0.01
    a = _descs(np.vstack([far / np.linalg.norm(far), near / np.linalg.norm(near)]))
    cs = match_descriptors(a, _descs(base))
    assert list(cs.slave_index) == [1] and list(cs.master_index) == [0]


def test_feature_dump_round_trip(tmp_path):
    descs = sift(synthetic_scene(96, 8))[:5]
    p = tmp_path / "f.txt"
    save_features(descs, p)
    back = load_features(p)
    assert len(back) == len(descs)
    for a, b in zip(descs, back):
        assert (a.keypoint.x, a.keypoint.y, a.keypoint.scale, a.keypoint.orientation) == \
            (b.keypoint.x, b.keypoint.y, b.keypoint.scale, b.keypoint.orientation)
        np.testing.assert_array_equal(a.vector, b.vector)
    assert len(p.read_text().splitlines()[0].split()) == 132
