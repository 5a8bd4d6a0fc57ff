import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from careg.ca.ga import GAParams
from careg.ca.maca import design_maca
from careg.coreset import (
    DIAMETER, LineCoreset, PointSet, build_line_coreset, candidate_distance, convex_hull,
    diameter, ga_select_approximation, mask_outline, pef_signature, rasterize_outline,
    shape_bits, split_chains, width,
)

SIZE_CONST = 5.0  # documented constant: |Q| <= SIZE_CONST * k / eps on smooth boundaries


def brute_width(pts):
    """O(h^2) oracle: min over hull-edge normals of the projected extent."""
    pts = np.asarray(pts, float)
    h = convex_hull(pts)
    if len(h) < 3:
        return 0.0
    best = math.inf
    for i in range(len(h)):
        e = h[(i + 1) % len(h)] - h[i]
        n = np.array([-e[1], e[0]]) / np.hypot(*e)
        proj = pts @ n
        best = min(best, proj.max() - proj.min())
    return best


def brute_hull_vertices(pts):
    """Points that are not inside the hull of the others (strict extreme points)."""
    pts = np.unique(pts, axis=0)
    out = set()
    for i, p in enumerate(pts):
        # extreme iff some direction makes p the unique maximiser
        for t in np.linspace(0, 2 * np.pi, 720, endpoint=False):
            d = np.array([np.cos(t), np.sin(t)])
            pr = pts @ d
            if pr[i] > np.delete(pr, i).max() + 1e-12:
                out.add(tuple(p))
                break
    return out


def test_width_trivial():
    assert width(PointSet([[3.0, 4.0]])) == 0.0
    assert width(PointSet([[0, 0], [1, 0], [1, 1], [0, 1]])) == pytest.approx(1.0)
    assert width(PointSet([[0, 0], [1, 1], [2, 2]])) == 0.0


def test_width_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts = rng.normal(size=(40, 2)) * rng.uniform(0.1, 5, 2)
        assert width(pts) == pytest.approx(brute_width(pts), rel=1e-12, abs=1e-12)


def test_hull_vertices_match_bruteforce():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 1, (25, 2))
    assert {tuple(p) for p in convex_hull(pts)} == brute_hull_vertices(pts)


def test_diameter():
    assert diameter(np.array([[0, 0], [3, 4], [1, 1]])) == pytest.approx(5.0)
    assert diameter(np.array([[2.0, 2.0]])) == 0.0


def test_pointset_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        PointSet(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        PointSet([[0, np.inf]])
    ps = PointSet(np.random.default_rng(0).normal(size=(7, 2)))
    ps.to_csv(tmp_path / "p.csv")
    assert np.array_equal(PointSet.from_csv(tmp_path / "p.csv").points, ps.points)
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n3\n")
    with pytest.raises(ValueError, match="line 3"):
        PointSet.from_csv(tmp_path / "bad.csv")


def test_collinear_keeps_endpoints():
    t = np.linspace(0, 1, 17)
    pts = np.c_[1 + 3 * t, 2 - 5 * t]
    rng = np.random.default_rng(0)
    for eps in (0.05, 0.3, 0.9):
        c = build_line_coreset(PointSet(pts[rng.permutation(17)]), 1, eps)
        got = {tuple(p) for p in c.points}
        assert got == {tuple(pts[0]), tuple(pts[-1])}
        assert width(c.points) == 0.0


def test_tiny_eps_keeps_convex_position_set():
    t = np.linspace(0, 2 * np.pi, 30, endpoint=False)
    pts = np.c_[np.cos(t), 0.5 * np.sin(t)]
    c = build_line_coreset(PointSet(pts), 2, 1e-3)
    assert len(c) == len(pts)
    assert width(c.points) == width(pts)


def test_noisy_circle():
    rng = np.random.default_rng(3)
    t = np.sort(rng.uniform(0, 2 * np.pi, 200))
    r = 20 + rng.normal(0, 0.3, 200)
    P = np.c_[r * np.cos(t), r * np.sin(t)]
    c = build_line_coreset(PointSet(P, ordered=True), 4, 0.1)
    assert len(c) <= 80
    assert 0.9 * brute_width(P) <= brute_width(c.points) <= brute_width(P) + 1e-12


def test_errors():
    ps = PointSet(np.random.default_rng(0).normal(size=(10, 2)))
    with pytest.raises(ValueError, match="infeasible"):
        build_line_coreset(ps, 0, 0.1)
    with pytest.raises(ValueError):
        build_line_coreset(ps, 1, 1.0)
    with pytest.raises(ValueError):
        build_line_coreset(PointSet([[0.0, 0.0]]), 1, 0.1)


def test_split_chains_partition():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(50, 2))
    order = rng.permutation(50)
    for k in (1, 2, 3, 5):
        chains = split_chains(P, order, k)
        assert 1 <= len(chains) <= k
        assert np.array_equal(np.concatenate(chains), order)


def test_diameter_measure():
    rng = np.random.default_rng(5)
    P = rng.normal(size=(300, 2))
    c = build_line_coreset(PointSet(P), 2, 0.05, measure=DIAMETER)
    assert diameter(c.points) >= 0.95 * diameter(P)


def test_dump(tmp_path):
    P = np.random.default_rng(0).normal(size=(40, 2))
    c = build_line_coreset(PointSet(P), 2, 0.2)
    c.to_csv(tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "k,epsilon,|P|,|Q|"
    assert lines[1] == f"2,0.2,40,{len(c)}"


def _point_cloud(draw_kind, n, rng):
    if draw_kind == 0:
        return rng.normal(size=(n, 2)) * [5, 1]
    if draw_kind == 1:
        return rng.uniform(0, 100, (n, 2))
    if draw_kind == 2:
        return np.round(rng.uniform(0, 10, (n, 2)))  # many duplicates and ties
    t = rng.uniform(0, 2 * np.pi, n)
    return np.c_[np.cos(t), np.sin(t)] * rng.uniform(1, 30) + rng.normal(0, 0.05, (n, 2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(10, 500), st.sampled_from([0.05, 0.1, 0.2]),
       st.sampled_from([1, 2, 4]), st.integers(0, 3))
def test_eps_guarantee_and_subset(seed, n, eps, k, kind):
    rng = np.random.default_rng(seed)
    P = _point_cloud(kind, n, rng)
    c = build_line_coreset(PointSet(P), k, eps)
    wP, wQ = brute_width(P), brute_width(c.points)
    assert (1 - eps) * wP <= wQ + 1e-12
    assert wQ <= wP + 1e-12
    # subset property: no synthesized coordinates
    assert set(map(tuple, c.points)) <= set(map(tuple, P))
    assert len(c) <= len(P)


def test_size_sublinear_on_smooth_boundary():
    for eps, k in itertools.product([0.05, 0.1, 0.2], [1, 2, 4]):
        sizes = []
        for n in (100, 400, 1600):
            t = np.linspace(0, 2 * np.pi, n, endpoint=False)
            P = np.c_[30 * np.cos(t), 12 * np.sin(t)]
            c = build_line_coreset(PointSet(P, ordered=True), k, eps)
            assert len(c) <= SIZE_CONST * k / eps
            sizes.append(len(c))
        assert sizes[-1] < 4 * sizes[0]


# ---------------------------------------------------------------------------
# GA-assisted selection
# ---------------------------------------------------------------------------

YY, XX = np.mgrid[:64, :64]
SHAPES = {
    "disk": (XX - 32) ** 2 + (YY - 32) ** 2 < 18 ** 2,
    "rect": (abs(XX - 32) < 22) & (abs(YY - 32) < 8),
    "tri": (YY > 12) & (YY < 52) & (abs(XX - 32) < (YY - 12) * 0.6),
}


def _coreset_of(mask, k=2, eps=0.1):
    ys, xs = np.nonzero(mask_outline(mask))
    return build_line_coreset(PointSet(np.c_[xs, ys]), k, eps)


def test_shape_bits_and_raster():
    m = rasterize_outline(np.array([[2, 2], [10, 2], [10, 10], [2, 10]]), (16, 16))
    assert m[2, 2:11].all() and m[10, 2:11].all() and m[2:11, 2].all()
    assert m.sum() == 32
    assert shape_bits(np.zeros((5, 5), bool), 6) == (0,) * 6
    assert len(shape_bits(m, 8)) == 8


def test_single_candidate_unchanged():
    cfg = design_maca(12, 0, m=4)
    c = _coreset_of(SHAPES["disk"])
    assert ga_select_approximation([c], SHAPES["rect"], cfg, rng_seed=0) is c
    with pytest.raises(ValueError):
        ga_select_approximation([], SHAPES["rect"], cfg)


@pytest.mark.parametrize("name", sorted(SHAPES))
def test_planted_candidate_wins(name):
    cfg = design_maca(12, 0, m=4)
    target = SHAPES[name]
    cands = [_coreset_of(SHAPES[n]) for n in sorted(SHAPES)]
    tsig = pef_signature(mask_outline(target), cfg)
    # exhaustive scoring of all candidates
    d = [candidate_distance(c, tsig, target.shape, cfg) for c in cands]
    planted = sorted(SHAPES).index(name)
    assert d[planted] == 0 and min(np.delete(d, planted)) > 0
    got = ga_select_approximation(cands, target, cfg, GAParams(), rng_seed=0)
    assert got is cands[planted]


def test_mutation_only_accepts_strict_improvement():
    cfg = design_maca(12, 0, m=4)
    target = SHAPES["tri"]
    cands = [_coreset_of(SHAPES["disk"]), _coreset_of(SHAPES["rect"])]
    tsig = pef_signature(mask_outline(target), cfg)
    before = min(candidate_distance(c, tsig, target.shape, cfg) for c in cands)
    got = ga_select_approximation(cands, target, cfg, GAParams(population=16), rng_seed=1)
    assert isinstance(got, LineCoreset)
    assert candidate_distance(got, tsig, target.shape, cfg) <= before
    P = got.source.points
    assert width(got.points) >= (1 - got.epsilon) * width(P)
    assert set(map(tuple, got.points)) <= set(map(tuple, P))
