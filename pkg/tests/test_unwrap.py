import numpy as np
import pytest

from pelt.unwrap import (UnwrapError, UVSampleSet, build_samples, delaunay,
                         filter_triangles, rasterize, unwrap_image)
from pelt.uvfield import UVField, identity_uv

from conftest import incircle_max_violation


def sample_set(uv, colors=None, source=None):
    uv = np.asarray(uv, dtype=float)
    if colors is None:
        colors = np.zeros((len(uv), 3))
    if source is None:
        source = uv.copy()
    return UVSampleSet(uv=uv, colors=np.asarray(colors, float),
                       source=np.asarray(source, float))


# ---------------------------------------------------------------------------
# build_samples

def test_build_samples_counts():
    img = np.zeros((2, 2, 3), np.uint8)
    s = build_samples(img, identity_uv(np.ones((2, 2), bool)), stride=1)
    assert len(s) == 4
    img64 = np.zeros((64, 64, 3), np.uint8)
    s2 = build_samples(img64, identity_uv(np.ones((64, 64), bool)), stride=2)
    assert len(s2) == 1024


def test_build_samples_errors():
    img = np.zeros((4, 4, 3), np.uint8)
    with pytest.raises(UnwrapError, match="insufficient samples"):
        build_samples(img, identity_uv(np.zeros((4, 4), bool)), stride=1)
    with pytest.raises(UnwrapError, match="stride"):
        build_samples(img, identity_uv(np.ones((4, 4), bool)), stride=0)
    with pytest.raises(UnwrapError, match="dimensions"):
        build_samples(np.zeros((5, 5, 3), np.uint8),
                      identity_uv(np.ones((4, 4), bool)))


def test_build_samples_reads_colors_at_valid_pixels():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 255, (6, 6, 3)).astype(np.uint8)
    valid = np.zeros((6, 6), bool)
    valid[1:5, 2:5] = True
    s = build_samples(img, identity_uv(valid))
    assert len(s) == 12
    for uv, col, src in zip(s.uv, s.colors, s.source):
        x, y = int(src[0]), int(src[1])
        assert np.array_equal(col, img[y, x])
        assert np.array_equal(uv, [x, y])


# ---------------------------------------------------------------------------
# delaunay

def test_three_points_one_triangle():
    mesh = delaunay(sample_set([[0, 0], [4, 0], [0, 4]]))
    assert len(mesh.triangles) == 1
    assert mesh.accepted.all()


def test_unit_square_two_triangles_circumcircle_empty():
    pts = [[0, 0], [1, 0], [1, 1], [0, 1]]
    mesh = delaunay(sample_set(pts))
    assert len(mesh.triangles) == 2
    shared = set(mesh.triangles[0]) & set(mesh.triangles[1])
    assert len(shared) == 2  # common diagonal
    assert incircle_max_violation(np.array(pts, float), mesh.triangles) <= 1e-9


def test_collinear_points_rejected():
    with pytest.raises(UnwrapError, match="degenerate"):
        delaunay(sample_set([[0, 0], [1, 1], [2, 2], [3, 3]]))
    with pytest.raises(UnwrapError, match=">= 3"):
        delaunay(sample_set([[0, 0], [1, 1]]))


def test_random_200_points_pass_circumcircle_audit():
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 100, (200, 2))
    mesh = delaunay(sample_set(pts))
    assert incircle_max_violation(pts, mesh.triangles[mesh.accepted]) <= 1e-9


def test_cocircular_grid_audit_and_all_points_kept():
    g = np.stack(np.meshgrid(np.arange(12.0), np.arange(12.0)), -1).reshape(-1, 2)
    mesh = delaunay(sample_set(g))
    used = np.unique(mesh.triangles)
    assert len(used) == len(g)
    assert incircle_max_violation(g, mesh.triangles[mesh.accepted]) <= 1e-9


def test_triangulation_independent_of_sample_order():
    rng = np.random.default_rng(9)
    pts = rng.uniform(0, 10, (50, 2))
    mesh_a = delaunay(sample_set(pts))
    perm = rng.permutation(50)
    mesh_b = delaunay(sample_set(pts[perm]))
    # map permuted triangle indices back to original ids and compare sets
    back = np.empty(50, int)
    back[np.arange(50)] = perm
    tri_b = np.sort(back[mesh_b.triangles], axis=1)
    tri_a = np.sort(mesh_a.triangles, axis=1)
    assert {tuple(t) for t in tri_a} == {tuple(t) for t in tri_b}


# ---------------------------------------------------------------------------
# filter_triangles

def test_filter_rejects_long_source_edges():
    s = sample_set([[0, 0], [1, 0], [0, 1]],
                   source=[[0, 0], [50, 0], [0, 1]])
    mesh = filter_triangles(delaunay(s), s, max_source_edge_px=5.0)
    assert not mesh.accepted.any()


def test_filter_keeps_contiguous_blob():
    valid = np.zeros((12, 12), bool)
    valid[2:10, 3:9] = True
    img = np.zeros((12, 12, 3), np.uint8)
    s = build_samples(img, identity_uv(valid))
    mesh = filter_triangles(delaunay(s), s, max_edge_uv=8.0, max_source_edge_px=8.0)
    assert mesh.accepted.all()


def test_filter_zero_threshold_rejects_all():
    s = sample_set([[0, 0], [2, 0], [0, 2], [2, 2]])
    mesh = filter_triangles(delaunay(s), s, max_edge_uv=0.0)
    assert not mesh.accepted.any()
    with pytest.raises(UnwrapError, match="no accepted"):
        rasterize(mesh, s, 4, 4)


# ---------------------------------------------------------------------------
# rasterize

def test_barycenter_blends_equally():
    # barycenter of (0,0),(6,0),(0,6) is exactly texel (2,2)
    s = sample_set([[0, 0], [6, 0], [0, 6]],
                   colors=[[255, 0, 0], [0, 255, 0], [0, 0, 255]])
    tex = rasterize(delaunay(s), s, 7, 7)
    assert tex.uv_scale == pytest.approx(1.0)
    assert tuple(tex.pixels[2, 2, :3]) == (85, 85, 85)
    assert tex.pixels[2, 2, 3] == 255


def test_outside_hull_uncovered_and_transparent():
    s = sample_set([[0, 0], [6, 0], [0, 6]])
    tex = rasterize(delaunay(s), s, 7, 7)
    assert not tex.coverage[6, 6]
    assert tex.pixels[6, 6, 3] == 0
    assert tuple(tex.pixels[6, 6, :3]) == (0, 0, 0)


def test_affine_color_field_reproduced_exactly():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 30, (80, 2))
    a, b, d = 3.1, -2.2, 120.0
    vals = np.clip(a * pts[:, 0] + b * pts[:, 1] + d, 0, 255)
    s = sample_set(pts, colors=np.repeat(vals[:, None], 3, axis=1))
    tex = rasterize(delaunay(s), s, 31, 31)
    ty, tx = np.nonzero(tex.coverage)
    uv = tex.texel_uv(tx, ty)
    expect = np.clip(a * uv[:, 0] + b * uv[:, 1] + d, 0, 255)
    err = np.abs(tex.pixels[ty, tx, 0].astype(float) - expect)
    assert err.max() <= 1.0


def test_identity_round_trip():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (16, 20, 3)).astype(np.uint8)
    tex = unwrap_image(img, identity_uv(np.ones((16, 20), bool)),
                       out_size=(20, 16))
    assert tex.coverage[1:-1, 1:-1].all()
    diff = np.abs(tex.pixels[..., :3].astype(int) - img.astype(int))
    assert diff[tex.coverage].max() <= 1


def test_rasterize_deterministic_under_sample_permutation():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 25, (60, 2))
    cols = rng.uniform(0, 255, (60, 3))
    s1 = sample_set(pts, colors=cols)
    t1 = rasterize(delaunay(s1), s1, 26, 26)
    perm = rng.permutation(60)
    s2 = sample_set(pts[perm], colors=cols[perm])
    t2 = rasterize(delaunay(s2), s2, 26, 26)
    assert np.array_equal(t1.pixels, t2.pixels)


def test_rasterize_validates_output_size():
    s = sample_set([[0, 0], [1, 0], [0, 1]])
    with pytest.raises(UnwrapError, match="output size"):
        rasterize(delaunay(s), s, 0, 4)
