import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from conftest import render
from sceneshape.camera import CameraIntrinsics, DepthMap, NormalMap, compute_normals
from sceneshape.losses import pwn_loss_map
from sceneshape.sampling import (NEGATIVE_DOT, POSITIVE_DOT, PairLabel, PointPairSet,
                                 cluster_planes, detect_edges, sample_coplanar_pairs,
                                 sample_edge_pairs, segments_from_mask)
from sceneshape.synth import SceneConfig, SyntheticScene, render_depth


def _boundary(labels):
    b = np.zeros(labels.shape, bool)
    dx = labels[:, :-1] != labels[:, 1:]
    dy = labels[:-1] != labels[1:]
    b[:, :-1] |= dx
    b[:, 1:] |= dx
    b[:-1] |= dy
    b[1:] |= dy
    return b


def _audit(pairs):
    dots = np.einsum("ij,ij->i", pairs.gt_normals[:, 0], pairs.gt_normals[:, 1])
    pos = pairs.labels == PairLabel.EDGE_POSITIVE
    neg = pairs.labels == PairLabel.EDGE_NEGATIVE
    return dots, pos, neg


def test_constant_map_no_edges():
    e = detect_edges(np.full((20, 20), 3.0))
    assert not e.strength.any() and not e.binary.any()


def test_step_edge_support():
    g = np.zeros((20, 30))
    c = 12
    g[:, c:] = 1.0
    e = detect_edges(g)
    cols = np.unique(np.nonzero(e.binary)[1])
    assert set(cols) <= {c - 1, c, c + 1} and cols.size > 0


def test_room_edges_cover_boundaries():
    for seed in range(10):
        _, _, d, labels, normals = render(seed)
        e = detect_edges(normals).binary | detect_edges(d).binary
        b = _boundary(labels)
        cover = (ndimage.binary_dilation(e) & b).sum() / b.sum()
        assert cover >= 0.95, (seed, cover)


def _two_walls():
    # camera in a corner region looking at the edge between north and east walls
    scene = SyntheticScene(room=(6.0, 8.0, 3.0), boxes=[], yaw=-40.0, pitch=0.0, roll=0.0,
                           position=(3.5, 5.0, 1.5))
    cam = CameraIntrinsics.from_fov(30.0, 64, 64)
    return cam, *render_depth(scene, cam)


def test_perpendicular_walls_all_positive():
    cam, d, labels, normals = _two_walls()
    assert set(np.unique(labels)) == {3, 5}
    e = detect_edges(normals)
    pairs = sample_edge_pairs(e, normals, 500, np.random.default_rng(0))
    assert len(pairs) > 0
    assert np.all(pairs.labels == PairLabel.EDGE_POSITIVE)
    la = labels[pairs.a[:, 0], pairs.a[:, 1]]
    lb = labels[pairs.b[:, 0], pairs.b[:, 1]]
    assert np.all(la != lb)


def test_textured_plane_all_negative():
    rng = np.random.default_rng(1)
    h = w = 48
    normals = NormalMap(np.broadcast_to([0.0, 0.0, -1.0], (h, w, 3)).copy(), np.ones((h, w), bool))
    image = np.zeros((h, w))
    image[:, ::8] = 1.0
    image[::12] += 0.5
    pairs = sample_edge_pairs(detect_edges(normals), normals, 300, rng,
                              image_edges=detect_edges(image))
    assert len(pairs) > 0
    assert np.all(pairs.labels == PairLabel.EDGE_NEGATIVE)


def test_room_pair_audit_exhaustive():
    for seed in range(5):
        _, _, d, labels, normals = render(seed)
        pairs = sample_edge_pairs(detect_edges(normals), normals, 10_000,
                                  np.random.default_rng(seed), image_edges=detect_edges(d))
        dots, pos, neg = _audit(pairs)
        assert np.all(pos | neg)
        assert np.all(dots[pos] < POSITIVE_DOT) and np.all(dots[neg] > NEGATIVE_DOT)
        assert np.all(np.any(pairs.a != pairs.b, axis=1))
        if pos.any() and neg.any():
            lo, hi = sorted([pos.sum(), neg.sum()])
            assert hi <= 1.1 * lo
        assert len(pairs) <= 10_000


def test_edge_pairs_deterministic():
    _, _, d, _, normals = render(3)
    e, img = detect_edges(normals), detect_edges(d)
    a = sample_edge_pairs(e, normals, 2000, np.random.default_rng(9), image_edges=img)
    b = sample_edge_pairs(e, normals, 2000, np.random.default_rng(9), image_edges=img)
    assert np.array_equal(a.a, b.a) and np.array_equal(a.b, b.b)
    assert np.array_equal(a.labels, b.labels)


def test_no_edges_empty_with_warning():
    nm = NormalMap(np.broadcast_to([0.0, 0.0, -1.0], (8, 8, 3)).copy(), np.ones((8, 8), bool))
    with pytest.warns(RuntimeWarning):
        p = sample_edge_pairs(detect_edges(nm), nm, 10, np.random.default_rng(0))
    assert len(p) == 0


def test_pwn_zero_on_perfect_prediction():
    _, _, d, labels, normals = render(2)
    rng = np.random.default_rng(0)
    pairs = sample_edge_pairs(detect_edges(normals), normals, 2000, rng,
                              image_edges=detect_edges(d))
    cam = SceneConfig().camera()
    segs = segments_from_mask(labels == labels[100, 64], d, cam)
    allp = PointPairSet.concat(pairs, sample_coplanar_pairs(segs, 500, rng))
    # coplanar targets are exactly 1 while n.n of a stored unit normal can be
    # 1 - eps, so allow round-off only
    assert pwn_loss_map(normals.normals, allp).value < 1e-15


def _corner():
    scene = SyntheticScene(room=(6.0, 8.0, 3.0), boxes=[], yaw=-35.0, pitch=25.0, roll=0.0,
                           position=(2.0, 3.0, 1.5))
    cam = SceneConfig().camera()
    return cam, *render_depth(scene, cam)


def test_three_planes_three_segments():
    cam, d, labels, _ = _corner()
    assert len(np.unique(labels)) == 3
    segs = cluster_planes(compute_normals(d, cam), d, cam)
    assert len(segs) == 3
    seg_img = np.full(labels.shape, -1)
    for s in segs:
        seg_img[s.pixels[:, 0], s.pixels[:, 1]] = s.label
    covered = seg_img >= 0
    # map each segment to its majority render label and score the agreement
    agree = 0
    for s in segs:
        lab = labels[s.pixels[:, 0], s.pixels[:, 1]]
        agree += np.bincount(lab).max()
    assert agree / covered.sum() >= 0.98
    assert len({int(np.bincount(labels[s.pixels[:, 0], s.pixels[:, 1]]).argmax()) for s in segs}) == 3


def test_segments_disjoint_and_valid():
    for seed in range(5):
        _, cam, d, _, _ = render(seed)
        segs = cluster_planes(compute_normals(d, cam), d, cam)
        flat = np.concatenate([s.flat_index(cam.width) for s in segs])
        assert flat.size == np.unique(flat).size
        for s in segs:
            assert len(s) >= 50
            assert np.isclose(np.linalg.norm(s.normal), 1.0) and s.rms >= 0


def test_noise_normals_no_segments():
    rng = np.random.default_rng(0)
    n = rng.normal(size=(64, 64, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n[n[..., 2] > 0] *= -1
    cam = CameraIntrinsics.from_fov(60.0, 64, 64)
    d = DepthMap(np.full((64, 64), 2.0))
    segs = cluster_planes(NormalMap(n, np.ones((64, 64), bool)), d, cam, eps=0.01,
                          exclude_edges=False)
    assert segs == []


def test_parallel_planes_separated_by_offset():
    # a box face in front of the far wall, both facing the camera
    scene = SyntheticScene(room=(6.0, 8.0, 3.0), boxes=[((2.0, 5.0, 0.0), (4.0, 6.0, 1.6))],
                           yaw=0.0, pitch=0.0, roll=0.0, position=(3.0, 2.0, 1.2))
    cam = CameraIntrinsics.from_fov(40.0, 96, 96)
    d, labels, normals = render_depth(scene, cam)
    front, wall = 6 + 2, 5
    assert (labels == front).sum() > 500 and (labels == wall).sum() > 500
    segs = cluster_planes(compute_normals(d, cam), d, cam)
    major = [int(np.bincount(labels[s.pixels[:, 0], s.pixels[:, 1]]).argmax()) for s in segs]
    assert front in major and wall in major
    fs, ws = segs[major.index(front)], segs[major.index(wall)]
    assert np.allclose(fs.normal, ws.normal, atol=1e-6)
    assert abs(fs.offset - ws.offset) > 1.0


def _patch_segment(r0, c0, h, w):
    from sceneshape.camera import PlaneSegment
    rr, cc = np.mgrid[r0:r0 + h, c0:c0 + w]
    return PlaneSegment(np.stack([rr.ravel(), cc.ravel()], 1), np.array([0, 0, -1.0]), -1.0, 0.0)


def test_coplanar_single_segment():
    seg = _patch_segment(0, 0, 10, 10)
    p = sample_coplanar_pairs([seg], 100, np.random.default_rng(0))
    assert len(p) == 100
    assert np.all(p.labels == PairLabel.COPLANAR)
    assert np.all(np.any(p.a != p.b, axis=1))
    assert np.all(p.gt_dots == 1.0)


def test_coplanar_proportional_split():
    big, small = _patch_segment(0, 0, 30, 10), _patch_segment(40, 0, 10, 10)
    p = sample_coplanar_pairs([big, small], 100, np.random.default_rng(1))
    in_big = p.a[:, 0] < 30
    assert in_big.sum() == 75 and (~in_big).sum() == 25
    assert np.all((p.b[:, 0] < 30) == in_big)


def test_coplanar_too_small():
    seg = _patch_segment(0, 0, 1, 1)
    assert len(sample_coplanar_pairs([seg], 10, np.random.default_rng(0))) == 0


@given(st.integers(1, 400), st.integers(0, 1000))
def test_coplanar_budget_exact(budget, seed):
    segs = [_patch_segment(0, 0, 5, 7), _patch_segment(10, 0, 3, 3), _patch_segment(20, 0, 9, 2)]
    p = sample_coplanar_pairs(segs, budget, np.random.default_rng(seed))
    assert len(p) == budget
