import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import render
from sceneshape.camera import CameraIntrinsics, DepthMap
from sceneshape.errors import EmptyOverlapError, ParameterError
from sceneshape.losses import ordinal_labels
from sceneshape.metrics import (MetricsReport, absrel_delta, dbe, evaluate, global_scale_rmse,
                                labels_to_regions, lsiv, pe, rmse_mae, si_rmse, whdr)

pos_maps = arrays(np.float64, (6, 6), elements=st.floats(0.5, 20.0))


def test_absrel_examples():
    gt = DepthMap(np.random.default_rng(0).uniform(1, 5, (10, 10)))
    r = absrel_delta(gt, gt)
    assert r.absrel == 0 and r.delta1 == 100
    r = absrel_delta(gt.values * 1.2, gt)
    assert math.isclose(r.absrel, 0.2, rel_tol=1e-12) and r.delta1 == 100
    r = absrel_delta(3.0 * gt.values - 0.7, gt, "scale_shift")
    assert r.absrel < 1e-14 and r.delta1 == 100
    assert absrel_delta(gt.values * 2, gt, "scale").absrel < 1e-14


def test_absrel_negative_aligned_clamped():
    gt = DepthMap(np.array([[1.0, 2.0, 3.0, 4.0]]))
    r = absrel_delta(np.array([[-1.0, 2.0, 3.0, 4.0]]), gt)
    assert r.delta1 == 75.0 and r.delta3 == 75.0


def test_absrel_empty_overlap():
    with pytest.raises(EmptyOverlapError):
        absrel_delta(DepthMap(np.ones((2, 2)), np.zeros((2, 2), bool)), np.ones((2, 2)))


@given(pos_maps, pos_maps, st.floats(0.01, 100.0), st.floats(-10.0, 10.0))
def test_alignment_invariances(pred, gt, a, b):
    if np.ptp(pred) < 1e-3:
        return
    base_s = absrel_delta(pred, gt, "scale").absrel
    assert math.isclose(absrel_delta(a * pred, gt, "scale").absrel, base_s,
                        rel_tol=1e-9, abs_tol=1e-12)
    base = absrel_delta(pred, gt, "scale_shift").absrel
    moved = absrel_delta(a * pred + b, gt, "scale_shift").absrel
    assert math.isclose(base, moved, rel_tol=1e-7, abs_tol=1e-9)


@given(pos_maps, pos_maps, st.integers(0, 1000))
def test_permutation_invariance(pred, gt, seed):
    perm = np.random.default_rng(seed).permutation(36)
    p2 = pred.ravel()[perm].reshape(6, 6)
    g2 = gt.ravel()[perm].reshape(6, 6)
    for mode in ("none", "scale"):
        a, b = absrel_delta(pred, gt, mode), absrel_delta(p2, g2, mode)
        assert math.isclose(a.absrel, b.absrel, rel_tol=1e-12) and a.delta1 == b.delta1
    assert math.isclose(si_rmse(pred, gt), si_rmse(p2, g2), rel_tol=1e-9, abs_tol=1e-12)


def test_rmse_mae():
    gt = np.ones((3, 3))
    rmse, mae = rmse_mae(gt + 0.5, gt)
    assert rmse == 0.5 and mae == 0.5


def test_si_rmse_examples():
    rng = np.random.default_rng(1)
    gt = rng.uniform(1, 5, (8, 8))
    assert si_rmse(3.3 * gt, gt) < 1e-15
    two = np.array([[1.0, 1.0]])
    assert math.isclose(si_rmse(np.array([[1.0, 2.0]]), two), math.log(2) / 2, rel_tol=1e-14)
    assert math.isclose(math.log(2) / 2, 0.3466, abs_tol=1e-4)
    p = rng.uniform(1, 5, (8, 8))
    r = [math.log(a) - math.log(b) for a, b in zip(p.ravel(), gt.ravel())]
    mean = sum(r) / len(r)
    naive = math.sqrt(sum((x - mean) ** 2 for x in r) / len(r))
    assert abs(si_rmse(p, gt) - naive) < 1e-12


def _pairs(rng, n, shape):
    a = np.stack([rng.integers(0, shape[0], n), rng.integers(0, shape[1], n)], 1)
    b = np.stack([rng.integers(0, shape[0], n), rng.integers(0, shape[1], n)], 1)
    return a, b


def test_whdr_examples():
    rng = np.random.default_rng(2)
    gt = rng.uniform(1, 5, (20, 20))
    a, b = _pairs(rng, 500, gt.shape)
    lab = ordinal_labels(gt[a[:, 0], a[:, 1]], gt[b[:, 0], b[:, 1]])
    assert whdr(gt, a, b, lab) == 0.0
    assert whdr(gt, a, b, -lab, strict_only=True) == 100.0
    with pytest.raises(EmptyOverlapError):
        whdr(gt, a[:0], b[:0], lab[:0])


def test_whdr_random_three_way():
    rng = np.random.default_rng(3)
    n = 60_000
    lab = rng.choice([-1, 1], n)
    # prediction grid: each pair reads two dedicated pixels
    guess = rng.integers(-1, 2, n)
    v = np.ones((2, n))
    v[0] = np.where(guess == 1, 2.0, 1.0)
    v[1] = np.where(guess == -1, 2.0, 1.0)
    a = np.stack([np.zeros(n, int), np.arange(n)], 1)
    b = np.stack([np.ones(n, int), np.arange(n)], 1)
    assert abs(whdr(v, a, b, lab) - 200 / 3) < 1.0


def _two_regions():
    gt = np.ones((10, 10))
    gt[:, :5] = 2.0
    gt[:, 5:] = 8.0
    gt += np.random.default_rng(4).uniform(0, 0.5, gt.shape)
    regions = [np.zeros((10, 10), bool), np.zeros((10, 10), bool)]
    regions[0][:, :5] = True
    regions[1][:, 5:] = True
    return gt, regions


def test_lsiv_examples():
    gt, regions = _two_regions()
    assert lsiv(gt, gt, regions) == 0
    per = np.where(regions[0], 0.3 * gt, 4.0 * gt)
    assert lsiv(per, gt, regions) < 1e-14


def test_lsiv_global_shift_matches_scan():
    gt, regions = _two_regions()
    pred = gt + 1.0
    val = lsiv(pred, gt, regions)
    assert val > 0
    sq = 0.0
    for r in regions:
        x, y = pred[r], gt[r]
        lo, hi = 0.0, 2.0
        for _ in range(6):
            ss = np.linspace(lo, hi, 2001)
            err = ((ss[:, None] * x - y) ** 2).sum(axis=1)
            k = int(np.argmin(err))
            lo, hi = ss[max(k - 1, 0)], ss[min(k + 1, 2000)]
        sq += err[k]
    assert abs(val - math.sqrt(sq / 100)) < 1e-6


def test_lsiv_skips_zero_region():
    gt, regions = _two_regions()
    pred = np.where(regions[0], 0.0, gt)
    res = lsiv(pred, gt, regions, detail=True)
    assert res.skipped == 1 and res.n_regions == 1 and res.value < 1e-14


@given(arrays(np.float64, (10, 10), elements=st.floats(0.5, 10.0)))
def test_lsiv_not_above_global(pred):
    gt, regions = _two_regions()
    assert lsiv(pred, gt, regions) <= global_scale_rmse(pred, gt, regions) + 1e-12


def _step(col, h=40, w=40, lo=2.0, hi=3.0):
    d = np.full((h, w), lo)
    d[:, col:] = hi
    return d


def test_dbe_identical_and_shift():
    gt = _step(20)
    assert (dbe(gt, gt).acc, dbe(gt, gt).comp) == (0.0, 0.0)
    r = dbe(_step(22), gt)
    assert math.isclose(r.acc, 2.0) and math.isclose(r.comp, 2.0)


def test_dbe_missing_edge():
    gt = _step(12)
    gt[:, 28:] = 4.0
    pred = _step(12)
    r = dbe(pred, gt)
    assert r.acc < 0.1
    assert r.comp > 3.0
    # the missing edge alone is 16 px from the kept one, so truncated at 10
    ge = np.zeros(gt.shape, bool)
    pe_ = np.zeros(gt.shape, bool)
    ge[:, [12, 28]] = True
    pe_[:, 12] = True
    assert dbe(pred, gt, pred_edges=pe_, gt_edges=ge).comp == 5.0


def test_dbe_no_pred_edges():
    r = dbe(np.ones((20, 20)), _step(10, 20, 20))
    assert r.acc is None and r.comp == 10.0


def _plane_depth(cam, n, c):
    return c / (cam.rays() @ n)


def test_pe_perfect_and_ripple():
    cam = CameraIntrinsics.from_fov(60.0, 64, 64)
    region = [np.ones((64, 64), bool)]
    # a constant map would make scale+shift alignment singular, so tilt it
    tilted = _plane_depth(cam, np.array([0.3, 0.1, -1.0]) / np.linalg.norm([0.3, 0.1, -1.0]), -3.0)
    r = pe(tilted, tilted, cam, region)
    assert r.plan < 1e-9 and r.orie < 1e-4
    gt = tilted
    a = 0.02
    cols = np.arange(64)
    pred = gt + a * np.sin(2 * np.pi * cols / 16)[None, :]
    r = pe(pred, gt, cam, region)
    # independent oracle: lstsq alignment, SVD plane fit
    A = np.column_stack([pred.ravel(), np.ones(pred.size)])
    s, t = np.linalg.lstsq(A, gt.ravel(), rcond=None)[0]
    pts = cam.rays().reshape(-1, 3) * (s * pred + t).reshape(-1, 1)
    q = pts - pts.mean(axis=0)
    n = np.linalg.svd(q, full_matrices=False)[2][-1]
    oracle = float(np.std(q @ n)) * 100
    assert abs(r.plan - oracle) <= 0.05 * oracle
    # the depth ripple projects onto the plane normal, shrinking it somewhat
    assert 0.5 * 100 * a / math.sqrt(2) < r.plan <= 100 * a / math.sqrt(2)


def test_pe_focal_skew():
    cam = CameraIntrinsics.from_fov(60.0, 64, 64)
    n = np.array([0.5, 0.2, -1.0])
    n /= np.linalg.norm(n)
    d = _plane_depth(cam, n, -2.0)
    region = [np.ones((64, 64), bool)]
    r = pe(d, d, cam, region, pred_cam=cam.with_focal(cam.f * 0.8))
    assert r.plan < 1e-9 and r.orie > 1.0


def test_perfect_prediction_zero_elements():
    scene, cam, d, labels, _ = render(0)
    rng = np.random.default_rng(0)
    a, b = _pairs(rng, 2000, d.shape)
    lab = ordinal_labels(d.values[a[:, 0], a[:, 1]], d.values[b[:, 0], b[:, 1]])
    rep = evaluate(d, d, cam=cam, regions=labels_to_regions(labels, 3), pairs=(a, b, lab))
    assert rep.absrel < 1e-12 and rep.delta1 == 100
    assert rep.si_rmse == 0 and rep.whdr == 0
    assert rep.lsiv < 1e-12 and rep.dbe_acc == 0 and rep.dbe_comp == 0
    assert rep.pe_plan < 1e-9 and rep.pe_orie < 1e-4


def test_report_serialisation():
    gt = DepthMap(np.random.default_rng(5).uniform(1, 5, (16, 16)))
    rep = evaluate(gt.values * 1.1, gt, align_mode="scale")
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    byname = {r["metric"]: r for r in rows}
    assert byname["absrel"]["alignment"] == "scale"
    assert float(byname["absrel"]["value"]) == rep.absrel
    assert "whdr" not in byname
    assert "absrel" in rep.to_table() and rep.to_dict()["n_pixels"] == 256
    assert set(rep.alignment.values()) <= {"none", "scale", "scale_shift"}
    assert MetricsReport().to_table() == "(no metrics)\n"


def test_bad_align_mode():
    with pytest.raises(ParameterError):
        absrel_delta(np.ones((2, 2)), np.ones((2, 2)), "affine")
