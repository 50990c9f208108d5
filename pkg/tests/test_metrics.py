import numpy as np
import pytest

from semdepth.metrics import (boundary_fscore, compute_depth_errors, confusion_matrix, depth_edge_fscore,
                              edge_map, evaluate_depth, evaluate_seg, label_boundaries)


def test_perfect_prediction(rng):
    gt = rng.uniform(1, 50, (3, 8, 8))
    assert evaluate_depth(gt, gt).as_tuple() == pytest.approx((0, 0, 0, 0, 1, 1, 1))


def test_median_scaling_invariance(rng):
    gt = rng.uniform(1, 50, (2, 8, 8))
    pred = gt * rng.uniform(0.7, 1.3, gt.shape)
    base = evaluate_depth(pred, gt).as_tuple()
    for c in np.exp(rng.uniform(-5, 5, 100)):
        assert evaluate_depth(pred * c, gt).as_tuple() == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_two_pixel_example_without_scaling():
    m = evaluate_depth(np.array([[3.0, 3.0]]), np.array([[2.0, 4.0]]), median_scaling=False)
    assert m.abs_rel == pytest.approx(0.375)
    assert m.delta1 == 0.0
    assert m.sq_rel == pytest.approx((1 / 2 + 1 / 4) / 2)
    assert m.rms == pytest.approx(1.0)


def test_scalar_errors_match_formulae():
    e = compute_depth_errors(np.array([2.0, 4.0]), np.array([3.0, 3.0]))
    assert e[3] == pytest.approx(np.sqrt((np.log(2 / 3) ** 2 + np.log(4 / 3) ** 2) / 2))
    assert tuple(e[4:]) == (0.0, 1.0, 1.0)


def test_cap_and_clamp():
    gt = np.array([[10.0, 200.0, 0.0, 20.0]])
    pred = np.array([[10.0, 1.0, 5.0, 1000.0]])
    m = evaluate_depth(pred, gt, cap=100, median_scaling=False)
    # only the 10 and 20 pixels count; 1000 clamps to 100
    assert m.abs_rel == pytest.approx((0 + 80 / 20) / 2)


def test_metric_invariants_and_monotone_noise(rng):
    gt = rng.uniform(1, 50, (4, 16, 16))
    noise = rng.normal(size=gt.shape)
    prev = -1.0
    for sigma in np.linspace(0, 0.5, 11):
        m = evaluate_depth(gt * np.exp(sigma * noise), gt)
        assert 0 <= m.delta1 <= m.delta2 <= m.delta3 <= 1 and m.rms >= 0
        assert m.abs_rel >= prev - 1e-12
        prev = m.abs_rel


def test_depth_errors():
    with pytest.raises(ValueError):
        evaluate_depth(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        evaluate_depth(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        evaluate_depth(np.array([[0.0, 1.0]]), np.array([[1.0, 1.0]]))


def test_miou_cases(rng):
    gt = rng.integers(0, 3, (8, 8))
    assert evaluate_seg(gt, gt, 3) == 1.0
    half = np.zeros((4, 4), int)
    half[:, 2:] = 1
    assert evaluate_seg(np.zeros_like(half), half, 2) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        evaluate_seg(np.full((2, 2), 5), np.zeros((2, 2), int), 3)


def test_miou_matches_counting(rng):
    for _ in range(20):
        gt, pred = rng.integers(0, 3, (2, 8, 8))
        ious = []
        for c in range(3):
            if (gt == c).any():
                tp = ((pred == c) & (gt == c)).sum()
                ious.append(tp / (((pred == c) | (gt == c)).sum()))
        assert evaluate_seg(pred, gt, 3) == pytest.approx(np.mean(ious), abs=1e-12)
    assert confusion_matrix([0, 1, 1], [1, 1, 0], 2).tolist() == [[0, 1], [1, 1]]


def test_edge_fscore():
    lab = np.zeros((20, 20), int)
    lab[:, 10:] = 1
    disp = np.where(lab == 1, 2.0, 1.0)
    assert depth_edge_fscore(disp, lab) == pytest.approx(1.0)
    gt_edges = label_boundaries(lab)
    shifted = np.roll(gt_edges, 5, axis=1)
    assert boundary_fscore(shifted, gt_edges, tolerance=2) == 0.0
    assert boundary_fscore(np.roll(gt_edges, 2, axis=1), gt_edges, tolerance=2) == 1.0
    assert boundary_fscore(np.zeros_like(gt_edges), gt_edges) == 0.0


def test_edge_map_percentile(rng):
    v = rng.normal(size=(40, 40))
    assert 0.04 <= edge_map(v, 95).mean() <= 0.06
