import numpy as np
import pytest

from avseg.errors import ContractError, ShapeError
from avseg.metrics import evaluate, f_score, iou


def brute_iou(a, b):
    inter = union = 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j] and b[i, j]:
                inter += 1
            if a[i, j] or b[i, j]:
                union += 1
    return 1.0 if union == 0 else inter / union


def brute_f(pred, gt, beta2=0.3):
    tp = fp = fn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if pred[i, j] and gt[i, j]:
                tp += 1
            elif pred[i, j]:
                fp += 1
            elif gt[i, j]:
                fn += 1
    if tp + fp + fn == 0:
        return 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    if beta2 * p + r == 0:
        return 0.0
    return (1 + beta2) * p * r / (beta2 * p + r)


def test_iou_basic_cases():
    a = np.zeros((4, 4), dtype=bool)
    a[:, :2] = True  # left half
    b = np.zeros((4, 4), dtype=bool)
    b[:2, :] = True  # top half
    assert iou(a, a) == 1.0
    assert iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert iou(a, ~a) == 0.0


def test_iou_both_empty_is_one():
    z = np.zeros((3, 3), dtype=bool)
    assert iou(z, z) == 1.0


def test_iou_symmetry(rng):
    a = rng.random((8, 8)) > 0.5
    b = rng.random((8, 8)) > 0.5
    assert iou(a, b) == iou(b, a)


def test_f_score_basic_cases():
    gt = np.zeros((4, 4), dtype=bool)
    gt[:2, :] = True
    assert f_score(gt, gt) == 1.0
    assert f_score(np.zeros((4, 4), dtype=bool), gt) == 0.0
    z = np.zeros((2, 2), dtype=bool)
    assert f_score(z, z) == 1.0


def test_f_score_analytic_value():
    # precision 0.5 (predict everything), recall 1.0
    gt = np.zeros((2, 2), dtype=bool)
    gt[0] = True
    pred = np.ones((2, 2), dtype=bool)
    assert f_score(pred, gt) == pytest.approx(0.65 / 1.15, abs=1e-12)


def test_metrics_match_brute_force_exactly():
    r = np.random.default_rng(5)
    for _ in range(100):
        a = r.random((32, 32)) > r.uniform(0.2, 0.8)
        b = r.random((32, 32)) > r.uniform(0.2, 0.8)
        assert iou(a, b) == brute_iou(a, b)
        assert f_score(a, b) == brute_f(a, b)


def test_shape_guards():
    with pytest.raises(ShapeError):
        iou(np.zeros((2, 2), dtype=bool), np.zeros((2, 3), dtype=bool))
    with pytest.raises(ShapeError):
        f_score(np.zeros(4, dtype=bool), np.zeros(4, dtype=bool))


def test_evaluate_report():
    gt = np.zeros((4, 4), dtype=bool)
    gt[1:3, 1:3] = True
    report = evaluate([gt, np.zeros_like(gt)], [gt, gt])
    assert report.m_iou == pytest.approx(0.5)
    assert report.n_scenes == 2
    assert report.per_scene_iou == [1.0, 0.0]
    assert report.empty_pred == 1
    d = report.to_dict()
    assert d["convention"]["f_score_beta2"] == 0.3


def test_evaluate_guards():
    m = np.zeros((2, 2), dtype=bool)
    with pytest.raises(ContractError):
        evaluate([m], [m, m])
    with pytest.raises(ContractError):
        evaluate([], [])


def test_evaluate_matches_oracle_mean():
    r = np.random.default_rng(8)
    preds = [r.random((16, 16)) > 0.5 for _ in range(50)]
    gts = [r.random((16, 16)) > 0.5 for _ in range(50)]
    report = evaluate(preds, gts)
    want = np.mean([brute_iou(p, g) for p, g in zip(preds, gts)])
    assert report.m_iou == pytest.approx(float(want), abs=1e-15)
