"""測試評估指標"""

import numpy as np
import pytest

from xmodal_depth.core.errors import EmptyMaskError
from xmodal_depth.core.geometry import DepthMap
from xmodal_depth.core.metrics import (
    CSV_COLUMNS,
    compute_metrics,
    compute_weighted_metrics,
    metrics_from_arrays,
)


def test_perfect_prediction():
    """測試完全正確的預測"""
    gt = DepthMap.from_array(np.linspace(1.0, 10.0, 20).reshape(4, 5))
    metrics = compute_metrics(gt.copy(), gt)
    assert metrics.abs_rel == 0.0
    assert metrics.rmse == 0.0
    assert metrics.delta1 == 1.0
    assert metrics.num_pixels == 20


def test_known_values():
    """測試手算的指標數值"""
    metrics = metrics_from_arrays(np.array([2.0, 4.0]), np.array([1.0, 4.0]))
    assert metrics.abs_rel == pytest.approx(0.5)
    assert metrics.sq_rel == pytest.approx(0.5)
    assert metrics.rmse == pytest.approx(np.sqrt(0.5))
    assert metrics.rmse_log == pytest.approx(np.log(2.0) / np.sqrt(2.0))
    assert metrics.delta1 == pytest.approx(0.5)
    assert metrics.delta2 == pytest.approx(0.5)
    assert metrics.delta3 == pytest.approx(0.5)
    assert metrics_from_arrays(np.array([1.9]), np.array([1.0])).delta3 == 1.0


def test_mask_restricts_pixels():
    """測試額外遮罩與無效像素"""
    gt_values = np.full((2, 2), 2.0)
    pred_values = np.array([[2.0, 4.0], [0.0, 2.0]])
    pred = DepthMap.from_array(pred_values)
    gt = DepthMap.from_array(gt_values)
    mask = np.array([[True, False], [True, True]])
    metrics = compute_metrics(pred, gt, mask)
    assert metrics.num_pixels == 2
    assert metrics.abs_rel == 0.0


def test_empty_mask():
    """測試空遮罩"""
    gt = DepthMap.from_array(np.ones((2, 2)))
    with pytest.raises(EmptyMaskError):
        compute_metrics(gt, gt, np.zeros((2, 2), bool))


def test_row_order():
    """測試 CSV 欄位順序"""
    metrics = metrics_from_arrays(np.array([1.0]), np.array([1.0]))
    assert tuple(metrics.as_row()) == CSV_COLUMNS


def test_weighted_bins_are_equally_weighted():
    """測試每個深度箱等權平均"""
    gt = np.array([[1.0, 1.0, 1.0, 6.0]])
    pred = np.array([[1.0, 1.0, 1.0, 9.0]])
    result = compute_weighted_metrics(DepthMap.from_array(pred), DepthMap.from_array(gt))
    assert sorted(result.bins) == [0.0, 5.0]
    assert result.bins[5.0].abs_rel == pytest.approx(0.5)
    assert result.aggregate.abs_rel == pytest.approx(0.25)
    assert result.aggregate.num_pixels == 4
    plain = compute_metrics(DepthMap.from_array(pred), DepthMap.from_array(gt))
    assert plain.abs_rel == pytest.approx(0.125)


def test_weighted_excludes_far_pixels():
    """測試超過 max_depth 的像素不納入，全部排除時報錯"""
    gt = DepthMap.from_array(np.array([[10.0, 90.0]]))
    result = compute_weighted_metrics(gt, gt)
    assert result.aggregate.num_pixels == 1
    assert result.to_dict()["bins"].keys() == {"10"}
    with pytest.raises(EmptyMaskError):
        compute_weighted_metrics(gt, gt, max_depth=5.0)


def test_hand_fixture_abs_rel():
    """測試 gt=[2,5]、pred=[2,4] 的 AbsRel 與 RMSE"""
    metrics = metrics_from_arrays(np.array([2.0, 4.0]), np.array([2.0, 5.0]))
    assert metrics.abs_rel == pytest.approx(0.1)
    assert metrics.rmse == pytest.approx(np.sqrt(0.5))


def test_delta_threshold_is_strict():
    """測試比例恰為 1.25 時不計入 δ1，但計入 δ2"""
    metrics = metrics_from_arrays(np.array([5.0]), np.array([4.0]))
    assert metrics.delta1 == 0.0
    assert metrics.delta2 == 1.0


def test_weighted_hand_fixture():
    """測試近處誤差在加權版本中只佔一箱"""
    gt = DepthMap.from_array(np.array([[2.0, 2.0, 2.0, 7.0]]))
    pred = DepthMap.from_array(np.array([[1.0, 1.0, 1.0, 7.0]]))
    assert compute_metrics(pred, gt).abs_rel == pytest.approx(0.375)
    assert compute_weighted_metrics(pred, gt).aggregate.abs_rel == pytest.approx(0.25)


def _reference_metrics(pred, gt):
    """逐點迴圈的參考實作"""
    n = len(pred)
    abs_rel = sq_rel = sq = sq_log = 0.0
    hits = [0, 0, 0]
    for p, g in zip(pred, gt):
        abs_rel += abs(p - g) / g
        sq_rel += (p - g) ** 2 / g
        sq += (p - g) ** 2
        sq_log += (np.log(p) - np.log(g)) ** 2
        ratio = max(p / g, g / p)
        for k in range(3):
            hits[k] += ratio < 1.25 ** (k + 1)
    return [abs_rel / n, sq_rel / n, np.sqrt(sq / n), np.sqrt(sq_log / n)] + [h / n for h in hits]


def _reference_weighted(pred, gt, bin_width=5.0, max_depth=80.0):
    bins = {}
    for p, g in zip(pred, gt):
        if g < max_depth:
            bins.setdefault(int(np.floor(g / bin_width)), []).append((p, g))
    per_bin = [_reference_metrics(*map(np.array, zip(*bins[k]))) for k in sorted(bins)]
    return np.mean(per_bin, axis=0)


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_reference(seed):
    """測試向量化指標與逐點參考實作一致"""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 80))
    gt = rng.uniform(0.5, 90.0, n)
    pred = gt * np.exp(rng.normal(0.0, 0.3, n))
    metrics = metrics_from_arrays(pred, gt)
    actual = [
        metrics.abs_rel,
        metrics.sq_rel,
        metrics.rmse,
        metrics.rmse_log,
        metrics.delta1,
        metrics.delta2,
        metrics.delta3,
    ]
    np.testing.assert_allclose(actual, _reference_metrics(pred, gt), rtol=1e-12, atol=1e-12)

    if np.any(gt < 80.0):
        weighted = compute_weighted_metrics(
            DepthMap.from_array(pred[None, :]), DepthMap.from_array(gt[None, :])
        ).aggregate
        np.testing.assert_allclose(
            [weighted.abs_rel, weighted.rmse, weighted.delta1],
            _reference_weighted(pred, gt)[[0, 2, 4]],
            rtol=1e-12,
            atol=1e-12,
        )


def test_metrics_permutation_invariant():
    """測試像素順序不影響指標"""
    rng = np.random.default_rng(3)
    gt = rng.uniform(1.0, 50.0, 64)
    pred = gt * rng.uniform(0.7, 1.3, 64)
    perm = rng.permutation(64)
    base = metrics_from_arrays(pred, gt).to_dict()
    shuffled = metrics_from_arrays(pred[perm], gt[perm]).to_dict()
    for key, value in base.items():
        assert shuffled[key] == pytest.approx(value, rel=1e-12)


def test_metrics_joint_scaling():
    """測試預測與真值同乘 s 時相對指標不變，絕對指標依次方縮放"""
    rng = np.random.default_rng(9)
    gt = rng.uniform(1.0, 20.0, 50)
    pred = gt * rng.uniform(0.6, 1.4, 50)
    base = metrics_from_arrays(pred, gt)
    scaled = metrics_from_arrays(3.0 * pred, 3.0 * gt)
    assert scaled.abs_rel == pytest.approx(base.abs_rel, rel=1e-12)
    assert scaled.rmse_log == pytest.approx(base.rmse_log, rel=1e-9)
    assert scaled.delta1 == base.delta1
    assert scaled.rmse == pytest.approx(3.0 * base.rmse, rel=1e-12)
    assert scaled.sq_rel == pytest.approx(3.0 * base.sq_rel, rel=1e-12)
