"""測試報告輸出"""

import csv
import json
import math

import numpy as np
import pytest

from xmodal_depth.core.geometry import DepthMap
from xmodal_depth.core.losses import silog
from xmodal_depth.core.metrics import compute_metrics
from xmodal_depth.services.report import (
    CSV_HEADER,
    confidence_error_heatmap,
    loss_report,
    metrics_row,
    round_floats,
    write_json,
    write_metrics_csv,
)


def test_round_floats_nested():
    """測試巢狀結構的數值轉換"""
    data = {
        "a": np.float32(0.5),
        "b": [1.0 / 3.0, np.int64(4)],
        "c": {"nan": float("nan"), "inf": -math.inf},
        "d": np.array([True, False]),
    }
    out = round_floats(data, ndigits=4)
    assert out["a"] == 0.5
    assert out["b"] == [0.3333, 4]
    assert isinstance(out["b"][1], int)
    assert out["c"] == {"nan": None, "inf": None}
    assert out["d"] == [True, False]


def test_write_json_sorted_and_terminated(tmp_path):
    """測試 JSON 鍵排序並以換行結尾"""
    path = tmp_path / "r.json"
    write_json(path, {"z": 1, "a": {"y": 2.0, "b": 3}})
    text = path.read_text(encoding="utf-8")
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"z"')
    assert json.loads(text) == {"a": {"b": 3, "y": 2.0}, "z": 1}


def test_metrics_csv(tmp_path):
    """測試指標 CSV 欄位順序"""
    gt = DepthMap.from_array(np.full((4, 4), 2.0))
    pred = DepthMap.from_array(np.full((4, 4), 2.2))
    row = metrics_row("test", "model", "all", compute_metrics(pred, gt))
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, [row])

    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[0][:4] == ["split", "method", "variant", "AbsRel"]
    assert rows[1][:3] == ["test", "model", "all"]
    assert float(rows[1][3]) == pytest.approx(0.1)


def test_loss_report_keys():
    """測試 loss 報告的欄位"""
    gt = DepthMap.from_array(np.full((3, 3), 2.0))
    pred = DepthMap.from_array(np.full((3, 3), 3.0))
    report = loss_report(silog(pred, gt))
    assert report["name"] == "silog"
    assert set(report) == {"name", "value", "num_pixels_kept", "grad_norms"}
    assert report["num_pixels_kept"] == 9


def test_heatmap_shape_and_dtype():
    """測試熱度圖為左右並排的 uint8 RGB"""
    conf = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    err = np.arange(12, dtype=float).reshape(3, 4)
    image = confidence_error_heatmap(conf, err)
    assert image.shape == (3, 8, 3)
    assert image.dtype == np.uint8


def test_heatmap_zero_error():
    """測試誤差全為零時不產生 NaN"""
    image = confidence_error_heatmap(np.ones((2, 2)), np.zeros((2, 2)))
    right = image[:, 2:]
    assert np.all(right == right[0, 0])
