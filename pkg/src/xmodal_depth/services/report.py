"""可重現的機器可讀輸出：JSON 報告、指標 CSV 與熱度圖"""

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Union

import numpy as np

from ..core.losses import LossResult
from ..core.metrics import CSV_COLUMNS, MetricSet

PathLike = Union[str, Path]

CSV_HEADER = ("split", "method", "variant") + CSV_COLUMNS


def round_floats(obj: Any, ndigits: int = 10) -> Any:
    """
    遞迴將浮點數四捨五入到 ndigits 位有效數字

    numpy 純量與陣列轉成 Python 型別；NaN 與 ±inf 轉成 None。
    """
    if isinstance(obj, dict):
        return {str(k): round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, ndigits) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist(), ndigits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return None
        if value == 0.0:
            return 0.0
        return float(f"{value:.{ndigits}g}")
    return obj


def write_json(path: PathLike, obj: Any, ndigits: int = 10) -> None:
    """寫入 JSON（鍵排序、縮排 2、結尾換行）"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(round_floats(obj, ndigits), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def metrics_row(split: str, method: str, variant: str, metrics: MetricSet) -> Dict[str, Any]:
    row: Dict[str, Any] = {"split": split, "method": method, "variant": variant}
    row.update(round_floats(metrics.as_row()))
    return row


def write_metrics_csv(path: PathLike, rows: Iterable[Dict[str, Any]]) -> None:
    """
    寫入指標 CSV

    欄位：split,method,variant,AbsRel,SqRel,RMSE,RMSElog,d1,d2,d3
    """
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(CSV_HEADER), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row[key] for key in CSV_HEADER})


def loss_report(result: LossResult) -> Dict[str, Any]:
    """{"name", "value", "num_pixels_kept", "grad_norms": {輸入: L2 範數}}"""
    return round_floats(result.to_report())


def confidence_error_heatmap(confidence: np.ndarray, error: np.ndarray) -> np.ndarray:
    """
    左右並排的信心與 |誤差| 熱度圖

    信心以 viridis 呈現（0–1）；誤差以 magma 呈現並以最大值正規化。

    Returns:
        uint8 H×(2W)×3
    """
    from matplotlib import colormaps

    conf = np.clip(np.nan_to_num(np.asarray(confidence, dtype=np.float64)), 0.0, 1.0)
    err = np.abs(np.nan_to_num(np.asarray(error, dtype=np.float64)))
    peak = float(err.max()) if err.size else 0.0
    err_norm = err / peak if peak > 0 else np.zeros_like(err)

    left = colormaps["viridis"](conf)[..., :3]
    right = colormaps["magma"](err_norm)[..., :3]
    return np.round(np.concatenate([left, right], axis=1) * 255.0).astype(np.uint8)
