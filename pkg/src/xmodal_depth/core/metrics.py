"""單目深度評估指標（含深度分箱加權版本）"""

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import EmptyMaskError
from .geometry import DepthMap

CSV_COLUMNS = ("AbsRel", "SqRel", "RMSE", "RMSElog", "d1", "d2", "d3")


@dataclass
class MetricSet:
    """標準 MDE 指標"""

    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    num_pixels: int

    def as_row(self) -> Dict[str, float]:
        """依 CSV 欄位名稱輸出"""
        return {
            "AbsRel": self.abs_rel,
            "SqRel": self.sq_rel,
            "RMSE": self.rmse,
            "RMSElog": self.rmse_log,
            "d1": self.delta1,
            "d2": self.delta2,
            "d3": self.delta3,
        }

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class BinnedMetricSet:
    """每 bin_width 公尺一箱的指標與跨箱平均"""

    bins: Dict[float, MetricSet] = field(default_factory=dict)
    aggregate: Optional[MetricSet] = None
    bin_width: float = 5.0
    max_depth: float = 80.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "bin_width": self.bin_width,
            "max_depth": self.max_depth,
            "aggregate": self.aggregate.to_dict() if self.aggregate else None,
            "bins": {f"{lo:g}": m.to_dict() for lo, m in sorted(self.bins.items())},
        }


def _mean(values: np.ndarray) -> float:
    return float(np.sum(values) / values.size)


def metrics_from_arrays(pred: np.ndarray, gt: np.ndarray) -> MetricSet:
    """一維預測與真值陣列（皆 > 0）上的指標"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.size == 0:
        raise EmptyMaskError("評估遮罩為空")
    diff = pred - gt
    log_diff = np.log(pred) - np.log(gt)
    ratio = np.maximum(gt / pred, pred / gt)
    return MetricSet(
        abs_rel=_mean(np.abs(diff) / gt),
        sq_rel=_mean(diff * diff / gt),
        rmse=float(np.sqrt(_mean(diff * diff))),
        rmse_log=float(np.sqrt(_mean(log_diff * log_diff))),
        delta1=_mean((ratio < 1.25).astype(np.float64)),
        delta2=_mean((ratio < 1.25**2).astype(np.float64)),
        delta3=_mean((ratio < 1.25**3).astype(np.float64)),
        num_pixels=int(pred.size),
    )


def _joint_mask(pred: DepthMap, gt: DepthMap, mask: Optional[np.ndarray]) -> np.ndarray:
    joint = pred.valid & gt.valid
    if mask is not None:
        joint &= np.asarray(mask, dtype=bool)
    return joint


def compute_metrics(pred: DepthMap, gt: DepthMap, mask: Optional[np.ndarray] = None) -> MetricSet:
    """
    計算 AbsRel、SqRel、RMSE、RMSElog 與 δ 門檻準確率

    Args:
        pred: 預測深度
        gt: 真值深度
        mask: 額外評估遮罩（與兩者有效遮罩取交集）

    Raises:
        EmptyMaskError: 沒有可評估的像素
    """
    joint = _joint_mask(pred, gt, mask)
    if not np.any(joint):
        raise EmptyMaskError("評估遮罩為空")
    return metrics_from_arrays(pred.values[joint], gt.values[joint])


def compute_weighted_metrics(
    pred: DepthMap,
    gt: DepthMap,
    mask: Optional[np.ndarray] = None,
    bin_width: float = 5.0,
    max_depth: float = 80.0,
) -> BinnedMetricSet:
    """
    依真值深度分箱 [k·w, (k+1)·w) 計算指標，再對非空箱做等權平均

    真值 ≥ max_depth 的像素不納入。

    Raises:
        EmptyMaskError: 所有箱皆為空
    """
    joint = _joint_mask(pred, gt, mask) & (gt.values < max_depth)
    p = pred.values[joint]
    g = gt.values[joint]
    bin_index = np.floor(g / bin_width).astype(np.int64)

    result = BinnedMetricSet(bin_width=bin_width, max_depth=max_depth)
    for k in np.unique(bin_index):
        sel = bin_index == k
        result.bins[float(k * bin_width)] = metrics_from_arrays(p[sel], g[sel])

    if not result.bins:
        raise EmptyMaskError("所有深度箱皆為空")

    per_bin = [result.bins[key] for key in sorted(result.bins)]
    result.aggregate = MetricSet(
        abs_rel=float(np.mean([m.abs_rel for m in per_bin])),
        sq_rel=float(np.mean([m.sq_rel for m in per_bin])),
        rmse=float(np.mean([m.rmse for m in per_bin])),
        rmse_log=float(np.mean([m.rmse_log for m in per_bin])),
        delta1=float(np.mean([m.delta1 for m in per_bin])),
        delta2=float(np.mean([m.delta2 for m in per_bin])),
        delta3=float(np.mean([m.delta3 for m in per_bin])),
        num_pixels=int(sum(m.num_pixels for m in per_bin)),
    )
    return result
