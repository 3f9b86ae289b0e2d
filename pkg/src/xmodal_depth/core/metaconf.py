"""由 metadata 預測信心的對數線性模型

W = exp(θ·φ)，φ 為常數項加上標準化後的 metadata 通道。殘差與深度通道先取
log(x + 1e-3)。在真值殘差上最小化 (1/N)Σ[|r|·W − β·log W] + ridge·‖θ‖²，
對 θ 為凸問題，以 L-BFGS-B 求解。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigurationError, DivergenceError, EmptyMaskError
from .geometry import DepthMap
from .imagery import METADATA_CHANNELS, MetadataStack
from .losses import ConfidenceMap, clamp_confidence

logger = logging.getLogger(__name__)

RGB_CHANNELS: Tuple[str, ...] = ("D_r", "I_r_0", "I_r_1", "I_r_2")
LOG_CHANNELS = frozenset({"residual", "D_tr", "D_r"})
LOG_EPS = 1e-3
LOGIT_LIMIT = 50.0


def _channel_matrix(metadata: MetadataStack, channels: Sequence[str]) -> np.ndarray:
    """C × H × W 的原始特徵（對數通道已轉換）"""
    columns = []
    for name in channels:
        values = metadata.channel(name)
        if name in LOG_CHANNELS:
            values = np.log(np.maximum(values, 0.0) + LOG_EPS)
        columns.append(values)
    return np.stack(columns)


def _channel_valid(metadata: MetadataStack, channels: Sequence[str]) -> np.ndarray:
    index = [METADATA_CHANNELS.index(name) for name in channels]
    return np.all(metadata.channel_valid[index], axis=0)


@dataclass
class MetadataConfidenceModel:
    """已擬合的對數線性信心模型"""

    channels: Tuple[str, ...]
    weights: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    loss: float
    iterations: int

    def design(self, metadata: MetadataStack, mask: np.ndarray) -> np.ndarray:
        raw = _channel_matrix(metadata, self.channels)[:, mask].T
        standardized = (raw - self.mean) / self.scale
        return np.hstack([np.ones((standardized.shape[0], 1)), standardized])

    def predict(self, metadata: MetadataStack) -> ConfidenceMap:
        """
        預測 RGB 網格上的信心

        Returns:
            ConfidenceMap；所選通道皆有效的像素才標為有效，其餘為 1
        """
        mask = _channel_valid(metadata, self.channels)
        values = np.ones(mask.shape)
        z = np.clip(self.design(metadata, mask) @ self.weights, -LOGIT_LIMIT, LOGIT_LIMIT)
        values[mask] = np.exp(z)
        return ConfidenceMap(clamp_confidence(values), mask)


def fit_metadata_confidence(
    metadata: MetadataStack,
    pred: DepthMap,
    gt: DepthMap,
    channels: Optional[Sequence[str]] = None,
    beta: float = 0.1,
    ridge: float = 1e-3,
    max_iter: int = 500,
) -> MetadataConfidenceModel:
    """
    擬合 metadata → 信心的對數線性模型

    擬合像素為 metadata 全通道有效且 pred、gt 皆有效的像素，與 channels 無關，
    因此不同通道子集的 loss 可以直接比較。

    Args:
        metadata: 8 通道 metadata
        pred, gt: RGB 網格上的教師預測與真值
        channels: 使用的通道（None 表示全部）
        beta: NLL 的 β
        ridge: 非常數項權重的 L2 係數
        max_iter: L-BFGS-B 最大迭代數

    Raises:
        ConfigurationError: 通道名稱未知或參數無效
        EmptyMaskError: 沒有可擬合的像素
        DivergenceError: 最佳化結果非有限
    """
    names = tuple(METADATA_CHANNELS if channels is None else channels)
    unknown = [name for name in names if name not in METADATA_CHANNELS]
    if unknown:
        raise ConfigurationError(f"未知的 metadata 通道: {', '.join(unknown)}")
    if not names or beta <= 0 or ridge < 0 or max_iter < 1:
        raise ConfigurationError("metadata 信心參數無效")

    mask = metadata.valid & pred.valid & gt.valid
    if not mask.any():
        raise EmptyMaskError("metadata 信心沒有可擬合的像素")

    raw = _channel_matrix(metadata, names)[:, mask].T
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    phi = np.hstack([np.ones((raw.shape[0], 1)), (raw - mean) / scale])
    r = np.abs(pred.values - gt.values)[mask]
    n = float(r.size)
    penalty = np.full(phi.shape[1], ridge)
    penalty[0] = 0.0

    def objective(theta: np.ndarray):
        z_raw = phi @ theta
        z = np.clip(z_raw, -LOGIT_LIMIT, LOGIT_LIMIT)
        w = np.exp(z)
        value = float(np.sum(r * w - beta * z) / n + np.sum(penalty * theta * theta))
        dz = np.where(np.abs(z_raw) < LOGIT_LIMIT, r * w - beta, 0.0) / n
        return value, phi.T @ dz + 2.0 * penalty * theta

    theta0 = np.zeros(phi.shape[1])
    theta0[0] = np.log(beta / max(float(np.mean(r)), 1e-9))
    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-15},
    )
    if not np.all(np.isfinite(result.x)) or not np.isfinite(result.fun):
        raise DivergenceError("metadata 信心擬合發散", [float(result.fun)])
    logger.debug(
        "metadata 信心擬合 (%s): %d 次迭代，loss %.6g",
        ",".join(names),
        int(result.nit),
        float(result.fun),
    )
    return MetadataConfidenceModel(
        names, result.x, mean, scale, float(result.fun), int(result.nit)
    )
