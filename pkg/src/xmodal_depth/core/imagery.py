"""熱影像正規化、特徵相似度與信心網路輸入（metadata）組裝"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DomainError
from .geometry import DepthMap, PixelCoordGrid, bilinear_sample

logger = logging.getLogger(__name__)

RAW_MAX = 65535
ZERO_NORM = 1e-12

METADATA_CHANNELS: Tuple[str, ...] = (
    "S_r",
    "S_tr",
    "residual",
    "D_tr",
    "D_r",
    "I_r_0",
    "I_r_1",
    "I_r_2",
)


@dataclass(eq=False)
class NormalizedThermal:
    """正規化後的熱影像"""

    values: np.ndarray
    p2: float
    p98: float
    degenerate: bool


@dataclass(eq=False)
class FeatureMap:
    """H×W×C 特徵嵌入"""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise DomainError(f"特徵圖必須為 H×W×C: {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("特徵圖含有非有限值")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape[:2]


@dataclass(eq=False)
class SimilarityMap:
    """逐像素餘弦相似度，值域 [−1, 1]"""

    values: np.ndarray
    valid: np.ndarray


@dataclass(eq=False)
class MetadataStack:
    """8 × H × W 的信心網路輸入，與 RGB 影像次像素對齊"""

    values: np.ndarray
    channel_valid: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        """各通道有效遮罩的交集"""
        return np.all(self.channel_valid, axis=0)

    @property
    def channel_names(self) -> Tuple[str, ...]:
        return METADATA_CHANNELS

    def channel(self, name: str) -> np.ndarray:
        return self.values[METADATA_CHANNELS.index(name)]

    def as_array(self) -> np.ndarray:
        return self.values.copy()


def percentile(values: np.ndarray, q: float) -> float:
    """線性內插分位數（排序後含端點），q ∈ [0, 1]"""
    return float(np.quantile(np.asarray(values, dtype=np.float64).ravel(), q))


def normalize_thermal(raw: np.ndarray) -> NormalizedThermal:
    """
    以第 2 與第 98 百分位數將 16-bit 熱影像正規化到 [0, 1]

    Args:
        raw: H×W 原始計數

    Returns:
        NormalizedThermal；動態範圍小於 1 個計數時回傳全零並標記 degenerate

    Raises:
        DomainError: 計數超出 [0, 65535]
    """
    counts = np.asarray(raw, dtype=np.float64)
    if counts.size == 0:
        raise DomainError("熱影像為空")
    if np.any(~np.isfinite(counts)) or counts.min() < 0 or counts.max() > RAW_MAX:
        raise DomainError("熱影像計數必須位於 [0, 65535]")

    p2 = percentile(counts, 0.02)
    p98 = percentile(counts, 0.98)
    if p98 - p2 < 1.0:
        logger.warning("熱影像動態範圍過小 (p2=%s, p98=%s)", p2, p98)
        return NormalizedThermal(np.zeros(counts.shape), p2, p98, True)

    out = np.clip((counts - p2) / (p98 - p2), 0.0, 1.0)
    return NormalizedThermal(out, p2, p98, False)


def cosine_similarity_map(
    F_a: FeatureMap, F_b: FeatureMap, valid: Optional[np.ndarray] = None
) -> SimilarityMap:
    """
    逐像素餘弦相似度 ⟨F_a, F_b⟩ / (‖F_a‖·‖F_b‖)

    任一向量的範數小於 1e-12 時相似度定為 0，像素仍為有效。
    """
    a = F_a.values
    b = F_b.values
    if a.shape != b.shape:
        raise DomainError(f"特徵圖形狀不一致: {a.shape} vs {b.shape}")

    dot = np.sum(a * b, axis=-1)
    norm_a = np.sqrt(np.sum(a * a, axis=-1))
    norm_b = np.sqrt(np.sum(b * b, axis=-1))
    degenerate = (norm_a < ZERO_NORM) | (norm_b < ZERO_NORM)
    denom = np.where(degenerate, 1.0, norm_a * norm_b)
    sim = np.where(degenerate, 0.0, np.clip(dot / denom, -1.0, 1.0))

    mask = np.ones(sim.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    return SimilarityMap(np.where(mask, sim, 0.0), mask.copy())


def _normalize_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DomainError(f"RGB 影像必須為 H×W×3: {img.shape}")
    if np.issubdtype(img.dtype, np.integer):
        return img.astype(np.float64) / float(np.iinfo(img.dtype).max)
    return np.clip(img.astype(np.float64), 0.0, 1.0)


def assemble_metadata(
    D_r: DepthMap,
    D_tr: DepthMap,
    F_r: FeatureMap,
    F_t: FeatureMap,
    u_rt: PixelCoordGrid,
    I_r: np.ndarray,
    u_tr: PixelCoordGrid,
) -> MetadataStack:
    """
    組裝 8 通道 metadata

    Args:
        D_r: RGB 教師預測深度 D̂_r
        D_tr: RGB 網格上的 D̆_tr
        F_r, F_t: RGB 與熱像特徵（影像解析度）
        u_rt: RGB 像素在熱像中的位置 û_rt
        I_r: RGB 影像（H×W×3）
        u_tr: 熱像像素在 RGB 中的位置 u_tr

    Returns:
        MetadataStack（通道順序見 METADATA_CHANNELS）
    """
    shape = D_r.shape
    if D_tr.shape != shape or F_r.shape != shape or u_rt.shape != shape:
        raise DomainError("RGB 網格上的輸入形狀不一致")
    if u_tr.shape != F_t.shape:
        raise DomainError("熱像網格上的輸入形狀不一致")
    rgb = _normalize_rgb(I_r)
    if rgb.shape[:2] != shape:
        raise DomainError("RGB 影像尺寸與深度圖不符")

    F_t_at_r = bilinear_sample(F_t.values, u_rt)
    S_r = cosine_similarity_map(F_r, FeatureMap(F_t_at_r.values), F_t_at_r.valid)

    F_r_at_t = bilinear_sample(F_r.values, u_tr)
    S_t = cosine_similarity_map(F_t, FeatureMap(F_r_at_t.values), F_r_at_t.valid)
    S_tr = bilinear_sample(S_t.values, u_rt, S_t.valid)

    residual_valid = D_r.valid & D_tr.valid
    residual = np.where(residual_valid, np.abs(D_r.values - D_tr.values), 0.0)

    values = np.empty((8,) + shape)
    channel_valid = np.empty((8,) + shape, dtype=bool)
    values[0], channel_valid[0] = S_r.values, S_r.valid
    values[1], channel_valid[1] = S_tr.values, S_tr.valid
    values[2], channel_valid[2] = residual, residual_valid
    values[3], channel_valid[3] = np.where(D_tr.valid, D_tr.values, 0.0), D_tr.valid
    values[4], channel_valid[4] = np.where(D_r.valid, D_r.values, 0.0), D_r.valid
    for c in range(3):
        values[5 + c] = rgb[..., c]
        channel_valid[5 + c] = True
    return MetadataStack(values, channel_valid)
