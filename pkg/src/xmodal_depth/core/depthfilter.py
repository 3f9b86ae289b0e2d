"""LiDAR 真值深度過濾：光度一致性與立體匹配偏差"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DomainError
from .geometry import CameraIntrinsics, DepthMap, RigidTransform, bilinear_sample, warp_depth

logger = logging.getLogger(__name__)

DEFAULT_TAU_PHOTO = 0.2
DEFAULT_TAU_REL = 0.1


@dataclass(frozen=True, eq=False)
class StereoRig:
    """雙目相機組：左右內參與左到右的剛體變換"""

    left: CameraIntrinsics
    right: CameraIntrinsics
    right_from_left: RigidTransform


def _intensity(image: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=-1)
    if img.ndim != 2:
        raise DomainError(f"{name} 影像必須為 H×W")
    return img


def photometric_filter(
    lidar_depth: DepthMap,
    left_img: np.ndarray,
    right_img: np.ndarray,
    rig: StereoRig,
    tau_photo: float = DEFAULT_TAU_PHOTO,
) -> DepthMap:
    """
    移除左右影像強度不一致的 LiDAR 深度

    每個有效像素轉到右影像並雙線性取樣；|I_left − I_right| > tau_photo 或
    投影離開右影像者標記為無效。

    Args:
        lidar_depth: 左影像網格上的 LiDAR 深度
        left_img, right_img: [0, 1] 強度（彩色影像取通道平均）
        rig: 雙目相機組
        tau_photo: 強度差門檻

    Returns:
        過濾後的深度圖
    """
    left = _intensity(left_img, "左")
    right = _intensity(right_img, "右")
    if left.shape != lidar_depth.shape:
        raise DomainError("左影像與 LiDAR 深度尺寸不符")
    if right.shape != rig.right.shape:
        raise DomainError("右影像與右相機內參尺寸不符")

    _, coords = warp_depth(lidar_depth, rig.left, rig.right, rig.right_from_left)
    sampled = bilinear_sample(right, coords)
    with np.errstate(invalid="ignore"):
        consistent = np.abs(left - sampled.values) <= tau_photo
    keep = lidar_depth.valid & sampled.valid & consistent
    return DepthMap(lidar_depth.values.copy(), keep)


def stereo_deviation_filter(
    lidar_depth: DepthMap, stereo_depth: DepthMap, tau_rel: float = DEFAULT_TAU_REL
) -> DepthMap:
    """
    移除與立體匹配深度相對偏差超過 tau_rel 的 LiDAR 深度

    立體深度無效的像素保留。
    """
    if lidar_depth.shape != stereo_depth.shape:
        raise DomainError("LiDAR 與立體深度尺寸不符")
    both = lidar_depth.valid & stereo_depth.valid
    lidar = np.where(both, lidar_depth.values, 1.0)
    stereo = np.where(both, stereo_depth.values, 1.0)
    deviates = both & (np.abs(lidar - stereo) / lidar > tau_rel)
    return DepthMap(lidar_depth.values.copy(), lidar_depth.valid & ~deviates)


def filter_lidar(
    lidar_depth: DepthMap,
    left_img: np.ndarray,
    right_img: np.ndarray,
    rig: StereoRig,
    stereo_depth: Optional[DepthMap] = None,
    tau_photo: float = DEFAULT_TAU_PHOTO,
    tau_rel: float = DEFAULT_TAU_REL,
) -> Tuple[DepthMap, Dict[str, int]]:
    """
    依序套用兩種過濾並統計移除數量

    Returns:
        (過濾後深度, {"removed_photometric", "removed_stereo", "kept"})
    """
    before = int(np.count_nonzero(lidar_depth.valid))
    photo = photometric_filter(lidar_depth, left_img, right_img, rig, tau_photo)
    after_photo = int(np.count_nonzero(photo.valid))

    result = photo
    if stereo_depth is not None:
        result = stereo_deviation_filter(photo, stereo_depth, tau_rel)
    kept = int(np.count_nonzero(result.valid))

    summary = {
        "removed_photometric": before - after_photo,
        "removed_stereo": after_photo - kept,
        "kept": kept,
    }
    logger.info("LiDAR 過濾完成: %s", summary)
    return result, summary
