"""合成場景：解析深度渲染、遮擋判定、教師深度污染與逐像素信心

相機位姿一律為相機到世界（camera → world）。射線方向取 R·K⁻¹ũ，其相機
座標 z 分量為 1，因此交點參數 t 即為相機深度。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit, logit
from scipy.spatial.transform import Rotation

from .errors import DivergenceError, DomainError
from .geometry import CameraIntrinsics, DepthMap, RigidTransform
from .losses import CONF_MAX, CONF_MIN, ConfidenceMap, laplacian_nll, trim_mask
from .parallel import map_chunks

logger = logging.getLogger(__name__)

HIT_EPS = 1e-9
OCCLUSION_MARGIN = 1e-7
BACKGROUND_ID = -1
NO_HIT_ID = -2


@dataclass(frozen=True)
class PlanePrimitive:
    """軸對齊的矩形平面：座標 axis = offset，其餘兩軸受 bounds 限制"""

    axis: int
    offset: float
    bounds: Tuple[Tuple[float, float], Tuple[float, float]] = (
        (-np.inf, np.inf),
        (-np.inf, np.inf),
    )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "plane",
            "axis": self.axis,
            "offset": self.offset,
            "bounds": [list(b) for b in self.bounds],
        }


@dataclass(frozen=True)
class SpherePrimitive:
    """球體"""

    center: Tuple[float, float, float]
    radius: float

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "sphere", "center": list(self.center), "radius": self.radius}


Primitive = Union[PlanePrimitive, SpherePrimitive]


@dataclass
class Scene:
    """場景：基本形體列表與世界座標 z = background_depth 的背景平面"""

    primitives: List[Primitive] = field(default_factory=list)
    background_depth: float = 20.0
    seed: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "background_depth": self.background_depth,
            "seed": self.seed,
            "primitives": [p.to_dict() for p in self.primitives],
        }


@dataclass
class CorruptionRegion:
    """半開區間 [row0, row1) × [col0, col1)"""

    row0: int
    row1: int
    col0: int
    col1: int


@dataclass
class CorruptionSpec:
    """教師深度污染設定（單位：公尺）"""

    regions: List[CorruptionRegion] = field(default_factory=list)
    bias: float = 0.0
    region_noise: float = 0.0
    base_noise: float = 0.0
    seed: int = 0


def _intersect_plane(plane: PlanePrimitive, origin: np.ndarray, d: List[np.ndarray]):
    a = plane.axis
    other = [k for k in range(3) if k != a]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (plane.offset - origin[a]) / d[a]
        hit = np.isfinite(t) & (t > HIT_EPS)
        safe_t = np.where(hit, t, 0.0)
        for k, (lo, hi) in zip(other, plane.bounds):
            coord = origin[k] + safe_t * d[k]
            hit &= (coord >= lo) & (coord <= hi)
    return np.where(hit, t, np.inf)


def _intersect_sphere(sphere: SpherePrimitive, origin: np.ndarray, d: List[np.ndarray]):
    oc = [origin[k] - sphere.center[k] for k in range(3)]
    a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    b = 2.0 * (d[0] * oc[0] + d[1] * oc[1] + d[2] * oc[2])
    c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - sphere.radius**2
    disc = b * b - 4.0 * a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = (-b - root) / (2.0 * a)
    t_far = (-b + root) / (2.0 * a)
    t = np.where(t_near > HIT_EPS, t_near, t_far)
    return np.where((disc >= 0) & (t > HIT_EPS), t, np.inf)


def _cast(scene: Scene, origin: np.ndarray, d: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """回傳最近交點參數 t 與形體編號（背景為 −1）"""
    background = PlanePrimitive(2, scene.background_depth)
    best_t = _intersect_plane(background, origin, d)
    best_id = np.where(np.isfinite(best_t), BACKGROUND_ID, NO_HIT_ID)
    for index, primitive in enumerate(scene.primitives):
        if isinstance(primitive, PlanePrimitive):
            t = _intersect_plane(primitive, origin, d)
        else:
            t = _intersect_sphere(primitive, origin, d)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, index, best_id)
    return best_t, best_id


def _ray_directions(K: CameraIntrinsics, pose: RigidTransform, x: np.ndarray, y: np.ndarray):
    cam_x = (x - K.cx) / K.fx
    cam_y = (y - K.cy) / K.fy
    r = pose.rotation
    return [r[k, 0] * cam_x + r[k, 1] * cam_y + r[k, 2] for k in range(3)]


def render_depth_at(
    scene: Scene,
    K: CameraIntrinsics,
    pose: RigidTransform,
    x: np.ndarray,
    y: np.ndarray,
    threads: Optional[int] = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    在任意次像素位置解析渲染深度

    Args:
        scene: 場景
        K: 相機內參
        pose: 相機到世界的位姿
        x, y: 像素座標（同形狀）
        threads: 執行緒數

    Returns:
        (depth, primitive_id)；沒有交點處深度為 inf、編號為 −2
    """
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    flat_x = xs.ravel()
    flat_y = ys.ravel()
    origin = pose.translation

    def work(start: int, stop: int):
        d = _ray_directions(K, pose, flat_x[start:stop], flat_y[start:stop])
        return _cast(scene, origin, d)

    chunks = map_chunks(work, flat_x.size, threads)
    if not chunks:
        return np.zeros(xs.shape), np.zeros(xs.shape, dtype=np.int64)
    depth = np.concatenate([c[0] for c in chunks]).reshape(xs.shape)
    ids = np.concatenate([c[1] for c in chunks]).astype(np.int64).reshape(xs.shape)
    return depth, ids


def render_depth(
    scene: Scene, K: CameraIntrinsics, pose: RigidTransform, threads: Optional[int] = 1
) -> DepthMap:
    """每個像素最近射線交點的深度（平面與球體皆為解析解）"""
    x, y = K.pixel_grid()
    depth, ids = render_depth_at(scene, K, pose, x, y, threads)
    valid = ids != NO_HIT_ID
    return DepthMap(np.where(valid, depth, 0.0), valid)


def occlusion_mask(scene: Scene, pose: RigidTransform, points_world: np.ndarray) -> np.ndarray:
    """
    判定世界座標點是否被場景遮擋（從相機中心看）

    以線段 o + t·(p − o)，t ∈ (0, 1) 與所有形體求交；t < 1 − 1e-7 有交點即遮擋。

    Returns:
        布林陣列，True 表示被遮擋
    """
    pts = np.atleast_2d(np.asarray(points_world, dtype=np.float64))
    origin = pose.translation
    d = [pts[:, k] - origin[k] for k in range(3)]
    t, _ = _cast(scene, origin, d)
    return t < 1.0 - OCCLUSION_MARGIN


def _world_points(depth: DepthMap, K: CameraIntrinsics, pose: RigidTransform) -> np.ndarray:
    x, y = K.pixel_grid()
    z = np.where(depth.valid, depth.values, 0.0)
    cam = np.stack([(x - K.cx) / K.fx * z, (y - K.cy) / K.fy * z, z], axis=-1)
    return pose.apply(cam.reshape(-1, 3)).reshape(depth.shape + (3,))


def _sinusoids(points: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    frequency = rng.uniform(0.5, 2.0, count)
    phase = rng.uniform(0.0, 2.0 * np.pi, count)
    return np.sin((points @ directions.T) * frequency + phase)


def scene_features(
    depth: DepthMap,
    K: CameraIntrinsics,
    pose: RigidTransform,
    seed: int,
    noise: float = 0.0,
    noise_seed: Optional[int] = None,
    channels: int = 8,
) -> np.ndarray:
    """
    以世界座標的正弦嵌入模擬特徵圖

    同一 seed 下不同相機看到同一表面點時得到相同嵌入；noise 為各相機獨立的
    高斯雜訊標準差。無效像素的特徵為 0。

    Returns:
        H×W×channels 陣列
    """
    embedding = _sinusoids(_world_points(depth, K, pose), channels, np.random.default_rng(seed))
    if noise > 0:
        rng = np.random.default_rng(seed if noise_seed is None else noise_seed)
        embedding = embedding + rng.normal(0.0, noise, embedding.shape)
    return np.where(depth.valid[..., None], embedding, 0.0)


def scene_texture(
    depth: DepthMap, K: CameraIntrinsics, pose: RigidTransform, seed: int
) -> np.ndarray:
    """表面上的三通道紋理，值域 [0, 1]；無效像素為 0"""
    rng = np.random.default_rng([seed, 1])
    texture = 0.5 + 0.5 * _sinusoids(_world_points(depth, K, pose), 3, rng)
    return np.where(depth.valid[..., None], texture, 0.0)


def random_scene(seed: int, n_spheres: int = 2, n_planes: int = 2) -> Scene:
    """產生隨機場景：數個球體與正對相機的矩形平面，背景深度 12–20 m"""
    rng = np.random.default_rng(seed)
    primitives: List[Primitive] = []
    for _ in range(n_spheres):
        center = (
            float(rng.uniform(-2.0, 2.0)),
            float(rng.uniform(-1.5, 1.5)),
            float(rng.uniform(5.0, 10.0)),
        )
        primitives.append(SpherePrimitive(center, float(rng.uniform(0.5, 1.2))))
    for _ in range(n_planes):
        x0 = float(rng.uniform(-3.0, 1.0))
        y0 = float(rng.uniform(-2.0, 0.5))
        primitives.append(
            PlanePrimitive(
                2,
                float(rng.uniform(4.0, 11.0)),
                ((x0, x0 + float(rng.uniform(0.5, 2.5))), (y0, y0 + float(rng.uniform(0.5, 2.0)))),
            )
        )
    return Scene(primitives, float(rng.uniform(12.0, 20.0)), seed)


def random_rig(seed: int, baseline: float = 0.2) -> Tuple[RigidTransform, RigidTransform]:
    """
    產生雙相機位姿（相機到世界）

    Returns:
        (pose_a, pose_b)；b 相對 a 沿 x 軸平移 baseline 並帶微小旋轉
    """
    rng = np.random.default_rng(seed)
    pose_a = RigidTransform(Rotation.from_rotvec(rng.normal(0.0, 0.03, 3)).as_matrix(), np.zeros(3))
    b_from_a = RigidTransform(
        Rotation.from_rotvec(rng.normal(0.0, 0.02, 3)).as_matrix(),
        np.array([baseline, 0.0, 0.0]),
    )
    return pose_a, pose_a.compose(b_from_a)


def relative_transform(pose_src: RigidTransform, pose_dst: RigidTransform) -> RigidTransform:
    """T_dst_src = pose_dst⁻¹ ∘ pose_src"""
    return pose_dst.inverse().compose(pose_src)


def corrupt_depth(depth: DepthMap, spec: CorruptionSpec) -> Tuple[DepthMap, np.ndarray]:
    """
    在指定矩形內加入偏差與雜訊，其餘像素加入小幅雜訊

    Returns:
        (污染後深度, 污染遮罩)

    Raises:
        DomainError: 區域超出影像範圍
    """
    height, width = depth.shape
    region_mask = np.zeros(depth.shape, dtype=bool)
    for region in spec.regions:
        rows_ok = 0 <= region.row0 <= region.row1 <= height
        if not (rows_ok and 0 <= region.col0 <= region.col1 <= width):
            raise DomainError(f"污染區域超出影像範圍: {region}")
        region_mask[region.row0 : region.row1, region.col0 : region.col1] = True

    rng = np.random.default_rng(spec.seed)
    base_noise = rng.normal(0.0, 1.0, depth.shape)
    region_noise = rng.normal(0.0, 1.0, depth.shape)

    offset = np.where(
        region_mask,
        spec.bias + spec.region_noise * region_noise,
        spec.base_noise * base_noise,
    )
    values = np.where(depth.valid, np.maximum(depth.values + offset, 1e-3), 0.0)
    return DepthMap(values, depth.valid.copy()), region_mask & depth.valid


def oracle_confidence(residual: np.ndarray, beta: float) -> ConfidenceMap:
    """
    Laplacian NLL 的逐像素最小點 W = clamp(β / max(|r|, 1e-9))

    Raises:
        DomainError: 殘差為負
    """
    r = np.asarray(residual, dtype=np.float64)
    if np.any(r < 0):
        raise DomainError("殘差必須非負")
    return ConfidenceMap(np.clip(beta / np.maximum(r, 1e-9), CONF_MIN, CONF_MAX))


def fit_confidence(
    pred: DepthMap,
    gt: DepthMap,
    beta: float = 0.1,
    steps: int = 500,
    step_size: float = 1.0,
    keep_fraction: float = 1.0,
    init: float = 0.5,
) -> ConfidenceMap:
    """
    以 logit 參數化的逐像素梯度下降最小化 Laplacian NLL

    每一步使用逐像素的對角預條件：θ ← θ − s·(W|r|/β − 1)/(1 − W)，
    在最小點附近等同牛頓步；單步幅度限制在 ±2。

    Args:
        pred, gt: 預測與真值深度
        beta: NLL 的 β
        steps: 迭代次數
        step_size: 步長 s
        keep_fraction: 殘差修剪保留比例（被修剪的像素不參與更新）
        init: 初始信心

    Returns:
        ConfidenceMap；無效或被修剪的像素保留初始值並標為無效

    Raises:
        DivergenceError: loss 出現非有限值
    """
    base = pred.valid & gt.valid
    abs_res = np.where(base, np.abs(pred.values - gt.values), 0.0)
    kept = trim_mask(abs_res, base, keep_fraction)

    theta_lo, theta_hi = float(logit(CONF_MIN)), float(logit(CONF_MAX))
    theta = np.full(pred.shape, float(logit(init)))
    r = abs_res[kept]
    t = theta[kept]
    trace: List[float] = []

    for step in range(steps):
        w = expit(t)
        loss = float(np.sum(w * r - beta * np.log(w)) / max(r.size, 1))
        trace.append(loss)
        if not np.isfinite(loss):
            raise DivergenceError(f"信心擬合在第 {step} 步發散", trace)
        update = np.clip((w * r / beta - 1.0) / (1.0 - w), -2.0, 2.0)
        t = np.clip(t - step_size * update, theta_lo, theta_hi)

    theta[kept] = t
    logger.debug("信心擬合完成：%d 步，最終 loss %.6g", steps, trace[-1] if trace else 0.0)
    return ConfidenceMap(np.clip(expit(theta), CONF_MIN, CONF_MAX), kept)


def nll_value(W: ConfidenceMap, pred: DepthMap, gt: DepthMap, beta: float) -> float:
    """不修剪的 NLL 數值（供擬合前後比較）"""
    return laplacian_nll(W, pred, gt, beta, keep_fraction=1.0).value

