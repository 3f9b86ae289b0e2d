"""針孔相機模型、剛體變換、跨相機深度轉換與次像素雙線性取樣

座標約定：像素 (u, v) 對應連續影像平面上的 (u, v)，有效取樣範圍為
[0, W−1] × [0, H−1]。所有幾何運算皆使用 float64。
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import BehindCameraError, DomainError

MIN_DEPTH = 1e-6
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """針孔相機內參（單位：像素）"""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"焦距必須為正值: fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise DomainError(f"影像尺寸無效: {self.width}x{self.height}")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def pixel_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """回傳 (x, y) 像素座標網格，形狀皆為 H×W"""
        xs = np.arange(self.width, dtype=np.float64)
        ys = np.arange(self.height, dtype=np.float64)
        x, y = np.meshgrid(xs, ys)
        return x, y

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CameraIntrinsics":
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) 剛體變換：p' = R·p + t（平移單位：公尺）"""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise DomainError("旋轉必須為 3×3、平移必須為 3 維向量")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise DomainError("剛體變換含有非有限值")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOL:
            raise DomainError("旋轉矩陣不是正交矩陣")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOL:
            raise DomainError("旋轉矩陣行列式不為 +1")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidTransform":
        """由 4×4 齊次矩陣建立（最後一列必須為 [0, 0, 0, 1]）"""
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise DomainError(f"齊次矩陣形狀錯誤: {m.shape}")
        if not np.array_equal(m[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise DomainError("齊次矩陣最後一列必須為 [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rot_t = self.rotation.T
        return RigidTransform(rot_t, -(rot_t @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """回傳 self ∘ other（先套用 other）"""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """套用至 3 維點（形狀 (3,) 或 (N, 3)）"""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def is_identity(self) -> bool:
        return bool(
            np.array_equal(self.rotation, np.eye(3))
            and np.array_equal(self.translation, np.zeros(3))
        )


@dataclass(eq=False)
class DepthMap:
    """H×W 深度圖（公尺）與有效遮罩

    建構時會把非有限或非正值的像素標記為無效。
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or valid.shape != self.values.shape:
            raise DomainError(
                f"深度圖與遮罩形狀不一致: {self.values.shape} vs {valid.shape}"
            )
        with np.errstate(invalid="ignore"):
            self.valid = valid & np.isfinite(self.values) & (self.values > 0)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DepthMap":
        """有限且為正的像素視為有效"""
        arr = np.asarray(values, dtype=np.float64)
        return cls(arr, np.ones(arr.shape, dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def filled(self, fill_value: float = np.nan) -> np.ndarray:
        """無效像素以 fill_value 填入"""
        return np.where(self.valid, self.values, fill_value)

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.valid.copy())


@dataclass(eq=False)
class PixelCoordGrid:
    """次像素座標網格；valid 為目標相機內的越界旗標"""

    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.x.shape


@dataclass(eq=False)
class SampledGrid:
    """雙線性取樣結果"""

    values: np.ndarray
    valid: np.ndarray


def project(point: np.ndarray, K: CameraIntrinsics) -> Tuple[np.ndarray, float]:
    """
    將相機座標系的 3 維點投影到像素平面

    Args:
        point: (X, Y, Z)，單位公尺
        K: 相機內參

    Returns:
        (pixel, depth)；pixel = (fx·X/Z + cx, fy·Y/Z + cy)、depth = Z

    Raises:
        BehindCameraError: Z ≤ 1e-6
    """
    x, y, z = (float(c) for c in point)
    if z <= MIN_DEPTH:
        raise BehindCameraError(f"點位於相機後方: Z={z}")
    pixel = np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])
    return pixel, z


def backproject(pixel: np.ndarray, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """
    將像素與深度反投影為相機座標系的 3 維點

    Raises:
        DomainError: 深度不為正
    """
    if not depth > 0:
        raise DomainError(f"深度必須為正值: {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    return depth * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])


def _transform_grid(
    x: np.ndarray, y: np.ndarray, depth: np.ndarray, K_src: CameraIntrinsics, T: RigidTransform
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # 逐元素展開，避免矩陣乘法的區塊累加順序影響結果
    px = (x - K_src.cx) / K_src.fx * depth
    py = (y - K_src.cy) / K_src.fy * depth
    pz = depth
    r, t = T.rotation, T.translation
    qx = r[0, 0] * px + r[0, 1] * py + r[0, 2] * pz + t[0]
    qy = r[1, 0] * px + r[1, 1] * py + r[1, 2] * pz + t[1]
    qz = r[2, 0] * px + r[2, 1] * py + r[2, 2] * pz + t[2]
    return qx, qy, qz


def warp_depth(
    src_depth: DepthMap,
    K_src: CameraIntrinsics,
    K_dst: CameraIntrinsics,
    T_dst_src: RigidTransform,
) -> Tuple[DepthMap, PixelCoordGrid]:
    """
    把來源相機的深度轉換到目標相機座標系

    每個有效來源像素：反投影、套用 T_dst_src、再以 K_dst 投影。深度存放於來源
    像素網格上，座標為目標影像中的次像素位置。落在目標相機後方或越界的像素
    標記為無效；不做 z-buffer 遮擋處理。

    Args:
        src_depth: 來源深度圖
        K_src: 來源相機內參
        K_dst: 目標相機內參
        T_dst_src: 來源到目標的剛體變換

    Returns:
        (dst_frame_depth, dst_coords)
    """
    if src_depth.shape != K_src.shape:
        raise DomainError(f"深度圖尺寸 {src_depth.shape} 與內參 {K_src.shape} 不符")

    x, y = K_src.pixel_grid()

    if K_src == K_dst and T_dst_src.is_identity():
        valid = src_depth.valid.copy()
        depth = DepthMap(np.where(valid, src_depth.values, 0.0), valid)
        return depth, PixelCoordGrid(x, y, valid.copy())

    d = np.where(src_depth.valid, src_depth.values, 1.0)
    qx, qy, qz = _transform_grid(x, y, d, K_src, T_dst_src)

    in_front = qz > MIN_DEPTH
    safe_z = np.where(in_front, qz, 1.0)
    u = K_dst.fx * qx / safe_z + K_dst.cx
    v = K_dst.fy * qy / safe_z + K_dst.cy
    in_bounds = (u >= 0) & (u <= K_dst.width - 1) & (v >= 0) & (v <= K_dst.height - 1)
    valid = src_depth.valid & in_front & in_bounds

    depth = DepthMap(np.where(valid, qz, 0.0), valid)
    coords = PixelCoordGrid(np.where(valid, u, 0.0), np.where(valid, v, 0.0), valid.copy())
    return depth, coords


def _footprint(coords: PixelCoordGrid, height: int, width: int):
    """計算雙線性取樣的四鄰點索引與權重"""
    in_bounds = (
        coords.valid
        & np.isfinite(coords.x)
        & np.isfinite(coords.y)
        & (coords.x >= 0)
        & (coords.x <= width - 1)
        & (coords.y >= 0)
        & (coords.y <= height - 1)
    )
    x = np.where(in_bounds, coords.x, 0.0)
    y = np.where(in_bounds, coords.y, 0.0)

    if width == 1:
        x0 = np.zeros(x.shape, dtype=np.intp)
        wx = np.zeros(x.shape)
        x1 = x0
    else:
        x0 = np.clip(np.floor(x).astype(np.intp), 0, width - 2)
        wx = x - x0
        x1 = x0 + 1

    if height == 1:
        y0 = np.zeros(y.shape, dtype=np.intp)
        wy = np.zeros(y.shape)
        y1 = y0
    else:
        y0 = np.clip(np.floor(y).astype(np.intp), 0, height - 2)
        wy = y - y0
        y1 = y0 + 1

    neighbors = (
        (y0, x0, (1.0 - wx) * (1.0 - wy)),
        (y0, x1, wx * (1.0 - wy)),
        (y1, x0, (1.0 - wx) * wy),
        (y1, x1, wx * wy),
    )
    return in_bounds, neighbors


def bilinear_sample(
    grid: np.ndarray, coords: PixelCoordGrid, valid: Optional[np.ndarray] = None
) -> SampledGrid:
    """
    以次像素座標對網格做雙線性取樣

    Args:
        grid: H×W 或 H×W×C 網格
        coords: 取樣座標（可為任意形狀）
        valid: 網格的有效遮罩（預設全部有效）

    Returns:
        SampledGrid；座標無效或任一權重大於零的鄰點無效時輸出為無效
    """
    values = np.asarray(grid, dtype=np.float64)
    height, width = values.shape[:2]
    src_valid = np.ones((height, width), dtype=bool) if valid is None else np.asarray(valid, bool)
    if src_valid.shape != (height, width):
        raise DomainError("取樣網格與遮罩形狀不一致")
    if coords.x.shape != coords.y.shape or coords.x.shape != coords.valid.shape:
        raise DomainError("座標網格形狀不一致")

    in_bounds, neighbors = _footprint(coords, height, width)
    out_valid = in_bounds.copy()
    total = None
    for yi, xi, w in neighbors:
        n_valid = src_valid[yi, xi]
        out_valid &= n_valid | (w == 0)
        if values.ndim == 3:
            n_vals = np.where(n_valid[..., None], values[yi, xi], 0.0)
            term = w[..., None] * n_vals
        else:
            n_vals = np.where(n_valid, values[yi, xi], 0.0)
            term = w * n_vals
        total = term if total is None else total + term

    mask = out_valid[..., None] if values.ndim == 3 else out_valid
    return SampledGrid(np.where(mask, total, 0.0), out_valid)


def bilinear_sample_adjoint(
    grad: np.ndarray,
    coords: PixelCoordGrid,
    src_valid: np.ndarray,
) -> np.ndarray:
    """
    雙線性取樣的轉置：把輸出網格上的梯度散佈回來源網格

    Args:
        grad: 與 coords 同形狀的梯度
        coords: 取樣座標
        src_valid: 來源網格的有效遮罩（決定來源形狀）

    Returns:
        與來源網格同形狀的梯度
    """
    src_valid = np.asarray(src_valid, dtype=bool)
    height, width = src_valid.shape
    in_bounds, neighbors = _footprint(coords, height, width)
    out_valid = in_bounds.copy()
    for yi, xi, w in neighbors:
        out_valid &= src_valid[yi, xi] | (w == 0)

    g = np.where(out_valid, np.asarray(grad, dtype=np.float64), 0.0)
    result = np.zeros((height, width))
    for yi, xi, w in neighbors:
        np.add.at(result, (yi[out_valid], xi[out_valid]), (w * g)[out_valid])
    return result


def depth_warp_coefficient(K_src: CameraIntrinsics, T_dst_src: RigidTransform) -> np.ndarray:
    """
    深度轉換的逐像素仿射係數 r₃·K⁻¹ũ

    轉換後深度 = 係數 · 來源深度 + t_z。
    """
    x, y = K_src.pixel_grid()
    r = T_dst_src.rotation
    return r[2, 0] * ((x - K_src.cx) / K_src.fx) + r[2, 1] * ((y - K_src.cy) / K_src.fy) + r[2, 2]


def warped_thermal_depth(
    D_t: DepthMap,
    u_rt: PixelCoordGrid,
    K_t: CameraIntrinsics,
    K_r: CameraIntrinsics,
    T_r_t: RigidTransform,
) -> DepthMap:
    """
    計算 RGB 網格上、以 RGB 相機座標表示的熱像預測深度 D̆_tr

    先以 warp_depth 得到熱像網格上的 D̂_tr，再於 û_rt 做雙線性取樣。
    """
    D_tr, _ = warp_depth(D_t, K_t, K_r, T_r_t)
    sampled = bilinear_sample(D_tr.values, u_rt, D_tr.valid)
    return DepthMap(sampled.values, sampled.valid)


def warped_thermal_depth_vjp(
    grad_breve: np.ndarray,
    u_rt: PixelCoordGrid,
    D_t: DepthMap,
    K_t: CameraIntrinsics,
    K_r: CameraIntrinsics,
    T_r_t: RigidTransform,
) -> np.ndarray:
    """
    將對 D̆_tr 的梯度經由 warp 鏈傳回 D̂_t

    ∂L/∂D̂_t(u_t) = (r₃·K_t⁻¹ũ_t) · Σ_i w_i(u_t) · ∂L/∂D̆_tr(i)

    Args:
        grad_breve: RGB 網格上對 D̆_tr 的梯度
        u_rt: RGB 像素在熱像中的次像素位置
        D_t: 熱像預測深度
        K_t, K_r: 熱像與 RGB 內參
        T_r_t: 熱像到 RGB 的剛體變換

    Returns:
        熱像網格上的梯度
    """
    D_tr, _ = warp_depth(D_t, K_t, K_r, T_r_t)
    scattered = bilinear_sample_adjoint(grad_breve, u_rt, D_tr.valid)
    coefficient = depth_warp_coefficient(K_t, T_r_t)
    return np.where(D_tr.valid, coefficient * scattered, 0.0)


def footprint_coverage(
    coords: PixelCoordGrid, src_valid: np.ndarray, sample_mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """來源網格中至少被一個有效取樣以正權重引用的像素（sample_mask 限定參與的取樣）"""
    samples = np.ones(coords.shape) if sample_mask is None else np.asarray(sample_mask, float)
    weights = bilinear_sample_adjoint(samples, coords, src_valid)
    return weights > 0
