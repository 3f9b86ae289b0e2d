"""由深度圖建立 2D 障礙物地圖

流程：反投影成點雲 → 體素降採樣 → 半徑離群過濾 → 去除地面並壓平成 2D →
DBSCAN 分群 → 每群一個 CCW 多邊形。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import alphashape
import numpy as np
from scipy.spatial import ConvexHull, QhullError
from shapely.geometry import Point, Polygon
from shapely.ops import unary_union
from shapely.prepared import prep
from sklearn.cluster import DBSCAN
from sklearn.neighbors import NearestNeighbors

from .errors import DomainError
from .geometry import CameraIntrinsics, DepthMap, RigidTransform
from .parallel import ThreadPolicy

logger = logging.getLogger(__name__)

NOISE_LABEL = -1
COLLINEAR_TOL = 1e-9
COVER_TOL = 1e-9


@dataclass(eq=False)
class PointCloud:
    """N×3 點與其來源像素 (row, col)；非像素來源時 pixels 為 None"""

    points: np.ndarray
    pixels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass
class ObstaclePolygon:
    """一個群集的 CCW 多邊形頂點 (M×2)"""

    cluster: int
    vertices: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"cluster": self.cluster, "vertices": self.vertices.tolist()}


@dataclass
class ObstacleMap:
    """障礙物地圖與各階段點數"""

    polygons: List[ObstaclePolygon] = field(default_factory=list)
    stats: Dict[str, int] = field(default_factory=dict)

    def to_json_list(self) -> List[Dict[str, Any]]:
        return [p.to_dict() for p in self.polygons]


@dataclass(frozen=True)
class ObstacleParams:
    """障礙物地圖參數"""

    voxel: float = 0.1
    radius: float = 0.5
    min_neighbors: int = 2
    ground_height: float = 0.15
    max_height: float = 2.0
    eps: float = 0.5
    min_pts: int = 5
    alpha: float = 0.0
    padding: float = 0.05


def depth_to_pointcloud(
    depth: DepthMap, K: CameraIntrinsics, pose: Optional[RigidTransform] = None
) -> PointCloud:
    """
    反投影所有有效像素（列優先順序）

    Args:
        depth: 深度圖
        K: 相機內參
        pose: 相機到世界的位姿（None 表示保留相機座標）
    """
    if depth.shape != K.shape:
        raise DomainError("深度圖與內參尺寸不符")
    rows, cols = np.nonzero(depth.valid)
    z = depth.values[rows, cols]
    x = (cols - K.cx) / K.fx * z
    y = (rows - K.cy) / K.fy * z
    points = np.stack([x, y, z], axis=1)
    if pose is not None:
        points = pose.apply(points)
    return PointCloud(points, np.stack([rows, cols], axis=1))


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    每個被佔據的體素以其點的質心取代；輸出依體素索引排序

    體素索引為各軸 floor(coord / voxel)。來源像素取體素內索引最小的點。
    """
    if voxel <= 0:
        raise DomainError(f"voxel 必須為正值: {voxel}")
    if len(cloud) == 0:
        pixels = cloud.pixels[:0] if cloud.pixels is not None else None
        return PointCloud(np.zeros((0, 3)), pixels)
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inverse, cloud.points)
    pixels = cloud.pixels[first] if cloud.pixels is not None else None
    return PointCloud(sums / counts[:, None], pixels)


def radial_outlier_filter(
    cloud: PointCloud, radius: float, min_neighbors: int, threads: Optional[int] = None
) -> PointCloud:
    """移除半徑內鄰居（不含自身）少於 min_neighbors 的點"""
    if min_neighbors <= 0 or len(cloud) == 0:
        return cloud
    nbrs = NearestNeighbors(radius=radius, n_jobs=ThreadPolicy.resolve(threads))
    neighborhoods = nbrs.fit(cloud.points).radius_neighbors(return_distance=False)
    # 未傳入查詢點時 sklearn 不把自身算進鄰居
    counts = np.array([len(nb) for nb in neighborhoods], dtype=np.int64)
    keep = counts >= min_neighbors
    pixels = cloud.pixels[keep] if cloud.pixels is not None else None
    return PointCloud(cloud.points[keep], pixels)


def remove_ground_and_flatten(
    cloud: PointCloud,
    ground_height: float = 0.15,
    max_height: float = 2.0,
    up_axis: int = 2,
) -> np.ndarray:
    """
    保留高度在 (ground_height, max_height] 的點並丟棄高度軸

    Returns:
        N×2 平面座標

    Raises:
        DomainError: max_height ≤ ground_height
    """
    if max_height <= ground_height:
        raise DomainError("max_height 必須大於 ground_height")
    if len(cloud) == 0:
        return np.zeros((0, 2))
    h = cloud.points[:, up_axis]
    keep = (h > ground_height) & (h <= max_height)
    plane_axes = [k for k in range(3) if k != up_axis]
    return cloud.points[keep][:, plane_axes]


def dbscan(
    points: np.ndarray, eps: float, min_pts: int, threads: Optional[int] = None
) -> np.ndarray:
    """
    DBSCAN 分群（鄰域含自身，距離 ≤ eps）

    群集依最小索引核心點的出現順序重新編號；邊界點歸屬最先擴展到它的群集。

    Returns:
        每點的群集編號，雜訊為 −1
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    labels = np.full(pts.shape[0], NOISE_LABEL, dtype=np.int64)
    if pts.shape[0] == 0:
        return labels
    model = DBSCAN(eps=eps, min_samples=min_pts, n_jobs=ThreadPolicy.resolve(threads)).fit(pts)
    raw = np.asarray(model.labels_, dtype=np.int64)

    first_core: Dict[int, int] = {}
    for index in model.core_sample_indices_:
        first_core.setdefault(int(raw[index]), int(index))
    order = sorted(first_core, key=first_core.get)
    for new, old in enumerate(order):
        labels[raw == old] = new
    return labels


def _padded_rectangle(points: np.ndarray, padding: float) -> np.ndarray:
    lo = points.min(axis=0) - padding
    hi = points.max(axis=0) + padding
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


def _is_degenerate(points: np.ndarray) -> bool:
    unique = np.unique(points, axis=0)
    if unique.shape[0] < 3:
        return True
    centered = unique - unique.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    return singular[-1] <= COLLINEAR_TOL * max(singular[0], 1.0)


def _shape_polygons(shape) -> List[Polygon]:
    if shape.is_empty:
        return []
    if shape.geom_type == "Polygon":
        return [shape]
    return [g for g in getattr(shape, "geoms", []) if g.geom_type == "Polygon" and not g.is_empty]


def _alpha_support(points: np.ndarray, alpha: float) -> np.ndarray:
    """alpha shape 的邊界頂點，加上沒有落在 alpha shape 內的孤立點"""
    polygons = _shape_polygons(alphashape.alphashape(points, alpha))
    if not polygons:
        return points
    region = prep(unary_union(polygons).buffer(COVER_TOL))
    isolated = np.array([not region.covers(Point(p)) for p in points], dtype=bool)
    boundary = [np.asarray(poly.exterior.coords)[:-1] for poly in polygons]
    return np.unique(np.vstack(boundary + [points[isolated]]), axis=0)


def cluster_to_polygon(points: np.ndarray, alpha: float = 0.0, padding: float = 0.05) -> np.ndarray:
    """
    把一個群集轉成 CCW 多邊形

    alpha = 0 使用凸包；alpha > 0 先以 alphashape 取外接圓半徑 < 1/alpha 的
    三角形聯集，再對其邊界頂點與聯集外的孤立點取凸包，因此所有點都在多邊形
    內或邊上。少於 3 個相異點或共線時輸出外擴 padding 的軸對齊矩形。頂點從
    字典序最小者開始。

    Raises:
        DomainError: 群集為空
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise DomainError("群集沒有任何點")
    if _is_degenerate(pts):
        return _padded_rectangle(pts, padding)

    support = _alpha_support(pts, alpha) if alpha > 0 else pts
    try:
        hull = ConvexHull(support)
    except QhullError:
        return _padded_rectangle(pts, padding)
    vertices = support[hull.vertices]
    start = np.lexsort((vertices[:, 1], vertices[:, 0]))[0]
    return np.roll(vertices, -start, axis=0)


def polygon_contains(polygon: np.ndarray, point: np.ndarray, tol: float = 1e-9) -> bool:
    """CCW 凸多邊形是否包含點（邊界在 tol 內視為包含）"""
    poly = np.asarray(polygon, dtype=np.float64)
    p = np.asarray(point, dtype=np.float64)
    edges = np.roll(poly, -1, axis=0) - poly
    rel = p - poly
    cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
    return bool(np.all(cross >= -tol))


def ground_camera_pose(height: float, pitch_deg: float = 0.0) -> RigidTransform:
    """
    相機到地面座標系（x 前、y 左、z 上）的位姿

    相機位於地面上方 height 處，光軸水平後向下俯仰 pitch_deg。
    """
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    angle = np.deg2rad(-pitch_deg)
    pitch = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, np.cos(angle), -np.sin(angle)],
            [0.0, np.sin(angle), np.cos(angle)],
        ]
    )
    return RigidTransform(base @ pitch, np.array([0.0, 0.0, height]))


def build_from_points(
    cloud: PointCloud, params: Optional[ObstacleParams] = None, threads: Optional[int] = None
) -> ObstacleMap:
    """地面座標系點雲上的障礙物地圖流程"""
    params = params or ObstacleParams()
    stats = {"input_points": len(cloud)}
    down = voxel_downsample(cloud, params.voxel)
    stats["downsampled_points"] = len(down)
    filtered = radial_outlier_filter(down, params.radius, params.min_neighbors, threads)
    stats["filtered_points"] = len(filtered)
    flat = remove_ground_and_flatten(filtered, params.ground_height, params.max_height)
    stats["obstacle_points"] = int(flat.shape[0])

    labels = dbscan(flat, params.eps, params.min_pts, threads)
    polygons = []
    for cluster in range(int(labels.max()) + 1 if labels.size else 0):
        members = flat[labels == cluster]
        outline = cluster_to_polygon(members, params.alpha, params.padding)
        polygons.append(ObstaclePolygon(cluster, outline))
    stats["clusters"] = len(polygons)
    stats["noise_points"] = int(np.count_nonzero(labels == NOISE_LABEL))
    logger.info("障礙物地圖: %s", stats)
    return ObstacleMap(polygons, stats)


def build_obstacle_map(
    depth: DepthMap,
    K: CameraIntrinsics,
    pose: RigidTransform,
    params: Optional[ObstacleParams] = None,
    threads: Optional[int] = None,
) -> ObstacleMap:
    """
    從深度圖建立障礙物地圖

    Args:
        depth: 深度圖
        K: 相機內參
        pose: 相機到地面座標系（z 軸朝上）的位姿
        params: 流程參數
        threads: 鄰域搜尋與分群的執行緒數
    """
    cloud = depth_to_pointcloud(depth, K, pose)
    return build_from_points(cloud, params, threads)
