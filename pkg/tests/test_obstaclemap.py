"""測試障礙物地圖流程"""

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from xmodal_depth.core.errors import DomainError
from xmodal_depth.core.geometry import CameraIntrinsics, DepthMap
from xmodal_depth.core.obstaclemap import (
    NOISE_LABEL,
    ObstacleParams,
    PointCloud,
    build_from_points,
    build_obstacle_map,
    cluster_to_polygon,
    dbscan,
    depth_to_pointcloud,
    ground_camera_pose,
    polygon_contains,
    radial_outlier_filter,
    remove_ground_and_flatten,
    voxel_downsample,
)


def _box(x0, y0, nx=4, ny=4, heights=(0.35, 0.55, 0.75, 0.95)):
    offsets = np.arange(0.05, 0.1 * max(nx, ny), 0.1)
    return np.array(
        [(x0 + dx, y0 + dy, z) for dx in offsets[:nx] for dy in offsets[:ny] for z in heights]
    )


@pytest.fixture
def two_obstacles():
    """兩個障礙物加上地面點"""
    ground = np.array([(x, y, 0.05) for x in np.arange(0.05, 7.0, 0.3) for y in (-0.55, 0.85)])
    return PointCloud(np.vstack([_box(2.0, 0.0), _box(5.0, -1.0), ground]))


def test_depth_to_pointcloud_row_major():
    """測試反投影點的順序與座標"""
    K = CameraIntrinsics(2.0, 2.0, 1.0, 0.5, 3, 2)
    values = np.array([[2.0, 0.0, 4.0], [1.0, 1.0, 1.0]])
    cloud = depth_to_pointcloud(DepthMap.from_array(values), K)
    assert len(cloud) == 5
    np.testing.assert_array_equal(cloud.pixels[:2], [[0, 0], [0, 2]])
    np.testing.assert_allclose(cloud.points[0], [-1.0, -0.5, 2.0])
    np.testing.assert_allclose(cloud.points[1], [2.0, -1.0, 4.0])


def test_voxel_downsample_centroids():
    """測試同一體素內的點以質心取代"""
    cloud = PointCloud([[0.01, 0.01, 0.01], [0.03, 0.05, 0.07], [0.55, 0.05, 0.05]])
    down = voxel_downsample(cloud, 0.1)
    assert len(down) == 2
    np.testing.assert_allclose(down.points[0], [0.02, 0.03, 0.04])
    np.testing.assert_allclose(down.points[1], [0.55, 0.05, 0.05])
    with pytest.raises(DomainError):
        voxel_downsample(cloud, 0.0)


def test_voxel_downsample_matches_hash_oracle():
    """測試體素數與質心等於逐點雜湊分組的結果"""
    points = np.random.default_rng(8).uniform(-1.0, 1.0, (1000, 3))
    groups = {}
    for p in points:
        groups.setdefault(tuple(int(k) for k in np.floor(p / 0.1)), []).append(p)
    down = voxel_downsample(PointCloud(points), 0.1)
    assert len(down) == len(groups)
    expected = np.array([np.mean(groups[key], axis=0) for key in sorted(groups)])
    np.testing.assert_allclose(down.points, expected, rtol=0, atol=1e-12)


def test_voxel_downsample_keeps_first_pixel():
    """測試每個體素保留索引最小的點的來源像素"""
    cloud = PointCloud(
        [[0.05, 0.0, 0.0], [0.5, 0.0, 0.0], [0.02, 0.0, 0.0]],
        np.array([[3, 4], [5, 6], [7, 8]]),
    )
    down = voxel_downsample(cloud, 0.1)
    np.testing.assert_array_equal(down.pixels, [[3, 4], [5, 6]])
    empty = voxel_downsample(PointCloud(np.zeros((0, 3)), np.zeros((0, 2))), 0.1)
    assert empty.pixels.shape == (0, 2)


def test_radial_outlier_filter():
    """測試孤立點被移除"""
    cluster = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0]])
    points = np.vstack([cluster, [[5.0, 5.0, 5.0]]])
    filtered = radial_outlier_filter(PointCloud(points), radius=0.5, min_neighbors=2, threads=1)
    assert len(filtered) == 3
    assert not np.any(np.all(filtered.points == 5.0, axis=1))


def test_remove_ground_and_flatten():
    """測試高度範圍 (ground, max] 與壓平"""
    cloud = PointCloud(
        [[1.0, 2.0, 0.1], [1.0, 2.0, 0.15], [3.0, 4.0, 1.0], [5.0, 6.0, 2.0], [7.0, 8.0, 2.5]]
    )
    flat = remove_ground_and_flatten(cloud, 0.15, 2.0)
    np.testing.assert_array_equal(flat, [[3.0, 4.0], [5.0, 6.0]])
    with pytest.raises(DomainError):
        remove_ground_and_flatten(cloud, 1.0, 1.0)


def test_dbscan_two_blobs_and_noise():
    """測試兩群與雜訊"""
    rng = np.random.default_rng(0)
    a = rng.normal([0.0, 0.0], 0.1, (20, 2))
    b = rng.normal([5.0, 5.0], 0.1, (20, 2))
    noise = np.array([[10.0, -10.0]])
    labels = dbscan(np.vstack([a, b, noise]), eps=0.5, min_pts=5)
    assert set(labels[:20]) == {0}
    assert set(labels[20:40]) == {1}
    assert labels[40] == NOISE_LABEL


def _brute_dbscan(points, eps, min_pts):
    """O(n²) 參考實作：依索引順序從核心點擴展"""
    adjacency = cdist(points, points) <= eps
    core = adjacency.sum(axis=1) >= min_pts
    labels = np.full(len(points), NOISE_LABEL)
    cluster = 0
    for seed in range(len(points)):
        if not core[seed] or labels[seed] != NOISE_LABEL:
            continue
        labels[seed] = cluster
        frontier = [seed]
        while frontier:
            current = frontier.pop()
            if not core[current]:
                continue
            for nb in np.flatnonzero(adjacency[current]):
                if labels[nb] == NOISE_LABEL:
                    labels[nb] = cluster
                    frontier.append(nb)
        cluster += 1
    return labels


@pytest.mark.parametrize("seed", range(50))
def test_dbscan_matches_brute_force(seed):
    """測試與暴力參考實作的標記完全一致"""
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(10, 201))
    points = rng.uniform(0.0, 4.0, (n, 2))
    eps = float(rng.uniform(0.2, 0.6))
    min_pts = int(rng.integers(2, 7))
    np.testing.assert_array_equal(
        dbscan(points, eps, min_pts, threads=1), _brute_dbscan(points, eps, min_pts)
    )


def test_dbscan_cluster_properties():
    """測試核心點連通性、邊界點與雜訊的定義"""
    rng = np.random.default_rng(5)
    points = rng.uniform(0.0, 4.0, (120, 2))
    eps, min_pts = 0.4, 4
    labels = dbscan(points, eps, min_pts)

    adjacency = cdist(points, points) <= eps
    core = adjacency.sum(axis=1) >= min_pts
    core_graph = adjacency & core[:, None] & core[None, :]
    _, component = connected_components(core_graph, directed=False)

    core_idx = np.flatnonzero(core)
    for i in core_idx:
        for j in core_idx:
            assert (labels[i] == labels[j]) == (component[i] == component[j])
    for i in np.flatnonzero(~core):
        core_neighbors = np.flatnonzero(adjacency[i] & core)
        if core_neighbors.size == 0:
            assert labels[i] == NOISE_LABEL
        else:
            assert labels[i] in set(labels[core_neighbors])

    # 群集依最小索引核心點的順序編號
    firsts = [np.flatnonzero((labels == c) & core).min() for c in range(labels.max() + 1)]
    assert firsts == sorted(firsts)


def test_dbscan_empty():
    """測試空點集"""
    assert dbscan(np.zeros((0, 2)), 0.5, 3).shape == (0,)


def test_cluster_to_polygon_square():
    """測試正方形群集的凸包，內部點不是頂點"""
    points = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    for alpha in (0.0, 0.5):
        poly = cluster_to_polygon(points, alpha=alpha)
        assert poly.shape == (4, 2)
        np.testing.assert_array_equal(poly[0], [0.0, 0.0])
        assert not any(np.array_equal(v, [0.5, 0.5]) for v in poly)
        x, y = poly[:, 0], poly[:, 1]
        signed_area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert signed_area == pytest.approx(1.0)


def test_cluster_to_polygon_contains_members():
    """測試凸包包含所有群集點"""
    points = np.random.default_rng(2).normal(size=(40, 2))
    poly = cluster_to_polygon(points)
    assert all(polygon_contains(poly, p) for p in points)
    assert not polygon_contains(poly, np.array([100.0, 0.0]))


def test_alpha_polygon_keeps_isolated_point():
    """測試 alpha > 0 時遠離其他點的成員仍在多邊形內"""
    rng = np.random.default_rng(0)
    points = np.vstack([rng.uniform(0.0, 1.0, (40, 2)), [[3.0, 0.5]]])
    poly = cluster_to_polygon(points, alpha=2.0)
    assert polygon_contains(poly, np.array([3.0, 0.5]))
    assert all(polygon_contains(poly, p) for p in points)


@pytest.mark.parametrize("alpha", [0.5, 2.0, 8.0])
@pytest.mark.parametrize("seed", range(5))
def test_alpha_polygon_contains_members(alpha, seed):
    """測試任意 alpha 下所有群集點都在 CCW 多邊形內或邊上"""
    rng = np.random.default_rng(seed)
    points = np.vstack(
        [rng.normal(0.0, 0.3, (30, 2)), rng.normal(2.0, 0.3, (30, 2)), rng.uniform(-3, 5, (5, 2))]
    )
    poly = cluster_to_polygon(points, alpha=alpha)
    assert all(polygon_contains(poly, p) for p in points)
    x, y = poly[:, 0], poly[:, 1]
    assert np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) > 0


def test_cluster_to_polygon_degenerate():
    """測試共線或單點群集輸出外擴矩形"""
    line = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    rect = cluster_to_polygon(line, padding=0.1)
    np.testing.assert_allclose(rect, [[-0.1, -0.1], [2.1, -0.1], [2.1, 2.1], [-0.1, 2.1]])
    single = cluster_to_polygon(np.array([[3.0, 4.0]]), padding=0.05)
    assert single.shape == (4, 2)
    assert polygon_contains(single, np.array([3.0, 4.0]))
    with pytest.raises(DomainError):
        cluster_to_polygon(np.zeros((0, 2)))


def test_ground_camera_pose():
    """測試光軸水平指向 x、俯仰時朝下"""
    pose = ground_camera_pose(1.2)
    np.testing.assert_allclose(pose.apply(np.array([0.0, 0.0, 2.0])), [2.0, 0.0, 1.2], atol=1e-12)
    np.testing.assert_allclose(pose.apply(np.array([0.0, 1.0, 0.0])), [0.0, 0.0, 0.2], atol=1e-12)
    pitched = ground_camera_pose(1.2, pitch_deg=30.0)
    forward = pitched.rotation @ np.array([0.0, 0.0, 1.0])
    assert forward[0] == pytest.approx(np.cos(np.deg2rad(30.0)))
    assert forward[2] == pytest.approx(-np.sin(np.deg2rad(30.0)))


def test_build_from_points_two_obstacles(two_obstacles):
    """測試兩個障礙物得到兩個多邊形"""
    result = build_from_points(two_obstacles, ObstacleParams(), threads=1)
    assert result.stats["clusters"] == 2
    assert result.stats["input_points"] == len(two_obstacles)
    assert result.stats["noise_points"] == 0
    assert polygon_contains(result.polygons[0].vertices, np.array([2.2, 0.2]))
    assert polygon_contains(result.polygons[1].vertices, np.array([5.2, -0.8]))
    assert not polygon_contains(result.polygons[0].vertices, np.array([5.2, -0.8]))
    listing = result.to_json_list()
    assert [p["cluster"] for p in listing] == [0, 1]


def test_build_obstacle_map_wall():
    """測試正前方牆面得到單一（外擴矩形）障礙物"""
    K = CameraIntrinsics(10.0, 10.0, 7.5, 5.5, 16, 12)
    depth = DepthMap.from_array(np.full(K.shape, 3.0))
    result = build_obstacle_map(depth, K, ground_camera_pose(1.0), threads=1)
    assert result.stats["clusters"] == 1
    xs = result.polygons[0].vertices[:, 0]
    assert xs.min() == pytest.approx(2.95)
    assert xs.max() == pytest.approx(3.05)
