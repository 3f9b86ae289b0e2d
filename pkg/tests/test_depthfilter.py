"""測試 LiDAR 深度過濾"""

import numpy as np
import pytest

from xmodal_depth.core.depthfilter import (
    StereoRig,
    filter_lidar,
    photometric_filter,
    stereo_deviation_filter,
)
from xmodal_depth.core.errors import DomainError
from xmodal_depth.core.geometry import CameraIntrinsics, DepthMap, RigidTransform


@pytest.fixture
def rig():
    """左右相同、無位移的雙目相機組"""
    K = CameraIntrinsics(10.0, 10.0, 3.5, 2.5, 8, 6)
    return StereoRig(K, K, RigidTransform.identity())


@pytest.fixture
def lidar():
    """稀疏 LiDAR 深度"""
    values = np.full((6, 8), 5.0)
    valid = np.zeros((6, 8), bool)
    valid[::2, ::2] = True
    return DepthMap(values, valid)


def test_infinite_tau_keeps_everything(rig, lidar):
    """測試門檻為無限大時保留所有有效深度"""
    rng = np.random.default_rng(0)
    left = rng.uniform(size=(6, 8))
    right = rng.uniform(size=(6, 8))
    filtered = photometric_filter(lidar, left, right, rig, tau_photo=np.inf)
    np.testing.assert_array_equal(filtered.valid, lidar.valid)


def test_photometric_removes_inconsistent(rig, lidar):
    """測試強度不一致的像素被移除"""
    left = np.full((6, 8), 0.5)
    right = left.copy()
    right[2, 4] = 0.9
    filtered = photometric_filter(lidar, left, right, rig, tau_photo=0.2)
    assert not filtered.valid[2, 4]
    assert filtered.valid.sum() == lidar.valid.sum() - 1


def test_photometric_out_of_view_removed(lidar):
    """測試投影離開右影像的像素被移除"""
    K = CameraIntrinsics(10.0, 10.0, 3.5, 2.5, 8, 6)
    shifted = StereoRig(K, K, RigidTransform(np.eye(3), np.array([2.0, 0.0, 0.0])))
    image = np.full((6, 8), 0.5)
    filtered = photometric_filter(lidar, image, image, shifted, tau_photo=1.0)
    # 在 5 公尺處平移 2 公尺 = 4 像素
    assert filtered.valid[:, :4].sum() == lidar.valid[:, :4].sum()
    assert not filtered.valid[:, 4:].any()


def test_stereo_deviation(lidar):
    """測試立體深度偏差過濾，立體深度無效處保留"""
    stereo_values = np.full((6, 8), 5.2)
    stereo_values[0, 0] = 7.0
    stereo_valid = np.ones((6, 8), bool)
    stereo_valid[2, 2] = False
    stereo_values[2, 2] = 9.0
    filtered = stereo_deviation_filter(lidar, DepthMap(stereo_values, stereo_valid), tau_rel=0.1)
    assert not filtered.valid[0, 0]
    assert filtered.valid[2, 2]
    assert filtered.valid.sum() == lidar.valid.sum() - 1


def test_filter_lidar_summary(rig, lidar):
    """測試過濾摘要的計數"""
    left = np.full((6, 8), 0.5)
    right = left.copy()
    right[0, 2] = 1.0
    stereo = DepthMap.from_array(np.full((6, 8), 5.0))
    stereo.values[4, 4] = 3.0
    filtered, summary = filter_lidar(lidar, left, right, rig, stereo, 0.2, 0.1)
    assert summary == {"removed_photometric": 1, "removed_stereo": 1, "kept": 10}
    assert filtered.valid.sum() == 10


def test_shape_mismatch(rig, lidar):
    """測試影像尺寸與深度不符"""
    with pytest.raises(DomainError):
        photometric_filter(lidar, np.zeros((3, 3)), np.zeros((6, 8)), rig)


@pytest.mark.parametrize("seed", range(5))
def test_filter_order_does_not_matter(seed):
    """測試先做立體偏差再做光度過濾得到相同的保留集合"""
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics(10.0, 10.0, 3.5, 2.5, 8, 6)
    rig = StereoRig(K, K, RigidTransform(np.eye(3), np.array([-0.3, 0.0, 0.0])))
    lidar = DepthMap(rng.uniform(3.0, 8.0, (6, 8)), rng.uniform(size=(6, 8)) > 0.3)
    left = rng.uniform(size=(6, 8))
    right = rng.uniform(size=(6, 8))
    stereo = DepthMap(rng.uniform(3.0, 8.0, (6, 8)), rng.uniform(size=(6, 8)) > 0.2)

    combined, _ = filter_lidar(lidar, left, right, rig, stereo, tau_photo=0.3, tau_rel=0.2)
    stereo_first = stereo_deviation_filter(lidar, stereo, tau_rel=0.2)
    reordered = photometric_filter(stereo_first, left, right, rig, tau_photo=0.3)
    np.testing.assert_array_equal(combined.valid, reordered.valid)
    np.testing.assert_array_equal(combined.values, lidar.values)
