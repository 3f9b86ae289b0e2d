"""測試熱影像正規化、相似度與 metadata 組裝"""

import numpy as np
import pytest

from xmodal_depth.core.errors import DomainError
from xmodal_depth.core.geometry import CameraIntrinsics, DepthMap, PixelCoordGrid
from xmodal_depth.core.imagery import (
    METADATA_CHANNELS,
    FeatureMap,
    assemble_metadata,
    cosine_similarity_map,
    normalize_thermal,
    percentile,
)


def _identity_coords(height, width):
    x, y = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, width, height).pixel_grid()
    return PixelCoordGrid(x, y, np.ones((height, width), bool))


def test_normalize_thermal_range():
    """測試正規化結果位於 [0, 1] 且百分位數對應 0 與 1"""
    raw = np.arange(10000, dtype=np.uint16).reshape(100, 100)
    result = normalize_thermal(raw)
    assert not result.degenerate
    assert result.values.min() == 0.0
    assert result.values.max() == 1.0
    assert result.p2 == pytest.approx(percentile(raw, 0.02))
    assert result.p98 == pytest.approx(0.98 * 9999)


def test_normalize_thermal_constant_is_degenerate():
    """測試常數影像回傳全零並標記 degenerate"""
    result = normalize_thermal(np.full((8, 8), 3000))
    assert result.degenerate
    assert not result.values.any()


def test_normalize_thermal_rejects_out_of_range():
    """測試超出 16-bit 範圍的計數"""
    with pytest.raises(DomainError):
        normalize_thermal(np.array([[0.0, 70000.0]]))
    with pytest.raises(DomainError):
        normalize_thermal(np.array([[-1.0, 10.0]]))


def test_cosine_similarity_values():
    """測試相同、相反與正交向量"""
    a = np.array([[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]])
    b = np.array([[[2.0, 0.0], [-1.0, 0.0], [0.0, 3.0]]])
    sim = cosine_similarity_map(FeatureMap(a), FeatureMap(b))
    np.testing.assert_allclose(sim.values, [[1.0, -1.0, 0.0]])
    assert sim.valid.all()


def test_cosine_similarity_zero_norm():
    """測試零向量的相似度為 0 且仍有效"""
    a = np.zeros((1, 1, 3))
    b = np.ones((1, 1, 3))
    sim = cosine_similarity_map(FeatureMap(a), FeatureMap(b))
    assert sim.values[0, 0] == 0.0
    assert sim.valid[0, 0]


@pytest.mark.parametrize("gain,offset", [(2.5, 300.0), (0.5, 0.0), (1.0, 12345.0)])
def test_normalize_thermal_affine_invariant(gain, offset):
    """測試原始計數的正仿射變換不改變正規化結果"""
    raw = np.random.default_rng(4).uniform(1000.0, 20000.0, (32, 40))
    base = normalize_thermal(raw)
    scaled = normalize_thermal(gain * raw + offset)
    np.testing.assert_allclose(scaled.values, base.values, rtol=0, atol=1e-9)
    assert scaled.p2 == pytest.approx(gain * base.p2 + offset)


def test_cosine_similarity_scale_invariant():
    """測試逐像素正縮放不改變相似度，負縮放使其變號"""
    rng = np.random.default_rng(6)
    a = rng.normal(size=(5, 6, 4))
    b = rng.normal(size=(5, 6, 4))
    scale = rng.uniform(0.1, 10.0, (5, 6, 1))
    base = cosine_similarity_map(FeatureMap(a), FeatureMap(b)).values
    scaled = cosine_similarity_map(FeatureMap(a * scale), FeatureMap(b * 3.0)).values
    flipped = cosine_similarity_map(FeatureMap(-a), FeatureMap(b)).values
    np.testing.assert_allclose(scaled, base, atol=1e-12)
    np.testing.assert_allclose(flipped, -base, atol=1e-12)


def test_feature_map_validation():
    """測試特徵圖維度與非有限值"""
    with pytest.raises(DomainError):
        FeatureMap(np.ones((4, 4)))
    with pytest.raises(DomainError):
        FeatureMap(np.full((2, 2, 1), np.nan))


def test_assemble_metadata_identity():
    """測試單位對應下的 8 通道 metadata"""
    h, w = 5, 6
    rng = np.random.default_rng(0)
    features = FeatureMap(rng.normal(size=(h, w, 4)))
    D_r = DepthMap.from_array(np.full((h, w), 3.0))
    breve = np.full((h, w), 3.5)
    breve[0, 0] = 0.0
    D_tr = DepthMap.from_array(breve)
    image = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    coords = _identity_coords(h, w)

    stack = assemble_metadata(D_r, D_tr, features, features, coords, image, coords)
    assert stack.values.shape == (8, h, w)
    assert stack.channel_names == METADATA_CHANNELS
    np.testing.assert_allclose(stack.channel("S_r"), 1.0)
    np.testing.assert_allclose(stack.channel("S_tr"), 1.0)
    assert stack.channel("residual")[1, 1] == pytest.approx(0.5)
    assert stack.channel("residual")[0, 0] == 0.0
    assert not stack.valid[0, 0]
    assert stack.valid[1:, 1:].all()
    np.testing.assert_allclose(stack.channel("I_r_1"), image[..., 1] / 255.0)
    array = stack.as_array()
    array[0] = -1.0
    assert stack.values[0, 0, 0] != -1.0


def test_assemble_metadata_shape_mismatch():
    """測試輸入形狀不一致"""
    features = FeatureMap(np.ones((4, 4, 2)))
    D = DepthMap.from_array(np.ones((4, 5)))
    coords = _identity_coords(4, 4)
    with pytest.raises(DomainError):
        assemble_metadata(D, D, features, features, coords, np.zeros((4, 5, 3)), coords)
