"""測試由 metadata 擬合的對數線性信心"""

import numpy as np
import pytest

from xmodal_depth.core.errors import ConfigurationError, EmptyMaskError
from xmodal_depth.core.geometry import DepthMap
from xmodal_depth.core.imagery import METADATA_CHANNELS, MetadataStack
from xmodal_depth.core.losses import CONF_MAX, CONF_MIN
from xmodal_depth.core.metaconf import RGB_CHANNELS, fit_metadata_confidence


def _random_stack(seed, shape=(10, 12)):
    rng = np.random.default_rng(seed)
    gt = DepthMap.from_array(rng.uniform(3.0, 9.0, shape))
    error = np.abs(rng.normal(0.0, 0.5, shape)) + 0.01
    teacher = DepthMap.from_array(gt.values + error)
    values = rng.uniform(0.0, 1.0, (len(METADATA_CHANNELS),) + shape)
    values[METADATA_CHANNELS.index("residual")] = error * rng.uniform(0.5, 1.5, shape)
    values[METADATA_CHANNELS.index("D_r")] = teacher.values
    values[METADATA_CHANNELS.index("D_tr")] = gt.values
    return MetadataStack(values, np.ones(values.shape, dtype=bool)), teacher, gt


@pytest.mark.parametrize("seed", range(5))
def test_more_channels_never_fit_worse(seed):
    """測試全通道的擬合 loss 不高於僅 RGB 通道"""
    stack, teacher, gt = _random_stack(seed)
    full = fit_metadata_confidence(stack, teacher, gt)
    rgb = fit_metadata_confidence(stack, teacher, gt, channels=RGB_CHANNELS)
    assert full.channels == METADATA_CHANNELS
    assert rgb.channels == RGB_CHANNELS
    assert full.loss <= rgb.loss + 1e-8


def test_predict_is_clamped_and_masked():
    """測試預測值位於夾限範圍，無效像素為 1 且標為無效"""
    stack, teacher, gt = _random_stack(0)
    model = fit_metadata_confidence(stack, teacher, gt)
    stack.channel_valid[METADATA_CHANNELS.index("S_tr"), 0, :3] = False
    conf = model.predict(stack)
    assert not conf.valid[0, :3].any()
    assert np.all(conf.values[0, :3] == 1.0)
    assert conf.values[conf.valid].min() >= CONF_MIN
    assert conf.values[conf.valid].max() <= CONF_MAX


def test_rgb_model_ignores_invalid_geometry_channels():
    """測試僅 RGB 的模型不受熱像通道有效性影響"""
    stack, teacher, gt = _random_stack(1)
    model = fit_metadata_confidence(stack, teacher, gt, channels=RGB_CHANNELS)
    stack.channel_valid[METADATA_CHANNELS.index("S_r")] = False
    assert model.predict(stack).valid.all()


def test_fit_is_deterministic():
    """測試相同輸入得到相同權重"""
    stack, teacher, gt = _random_stack(2)
    a = fit_metadata_confidence(stack, teacher, gt)
    b = fit_metadata_confidence(stack, teacher, gt)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_intercept_only_matches_mean_residual():
    """測試通道全為常數時信心為 β / mean|r|"""
    shape = (4, 5)
    gt = DepthMap.from_array(np.full(shape, 5.0))
    teacher = DepthMap.from_array(gt.values + np.linspace(0.2, 1.0, 20).reshape(shape))
    stack = MetadataStack(
        np.ones((len(METADATA_CHANNELS),) + shape), np.ones((8,) + shape, dtype=bool)
    )
    conf = fit_metadata_confidence(stack, teacher, gt, beta=0.1).predict(stack)
    np.testing.assert_allclose(conf.values, 0.1 / 0.6, rtol=1e-6)


def test_rejects_unknown_channel_and_bad_parameters():
    """測試未知通道與無效參數"""
    stack, teacher, gt = _random_stack(0)
    with pytest.raises(ConfigurationError, match="thermal"):
        fit_metadata_confidence(stack, teacher, gt, channels=["thermal"])
    with pytest.raises(ConfigurationError):
        fit_metadata_confidence(stack, teacher, gt, beta=0.0)
    with pytest.raises(ConfigurationError):
        fit_metadata_confidence(stack, teacher, gt, channels=[])


def test_empty_mask():
    """測試沒有可擬合像素"""
    stack, teacher, gt = _random_stack(0)
    stack.channel_valid[:] = False
    with pytest.raises(EmptyMaskError):
        fit_metadata_confidence(stack, teacher, gt)
