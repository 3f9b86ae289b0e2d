"""由 metadata 擬合的信心：多線索與僅 RGB 線索兩種變體"""

import logging
from typing import Any, Dict, Optional, Sequence

from ..core.errors import ConfigurationError
from ..core.losses import ConfidenceMap
from ..core.metaconf import RGB_CHANNELS, MetadataConfidenceModel, fit_metadata_confidence
from .confidence_provider import ConfidenceContext, ConfidenceProvider

logger = logging.getLogger(__name__)


class MetadataConfidenceProvider(ConfidenceProvider):
    """以全部 8 個 metadata 通道擬合對數線性信心"""

    channels: Optional[Sequence[str]] = None

    def __init__(self, config: Dict[str, Any]):
        super().__init__(config)
        self.ridge = float(config.get("meta_ridge", 1e-3))
        self.max_iter = int(config.get("meta_max_iter", 500))
        self.last_model: Optional[MetadataConfidenceModel] = None

    def get_provider_name(self) -> str:
        return "multimodal"

    def requires_ground_truth(self) -> bool:
        return True

    def validate_config(self) -> bool:
        return self.ridge >= 0 and self.max_iter >= 1

    def predict(self, context: ConfidenceContext) -> ConfidenceMap:
        name = self.get_provider_name()
        if context.ground_truth is None:
            raise ConfigurationError(f"{name} 信心需要真值深度")
        if context.metadata is None:
            raise ConfigurationError(f"{name} 信心需要 metadata")
        if not self.validate_config():
            raise ConfigurationError(f"{name} 信心配置無效")
        self.last_model = fit_metadata_confidence(
            context.metadata,
            context.teacher,
            context.ground_truth,
            channels=self.channels,
            beta=context.beta,
            ridge=self.ridge,
            max_iter=self.max_iter,
        )
        logger.info("%s 信心擬合 loss %.6g", name, self.last_model.loss)
        return self.last_model.predict(context.metadata)


class RgbOnlyConfidenceProvider(MetadataConfidenceProvider):
    """只用 RGB 影像與教師深度通道擬合信心"""

    channels = RGB_CHANNELS

    def get_provider_name(self) -> str:
        return "rgb-only"
