"""Oracle 信心：Laplacian NLL 的逐像素封閉解"""

import logging

import numpy as np

from ..core.errors import ConfigurationError
from ..core.losses import ConfidenceMap
from ..core.synthscene import oracle_confidence
from .confidence_provider import ConfidenceContext, ConfidenceProvider

logger = logging.getLogger(__name__)


class OracleConfidenceProvider(ConfidenceProvider):
    """以真值殘差計算 W = clamp(β / |r|)"""

    def get_provider_name(self) -> str:
        return "oracle"

    def requires_ground_truth(self) -> bool:
        return True

    def predict(self, context: ConfidenceContext) -> ConfidenceMap:
        if context.ground_truth is None:
            raise ConfigurationError("oracle 信心需要真值深度")
        teacher, gt = context.teacher, context.ground_truth
        joint = teacher.valid & gt.valid
        residual = np.where(joint, np.abs(teacher.values - gt.values), 0.0)
        conf = oracle_confidence(residual, context.beta)
        logger.debug("oracle 信心: %d 個有效像素", int(np.count_nonzero(joint)))
        return ConfidenceMap(conf.values, joint)
