"""均勻信心 W ≡ 1（不使用信心的消融）"""

import numpy as np

from ..core.losses import ConfidenceMap
from .confidence_provider import ConfidenceContext, ConfidenceProvider


class UniformConfidenceProvider(ConfidenceProvider):
    """所有像素權重為 1"""

    def get_provider_name(self) -> str:
        return "uniform"

    def predict(self, context: ConfidenceContext) -> ConfidenceMap:
        return ConfidenceMap(np.ones(context.teacher.shape))
