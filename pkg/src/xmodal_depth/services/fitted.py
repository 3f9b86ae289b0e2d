"""擬合信心：逐像素梯度下降最小化 Laplacian NLL"""

from typing import Any, Dict

from ..core.errors import ConfigurationError
from ..core.losses import ConfidenceMap
from ..core.synthscene import fit_confidence
from .confidence_provider import ConfidenceContext, ConfidenceProvider


class FittedConfidenceProvider(ConfidenceProvider):
    """以 logit 參數化的梯度下降擬合信心"""

    def __init__(self, config: Dict[str, Any]):
        super().__init__(config)
        self.steps = int(config.get("fit_steps", 500))
        self.step_size = float(config.get("fit_step_size", 1.0))
        self.keep_fraction = float(config.get("fit_keep_fraction", 1.0))

    def get_provider_name(self) -> str:
        return "fitted"

    def requires_ground_truth(self) -> bool:
        return True

    def validate_config(self) -> bool:
        return self.steps >= 1 and self.step_size > 0 and 0.0 < self.keep_fraction <= 1.0

    def predict(self, context: ConfidenceContext) -> ConfidenceMap:
        if context.ground_truth is None:
            raise ConfigurationError("fitted 信心需要真值深度")
        if not self.validate_config():
            raise ConfigurationError("fitted 信心配置無效")
        return fit_confidence(
            context.teacher,
            context.ground_truth,
            beta=context.beta,
            steps=self.steps,
            step_size=self.step_size,
            keep_fraction=self.keep_fraction,
        )
