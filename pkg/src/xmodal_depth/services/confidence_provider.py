"""Confidence Provider 抽象基類

定義所有信心來源必須實作的統一介面。學習式的信心網路可以實作同一介面
接入蒸餾流程。
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional

from ..core.geometry import DepthMap
from ..core.imagery import MetadataStack
from ..core.losses import ConfidenceMap


@dataclass(eq=False)
class ConfidenceContext:
    """信心預測的輸入"""

    teacher: DepthMap
    ground_truth: Optional[DepthMap] = None
    beta: float = 0.1
    metadata: Optional[MetadataStack] = None


class ConfidenceProvider(ABC):
    """Confidence Provider 抽象基類"""

    def __init__(self, config: Dict[str, Any]):
        """初始化 Provider

        Args:
            config: 配置字典
        """
        self.config = config

    @abstractmethod
    def get_provider_name(self) -> str:
        """取得 Provider 名稱

        Returns:
            Provider 名稱（例如："oracle", "fitted"）
        """

    @abstractmethod
    def predict(self, context: ConfidenceContext) -> ConfidenceMap:
        """預測 RGB 網格上的逐像素信心

        Args:
            context: 預測輸入

        Returns:
            信心圖

        Raises:
            ConfigurationError: 缺少必要的輸入
        """

    def requires_ground_truth(self) -> bool:
        """是否需要真值深度"""
        return False

    def validate_config(self) -> bool:
        """驗證配置是否有效

        Returns:
            True 表示配置有效，False 表示無效
        """
        return True

    def describe(self) -> str:
        """一行說明"""
        return (self.__doc__ or self.get_provider_name()).strip().splitlines()[0]
