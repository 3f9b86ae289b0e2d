"""Provider Manager：管理所有 Confidence Providers"""

import logging
from typing import Any, Dict, List, Optional

from ..core.errors import ConfigurationError
from .confidence_provider import ConfidenceProvider
from .fitted import FittedConfidenceProvider
from .metadata import MetadataConfidenceProvider, RgbOnlyConfidenceProvider
from .oracle import OracleConfidenceProvider
from .uniform import UniformConfidenceProvider

logger = logging.getLogger(__name__)


class ConfidenceProviderManager:
    """管理所有 Confidence Providers"""

    # 支援的 provider 類型
    PROVIDERS = {
        "oracle": OracleConfidenceProvider,
        "fitted": FittedConfidenceProvider,
        "uniform": UniformConfidenceProvider,
        "multimodal": MetadataConfidenceProvider,
        "rgb-only": RgbOnlyConfidenceProvider,
    }

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        """初始化 Provider Manager

        Args:
            config: 配置字典（例如 fit_steps）
        """
        self.config = dict(config or {})
        self._providers: Dict[str, ConfidenceProvider] = {}
        self._initialize_providers()

    def _initialize_providers(self):
        """初始化所有 providers"""
        for name, provider_class in self.PROVIDERS.items():
            try:
                self._providers[name] = provider_class(self.config)
            except (TypeError, ValueError) as exc:
                # 初始化失敗時記錄，但不中斷
                logger.warning("無法初始化 provider %s: %s", name, exc)

    def get_available_providers(self) -> List[str]:
        """取得所有配置有效的 provider 名稱"""
        return [name for name, p in self._providers.items() if p.validate_config()]

    def get_provider(self, name: str) -> ConfidenceProvider:
        """取得指定的 provider

        Raises:
            ConfigurationError: provider 不存在或初始化失敗
        """
        if name not in self._providers:
            known = ", ".join(sorted(self.PROVIDERS))
            raise ConfigurationError(f"未知的信心 provider: {name}（可用：{known}）")
        return self._providers[name]

    def get_provider_status(self, name: str) -> Dict[str, Any]:
        """取得特定 provider 的狀態

        Returns:
            狀態字典，包含 exists, config_valid, requires_ground_truth
        """
        if name not in self._providers:
            return {"exists": False, "config_valid": False, "requires_ground_truth": False}
        provider = self._providers[name]
        return {
            "exists": True,
            "config_valid": provider.validate_config(),
            "requires_ground_truth": provider.requires_ground_truth(),
            "description": provider.describe(),
        }

    def list_all_providers(self) -> Dict[str, Dict[str, Any]]:
        """列出所有 providers 及其狀態"""
        return {name: self.get_provider_status(name) for name in self.PROVIDERS}
