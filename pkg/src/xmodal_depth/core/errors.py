"""例外階層：每個例外帶有對應的 CLI 結束碼

結束碼約定：0 成功、1 檢查失敗、2 輸入/解析錯誤、3 數值或幾何定義域錯誤。
"""

from typing import Iterable, List


class XmodalError(Exception):
    """所有 xmodal 例外的基類"""

    exit_code = 3


class InputError(XmodalError):
    """檔案缺少、格式錯誤或無法解析"""

    exit_code = 2


class ConfigurationError(InputError):
    """配置鍵未知、數值無效或缺少必要輸入"""


class DomainError(XmodalError, ValueError):
    """幾何或數值定義域錯誤"""

    exit_code = 3


class BehindCameraError(DomainError):
    """點位於相機後方（Z ≤ 1e-6）"""


class EmptyMaskError(DomainError):
    """遮罩內沒有任何有效像素"""


class DivergenceError(DomainError):
    """最佳化過程出現非有限的 loss"""

    def __init__(self, message: str, trace: Iterable[float] = ()):
        super().__init__(message)
        self.trace: List[float] = [float(v) for v in trace]


class CheckFailure(XmodalError):
    """梯度檢查超出容許誤差"""

    exit_code = 1
