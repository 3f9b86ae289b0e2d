"""RunSession：管理單次執行的輸出目錄"""

import logging
from pathlib import Path
from typing import Any, Dict, List

from pydantic import BaseModel

from .config import RunConfig
from .errors import InputError
from ..services.report import write_json

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "resolved_config.json"


class RunSession:
    """單次子命令執行：建立輸出目錄、記錄解析後配置與輸出檔案"""

    def __init__(self, output_dir: Path, subcommand: str):
        """
        初始化執行 session

        Args:
            output_dir: 輸出目錄（不存在時建立）
            subcommand: 子命令名稱

        Raises:
            InputError: 無法建立輸出目錄
        """
        self.output_dir = Path(output_dir)
        self.subcommand = subcommand
        self.outputs: List[str] = []
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"無法建立輸出目錄 {self.output_dir}: {exc}") from exc

    def path(self, name: str) -> Path:
        """輸出目錄下的檔案路徑，並記錄為本次輸出"""
        if name not in self.outputs:
            self.outputs.append(name)
        return self.output_dir / name

    def write_resolved(self, section: BaseModel) -> Path:
        """寫入 resolved_config.json（鍵排序、不含時間戳）"""
        run = RunConfig(
            subcommand=self.subcommand,
            output_dir=str(self.output_dir),
            params=section.model_dump(mode="json"),
        )
        target = self.path(RESOLVED_CONFIG_NAME)
        write_json(target, run.model_dump(mode="json"))
        logger.debug("已寫入解析後配置: %s", target)
        return target

    def to_dict(self) -> Dict[str, Any]:
        """轉換為字典"""
        return {
            "subcommand": self.subcommand,
            "output_dir": str(self.output_dir),
            "outputs": sorted(self.outputs),
        }
