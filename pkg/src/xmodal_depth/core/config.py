"""分層配置：模型預設值 ← JSON 配置檔區段 ← 命令列參數

配置檔為 JSON 物件，每個子命令一個平坦區段，例如
{"distill-demo": {...}, "eval": {...}}。未知的區段或鍵一律拒絕。
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, InputError
from .geometry import CameraIntrinsics, RigidTransform


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CameraConfig(_Section):
    """相機內參"""

    fx: float = Field(60.0, gt=0)
    fy: float = Field(60.0, gt=0)
    cx: float = 31.5
    cy: float = 23.5
    width: int = Field(64, ge=1)
    height: int = Field(48, ge=1)

    def to_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


def transform_from_rotvec(rotation_vector: List[float], translation: List[float]) -> RigidTransform:
    """由旋轉向量（弧度）與平移建立剛體變換；零旋轉得到精確單位矩陣"""
    rotvec = np.asarray(rotation_vector, dtype=np.float64)
    if np.all(rotvec == 0):
        rotation = np.eye(3)
    else:
        rotation = Rotation.from_rotvec(rotvec).as_matrix()
    return RigidTransform(rotation, np.asarray(translation, dtype=np.float64))


class RigConfig(_Section):
    """RGB–熱像相機組；rotation_vector/translation 描述 RGB → 熱像

    熱像預設解析度低於 RGB（與實際感測器相同），每個熱像像素有多個 RGB 取樣。
    """

    rgb: CameraConfig = Field(default_factory=CameraConfig)
    thermal: CameraConfig = Field(
        default_factory=lambda: CameraConfig(
            fx=45.0, fy=45.0, cx=23.5, cy=17.5, width=48, height=36
        )
    )
    rotation_vector: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    translation: List[float] = Field(default_factory=lambda: [-0.2, 0.0, 0.0])

    @model_validator(mode="after")
    def _check_vectors(self) -> "RigConfig":
        if len(self.rotation_vector) != 3 or len(self.translation) != 3:
            raise ValueError("rotation_vector 與 translation 必須為 3 維")
        return self

    def thermal_from_rgb(self) -> RigidTransform:
        return transform_from_rotvec(self.rotation_vector, self.translation)


class RegionConfig(_Section):
    """半開矩形 [row0, row1) × [col0, col1)"""

    row0: int
    row1: int
    col0: int
    col1: int


class CorruptionConfig(_Section):
    """教師深度污染"""

    regions: List[RegionConfig] = Field(
        default_factory=lambda: [RegionConfig(row0=12, row1=36, col0=16, col1=48)]
    )
    bias: float = 2.0
    region_noise: float = Field(0.1, ge=0)
    base_noise: float = Field(0.02, ge=0)


class SceneConfig(_Section):
    """示範場景：正對的牆面加上地面（floor_height 為 None 時不加地面）"""

    wall_depth: float = Field(8.0, gt=0)
    floor_height: Optional[float] = 1.5


class DistillConfig(_Section):
    """信心感知蒸餾示範"""

    rig: RigConfig = Field(default_factory=RigConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    confidence_mode: Literal["oracle", "fitted", "uniform", "multimodal", "rgb-only"] = "oracle"
    beta: float = Field(0.1, gt=0)
    steps: int = Field(1000, ge=1)
    step_size: float = Field(30.0, gt=0)
    init_bias: float = 0.4
    keep_fraction: float = Field(0.8, gt=0, le=1)
    sim_keep: float = Field(0.8, gt=0, le=1)
    normalize_by: Literal["kept", "valid"] = "kept"
    fit_steps: int = Field(500, ge=1)
    meta_ridge: float = Field(1e-3, ge=0)
    feature_noise: float = Field(0.2, ge=0)
    ablation: bool = False
    seed: int = 0
    dump: bool = False

    @model_validator(mode="after")
    def _check_regions(self) -> "DistillConfig":
        height, width = self.rig.rgb.height, self.rig.rgb.width
        for r in self.corruption.regions:
            if not (0 <= r.row0 <= r.row1 <= height and 0 <= r.col0 <= r.col1 <= width):
                raise ValueError(f"污染區域超出影像範圍: {r.model_dump()}")
        return self


class WarpConfig(_Section):
    calib: Optional[str] = None
    depth: Optional[str] = None
    rgb_depth: Optional[str] = None
    direction: Literal["rgb-to-thermal", "thermal-to-rgb"] = "rgb-to-thermal"


class EvalConfig(_Section):
    pred: Optional[str] = None
    gt: Optional[str] = None
    split: str = "test"
    method: str = "model"
    bin_width: float = Field(5.0, gt=0)
    max_depth: float = Field(80.0, gt=0)


class GradcheckConfig(_Section):
    seed: int = 0
    tolerance: float = Field(1e-4, gt=0)
    abs_floor: float = Field(1e-6, gt=0)
    instances: int = Field(20, ge=1)
    size: int = Field(16, ge=4)
    inject_sign_error: bool = False


class FilterLidarConfig(_Section):
    lidar: Optional[str] = None
    left: Optional[str] = None
    right: Optional[str] = None
    rig: Optional[str] = None
    stereo: Optional[str] = None
    tau_photo: float = Field(0.2, ge=0)
    tau_rel: float = Field(0.1, ge=0)


class ObstacleMapConfig(_Section):
    depth: Optional[str] = None
    calib: Optional[str] = None
    camera: Literal["rgb", "thermal"] = "rgb"
    xyz: Optional[str] = None
    camera_height: float = 1.0
    pitch_deg: float = 0.0
    voxel: float = Field(0.1, gt=0)
    radius: float = Field(0.5, gt=0)
    min_neighbors: int = Field(2, ge=0)
    ground_height: float = 0.15
    max_height: float = 2.0
    eps: float = Field(0.5, gt=0)
    min_pts: int = Field(5, ge=1)
    alpha: float = Field(0.0, ge=0)
    padding: float = Field(0.05, ge=0)

    @model_validator(mode="after")
    def _check_heights(self) -> "ObstacleMapConfig":
        if self.max_height <= self.ground_height:
            raise ValueError("max_height 必須大於 ground_height")
        return self


class SynthConfig(_Section):
    seed: int = 0
    baseline: float = 0.2
    camera: CameraConfig = Field(default_factory=CameraConfig)


class NormalizeThermalConfig(_Section):
    input: Optional[str] = None


SECTIONS: Dict[str, Type[_Section]] = {
    "warp": WarpConfig,
    "eval": EvalConfig,
    "gradcheck": GradcheckConfig,
    "distill-demo": DistillConfig,
    "filter-lidar": FilterLidarConfig,
    "obstacle-map": ObstacleMapConfig,
    "synth": SynthConfig,
    "normalize-thermal": NormalizeThermalConfig,
}


class RunConfig(_Section):
    """一次執行的完整解析後配置"""

    subcommand: str
    output_dir: str
    params: Dict[str, Any]


def _format_validation_error(section: str, exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ()))
        parts.append(f"{loc or '<root>'}: {err.get('msg')}")
    return f"[{section}] 配置無效: " + "; ".join(parts)


class ConfigManager:
    """配置管理器：合併預設值、配置檔與命令列覆寫"""

    def __init__(self, config_path: Optional[Path] = None):
        """
        初始化配置管理器

        Args:
            config_path: JSON 配置檔路徑（None 表示只用預設值）
        """
        self.config_path = Path(config_path) if config_path else None
        self._sections: Dict[str, Dict[str, Any]] = {}
        if self.config_path is not None:
            self._sections = self._load_config(self.config_path)

    def list_sections(self) -> List[str]:
        """配置檔中出現的區段"""
        return sorted(self._sections)

    def get_section(self, name: str) -> Dict[str, Any]:
        """取得配置檔中的原始區段（不存在時為空字典）"""
        return dict(self._sections.get(name, {}))

    def resolve(self, name: str, overrides: Optional[Dict[str, Any]] = None) -> _Section:
        """
        解析子命令配置

        Args:
            name: 子命令名稱
            overrides: 命令列覆寫（值為 None 的鍵忽略）

        Returns:
            驗證後的區段模型

        Raises:
            ConfigurationError: 區段未知或鍵/值無效
        """
        if name not in SECTIONS:
            raise ConfigurationError(f"未知的子命令區段: {name}")
        merged = self.get_section(name)
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return SECTIONS[name].model_validate(merged)
        except ValidationError as exc:
            raise ConfigurationError(_format_validation_error(name, exc)) from exc

    @staticmethod
    def _load_config(path: Path) -> Dict[str, Dict[str, Any]]:
        """載入並檢查配置檔結構"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as exc:
            raise InputError(f"找不到配置檔: {path}") from exc
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise InputError(f"配置檔不是有效的 JSON: {path} ({exc})") from exc

        if not isinstance(data, dict):
            raise ConfigurationError(f"配置檔頂層必須為物件: {path}")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigurationError(f"配置檔含有未知區段: {', '.join(unknown)}")
        for name, section in data.items():
            if not isinstance(section, dict):
                raise ConfigurationError(f"區段 {name} 必須為物件")
        return data
