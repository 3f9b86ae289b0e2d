"""檔案格式：PFM 深度、PGM/PPM 影像、特徵圖、相機標定與點雲文字檔"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from ..core.depthfilter import StereoRig
from ..core.errors import DomainError, InputError
from ..core.geometry import CameraIntrinsics, DepthMap, RigidTransform
from ..core.imagery import FeatureMap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FEATURE_MAGIC = b"XFM1"
FEATURE_HEADER = struct.Struct("<4sIII")
WHITESPACE = b" \t\r\n"


def _read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except FileNotFoundError as exc:
        raise InputError(f"找不到檔案: {path}") from exc
    except OSError as exc:
        raise InputError(f"無法讀取檔案 {path}: {exc}") from exc


def _header_tokens(data: bytes, count: int, path: PathLike) -> Tuple[List[bytes], int]:
    """
    讀取 Netpbm 風格標頭的前 count 個 token（略過 # 註解）

    Returns:
        (tokens, 資料起始位移)；最後一個 token 之後恰好一個空白字元
    """
    tokens: List[bytes] = []
    pos = 0
    size = len(data)
    while len(tokens) < count:
        while pos < size and data[pos] in WHITESPACE:
            pos += 1
        if pos < size and data[pos : pos + 1] == b"#":
            while pos < size and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < size and data[pos] not in WHITESPACE:
            pos += 1
        if start == pos:
            raise InputError(f"標頭不完整: {path}")
        tokens.append(data[start:pos])
    if pos >= size:
        raise InputError(f"缺少影像資料: {path}")
    return tokens, pos + 1


def _parse_int(token: bytes, what: str, path: PathLike) -> int:
    try:
        value = int(token)
    except ValueError as exc:
        raise InputError(f"{path}: {what} 不是整數 ({token!r})") from exc
    if value <= 0:
        raise InputError(f"{path}: {what} 必須為正值")
    return value


# PFM


def read_pfm(path: PathLike) -> np.ndarray:
    """
    讀取 PFM（Pf 灰階或 PF 彩色，任一位元組順序）

    Returns:
        由上到下排列的 float64 陣列（H×W 或 H×W×3）

    Raises:
        InputError: 檔案不存在或格式錯誤
    """
    data = _read_bytes(path)
    tokens, offset = _header_tokens(data, 4, path)
    kind = tokens[0]
    if kind not in (b"Pf", b"PF"):
        raise InputError(f"不是 PFM 檔案: {path}")
    channels = 3 if kind == b"PF" else 1
    width = _parse_int(tokens[1], "寬度", path)
    height = _parse_int(tokens[2], "高度", path)
    try:
        scale = float(tokens[3])
    except ValueError as exc:
        raise InputError(f"{path}: scale 無效") from exc
    if scale == 0:
        raise InputError(f"{path}: scale 不可為 0")
    dtype = "<f4" if scale < 0 else ">f4"

    expected = width * height * channels
    available = (len(data) - offset) // 4
    if available < expected:
        raise InputError(f"{path}: 資料長度不足 ({available} < {expected})")
    raster = np.frombuffer(data, dtype=dtype, count=expected, offset=offset)
    shape = (height, width, 3) if channels == 3 else (height, width)
    image = raster.reshape(shape)
    return np.flipud(image).astype(np.float64)


def write_pfm(path: PathLike, image: np.ndarray) -> None:
    """寫入 little-endian PFM（scale −1.0，由下到上）"""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        kind = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        kind = "PF"
    else:
        raise DomainError(f"PFM 只支援 H×W 或 H×W×3: {img.shape}")
    height, width = img.shape[:2]
    header = f"{kind}\n{width} {height}\n-1.0\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.flipud(img).astype("<f4").tobytes())


def read_depth_pfm(path: PathLike) -> DepthMap:
    """讀取深度 PFM；NaN、非正值與非有限值視為無效"""
    image = read_pfm(path)
    if image.ndim != 2:
        raise InputError(f"深度 PFM 必須為單通道: {path}")
    return DepthMap.from_array(image)


def write_depth_pfm(path: PathLike, depth: DepthMap) -> None:
    """寫入深度 PFM；無效像素寫為 NaN"""
    write_pfm(path, depth.filled(np.nan))


# PGM / PPM


def read_pgm16(path: PathLike) -> np.ndarray:
    """
    讀取 16 位元 PGM（P5，big-endian）

    Returns:
        uint16 H×W 陣列
    """
    data = _read_bytes(path)
    tokens, offset = _header_tokens(data, 4, path)
    if tokens[0] != b"P5":
        raise InputError(f"不是 P5 PGM 檔案: {path}")
    width = _parse_int(tokens[1], "寬度", path)
    height = _parse_int(tokens[2], "高度", path)
    maxval = _parse_int(tokens[3], "maxval", path)
    dtype = np.dtype(">u2" if maxval > 255 else "u1")
    if (len(data) - offset) // dtype.itemsize < width * height:
        raise InputError(f"{path}: 資料長度不足")
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    return raster.reshape(height, width).astype(np.uint16)


def write_pgm16(path: PathLike, image: np.ndarray) -> None:
    """寫入 16 位元 PGM（maxval 65535）"""
    img = np.asarray(image)
    if img.ndim != 2:
        raise DomainError("PGM 必須為 H×W")
    if np.any(img < 0) or np.any(img > 65535):
        raise DomainError("PGM 數值必須位於 [0, 65535]")
    height, width = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        f.write(img.astype(">u2").tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    """讀取 8 位元 PPM（P6），回傳 uint8 H×W×3"""
    data = _read_bytes(path)
    tokens, offset = _header_tokens(data, 4, path)
    if tokens[0] != b"P6":
        raise InputError(f"不是 P6 PPM 檔案: {path}")
    width = _parse_int(tokens[1], "寬度", path)
    height = _parse_int(tokens[2], "高度", path)
    maxval = _parse_int(tokens[3], "maxval", path)
    if maxval > 255:
        raise InputError(f"{path}: 只支援 8 位元 PPM")
    raster = np.frombuffer(data, dtype=np.uint8, offset=offset)
    expected = width * height * 3
    if raster.size < expected:
        raise InputError(f"{path}: 資料長度不足")
    return raster[:expected].reshape(height, width, 3).copy()


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """寫入 8 位元 PPM"""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DomainError("PPM 必須為 H×W×3")
    height, width = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.clip(img, 0, 255).astype(np.uint8).tobytes())


def read_intensity(path: PathLike) -> np.ndarray:
    """
    依副檔名讀取強度影像並縮放到 [0, 1]

    .pgm 除以 maxval 範圍 65535，.ppm 取通道平均後除以 255，.pfm 原值。
    """
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm16(path).astype(np.float64) / 65535.0
    if suffix == ".ppm":
        return read_ppm(path).astype(np.float64).mean(axis=-1) / 255.0
    if suffix == ".pfm":
        return read_pfm(path)
    raise InputError(f"不支援的影像格式: {path}")


# 特徵圖


def read_feature_map(path: PathLike) -> FeatureMap:
    """讀取特徵圖（16 位元組標頭 magic、H、W、C，接 little-endian float32）"""
    data = _read_bytes(path)
    if len(data) < FEATURE_HEADER.size:
        raise InputError(f"特徵圖標頭不完整: {path}")
    magic, height, width, channels = FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise InputError(f"特徵圖 magic 錯誤: {path}")
    expected = height * width * channels
    payload = len(data) - FEATURE_HEADER.size
    if payload != 4 * expected:
        raise InputError(f"{path}: 特徵資料長度 {payload} 位元組與標頭 {expected} 筆不符")
    raster = np.frombuffer(data, dtype="<f4", count=expected, offset=FEATURE_HEADER.size)
    return FeatureMap(raster.reshape(height, width, channels).astype(np.float64))


def write_feature_map(path: PathLike, features: FeatureMap) -> None:
    """寫入特徵圖"""
    values = np.asarray(features.values)
    height, width, channels = values.shape
    with open(path, "wb") as f:
        f.write(FEATURE_HEADER.pack(FEATURE_MAGIC, height, width, channels))
        f.write(values.astype("<f4").tobytes())


# 標定


@dataclass(eq=False)
class Calibration:
    """RGB–熱像標定：兩組內參與 RGB → 熱像剛體變換"""

    rgb: CameraIntrinsics
    thermal: CameraIntrinsics
    thermal_from_rgb: RigidTransform

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rgb": self.rgb.to_dict(),
            "thermal": self.thermal.to_dict(),
            "T_thermal_rgb": self.thermal_from_rgb.as_matrix().ravel().tolist(),
        }


def _read_json(path: PathLike) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise InputError(f"找不到檔案: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"不是有效的 JSON: {path} ({exc})") from exc
    if not isinstance(data, dict):
        raise InputError(f"JSON 頂層必須為物件: {path}")
    return data


def _transform_from_list(values: Any, key: str, path: PathLike) -> RigidTransform:
    try:
        matrix = np.asarray(values, dtype=np.float64).reshape(4, 4)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {key} 必須為 16 個數值") from exc
    return RigidTransform.from_matrix(matrix)


def _intrinsics(data: Dict[str, Any], key: str, path: PathLike) -> CameraIntrinsics:
    try:
        return CameraIntrinsics.from_dict(data[key])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: 相機 {key} 內參缺少或無效 ({exc})") from exc


def read_calibration(path: PathLike) -> Calibration:
    """
    讀取標定 JSON {"rgb", "thermal", "T_thermal_rgb"}

    Raises:
        InputError: 檔案或欄位無效
        DomainError: 內參或旋轉矩陣不合法
    """
    data = _read_json(path)
    if "T_thermal_rgb" not in data:
        raise InputError(f"{path}: 缺少 T_thermal_rgb")
    return Calibration(
        rgb=_intrinsics(data, "rgb", path),
        thermal=_intrinsics(data, "thermal", path),
        thermal_from_rgb=_transform_from_list(data["T_thermal_rgb"], "T_thermal_rgb", path),
    )


def write_calibration(path: PathLike, calibration: Calibration) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(calibration.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_stereo_rig(path: PathLike) -> StereoRig:
    """讀取雙目相機組 JSON {"left", "right", "T_right_left"}"""
    data = _read_json(path)
    if "T_right_left" not in data:
        raise InputError(f"{path}: 缺少 T_right_left")
    return StereoRig(
        left=_intrinsics(data, "left", path),
        right=_intrinsics(data, "right", path),
        right_from_left=_transform_from_list(data["T_right_left"], "T_right_left", path),
    )


# 點雲


def read_xyz(path: PathLike) -> np.ndarray:
    """讀取每行 "x y z" 的點雲文字檔（# 開頭為註解）"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError as exc:
        raise InputError(f"找不到檔案: {path}") from exc

    points = []
    for number, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise InputError(f"{path}:{number}: 每行必須有 3 個數值")
        try:
            points.append([float(p) for p in parts])
        except ValueError as exc:
            raise InputError(f"{path}:{number}: 數值無效") from exc
    cloud = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(cloud)):
        raise InputError(f"{path}: 點座標必須為有限值")
    return cloud


def write_xyz(path: PathLike, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as f:
        for x, y, z in pts:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
