"""CLI 命令入口"""

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click
import numpy as np

from xmodal_depth import __version__
from xmodal_depth.core.config import ConfigManager
from xmodal_depth.core.errors import CheckFailure, ConfigurationError, InputError, XmodalError
from xmodal_depth.core.session import RunSession
from xmodal_depth.services import fileio
from xmodal_depth.services.provider_manager import ConfidenceProviderManager
from xmodal_depth.services.report import (
    confidence_error_heatmap,
    loss_report,
    metrics_row,
    write_json,
    write_metrics_csv,
)
from xmodal_depth.ui import terminal as ui

logger = logging.getLogger(__name__)


def handle_errors(func):
    """把 XmodalError 轉成錯誤訊息與對應的結束碼"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except XmodalError as exc:
            ui.print_error(str(exc))
            sys.exit(exc.exit_code)

    return wrapper


def run_options(func):
    """每個子命令共用的 --config 與 --out"""
    func = click.option(
        "--out",
        "out_dir",
        required=True,
        type=click.Path(file_okay=False, path_type=Path),
        help="輸出目錄",
    )(func)
    func = click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False, path_type=Path),
        help="JSON 配置檔",
    )(func)
    return func


def _start(name: str, config_path: Optional[Path], out_dir: Path, overrides: Dict[str, Any]):
    """解析配置、建立輸出目錄並寫入 resolved_config.json"""
    section = ConfigManager(config_path).resolve(name, overrides)
    session = RunSession(out_dir, name)
    session.write_resolved(section)
    return section, session


def _require(section, *keys: str) -> None:
    missing = [k for k in keys if getattr(section, k) is None]
    if missing:
        raise ConfigurationError(f"缺少必要輸入: {', '.join(missing)}")


def _check_shape(depth, K, what: str) -> None:
    if depth.shape != K.shape:
        raise InputError(f"{what} 尺寸 {depth.shape} 與內參 {K.shape} 不符")


@click.group()
@click.version_option(version=__version__, prog_name="xmodal")
@click.option("--verbose", "-v", is_flag=True, help="顯示除錯訊息")
def cli(verbose: bool):
    """Xmodal: 信心感知的 RGB → 熱像深度蒸餾工具"""
    ui.setup_logging(verbose)


@cli.command()
@run_options
@click.option("--calib", type=str, help="標定 JSON")
@click.option("--depth", type=str, help="來源深度 PFM")
@click.option("--rgb-depth", type=str, help="thermal-to-rgb 所需的 RGB 教師深度 PFM")
@click.option(
    "--direction", type=click.Choice(["rgb-to-thermal", "thermal-to-rgb"]), help="warp 方向"
)
@handle_errors
def warp(config_path, out_dir, calib, depth, rgb_depth, direction):
    """在 RGB 與熱像相機之間 warp 深度"""
    from xmodal_depth.core.geometry import warp_depth, warped_thermal_depth

    section, session = _start(
        "warp",
        config_path,
        out_dir,
        {"calib": calib, "depth": depth, "rgb_depth": rgb_depth, "direction": direction},
    )
    _require(section, "calib", "depth")
    calibration = fileio.read_calibration(section.calib)
    source = fileio.read_depth_pfm(section.depth)
    K_r, K_t = calibration.rgb, calibration.thermal
    T_t_r = calibration.thermal_from_rgb

    if section.direction == "rgb-to-thermal":
        _check_shape(source, K_r, "RGB 深度")
        warped, coords = warp_depth(source, K_r, K_t, T_t_r)
        fileio.write_depth_pfm(session.path("depth_rt.pfm"), warped)
        fileio.write_pfm(session.path("coords_x.pfm"), np.where(coords.valid, coords.x, np.nan))
        fileio.write_pfm(session.path("coords_y.pfm"), np.where(coords.valid, coords.y, np.nan))
        ui.print_success(f"已寫入 D̂_rt 與 û_rt（{int(warped.valid.sum())} 個有效像素）")
        return

    _require(section, "rgb_depth")
    teacher = fileio.read_depth_pfm(section.rgb_depth)
    _check_shape(source, K_t, "熱像深度")
    _check_shape(teacher, K_r, "RGB 深度")
    _, coords = warp_depth(teacher, K_r, K_t, T_t_r)
    breve = warped_thermal_depth(source, coords, K_t, K_r, T_t_r.inverse())
    fileio.write_depth_pfm(session.path("depth_tr.pfm"), breve)
    ui.print_success(f"已寫入 D̆_tr（{int(breve.valid.sum())} 個有效像素）")


@cli.command("eval")
@run_options
@click.option("--pred", type=str, help="預測深度 PFM")
@click.option("--gt", type=str, help="真值深度 PFM")
@click.option("--split", type=str, help="資料分割標籤（例如 day、night）")
@click.option("--method", type=str, help="方法名稱")
@click.option("--bin-width", type=float, help="加權指標的深度箱寬（公尺）")
@click.option("--max-depth", type=float, help="加權指標的最大深度（公尺）")
@handle_errors
def eval_cmd(config_path, out_dir, pred, gt, split, method, bin_width, max_depth):
    """計算未加權與深度分箱加權的評估指標"""
    from xmodal_depth.core.metrics import compute_metrics, compute_weighted_metrics

    section, session = _start(
        "eval",
        config_path,
        out_dir,
        {
            "pred": pred,
            "gt": gt,
            "split": split,
            "method": method,
            "bin_width": bin_width,
            "max_depth": max_depth,
        },
    )
    _require(section, "pred", "gt")
    prediction = fileio.read_depth_pfm(section.pred)
    truth = fileio.read_depth_pfm(section.gt)
    if prediction.shape != truth.shape:
        raise InputError(f"預測 {prediction.shape} 與真值 {truth.shape} 尺寸不符")

    unweighted = compute_metrics(prediction, truth)
    weighted = compute_weighted_metrics(
        prediction, truth, bin_width=section.bin_width, max_depth=section.max_depth
    )
    rows = [
        metrics_row(section.split, section.method, "unweighted", unweighted),
        metrics_row(section.split, section.method, "weighted", weighted.aggregate),
    ]
    write_metrics_csv(session.path("metrics.csv"), rows)
    write_json(
        session.path("metrics.json"),
        {
            "split": section.split,
            "method": section.method,
            "unweighted": unweighted.to_dict(),
            "weighted": weighted.to_dict(),
        },
    )
    ui.print_metrics_table(rows)


@cli.command()
@run_options
@click.option("--seed", type=int, help="隨機種子")
@click.option("--tolerance", type=float, help="相對誤差容許值")
@click.option("--instances", type=int, help="隨機實例數")
@click.option("--size", type=int, help="網格邊長")
@click.option("--inject-sign-error", is_flag=True, default=None, hidden=True)
@handle_errors
def gradcheck(config_path, out_dir, seed, tolerance, instances, size, inject_sign_error):
    """以中央差分驗證所有 loss 與 warp 鏈的解析梯度"""
    from xmodal_depth.core.gradcheck import run_gradcheck_suite

    section, session = _start(
        "gradcheck",
        config_path,
        out_dir,
        {
            "seed": seed,
            "tolerance": tolerance,
            "instances": instances,
            "size": size,
            "inject_sign_error": inject_sign_error,
        },
    )
    ui.print_info(
        f"梯度檢查：{section.instances} 個 {section.size}×{section.size} 實例，容許誤差 {section.tolerance:g}"
    )
    report = run_gradcheck_suite(
        seed=section.seed,
        instances=section.instances,
        size=section.size,
        rel_tol=section.tolerance,
        abs_floor=section.abs_floor,
        inject_sign_error=section.inject_sign_error,
        threads=None,
    )
    write_json(session.path("gradcheck.json"), report)
    ui.print_gradcheck_table(report)
    if not report["passed"]:
        raise CheckFailure(
            f"梯度檢查失敗：最大相對誤差 {report['max_rel_error']:.3e} > {section.tolerance:g}"
        )
    ui.print_success(f"梯度檢查通過（最大相對誤差 {report['max_rel_error']:.3e}）")


@cli.command("distill-demo")
@run_options
@click.option(
    "--confidence-mode",
    type=click.Choice(list(ConfidenceProviderManager.PROVIDERS)),
    help="信心來源",
)
@click.option("--steps", type=int, help="學生更新步數")
@click.option("--seed", type=int, help="隨機種子")
@click.option("--ablation/--no-ablation", default=None, help="另以多線索與僅 RGB 的信心各跑一次")
@click.option("--dump/--no-dump", default=None, help="輸出中間深度、特徵與熱度圖")
@handle_errors
def distill_demo(config_path, out_dir, confidence_mode, steps, seed, ablation, dump):
    """合成場景上的信心感知蒸餾示範"""
    from xmodal_depth.core.distill import default_manager, run_distillation_demo

    section, session = _start(
        "distill-demo",
        config_path,
        out_dir,
        {
            "confidence_mode": confidence_mode,
            "steps": steps,
            "seed": seed,
            "ablation": ablation,
            "dump": dump,
        },
    )
    ui.print_info(f"蒸餾示範：{section.steps} 步，信心來源 {section.confidence_mode}")
    result = run_distillation_demo(section, default_manager(section))
    result.report["final_loss"] = {
        name: loss_report(loss) for name, loss in result.final_loss.items()
    }
    write_json(session.path("report.json"), result.report)

    if section.dump:
        fileio.write_depth_pfm(session.path("teacher_rgb.pfm"), result.teacher)
        fileio.write_depth_pfm(session.path("gt_rgb.pfm"), result.gt_rgb)
        fileio.write_depth_pfm(session.path("gt_thermal.pfm"), result.gt_thermal)
        fileio.write_depth_pfm(session.path("student_init.pfm"), result.student_init)
        fileio.write_depth_pfm(session.path("student_confident.pfm"), result.student_confident)
        fileio.write_depth_pfm(session.path("student_uniform.pfm"), result.student_uniform)
        fileio.write_pfm(session.path("confidence.pfm"), result.confidence.values)
        fileio.write_feature_map(session.path("features_rgb.feat"), result.features_rgb)
        fileio.write_feature_map(session.path("features_thermal.feat"), result.features_thermal)
        fileio.write_pfm(session.path("similarity.pfm"), result.similarity.values)
        fileio.write_ppm(
            session.path("confidence_error.ppm"),
            confidence_error_heatmap(result.confidence.values, result.teacher_error),
        )

    report = result.report
    ui.print_summary(
        {
            "AbsRel（初始）": report["absrel_init"],
            "AbsRel（信心加權）": report["absrel_confident"],
            "AbsRel（均勻權重）": report["absrel_uniform"],
            "相對初始改善 %": report["improvement_pct"],
            "相對均勻權重改善 %": report["margin_pct"],
        },
        title="蒸餾示範",
    )
    if "ablation" in report:
        ui.print_summary(report["ablation"]["absrel"], title="消融 AbsRel")
        ui.print_info("排序（佳 → 差）：" + " < ".join(report["ablation"]["ordering"]))
    ui.print_success(f"報告已寫入 {session.path('report.json')}")


@cli.command("filter-lidar")
@run_options
@click.option("--lidar", type=str, help="LiDAR 深度 PFM（左影像網格）")
@click.option("--left", type=str, help="左影像 PGM/PPM/PFM")
@click.option("--right", type=str, help="右影像 PGM/PPM/PFM")
@click.option("--rig", type=str, help="雙目相機組 JSON")
@click.option("--stereo", type=str, help="立體匹配深度 PFM（可選）")
@click.option("--tau-photo", type=float, help="強度差門檻")
@click.option("--tau-rel", type=float, help="相對深度偏差門檻")
@handle_errors
def filter_lidar(config_path, out_dir, lidar, left, right, rig, stereo, tau_photo, tau_rel):
    """以光度一致性與立體偏差過濾 LiDAR 深度"""
    from xmodal_depth.core.depthfilter import filter_lidar as run_filter

    section, session = _start(
        "filter-lidar",
        config_path,
        out_dir,
        {
            "lidar": lidar,
            "left": left,
            "right": right,
            "rig": rig,
            "stereo": stereo,
            "tau_photo": tau_photo,
            "tau_rel": tau_rel,
        },
    )
    _require(section, "lidar", "left", "right", "rig")
    stereo_rig = fileio.read_stereo_rig(section.rig)
    lidar_depth = fileio.read_depth_pfm(section.lidar)
    stereo_depth = fileio.read_depth_pfm(section.stereo) if section.stereo else None
    filtered, summary = run_filter(
        lidar_depth,
        fileio.read_intensity(section.left),
        fileio.read_intensity(section.right),
        stereo_rig,
        stereo_depth,
        section.tau_photo,
        section.tau_rel,
    )
    fileio.write_depth_pfm(session.path("filtered.pfm"), filtered)
    write_json(session.path("summary.json"), summary)
    ui.print_summary(summary, title="LiDAR 過濾")


@cli.command("obstacle-map")
@run_options
@click.option("--depth", type=str, help="深度 PFM")
@click.option("--calib", type=str, help="標定 JSON")
@click.option("--camera", type=click.Choice(["rgb", "thermal"]), help="深度所屬相機")
@click.option("--xyz", type=str, help="地面座標系點雲文字檔（取代 --depth）")
@click.option("--camera-height", type=float, help="相機離地高度（公尺）")
@click.option("--pitch-deg", type=float, help="相機俯角（度）")
@click.option("--eps", type=float, help="DBSCAN 鄰域半徑")
@click.option("--min-pts", type=int, help="DBSCAN 核心點最少點數")
@click.option("--alpha", type=float, help="alpha shape 參數（0 表示凸包）")
@handle_errors
def obstacle_map(
    config_path, out_dir, depth, calib, camera, xyz, camera_height, pitch_deg, eps, min_pts, alpha
):
    """由深度圖或點雲建立 2D 障礙物多邊形地圖"""
    from xmodal_depth.core.obstaclemap import (
        ObstacleParams,
        PointCloud,
        build_from_points,
        build_obstacle_map,
        ground_camera_pose,
    )

    section, session = _start(
        "obstacle-map",
        config_path,
        out_dir,
        {
            "depth": depth,
            "calib": calib,
            "camera": camera,
            "xyz": xyz,
            "camera_height": camera_height,
            "pitch_deg": pitch_deg,
            "eps": eps,
            "min_pts": min_pts,
            "alpha": alpha,
        },
    )
    params = ObstacleParams(
        voxel=section.voxel,
        radius=section.radius,
        min_neighbors=section.min_neighbors,
        ground_height=section.ground_height,
        max_height=section.max_height,
        eps=section.eps,
        min_pts=section.min_pts,
        alpha=section.alpha,
        padding=section.padding,
    )
    if section.xyz:
        result = build_from_points(PointCloud(fileio.read_xyz(section.xyz)), params)
    else:
        _require(section, "depth", "calib")
        calibration = fileio.read_calibration(section.calib)
        K = calibration.rgb if section.camera == "rgb" else calibration.thermal
        depth_map = fileio.read_depth_pfm(section.depth)
        _check_shape(depth_map, K, "深度")
        pose = ground_camera_pose(section.camera_height, section.pitch_deg)
        result = build_obstacle_map(depth_map, K, pose, params)

    write_json(session.path("obstacles.json"), result.to_json_list())
    ui.print_summary(result.stats, title="障礙物地圖")
    ui.print_success(f"共 {len(result.polygons)} 個障礙物多邊形")


@cli.command()
@run_options
@click.option("--seed", type=int, help="隨機種子")
@click.option("--baseline", type=float, help="相機基線（公尺）")
@handle_errors
def synth(config_path, out_dir, seed, baseline):
    """產生隨機合成場景的雙相機真值深度與標定"""
    from xmodal_depth.core.synthscene import (
        random_rig,
        random_scene,
        relative_transform,
        render_depth,
    )

    section, session = _start("synth", config_path, out_dir, {"seed": seed, "baseline": baseline})
    K = section.camera.to_intrinsics()
    scene = random_scene(section.seed)
    pose_rgb, pose_thermal = random_rig(section.seed, section.baseline)

    fileio.write_depth_pfm(session.path("rgb_depth.pfm"), render_depth(scene, K, pose_rgb))
    fileio.write_depth_pfm(session.path("thermal_depth.pfm"), render_depth(scene, K, pose_thermal))
    fileio.write_calibration(
        session.path("calib.json"),
        fileio.Calibration(K, K, relative_transform(pose_rgb, pose_thermal)),
    )
    write_json(session.path("scene.json"), scene.to_dict())
    ui.print_success(f"合成場景已寫入 {session.output_dir}")


@cli.command("normalize-thermal")
@run_options
@click.option("--input", "input_path", type=str, help="16 位元熱影像 PGM")
@handle_errors
def normalize_thermal(config_path, out_dir, input_path):
    """以第 2/98 百分位數正規化熱影像"""
    from xmodal_depth.core.imagery import normalize_thermal as run_normalize

    section, session = _start("normalize-thermal", config_path, out_dir, {"input": input_path})
    _require(section, "input")
    result = run_normalize(fileio.read_pgm16(section.input))
    fileio.write_pfm(session.path("normalized.pfm"), result.values)
    summary = {"p2": result.p2, "p98": result.p98, "degenerate": result.degenerate}
    write_json(session.path("summary.json"), summary)
    if result.degenerate:
        ui.print_warning("熱影像動態範圍過小，輸出全為 0")
    ui.print_summary(summary, title="熱影像正規化")


@cli.group()
def provider():
    """信心 Provider 管理"""
    pass


@provider.command("list")
def provider_list():
    """列出所有信心 providers"""
    manager = ConfidenceProviderManager()
    ui.display_providers_table(manager.list_all_providers())


if __name__ == "__main__":
    cli()
