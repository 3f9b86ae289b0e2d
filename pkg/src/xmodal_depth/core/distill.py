"""信心感知 RGB → 熱像蒸餾示範

以合成場景建立兩台相機的真值深度，RGB 教師為污染後的真值，熱像學生為
逐像素深度網格。學生只用一致性 loss（自監督微調）經由完整的 warp 鏈更新，
分別以信心加權與 W ≡ 1 各跑一次；開啟 ablation 時另以多線索與僅 RGB 線索
的 metadata 信心各跑一次。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..services.confidence_provider import ConfidenceContext
from ..services.provider_manager import ConfidenceProviderManager
from .config import DistillConfig
from .geometry import (
    DepthMap,
    PixelCoordGrid,
    RigidTransform,
    footprint_coverage,
    warp_depth,
    warped_thermal_depth,
)
from .imagery import FeatureMap, MetadataStack, SimilarityMap, assemble_metadata
from .losses import (
    ConfidenceMap,
    LossInputs,
    LossResult,
    LossWeights,
    WarpChain,
    combined_loss,
    similarity_mask,
)
from .metrics import compute_metrics
from .synthscene import (
    CorruptionRegion,
    CorruptionSpec,
    PlanePrimitive,
    Scene,
    corrupt_depth,
    render_depth,
    scene_features,
    scene_texture,
)

logger = logging.getLogger(__name__)

ABLATION_PROVIDERS = ("multimodal", "rgb-only")


@dataclass(eq=False)
class DemoResult:
    """示範結果：報告與中間深度"""

    report: Dict[str, Any]
    teacher: DepthMap
    gt_rgb: DepthMap
    gt_thermal: DepthMap
    student_init: DepthMap
    student_confident: DepthMap
    student_uniform: DepthMap
    confidence: ConfidenceMap
    teacher_error: np.ndarray
    features_rgb: FeatureMap
    features_thermal: FeatureMap
    metadata: MetadataStack
    similarity: SimilarityMap
    final_loss: Dict[str, LossResult] = field(default_factory=dict)


def build_demo_scene(config: DistillConfig) -> Scene:
    """牆面（背景）加上可選的地面"""
    primitives = []
    if config.scene.floor_height is not None:
        primitives.append(
            PlanePrimitive(1, config.scene.floor_height, ((-np.inf, np.inf), (0.0, np.inf)))
        )
    return Scene(primitives, config.scene.wall_depth, config.seed)


def default_manager(config: DistillConfig) -> ConfidenceProviderManager:
    return ConfidenceProviderManager(
        {"fit_steps": config.fit_steps, "meta_ridge": config.meta_ridge}
    )


def _absrel(pred: DepthMap, gt: DepthMap, mask: np.ndarray) -> float:
    return compute_metrics(pred, gt, mask).abs_rel


def _percent_gain(before: float, after: float) -> float:
    return 100.0 * (before - after) / before if before > 0 else 0.0


def _supported_pixels(
    u_rt: PixelCoordGrid, sample_mask: np.ndarray, gt_thermal, init, K_t, K_r, T_r_t
) -> np.ndarray:
    """在真值與初始學生深度下都能從保留的 RGB 取樣得到梯度的熱像像素"""
    mask = gt_thermal.valid & init.valid
    for depth in (gt_thermal, init):
        chain_valid = warp_depth(depth, K_t, K_r, T_r_t)[0].valid
        mask &= footprint_coverage(u_rt, chain_valid, sample_mask)
    return mask


def _synthetic_inputs(
    config: DistillConfig,
    teacher: DepthMap,
    gt_rgb: DepthMap,
    gt_thermal: DepthMap,
    init: DepthMap,
    u_rt: PixelCoordGrid,
    geometry: Dict[str, Any],
) -> Tuple[FeatureMap, FeatureMap, MetadataStack]:
    """兩台相機的合成特徵與初始學生下的 metadata"""
    K_r, K_t, T_r_t = geometry["K_r"], geometry["K_t"], geometry["T_r_t"]
    identity = RigidTransform.identity()
    noise = config.feature_noise
    F_r = FeatureMap(
        scene_features(gt_rgb, K_r, identity, config.seed, noise, noise_seed=config.seed + 1)
    )
    F_t = FeatureMap(
        scene_features(gt_thermal, K_t, T_r_t, config.seed, noise, noise_seed=config.seed + 2)
    )
    I_r = scene_texture(gt_rgb, K_r, identity, config.seed)
    D_tr = warped_thermal_depth(init, u_rt, K_t, K_r, T_r_t)
    _, u_tr = warp_depth(init, K_t, K_r, T_r_t)
    metadata = assemble_metadata(teacher, D_tr, F_r, F_t, u_rt, I_r, u_tr)
    return F_r, F_t, metadata


def _optimize_student(
    init: DepthMap,
    teacher: DepthMap,
    W: ConfidenceMap,
    S_r: SimilarityMap,
    u_rt: PixelCoordGrid,
    geometry: Dict[str, Any],
    config: DistillConfig,
) -> Tuple[DepthMap, List[float], LossResult]:
    weights = LossWeights(keep_fraction=config.keep_fraction, sim_keep=config.sim_keep)
    student = init.copy()
    curve: List[float] = []
    result: Optional[LossResult] = None
    for _ in range(config.steps):
        breve = warped_thermal_depth(
            student, u_rt, geometry["K_t"], geometry["K_r"], geometry["T_r_t"]
        )
        result = combined_loss(
            LossInputs(D_r_pred=teacher, W=W, D_tr_warped=breve, S_r=S_r),
            weights,
            supervised=False,
            chain=WarpChain(u_rt, student, geometry["K_t"], geometry["K_r"], geometry["T_r_t"]),
            normalize_by=config.normalize_by,
        )
        curve.append(result.value)
        updated = student.values - config.step_size * result.gradients["D_t_pred"]
        student = DepthMap(np.where(student.valid, np.maximum(updated, 1e-3), 0.0), student.valid)
    return student, curve, result


def run_distillation_demo(
    config: Optional[DistillConfig] = None,
    manager: Optional[ConfidenceProviderManager] = None,
) -> DemoResult:
    """
    執行蒸餾示範

    Args:
        config: 示範配置（預設值即內建示範）
        manager: 信心 provider 管理器；None 表示依 config 建立

    Returns:
        DemoResult；report 含 absrel_confident、absrel_uniform、absrel_init、
        improvement_pct、margin_pct 與兩次執行的逐步 loss 曲線，開啟 ablation
        時另含各信心來源的 AbsRel 與排序

    Raises:
        ConfigurationError: confidence_mode 不是已知的 provider
    """
    config = config or DistillConfig()
    manager = manager or default_manager(config)
    K_r = config.rig.rgb.to_intrinsics()
    K_t = config.rig.thermal.to_intrinsics()
    T_t_r = config.rig.thermal_from_rgb()
    T_r_t = T_t_r.inverse()
    geometry = {"K_r": K_r, "K_t": K_t, "T_r_t": T_r_t}

    scene = build_demo_scene(config)
    gt_rgb = render_depth(scene, K_r, RigidTransform.identity())
    gt_thermal = render_depth(scene, K_t, T_r_t)

    spec = CorruptionSpec(
        regions=[
            CorruptionRegion(r.row0, r.row1, r.col0, r.col1) for r in config.corruption.regions
        ],
        bias=config.corruption.bias,
        region_noise=config.corruption.region_noise,
        base_noise=config.corruption.base_noise,
        seed=config.seed,
    )
    teacher, corrupted = corrupt_depth(gt_rgb, spec)
    _, u_rt = warp_depth(teacher, K_r, K_t, T_t_r)
    init = DepthMap(
        np.where(gt_thermal.valid, gt_thermal.values + config.init_bias, 0.0), gt_thermal.valid
    )

    F_r, F_t, metadata = _synthetic_inputs(
        config, teacher, gt_rgb, gt_thermal, init, u_rt, geometry
    )
    S_r = SimilarityMap(metadata.channel("S_r"), metadata.channel_valid[0])
    kept_samples = similarity_mask(S_r, config.sim_keep)

    def confidence_from(name: str) -> ConfidenceMap:
        context = ConfidenceContext(teacher, gt_rgb, config.beta, metadata)
        return manager.get_provider(name).predict(context)

    W_conf = confidence_from(config.confidence_mode)
    W_uniform = ConfidenceMap(np.ones(teacher.shape))
    eval_mask = _supported_pixels(u_rt, kept_samples, gt_thermal, init, K_t, K_r, T_r_t)

    logger.info("開始信心加權蒸餾 (%s, %d 步)", config.confidence_mode, config.steps)
    student_conf, curve_conf, loss_conf = _optimize_student(
        init, teacher, W_conf, S_r, u_rt, geometry, config
    )
    logger.info("開始均勻權重蒸餾 (%d 步)", config.steps)
    student_uni, curve_uni, loss_uni = _optimize_student(
        init, teacher, W_uniform, S_r, u_rt, geometry, config
    )

    absrel_init = _absrel(init, gt_thermal, eval_mask)
    absrel_conf = _absrel(student_conf, gt_thermal, eval_mask)
    absrel_uni = _absrel(student_uni, gt_thermal, eval_mask)

    teacher_error = np.where(
        teacher.valid & gt_rgb.valid, np.abs(teacher.values - gt_rgb.values), 0.0
    )
    report = {
        "confidence_mode": config.confidence_mode,
        "seed": config.seed,
        "steps": config.steps,
        "num_eval_pixels": int(np.count_nonzero(eval_mask)),
        "num_corrupted_pixels": int(np.count_nonzero(corrupted)),
        "num_similarity_kept": int(np.count_nonzero(kept_samples)),
        "absrel_init": absrel_init,
        "absrel_confident": absrel_conf,
        "absrel_uniform": absrel_uni,
        "improvement_pct": _percent_gain(absrel_init, absrel_conf),
        "margin_pct": _percent_gain(absrel_uni, absrel_conf),
        "metrics": {
            "init": compute_metrics(init, gt_thermal, eval_mask).to_dict(),
            "confident": compute_metrics(student_conf, gt_thermal, eval_mask).to_dict(),
            "uniform": compute_metrics(student_uni, gt_thermal, eval_mask).to_dict(),
        },
        "loss_curve": {"confident": curve_conf, "uniform": curve_uni},
    }

    if config.ablation:
        absrel = {config.confidence_mode: absrel_conf, "uniform": absrel_uni}
        for name in ABLATION_PROVIDERS:
            if name in absrel:
                continue
            logger.info("消融：%s 信心蒸餾", name)
            student, _, _ = _optimize_student(
                init, teacher, confidence_from(name), S_r, u_rt, geometry, config
            )
            absrel[name] = _absrel(student, gt_thermal, eval_mask)
        report["ablation"] = {"absrel": absrel, "ordering": sorted(absrel, key=absrel.get)}

    logger.info(
        "AbsRel: init=%.5f confident=%.5f uniform=%.5f", absrel_init, absrel_conf, absrel_uni
    )
    return DemoResult(
        report=report,
        teacher=teacher,
        gt_rgb=gt_rgb,
        gt_thermal=gt_thermal,
        student_init=init,
        student_confident=student_conf,
        student_uniform=student_uni,
        confidence=W_conf,
        teacher_error=teacher_error,
        features_rgb=F_r,
        features_thermal=F_t,
        metadata=metadata,
        similarity=S_r,
        final_loss={"confident": loss_conf, "uniform": loss_uni},
    )
