"""中央差分梯度檢查與完整檢查套件"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DomainError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    RigidTransform,
    bilinear_sample_adjoint,
    warp_depth,
    warped_thermal_depth,
    warped_thermal_depth_vjp,
)
from .imagery import SimilarityMap
from .losses import (
    ConfidenceMap,
    LossInputs,
    WarpChain,
    combined_loss,
    consistency,
    laplacian_nll,
    silog,
    similarity_mask,
    smoothness,
)
from .parallel import map_chunks

logger = logging.getLogger(__name__)

STEP_SCALE = 1e-5
KINK_FACTOR = 10.0
CHECKS_PER_INSTANCE = 7


@dataclass
class GradCheckReport:
    """單一梯度比較結果"""

    name: str
    max_rel_error: float
    worst_pixel: Optional[Tuple[int, int, str]]
    num_checked: int
    num_skipped_kinks: int
    rel_tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rel_tol

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "max_rel_error": float(self.max_rel_error),
            "worst_pixel": list(self.worst_pixel) if self.worst_pixel else None,
            "num_checked": self.num_checked,
            "num_skipped_kinks": self.num_skipped_kinks,
            "passed": self.passed,
        }


def default_steps(x: np.ndarray) -> np.ndarray:
    """逐項步長 h = 1e-5·max(1, |x|)"""
    return STEP_SCALE * np.maximum(1.0, np.abs(np.asarray(x, dtype=np.float64)))


def finite_diff(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: Optional[float] = None,
    skip: Optional[np.ndarray] = None,
    threads: Optional[int] = 1,
) -> np.ndarray:
    """
    中央差分梯度 (f(x + h·e_i) − f(x − h·e_i)) / (2h)

    Args:
        f: 純函式，輸入與 x 同形狀的網格
        x: 求值點
        h: 固定步長；None 表示逐項 1e-5·max(1, |x_i|)
        skip: 不需探測的項目（輸出為 NaN）
        threads: 執行緒數（None 表示依 XMODAL_THREADS）

    Returns:
        梯度網格；f 在擾動輸入上拋出例外的項目為 NaN
    """
    base = np.asarray(x, dtype=np.float64)
    if h is not None and not h > 0:
        raise DomainError(f"差分步長必須為正: {h}")
    steps = default_steps(base) if h is None else np.full(base.shape, float(h))
    skip_flat = (
        np.zeros(base.size, dtype=bool) if skip is None else np.asarray(skip, bool).ravel()
    )
    flat_steps = steps.ravel()

    def perturb(start: int, stop: int) -> np.ndarray:
        work = base.copy().ravel()
        out = np.full(stop - start, np.nan)
        for k in range(start, stop):
            if skip_flat[k]:
                continue
            original = work[k]
            step = flat_steps[k]
            try:
                work[k] = original + step
                plus = f(work.reshape(base.shape))
                work[k] = original - step
                minus = f(work.reshape(base.shape))
                out[k - start] = (plus - minus) / (2.0 * step)
            except Exception as exc:  # noqa: BLE001
                logger.debug("差分探測失敗 (entry %d): %s", k, exc)
            finally:
                work[k] = original
        return out

    chunks = map_chunks(perturb, base.size, threads)
    if not chunks:
        return np.zeros(base.shape)
    return np.concatenate(chunks).reshape(base.shape)


def compare(
    analytic: np.ndarray,
    numeric: np.ndarray,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-8,
    skip: Optional[np.ndarray] = None,
    name: str = "x",
    check_name: str = "compare",
) -> GradCheckReport:
    """
    比較解析與數值梯度

    rel error = |a − n| / max(abs_floor, |a|, |n|)；NaN 項與 skip 項計為略過。

    Raises:
        DomainError: 形狀不一致
    """
    a = np.atleast_2d(np.asarray(analytic, dtype=np.float64))
    n = np.atleast_2d(np.asarray(numeric, dtype=np.float64))
    if a.shape != n.shape:
        raise DomainError(f"梯度形狀不一致: {a.shape} vs {n.shape}")

    skipped = ~(np.isfinite(a) & np.isfinite(n))
    if skip is not None:
        skipped |= np.atleast_2d(np.asarray(skip, dtype=bool))
    checked = ~skipped
    num_checked = int(np.count_nonzero(checked))
    if num_checked == 0:
        return GradCheckReport(check_name, 0.0, None, 0, int(skipped.sum()), rel_tol)

    safe_a = np.where(checked, a, 0.0)
    safe_n = np.where(checked, n, 0.0)
    denom = np.maximum(abs_floor, np.maximum(np.abs(safe_a), np.abs(safe_n)))
    rel = np.where(checked, np.abs(safe_a - safe_n) / denom, -1.0)
    flat_index = int(np.argmax(rel))
    index = np.unravel_index(flat_index, rel.shape)
    worst = (int(index[-2]), int(index[-1]), name)
    return GradCheckReport(
        check_name, float(rel.ravel()[flat_index]), worst, num_checked, int(skipped.sum()), rel_tol
    )


def check_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    name: str,
    check_name: str,
    kink_mask: Optional[np.ndarray] = None,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-6,
    threads: Optional[int] = 1,
) -> GradCheckReport:
    """對非 kink 項做差分並與解析梯度比較"""
    numeric = finite_diff(f, x, skip=kink_mask, threads=threads)
    return compare(analytic, numeric, rel_tol, abs_floor, kink_mask, name, check_name)


def _smoothness_kinks(values: np.ndarray, h: np.ndarray) -> np.ndarray:
    """差分絕對值接近 0 的像素（任一參與的前向差分）"""
    kinks = np.zeros(values.shape, dtype=bool)
    center = values[:-1, :-1]
    dx = np.abs(values[:-1, 1:] - center)
    dy = np.abs(values[1:, :-1] - center)
    hx = KINK_FACTOR * np.maximum(h[:-1, 1:], h[:-1, :-1])
    hy = KINK_FACTOR * np.maximum(h[1:, :-1], h[:-1, :-1])
    near_x = dx < hx
    near_y = dy < hy
    kinks[:-1, :-1] |= near_x | near_y
    kinks[:-1, 1:] |= near_x
    kinks[1:, :-1] |= near_y
    return kinks


def _consistency_kinks(
    residual: np.ndarray, kept_candidates: np.ndarray, keep_fraction: float, h: np.ndarray
) -> np.ndarray:
    """殘差接近 0 或接近修剪分位數的像素"""
    threshold = KINK_FACTOR * h
    kinks = np.abs(residual) < threshold
    if np.any(kept_candidates) and keep_fraction < 1.0:
        q = np.quantile(np.abs(residual[kept_candidates]), keep_fraction)
        kinks |= np.abs(np.abs(residual) - q) < threshold
    return kinks & kept_candidates


def _chain_instance(rng: np.random.Generator, size: int):
    """熱像視野完全落在 RGB 視野內的小型相機組"""
    K_r = CameraIntrinsics(0.5 * size, 0.5 * size, (size - 1) / 2.0, (size - 1) / 2.0, size, size)
    K_t = CameraIntrinsics(0.75 * size, 0.75 * size, (size - 1) / 2.0, (size - 1) / 2.0, size, size)
    rotation = Rotation.from_rotvec(rng.normal(0.0, 0.01, 3)).as_matrix()
    translation = np.array([-0.1, 0.0, 0.0]) + rng.normal(0.0, 0.01, 3)
    T_t_r = RigidTransform(rotation, translation)
    return K_r, K_t, T_t_r, T_t_r.inverse()


def run_gradcheck_suite(
    seed: int = 0,
    instances: int = 20,
    size: int = 16,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-6,
    inject_sign_error: bool = False,
    threads: Optional[int] = 1,
) -> Dict[str, Any]:
    """
    對所有 loss 與 warp 鏈執行解析對差分梯度檢查

    Args:
        seed: 隨機種子
        instances: 隨機實例數
        size: 網格邊長
        rel_tol: 相對誤差容許值
        abs_floor: 相對誤差分母下限
        inject_sign_error: 測試用：把 SILOG 解析梯度反號
        threads: 執行緒數

    Returns:
        報告字典（checks、max_rel_error、passed 等）
    """
    checks: List[GradCheckReport] = []
    shape = (size, size)

    for k in range(instances):
        rng = np.random.default_rng([seed, k])

        gt = DepthMap.from_array(rng.uniform(1.0, 10.0, shape))
        pred_values = gt.values * np.exp(rng.normal(0.0, 0.2, shape))
        pred = DepthMap.from_array(pred_values)
        image = rng.uniform(0.0, 1.0, shape + (3,))
        w_values = rng.uniform(0.2, 0.95, shape)

        # SILOG 對 pred
        analytic = silog(pred, gt).gradients["pred"]
        if inject_sign_error:
            analytic = -analytic
        checks.append(
            check_gradient(
                lambda v: silog(DepthMap.from_array(v), gt).value,
                pred_values,
                analytic,
                "pred",
                "silog",
                rel_tol=rel_tol,
                abs_floor=abs_floor,
                threads=threads,
            )
        )

        # 平滑 loss 對深度與信心
        for label, values in (("depth", pred_values), ("confidence", w_values)):
            analytic = smoothness(DepthMap.from_array(values), image).gradients["X"]
            kinks = _smoothness_kinks(values, default_steps(values))
            checks.append(
                check_gradient(
                    lambda v: smoothness(DepthMap.from_array(v), image).value,
                    values,
                    analytic,
                    "X",
                    f"smoothness_{label}",
                    kink_mask=kinks,
                    rel_tol=rel_tol,
                    abs_floor=abs_floor,
                    threads=threads,
                )
            )

        # Laplacian NLL 對 W
        analytic = laplacian_nll(ConfidenceMap(w_values), pred, gt).gradients["W"]
        checks.append(
            check_gradient(
                lambda v: laplacian_nll(ConfidenceMap(v), pred, gt).value,
                w_values,
                analytic,
                "W",
                "laplacian_nll",
                rel_tol=rel_tol,
                abs_floor=abs_floor,
                threads=threads,
            )
        )

        # 一致性 loss 對 D̆_tr
        D_r = DepthMap.from_array(rng.uniform(2.0, 8.0, shape))
        breve_values = D_r.values + rng.normal(0.0, 0.5, shape)
        breve_values = np.maximum(breve_values, 0.5)
        S_r = SimilarityMap(rng.uniform(-1.0, 1.0, shape), np.ones(shape, dtype=bool))
        W = ConfidenceMap(w_values)
        cons = consistency(W, D_r, DepthMap.from_array(breve_values), S_r)
        candidates = similarity_mask(S_r, 0.8)
        kinks = _consistency_kinks(
            D_r.values - breve_values, candidates, 0.8, default_steps(breve_values)
        )
        checks.append(
            check_gradient(
                lambda v: consistency(W, D_r, DepthMap.from_array(v), S_r).value,
                breve_values,
                cons.gradients["D_tr"],
                "D_tr",
                "consistency",
                kink_mask=kinks,
                rel_tol=rel_tol,
                abs_floor=abs_floor,
                threads=threads,
            )
        )

        # 經由 warp 鏈對 D̂_t
        K_r, K_t, T_t_r, T_r_t = _chain_instance(rng, size)
        D_r_chain = DepthMap.from_array(rng.uniform(4.0, 6.0, shape))
        _, u_rt = warp_depth(D_r_chain, K_r, K_t, T_t_r)
        D_t_values = rng.uniform(4.0, 6.0, shape)
        D_t = DepthMap.from_array(D_t_values)

        def chain_value(v: np.ndarray) -> float:
            breve = warped_thermal_depth(DepthMap.from_array(v), u_rt, K_t, K_r, T_r_t)
            return consistency(W, D_r_chain, breve, None).value

        breve = warped_thermal_depth(D_t, u_rt, K_t, K_r, T_r_t)
        cons = consistency(W, D_r_chain, breve, None)
        analytic = warped_thermal_depth_vjp(cons.gradients["D_tr"], u_rt, D_t, K_t, K_r, T_r_t)
        rgb_kinks = _consistency_kinks(
            D_r_chain.values - breve.values,
            breve.valid & D_r_chain.valid,
            0.8,
            default_steps(D_t_values).max() * np.ones(shape),
        )
        D_tr_valid = warp_depth(D_t, K_t, K_r, T_r_t)[0].valid
        thermal_kinks = bilinear_sample_adjoint(rgb_kinks.astype(float), u_rt, D_tr_valid) > 0
        checks.append(
            check_gradient(
                chain_value,
                D_t_values,
                analytic,
                "D_t",
                "warp_chain",
                kink_mask=thermal_kinks,
                rel_tol=rel_tol,
                abs_floor=abs_floor,
                threads=threads,
            )
        )

        # 監督式總 loss 經由 warp 鏈對 D̂_t
        D_t_gt = DepthMap.from_array(D_t_values * np.exp(rng.normal(0.0, 0.1, shape)))
        S_ones = SimilarityMap(np.ones(shape), np.ones(shape, dtype=bool))

        def combined_value(v: np.ndarray) -> float:
            student = DepthMap.from_array(v)
            warped = warped_thermal_depth(student, u_rt, K_t, K_r, T_r_t)
            inputs = LossInputs(
                D_r_pred=D_r_chain,
                W=W,
                D_tr_warped=warped,
                S_r=S_ones,
                D_t_pred=student,
                D_r_gt=gt,
                D_t_gt=D_t_gt,
                I_r=image,
            )
            chain = WarpChain(u_rt, student, K_t, K_r, T_r_t)
            return combined_loss(inputs, chain=chain).value

        inputs = LossInputs(
            D_r_pred=D_r_chain,
            W=W,
            D_tr_warped=breve,
            S_r=S_ones,
            D_t_pred=D_t,
            D_r_gt=gt,
            D_t_gt=D_t_gt,
            I_r=image,
        )
        analytic = combined_loss(inputs, chain=WarpChain(u_rt, D_t, K_t, K_r, T_r_t)).gradients[
            "D_t_pred"
        ]
        checks.append(
            check_gradient(
                combined_value,
                D_t_values,
                analytic,
                "D_t",
                "combined_loss",
                kink_mask=thermal_kinks,
                rel_tol=rel_tol,
                abs_floor=abs_floor,
                threads=threads,
            )
        )

    max_rel = max((c.max_rel_error for c in checks), default=0.0)
    passed = all(c.passed for c in checks)
    if not passed:
        failing = sorted({c.name for c in checks if not c.passed})
        logger.warning("梯度檢查失敗: %s", ", ".join(failing))
    return {
        "seed": seed,
        "instances": instances,
        "size": size,
        "rel_tol": rel_tol,
        "abs_floor": abs_floor,
        "max_rel_error": max_rel,
        "num_checked": sum(c.num_checked for c in checks),
        "num_skipped_kinks": sum(c.num_skipped_kinks for c in checks),
        "passed": passed,
        "checks": [
            dict(c.to_dict(), instance=i // CHECKS_PER_INSTANCE) for i, c in enumerate(checks)
        ],
    }
