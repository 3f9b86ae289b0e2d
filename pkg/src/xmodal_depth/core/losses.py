"""訓練 loss：數值與解析梯度

每個 loss 只對宣告為可微分的輸入回傳梯度；其餘輸入視為 stop-gradient。
所有歸約都在布林索引後的一維連續陣列上以 np.sum（成對加總）完成，
因此結果在多次執行間位元一致。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .errors import ConfigurationError, DomainError, EmptyMaskError
from .geometry import CameraIntrinsics, DepthMap, PixelCoordGrid, RigidTransform
from .geometry import warped_thermal_depth_vjp
from .imagery import SimilarityMap

logger = logging.getLogger(__name__)

CONF_MIN = 1e-6
CONF_MAX = 1.0 - 1e-6

FLAG_NON_DIFFERENTIABLE = "non_differentiable"
FLAG_EMPTY_KEPT_SET = "empty_kept_set"


@dataclass(eq=False)
class ConfidenceMap:
    """逐像素信心 Ŵ_r"""

    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.values.shape:
            raise DomainError("信心圖與遮罩形狀不一致")

    @property
    def shape(self):
        return self.values.shape


def clamp_confidence(values: np.ndarray) -> np.ndarray:
    """將信心限制在 [1e-6, 1−1e-6]"""
    return np.clip(np.asarray(values, dtype=np.float64), CONF_MIN, CONF_MAX)


@dataclass
class LossWeights:
    """loss 權重

    alpha/beta/gamma/lambda_comb 為總 loss 的項權重，lambda_silog 為 SILOG 的
    尺度項係數，beta_nll 為 Laplacian NLL 內的 β。
    """

    alpha: float = 0.2
    beta: float = 0.1
    gamma: float = 0.01
    lambda_comb: float = 0.001
    lambda_silog: float = 0.15
    beta_nll: float = 0.1
    keep_fraction: float = 0.8
    sim_keep: float = 0.8

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lambda_comb", "lambda_silog", "beta_nll"):
            if getattr(self, name) < 0:
                raise DomainError(f"權重 {name} 不可為負值")


@dataclass
class LossResult:
    """loss 數值與梯度"""

    name: str
    value: float
    gradients: Dict[str, np.ndarray] = field(default_factory=dict)
    num_pixels_kept: int = 0
    flags: List[str] = field(default_factory=list)
    terms: Dict[str, float] = field(default_factory=dict)

    def to_report(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "value": float(self.value),
            "num_pixels_kept": int(self.num_pixels_kept),
            "grad_norms": {k: float(np.linalg.norm(g)) for k, g in sorted(self.gradients.items())},
        }


def _total(values: np.ndarray) -> float:
    return float(np.sum(np.ascontiguousarray(values, dtype=np.float64).ravel()))


def _check_fraction(keep_fraction: float) -> None:
    if not 0.0 < keep_fraction <= 1.0:
        raise DomainError(f"keep_fraction 必須位於 (0, 1]: {keep_fraction}")


def trim_mask(residuals: np.ndarray, valid: np.ndarray, keep_fraction: float) -> np.ndarray:
    """
    保留殘差不超過 keep_fraction 分位數的有效像素

    Args:
        residuals: H×W 殘差
        valid: 有效遮罩
        keep_fraction: 保留比例 (0, 1]

    Returns:
        保留遮罩；沒有有效像素時為全 False
    """
    _check_fraction(keep_fraction)
    valid = np.asarray(valid, dtype=bool)
    if keep_fraction == 1.0 or not np.any(valid):
        return valid.copy()
    res = np.asarray(residuals, dtype=np.float64)
    q = np.quantile(res[valid], keep_fraction)
    return valid & (np.where(valid, res, np.inf) <= q)


def similarity_mask(S_r: SimilarityMap, keep_fraction: float) -> np.ndarray:
    """保留相似度不低於 (1 − keep_fraction) 分位數的有效像素"""
    _check_fraction(keep_fraction)
    valid = np.asarray(S_r.valid, dtype=bool)
    if keep_fraction == 1.0 or not np.any(valid):
        return valid.copy()
    sim = np.asarray(S_r.values, dtype=np.float64)
    q = np.quantile(sim[valid], 1.0 - keep_fraction)
    return valid & (np.where(valid, sim, -np.inf) >= q)


def silog(pred: DepthMap, gt: DepthMap, lambda_silog: float = 0.15) -> LossResult:
    """
    尺度不變對數 loss（SILOG），梯度對 pred

    value = sqrt((1/N)Σg² − (λ/N²)(Σg)²)，g = log pred − log gt

    Raises:
        EmptyMaskError: 沒有共同有效像素
    """
    mask = pred.valid & gt.valid
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EmptyMaskError("SILOG 沒有共同有效像素")

    g = np.log(pred.values[mask]) - np.log(gt.values[mask])
    sum_sq = _total(g * g)
    sum_g = _total(g)
    inner = max(sum_sq / n - lambda_silog * sum_g * sum_g / (n * n), 0.0)
    value = float(np.sqrt(inner))

    grad = np.zeros(pred.shape)
    flags: List[str] = []
    if value > 0.0:
        grad[mask] = (g / n - lambda_silog * sum_g / (n * n)) / (value * pred.values[mask])
    else:
        flags.append(FLAG_NON_DIFFERENTIABLE)
    return LossResult("silog", value, {"pred": grad}, n, flags)


def laplacian_nll(
    W: ConfidenceMap,
    pred: DepthMap,
    gt: DepthMap,
    beta: float = 0.1,
    keep_fraction: float = 0.8,
) -> LossResult:
    """
    Laplacian 負對數似然，梯度只對 W（pred 與 gt 為 stop-gradient）

    value = (1/N)Σ [W·|pred − gt| − β·log W]，N 為修剪後的像素數。W 先夾限到
    [1e-6, 1 − 1e-6]；超出範圍的像素梯度為 0。

    Raises:
        DomainError: 任何參與像素的 W ≤ 0
        EmptyMaskError: gt 沒有有效像素
    """
    base = pred.valid & gt.valid & W.valid
    if not np.any(base):
        raise EmptyMaskError("NLL 沒有有效像素")
    if np.any(W.values[base] <= 0):
        raise DomainError("信心值必須為正")

    abs_res = np.abs(pred.values - gt.values)
    kept = trim_mask(abs_res, base, keep_fraction)
    n = int(np.count_nonzero(kept))

    raw = W.values[kept]
    w = clamp_confidence(raw)
    r = abs_res[kept]
    value = _total(w * r - beta * np.log(w)) / n

    # 夾限生效的像素數值對 W 為常數
    active = (raw >= CONF_MIN) & (raw <= CONF_MAX)
    grad = np.zeros(W.shape)
    grad[kept] = np.where(active, (r - beta / w) / n, 0.0)
    return LossResult("laplacian_nll", value, {"W": grad}, n)


def consistency(
    W: ConfidenceMap,
    D_r: DepthMap,
    D_tr: DepthMap,
    S_r: Optional[SimilarityMap],
    keep_fraction: float = 0.8,
    sim_keep: float = 0.8,
    normalize_by: str = "kept",
) -> LossResult:
    """
    信心加權 L1 一致性 loss，梯度只對 D̆_tr

    保留集合 = 有效 ∩ 相似度遮罩 ∩ 殘差修剪遮罩；W 與 D̂_r 為 stop-gradient。
    W 視為非負權重（不做夾限），因此數值對 W 為線性。

    Args:
        W: 信心圖
        D_r: RGB 教師預測 D̂_r
        D_tr: RGB 網格上的 D̆_tr
        S_r: 特徵相似度（None 表示不套用相似度遮罩）
        keep_fraction: 殘差修剪保留比例
        sim_keep: 相似度保留比例
        normalize_by: "kept" 以修剪後像素數正規化，"valid" 以修剪前的有效像素數
    """
    if normalize_by not in ("kept", "valid"):
        raise ConfigurationError(f"未知的正規化方式: {normalize_by}")

    base = D_r.valid & D_tr.valid & W.valid
    if S_r is not None:
        candidates = base & similarity_mask(
            SimilarityMap(S_r.values, np.asarray(S_r.valid, bool) & base), sim_keep
        )
    else:
        candidates = base

    residual = D_r.values - D_tr.values
    kept = trim_mask(np.abs(residual), candidates, keep_fraction)
    m = int(np.count_nonzero(kept)) if normalize_by == "kept" else int(np.count_nonzero(base))

    grad = np.zeros(D_tr.shape)
    if m == 0 or not np.any(kept):
        logger.warning("一致性 loss 的保留集合為空")
        return LossResult("consistency", 0.0, {"D_tr": grad}, 0, [FLAG_EMPTY_KEPT_SET])

    w = W.values[kept]
    if np.any(w < 0):
        raise DomainError("一致性權重不可為負值")
    value = _total(w * np.abs(residual[kept])) / m
    grad[kept] = -w * np.sign(residual[kept]) / m
    return LossResult("consistency", value, {"D_tr": grad}, int(np.count_nonzero(kept)))


def _channel_mean(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def smoothness(X: Union[DepthMap, ConfidenceMap], I_r: np.ndarray) -> LossResult:
    """
    邊緣感知平滑 loss，梯度對 X

    內部像素（可同時取 x、y 前向差分者）上平均
    |∇x X|·exp(−|∇x Ī|) + |∇y X|·exp(−|∇y Ī|)，Ī 為通道平均影像。
    |·| 在 0 的次梯度取 0。
    """
    values = np.asarray(X.values, dtype=np.float64)
    valid = np.asarray(X.valid, dtype=bool)
    gray = _channel_mean(I_r)
    if gray.shape != values.shape:
        raise DomainError("平滑 loss 的影像與輸入形狀不一致")

    grad = np.zeros(values.shape)
    height, width = values.shape
    if height < 2 or width < 2:
        return LossResult("smoothness", 0.0, {"X": grad}, 0)

    center = values[:-1, :-1]
    dx = values[:-1, 1:] - center
    dy = values[1:, :-1] - center
    wx = np.exp(-np.abs(gray[:-1, 1:] - gray[:-1, :-1]))
    wy = np.exp(-np.abs(gray[1:, :-1] - gray[:-1, :-1]))
    interior = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1]
    n = int(np.count_nonzero(interior))
    if n == 0:
        return LossResult("smoothness", 0.0, {"X": grad}, 0)

    value = _total(np.abs(dx[interior]) * wx[interior] + np.abs(dy[interior]) * wy[interior]) / n

    sx = np.where(interior, np.sign(dx) * wx, 0.0) / n
    sy = np.where(interior, np.sign(dy) * wy, 0.0) / n
    grad[:-1, 1:] += sx
    grad[:-1, :-1] -= sx
    grad[1:, :-1] += sy
    grad[:-1, :-1] -= sy
    return LossResult("smoothness", value, {"X": grad}, n)


@dataclass(eq=False)
class WarpChain:
    """把 D̆_tr 的梯度傳回 D̂_t 所需的幾何"""

    u_rt: PixelCoordGrid
    D_t_pred: DepthMap
    K_t: CameraIntrinsics
    K_r: CameraIntrinsics
    T_r_t: RigidTransform


@dataclass(eq=False)
class LossInputs:
    """總 loss 的輸入集合"""

    D_r_pred: Optional[DepthMap] = None
    W: Optional[ConfidenceMap] = None
    D_tr_warped: Optional[DepthMap] = None
    S_r: Optional[SimilarityMap] = None
    D_t_pred: Optional[DepthMap] = None
    D_r_gt: Optional[DepthMap] = None
    D_t_gt: Optional[DepthMap] = None
    I_r: Optional[np.ndarray] = None


SUPERVISED_INPUTS = ("D_r_pred", "W", "D_tr_warped", "S_r", "D_t_pred", "D_r_gt", "D_t_gt", "I_r")
SSFT_INPUTS = ("D_r_pred", "W", "D_tr_warped", "S_r")


def combined_loss(
    inputs: LossInputs,
    weights: Optional[LossWeights] = None,
    supervised: bool = True,
    chain: Optional[WarpChain] = None,
    normalize_by: str = "kept",
) -> LossResult:
    """
    總 loss

    supervised:
        L_silog_r + L_silog_t + α·L_cons + β·L_nll + γ·L_sm(D̂_r) + λ·L_sm(Ŵ_r)
    自監督微調（SSFT）:
        α·L_cons

    梯度鍵：D_r_pred、D_t_pred、D_tr_warped、W（SSFT 只有 D_tr_warped，提供
    chain 時另加 D_t_pred）。

    Raises:
        ConfigurationError: 缺少必要輸入
    """
    weights = weights or LossWeights()
    required = SUPERVISED_INPUTS if supervised else SSFT_INPUTS
    missing = [name for name in required if getattr(inputs, name) is None]
    if missing:
        mode = "supervised" if supervised else "SSFT"
        raise ConfigurationError(f"{mode} 模式缺少輸入: {', '.join(missing)}")

    cons = consistency(
        inputs.W,
        inputs.D_r_pred,
        inputs.D_tr_warped,
        inputs.S_r,
        keep_fraction=weights.keep_fraction,
        sim_keep=weights.sim_keep,
        normalize_by=normalize_by,
    )
    grad_breve = weights.alpha * cons.gradients["D_tr"]
    terms = {"consistency": cons.value}
    flags = list(cons.flags)

    if not supervised:
        gradients = {"D_tr_warped": grad_breve}
        if chain is not None:
            gradients["D_t_pred"] = warped_thermal_depth_vjp(
                grad_breve, chain.u_rt, chain.D_t_pred, chain.K_t, chain.K_r, chain.T_r_t
            )
        value = weights.alpha * cons.value
        return LossResult("combined_ssft", value, gradients, cons.num_pixels_kept, flags, terms)

    silog_r = silog(inputs.D_r_pred, inputs.D_r_gt, weights.lambda_silog)
    silog_t = silog(inputs.D_t_pred, inputs.D_t_gt, weights.lambda_silog)
    nll = laplacian_nll(
        inputs.W, inputs.D_r_pred, inputs.D_r_gt, weights.beta_nll, weights.keep_fraction
    )
    sm_depth = smoothness(inputs.D_r_pred, inputs.I_r)
    sm_conf = smoothness(inputs.W, inputs.I_r)

    terms.update(
        {
            "silog_r": silog_r.value,
            "silog_t": silog_t.value,
            "laplacian_nll": nll.value,
            "smoothness_depth": sm_depth.value,
            "smoothness_confidence": sm_conf.value,
        }
    )
    for term in (silog_r, silog_t):
        flags.extend(f"{term.name}:{f}" for f in term.flags)

    value = (
        silog_r.value
        + silog_t.value
        + weights.alpha * cons.value
        + weights.beta * nll.value
        + weights.gamma * sm_depth.value
        + weights.lambda_comb * sm_conf.value
    )

    grad_t = silog_t.gradients["pred"].copy()
    if chain is not None:
        grad_t += warped_thermal_depth_vjp(
            grad_breve, chain.u_rt, chain.D_t_pred, chain.K_t, chain.K_r, chain.T_r_t
        )
    gradients = {
        "D_r_pred": silog_r.gradients["pred"] + weights.gamma * sm_depth.gradients["X"],
        "D_t_pred": grad_t,
        "D_tr_warped": grad_breve,
        "W": weights.beta * nll.gradients["W"] + weights.lambda_comb * sm_conf.gradients["X"],
    }
    return LossResult("combined", value, gradients, cons.num_pixels_kept, flags, terms)
