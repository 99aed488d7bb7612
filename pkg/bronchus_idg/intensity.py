# -*- coding: utf-8 -*-
"""
@File    : intensity.py
@Description: Per-case airway intensity model, difficulty ramp F and intensity-prior weight map W^in.
"""

# Input: normalized CT volume ([0, 1]), airway mask, dilated region, IdgConfig.
# Output: AirwayIntensityModel and W^in.
#
# 两条强度先验:
#   气道外 (R^outer): 越暗 (越接近气道强度) 越难, 权重越大;
#   气道内 (R^inner): 越亮越难, 权重越大。

import logging
from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from .core.config import IdgConfig
from .core.errors import EmptyMaskError, NormalizationError, ParameterError
from .grid import BinaryMask3, GridShape, Volume3, check_same_shape
from .morphology import DilatedRegion
from .utils.parallel import map_slabs

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class AirwayIntensityModel(BaseModel):
    """
    单个病例的强度分布参数。

    (mu_in, sigma_in): 气道内强度的高斯拟合 N_i;
    (mu_out, sigma_out): 背景难度值 d_o(x) = 1 - (x - mu_in) 的高斯拟合 N_o。
    """
    mu_in: float
    sigma_in: float
    mu_out: float
    sigma_out: float
    n_in: int
    n_out: int

    model_config = ConfigDict(frozen=True)

    def outer_difficulty(self, x: ArrayLike) -> ArrayLike:
        """背景难度值 d_o(x) = 1 - (x - mu_in)。"""
        return 1.0 - (x - self.mu_in)


@dataclass(frozen=True)
class IntensityWeightMap:
    """W^in, 取值 [1, 1 + w_dila], 膨胀区域外恒为 1。"""
    shape: GridShape
    w: np.ndarray = field(repr=False)

    def as_volume(self) -> Volume3:
        return Volume3(self.shape, self.w)


def _require_normalized(image_norm: Volume3) -> np.ndarray:
    x = image_norm.data.astype(np.float64)
    if x.min() < 0.0 or x.max() > 1.0:
        raise NormalizationError(
            f"图像强度需归一化到 [0, 1], 实际范围 [{x.min():.4g}, {x.max():.4g}]"
        )
    return x


# ==============================================================================
# 强度模型拟合
# ==============================================================================

def fit_airway_model(image_norm: Volume3, airway: BinaryMask3, cfg: IdgConfig) -> AirwayIntensityModel:
    """
    拟合 N_i 与 N_o。

    流程:
    1. 取气道内体素强度集合 (掩码索引), 计算均值与总体标准差 -> (mu_in, sigma_in)
    2. 对气道补集 M^c 的每个体素计算 d_o(x) = 1 - (x - mu_in)
    3. 计算 d_o 的均值与总体标准差 -> (mu_out, sigma_out)
    两个标准差都不低于 cfg.sigma_floor。
    """
    check_same_shape(image_norm, airway)
    if airway.is_empty():
        raise EmptyMaskError("气道掩码为空, 无法拟合强度模型")
    x = _require_normalized(image_norm)

    inside = x[airway.data]
    # numpy 的 mean/std 使用成对求和, 结果与线程数无关
    mu_in = float(np.mean(inside))
    sigma_in = float(np.std(inside))

    outside = x[~airway.data]
    if outside.size == 0:
        # 整个网格都是气道: 背景分布退化, 以 d_o(mu_in) = 1 为中心
        mu_out, sigma_out, n_out = 1.0, 0.0, 1
    else:
        d_o = 1.0 - (outside - mu_in)
        mu_out = float(np.mean(d_o))
        sigma_out = float(np.std(d_o))
        n_out = int(outside.size)

    return AirwayIntensityModel(
        mu_in=mu_in,
        sigma_in=max(sigma_in, cfg.sigma_floor),
        mu_out=mu_out,
        sigma_out=max(sigma_out, cfg.sigma_floor),
        n_in=int(inside.size),
        n_out=n_out,
    )


# ==============================================================================
# 难度函数 F
# ==============================================================================

def difficulty_F(mu: float, sigma: float, theta: float, x: ArrayLike) -> ArrayLike:
    """
    截断线性斜坡:
        x ≥ μ + θσ       -> 1
        x ≤ μ − θσ       -> 0
        其余              -> (x − (μ − θσ)) / (2θσ)
    在两个分界点处连续, 关于 x 单调不减。
    """
    if not sigma > 0:
        raise ParameterError(f"sigma 必须为正, 收到 {sigma}")
    if not theta > 0:
        raise ParameterError(f"theta 必须为正, 收到 {theta}")
    lo = mu - theta * sigma
    hi = mu + theta * sigma
    x_arr = np.asarray(x, dtype=np.float64)
    ramp = np.clip((x_arr - lo) / (2.0 * theta * sigma), 0.0, 1.0)
    out = np.where(x_arr >= hi, 1.0, np.where(x_arr <= lo, 0.0, ramp))
    if np.ndim(x) == 0:
        return float(out)
    return out


# ==============================================================================
# 强度权重图 W^in
# ==============================================================================

def _weight_slabs(x: np.ndarray, outer: np.ndarray, inner: np.ndarray,
                  model: AirwayIntensityModel, cfg: IdgConfig, threads: int,
                  dark_hard: bool) -> np.ndarray:

    def evaluate(z0: int, z1: int) -> np.ndarray:
        xs = x[..., z0:z1]
        w = np.ones(xs.shape, dtype=np.float64)
        out_sel = outer[..., z0:z1]
        in_sel = inner[..., z0:z1]
        if dark_hard:
            out_sel = out_sel | in_sel
        d_o = model.outer_difficulty(xs[out_sel])
        w[out_sel] = 1.0 + cfg.w_dila * difficulty_F(model.mu_out, model.sigma_out, cfg.theta, d_o)
        if not dark_hard:
            w[in_sel] = 1.0 + cfg.w_dila * difficulty_F(model.mu_in, model.sigma_in, cfg.theta, xs[in_sel])
        return w

    return map_slabs(evaluate, x.shape[2], threads)


def build_intensity_weight_map(
    image_norm: Volume3,
    region: DilatedRegion,
    model: AirwayIntensityModel,
    cfg: IdgConfig,
    threads: int = 1,
) -> IntensityWeightMap:
    """
    W^in:
        p ∈ R^outer: 1 + w_dila · F(N_o, d_o(I(p)))
        p ∈ R^inner: 1 + w_dila · F(N_i, I(p))
        p ∉ R^dilation: 1
    外部体素先做与拟合时相同的翻转 d_o, 使 F 的定义域与 N_o 的拟合域一致。
    """
    check_same_shape(image_norm, region.dilated)
    x = _require_normalized(image_norm)
    w = _weight_slabs(x, region.outer.data, region.inner.data, model, cfg, threads, dark_hard=False)
    return IntensityWeightMap(shape=image_norm.shape, w=w)


def build_dark_hard_weight_map(
    image_norm: Volume3,
    region: DilatedRegion,
    model: AirwayIntensityModel,
    cfg: IdgConfig,
    threads: int = 1,
) -> IntensityWeightMap:
    """
    单规则变体: R^dilation 内所有体素 (不区分内外) 都按 "越暗越难" 用 F(N_o, d_o(I(p))) 打分。
    """
    check_same_shape(image_norm, region.dilated)
    x = _require_normalized(image_norm)
    w = _weight_slabs(x, region.outer.data, region.inner.data, model, cfg, threads, dark_hard=True)
    return IntensityWeightMap(shape=image_norm.shape, w=w)


def airway_intensity_profile(image_norm: Volume3, airway: BinaryMask3, bins: int = 64) -> Dict[str, np.ndarray]:
    """
    气道内/外归一化强度直方图 (区间在 [0, 1] 上均匀划分), 用于观察两类分布的重叠程度。
    """
    check_same_shape(image_norm, airway)
    if bins < 2:
        raise ParameterError(f"bins 至少为 2, 收到 {bins}")
    x = _require_normalized(image_norm)
    edges = np.linspace(0.0, 1.0, bins + 1)
    airway_counts, _ = np.histogram(x[airway.data], bins=edges)
    background_counts, _ = np.histogram(x[~airway.data], bins=edges)
    return {"edges": edges, "airway": airway_counts, "background": background_counts}
