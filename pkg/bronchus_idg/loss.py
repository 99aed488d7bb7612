# -*- coding: utf-8 -*-
"""
@File    : loss.py
@Description: Voxel-wise BCE, weight-map fusion, the IDG loss and the full weight-map pipeline.
"""

# Input: CT volume (HU), airway ground truth, prediction probabilities, IdgConfig.
# Output: fused loss weight map (Volume3) and scalar losses.

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core.config import IdgConfig, WeightMode
from .core.errors import ProbabilityDomainError
from .distance import DistWeightMap, build_distance_weight_map
from .grid import BinaryMask3, GridShape, Volume3, check_same_shape, normalize_window, plan_tiling_3d
from .intensity import (
    AirwayIntensityModel,
    IntensityWeightMap,
    build_dark_hard_weight_map,
    build_intensity_weight_map,
    fit_airway_model,
)
from .morphology import DilatedRegion, build_dilated_region, skeletonize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossMap:
    """逐体素 BCE, 非负且有限 (概率已截断到 [eps, 1 - eps])。"""
    shape: GridShape
    values: np.ndarray = field(repr=False)

    def mean(self) -> float:
        return float(np.mean(self.values))


# ==============================================================================
# BCE 与融合
# ==============================================================================

def bce_map(pred: Volume3, target: BinaryMask3, eps: float = 1e-7) -> LossMap:
    """
    -[y·ln p + (1 - y)·ln(1 - p)], p 先截断到 [eps, 1 - eps]。
    """
    check_same_shape(pred, target)
    p = pred.data.astype(np.float64)
    if p.min() < 0.0 or p.max() > 1.0:
        raise ProbabilityDomainError(f"预测概率需在 [0, 1] 之内, 实际范围 [{p.min():.4g}, {p.max():.4g}]")
    p = np.clip(p, eps, 1.0 - eps)
    y = target.data
    values = np.where(y, -np.log(p), -np.log1p(-p))
    return LossMap(shape=pred.shape, values=values)


def fuse_weights(w_in: IntensityWeightMap, w_dis: DistWeightMap) -> Volume3:
    """W^in · W^dis, 逐元素相乘。"""
    check_same_shape(w_in, w_dis)
    return Volume3(w_in.shape, w_in.w * w_dis.w)


def idg_loss(bce: LossMap, fused: Volume3) -> float:
    """L_id = mean(L_bce · (W^in · W^dis)), 对体积内全部体素取均值。"""
    check_same_shape(bce, fused)
    return float(np.mean(bce.values * fused.data.astype(np.float64)))


def crop_losses(bce: LossMap, fused: Volume3, window: int = 96, overlap: int = 0) -> List[float]:
    """
    按分块计划 (训练时为不重叠的 96³ 块) 逐块计算 IDG 损失。
    权重图在整幅图像上计算后再裁剪, 强度模型始终来自整幅 CT。
    """
    check_same_shape(bce, fused)
    plan = plan_tiling_3d(bce.shape.extents, window, overlap)
    wx, wy, wz = plan.window
    values = bce.values
    weights = fused.data.astype(np.float64)
    losses = []
    for ox, oy, oz in plan.origins():
        box = (slice(ox, ox + wx), slice(oy, oy + wy), slice(oz, oz + wz))
        losses.append(float(np.mean(values[box] * weights[box])))
    return losses


# ==============================================================================
# 完整流水线
# ==============================================================================

@dataclass(frozen=True)
class WeightMapBundle:
    """融合权重图与全部中间结果。"""
    fused: Volume3
    region: DilatedRegion
    skeleton: Optional[BinaryMask3] = None
    model: Optional[AirwayIntensityModel] = None
    w_in: Optional[IntensityWeightMap] = None
    w_dis: Optional[DistWeightMap] = None


def build_idg_weight_maps(
    image: Volume3,
    airway_gt: BinaryMask3,
    cfg: Optional[IdgConfig] = None,
    threads: int = 1,
) -> WeightMapBundle:
    """
    IDG 权重图流水线。

    阶段 1: HU 窗口归一化到 [0, 1]
    阶段 2: s×s×s 膨胀, 划分 R^inner / R^outer
    阶段 3: 骨架化 (默认对膨胀区域) -> W^dis
    阶段 4: 拟合 N_i / N_o -> W^in
    阶段 5: 按 cfg.weight_mode 组合
    """
    cfg = cfg or IdgConfig()
    check_same_shape(image, airway_gt)
    mode = WeightMode(cfg.weight_mode)
    shape = image.shape
    ones = np.ones(shape.extents, dtype=np.float64)

    # 阶段 1
    lo, hi = cfg.hu_window
    image_norm = normalize_window(image, lo, hi)

    # 阶段 2
    logger.info("阶段 2: 膨胀气道掩码 (s=%d)", cfg.kernel_size)
    region = build_dilated_region(airway_gt, cfg.kernel_size)

    if mode is WeightMode.NONE:
        return WeightMapBundle(fused=Volume3(shape, ones), region=region)
    if mode is WeightMode.DILATION:
        return WeightMapBundle(fused=Volume3(shape, np.where(region.dilated.data, 2.0, 1.0)), region=region)

    # 阶段 3
    skeleton = None
    w_dis = None
    if mode in (WeightMode.DISTANCE, WeightMode.FULL):
        source = region.dilated if cfg.skeleton_source == "dilated" else airway_gt
        logger.info("阶段 3: 骨架化 (%s) 并计算距离权重图", cfg.skeleton_source)
        skeleton = skeletonize(source)
        w_dis = build_distance_weight_map(region, skeleton, shape.spacing)

    # 阶段 4
    model = None
    w_in = None
    if mode in (WeightMode.INTENSITY, WeightMode.FULL, WeightMode.DARK_HARD):
        logger.info("阶段 4: 拟合气道强度模型并计算强度权重图")
        model = fit_airway_model(image_norm, airway_gt, cfg)
        builder = build_dark_hard_weight_map if mode is WeightMode.DARK_HARD else build_intensity_weight_map
        w_in = builder(image_norm, region, model, cfg, threads=threads)
        logger.info(
            "N_i=(%.4f, %.4f) N_o=(%.4f, %.4f)", model.mu_in, model.sigma_in, model.mu_out, model.sigma_out
        )

    # 阶段 5
    if mode is WeightMode.FULL:
        fused = fuse_weights(w_in, w_dis)
    elif mode is WeightMode.DISTANCE:
        fused = w_dis.as_volume()
    elif mode is WeightMode.DARK_HARD:
        # 消融配置中该变体叠加在 "膨胀区域权重为 2" 之上
        fused = Volume3(shape, w_in.w * np.where(region.dilated.data, 2.0, 1.0))
    else:
        fused = w_in.as_volume()

    return WeightMapBundle(fused=fused, region=region, skeleton=skeleton, model=model, w_in=w_in, w_dis=w_dis)


def compute_idg_weightmap(image: Volume3, airway_gt: BinaryMask3, cfg: Optional[IdgConfig] = None) -> Volume3:
    """完整流水线的融合权重图 (默认 W^in · W^dis)。"""
    return build_idg_weight_maps(image, airway_gt, cfg).fused
