# -*- coding: utf-8 -*-
"""
@File    : distance.py
@Description: Exact Euclidean distance transform and the distance-prior weight map W^dis.
"""

# Input: seed masks (skeletons), dilated regions, voxel spacing.
# Output: squared-distance fields and W^dis.

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core.errors import NoSeedError, PreconditionError
from .grid import BinaryMask3, GridShape, Volume3, check_same_shape
from .morphology import DilatedRegion

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistanceField:
    """d2: 每个体素到最近种子体素的平方距离 (mm²); d_max: 指定区域内的最大距离 (mm)。"""
    shape: GridShape
    d2: np.ndarray = field(repr=False)
    d_max: float

    @property
    def distance(self) -> np.ndarray:
        return np.sqrt(self.d2)


@dataclass(frozen=True)
class DistWeightMap:
    """W^dis, 取值 [1, 2], 膨胀区域外恒为 1。"""
    shape: GridShape
    w: np.ndarray = field(repr=False)

    def as_volume(self) -> Volume3:
        return Volume3(self.shape, self.w)


def edt_squared(
    seeds: BinaryMask3,
    spacing: Optional[Sequence[float]] = None,
    region: Optional[BinaryMask3] = None,
) -> DistanceField:
    """
    精确欧氏距离变换 (可分离、各向异性间距)。

    Args:
        seeds: 种子体素 (距离为 0 的位置), 不能为空。
        spacing: 各轴体素间距 (mm), 默认取 seeds 自带的间距。
        region: 计算 d_max 的区域, 默认整个网格。

    Returns:
        DistanceField, 种子处 d2 恰好为 0。
    """
    if seeds.is_empty():
        raise NoSeedError("种子集合为空, 距离变换无定义")
    sampling = tuple(float(s) for s in (spacing if spacing is not None else seeds.shape.spacing))
    # distance_transform_edt 计算非零体素到最近零体素的距离, 因此对种子取反
    dist = ndimage.distance_transform_edt(~seeds.data, sampling=sampling)
    d2 = np.square(dist)
    d2[seeds.data] = 0.0

    if region is not None:
        check_same_shape(seeds, region)
        d_max = float(dist[region.data].max()) if region.data.any() else 0.0
    else:
        d_max = float(dist.max())
    shape = GridShape.of(seeds.shape.extents, sampling)
    return DistanceField(shape=shape, d2=d2, d_max=d_max)


def build_distance_weight_map(
    region: DilatedRegion,
    skeleton: BinaryMask3,
    spacing: Optional[Sequence[float]] = None,
) -> DistWeightMap:
    """
    W^dis = 1 + (1 - d(p) / d_max) 在 R^dilation 内, 其余位置为 1。

    d_max 是 R^dilation 内到骨架的最大距离 (全局归一化常数);
    d_max = 0 时 (骨架覆盖整个膨胀区域) 区域内权重取 2。
    """
    check_same_shape(region.dilated, skeleton)
    if skeleton.is_empty():
        raise PreconditionError("骨架为空, 无法构建距离权重图")
    if (skeleton.data & ~region.dilated.data).any():
        raise PreconditionError("骨架必须包含在膨胀区域之内")

    field_ = edt_squared(skeleton, spacing, region=region.dilated)
    inside = region.dilated.data
    w = np.ones(skeleton.shape.extents, dtype=np.float64)
    if field_.d_max > 0:
        w[inside] = 2.0 - field_.distance[inside] / field_.d_max
    else:
        w[inside] = 2.0
    logger.debug("W^dis: d_max=%.4f mm, 区域体素 %d", field_.d_max, int(inside.sum()))
    return DistWeightMap(shape=skeleton.shape, w=w)
