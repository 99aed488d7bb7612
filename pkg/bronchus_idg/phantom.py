# -*- coding: utf-8 -*-
"""
@File    : phantom.py
@Description: Deterministic synthetic bronchial-tree phantoms (CT-like image + airway mask).
"""

# Input: PhantomSpec (inline or from TOML).
# Output: PhantomCase with image (HU), airway mask, dark confusable pockets and the capsule segments.
#
# 几何以体素为单位; spacing 只写入网格头部。
# 所有随机数来自以 (seed, 流编号) 为密钥的 Philox 计数器生成器, 按体素线性索引 (x 最快) 取值。

import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import ndimage

from .core.config import read_toml_table
from .core.errors import GeometryError
from .distance import DistWeightMap
from .grid import BinaryMask3, GridShape, Volume3, check_same_shape, normalize_window
from .morphology import DilatedRegion
from .utils.parallel import map_slabs

logger = logging.getLogger(__name__)

_NOISE_STREAM = 0
_POCKET_STREAM = 1

# 口袋中心到气道的棋盘距离范围; 加上口袋半径后仍落在 s=19 的膨胀区域内 (≤ 9)
_POCKET_CENTER_MIN = 4
_POCKET_CENTER_MAX = 7
_POCKET_REACH = 9


class PhantomSpec(BaseModel):
    """合成气道树的全部生成参数, 生成结果是该参数的纯函数。"""
    grid_size: Tuple[int, int, int] = (64, 64, 64)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    depth: int = Field(default=3, ge=1)
    root_radius: float = Field(default=4.0, ge=1.0)
    radius_decay: float = Field(default=0.75, gt=0.0, lt=1.0)
    root_length: float = Field(default=20.0, gt=0.0)
    length_decay: float = Field(default=0.75, gt=0.0, le=1.0)
    branch_angle_deg: float = Field(default=35.0, gt=0.0, lt=90.0)

    # 归一化强度 ([0, 1], 对应 hu_window)
    airway_mu: float = Field(default=0.1, ge=0.0, le=1.0)
    airway_sigma: float = Field(default=0.02, ge=0.0)
    wall_intensity: float = Field(default=0.6, ge=0.0, le=1.0)
    wall_thickness: float = Field(default=1.5, ge=0.0)
    parenchyma_mu: float = Field(default=0.2, ge=0.0, le=1.0)
    parenchyma_sigma: float = Field(default=0.03, ge=0.0)

    n_confusable_pockets: int = Field(default=6, ge=0)
    pocket_offset: float = 0.02
    pocket_radius: float = Field(default=2.0, gt=0.0, le=2.0)

    seed: int = Field(default=0, ge=0, lt=2**64)
    hu_window: Tuple[float, float] = (-1000.0, 600.0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("grid_size")
    @classmethod
    def _positive_grid(cls, v):
        if min(v) < 3:
            raise ValueError(f"grid_size 每个轴至少为 3, 收到 {v}")
        return v

    @field_validator("spacing")
    @classmethod
    def _positive_spacing(cls, v):
        if min(v) <= 0:
            raise ValueError(f"spacing 必须为正, 收到 {v}")
        return v

    @property
    def n_segments(self) -> int:
        return 2 ** self.depth - 1

    @property
    def leaf_radius(self) -> float:
        return self.root_radius * self.radius_decay ** (self.depth - 1)


@dataclass(frozen=True)
class Capsule:
    """圆柱 + 两端半球; start/end 为体素坐标。"""
    start: Tuple[float, float, float]
    end: Tuple[float, float, float]
    radius: float
    generation: int

    @property
    def direction(self) -> np.ndarray:
        v = np.subtract(self.end, self.start)
        return v / np.linalg.norm(v)


@dataclass(frozen=True)
class PhantomCase:
    spec: PhantomSpec
    image: Volume3
    mask: BinaryMask3
    pockets: BinaryMask3
    wall: BinaryMask3 = field(repr=False)
    segments: List[Capsule] = field(repr=False)

    @property
    def n_segments(self) -> int:
        return len(self.segments)


def load_phantom_spec(path: str | os.PathLike) -> PhantomSpec:
    """从 TOML 读取 PhantomSpec (顶层键或 [phantom] 表)。"""
    return PhantomSpec(**read_toml_table(path, "phantom"))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed + (stream << 64)))


def _normal_field(seed: int, extents: Sequence[int]) -> np.ndarray:
    """标准正态场, 第 i 个随机数属于线性索引为 i 的体素。"""
    n = int(np.prod(extents))
    return _rng(seed, _NOISE_STREAM).standard_normal(n).reshape(tuple(extents), order="F")


# ==============================================================================
# 树几何
# ==============================================================================

def _perpendicular(d: np.ndarray, axis: int) -> np.ndarray:
    for a in (axis, (axis + 1) % 3, (axis + 2) % 3):
        e = np.zeros(3)
        e[a] = 1.0
        p = e - np.dot(e, d) * d
        norm = np.linalg.norm(p)
        if norm > 1e-6:
            return p / norm
    raise GeometryError("无法为分支方向构造垂直向量")


def build_tree(spec: PhantomSpec) -> List[Capsule]:
    """
    满二叉树: 根从网格顶部中心沿 -z 方向出发, 每代分支在交替的平面 (xz / yz) 内向两侧偏转 branch_angle。
    结果按代 (广度优先) 排列, 叶子在最后。
    """
    nx_, ny_, nz_ = spec.grid_size
    margin = spec.root_radius + spec.wall_thickness + 1.0
    start = np.array([(nx_ - 1) / 2.0, (ny_ - 1) / 2.0, nz_ - 1 - margin])
    root = Capsule(
        start=tuple(start),
        end=tuple(start + np.array([0.0, 0.0, -spec.root_length])),
        radius=spec.root_radius,
        generation=0,
    )
    angle = math.radians(spec.branch_angle_deg)
    segments = [root]
    frontier = [root]
    for gen in range(1, spec.depth):
        radius = spec.root_radius * spec.radius_decay ** gen
        length = spec.root_length * spec.length_decay ** gen
        nxt = []
        for parent in frontier:
            d = parent.direction
            p = _perpendicular(d, axis=0 if gen % 2 == 1 else 1)
            for sign in (1.0, -1.0):
                child_dir = math.cos(angle) * d + sign * math.sin(angle) * p
                a = np.asarray(parent.end)
                child = Capsule(start=tuple(a), end=tuple(a + length * child_dir), radius=radius, generation=gen)
                nxt.append(child)
        segments.extend(nxt)
        frontier = nxt
    return segments


def _check_fits(spec: PhantomSpec, segments: Sequence[Capsule]) -> None:
    if spec.leaf_radius < 1.0:
        raise GeometryError(f"叶分支半径 {spec.leaf_radius:.3f} < 1 体素, 请减小 depth 或增大 root_radius")
    upper = np.asarray(spec.grid_size, dtype=float) - 1.0
    for seg in segments:
        pad = seg.radius + spec.wall_thickness
        for point in (seg.start, seg.end):
            p = np.asarray(point)
            if (p - pad < 0).any() or (p + pad > upper).any():
                raise GeometryError(
                    f"第 {seg.generation} 代分支超出网格 {spec.grid_size}: 端点 {np.round(p, 2).tolist()}, 半径 {pad:.2f}"
                )


# ==============================================================================
# 栅格化
# ==============================================================================

def _signed_tube_distance(extents: Sequence[int], segments: Sequence[Capsule], threads: int = 1) -> np.ndarray:
    """到管壁的有符号距离 min_i(|p - seg_i| - r_i), 管内为负。"""
    nx_, ny_, nz_ = extents
    xs = np.arange(nx_, dtype=np.float64)
    ys = np.arange(ny_, dtype=np.float64)

    def evaluate(z0: int, z1: int) -> np.ndarray:
        gx, gy, gz = np.meshgrid(xs, ys, np.arange(z0, z1, dtype=np.float64), indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1)
        best = np.full(gx.shape, np.inf)
        for seg in segments:
            a = np.asarray(seg.start)
            v = np.subtract(seg.end, seg.start)
            t = np.clip(((pts - a) @ v) / float(v @ v), 0.0, 1.0)
            nearest = a + t[..., None] * v
            dist = np.linalg.norm(pts - nearest, axis=-1) - seg.radius
            np.minimum(best, dist, out=best)
        return best

    return map_slabs(evaluate, nz_, threads)


def rasterize_tree(shape: GridShape, segments: Sequence[Capsule], threads: int = 1) -> BinaryMask3:
    """胶囊并集的体素化: 体素中心到任一轴段的距离 ≤ 半径即属于气道。"""
    sd = _signed_tube_distance(shape.extents, segments, threads)
    return BinaryMask3(shape, sd <= 0.0)


def _place_pockets(spec: PhantomSpec, mask: np.ndarray, wall: np.ndarray) -> np.ndarray:
    """
    在气道外棋盘距离 4..7 处随机选取口袋中心 (互不重叠), 每个口袋为半径 pocket_radius 的球,
    去掉气道与管壁体素后保留在棋盘距离 ≤ 9 的范围内。
    """
    pockets = np.zeros(mask.shape, dtype=bool)
    if spec.n_confusable_pockets == 0:
        return pockets
    cheb = ndimage.distance_transform_cdt(~mask, metric="chessboard")
    candidate = (cheb >= _POCKET_CENTER_MIN) & (cheb <= _POCKET_CENTER_MAX) & ~wall
    centers = np.argwhere(candidate)
    if len(centers) == 0:
        logger.warning("没有可放置口袋的位置")
        return pockets

    r = spec.pocket_radius
    ri = int(math.ceil(r))
    min_gap = 2 * ri + 1
    order = _rng(spec.seed, _POCKET_STREAM).permutation(len(centers))
    accepted: List[np.ndarray] = []
    for idx in order:
        c = centers[idx]
        if any(np.abs(c - other).max() <= min_gap for other in accepted):
            continue
        accepted.append(c)
        lo = np.maximum(c - ri, 0)
        hi = np.minimum(c + ri + 1, mask.shape)
        box = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
        gx, gy, gz = np.meshgrid(*(np.arange(a, b) for a, b in zip(lo, hi)), indexing="ij")
        ball = (gx - c[0]) ** 2 + (gy - c[1]) ** 2 + (gz - c[2]) ** 2 <= r * r
        pockets[box] |= ball
        if len(accepted) == spec.n_confusable_pockets:
            break

    if len(accepted) < spec.n_confusable_pockets:
        logger.warning("只放置了 %d/%d 个口袋", len(accepted), spec.n_confusable_pockets)
    return pockets & ~mask & ~wall & (cheb <= _POCKET_REACH)


def generate(spec: PhantomSpec, threads: int = 1) -> PhantomCase:
    """
    生成一个合成病例。

    图像 (归一化强度, 之后换算为 HU):
        实质: N(parenchyma_mu, parenchyma_sigma)
        管壁: wall_intensity + 同样幅度的噪声
        气道内: N(airway_mu, airway_sigma)
        暗口袋: N(airway_mu + pocket_offset, airway_sigma)

    Raises:
        GeometryError: 树超出网格, 或叶分支半径小于 1 体素。
    """
    segments = build_tree(spec)
    _check_fits(spec, segments)
    shape = GridShape.of(spec.grid_size, spec.spacing)

    logger.info("生成合成气道树: depth=%d, %d 段, 网格 %s", spec.depth, len(segments), spec.grid_size)
    sd = _signed_tube_distance(shape.extents, segments, threads)
    mask = sd <= 0.0
    wall = (sd > 0.0) & (sd <= spec.wall_thickness)
    pockets = _place_pockets(spec, mask, wall)

    noise = _normal_field(spec.seed, shape.extents)
    x = spec.parenchyma_mu + spec.parenchyma_sigma * noise
    x[wall] = spec.wall_intensity + spec.parenchyma_sigma * noise[wall]
    x[mask] = spec.airway_mu + spec.airway_sigma * noise[mask]
    x[pockets] = spec.airway_mu + spec.pocket_offset + spec.airway_sigma * noise[pockets]
    np.clip(x, 0.0, 1.0, out=x)

    lo, hi = spec.hu_window
    image = Volume3(shape, lo + x * (hi - lo))
    logger.info("气道体素 %d, 口袋体素 %d", int(mask.sum()), int(pockets.sum()))
    return PhantomCase(
        spec=spec,
        image=image,
        mask=BinaryMask3(shape, mask),
        pockets=BinaryMask3(shape, pockets),
        wall=BinaryMask3(shape, wall),
        segments=segments,
    )


def pocket_comparison_set(case: PhantomCase, w_dis: DistWeightMap, region: DilatedRegion) -> BinaryMask3:
    """
    与暗口袋对照的亮体素集合: R^outer 内、非口袋、强度高于任何口袋的典型值,
    且 W^dis 落在口袋体素的 W^dis 取值范围内 (距离匹配)。
    """
    check_same_shape(case.mask, region.dilated, w_dis)
    if case.pockets.is_empty():
        return BinaryMask3.empty(case.mask.shape)
    spec = case.spec
    x = normalize_window(case.image, *spec.hu_window).data
    pocket_w = w_dis.w[case.pockets.data]
    bright = x > spec.airway_mu + spec.pocket_offset + 3.0 * spec.airway_sigma
    matched = (w_dis.w >= pocket_w.min()) & (w_dis.w <= pocket_w.max())
    return case.mask.with_data(region.outer.data & ~case.pockets.data & bright & matched)


def pocket_weight_ratio(case: PhantomCase, fused: Volume3, comparison: BinaryMask3) -> Optional[float]:
    """口袋体素与对照集合的平均融合权重之比; 任一集合为空时返回 None。"""
    if case.pockets.is_empty() or comparison.is_empty():
        return None
    w = fused.data.astype(np.float64)
    return float(w[case.pockets.data].mean() / w[comparison.data].mean())
