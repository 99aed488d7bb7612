# -*- coding: utf-8 -*-
"""
@File    : grid.py
@Description: 3D grid containers, index arithmetic, cropping/tiling and HU normalization.
"""

# Input: numpy arrays indexed [x, y, z] plus voxel spacing in millimeters.
# Output: immutable Volume3 / BinaryMask3 containers shared by every other module.
#
# 体素存储约定: 数组形状为 (nx, ny, nz), 按 [x, y, z] 索引;
# 线性索引 = x + nx·(y + ny·z), 即数组按 Fortran 顺序展开 (x 变化最快)。

from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Sequence, Tuple, TypeVar, Union

import numpy as np

from .core.errors import (
    BoundsError,
    IdgValidationError,
    InvalidWindowError,
    ShapeMismatchError,
    TilingError,
)

Coord = Tuple[int, int, int]
Spacing = Tuple[float, float, float]


@dataclass(frozen=True)
class GridShape:
    """体素个数 (nx, ny, nz) 与体素间距 (sx, sy, sz, 单位 mm)。"""
    nx: int
    ny: int
    nz: int
    sx: float = 1.0
    sy: float = 1.0
    sz: float = 1.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) <= 0:
            raise IdgValidationError(f"体素个数必须为正: {self.extents}")
        if not min(self.sx, self.sy, self.sz) > 0:
            raise IdgValidationError(f"体素间距必须为正: {self.spacing}")

    @classmethod
    def of(cls, extents: Sequence[int], spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> "GridShape":
        nx, ny, nz = (int(e) for e in extents)
        sx, sy, sz = (float(s) for s in spacing)
        return cls(nx, ny, nz, sx, sy, sz)

    @property
    def extents(self) -> Coord:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> Spacing:
        return (self.sx, self.sy, self.sz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    def linear_index(self, x: int, y: int, z: int) -> int:
        return x + self.nx * (y + self.ny * z)

    def coords(self, index: int) -> Coord:
        x = index % self.nx
        y = (index // self.nx) % self.ny
        z = index // (self.nx * self.ny)
        return (x, y, z)

    def with_extents(self, extents: Sequence[int]) -> "GridShape":
        return GridShape.of(extents, self.spacing)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume3:
    """实数标量体数据 (CT 强度、预测概率、权重图), float32 存储, 只读。"""
    shape: GridShape
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.shape != self.shape.extents:
            raise ShapeMismatchError(f"数据形状 {arr.shape} 与网格 {self.shape.extents} 不一致")
        if not np.isfinite(arr).all():
            raise IdgValidationError("体数据中包含 NaN 或 Inf")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def from_array(cls, arr, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> "Volume3":
        arr = np.asarray(arr)
        return cls(GridShape.of(arr.shape, spacing), arr)

    @property
    def flat(self) -> np.ndarray:
        """x 变化最快的一维视图。"""
        return self.data.ravel(order="F")

    def with_data(self, arr) -> "Volume3":
        return Volume3(self.shape, arr)


@dataclass(frozen=True, eq=False)
class BinaryMask3:
    """布尔掩码 (气道 M、补集、膨胀区域、骨架), 只读。"""
    shape: GridShape
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=bool, copy=True)
        if arr.shape != self.shape.extents:
            raise ShapeMismatchError(f"数据形状 {arr.shape} 与网格 {self.shape.extents} 不一致")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def from_array(cls, arr, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> "BinaryMask3":
        arr = np.asarray(arr)
        return cls(GridShape.of(arr.shape, spacing), arr)

    @classmethod
    def empty(cls, shape: GridShape) -> "BinaryMask3":
        return cls(shape, np.zeros(shape.extents, dtype=bool))

    @property
    def flat(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def is_empty(self) -> bool:
        return not self.data.any()

    def complement(self) -> "BinaryMask3":
        return BinaryMask3(self.shape, ~self.data)

    def with_data(self, arr) -> "BinaryMask3":
        return BinaryMask3(self.shape, arr)

    def __and__(self, other: "BinaryMask3") -> "BinaryMask3":
        check_same_shape(self, other)
        return BinaryMask3(self.shape, self.data & other.data)

    def __or__(self, other: "BinaryMask3") -> "BinaryMask3":
        check_same_shape(self, other)
        return BinaryMask3(self.shape, self.data | other.data)

    def __sub__(self, other: "BinaryMask3") -> "BinaryMask3":
        check_same_shape(self, other)
        return BinaryMask3(self.shape, self.data & ~other.data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask3):
            return NotImplemented
        return self.shape.extents == other.shape.extents and bool(np.array_equal(self.data, other.data))


G = TypeVar("G", Volume3, BinaryMask3)


def check_same_shape(*grids) -> None:
    """所有输入 (任何带 GridShape 的对象) 的体素个数必须一致, 否则抛出 ShapeMismatchError。"""
    extents = {g.shape.extents for g in grids}
    if len(extents) > 1:
        raise ShapeMismatchError(f"网格形状不一致: {sorted(extents)}")


# ==============================================================================
# 强度归一化
# ==============================================================================

def normalize_window(v: Volume3, lo: float = -1000.0, hi: float = 600.0) -> Volume3:
    """
    将 HU 强度线性映射到 [0, 1]: clamp((x - lo) / (hi - lo), 0, 1)。
    """
    if not lo < hi:
        raise InvalidWindowError(f"窗口要求 lo < hi, 收到 ({lo}, {hi})")
    x = v.data.astype(np.float64)
    out = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return v.with_data(out)


# ==============================================================================
# 裁剪 / 回填
# ==============================================================================

def _check_box(extents: Coord, origin: Sequence[int], size: Sequence[int]) -> None:
    if len(origin) != 3 or len(size) != 3:
        raise BoundsError("origin 与 size 必须是三维")
    for o, s, e in zip(origin, size, extents):
        if o < 0 or s <= 0 or o + s > e:
            raise BoundsError(f"裁剪框 origin={tuple(origin)} size={tuple(size)} 超出网格 {extents}")


def crop(v: G, origin: Sequence[int], size: Sequence[int]) -> G:
    """输出 (x, y, z) = 输入 (origin + (x, y, z)), 间距保持不变。"""
    _check_box(v.shape.extents, origin, size)
    ox, oy, oz = origin
    sx, sy, sz = size
    sub = v.data[ox:ox + sx, oy:oy + sy, oz:oz + sz]
    return type(v)(v.shape.with_extents(size), sub)


def embed(target: G, patch: G, origin: Sequence[int]) -> G:
    """返回 target 的副本, 并把 patch 写入 origin 处。"""
    _check_box(target.shape.extents, origin, patch.shape.extents)
    out = target.data.copy()
    ox, oy, oz = origin
    px, py, pz = patch.shape.extents
    out[ox:ox + px, oy:oy + py, oz:oz + pz] = patch.data
    return target.with_data(out)


# ==============================================================================
# 分块 (tiling)
# ==============================================================================

def plan_tiling(extent: int, window: int, overlap: int) -> List[int]:
    """
    单轴分块起点: 从 0 开始, 步长 window - overlap, 最后一个起点钳制到 extent - window。
    """
    if not 0 <= overlap < window:
        raise TilingError(f"要求 0 ≤ overlap < window, 收到 overlap={overlap}, window={window}")
    if window > extent:
        raise TilingError(f"窗口 {window} 大于轴长度 {extent}")
    step = window - overlap
    last = extent - window
    starts = list(range(0, last + 1, step))
    if starts[-1] != last:
        starts.append(last)
    return starts


@dataclass(frozen=True)
class TilingPlan:
    window: Coord
    overlap: Coord
    starts: Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]

    def origins(self) -> Iterator[Coord]:
        """按 x 变化最快的顺序遍历所有块的起点。"""
        for z in self.starts[2]:
            for y in self.starts[1]:
                for x in self.starts[0]:
                    yield (x, y, z)

    def __len__(self) -> int:
        return len(self.starts[0]) * len(self.starts[1]) * len(self.starts[2])


def _triple(value: Union[int, Sequence[int]]) -> Coord:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    a, b, c = value
    return (int(a), int(b), int(c))


def plan_tiling_3d(
    extents: Sequence[int],
    window: Union[int, Sequence[int]] = 96,
    overlap: Union[int, Sequence[int]] = 16,
) -> TilingPlan:
    """
    三维分块计划。窗口大于某轴长度时裁到该轴长度, 重叠同步裁到 window - 1。
    训练时用不重叠的 96³ 块 (overlap=0), 推理时用 16 体素重叠。
    """
    win, ovl = [], []
    for e, w, o in zip(extents, _triple(window), _triple(overlap)):
        w = min(w, e)
        win.append(w)
        ovl.append(min(o, w - 1))
    starts = tuple(tuple(plan_tiling(e, w, o)) for e, w, o in zip(extents, win, ovl))
    return TilingPlan(tuple(win), tuple(ovl), starts)


def iter_crops(v: G, plan: TilingPlan) -> Iterator[Tuple[Coord, G]]:
    for origin in plan.origins():
        yield origin, crop(v, origin, plan.window)


def stitch_tiles(shape: GridShape, tiles: Iterable[Tuple[Sequence[int], Volume3]]) -> Volume3:
    """按给定顺序回填各块, 重叠区以后写入者为准。"""
    buf = np.zeros(shape.extents, dtype=np.float32)
    for origin, tile in tiles:
        _check_box(shape.extents, origin, tile.shape.extents)
        ox, oy, oz = origin
        px, py, pz = tile.shape.extents
        buf[ox:ox + px, oy:oy + py, oz:oz + pz] = tile.data
    return Volume3(shape, buf)
