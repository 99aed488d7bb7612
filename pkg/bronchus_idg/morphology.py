# -*- coding: utf-8 -*-
"""
@File    : morphology.py
@Description: Cube dilation, dilated-region split, 3D thinning and connected components.
"""

# Input: BinaryMask3 airway masks.
# Output: dilated regions (R^dilation / R^inner / R^outer), skeletons, component labels.

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from skimage.morphology import skeletonize as _skimage_skeletonize

from .core.errors import EmptyMaskError, IdgValidationError, KernelSizeError
from .grid import BinaryMask3

logger = logging.getLogger(__name__)

# 连通性 -> scipy 结构元的 rank
_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


# ==============================================================================
# 膨胀
# ==============================================================================

def dilate_cube(m: BinaryMask3, s: int) -> BinaryMask3:
    """
    s×s×s 立方体结构元的二值膨胀, 结构元在体边界处截断。

    立方体结构元可分离, 因此按 x、y、z 三个轴各做一次长度为 s 的一维最大值滤波。
    """
    if not isinstance(s, (int, np.integer)) or s < 1 or s % 2 == 0:
        raise KernelSizeError(f"核大小必须是 ≥1 的奇数, 收到 {s}")
    if s > 2 * max(m.shape.extents):
        raise KernelSizeError(f"核大小 {s} 超过 2 × 最大轴长度 {max(m.shape.extents)}")
    if s == 1:
        return m

    out = m.data.astype(np.uint8)
    for axis in range(3):
        # mode="constant", cval=0: 体外视为背景, 等价于结构元在边界截断
        out = ndimage.maximum_filter1d(out, size=s, axis=axis, mode="constant", cval=0)
    return m.with_data(out.astype(bool))


@dataclass(frozen=True)
class DilatedRegion:
    """膨胀后的支气管区域及其内/外划分。"""
    dilated: BinaryMask3
    inner: BinaryMask3
    outer: BinaryMask3
    kernel_size: int

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise KernelSizeError(f"核大小必须是 ≥1 的奇数, 收到 {self.kernel_size}")
        d, i, o = self.dilated.data, self.inner.data, self.outer.data
        if (i & ~d).any() or (i & o).any() or not np.array_equal(i | o, d):
            raise IdgValidationError("DilatedRegion 的内外划分与膨胀区域不一致")


def build_dilated_region(bronchus: BinaryMask3, s: int) -> DilatedRegion:
    """
    R^dilation = K_s(R^bronchus); R^inner = R^bronchus; R^outer = R^dilation \\ R^bronchus。
    """
    if bronchus.is_empty():
        raise EmptyMaskError("气道掩码为空, 无法构建膨胀区域")
    dilated = dilate_cube(bronchus, s)
    return DilatedRegion(
        dilated=dilated,
        inner=bronchus,
        outer=dilated - bronchus,
        kernel_size=int(s),
    )


# ==============================================================================
# 骨架化
# ==============================================================================

_STRUCT_26 = ndimage.generate_binary_structure(3, 3)
# 13 个 "正向" 偏移, 每条 26 邻接边只生成一次
_FORWARD_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
    if (dx, dy, dz) > (0, 0, 0)
]


def _lee_thin(arr: np.ndarray) -> np.ndarray:
    # 在外围补一圈背景, 避免贴边的体素被当作内部点
    padded = np.pad(arr, 1, mode="constant", constant_values=0).astype(np.uint8)
    skel = _skimage_skeletonize(padded, method="lee")
    return np.asarray(skel)[1:-1, 1:-1, 1:-1] > 0


def _trim_one_voxel(arr: np.ndarray) -> np.ndarray:
    """去掉 +x / +y / +z 方向邻居不在前景中的体素, 各轴向宽度减 1。"""
    out = arr.copy()
    out[:-1, :, :] &= arr[1:, :, :]
    out[-1, :, :] = False
    out[:, :-1, :] &= arr[:, 1:, :]
    out[:, -1, :] = False
    out[:, :, :-1] &= arr[:, :, 1:]
    out[:, :, -1] = False
    return out


def _n_pieces(arr: np.ndarray) -> int:
    return int(ndimage.label(arr, structure=_STRUCT_26)[1])


def _is_valid_skeleton(comp: np.ndarray, skel: np.ndarray) -> bool:
    """单个分量的细化结果: 非空、26 连通、且没有大段区域远离骨架 (例如整条主干被删掉)。"""
    if not skel.any() or _n_pieces(skel) != 1:
        return False
    reach = ndimage.distance_transform_edt(~skel)[comp].max()
    depth = ndimage.distance_transform_edt(np.pad(comp, 1))[1:-1, 1:-1, 1:-1].max()
    return reach <= 2.0 * depth + 1.0


def _voxel_graph(comp: np.ndarray) -> Tuple[np.ndarray, np.ndarray, csr_matrix, np.ndarray]:
    """
    分量体素的 26 邻接图。边权 = 步长 × (1 + d_max - 两端内部距离的均值), 路径因此贴近中轴。
    """
    coords = np.argwhere(comp)
    index = np.full(comp.shape, -1, dtype=np.int64)
    index[tuple(coords.T)] = np.arange(len(coords))
    depth = ndimage.distance_transform_edt(np.pad(comp, 1))[1:-1, 1:-1, 1:-1]
    d_max = float(depth.max())

    rows, cols, weights = [], [], []
    upper = np.asarray(comp.shape)
    for off in _FORWARD_OFFSETS:
        nb = coords + np.asarray(off)
        ok = np.all((nb >= 0) & (nb < upper), axis=1)
        src, dst = coords[ok], nb[ok]
        hit = comp[tuple(dst.T)]
        src, dst = src[hit], dst[hit]
        mean_depth = 0.5 * (depth[tuple(src.T)] + depth[tuple(dst.T)])
        rows.append(index[tuple(src.T)])
        cols.append(index[tuple(dst.T)])
        weights.append(np.linalg.norm(off) * (1.0 + d_max - mean_depth))
    n = len(coords)
    graph = csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return coords, index, graph, depth


def _trace(pred: np.ndarray, target: int) -> List[int]:
    path = [int(target)]
    while pred[path[-1]] >= 0:
        path.append(int(pred[path[-1]]))
    return path


def _rebuild_centerline(comp: np.ndarray, skel: np.ndarray) -> np.ndarray:
    """
    用分量内的最短路补全细化结果:
    结果为空时取加权图上的 "直径" 路径 (两端沿内部距离上坡截掉贴壁的部分);
    结果断成多段时, 依次把最近的一段用最短路接到主体上。
    """
    coords, index, graph, depth = _voxel_graph(comp)
    out = skel & comp

    if not out.any():
        seed = int(np.argmax(depth[tuple(coords.T)]))
        a = int(np.argmax(dijkstra(graph, directed=False, indices=seed)))
        dist, pred = dijkstra(graph, directed=False, indices=a, return_predecessors=True)
        path = _trace(pred, int(np.argmax(dist)))
        d = depth[tuple(coords[path].T)]
        i, j = 0, len(path) - 1
        while i < j and d[i] < d[i + 1]:
            i += 1
        while j > i and d[j] < d[j - 1]:
            j -= 1
        out[tuple(coords[path[i:j + 1]].T)] = True
        return out

    labels, n = ndimage.label(out, structure=_STRUCT_26)
    while n > 1:
        sources = index[labels == 1]
        dist, pred, _ = dijkstra(graph, directed=False, indices=sources, return_predecessors=True, min_only=True)
        others = index[labels > 1]
        target = int(others[np.argmin(dist[others])])
        out[tuple(coords[_trace(pred, target)].T)] = True
        labels, n = ndimage.label(out, structure=_STRUCT_26)
    return out


def _skeletonize_component(comp: np.ndarray, thinned: np.ndarray) -> np.ndarray:
    """细化结果不合格的分量: 先对去掉一层体素后的分量重新细化, 仍不合格则用最短路重建。"""
    trimmed = _trim_one_voxel(comp)
    retry = _lee_thin(trimmed) & comp if trimmed.any() else np.zeros_like(comp)
    if _is_valid_skeleton(comp, retry):
        return retry
    if thinned.any() and _n_pieces(thinned) == 1:
        return thinned
    base = thinned if thinned.sum() >= retry.sum() else retry
    rebuilt = _rebuild_centerline(comp, base)
    polished = _lee_thin(rebuilt)
    if polished.any() and _n_pieces(polished) == 1:
        return polished
    return rebuilt


def skeletonize(m: BinaryMask3) -> BinaryMask3:
    """
    拓扑保持的 3D 细化 (前景 26 连通 / 背景 6 连通, 六方向子迭代删除简单点)。

    输出是输入的子集, 每个 26 连通分量恰好对应一段非空且连通的骨架;
    对已是骨架的输入再次调用结果不变。
    """
    if m.is_empty():
        raise EmptyMaskError("掩码为空, 无法骨架化")
    arr = m.data
    skel = _lee_thin(arr)

    labels, k = ndimage.label(arr, structure=_STRUCT_26)
    for lab, box in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[box] == lab
        thinned = skel[box] & comp
        if _is_valid_skeleton(comp, thinned):
            continue
        fixed = _skeletonize_component(comp, thinned)
        logger.debug("分量 %d 的细化结果为空、断开或缺失主干, 已重建 (%d 体素)", lab, int(fixed.sum()))
        region = skel[box]
        region[comp] = fixed[comp]
    logger.debug("骨架化: %d -> %d 体素 (%d 个分量)", m.count(), int(skel.sum()), k)
    return m.with_data(skel)


# ==============================================================================
# 连通分量
# ==============================================================================

@dataclass(frozen=True)
class ComponentLabels:
    """labels: 0 为背景, 1..K 按体素数降序; sizes[k-1] 为第 k 个分量的体素数。"""
    labels: np.ndarray
    sizes: List[int]

    @property
    def count(self) -> int:
        return len(self.sizes)


def connected_components(m: BinaryMask3, connectivity: int = 26) -> ComponentLabels:
    """
    连通分量标记。标签按分量大小降序排列, 大小相同时按分量首个体素的线性索引升序。
    """
    if connectivity not in _CONNECTIVITY_RANK:
        raise IdgValidationError(f"连通性必须是 6/18/26 之一, 收到 {connectivity}")
    structure = ndimage.generate_binary_structure(3, _CONNECTIVITY_RANK[connectivity])
    raw, k = ndimage.label(m.data, structure=structure)
    if k == 0:
        return ComponentLabels(labels=np.zeros(m.shape.extents, dtype=np.int32), sizes=[])

    flat = raw.ravel(order="F")
    sizes = np.bincount(flat, minlength=k + 1)[1:]
    # 每个标签第一次出现的位置, 即分量中最小的线性索引
    _, first_index = np.unique(flat, return_index=True)
    first_index = first_index[1:] if flat[first_index[0]] == 0 else first_index
    order = np.lexsort((first_index, -sizes))

    remap = np.zeros(k + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, k + 1, dtype=np.int32)
    labels = remap[raw]
    return ComponentLabels(labels=labels, sizes=[int(sizes[i]) for i in order])


def largest_component(m: BinaryMask3) -> BinaryMask3:
    """保留 26 连通意义下最大的分量; 空输入返回空掩码。"""
    comps = connected_components(m, 26)
    if comps.count == 0:
        return BinaryMask3.empty(m.shape)
    return m.with_data(comps.labels == 1)
