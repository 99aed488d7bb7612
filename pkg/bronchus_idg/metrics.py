# -*- coding: utf-8 -*-
"""
@File    : metrics.py
@Description: Airway segmentation metrics (DSC, TD, BD), skeleton branch decomposition and
              the error-intensity histogram.
"""

# Input: predicted / ground-truth masks, ground-truth skeleton, voxel spacing.
# Output: MetricsReport, SkeletonGraph, FP/FN intensity histograms.

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict

from .core.errors import ParameterError, PreconditionError
from .grid import BinaryMask3, Volume3, check_same_shape
from .morphology import largest_component, skeletonize

logger = logging.getLogger(__name__)

Voxel = Tuple[int, int, int]

# 26 邻域中 "向前" 的 13 个偏移, 每条边只枚举一次
_FORWARD_OFFSETS = [
    d for d in itertools.product((-1, 0, 1), repeat=3)
    if d > (0, 0, 0)
]


class MetricsReport(BaseModel):
    dsc: float
    td: float
    bd: float
    n_branches_gt: int
    n_branches_detected: int
    skeleton_length_mm: float

    model_config = ConfigDict(frozen=True)


# ==============================================================================
# DSC
# ==============================================================================

def dsc(pred: BinaryMask3, gt: BinaryMask3) -> float:
    """2|P∩G| / (|P| + |G|); 两者都为空时定义为 1。"""
    check_same_shape(pred, gt)
    p, g = pred.data, gt.data
    denom = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    if denom == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(p & g)) / denom


# ==============================================================================
# 骨架图
# ==============================================================================

@dataclass(frozen=True)
class SkeletonGraph:
    """
    骨架体素构成的 26 邻接图及其分支分解。

    branches: 每条分支是端点/分叉点之间的有序体素链, 相邻分支只在分叉点处重叠;
    links: 两个相邻分叉点之间的短边 (分叉点簇内部), 计入长度但不计为分支;
        每个骨架体素至少属于一条分支, 分叉点簇中不是任何链端点的体素接到相邻分支的末端;
    voxel_length: 每个体素的半边长度之和, 用于 TD 的长度统计。
    """
    graph: nx.Graph = field(repr=False)
    branches: List[List[Voxel]]
    junctions: List[Voxel]
    endpoints: List[Voxel]
    links: List[List[Voxel]] = field(default_factory=list)
    voxel_length: Dict[Voxel, float] = field(default_factory=dict, repr=False)

    @property
    def voxels(self) -> List[Voxel]:
        return list(self.graph.nodes)

    def is_empty(self) -> bool:
        return self.graph.number_of_nodes() == 0

    def chain_length(self, chain: Sequence[Voxel]) -> float:
        """链的物理长度 (边长之和); 孤立体素取其体素长度。"""
        if len(chain) == 1:
            return self.voxel_length.get(chain[0], 0.0)
        return float(sum(self.graph.edges[a, b]["length"] for a, b in zip(chain[:-1], chain[1:])))

    @property
    def total_length(self) -> float:
        return float(sum(self.voxel_length.values()))


def _build_graph(skeleton: BinaryMask3, spacing: Sequence[float]) -> nx.Graph:
    coords = np.argwhere(skeleton.data)
    occupied = {tuple(int(c) for c in p) for p in coords}
    step = np.asarray(spacing, dtype=np.float64)
    graph = nx.Graph()
    graph.add_nodes_from(occupied)
    for v in occupied:
        for d in _FORWARD_OFFSETS:
            u = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
            if u in occupied:
                graph.add_edge(v, u, length=float(np.linalg.norm(step * np.asarray(d))))
    return graph


def _trace_chain(graph: nx.Graph, start: Voxel, nxt: Voxel, stops: set, visited: set) -> List[Voxel]:
    """从 start 经 nxt 出发, 沿度为 2 的体素前进, 直到遇到 stops 中的体素。"""
    chain = [start, nxt]
    visited.add(frozenset((start, nxt)))
    prev, cur = start, nxt
    while cur not in stops:
        candidates = [u for u in graph.neighbors(cur) if u != prev and frozenset((cur, u)) not in visited]
        if not candidates:
            break
        prev, cur = cur, candidates[0]
        visited.add(frozenset((prev, cur)))
        chain.append(cur)
    return chain


def _absorb_uncovered(graph: nx.Graph, branches: List[List[Voxel]]) -> None:
    """
    只通过 link 与其他体素相连的分叉点不在任何分支中: 把它们接到相邻分支的末端,
    没有相邻分支时 (整簇都是分叉点) 沿未覆盖体素走出一条新链。
    """
    covered = {v for b in branches for v in b}
    pending = sorted(v for v in graph.nodes if v not in covered)
    while pending:
        attached = None
        for v in pending:
            for b in branches:
                if graph.has_edge(b[-1], v):
                    b.append(v)
                elif graph.has_edge(b[0], v):
                    b.insert(0, v)
                else:
                    continue
                attached = v
                break
            if attached is not None:
                break
        if attached is not None:
            covered.add(attached)
        else:
            chain = [pending[0]]
            while True:
                nxt = [u for u in sorted(graph.neighbors(chain[-1])) if u not in covered and u not in chain]
                if not nxt:
                    break
                chain.append(nxt[0])
            branches.append(chain)
            covered.update(chain)
        pending = [v for v in pending if v not in covered]


def decompose_branches(skeleton: BinaryMask3, spacing: Optional[Sequence[float]] = None) -> SkeletonGraph:
    """
    把 1 体素宽的骨架分解为分支。

    分叉点: 26 邻域内骨架邻居 ≥ 3; 端点: 恰好 1 个邻居。
    每条边恰好属于一条链; 两端都是分叉点且无内部体素的链记为 link。
    孤立体素与无分叉的闭环各自构成一条分支; 只由 link 连接的分叉点并入相邻分支。空骨架返回空图。
    """
    spacing = tuple(spacing) if spacing is not None else skeleton.shape.spacing
    graph = _build_graph(skeleton, spacing)

    degree = dict(graph.degree)
    junctions = sorted(v for v, k in degree.items() if k >= 3)
    endpoints = sorted(v for v, k in degree.items() if k == 1)
    stops = set(junctions) | set(endpoints)

    branches: List[List[Voxel]] = []
    links: List[List[Voxel]] = []
    visited: set = set()

    for node in sorted(stops):
        for nb in sorted(graph.neighbors(node)):
            if frozenset((node, nb)) in visited:
                continue
            chain = _trace_chain(graph, node, nb, stops, visited)
            if len(chain) == 2 and chain[0] in junctions and chain[1] in junctions:
                links.append(chain)
            else:
                branches.append(chain)

    # 剩余的边属于没有端点/分叉点的闭环
    for a, b in sorted(graph.edges):
        if frozenset((a, b)) in visited:
            continue
        chain = _trace_chain(graph, a, b, {a}, visited)
        branches.append(chain)

    mean_step = float(np.mean(spacing))
    voxel_length: Dict[Voxel, float] = {}
    for v in graph.nodes:
        if degree[v] == 0:
            branches.append([v])
            voxel_length[v] = mean_step
        else:
            voxel_length[v] = 0.5 * sum(graph.edges[v, u]["length"] for u in graph.neighbors(v))
    _absorb_uncovered(graph, branches)

    logger.debug("骨架分解: %d 体素, %d 分支, %d 分叉点", graph.number_of_nodes(), len(branches), len(junctions))
    return SkeletonGraph(
        graph=graph,
        branches=branches,
        junctions=junctions,
        endpoints=endpoints,
        links=links,
        voxel_length=voxel_length,
    )


# ==============================================================================
# TD / BD
# ==============================================================================

def _reduce_pred(pred: BinaryMask3, largest_cc: bool) -> BinaryMask3:
    return largest_component(pred) if largest_cc else pred


def tree_length_detected(
    pred: BinaryMask3,
    gt_skeleton: BinaryMask3,
    spacing: Optional[Sequence[float]] = None,
    largest_cc: bool = True,
    graph: Optional[SkeletonGraph] = None,
) -> float:
    """
    TD = 落在预测 (最大连通分量) 内的骨架物理长度 / 骨架总物理长度。
    每个骨架体素贡献其关联边长度的一半。
    """
    check_same_shape(pred, gt_skeleton)
    if gt_skeleton.is_empty():
        raise PreconditionError("GT 骨架为空, TD 无定义")
    graph = graph or decompose_branches(gt_skeleton, spacing)
    total = graph.total_length
    if total <= 0:
        raise PreconditionError("GT 骨架长度为 0, TD 无定义")
    inside = _reduce_pred(pred, largest_cc).data
    covered = sum(length for v, length in graph.voxel_length.items() if inside[v])
    return float(covered / total)


def branches_detected(
    pred: BinaryMask3,
    graph: SkeletonGraph,
    threshold: float = 0.8,
    largest_cc: bool = True,
) -> float:
    """分支中落在预测内的体素比例 ≥ threshold 即视为检出; BD = 检出数 / 分支总数。"""
    n_detected, n_total = count_detected_branches(pred, graph, threshold, largest_cc)
    return n_detected / n_total


def count_detected_branches(
    pred: BinaryMask3,
    graph: SkeletonGraph,
    threshold: float = 0.8,
    largest_cc: bool = True,
) -> Tuple[int, int]:
    if graph.is_empty() or not graph.branches:
        raise PreconditionError("骨架图为空, BD 无定义")
    if not 0 < threshold <= 1:
        raise ParameterError(f"threshold 必须在 (0, 1] 之内, 收到 {threshold}")
    inside = _reduce_pred(pred, largest_cc).data
    detected = 0
    for branch in graph.branches:
        hits = sum(1 for v in branch if inside[v])
        if hits / len(branch) >= threshold:
            detected += 1
    return detected, len(graph.branches)


def evaluate_segmentation(
    pred: BinaryMask3,
    gt: BinaryMask3,
    gt_skeleton: Optional[BinaryMask3] = None,
    spacing: Optional[Sequence[float]] = None,
    bd_threshold: float = 0.8,
    largest_cc: bool = True,
) -> MetricsReport:
    """
    完整评估: DSC (原始预测) + TD/BD (预测先取最大连通分量)。
    未提供 GT 骨架时用本模块的骨架化生成。
    """
    check_same_shape(pred, gt)
    spacing = tuple(spacing) if spacing is not None else gt.shape.spacing
    if gt_skeleton is None:
        gt_skeleton = skeletonize(gt)
    check_same_shape(gt, gt_skeleton)
    graph = decompose_branches(gt_skeleton, spacing)

    reduced = _reduce_pred(pred, largest_cc)
    td = tree_length_detected(reduced, gt_skeleton, spacing, largest_cc=False, graph=graph)
    n_detected, n_total = count_detected_branches(reduced, graph, bd_threshold, largest_cc=False)
    return MetricsReport(
        dsc=dsc(pred, gt),
        td=td,
        bd=n_detected / n_total,
        n_branches_gt=n_total,
        n_branches_detected=n_detected,
        skeleton_length_mm=graph.total_length,
    )


# ==============================================================================
# 误分类体素的强度分布
# ==============================================================================

@dataclass(frozen=True)
class ErrorHistogram:
    edges: np.ndarray
    fp: np.ndarray
    fn: np.ndarray


def error_intensity_histogram(image: Volume3, pred: BinaryMask3, gt: BinaryMask3, bins: int = 64) -> ErrorHistogram:
    """
    FP = pred ∧ ¬gt, FN = ¬pred ∧ gt, 分别统计其归一化强度的直方图, 区间在 [0, 1] 上均匀划分。
    """
    check_same_shape(image, pred, gt)
    if bins < 2:
        raise ParameterError(f"bins 至少为 2, 收到 {bins}")
    x = image.data.astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    fp_mask = pred.data & ~gt.data
    fn_mask = ~pred.data & gt.data
    fp, _ = np.histogram(np.clip(x[fp_mask], 0.0, 1.0), bins=edges)
    fn, _ = np.histogram(np.clip(x[fn_mask], 0.0, 1.0), bins=edges)
    return ErrorHistogram(edges=edges, fp=fp, fn=fn)
