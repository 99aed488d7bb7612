import math

import numpy as np
import pytest

from conftest import line_skeleton, tube_mask, y_skeleton
from bronchus_idg.core.errors import PreconditionError
from bronchus_idg.grid import BinaryMask3, GridShape, Volume3
from bronchus_idg.metrics import (
    branches_detected,
    decompose_branches,
    dsc,
    error_intensity_histogram,
    evaluate_segmentation,
    tree_length_detected,
)
from bronchus_idg.morphology import skeletonize
from bronchus_idg.phantom import rasterize_tree


def test_dsc_examples():
    a = np.zeros((4, 4, 4), dtype=bool)
    a[0, 0, :2] = True
    b = np.zeros_like(a)
    b[0, 0, 1:3] = True
    A, B = BinaryMask3.from_array(a), BinaryMask3.from_array(b)
    assert dsc(A, A) == 1.0
    assert dsc(A, B) == pytest.approx(0.5)
    assert dsc(A, BinaryMask3.empty(A.shape)) == 0.0
    empty = BinaryMask3.empty(A.shape)
    assert dsc(empty, empty) == 1.0


def test_dsc_symmetric(rng):
    a = BinaryMask3.from_array(rng.random((6, 6, 6)) < 0.3)
    b = BinaryMask3.from_array(rng.random((6, 6, 6)) < 0.3)
    assert dsc(a, b) == dsc(b, a)
    assert 0.0 <= dsc(a, b) <= 1.0


def test_line_is_single_branch():
    graph = decompose_branches(line_skeleton())
    assert len(graph.branches) == 1
    assert len(graph.endpoints) == 2
    assert graph.junctions == []
    assert graph.total_length == pytest.approx(15.0)


def test_y_skeleton_has_three_branches():
    graph = decompose_branches(y_skeleton())
    assert len(graph.branches) == 3
    assert graph.junctions == [(10, 10, 10)]
    assert len(graph.endpoints) == 3
    assert graph.links == []
    lengths = sorted(graph.chain_length(b) for b in graph.branches)
    assert lengths == pytest.approx([7 * math.sqrt(2), 7 * math.sqrt(2), 11.0])
    assert graph.total_length == pytest.approx(11.0 + 14 * math.sqrt(2))


def test_branches_share_only_junctions():
    graph = decompose_branches(y_skeleton())
    seen = {}
    for i, branch in enumerate(graph.branches):
        for v in branch:
            seen.setdefault(v, set()).add(i)
    shared = [v for v, owners in seen.items() if len(owners) > 1]
    assert shared == [(10, 10, 10)]
    assert set(seen) == set(graph.voxels)


def test_anisotropic_spacing_scales_length():
    skel = line_skeleton()
    graph = decompose_branches(skel, spacing=(1.0, 1.0, 2.5))
    assert graph.total_length == pytest.approx(15 * 2.5)


def test_isolated_voxel_and_cycle():
    arr = np.zeros((10, 10, 3), dtype=bool)
    arr[0, 0, 0] = True
    # 去掉四角的方环, 每个体素恰有 2 个 26 邻居
    ring = [(1, 0), (2, 0), (3, 0), (4, 1), (4, 2), (4, 3), (3, 4), (2, 4), (1, 4), (0, 3), (0, 2), (0, 1)]
    for x, y in ring:
        arr[x + 3, y + 3, 1] = True
    graph = decompose_branches(BinaryMask3.from_array(arr))
    assert len(graph.branches) == 2
    assert graph.voxel_length[(0, 0, 0)] == pytest.approx(1.0)


def test_junction_only_block_forms_one_branch():
    arr = np.zeros((6, 6, 6), dtype=bool)
    arr[2:4, 2:4, 2:4] = True
    graph = decompose_branches(BinaryMask3.from_array(arr))
    assert len(graph.junctions) == 8
    assert len(graph.branches) == 1
    assert set(graph.branches[0]) == set(graph.voxels)
    assert graph.chain_length(graph.branches[0]) > 0


def test_linked_junctions_join_adjacent_branch():
    arr = np.zeros((12, 12, 12), dtype=bool)
    arr[5:7, 5:7, 5:7] = True
    for k in range(1, 4):
        arr[5 - k, 5 - k, 5 - k] = True
        arr[6 + k, 6 + k, 6 + k] = True
    graph = decompose_branches(BinaryMask3.from_array(arr))
    assert len(graph.branches) == 2
    assert set().union(*map(set, graph.branches)) == set(graph.voxels)
    for branch in graph.branches:
        assert all(graph.graph.has_edge(a, b) for a, b in zip(branch[:-1], branch[1:]))


def test_empty_skeleton_graph():
    graph = decompose_branches(BinaryMask3.empty(GridShape.of((3, 3, 3))))
    assert graph.is_empty()
    assert graph.branches == []


def test_td_and_bd_perfect_and_empty():
    gt = tube_mask(extents=(20, 20, 30), radius=3.0, z_range=(3, 27))
    skel = skeletonize(gt)
    assert tree_length_detected(gt, skel) == pytest.approx(1.0)
    assert tree_length_detected(BinaryMask3.empty(gt.shape), skel) == 0.0
    graph = decompose_branches(skel)
    assert branches_detected(gt, graph) == 1.0
    assert branches_detected(BinaryMask3.empty(gt.shape), graph) == 0.0


def test_td_counts_half_of_pred_tube():
    skel = line_skeleton()
    pred = np.zeros(skel.shape.extents, dtype=bool)
    pred[:, :, :10] = True
    # 体素 z=2..9 在预测内: 半边长度 0.5 + 7 × 1 = 7.5, 总长 15
    td = tree_length_detected(BinaryMask3.from_array(pred), skel, largest_cc=False)
    assert td == pytest.approx(7.5 / 15.0)


def test_td_rejects_empty_skeleton():
    gt = tube_mask()
    with pytest.raises(PreconditionError):
        tree_length_detected(gt, BinaryMask3.empty(gt.shape))


def test_bd_threshold_on_y():
    skel = y_skeleton()
    graph = decompose_branches(skel)
    pred = np.zeros(skel.shape.extents, dtype=bool)
    pred[:, :, 9:] = True
    # 主干全部命中; 两条斜分支只有分叉点及其下一个体素命中 (2/8)
    assert branches_detected(BinaryMask3.from_array(pred), graph, largest_cc=False) == pytest.approx(1 / 3)


def test_td_and_bd_grow_with_prediction():
    skel = y_skeleton()
    graph = decompose_branches(skel)
    last_td, last_bd = 0.0, 0.0
    for z in range(0, skel.shape.extents[2] + 1, 2):
        arr = np.zeros(skel.shape.extents, dtype=bool)
        arr[:, :, :z] = True
        pred = BinaryMask3.from_array(arr)
        td = tree_length_detected(pred, skel, largest_cc=False, graph=graph)
        bd = branches_detected(pred, graph, largest_cc=False)
        assert td >= last_td and bd >= last_bd
        last_td, last_bd = td, bd
    assert last_td == pytest.approx(1.0) and last_bd == 1.0


def test_largest_cc_drops_disconnected_fragment():
    gt = tube_mask(extents=(20, 20, 30), radius=3.0, z_range=(3, 27))
    pred = gt.data.copy()
    pred[:, :, 14:16] = False  # 切成上下两段
    pred = BinaryMask3.from_array(pred)
    skel = skeletonize(gt)
    with_cc = tree_length_detected(pred, skel, largest_cc=True)
    without_cc = tree_length_detected(pred, skel, largest_cc=False)
    assert with_cc < without_cc


def test_evaluate_segmentation_perfect_and_empty():
    gt = tube_mask(extents=(20, 20, 30), radius=3.0, z_range=(3, 27))
    report = evaluate_segmentation(gt, gt)
    assert report.dsc == 1.0 and report.td == pytest.approx(1.0) and report.bd == 1.0
    empty = evaluate_segmentation(BinaryMask3.empty(gt.shape), gt)
    assert empty.dsc == 0.0 and empty.td == 0.0 and empty.bd == 0.0


def test_phantom_leaf_removed_lowers_bd(phantom_case):
    gt = phantom_case.mask
    leaf = phantom_case.segments[-1]
    kept = [s for s in phantom_case.segments if s is not leaf]
    pred = rasterize_tree(gt.shape, kept)
    report = evaluate_segmentation(pred, gt)
    n = report.n_branches_gt
    assert n - 2 <= report.n_branches_detected <= n - 1
    assert report.bd < 1.0
    assert report.td < 1.0


def test_error_histogram_counts(rng):
    x = rng.random((6, 6, 6))
    gt = rng.random((6, 6, 6)) < 0.4
    pred = rng.random((6, 6, 6)) < 0.4
    hist = error_intensity_histogram(
        Volume3.from_array(x), BinaryMask3.from_array(pred), BinaryMask3.from_array(gt), bins=8
    )
    assert hist.fp.sum() == int((pred & ~gt).sum())
    assert hist.fn.sum() == int((~pred & gt).sum())
    assert len(hist.edges) == 9


def test_error_histogram_single_fp():
    x = np.full((3, 3, 3), 0.2)
    x[1, 1, 1] = 0.9
    gt = np.zeros((3, 3, 3), dtype=bool)
    pred = gt.copy()
    pred[1, 1, 1] = True
    hist = error_intensity_histogram(
        Volume3.from_array(x), BinaryMask3.from_array(pred), BinaryMask3.from_array(gt), bins=2
    )
    assert hist.fp.tolist() == [0, 1]
    assert hist.fn.tolist() == [0, 0]
