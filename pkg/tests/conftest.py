import numpy as np
import pytest

from bronchus_idg.grid import BinaryMask3, GridShape, Volume3
from bronchus_idg.loss import build_idg_weight_maps
from bronchus_idg.phantom import PhantomSpec, generate


def tube_mask(extents=(24, 24, 32), radius=3.0, axis_xy=None, z_range=(4, 28), spacing=(1.0, 1.0, 1.0)):
    """沿 z 轴的直圆管。"""
    nx, ny, nz = extents
    cx, cy = axis_xy if axis_xy is not None else ((nx - 1) / 2.0, (ny - 1) / 2.0)
    x, y, z = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    inside = ((x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2) & (z >= z_range[0]) & (z < z_range[1])
    return BinaryMask3(GridShape.of(extents, spacing), inside)


def line_skeleton(extents=(16, 16, 20), z_range=(2, 18), xy=(8, 8)):
    arr = np.zeros(extents, dtype=bool)
    arr[xy[0], xy[1], z_range[0]:z_range[1]] = True
    return BinaryMask3.from_array(arr)


def y_skeleton():
    """
    Y 形 1 体素宽骨架: 竖直主干 (z 方向) 在 (10, 10, 10) 分叉为两条对角分支。
    分叉点只有一个体素, 分解结果为 3 条分支。
    """
    arr = np.zeros((21, 21, 24), dtype=bool)
    arr[10, 10, 10:22] = True
    for k in range(1, 8):
        arr[10 + k, 10, 10 - k] = True
        arr[10 - k, 10, 10 - k] = True
    return BinaryMask3.from_array(arr)


def random_mask(rng, extents, p=0.1):
    return BinaryMask3.from_array(rng.random(extents) < p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tube():
    return tube_mask()


@pytest.fixture
def tube_image(tube):
    """管内 -900 HU, 管外 -200 HU 的 CT。"""
    data = np.where(tube.data, -900.0, -200.0)
    return Volume3(tube.shape, data)


@pytest.fixture(scope="session")
def phantom_case():
    return generate(PhantomSpec())


@pytest.fixture(scope="session")
def phantom_depth1():
    return generate(PhantomSpec(depth=1, grid_size=(40, 40, 40), root_length=16.0, n_confusable_pockets=0))


@pytest.fixture(scope="session")
def phantom_bundle(phantom_case):
    return build_idg_weight_maps(phantom_case.image, phantom_case.mask)
