# -*- coding: utf-8 -*-
"""
@File    : parallel.py
@Description: Thread-count resolution and slab-parallel evaluation.
"""

# Input: a per-slab function and a thread count.
# Output: slab results concatenated in slab order.

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..core.config import settings


def resolve_threads(flag: Optional[int] = None) -> int:
    """命令行参数 > IDG_THREADS 环境变量 > 自动 (CPU 核数)。显式给出的 0 表示自动, 此时不读取环境变量。"""
    n = settings.THREADS if flag is None else flag
    if n < 0:
        raise ValueError(f"线程数不能为负数, 收到 {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def slab_bounds(n: int, n_slabs: int) -> List[Tuple[int, int]]:
    """把 [0, n) 切成至多 n_slabs 个连续区间。"""
    n_slabs = max(1, min(n_slabs, n))
    edges = np.linspace(0, n, n_slabs + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_slabs(
    func: Callable[[int, int], np.ndarray],
    n: int,
    threads: int = 1,
) -> np.ndarray:
    """
    沿最后一个轴 (z) 分块并行执行 func(z0, z1), 结果按 z 顺序拼接。

    每个 slab 的计算互不依赖, 拼接顺序固定, 因此结果与线程数无关。

    Args:
        func: 接收 [z0, z1) 区间, 返回形状为 (..., z1 - z0) 的数组。
        n: z 轴长度。
        threads: 线程数, ≤1 时串行执行。
    """
    bounds = slab_bounds(n, max(threads, 1) * 2 if threads > 1 else 1)
    if threads <= 1 or len(bounds) == 1:
        parts = [func(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: func(*ab), bounds))
    return np.concatenate(parts, axis=-1)
