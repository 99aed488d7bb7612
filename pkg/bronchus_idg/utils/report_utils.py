# -*- coding: utf-8 -*-
"""
@File    : report_utils.py
@Description: JSON / CSV reporting helpers for the CLI.
"""

# Input: result dictionaries, weight maps, histograms.
# Output: JSON text on stdout, CSV files.

import csv
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..grid import BinaryMask3, Volume3


def _default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "model_dump"):
        return obj.model_dump(mode="json")
    return str(obj)


def to_json(data_obj: Dict) -> str:
    """
    将结果对象序列化为 JSON 字符串。

    Args:
        data_obj (Dict): 要输出的数据, 可以包含 numpy 标量/数组和 pydantic 模型。

    Returns:
        str: 单行 JSON 文本。
    """
    return json.dumps(data_obj, ensure_ascii=False, default=_default)


def emit_json(data_obj: Dict) -> None:
    """把机器可读结果写到 stdout (日志一律走 stderr)。"""
    sys.stdout.write(to_json(data_obj) + "\n")
    sys.stdout.flush()


def summarize_weights(weights: Volume3, region: Optional[BinaryMask3] = None) -> Dict[str, Any]:
    """
    权重图摘要: 最小/最大/均值, 以及膨胀区域内外的体素数。
    """
    w = weights.data.astype(np.float64)
    summary: Dict[str, Any] = {
        "min": float(w.min()),
        "max": float(w.max()),
        "mean": float(w.mean()),
        "n_voxels": int(w.size),
    }
    if region is not None:
        inside = region.data
        summary["region_voxels"] = int(np.count_nonzero(inside))
        summary["outside_voxels"] = int(w.size - summary["region_voxels"])
        summary["region_mean"] = float(w[inside].mean()) if inside.any() else None
    return summary


def write_histogram_csv(path: str | Path, edges: np.ndarray, columns: Dict[str, np.ndarray]) -> Path:
    """
    写出直方图 CSV: bin_lo, bin_hi, 然后是 columns 中的每一列计数。
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_lo", "bin_hi", *names])
        for i in range(len(edges) - 1):
            row = [f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}"]
            row.extend(int(columns[name][i]) for name in names)
            writer.writerow(row)
    return path
