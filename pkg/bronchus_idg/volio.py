# -*- coding: utf-8 -*-
"""
@File    : volio.py
@Description: NIfTI-1 (.nii / .nii.gz) and raw+JSON-sidecar volume I/O.
"""

# Input: file paths.
# Output: (Volume3 | BinaryMask3, VolumeHeader) pairs; files written back in the same formats.
#
# 只支持单文件、小端的 NIfTI-1; NIfTI-2 与 .hdr/.img 成对文件一律拒绝。
# 方向/仿射字段原样透传但不参与计算, 几何只使用 pixdim 体素间距。

import gzip
import json
import logging
import struct
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import nibabel as nib
import numpy as np
from nibabel.affines import voxel_sizes
from nibabel.openers import ImageOpener
from nibabel.volumeutils import array_to_file
from pydantic import BaseModel, ConfigDict, field_validator

from .core.errors import (
    MaskDomainError,
    UnsupportedDatatypeError,
    VolumeFormatError,
    VolumeIOError,
    VolumeWriteError,
)
from .grid import BinaryMask3, GridShape, Volume3

logger = logging.getLogger(__name__)

Datatype = Literal["uint8", "int16", "float32"]
SUPPORTED_DTYPES = {"uint8": np.uint8, "int16": np.int16, "float32": np.float32}

NIFTI1_HEADER_SIZE = 348
NIFTI1_MAGIC = b"n+1\x00"
NIFTI1_VOX_OFFSET = 352
NIFTI2_HEADER_SIZE = 540


class VolumeHeader(BaseModel):
    """读写时携带的头部信息。"""
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    datatype: Datatype = "float32"
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    affine: Optional[List[List[float]]] = None

    model_config = ConfigDict(frozen=True)

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, v):
        if min(v) <= 0:
            raise ValueError(f"dims 必须为正: {v}")
        return v

    @field_validator("spacing")
    @classmethod
    def _positive_spacing(cls, v):
        if not min(v) > 0:
            raise ValueError(f"spacing 必须为正: {v}")
        return v

    @field_validator("scl_slope")
    @classmethod
    def _nonzero_slope(cls, v):
        if v == 0 or not np.isfinite(v):
            raise ValueError("scl_slope 必须是非零有限数")
        return v

    @classmethod
    def for_grid(cls, shape: GridShape, datatype: Datatype = "float32") -> "VolumeHeader":
        return cls(dims=shape.extents, spacing=shape.spacing, datatype=datatype)


AnyGrid = Union[Volume3, BinaryMask3]


# ==============================================================================
# 路径工具
# ==============================================================================

def _is_gzip(path: Path) -> bool:
    return path.name.lower().endswith(".gz")


def _is_raw(path: Path) -> bool:
    return path.suffix.lower() == ".raw"


def sidecar_path(path: Path) -> Path:
    """case.raw 对应的 JSON 描述文件 case.json。"""
    return path.with_suffix(".json")


def _ensure_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise VolumeWriteError(f"无法创建输出目录 {path.parent}: {e}") from e


# ==============================================================================
# NIfTI-1 读取
# ==============================================================================

def _check_nifti1_header(path: Path) -> None:
    """在交给 nibabel 之前, 先按字节检查头部长度、字节序与魔数。"""
    opener = gzip.open if _is_gzip(path) else open
    try:
        with opener(path, "rb") as f:
            head = f.read(NIFTI1_HEADER_SIZE)
    except FileNotFoundError as e:
        raise VolumeIOError(f"文件不存在: {path}") from e
    except (OSError, EOFError) as e:
        raise VolumeFormatError(f"无法读取文件头 {path}: {e}") from e

    if len(head) < NIFTI1_HEADER_SIZE:
        raise VolumeFormatError(f"文件过短, 不是 NIfTI-1: {path}")
    (size_le,) = struct.unpack("<i", head[:4])
    (size_be,) = struct.unpack(">i", head[:4])
    if size_le != NIFTI1_HEADER_SIZE:
        if size_be == NIFTI1_HEADER_SIZE:
            raise UnsupportedDatatypeError(f"只支持小端 NIfTI-1: {path}")
        if NIFTI2_HEADER_SIZE in (size_le, size_be):
            raise VolumeFormatError(f"不支持 NIfTI-2: {path}")
        raise VolumeFormatError(f"sizeof_hdr={size_le}, 不是 NIfTI-1: {path}")
    magic = head[344:348]
    if magic != NIFTI1_MAGIC:
        raise VolumeFormatError(f"魔数 {magic!r} 不是单文件 NIfTI-1 ('n+1'): {path}")


def _read_nifti(path: Path) -> Tuple[np.ndarray, VolumeHeader]:
    _check_nifti1_header(path)
    try:
        img = nib.Nifti1Image.from_filename(str(path))
    except Exception as e:
        raise VolumeFormatError(f"nibabel 解析失败 {path}: {e}") from e

    hdr = img.header
    dtype_name = np.dtype(hdr.get_data_dtype()).name
    if dtype_name not in SUPPORTED_DTYPES:
        raise UnsupportedDatatypeError(f"不支持的数据类型 {dtype_name}: {path}")

    shape = img.shape
    if len(shape) == 4 and shape[3] == 1:
        shape = shape[:3]
    if len(shape) != 3:
        raise VolumeFormatError(f"只支持 3D 体数据, 实际维度 {img.shape}: {path}")

    data = img.get_fdata(dtype=np.float64).reshape(shape)
    # 载入后 header 里的 scl_slope / scl_inter 会被重置为 NaN, 实际值保存在 dataobj 上
    slope = getattr(img.dataobj, "slope", None)
    inter = getattr(img.dataobj, "inter", None)
    header = VolumeHeader(
        dims=tuple(int(n) for n in shape),
        spacing=tuple(float(s) for s in hdr.get_zooms()[:3]),
        datatype=dtype_name,
        scl_slope=float(slope) if slope is not None and np.isfinite(slope) and slope != 0 else 1.0,
        scl_inter=float(inter) if inter is not None and np.isfinite(inter) else 0.0,
        affine=np.asarray(img.affine, dtype=float).tolist(),
    )
    return data, header


# ==============================================================================
# raw + JSON 调试格式
# ==============================================================================

def read_raw(path: str | Path) -> Tuple[np.ndarray, VolumeHeader]:
    """读取 .raw (x 变化最快) 与同名 .json 描述文件。"""
    path = Path(path)
    meta_path = sidecar_path(path)
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        dims = tuple(int(n) for n in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
        dtype_name = meta.get("dtype", "float32")
    except FileNotFoundError as e:
        raise VolumeIOError(f"文件不存在: {meta_path}") from e
    except (KeyError, ValueError, TypeError) as e:
        raise VolumeFormatError(f"描述文件格式错误 {meta_path}: {e}") from e
    if dtype_name not in SUPPORTED_DTYPES:
        raise UnsupportedDatatypeError(f"不支持的数据类型 {dtype_name}: {meta_path}")

    dtype = np.dtype(SUPPORTED_DTYPES[dtype_name]).newbyteorder("<")
    try:
        flat = np.fromfile(path, dtype=dtype)
    except FileNotFoundError as e:
        raise VolumeIOError(f"文件不存在: {path}") from e
    if flat.size != int(np.prod(dims)):
        raise VolumeFormatError(f"{path} 含 {flat.size} 个值, 与 dims={dims} 不符")
    data = flat.reshape(dims, order="F").astype(np.float64)
    return data, VolumeHeader(dims=dims, spacing=spacing, datatype=dtype_name)


def write_raw(path: str | Path, v: AnyGrid) -> Path:
    """写出 .raw 与 JSON 描述文件 {dims, spacing, dtype}; 掩码存为 uint8, 体数据存为 float32。"""
    path = Path(path)
    _ensure_parent(path)
    dtype_name = "uint8" if isinstance(v, BinaryMask3) else "float32"
    dtype = np.dtype(SUPPORTED_DTYPES[dtype_name]).newbyteorder("<")
    meta = {"dims": list(v.shape.extents), "spacing": list(v.shape.spacing), "dtype": dtype_name}
    try:
        with open(path, "wb") as f:
            f.write(v.data.astype(dtype).tobytes(order="F"))
        with open(sidecar_path(path), "w", encoding="utf-8") as f:
            json.dump(meta, f, ensure_ascii=False, indent=2)
    except OSError as e:
        raise VolumeWriteError(f"写入失败 {path}: {e}") from e
    return path


# ==============================================================================
# 对外接口
# ==============================================================================

def _to_mask(data: np.ndarray, path: Path) -> np.ndarray:
    rounded = np.rint(data)
    if not np.isin(rounded, (0.0, 1.0)).all():
        bad = np.unique(rounded[~np.isin(rounded, (0.0, 1.0))])[:5]
        raise MaskDomainError(f"掩码 {path} 含有非 0/1 的值, 例如 {bad.tolist()}")
    return rounded.astype(bool)


def read_volume(path: str | Path, as_mask: bool = False) -> Tuple[AnyGrid, VolumeHeader]:
    """
    读取体数据或掩码。

    Args:
        path: .nii / .nii.gz / .raw 文件。
        as_mask: True 时返回 BinaryMask3, 并要求所有值在取整后属于 {0, 1}。

    Returns:
        (Volume3 或 BinaryMask3, VolumeHeader)。标量体数据的值为 raw·scl_slope + scl_inter。
    """
    path = Path(path)
    if _is_raw(path):
        data, header = read_raw(path)
    else:
        data, header = _read_nifti(path)

    shape = GridShape.of(header.dims, header.spacing)
    if as_mask:
        grid: AnyGrid = BinaryMask3(shape, _to_mask(data, path))
    else:
        if not np.isfinite(data).all():
            raise VolumeFormatError(f"{path} 中含有 NaN/Inf")
        grid = Volume3(shape, data)
    logger.debug("读取 %s: dims=%s spacing=%s dtype=%s", path, header.dims, header.spacing, header.datatype)
    return grid, header


def _pick_affine(shape: GridShape, header: Optional[VolumeHeader]) -> np.ndarray:
    """透传输入头中的仿射矩阵, 但前提是它的体素尺寸与当前间距一致; 否则使用对角矩阵。"""
    if header is not None and header.affine is not None:
        affine = np.asarray(header.affine, dtype=float)
        if affine.shape == (4, 4) and np.allclose(voxel_sizes(affine), shape.spacing, atol=1e-5):
            return affine
    return np.diag([*shape.spacing, 1.0])


def write_volume(
    path: str | Path,
    v: AnyGrid,
    header: Optional[VolumeHeader] = None,
    datatype: Optional[Datatype] = None,
) -> Path:
    """
    写出 NIfTI-1 (348 字节头, vox_offset 352, 小端) 或 raw 文件。

    Args:
        path: 输出路径, 后缀决定格式 (.nii / .nii.gz / .raw)。
        v: 体数据或掩码。掩码固定存为 uint8。
        header: 可选的参考头部, 提供 datatype / scl_slope / scl_inter / affine。
        datatype: 显式指定的数据类型, 优先于 header.datatype。

    Returns:
        写出的路径。
    """
    path = Path(path)
    if _is_raw(path):
        return write_raw(path, v)

    shape = v.shape
    if isinstance(v, BinaryMask3):
        dtype_name: str = "uint8"
        slope, inter = 1.0, 0.0
    else:
        dtype_name = datatype or (header.datatype if header is not None else "float32")
        slope = header.scl_slope if header is not None else 1.0
        inter = header.scl_inter if header is not None else 0.0
    if dtype_name not in SUPPORTED_DTYPES:
        raise UnsupportedDatatypeError(f"不支持的数据类型 {dtype_name}")
    dtype = np.dtype(SUPPORTED_DTYPES[dtype_name])

    # 存储值 raw 满足 raw·slope + inter = 数据值
    if isinstance(v, BinaryMask3):
        raw = v.data.astype(np.uint8)
    else:
        scaled = (v.data.astype(np.float64) - inter) / slope
        if dtype.kind in "iu":
            scaled = np.rint(scaled)
            info = np.iinfo(dtype)
            if scaled.min() < info.min or scaled.max() > info.max:
                raise UnsupportedDatatypeError(
                    f"数据范围 [{scaled.min()}, {scaled.max()}] 超出 {dtype_name}, 请调整 scl_slope/scl_inter"
                )
        raw = scaled.astype(dtype)

    # Nifti1Image.to_filename 会按数据重新计算 scl_slope / scl_inter, 这里直接写头和数据
    affine = _pick_affine(shape, header)
    hdr = nib.Nifti1Header(endianness="<")
    hdr.set_data_shape(shape.extents)
    hdr.set_data_dtype(dtype)
    hdr.set_qform(affine, code=1)
    hdr.set_sform(affine, code=1)
    hdr.set_zooms(shape.spacing)
    hdr.set_slope_inter(slope, inter)
    hdr.set_data_offset(NIFTI1_VOX_OFFSET)

    _ensure_parent(path)
    try:
        with ImageOpener(str(path), "wb") as f:
            hdr.write_to(f)
            array_to_file(raw, f, hdr.get_data_dtype(), offset=NIFTI1_VOX_OFFSET, order="F")
    except OSError as e:
        raise VolumeWriteError(f"写入失败 {path}: {e}") from e
    logger.debug("写出 %s (%s)", path, dtype_name)
    return path
