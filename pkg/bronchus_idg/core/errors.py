"""
============================================================
ERRORS
异常体系 - 库函数只抛出这些异常, 由 cli 统一转换为退出码
============================================================

退出码约定:
    1 - 文件读写 (VolumeIOError)
    2 - 参数/输入校验 (IdgValidationError)
    3 - 计算前置条件不满足 (PreconditionError)
"""


class IdgError(Exception):
    """所有 bronchus_idg 异常的基类。"""

    exit_code: int = 3


# ============================================================
# 文件读写 (exit 1)
# ============================================================

class VolumeIOError(IdgError):
    exit_code = 1


class VolumeFormatError(VolumeIOError):
    """魔数错误、头部长度错误、维度不是 3D 等。"""


class UnsupportedDatatypeError(VolumeIOError):
    """数据类型不在 {uint8, int16, float32} 之内, 或不是小端。"""


class MaskDomainError(VolumeIOError):
    """掩码文件中出现了 0/1 以外的值。"""


class VolumeWriteError(VolumeIOError):
    pass


# ============================================================
# 校验 (exit 2)
# ============================================================

class IdgValidationError(IdgError):
    exit_code = 2


class InvalidWindowError(IdgValidationError):
    pass


class BoundsError(IdgValidationError):
    pass


class TilingError(IdgValidationError):
    pass


class ShapeMismatchError(IdgValidationError):
    pass


class KernelSizeError(IdgValidationError):
    pass


class ParameterError(IdgValidationError):
    pass


class GeometryError(IdgValidationError):
    """幻影气道树超出网格范围。"""


# ============================================================
# 计算前置条件 (exit 3)
# ============================================================

class PreconditionError(IdgError):
    exit_code = 3


class EmptyMaskError(PreconditionError):
    pass


class NoSeedError(PreconditionError):
    pass


class NormalizationError(PreconditionError):
    """输入图像未归一化到 [0, 1]。"""


class ProbabilityDomainError(PreconditionError):
    """预测概率超出 [0, 1]。"""
