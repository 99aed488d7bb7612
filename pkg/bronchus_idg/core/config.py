import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Literal, Tuple

from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# --- 加载 .env 文件 ---
# find_dotenv(usecwd=True) 从当前工作目录向上搜索; 找不到时只依赖系统环境变量。
# 这里不打印任何提示, stdout 只留给 JSON 输出。
dotenv_path = find_dotenv(usecwd=True)
if dotenv_path:
    load_dotenv(dotenv_path=dotenv_path)


class Settings(BaseSettings):
    """
    进程级配置, 自动从 IDG_ 前缀的环境变量中加载。
    """
    # 0 表示自动 (os.cpu_count())
    THREADS: int = Field(default=0, ge=0)
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(env_prefix="IDG_", env_file=None, extra="ignore")


# 全局 settings 实例, 其他模块直接导入使用
settings = Settings()


# ==============================================================================
# IDG 损失超参数
# ==============================================================================

class WeightMode(str, Enum):
    """权重图的组合方式 (对应消融实验中的各个配置)。"""
    NONE = "none"            # 普通 BCE, 权重恒为 1
    DILATION = "dilation"    # 膨胀区域内权重为 2
    DARK_HARD = "dark_hard"  # 膨胀区域内统一按 "越暗越难" 打分
    INTENSITY = "intensity"  # 只用 W^in
    DISTANCE = "distance"    # 只用 W^dis
    FULL = "full"            # W^in · W^dis


class IdgConfig(BaseModel):
    """
    IDG 权重图的全部超参数。默认值即敏感性分析中的最优设置 (s=19, θ=1.5)。
    """
    kernel_size: int = 19
    theta: float = 1.5
    w_dila: float = 1.0
    hu_window: Tuple[float, float] = (-1000.0, 600.0)
    sigma_floor: float = 1e-4
    eps: float = 1e-7
    skeleton_source: Literal["dilated", "bronchus"] = "dilated"
    weight_mode: WeightMode = WeightMode.FULL

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError(f"kernel_size 必须是 ≥1 的奇数, 收到 {v}")
        return v

    @field_validator("theta", "sigma_floor")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"必须为正数, 收到 {v}")
        return v

    @field_validator("w_dila")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"w_dila 不能为负, 收到 {v}")
        return v

    @field_validator("eps")
    @classmethod
    def _eps_range(cls, v: float) -> float:
        if not 0 < v < 0.5:
            raise ValueError(f"eps 必须在 (0, 0.5) 之内, 收到 {v}")
        return v

    @model_validator(mode="after")
    def _window_order(self) -> "IdgConfig":
        lo, hi = self.hu_window
        if not lo < hi:
            raise ValueError(f"HU 窗口要求 lo < hi, 收到 ({lo}, {hi})")
        return self


def read_toml_table(path: str | os.PathLike, table: str) -> Dict[str, Any]:
    """
    读取 TOML 文件。若存在名为 table 的子表则返回该子表, 否则返回顶层键值。
    """
    with open(path, "rb") as f:
        data = tomllib.load(f)
    section = data.get(table)
    if isinstance(section, dict):
        return dict(section)
    return {k: v for k, v in data.items() if not isinstance(v, dict)}


def load_idg_config(path: str | os.PathLike | None = None, **overrides: Any) -> IdgConfig:
    """
    从 TOML 文件 (顶层或 [idg] 表) 构建 IdgConfig, overrides 中非 None 的值覆盖文件中的值。

    Args:
        path: TOML 配置文件路径, 可选。
        overrides: 命令行传入的字段值。

    Returns:
        校验后的 IdgConfig。
    """
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_toml_table(Path(path), "idg"))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return IdgConfig(**values)
