# -*- coding: utf-8 -*-
"""
@File    : log_utils.py
@Description: Logging setup shared by the CLI and the demo script.
"""

import logging
import sys

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def setup_logging(level: str = "INFO") -> None:
    """
    为根 logger 挂载唯一一个 stderr handler。

    stdout 只留给机器可读的 JSON, 所有人类可读日志都写到 stderr。
    重复调用只更新日志级别, 不会叠加 handler。
    """
    root = logging.getLogger()
    root.setLevel(level.upper())
    for handler in root.handlers:
        if getattr(handler, "_idg_handler", False):
            return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._idg_handler = True
    root.addHandler(handler)
