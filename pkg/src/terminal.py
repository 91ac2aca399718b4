"""
终端输出模块。

进度与诊断信息写到标准错误，标准输出只留给结果文件路径。
"""

import logging
import sys
from typing import Optional, TextIO

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
LOG_DATE_FORMAT = "%H:%M:%S"


class Terminal:
    """
    终端控制器，管理挂在 src 包日志器上的标准错误处理器。
    """

    def __init__(self):
        """初始化终端控制器。"""
        self.handler: Optional[logging.Handler] = None
        self.initialized = False

    def init_terminal(self, verbose: bool = False, stream: Optional[TextIO] = None) -> logging.Logger:
        """
        安装日志处理器。

        参数：
            verbose: True 时输出 DEBUG 级别
            stream: 目标流，默认为 sys.stderr

        返回：
            包级日志器
        """
        self.restore_terminal()
        logger = logging.getLogger("src")
        self.handler = logging.StreamHandler(stream or sys.stderr)
        self.handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
        logger.addHandler(self.handler)
        logger.setLevel(logging.DEBUG if verbose else logging.INFO)
        # 不再向根日志器重复输出
        logger.propagate = False
        self.initialized = True
        return logger

    def restore_terminal(self):
        """移除处理器，恢复日志器的原始状态。"""
        if self.initialized and self.handler:
            logger = logging.getLogger("src")
            logger.removeHandler(self.handler)
            logger.setLevel(logging.NOTSET)
            logger.propagate = True
            self.handler.flush()
            self.handler = None
            self.initialized = False


# 全局终端实例
_terminal_instance: Optional[Terminal] = None


def get_terminal() -> Terminal:
    """获取或创建全局终端实例。"""
    global _terminal_instance
    if _terminal_instance is None:
        _terminal_instance = Terminal()
    return _terminal_instance


def init_terminal(verbose: bool = False, stream: Optional[TextIO] = None) -> logging.Logger:
    """初始化终端日志输出。"""
    return get_terminal().init_terminal(verbose, stream)


def restore_terminal():
    """恢复终端到原始状态。"""
    get_terminal().restore_terminal()
