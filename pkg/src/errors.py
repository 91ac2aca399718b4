"""
异常层次。

库函数只负责抛出；命令行层按类型映射退出码。
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class FoodAccessError(ValueError):
    """所有分析错误的基类。"""

    exit_code = EXIT_USAGE


class ConfigError(FoodAccessError):
    """配置或用法错误。"""

    exit_code = EXIT_USAGE


class DataError(FoodAccessError):
    """输入数据无法读取或不满足约束。"""

    exit_code = EXIT_DATA


class NumericalError(FoodAccessError):
    """数值拟合退化或没有可用结果。"""

    exit_code = EXIT_NUMERICAL
