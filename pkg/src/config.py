"""
分析配置常量与运行配置。

所有默认参数在此定义，便于调整；运行时通过扁平的 key = value 配置文件
或命令行参数覆盖。
"""

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError

TOOL_NAME = "foodaccess"
TOOL_VERSION = "0.1.0"

# 地球模型
EARTH_RADIUS_MILES = 3958.7613  # 球体半径（英里）

# 空间网格
DEFAULT_CELL_SIZE_MILES = 2.0  # 网格单元边长（英里）

# EM 设置
DEFAULT_TOL = 1e-8  # 对数似然相对变化收敛阈值
DEFAULT_MAX_ITER = 500  # 最大迭代次数
DEFAULT_N_RESTARTS = 5  # 随机重启次数
DEFAULT_SCREEN_ITER = 20  # 多次重启时每次先跑的短 EM 迭代数，之后只推进领先者
DEFAULT_COV_FLOOR = 1e-6  # 协方差岭（相对于全局协方差对角均值）
DEFAULT_SEED = 20190809  # 主随机种子
KMEANS_LLOYD_ITERS = 10  # k-means++ 之后的 Lloyd 迭代上限
MONOTONE_SLACK = 1e-7  # 对数似然单调性允许的下降量

# 模型选择
ALL_PARAMETERIZATIONS = ["EII", "VII", "EEI", "VVI", "EEE", "EEV", "VVV"]
DEFAULT_K_MIN = 1
DEFAULT_K_MAX = 9
DEFAULT_SILHOUETTE_SAMPLE = 10000  # 轮廓系数抽样规模

# 特征
FEATURE_NAMES = [
    "distance_miles",
    "log_distance_miles",  # log(1 + distance_miles)
    "household_size",
    "latitude_deg",
    "longitude_deg",
    "tract_distance_miles",
]
DEFAULT_FEATURE_SPEC = ["distance_miles"]

# 画像
DEFAULT_THRESHOLD_MILES = 1.0  # 食物援助荒漠的距离分界
DEFAULT_STATE_MEDIAN_INCOME = 54021.0  # 州家庭收入中位数
DEFAULT_QUANTILES = [0.0, 0.25, 0.5, 0.75, 1.0]
DESERT_SHARE = 0.5  # 超出阈值的家庭占比高于此值即列为荒漠
FOUR_CLUSTER_LABELS = ["Very Nearby", "Nearby", "Far Away", "Very Far Away"]

# 输出
COMMENT_PREFIX = "#"
MODEL_FORMAT_VERSION = 1


def split_list(value: str) -> List[str]:
    """把逗号分隔的字符串拆成去空白的列表。"""
    return [item.strip() for item in value.split(",") if item.strip()]


def read_flat_config(path: Path) -> Dict[str, str]:
    """
    读取扁平 key = value 配置文件。

    参数：
        path: 配置文件路径

    返回：
        键到原始字符串值的字典
    """
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"无法读取配置文件 {path}: {exc}") from exc
    try:
        # 无节头的文件挂到一个隐式节下
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"配置文件语法错误 {path}: {exc}") from exc
    return dict(parser["run"])


@dataclass
class RunConfig:
    """一次分析运行的全部参数。"""

    services: Optional[Path] = None
    agencies: Optional[Path] = None
    tract_income: Optional[Path] = None
    feature_spec: List[str] = field(default_factory=lambda: list(DEFAULT_FEATURE_SPEC))
    scaling: str = "none"
    models: List[str] = field(default_factory=lambda: list(ALL_PARAMETERIZATIONS))
    k_min: int = DEFAULT_K_MIN
    k_max: int = DEFAULT_K_MAX
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    n_restarts: int = DEFAULT_N_RESTARTS
    screen_iter: int = DEFAULT_SCREEN_ITER
    cov_floor: float = DEFAULT_COV_FLOOR
    threshold_miles: float = DEFAULT_THRESHOLD_MILES
    state_median_income: float = DEFAULT_STATE_MEDIAN_INCOME
    silhouette_sample_size: int = DEFAULT_SILHOUETTE_SAMPLE
    output_dir: Path = Path("out")
    seed: int = DEFAULT_SEED
    threads: int = 1
    person_weighted: bool = False
    strict_tracts: bool = False
    cell_size_miles: float = DEFAULT_CELL_SIZE_MILES

    @property
    def k_range(self) -> List[int]:
        return list(range(self.k_min, self.k_max + 1))

    def table_paths(self) -> Tuple[Path, Path, Path]:
        """返回三张输入表的路径，缺失或不存在时报错。"""
        paths = (self.services, self.agencies, self.tract_income)
        names = ("services", "agencies", "tract_income")
        for name, path in zip(names, paths):
            if path is None:
                raise ConfigError(f"缺少输入路径: {name}")
            if not Path(path).exists():
                raise ConfigError(f"输入文件不存在: {name} = {path}")
        return paths  # type: ignore[return-value]

    def validate(self) -> None:
        if self.scaling not in ("none", "zscore"):
            raise ConfigError(f"scaling 只能是 none 或 zscore，收到 {self.scaling!r}")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ConfigError(f"非法的 K 范围 {self.k_min}..{self.k_max}")
        if self.tol <= 0 or self.max_iter < 1 or self.n_restarts < 1 or self.screen_iter < 1:
            raise ConfigError("tol > 0, max_iter >= 1, n_restarts >= 1, screen_iter >= 1")
        if self.threshold_miles <= 0 or self.state_median_income <= 0:
            raise ConfigError("threshold_miles 与 state_median_income 必须为正")
        if self.silhouette_sample_size < 2:
            raise ConfigError("silhouette_sample_size 至少为 2")
        if self.threads < 1:
            raise ConfigError("threads 至少为 1")
        unknown = [name for name in self.feature_spec if name not in FEATURE_NAMES]
        if unknown:
            raise ConfigError(f"未知特征: {', '.join(unknown)}")

    def update(self, values: Dict[str, object]) -> None:
        """
        按名称覆盖字段，字符串值按字段类型转换。

        参数：
            values: 字段名到值的映射（None 值被忽略）
        """
        known = {f.name: f for f in fields(self)}
        for key, value in values.items():
            name = key.replace("-", "_")
            if value is None:
                continue
            if name not in known:
                raise ConfigError(f"未知配置项: {key}")
            setattr(self, name, _coerce(name, getattr(self, name), value))

    def canonical(self) -> str:
        """规范化的键值文本，用于计算配置哈希。"""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name == "threads":
                # 线程数不影响结果
                continue
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]


def _coerce(name: str, current: object, value: object) -> object:
    """把配置值转换为与当前字段相同的类型。"""
    if not isinstance(value, str):
        return value
    try:
        if isinstance(current, bool):
            lowered = value.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return lowered in ("true", "1", "yes")
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, list):
            return split_list(value)
        if name in ("services", "agencies", "tract_income", "output_dir"):
            return Path(value.strip())
    except ValueError as exc:
        raise ConfigError(f"配置项 {name} 的值无法解析: {value!r}") from exc
    return value.strip()


def load_run_config(path: Optional[Path] = None, **overrides) -> RunConfig:
    """
    从配置文件加载运行配置并应用覆盖项。

    参数：
        path: 配置文件路径，None 时只使用默认值
        overrides: 命令行覆盖项

    返回：
        校验后的 RunConfig
    """
    config = RunConfig()
    if path is not None:
        config.update(read_flat_config(path))
    config.update(overrides)
    config.validate()
    return config
