"""
合成场景生成模块。

生成三张输入表与真值标签，使整条流水线无需专有数据即可测试。
默认参数取自公开的各簇观测值（平均距离、家庭份额、家庭构成）。
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .config import (
    DEFAULT_SEED,
    DEFAULT_STATE_MEDIAN_INCOME,
    DEFAULT_THRESHOLD_MILES,
    DESERT_SHARE,
    EARTH_RADIUS_MILES,
    read_flat_config,
    split_list,
)
from .errors import ConfigError
from .geo import destination_point, miles_per_degree_latitude
from .ingest import load_tables
from .renderer import Stamp, write_csv

logger = logging.getLogger(__name__)

SERVICES_FILE = "services.csv"
AGENCIES_FILE = "agencies.csv"
INCOME_FILE = "tract_income.csv"
TRUTH_FILE = "ground_truth.csv"
ROUNDTRIP_TOLERANCE_MILES = 1e-6
MIN_DISTANCE_MILES = 0.01  # 负的距离抽样截断到此值


@dataclass
class SynthConfig:
    """
    合成场景参数。

    距离混合与各簇家庭构成的默认值按四个距离簇设置：
    越远的簇家庭人数越多。
    """

    n_families: int = 50000
    n_agencies: int = 400
    n_tracts: int = 900
    weights: List[float] = field(default_factory=lambda: [0.3246, 0.3273, 0.3201, 0.0280])
    means: List[float] = field(default_factory=lambda: [0.42, 1.45, 4.63, 19.47])
    sds: List[float] = field(default_factory=lambda: [0.15, 0.4, 1.2, 5.0])
    mean_adults: List[float] = field(default_factory=lambda: [1.12, 1.23, 1.26, 1.38])
    mean_children: List[float] = field(default_factory=lambda: [0.62, 0.77, 0.78, 0.82])
    mean_seniors: List[float] = field(default_factory=lambda: [0.61, 0.64, 0.67, 0.61])
    income_log_offset: float = -0.45  # 普查区收入 = 中位数 × exp(offset + sd·z)
    income_log_sd: float = 0.35
    state_median_income: float = DEFAULT_STATE_MEDIAN_INCOME
    lat_min: float = 41.0
    lat_max: float = 41.7
    lon_min: float = -82.2
    lon_max: float = -81.0
    seed: int = DEFAULT_SEED

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def validate(self) -> None:
        if self.n_families < 1:
            raise ConfigError(f"n_families 必须 >= 1: {self.n_families}")
        if self.n_agencies < 1:
            raise ConfigError(f"n_agencies 必须 >= 1: {self.n_agencies}")
        if not 1 <= self.n_tracts <= self.n_families:
            raise ConfigError("需要 n_families >= n_tracts >= 1")
        K = self.n_components
        lists = {
            "means": self.means,
            "sds": self.sds,
            "mean_adults": self.mean_adults,
            "mean_children": self.mean_children,
            "mean_seniors": self.mean_seniors,
        }
        for name, values in lists.items():
            if len(values) != K:
                raise ConfigError(f"{name} 的长度应为 {K}")
        weights = np.array(self.weights, dtype=float)
        if K == 0 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-6:
            raise ConfigError(f"weights 必须位于单纯形上: {self.weights}")
        means = np.array(self.means, dtype=float)
        if np.any(means < 0) or np.any(np.diff(means) <= 0):
            raise ConfigError(f"means 必须非负且严格递增: {self.means}")
        if any(sd < 0 for sd in self.sds):
            raise ConfigError("sds 不能为负")
        if any(m < 1 for m in self.mean_adults):
            raise ConfigError("每户至少一名成人，mean_adults 必须 >= 1")
        if any(m < 0 for m in self.mean_children + self.mean_seniors):
            raise ConfigError("mean_children 与 mean_seniors 不能为负")
        if not (-90 <= self.lat_min < self.lat_max <= 90 and -180 <= self.lon_min < self.lon_max <= 180):
            raise ConfigError("区域边界框无效")
        # 边界框的最短边必须容得下最大的平均距离
        mid_lat = math.radians(0.5 * (self.lat_min + self.lat_max))
        height = (self.lat_max - self.lat_min) * miles_per_degree_latitude()
        width = (self.lon_max - self.lon_min) * miles_per_degree_latitude() * math.cos(mid_lat)
        if min(height, width) < max(self.means):
            raise ConfigError(
                f"边界框过小 ({height:.1f} × {width:.1f} 英里)，容不下平均距离 {max(self.means)}"
            )

    def config_hash(self) -> str:
        canonical = "\n".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class GenerateResult:
    """生成结果：文件路径与生成器记下的真值。"""

    paths: Dict[str, Path]
    components: np.ndarray
    sampled_distances: np.ndarray
    aggregates: pd.DataFrame
    planted_deserts: List[str]


def _unit_vectors(lat_deg: np.ndarray, lon_deg: np.ndarray) -> np.ndarray:
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def _chord_to_miles(chord: np.ndarray) -> np.ndarray:
    return 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


def _aggregates(services: pd.DataFrame, components: np.ndarray, distances: np.ndarray, K: int) -> pd.DataFrame:
    """每个真值分量的计数与平均距离。"""
    frame = services.assign(component=components, distance=distances)
    frame["n_people"] = frame["n_adults"] + frame["n_children"] + frame["n_seniors"]
    grouped = frame.groupby("component").agg(
        n_families=("family_id", "size"),
        n_adults=("n_adults", "sum"),
        n_children=("n_children", "sum"),
        n_seniors=("n_seniors", "sum"),
        n_people=("n_people", "sum"),
        n_tracts=("tract_id", "nunique"),
        mean_distance=("distance", "mean"),
    )
    return grouped.reindex(range(K))


def generate(config: SynthConfig, out_dir, seed: Optional[int] = None) -> GenerateResult:
    """
    生成合成数据集。

    参数：
        config: 场景参数
        out_dir: 输出目录
        seed: 覆盖 config.seed

    返回：
        GenerateResult；同一 (config, seed) 的输出文件逐字节相同
    """
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(seed))
    n, K = config.n_families, config.n_components
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # 机构均匀分布在边界框内
    agency_lat = rng.uniform(config.lat_min, config.lat_max, config.n_agencies)
    agency_lon = rng.uniform(config.lon_min, config.lon_max, config.n_agencies)
    agency_ids = np.array([f"A{i:05d}" for i in range(config.n_agencies)])

    # 家庭：分量、距离、指定机构、方位角
    weights = np.array(config.weights, dtype=float)
    components = rng.choice(K, size=n, p=weights / weights.sum())
    distances = rng.normal(np.array(config.means)[components], np.array(config.sds)[components])
    distances = np.maximum(distances, MIN_DISTANCE_MILES)
    assigned = rng.integers(config.n_agencies, size=n)
    bearings = rng.uniform(0.0, 2.0 * math.pi, n)
    family_lat, family_lon = destination_point(
        agency_lat[assigned], agency_lon[assigned], bearings, distances
    )

    n_adults = 1 + rng.poisson(np.array(config.mean_adults)[components] - 1.0)
    n_children = rng.poisson(np.array(config.mean_children)[components])
    n_seniors = rng.poisson(np.array(config.mean_seniors)[components])

    # 普查区：按最近的普查区中心分桶
    tract_lat = rng.uniform(config.lat_min, config.lat_max, config.n_tracts)
    tract_lon = rng.uniform(config.lon_min, config.lon_max, config.n_tracts)
    tract_ids = np.array([f"T{i:05d}" for i in range(config.n_tracts)])
    _, family_tract = cKDTree(_unit_vectors(tract_lat, tract_lon)).query(
        _unit_vectors(family_lat, family_lon)
    )
    incomes = config.state_median_income * np.exp(
        config.income_log_offset + config.income_log_sd * rng.standard_normal(config.n_tracts)
    )

    services = pd.DataFrame(
        {
            "family_id": [f"F{i:07d}" for i in range(n)],
            "latitude": family_lat,
            "longitude": family_lon,
            "agency_id": agency_ids[assigned],
            "n_adults": n_adults,
            "n_children": n_children,
            "n_seniors": n_seniors,
            "tract_id": tract_ids[family_tract],
        }
    )
    agencies = pd.DataFrame(
        {
            "agency_id": agency_ids,
            "latitude": agency_lat,
            "longitude": agency_lon,
            "name": [f"Agency {i}" for i in range(config.n_agencies)],
        }
    )
    tracts = pd.DataFrame({"tract_id": tract_ids, "avg_household_income": np.round(incomes, 2)})
    truth = pd.DataFrame({"family_row_index": np.arange(n), "component_label": components})

    stamp = Stamp(config_hash=config.config_hash(), seed=seed)
    paths = {
        "services": out_dir / SERVICES_FILE,
        "agencies": out_dir / AGENCIES_FILE,
        "tract_income": out_dir / INCOME_FILE,
        "ground_truth": out_dir / TRUTH_FILE,
    }
    write_csv(services, paths["services"], stamp)
    write_csv(agencies, paths["agencies"], stamp)
    write_csv(tracts, paths["tract_income"], stamp)
    write_csv(truth, paths["ground_truth"], stamp)

    # 生成器自己的最近机构簿记（k-d 树，独立于空间网格）
    chord, _ = cKDTree(_unit_vectors(agency_lat, agency_lon)).query(_unit_vectors(family_lat, family_lon))
    beyond = pd.Series(_chord_to_miles(chord) > DEFAULT_THRESHOLD_MILES)
    share = beyond.groupby(services["tract_id"]).mean()
    planted = sorted(share[share > DESERT_SHARE].index.tolist())

    named = services.rename(columns={"latitude": "latitude_deg", "longitude": "longitude_deg"})
    logger.info("生成 %d 户家庭、%d 个机构、%d 个普查区 -> %s", n, config.n_agencies, config.n_tracts, out_dir)
    return GenerateResult(
        paths=paths,
        components=components,
        sampled_distances=distances,
        aggregates=_aggregates(named, components, distances, K),
        planted_deserts=planted,
    )


@dataclass
class RoundtripReport:
    """生成-加载往返检查的结果。"""

    rejections: int
    max_error_miles: float
    mismatches: List[int]

    @property
    def passed(self) -> bool:
        return self.rejections == 0 and not self.mismatches


def roundtrip_check(config: SynthConfig, out_dir, seed: Optional[int] = None) -> RoundtripReport:
    """
    生成后用接入模块重新加载，逐行比较重算距离与抽样距离。

    参数：
        config: 场景参数
        out_dir: 输出目录
        seed: 覆盖 config.seed

    返回：
        RoundtripReport
    """
    result = generate(config, out_dir, seed)
    tables = load_tables(result.paths["services"], result.paths["agencies"], result.paths["tract_income"])
    rejections = sum(tables.report.rejected(table) for table in tables.report.input_rows)
    if rejections:
        return RoundtripReport(rejections=rejections, max_error_miles=math.nan, mismatches=[])
    errors = np.abs(tables.distance_miles - result.sampled_distances)
    mismatches = np.flatnonzero(errors >= ROUNDTRIP_TOLERANCE_MILES).tolist()
    if mismatches:
        logger.error("%d 行距离往返不一致，最大误差 %.3g 英里", len(mismatches), errors.max())
    return RoundtripReport(rejections=0, max_error_miles=float(errors.max()), mismatches=mismatches)


def load_synth_config(path) -> Tuple[SynthConfig, Path]:
    """
    从扁平配置文件读取场景参数。

    返回：
        (SynthConfig, 输出目录)
    """
    values = read_flat_config(Path(path))
    output_dir = Path(values.pop("output_dir", "synth"))
    config = SynthConfig()
    known = {f.name: f for f in fields(config)}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"未知的合成配置项: {key}")
        current = getattr(config, key)
        try:
            if isinstance(current, list):
                value = [float(item) for item in split_list(raw)]
            elif isinstance(current, int):
                value = int(raw)
            else:
                value = float(raw)
        except ValueError as exc:
            raise ConfigError(f"合成配置项 {key} 的值无法解析: {raw!r}") from exc
        setattr(config, key, value)
    config.validate()
    return config, output_dir
