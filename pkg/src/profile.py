"""
聚类画像模块。

聚类之后的统计：簇命名、各簇变量表、距离分位数、1 英里覆盖率、
贫富普查区划分与食物援助荒漠列表。
"""

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import (
    DEFAULT_QUANTILES,
    DEFAULT_STATE_MEDIAN_INCOME,
    DEFAULT_THRESHOLD_MILES,
    DESERT_SHARE,
    FOUR_CLUSTER_LABELS,
)
from .errors import DataError
from .grid import SpatialGrid, nearest_agencies
from .ingest import COUNT_COLUMNS, FeatureMatrix, LoadedTables, TractIncomeRecord
from .mixture import FitResult

TOTAL_LABEL = "Total"


class IncomeClass(str, Enum):
    POOR = "Poor"
    RICH = "Rich"


@dataclass(frozen=True)
class ProfileConfig:
    """画像参数。"""

    threshold_miles: float = DEFAULT_THRESHOLD_MILES
    state_median_income: float = DEFAULT_STATE_MEDIAN_INCOME
    person_weighted: bool = False


@dataclass
class ClusterLabeling:
    """
    按平均指定距离升序排列的簇。

    order[r] 是第 r 名的模型分量下标，labels[r] 是其名称。
    """

    order: np.ndarray
    labels: List[str]
    mean_distance: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.labels)

    def rank_assignments(self, assignments) -> np.ndarray:
        """把分量下标换成距离名次。"""
        rank_of = np.empty(len(self.order), dtype=np.int64)
        rank_of[self.order] = np.arange(len(self.order))
        return rank_of[np.asarray(assignments)]


def label_clusters(assignments, distances, n_components: int) -> ClusterLabeling:
    """
    按簇平均指定距离升序命名。

    K = 4 时依次为 Very Nearby, Nearby, Far Away, Very Far Away，
    否则为 Cluster 1..K。无成员的分量排在最后。

    参数：
        assignments: 每行的分量下标
        distances: 每行的指定距离（英里）
        n_components: 分量数 K

    返回：
        ClusterLabeling
    """
    assignments = np.asarray(assignments)
    distances = np.asarray(distances, dtype=float)
    if len(assignments) != len(distances):
        raise DataError("分配与距离的行数不一致")
    counts = np.bincount(assignments, minlength=n_components)
    sums = np.bincount(assignments, weights=distances, minlength=n_components)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
    order = np.argsort(means, kind="stable")
    if n_components == len(FOUR_CLUSTER_LABELS):
        labels = list(FOUR_CLUSTER_LABELS)
    else:
        labels = [f"Cluster {i + 1}" for i in range(n_components)]
    return ClusterLabeling(order=order, labels=labels, mean_distance=means[order])


def label_fit(fit: FitResult, features: FeatureMatrix, distances=None) -> ClusterLabeling:
    """从拟合结果与特征矩阵命名簇；特征中无距离列时需显式给出 distances。"""
    if distances is None:
        if "distance_miles" not in features.feature_spec:
            raise DataError("特征中没有 distance_miles，需要显式提供距离")
        distances = features.column("distance_miles")
    return label_clusters(fit.hard_assignments, distances, fit.model.n_components)


def coverage_from_distances(nearest_distances, threshold_miles: float) -> float:
    """最近机构距离不超过阈值的家庭百分比。"""
    nearest_distances = np.asarray(nearest_distances, dtype=float)
    if len(nearest_distances) == 0:
        raise DataError("没有记录，无法计算覆盖率")
    return 100.0 * float(np.count_nonzero(nearest_distances <= threshold_miles)) / len(nearest_distances)


def coverage_within(records: pd.DataFrame, grid: SpatialGrid, threshold_miles: float) -> float:
    """
    覆盖率：至少有一个机构在阈值距离内的家庭百分比。

    参数：
        records: 含 latitude_deg, longitude_deg 列的服务记录
        grid: 机构网格
        threshold_miles: 距离阈值

    返回：
        百分比
    """
    if len(records) == 0:
        raise DataError("没有记录，无法计算覆盖率")
    _, dists = nearest_agencies(records["latitude_deg"].to_numpy(), records["longitude_deg"].to_numpy(), grid)
    return coverage_from_distances(dists, threshold_miles)


def classify_tract(tract: TractIncomeRecord, state_median_income: float) -> IncomeClass:
    """平均家庭收入严格低于州中位数的普查区为 Poor，否则为 Rich。"""
    if tract.avg_household_income < state_median_income:
        return IncomeClass.POOR
    return IncomeClass.RICH


@dataclass
class ProfileRow:
    """画像表的一行（一个簇或合计）。"""

    label: str
    n_families: int
    n_adults: int
    n_children: int
    n_seniors: int
    n_people: int
    avg_adults: float
    avg_children: float
    avg_seniors: float
    avg_people: float
    n_tracts: int
    n_agencies: int
    avg_distance_miles: float
    family_share_pct: float
    coverage_1mi_pct: float
    pct_poor: float
    pct_rich: float
    pct_unknown_income: float


# 变量表的行名，与输出列一一对应
TABLE_ROWS = {
    "n_families": "Number of families",
    "n_adults": "Number of adults",
    "n_children": "Number of children",
    "n_seniors": "Number of seniors",
    "n_people": "Number of people",
    "avg_adults": "Average number of adults in family",
    "avg_children": "Average number of children in family",
    "avg_seniors": "Average number of seniors in family",
    "avg_people": "Average number of people in family",
    "n_tracts": "Number of tracts",
    "n_agencies": "Number of agencies",
    "avg_distance_miles": "Average Distance (miles)",
    "family_share_pct": "Family share",
    "coverage_1mi_pct": "Coverage within threshold",
    "pct_poor": "Pct of Poor",
    "pct_rich": "Pct of Rich",
    "pct_unknown_income": "Pct of Unknown Income",
}


@dataclass
class ClusterProfile:
    rows: List[ProfileRow]
    totals: ProfileRow

    def to_frame(self) -> pd.DataFrame:
        """每簇一行再加合计行。"""
        return pd.DataFrame([asdict(row) for row in self.rows + [self.totals]])

    def to_table(self) -> pd.DataFrame:
        """变量为行、簇为列的转置视图。"""
        frame = self.to_frame().set_index("label")[list(TABLE_ROWS)].T
        frame.index = [TABLE_ROWS[name] for name in frame.index]
        return frame


def _profile_row(
    label: str,
    services: pd.DataFrame,
    distances: np.ndarray,
    nearest: np.ndarray,
    income_class: pd.Series,
    n_total: int,
    config: ProfileConfig,
) -> ProfileRow:
    n = len(services)
    sums = {column: int(services[column].sum()) for column in COUNT_COLUMNS}
    n_people = sum(sums.values())

    def average(value: float) -> float:
        return value / n if n else math.nan

    if config.person_weighted:
        weight = services[COUNT_COLUMNS].sum(axis=1).to_numpy(dtype=float)
    else:
        weight = np.ones(n)
    classes = services["tract_id"].map(income_class).fillna("").to_numpy()
    total_weight = weight.sum()

    def share(kind: str) -> float:
        return 100.0 * weight[classes == kind].sum() / total_weight if total_weight else math.nan

    pct_poor, pct_rich = share(IncomeClass.POOR.value), share(IncomeClass.RICH.value)
    return ProfileRow(
        label=label,
        n_families=n,
        n_adults=sums["n_adults"],
        n_children=sums["n_children"],
        n_seniors=sums["n_seniors"],
        n_people=n_people,
        avg_adults=average(sums["n_adults"]),
        avg_children=average(sums["n_children"]),
        avg_seniors=average(sums["n_seniors"]),
        avg_people=average(n_people),
        n_tracts=int(services["tract_id"].nunique()),
        n_agencies=int(services["agency_id"].nunique()),
        avg_distance_miles=float(distances.mean()) if n else math.nan,
        family_share_pct=100.0 * n / n_total,
        coverage_1mi_pct=coverage_from_distances(nearest, config.threshold_miles) if n else math.nan,
        pct_poor=pct_poor,
        pct_rich=pct_rich,
        pct_unknown_income=100.0 - pct_poor - pct_rich if total_weight else math.nan,
    )


def income_classes(tracts: pd.DataFrame, state_median_income: float) -> pd.Series:
    """普查区 id 到 Poor/Rich 的映射。"""
    return pd.Series(
        {
            row.tract_id: classify_tract(
                TractIncomeRecord(row.tract_id, float(row.avg_household_income)), state_median_income
            ).value
            for row in tracts.itertuples(index=False)
        },
        dtype=object,
    )


def build_profile(
    assignments,
    tables: LoadedTables,
    grid: SpatialGrid,
    config: Optional[ProfileConfig] = None,
    labels: Optional[Sequence[str]] = None,
    nearest_distances: Optional[np.ndarray] = None,
) -> ClusterProfile:
    """
    生成每簇一行的变量表，外加合计行。

    参数：
        assignments: 每行的簇名次（0..K-1，按距离升序）
        tables: 已加载的表
        grid: 机构网格，用于覆盖率
        config: 画像参数
        labels: 各名次的簇名称，默认 Cluster 1..K
        nearest_distances: 预先算好的最近机构距离

    返回：
        ClusterProfile
    """
    config = config or ProfileConfig()
    assignments = np.asarray(assignments)
    services = tables.services
    if len(assignments) != len(services):
        raise DataError(f"分配行数 {len(assignments)} 与记录数 {len(services)} 不一致")
    n_clusters = len(labels) if labels is not None else int(assignments.max()) + 1
    labels = list(labels) if labels is not None else [f"Cluster {i + 1}" for i in range(n_clusters)]

    distances = tables.distance_miles
    if nearest_distances is None:
        _, nearest_distances = nearest_agencies(
            services["latitude_deg"].to_numpy(), services["longitude_deg"].to_numpy(), grid
        )
    income_class = income_classes(tables.tracts, config.state_median_income)

    rows = []
    for cluster in range(n_clusters):
        mask = assignments == cluster
        rows.append(
            _profile_row(
                labels[cluster], services[mask], distances[mask], nearest_distances[mask],
                income_class, len(services), config,
            )
        )
    totals = _profile_row(
        TOTAL_LABEL, services, distances, nearest_distances, income_class, len(services), config
    )
    return ClusterProfile(rows=rows, totals=totals)


def _nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """最近秩分位数：第 ceil(q·n) 个（至少第 1 个）。"""
    rank = max(1, int(math.ceil(q * len(sorted_values))))
    return float(sorted_values[rank - 1])


def _quantile_name(q: float) -> str:
    if q == 0.0:
        return "min"
    if q == 0.5:
        return "median"
    if q == 1.0:
        return "max"
    return f"q{100 * q:g}"


def distance_quantiles(
    assignments, distances, quantiles: Sequence[float] = DEFAULT_QUANTILES, labels: Optional[Sequence[str]] = None
) -> pd.DataFrame:
    """
    每簇的距离分位数（最近秩法）。

    参数：
        assignments: 每行的簇名次
        distances: 每行的距离
        quantiles: 分位点，默认 min/q25/median/q75/max
        labels: 簇名称

    返回：
        每簇一行的 DataFrame
    """
    assignments = np.asarray(assignments)
    distances = np.asarray(distances, dtype=float)
    if any(not 0.0 <= q <= 1.0 for q in quantiles):
        raise DataError(f"分位点必须在 [0, 1] 内: {list(quantiles)}")
    rows = []
    for cluster in np.unique(assignments):
        values = np.sort(distances[assignments == cluster])
        row: Dict[str, object] = {
            "cluster": int(cluster),
            "label": labels[cluster] if labels is not None else f"Cluster {cluster + 1}",
            "n": len(values),
        }
        for q in quantiles:
            row[_quantile_name(q)] = _nearest_rank(values, q)
        rows.append(row)
    return pd.DataFrame(rows)


def cluster_gaps(assignments, distances, labels: Sequence[str]) -> pd.DataFrame:
    """相邻簇之间平均距离与中位距离的差。"""
    assignments = np.asarray(assignments)
    distances = np.asarray(distances, dtype=float)
    stats = []
    for cluster in range(len(labels)):
        values = np.sort(distances[assignments == cluster])
        if len(values):
            stats.append((labels[cluster], float(values.mean()), _nearest_rank(values, 0.5)))
    return pd.DataFrame(
        [
            {
                "from_label": low[0],
                "to_label": high[0],
                "mean_gap_miles": high[1] - low[1],
                "median_gap_miles": high[2] - low[2],
            }
            for low, high in zip(stats, stats[1:])
        ],
        columns=["from_label", "to_label", "mean_gap_miles", "median_gap_miles"],
    )


@dataclass
class DesertTract:
    tract_id: str
    n_families: int
    share_beyond_pct: float
    avg_nearest_distance_miles: float
    avg_household_income: float = math.nan


@dataclass
class DesertReport:
    """多数家庭超出阈值距离的普查区，按家庭数降序。"""

    threshold_miles: float
    tracts: List[DesertTract] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tracts)

    @property
    def tract_ids(self) -> List[str]:
        return [tract.tract_id for tract in self.tracts]

    def to_frame(self) -> pd.DataFrame:
        columns = ["tract_id", "n_families", "share_beyond_pct", "avg_nearest_distance_miles", "avg_household_income"]
        return pd.DataFrame([asdict(tract) for tract in self.tracts], columns=columns)


def desert_report(
    records: pd.DataFrame,
    grid: SpatialGrid,
    tracts: pd.DataFrame,
    threshold_miles: float = DEFAULT_THRESHOLD_MILES,
    nearest_distances: Optional[np.ndarray] = None,
) -> DesertReport:
    """
    找出食物援助荒漠：超过一半家庭的最近机构距离大于阈值的普查区。

    参数：
        records: 含 latitude_deg, longitude_deg, tract_id 的服务记录
        grid: 机构网格
        tracts: 普查区收入表
        threshold_miles: 距离阈值
        nearest_distances: 预先算好的最近机构距离

    返回：
        DesertReport
    """
    if nearest_distances is None:
        _, nearest_distances = nearest_agencies(
            records["latitude_deg"].to_numpy(), records["longitude_deg"].to_numpy(), grid
        )
    frame = pd.DataFrame(
        {
            "tract_id": records["tract_id"].to_numpy(),
            "nearest": np.asarray(nearest_distances, dtype=float),
        }
    )
    frame["beyond"] = frame["nearest"] > threshold_miles
    grouped = frame.groupby("tract_id", sort=True).agg(
        n_families=("nearest", "size"), share=("beyond", "mean"), avg_nearest=("nearest", "mean")
    )
    deserts = grouped[grouped["share"] > DESERT_SHARE].reset_index()
    deserts = deserts.sort_values(["n_families", "tract_id"], ascending=[False, True], kind="stable")

    income = tracts.set_index("tract_id")["avg_household_income"]
    report = DesertReport(threshold_miles=threshold_miles)
    for row in deserts.itertuples(index=False):
        report.tracts.append(
            DesertTract(
                tract_id=row.tract_id,
                n_families=int(row.n_families),
                share_beyond_pct=100.0 * float(row.share),
                avg_nearest_distance_miles=float(row.avg_nearest),
                avg_household_income=float(income.get(row.tract_id, math.nan)),
            )
        )
    return report
