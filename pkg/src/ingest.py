"""
数据接入模块。

加载并校验三张输入表，完成连接，计算家庭到机构的距离并组装聚类特征矩阵。
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import COMMENT_PREFIX, DEFAULT_FEATURE_SPEC, FEATURE_NAMES
from .errors import ConfigError, DataError
from .geo import GeoPoint, haversine_miles, haversine_miles_array, valid_coordinates

logger = logging.getLogger(__name__)

SERVICE_COLUMNS = [
    "family_id",
    "latitude",
    "longitude",
    "agency_id",
    "n_adults",
    "n_children",
    "n_seniors",
    "tract_id",
]
AGENCY_COLUMNS = ["agency_id", "latitude", "longitude", "name"]
TRACT_COLUMNS = ["tract_id", "avg_household_income"]
COUNT_COLUMNS = ["n_adults", "n_children", "n_seniors"]


@dataclass(frozen=True)
class FamilyServiceRecord:
    """一次服务事件：一户家庭在一个机构接受一次服务。"""

    family_id: str
    latitude_deg: float
    longitude_deg: float
    agency_id: str
    n_adults: int
    n_children: int
    n_seniors: int
    tract_id: str

    def __post_init__(self):
        counts = (self.n_adults, self.n_children, self.n_seniors)
        if min(counts) < 0:
            raise ValueError(f"人数不能为负: {counts}")
        if sum(counts) < 1:
            raise ValueError("家庭人数至少为 1")
        GeoPoint(self.latitude_deg, self.longitude_deg)

    @property
    def point(self) -> GeoPoint:
        return GeoPoint(self.latitude_deg, self.longitude_deg)

    @property
    def household_size(self) -> int:
        return self.n_adults + self.n_children + self.n_seniors


@dataclass(frozen=True)
class AgencyRecord:
    """食物援助机构。"""

    agency_id: str
    latitude_deg: float
    longitude_deg: float
    name: Optional[str] = None

    @property
    def point(self) -> GeoPoint:
        return GeoPoint(self.latitude_deg, self.longitude_deg)


@dataclass(frozen=True)
class TractIncomeRecord:
    """普查区的平均家庭收入。"""

    tract_id: str
    avg_household_income: float

    def __post_init__(self):
        if not self.avg_household_income > 0:
            raise ValueError(f"收入必须为正: {self.avg_household_income}")


@dataclass
class RejectionReport:
    """每张表的输入行数与按原因统计的拒绝行数。"""

    input_rows: Dict[str, int] = field(default_factory=dict)
    rejections: Dict[str, Counter] = field(default_factory=dict)
    unmatched_tracts: int = 0

    def rejected(self, table: str) -> int:
        return sum(self.rejections.get(table, Counter()).values())

    def valid(self, table: str) -> int:
        return self.input_rows.get(table, 0) - self.rejected(table)

    def reasons(self, table: str = "services") -> Dict[str, int]:
        return dict(self.rejections.get(table, Counter()))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"table": table, "reason": reason, "count": count}
            for table in sorted(self.rejections)
            for reason, count in sorted(self.rejections[table].items())
        ]
        return pd.DataFrame(rows, columns=["table", "reason", "count"])


@dataclass
class LoadedTables:
    """
    校验并连接后的三张表。

    services 的行号即记录号；列包含 latitude_deg, longitude_deg 与各人数列。
    """

    services: pd.DataFrame
    agencies: pd.DataFrame
    tracts: pd.DataFrame
    report: RejectionReport

    def __len__(self) -> int:
        return len(self.services)

    def records(self) -> Iterator[FamilyServiceRecord]:
        for row in self.services.itertuples(index=False):
            yield FamilyServiceRecord(
                family_id=row.family_id,
                latitude_deg=row.latitude_deg,
                longitude_deg=row.longitude_deg,
                agency_id=row.agency_id,
                n_adults=int(row.n_adults),
                n_children=int(row.n_children),
                n_seniors=int(row.n_seniors),
                tract_id=row.tract_id,
            )

    def agency_records(self) -> Dict[str, AgencyRecord]:
        return {
            row.agency_id: AgencyRecord(row.agency_id, row.latitude_deg, row.longitude_deg, row.name or None)
            for row in self.agencies.itertuples(index=False)
        }

    def tract_records(self) -> Dict[str, TractIncomeRecord]:
        return {
            row.tract_id: TractIncomeRecord(row.tract_id, float(row.avg_household_income))
            for row in self.tracts.itertuples(index=False)
        }

    def agency_points(self) -> List[Tuple[str, GeoPoint]]:
        return [
            (row.agency_id, GeoPoint(row.latitude_deg, row.longitude_deg))
            for row in self.agencies.itertuples(index=False)
        ]

    @cached_property
    def distance_miles(self) -> np.ndarray:
        """每条记录到其指定机构的距离。"""
        return assigned_distances(self.services, self.agencies)

    @cached_property
    def tract_distance_miles(self) -> np.ndarray:
        """每条记录所在普查区中心到其指定机构的距离。"""
        centroids = self.services.groupby("tract_id", sort=True)[["latitude_deg", "longitude_deg"]].mean()
        tract_lat = centroids["latitude_deg"].reindex(self.services["tract_id"]).to_numpy()
        tract_lon = centroids["longitude_deg"].reindex(self.services["tract_id"]).to_numpy()
        agency = self.agencies.set_index("agency_id").loc[self.services["agency_id"]]
        return haversine_miles_array(
            tract_lat, tract_lon, agency["latitude_deg"].to_numpy(), agency["longitude_deg"].to_numpy()
        )

    @property
    def household_size(self) -> np.ndarray:
        return self.services[COUNT_COLUMNS].sum(axis=1).to_numpy()


def _comment_lines(path: Path) -> int:
    """文件开头以 # 开始的戳记行数。"""
    count = 0
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith(COMMENT_PREFIX):
                break
            count += 1
    return count


def read_table(path, required: Sequence[str], optional: Sequence[str] = ()) -> pd.DataFrame:
    """
    读取 UTF-8 CSV，所有列按字符串读入。

    参数：
        path: 文件路径
        required: 必需列
        optional: 可选列（缺失时补空串）

    返回：
        DataFrame，列顺序为 required + optional
    """
    path = Path(path)
    try:
        skip = _comment_lines(path)
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skiprows=skip,
            encoding="utf-8",
        )
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"无法读取 {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path} 缺少表头") from exc

    frame.columns = [str(column).strip() for column in frame.columns]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise DataError(f"{path} 缺少必需列: {', '.join(missing)}")
    for column in optional:
        if column not in frame.columns:
            frame[column] = ""
    columns = list(required) + list(optional)
    return pd.DataFrame({column: frame[column].astype(str).str.strip() for column in columns})


def _first_reason(conditions: List[Tuple[str, np.ndarray]], n: int) -> np.ndarray:
    """按优先级为每行选出第一个成立的拒绝原因，空串表示有效。"""
    reasons = np.full(n, "", dtype=object)
    # 逆序写入，排在前面的原因最后覆盖
    for reason, mask in reversed(conditions):
        reasons[np.asarray(mask, dtype=bool)] = reason
    return reasons


def _record(report: RejectionReport, table: str, reasons: np.ndarray) -> np.ndarray:
    report.input_rows[table] = len(reasons)
    report.rejections[table] = Counter(r for r in reasons.tolist() if r)
    valid = reasons == ""
    if not valid.any():
        raise DataError(f"{table}: no valid rows（没有有效行）")
    return valid


def _coordinates(frame: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lat = pd.to_numeric(frame["latitude"], errors="coerce").to_numpy(dtype=float)
    lon = pd.to_numeric(frame["longitude"], errors="coerce").to_numpy(dtype=float)
    return lat, lon, ~valid_coordinates(lat, lon)


def _validate_agencies(frame: pd.DataFrame, report: RejectionReport) -> pd.DataFrame:
    lat, lon, bad_coordinate = _coordinates(frame)
    ids = frame["agency_id"]
    reasons = _first_reason(
        [
            ("missing_field", (ids == "").to_numpy()),
            ("bad_coordinate", bad_coordinate),
            ("duplicate_id", ids.duplicated(keep="first").to_numpy()),
        ],
        len(frame),
    )
    valid = _record(report, "agencies", reasons)
    agencies = pd.DataFrame(
        {
            "agency_id": ids.to_numpy()[valid],
            "latitude_deg": lat[valid],
            "longitude_deg": lon[valid],
            "name": frame["name"].to_numpy()[valid],
        }
    )
    return agencies.sort_values("agency_id", kind="stable").reset_index(drop=True)


def _validate_tracts(frame: pd.DataFrame, report: RejectionReport) -> pd.DataFrame:
    ids = frame["tract_id"]
    income = pd.to_numeric(frame["avg_household_income"], errors="coerce").to_numpy(dtype=float)
    reasons = _first_reason(
        [
            ("missing_field", (ids == "").to_numpy()),
            ("bad_income", ~(np.isfinite(income) & (income > 0))),
            ("duplicate_id", ids.duplicated(keep="first").to_numpy()),
        ],
        len(frame),
    )
    valid = _record(report, "tracts", reasons)
    tracts = pd.DataFrame(
        {"tract_id": ids.to_numpy()[valid], "avg_household_income": income[valid]}
    )
    return tracts.sort_values("tract_id", kind="stable").reset_index(drop=True)


def _validate_services(
    frame: pd.DataFrame,
    agencies: pd.DataFrame,
    tracts: pd.DataFrame,
    report: RejectionReport,
    strict_tracts: bool,
) -> pd.DataFrame:
    lat, lon, bad_coordinate = _coordinates(frame)
    counts = frame[COUNT_COLUMNS].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    with np.errstate(invalid="ignore"):
        bad_count = (~np.isfinite(counts) | (counts != np.round(counts))).any(axis=1)
        negative = (counts < 0).any(axis=1) & ~bad_count
        empty = (np.nan_to_num(counts).sum(axis=1) < 1) & ~bad_count & ~negative

    required_blank = (frame[["family_id", "agency_id", "tract_id"]] == "").any(axis=1).to_numpy()
    unknown_agency = ~frame["agency_id"].isin(agencies["agency_id"]).to_numpy()
    unknown_tract = ~frame["tract_id"].isin(tracts["tract_id"]).to_numpy()

    conditions = [
        ("missing_field", required_blank),
        ("bad_coordinate", bad_coordinate),
        ("bad_count", bad_count),
        ("negative_count", negative),
        ("empty_household", empty),
        ("unknown_agency", unknown_agency),
    ]
    if strict_tracts:
        conditions.append(("unknown_tract", unknown_tract))
    reasons = _first_reason(conditions, len(frame))
    valid = _record(report, "services", reasons)
    if not strict_tracts:
        report.unmatched_tracts = int((valid & unknown_tract).sum())

    services = pd.DataFrame(
        {
            "family_id": frame["family_id"].to_numpy()[valid],
            "latitude_deg": lat[valid],
            "longitude_deg": lon[valid],
            "agency_id": frame["agency_id"].to_numpy()[valid],
            "n_adults": counts[valid, 0].astype(np.int64),
            "n_children": counts[valid, 1].astype(np.int64),
            "n_seniors": counts[valid, 2].astype(np.int64),
            "tract_id": frame["tract_id"].to_numpy()[valid],
        }
    )
    return services


def load_tables(service_path, agency_path, income_path, strict_tracts: bool = False) -> LoadedTables:
    """
    加载、校验并连接三张输入表。

    参数：
        service_path: services.csv
        agency_path: agencies.csv
        income_path: tract_income.csv
        strict_tracts: 为 True 时拒绝普查区未知的服务行

    返回：
        LoadedTables（含拒绝报告）
    """
    report = RejectionReport()
    agencies = _validate_agencies(read_table(agency_path, AGENCY_COLUMNS[:3], AGENCY_COLUMNS[3:]), report)
    tracts = _validate_tracts(read_table(income_path, TRACT_COLUMNS), report)
    services = _validate_services(
        read_table(service_path, SERVICE_COLUMNS), agencies, tracts, report, strict_tracts
    )
    logger.info(
        "载入 %d 条服务记录（拒绝 %d）、%d 个机构、%d 个普查区",
        len(services), report.rejected("services"), len(agencies), len(tracts),
    )
    if report.rejected("services"):
        logger.warning("服务记录拒绝原因: %s", report.reasons("services"))
    if report.unmatched_tracts:
        logger.warning("%d 条记录的普查区不在收入表中，按未知收入处理", report.unmatched_tracts)
    return LoadedTables(services=services, agencies=agencies, tracts=tracts, report=report)


def assigned_distance(record: FamilyServiceRecord, agencies: Mapping[str, AgencyRecord]) -> float:
    """
    家庭到其指定机构的大圆距离。

    参数：
        record: 服务记录
        agencies: 机构 id 到记录的映射

    返回：
        英里距离
    """
    agency = agencies.get(record.agency_id)
    if agency is None:
        raise DataError(f"未知机构: {record.agency_id}")
    return haversine_miles(record.point, agency.point)


def assigned_distances(services: pd.DataFrame, agencies: pd.DataFrame) -> np.ndarray:
    """向量化的 assigned_distance，顺序与 services 行一致。"""
    located = agencies.set_index("agency_id")
    unknown = ~services["agency_id"].isin(located.index)
    if unknown.any():
        raise DataError(f"未知机构: {services.loc[unknown, 'agency_id'].iloc[0]}")
    agency = located.loc[services["agency_id"]]
    return haversine_miles_array(
        services["latitude_deg"].to_numpy(),
        services["longitude_deg"].to_numpy(),
        agency["latitude_deg"].to_numpy(),
        agency["longitude_deg"].to_numpy(),
    )


@dataclass
class FeatureMatrix:
    """
    聚类特征矩阵。

    values 为（可能已标准化的）特征；center/scale 用于还原原始尺度。
    """

    values: np.ndarray
    feature_spec: List[str]
    row_index: np.ndarray
    scaling: str = "none"
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    @property
    def n_features(self) -> int:
        return len(self.feature_spec)

    def inverse_transform(self, values: Optional[np.ndarray] = None) -> np.ndarray:
        values = self.values if values is None else np.asarray(values, dtype=float)
        if self.scaling == "zscore":
            return values * self.scale + self.center
        return values.copy()

    def column(self, name: str) -> np.ndarray:
        """按原始尺度返回某一特征列。"""
        if name not in self.feature_spec:
            raise KeyError(name)
        return self.inverse_transform()[:, self.feature_spec.index(name)]


def _feature_column(tables: LoadedTables, name: str) -> np.ndarray:
    if name == "distance_miles":
        return tables.distance_miles
    if name == "log_distance_miles":
        # 距离可为 0，取 log(1 + d)
        return np.log1p(tables.distance_miles)
    if name == "household_size":
        return tables.household_size.astype(float)
    if name == "latitude_deg":
        return tables.services["latitude_deg"].to_numpy(dtype=float)
    if name == "longitude_deg":
        return tables.services["longitude_deg"].to_numpy(dtype=float)
    if name == "tract_distance_miles":
        return tables.tract_distance_miles
    raise ConfigError(f"未知特征: {name}")


def featurize(
    tables: LoadedTables, feature_spec: Optional[Sequence[str]] = None, scaling: str = "none"
) -> FeatureMatrix:
    """
    按 feature_spec 顺序组装特征矩阵。

    参数：
        tables: 已加载的表
        feature_spec: 特征名列表，默认只用 distance_miles
        scaling: none 或 zscore

    返回：
        FeatureMatrix
    """
    spec = list(feature_spec or DEFAULT_FEATURE_SPEC)
    unknown = [name for name in spec if name not in FEATURE_NAMES]
    if unknown or not spec:
        raise ConfigError(f"非法特征列表: {spec}")
    if scaling not in ("none", "zscore"):
        raise ConfigError(f"scaling 只能是 none 或 zscore: {scaling!r}")

    raw = np.column_stack([_feature_column(tables, name) for name in spec])
    if not np.all(np.isfinite(raw)):
        raise DataError("特征矩阵包含非有限值")

    matrix = FeatureMatrix(values=raw, feature_spec=spec, row_index=np.arange(len(raw)), scaling=scaling)
    if scaling == "zscore":
        center = raw.mean(axis=0)
        scale = raw.std(axis=0)
        flat = [name for name, s in zip(spec, scale) if not s > 0]
        if flat:
            raise DataError(f"零方差列无法标准化: {', '.join(flat)}")
        matrix.values = (raw - center) / scale
        matrix.center, matrix.scale = center, scale
    return matrix
