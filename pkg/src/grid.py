"""
空间网格模块。

把机构按经纬度分桶，支持半径查询和最近机构查询。
"""

import math
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .config import DEFAULT_CELL_SIZE_MILES, EARTH_RADIUS_MILES
from .errors import DataError
from .geo import GeoPoint, haversine_miles_array, miles_per_degree_latitude

Cell = Tuple[int, int]

# 批量查询时每块的最大行数
_BLOCK_ROWS = 4096


class SpatialGrid:
    """
    机构的经纬度网格。

    坐标系：
    - 纬度带：等高的纬度分带，高度为 cell_size_miles 对应的度数
    - 经度格：每个纬度带按其极侧边缘的 cos(纬度) 加宽，在 ±180° 处环绕

    构建后不可变，可被多个线程并发只读查询。
    """

    def __init__(self, agencies: Sequence[Tuple[str, GeoPoint]], cell_size_miles: float):
        """
        初始化网格。

        参数：
            agencies: (机构 id, 坐标) 列表
            cell_size_miles: 单元边长（英里）
        """
        if not cell_size_miles > 0:
            raise ValueError(f"cell_size_miles 必须为正: {cell_size_miles}")
        if len(agencies) == 0:
            raise DataError("机构列表为空，无法构建网格")

        ordered = sorted(agencies, key=lambda item: item[0])
        ids = [agency_id for agency_id, _ in ordered]
        if len(set(ids)) != len(ids):
            raise DataError("机构 id 重复")

        self.cell_size_miles = float(cell_size_miles)
        self._ids: List[str] = ids
        self._points: List[GeoPoint] = [point for _, point in ordered]
        self._lats = np.array([p.latitude_deg for p in self._points], dtype=float)
        self._lons = np.array([p.longitude_deg for p in self._points], dtype=float)

        self._lat_step = self.cell_size_miles / miles_per_degree_latitude()
        self._n_bands = max(1, int(math.ceil(180.0 / self._lat_step)))
        self._lon_cells = [self._band_lon_cells(b) for b in range(self._n_bands)]

        members: Dict[Cell, List[int]] = {}
        for index, point in enumerate(self._points):
            members.setdefault(self.cell_of(point), []).append(index)
        self._members: Dict[Cell, np.ndarray] = {
            cell: np.array(indices, dtype=np.int64) for cell, indices in members.items()
        }

    def _band_lon_cells(self, band: int) -> int:
        """纬度带内的经度格数，按极侧边缘的纬度加宽。"""
        lat_lo = -90.0 + band * self._lat_step
        lat_hi = min(90.0, lat_lo + self._lat_step)
        edge = min(90.0, max(abs(lat_lo), abs(lat_hi)))
        circumference = 360.0 * miles_per_degree_latitude() * math.cos(math.radians(edge))
        return max(1, int(circumference // self.cell_size_miles))

    def _band_of(self, lat: float) -> int:
        band = int(math.floor((lat + 90.0) / self._lat_step))
        return min(max(band, 0), self._n_bands - 1)

    def _lon_index(self, lon: float, band: int) -> int:
        n_lon = self._lon_cells[band]
        return int(math.floor((lon + 180.0) / 360.0 * n_lon)) % n_lon

    def cell_of(self, point: GeoPoint) -> Cell:
        """返回坐标所在的单元。"""
        band = self._band_of(point.latitude_deg)
        return band, self._lon_index(point.longitude_deg, band)

    @property
    def cells(self) -> Dict[Cell, List[Tuple[str, GeoPoint]]]:
        """单元到 (机构 id, 坐标) 列表的映射。"""
        return {
            cell: [(self._ids[i], self._points[i]) for i in indices]
            for cell, indices in self._members.items()
        }

    @property
    def ids(self) -> List[str]:
        return list(self._ids)

    def __len__(self) -> int:
        return sum(len(indices) for indices in self._members.values())

    def _candidate_indices(self, lat: float, lon: float, radius_miles: float) -> np.ndarray:
        """
        半径内机构的候选下标（超集，不漏检）。

        参数：
            lat, lon: 查询中心
            radius_miles: 查询半径

        返回：
            升序的机构下标数组
        """
        theta = radius_miles / EARTH_RADIUS_MILES
        if theta >= math.pi:
            return np.arange(len(self._ids))

        dlat = math.degrees(theta)
        # 两侧各多取一格，吸收浮点取整误差
        b_lo = max(self._band_of(lat - dlat) - 1, 0)
        b_hi = min(self._band_of(lat + dlat) + 1, self._n_bands - 1)

        if abs(lat) + dlat >= 90.0:
            dlon = 180.0  # 极点在圆内
        else:
            ratio = math.sin(theta) / math.cos(math.radians(lat))
            dlon = 180.0 if ratio >= 1.0 else math.degrees(math.asin(ratio))

        found: List[np.ndarray] = []
        for band in range(b_lo, b_hi + 1):
            n_lon = self._lon_cells[band]
            if dlon >= 180.0:
                columns: Iterable[int] = range(n_lon)
            else:
                j_lo = int(math.floor((lon - dlon + 180.0) / 360.0 * n_lon)) - 1
                j_hi = int(math.floor((lon + dlon + 180.0) / 360.0 * n_lon)) + 1
                if j_hi - j_lo + 1 >= n_lon:
                    columns = range(n_lon)
                else:
                    columns = sorted({j % n_lon for j in range(j_lo, j_hi + 1)})
            for column in columns:
                indices = self._members.get((band, column))
                if indices is not None:
                    found.append(indices)

        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found))

    def query(self, point: GeoPoint, radius_miles: float) -> List[Tuple[str, GeoPoint]]:
        """
        半径查询。

        参数：
            point: 查询中心
            radius_miles: 半径

        返回：
            候选机构列表，包含半径内的全部机构（可能多出若干）
        """
        indices = self._candidate_indices(point.latitude_deg, point.longitude_deg, radius_miles)
        return [(self._ids[i], self._points[i]) for i in indices]

    def nearest(self, point: GeoPoint) -> Tuple[str, float]:
        """
        最近机构查询，等距时取最小 id。

        参数：
            point: 查询坐标

        返回：
            (机构 id, 英里距离)
        """
        ids, dists = self.nearest_many(
            np.array([point.latitude_deg]), np.array([point.longitude_deg])
        )
        return str(ids[0]), float(dists[0])

    def nearest_many(self, lats: np.ndarray, lons: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        批量最近机构查询。

        同一单元内的点共用候选集：以组内一点为中心、g 为组内最大偏移，
        半径 r + g 的候选集覆盖组内每点半径 r 内的全部机构；
        最近距离不超过 r 的点即得到精确结果，其余点将 r 翻倍重试。

        参数：
            lats, lons: 查询坐标数组

        返回：
            (机构 id 数组, 距离数组)
        """
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        n = len(lats)
        best_index = np.full(n, -1, dtype=np.int64)
        best_dist = np.full(n, np.inf)

        if n == 0:
            return np.empty(0, dtype=object), best_dist

        bands = np.clip(
            np.floor((lats + 90.0) / self._lat_step).astype(np.int64), 0, self._n_bands - 1
        )
        n_lon = np.array(self._lon_cells, dtype=np.int64)[bands]
        columns = np.floor((lons + 180.0) / 360.0 * n_lon).astype(np.int64) % n_lon
        keys = bands * (int(n_lon.max()) + 1) + columns
        order = np.argsort(keys, kind="stable")
        boundaries = np.flatnonzero(np.diff(keys[order])) + 1

        for rows in np.split(order, boundaries):
            for start in range(0, len(rows), _BLOCK_ROWS):
                self._resolve_block(rows[start:start + _BLOCK_ROWS], lats, lons, best_index, best_dist)

        id_array = np.array(self._ids, dtype=object)
        return id_array[best_index], best_dist

    def _resolve_block(self, rows, lats, lons, best_index, best_dist) -> None:
        """为同一单元内的一块点求最近机构，结果写回输出数组。"""
        center_lat, center_lon = lats[rows[0]], lons[rows[0]]
        spread = float(
            haversine_miles_array(center_lat, center_lon, lats[rows], lons[rows]).max()
        )
        radius = self.cell_size_miles
        pending = rows
        while len(pending):
            candidates = self._candidate_indices(center_lat, center_lon, radius + spread)
            if len(candidates) == 0:
                radius *= 2.0
                continue
            dists = haversine_miles_array(
                lats[pending][:, None],
                lons[pending][:, None],
                self._lats[candidates][None, :],
                self._lons[candidates][None, :],
            )
            # 候选下标升序，argmin 取首个即最小 id
            pick = dists.argmin(axis=1)
            dmin = dists[np.arange(len(pending)), pick]
            exhaustive = len(candidates) == len(self._ids)
            done = (dmin <= radius) | exhaustive
            best_index[pending[done]] = candidates[pick[done]]
            best_dist[pending[done]] = dmin[done]
            pending = pending[~done]
            radius *= 2.0


def build_grid(
    agencies: Sequence[Tuple[str, GeoPoint]], cell_size_miles: float = DEFAULT_CELL_SIZE_MILES
) -> SpatialGrid:
    """
    构建机构空间网格。

    参数：
        agencies: (机构 id, 坐标) 列表，不能为空
        cell_size_miles: 单元边长

    返回：
        包含每个机构恰好一次的 SpatialGrid
    """
    return SpatialGrid(agencies, cell_size_miles)


def nearest_agency(point: GeoPoint, grid: SpatialGrid) -> Tuple[str, float]:
    """返回最近机构 (id, 英里距离)，等距时取最小 id。"""
    return grid.nearest(point)


def nearest_agencies(lats, lons, grid: SpatialGrid) -> Tuple[np.ndarray, np.ndarray]:
    """批量版本的 nearest_agency。"""
    return grid.nearest_many(lats, lons)
