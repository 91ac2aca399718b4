"""
大圆距离模块。

提供 GeoPoint 类、半正矢（haversine）距离与球面正算公式。
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .config import EARTH_RADIUS_MILES


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 十进制度坐标点。"""

    latitude_deg: float
    longitude_deg: float

    def __post_init__(self):
        lat, lon = self.latitude_deg, self.longitude_deg
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"坐标必须为有限值: ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"纬度超出 [-90, 90]: {lat}")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"经度超出 [-180, 180]: {lon}")

    def as_radians(self) -> Tuple[float, float]:
        """返回 (纬度, 经度) 弧度。"""
        return math.radians(self.latitude_deg), math.radians(self.longitude_deg)


def valid_coordinates(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """逐元素检查坐标是否有限且在范围内。"""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    return (
        np.isfinite(lat)
        & np.isfinite(lon)
        & (np.abs(lat) <= 90.0)
        & (np.abs(lon) <= 180.0)
    )


def haversine_miles(a: GeoPoint, b: GeoPoint) -> float:
    """
    计算两点之间的大圆距离。

    参数：
        a, b: 坐标点

    返回：
        英里距离，范围 [0, π·R]
    """
    lat1, lon1 = a.as_radians()
    lat2, lon2 = b.as_radians()
    # 平方项对交换参数不变，保证 d(a,b) == d(b,a)
    s_lat = math.sin((lat2 - lat1) / 2.0) ** 2
    s_lon = math.sin((lon2 - lon1) / 2.0) ** 2
    h = s_lat + math.cos(lat1) * math.cos(lat2) * s_lon
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_MILES * math.asin(math.sqrt(h))


def haversine_miles_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """
    向量化的大圆距离，参数按 numpy 规则广播。

    参数：
        lat1, lon1, lat2, lon2: 十进制度数组

    返回：
        英里距离数组
    """
    lat1 = np.radians(np.asarray(lat1, dtype=float))
    lon1 = np.radians(np.asarray(lon1, dtype=float))
    lat2 = np.radians(np.asarray(lat2, dtype=float))
    lon2 = np.radians(np.asarray(lon2, dtype=float))
    s_lat = np.sin((lat2 - lat1) / 2.0) ** 2
    s_lon = np.sin((lon2 - lon1) / 2.0) ** 2
    h = np.clip(s_lat + np.cos(lat1) * np.cos(lat2) * s_lon, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(h))


def destination_point(
    lat_deg, lon_deg, bearing_rad, distance_miles
) -> Tuple[np.ndarray, np.ndarray]:
    """
    球面正算：从起点沿方位角行进给定距离后的终点。

    与 haversine_miles 使用同一球体半径，往返误差在浮点精度内。

    参数：
        lat_deg, lon_deg: 起点（十进制度，可为数组）
        bearing_rad: 方位角（弧度，正北为 0，顺时针）
        distance_miles: 行进距离

    返回：
        (终点纬度, 终点经度)，经度归一到 [-180, 180)
    """
    phi1 = np.radians(np.asarray(lat_deg, dtype=float))
    lam1 = np.radians(np.asarray(lon_deg, dtype=float))
    theta = np.asarray(bearing_rad, dtype=float)
    delta = np.asarray(distance_miles, dtype=float) / EARTH_RADIUS_MILES

    sin_phi2 = np.sin(phi1) * np.cos(delta) + np.cos(phi1) * np.sin(delta) * np.cos(theta)
    phi2 = np.arcsin(np.clip(sin_phi2, -1.0, 1.0))
    lam2 = lam1 + np.arctan2(
        np.sin(theta) * np.sin(delta) * np.cos(phi1),
        np.cos(delta) - np.sin(phi1) * sin_phi2,
    )
    lon2 = (np.degrees(lam2) + 180.0) % 360.0 - 180.0
    return np.degrees(phi2), lon2


def miles_per_degree_latitude() -> float:
    """经线上一度对应的英里数。"""
    return EARTH_RADIUS_MILES * math.pi / 180.0
