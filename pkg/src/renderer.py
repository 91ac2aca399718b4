"""
渲染器模块。

把结果表绘制成对齐文本，并以带版本戳的 CSV / JSON / GeoJSON 写出。
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

import geojson
import numpy as np
import pandas as pd

from .config import COMMENT_PREFIX, TOOL_NAME, TOOL_VERSION


@dataclass(frozen=True)
class Stamp:
    """写在每个输出文件开头的工具版本、配置哈希与种子。"""

    config_hash: str
    seed: int

    def line(self) -> str:
        return f"{COMMENT_PREFIX} {TOOL_NAME} {TOOL_VERSION} config={self.config_hash} seed={self.seed}"

    def to_dict(self) -> Dict:
        return {
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "config": self.config_hash,
            "seed": self.seed,
        }


def _plain(value):
    """把 numpy 标量和 NaN 转成 JSON 可写的值。"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def write_csv(frame: pd.DataFrame, path, stamp: Stamp) -> Path:
    """
    写出 CSV，首行为注释形式的版本戳。

    参数：
        frame: 数据
        path: 输出路径
        stamp: 版本戳

    返回：
        写出的路径
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(stamp.line() + "\n")
        frame.to_csv(handle, index=False, lineterminator="\n")
    return path


def write_json(document: Dict, path, stamp: Stamp) -> Path:
    """写出 JSON 文档，版本戳放在 "stamp" 成员中。"""
    path = Path(path)
    body = {"stamp": stamp.to_dict()}
    body.update(_plain(document))
    path.write_text(json.dumps(body, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def clusters_geojson(
    services: pd.DataFrame,
    cluster_labels: Sequence[str],
    distances: np.ndarray,
    agencies: pd.DataFrame,
) -> geojson.FeatureCollection:
    """
    每户家庭一个点要素（带簇名、距离、普查区），再加每个机构一个点要素。

    参数：
        services: 含 family_id, latitude_deg, longitude_deg, tract_id
        cluster_labels: 每行的簇名称
        distances: 每行的指定距离
        agencies: 含 agency_id, latitude_deg, longitude_deg

    返回：
        geojson.FeatureCollection
    """
    features = []
    for row, label, distance in zip(services.itertuples(index=False), cluster_labels, distances):
        features.append(
            geojson.Feature(
                id=row.family_id,
                geometry=geojson.Point((float(row.longitude_deg), float(row.latitude_deg))),
                properties={
                    "cluster_label": str(label),
                    "distance_miles": float(distance),
                    "tract_id": str(row.tract_id),
                },
            )
        )
    for row in agencies.itertuples(index=False):
        features.append(
            geojson.Feature(
                id=row.agency_id,
                geometry=geojson.Point((float(row.longitude_deg), float(row.latitude_deg))),
                properties={"kind": "agency"},
            )
        )
    return geojson.FeatureCollection(features)


def write_geojson(collection: geojson.FeatureCollection, path, stamp: Stamp) -> Path:
    """写出 GeoJSON，版本戳作为 FeatureCollection 的附加成员。"""
    path = Path(path)
    collection["stamp"] = stamp.to_dict()
    path.write_text(geojson.dumps(collection, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _format_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            return "-"
        if float(value).is_integer() and abs(value) < 1e12:
            return f"{int(value)}"
        return f"{value:.2f}"
    return str(value)


class Renderer:
    """
    对齐文本渲染器，把表格绘制成终端可读的字符画面。
    """

    def __init__(self, padding: int = 2):
        """
        参数：
            padding: 列间空格数
        """
        self.padding = padding

    def get_picture(self, frame: pd.DataFrame, title: Optional[str] = None) -> List[str]:
        """
        渲染表格为若干行文本。首列左对齐，其余列右对齐。

        参数：
            frame: 要渲染的表，索引作为首列
            title: 可选标题

        返回：
            文本行列表
        """
        header = [""] + [str(column) for column in frame.columns]
        body = [
            [str(index)] + [_format_cell(value) for value in row]
            for index, row in zip(frame.index, frame.itertuples(index=False))
        ]
        widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
        gap = " " * self.padding

        def draw(cells: List[str]) -> str:
            first = cells[0].ljust(widths[0])
            rest = [cell.rjust(width) for cell, width in zip(cells[1:], widths[1:])]
            return gap.join([first] + rest).rstrip()

        picture = []
        if title:
            picture.append(title)
        picture.append(draw(header))
        picture.append(gap.join("-" * width for width in widths))
        picture.extend(draw(line) for line in body)
        return picture

    def draw_ascii(self, picture: List[str], stream: TextIO) -> None:
        """把画面写入文本流。"""
        for line in picture:
            stream.write(line + "\n")

    def write(self, frame: pd.DataFrame, path, stamp: Stamp, title: Optional[str] = None) -> Path:
        """把渲染后的表写到文件，首行为版本戳。"""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            self.draw_ascii([stamp.line()] + self.get_picture(frame, title), handle)
        return path
