"""
模型选择模块。

在 (协方差模型 × K) 网格上计算 BIC 与抽样轮廓系数，并提供聚类一致性评分。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.special import comb

from .errors import ConfigError, DataError, NumericalError
from .mixture import (
    FitConfig,
    FitResult,
    Parameterization,
    as_data_matrix,
    check_legal,
    collapse_for_dimension,
    fit,
    n_free_params,
)

logger = logging.getLogger(__name__)

# 精确轮廓系数按块计算距离时每块的行数
_SILHOUETTE_BLOCK = 1024

SELECTION_COLUMNS = ["model", "K", "bic", "converged", "silhouette", "loglik", "n_params", "iterations"]


def bic_score(loglik: float, n_params: int, n_samples: int) -> float:
    """
    BIC = 2·lnL − m·ln(n)，越大越好。

    参数：
        loglik: 对数似然
        n_params: 自由参数个数
        n_samples: 样本数

    返回：
        BIC 值
    """
    if not math.isfinite(loglik):
        raise NumericalError(f"对数似然非有限: {loglik}")
    return 2.0 * loglik - n_params * math.log(n_samples)


def bic(result: FitResult) -> float:
    """拟合结果的 BIC。"""
    return bic_score(result.loglik, result.n_params, result.n_samples)


@dataclass
class SelectionRow:
    """网格中的一格。"""

    model: str
    K: int
    bic: float
    converged: bool
    silhouette: float = math.nan
    loglik: float = math.nan
    n_params: int = 0
    iterations: int = 0


@dataclass
class SelectionTable:
    """
    模型选择表。

    best 是收敛行中 BIC 最大者的下标；并列时取较小的 K，再取较少的参数。
    """

    rows: List[SelectionRow]
    best: Optional[int]
    model_mapping: Dict[str, str] = field(default_factory=dict)
    fits: Dict[Tuple[str, int], FitResult] = field(default_factory=dict, repr=False)

    @property
    def best_row(self) -> Optional[SelectionRow]:
        return None if self.best is None else self.rows[self.best]

    @property
    def best_fit(self) -> Optional[FitResult]:
        row = self.best_row
        return None if row is None else self.fits.get((row.model, row.K))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=SELECTION_COLUMNS)

    def to_dict(self) -> Dict:
        return {
            "rows": [asdict(row) for row in self.rows],
            "best": self.best,
            "model_mapping": dict(self.model_mapping),
        }

    def silhouette_by_k(self) -> pd.Series:
        """每个 K 在各模型中的最大平均轮廓系数。"""
        frame = self.to_frame().dropna(subset=["silhouette"])
        return frame.groupby("K")["silhouette"].max()


def select_best(rows: Sequence[SelectionRow]) -> Optional[int]:
    """按 BIC 最大、K 较小、参数较少的顺序挑选收敛行。"""
    candidates = [
        i for i, row in enumerate(rows) if row.converged and math.isfinite(row.bic)
    ]
    if not candidates:
        return None
    return min(candidates, key=lambda i: (-rows[i].bic, rows[i].K, rows[i].n_params))


def cell_seed(master_seed: int, parameterization: Parameterization, K: int) -> int:
    """由主种子、模型和 K 派生一格的独立种子，与网格组成无关。"""
    index = list(Parameterization).index(parameterization)
    sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=(index, K))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def grid_search(
    data,
    K_range: Sequence[int],
    parameterizations: Sequence,
    config: Optional[FitConfig] = None,
    silhouette_sample_size: Optional[int] = None,
    threads: int = 1,
) -> SelectionTable:
    """
    在 (模型 × K) 网格上拟合并按 BIC 选择。

    参数：
        data: (n, d) 数据
        K_range: 候选 K
        parameterizations: 候选协方差模型；一维时自动折叠为 E/V
        config: EM 超参数（seed 为主种子）
        silhouette_sample_size: 给定时为每行计算抽样轮廓系数
        threads: 并行拟合的线程数，不影响结果

    返回：
        SelectionTable
    """
    config = config or FitConfig()
    data = as_data_matrix(data)
    n, d = data.shape
    if len(K_range) == 0:
        raise ConfigError("K 范围为空")

    mapping: Dict[str, str] = {}
    models: List[Parameterization] = []
    for requested in parameterizations:
        parsed = requested if isinstance(requested, Parameterization) else Parameterization.parse(requested)
        used = collapse_for_dimension(parsed, d)
        mapping[parsed.value] = used.value
        try:
            check_legal(used, d)
        except ConfigError:
            logger.warning("跳过非法组合 %s (d = %d)", used.value, d)
            continue
        if used not in models:
            models.append(used)
    if any(k != v for k, v in mapping.items()):
        logger.info("一维数据模型映射: %s", mapping)

    cells = [(model, K) for model in models for K in sorted(set(K_range)) if 1 <= K < n]
    if not cells:
        raise ConfigError("没有合法的 (模型, K) 组合")

    def run(cell: Tuple[Parameterization, int]) -> Tuple[SelectionRow, Optional[FitResult]]:
        model, K = cell
        seed = cell_seed(config.seed, model, K)
        try:
            result = fit(data, K, model, replace(config, seed=seed))
        except NumericalError as exc:
            logger.warning("%s K=%d 拟合失败: %s", model.value, K, exc)
            return SelectionRow(model.value, K, math.nan, False, n_params=n_free_params(model, K, d)), None
        row = SelectionRow(
            model=model.value,
            K=K,
            bic=bic(result),
            converged=result.converged,
            loglik=result.loglik,
            n_params=result.n_params,
            iterations=result.iterations,
        )
        if silhouette_sample_size and len(np.unique(result.hard_assignments)) >= 2:
            row.silhouette = silhouette_sampled(
                data, result.hard_assignments, silhouette_sample_size, seed
            )
        logger.info(
            "%s K=%d bic=%.3f converged=%s silhouette=%.4f",
            model.value, K, row.bic, row.converged, row.silhouette,
        )
        return row, result

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, cells))
    else:
        outcomes = [run(cell) for cell in cells]

    rows = [row for row, _ in outcomes]
    fits = {(row.model, row.K): result for row, result in outcomes if result is not None}
    for row in rows:
        if not row.converged:
            logger.warning("%s K=%d 未收敛，不参与最优选择", row.model, row.K)
    return SelectionTable(rows=rows, best=select_best(rows), model_mapping=mapping, fits=fits)


def silhouette_values(data, labels) -> np.ndarray:
    """
    精确的逐点轮廓系数 s(i) = (b − a) / max(a, b)，欧氏距离。

    单点簇的点得 0。
    """
    data = as_data_matrix(data)
    _, codes = np.unique(np.asarray(labels), return_inverse=True)
    codes = codes.reshape(-1)
    n_clusters = int(codes.max()) + 1
    counts = np.bincount(codes, minlength=n_clusters).astype(float)
    indicator = np.zeros((len(codes), n_clusters))
    indicator[np.arange(len(codes)), codes] = 1.0

    sums = np.empty((len(codes), n_clusters))
    for start in range(0, len(codes), _SILHOUETTE_BLOCK):
        block = slice(start, start + _SILHOUETTE_BLOCK)
        sums[block] = cdist(data[block], data, "euclidean") @ indicator

    rows = np.arange(len(codes))
    own = counts[codes]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[rows, codes] / (own - 1.0)
        means = sums / counts
    means[rows, codes] = np.inf
    b = means.min(axis=1)
    scale = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(scale > 0, (b - a) / scale, 0.0)
    values[own == 1] = 0.0
    return values


def stratified_sample(labels: np.ndarray, sample_size: int, rng: np.random.Generator) -> np.ndarray:
    """按簇规模等比例分层抽样，每簇至少一个点；返回升序下标。"""
    n = len(labels)
    chosen = []
    for cluster in np.unique(labels):
        members = np.flatnonzero(labels == cluster)
        count = min(len(members), max(1, int(round(sample_size * len(members) / n))))
        chosen.append(rng.choice(members, size=count, replace=False))
    return np.sort(np.concatenate(chosen))


def silhouette_sampled(data, assignments, sample_size: int, seed: int) -> float:
    """
    抽样平均轮廓系数。

    n <= sample_size 时为精确值；否则在分层样本上计算。

    参数：
        data: (n, d) 特征
        assignments: 簇标签
        sample_size: 样本规模
        seed: 抽样种子

    返回：
        [-1, 1] 内的平均轮廓系数
    """
    data = as_data_matrix(data)
    labels = np.asarray(assignments)
    if len(labels) != len(data):
        raise DataError("标签数与数据行数不一致")
    if sample_size < 2:
        raise ConfigError(f"sample_size 至少为 2: {sample_size}")
    if len(np.unique(labels)) < 2:
        raise DataError("只有一个簇时轮廓系数无定义")

    if len(labels) <= sample_size:
        index = np.arange(len(labels))
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        index = stratified_sample(labels, sample_size, rng)
    return float(silhouette_values(data[index], labels[index]).mean())


def adjusted_rand_index(labels_a, labels_b) -> float:
    """
    调整兰德指数（基于配对计数的列联表）。

    参数：
        labels_a, labels_b: 等长标签序列

    返回：
        ARI，完全一致时为 1
    """
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if len(labels_a) != len(labels_b):
        raise DataError(f"标签长度不一致: {len(labels_a)} != {len(labels_b)}")
    if len(labels_a) < 2:
        raise DataError("至少需要两个样本")

    _, codes_a = np.unique(labels_a, return_inverse=True)
    _, codes_b = np.unique(labels_b, return_inverse=True)
    table = np.zeros((codes_a.max() + 1, codes_b.max() + 1), dtype=np.int64)
    np.add.at(table, (codes_a.reshape(-1), codes_b.reshape(-1)), 1)

    index = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(len(labels_a), 2)
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))
