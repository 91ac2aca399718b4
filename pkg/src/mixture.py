"""
高斯混合模型模块。

在简约协方差族上用 EM 拟合高斯混合，所有密度计算在对数空间完成。

协方差族用三个字母编码（体积, 形状, 方向）：
E = 各分量相等，V = 各分量可变，I = 单位阵。
一维数据只允许 E（等方差）与 V（变方差）。
"""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .config import (
    DEFAULT_COV_FLOOR,
    DEFAULT_MAX_ITER,
    DEFAULT_N_RESTARTS,
    DEFAULT_SCREEN_ITER,
    DEFAULT_SEED,
    DEFAULT_TOL,
    KMEANS_LLOYD_ITERS,
    MODEL_FORMAT_VERSION,
)
from .errors import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
# 单次拟合内允许的空分量补救次数（乘以 K）
_MAX_RESEEDS_PER_COMPONENT = 10


class Parameterization(str, Enum):
    """协方差参数化。"""

    EII = "EII"
    VII = "VII"
    EEI = "EEI"
    VVI = "VVI"
    EEE = "EEE"
    EEV = "EEV"
    VVV = "VVV"
    E = "E"
    V = "V"

    @property
    def is_univariate(self) -> bool:
        return len(self.value) == 1

    @property
    def volume(self) -> str:
        return self.value[0]

    @classmethod
    def parse(cls, name: str) -> "Parameterization":
        try:
            return cls(name.strip().upper())
        except ValueError as exc:
            raise ConfigError(f"未知的协方差模型: {name!r}") from exc


MULTIVARIATE = [p for p in Parameterization if not p.is_univariate]


def collapse_for_dimension(parameterization: Parameterization, d: int) -> Parameterization:
    """
    一维时把三字母模型折叠为 E/V。

    参数：
        parameterization: 请求的模型
        d: 特征维数

    返回：
        在该维数下合法的模型
    """
    if d == 1 and not parameterization.is_univariate:
        return Parameterization.E if parameterization.volume == "E" else Parameterization.V
    return parameterization


def check_legal(parameterization: Parameterization, d: int) -> None:
    """检查 (模型, 维数) 组合是否合法。"""
    if d < 1:
        raise ConfigError(f"特征维数必须 >= 1: {d}")
    if d == 1 and not parameterization.is_univariate:
        raise ConfigError(f"一维数据只允许 E 或 V，收到 {parameterization.value}")
    if d >= 2 and parameterization.is_univariate:
        raise ConfigError(f"{parameterization.value} 只适用于一维数据 (d = {d})")


def n_free_params(parameterization: Parameterization, K: int, d: int) -> int:
    """
    模型的自由参数个数。

    参数：
        parameterization: 协方差模型
        K: 分量数
        d: 维数

    返回：
        (K-1) 个权重 + K·d 个均值 + 协方差参数
    """
    check_legal(parameterization, d)
    if K < 1:
        raise ConfigError(f"K 必须 >= 1: {K}")
    covariance = {
        Parameterization.EII: 1,
        Parameterization.VII: K,
        Parameterization.EEI: d,
        Parameterization.VVI: K * d,
        Parameterization.EEE: d * (d + 1) // 2,
        Parameterization.EEV: 1 + (d - 1) + K * d * (d - 1) // 2,
        Parameterization.VVV: K * d * (d + 1) // 2,
        Parameterization.E: 1,
        Parameterization.V: K,
    }[parameterization]
    return (K - 1) + K * d + covariance


@dataclass(frozen=True)
class FitConfig:
    """EM 超参数。"""

    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    n_restarts: int = DEFAULT_N_RESTARTS
    seed: int = DEFAULT_SEED
    cov_floor: float = DEFAULT_COV_FLOOR
    screen_iter: int = DEFAULT_SCREEN_ITER

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError(f"tol 必须为正: {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter 必须 >= 1: {self.max_iter}")
        if self.n_restarts < 1:
            raise ConfigError(f"n_restarts 必须 >= 1: {self.n_restarts}")
        if self.screen_iter < 1:
            raise ConfigError(f"screen_iter 必须 >= 1: {self.screen_iter}")
        if self.cov_floor < 0:
            raise ConfigError(f"cov_floor 不能为负: {self.cov_floor}")


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """
    K 个分量的高斯混合。

    covariances 总以 (K, d, d) 满矩阵存储，约束由 parameterization 描述。
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    parameterization: Parameterization

    def __post_init__(self):
        K = len(self.weights)
        if self.means.ndim != 2 or self.means.shape[0] != K:
            raise ValueError(f"means 形状应为 (K, d)，收到 {self.means.shape}")
        d = self.means.shape[1]
        if self.covariances.shape != (K, d, d):
            raise ValueError(f"covariances 形状应为 {(K, d, d)}，收到 {self.covariances.shape}")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError("weights 必须位于单纯形上")
        check_legal(self.parameterization, d)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @cached_property
    def cholesky_factors(self) -> np.ndarray:
        """各分量协方差的下三角 Cholesky 因子。"""
        factors = np.empty_like(self.covariances)
        for k, cov in enumerate(self.covariances):
            try:
                factors[k] = linalg.cholesky(cov, lower=True)
            except linalg.LinAlgError as exc:
                raise NumericalError(f"分量 {k} 的协方差不是正定矩阵") from exc
        return factors

    @cached_property
    def log_determinants(self) -> np.ndarray:
        diagonals = np.diagonal(self.cholesky_factors, axis1=1, axis2=2)
        return 2.0 * np.log(diagonals).sum(axis=1)

    def permuted(self, order: Sequence[int]) -> "MixtureModel":
        """按给定顺序重排分量。"""
        order = np.asarray(order)
        weights = self.weights[order]
        return MixtureModel(
            weights=weights / weights.sum(),
            means=self.means[order],
            covariances=self.covariances[order],
            parameterization=self.parameterization,
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    """一次 EM 拟合的结果。"""

    model: MixtureModel
    responsibilities: np.ndarray
    loglik_trace: np.ndarray
    hard_assignments: np.ndarray
    converged: bool
    iterations: int
    seed: int
    reseeds: int = 0
    init_method: str = "kmeans++"

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def n_samples(self) -> int:
        return self.responsibilities.shape[0]

    @property
    def n_params(self) -> int:
        return n_free_params(
            self.model.parameterization, self.model.n_components, self.model.n_features
        )


class EmptyComponentError(NumericalError):
    """M 步遇到责任质量几乎为零的分量。"""

    def __init__(self, components: List[int]):
        super().__init__(f"空分量: {components}")
        self.components = components


def as_data_matrix(data) -> np.ndarray:
    """把输入整理为 (n, d) 的有限浮点矩阵。"""
    array = np.asarray(data, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise DataError(f"数据必须是二维矩阵，收到 {array.ndim} 维")
    if not np.all(np.isfinite(array)):
        raise DataError("数据包含非有限值")
    return array


def _log_gaussian(model: MixtureModel, data: np.ndarray) -> np.ndarray:
    """逐分量的高斯对数密度，形状 (n, K)。"""
    n, d = data.shape
    out = np.empty((n, model.n_components))
    for k in range(model.n_components):
        diff = (data - model.means[k]).T
        z = linalg.solve_triangular(model.cholesky_factors[k], diff, lower=True)
        mahalanobis = np.einsum("ij,ij->j", z, z)
        out[:, k] = -0.5 * (d * LOG_2PI + model.log_determinants[k] + mahalanobis)
    return out


def _weighted_log_prob(model: MixtureModel, data: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_weights = np.log(model.weights)
    return _log_gaussian(model, data) + log_weights


def _check_dimension(model: MixtureModel, data: np.ndarray) -> None:
    if data.shape[1] != model.n_features:
        raise DataError(
            f"维数不匹配: 模型 d = {model.n_features}，数据 d = {data.shape[1]}"
        )


def log_density(model: MixtureModel, x) -> float:
    """
    混合密度的对数。

    参数：
        model: 混合模型
        x: 长度为 d 的点

    返回：
        log Σ_k w_k N(x; μ_k, Σ_k)
    """
    point = np.asarray(x, dtype=float).reshape(1, -1)
    _check_dimension(model, point)
    if not np.all(np.isfinite(point)):
        raise DataError("x 包含非有限值")
    return float(logsumexp(_weighted_log_prob(model, point), axis=1)[0])


def _e_step(model: MixtureModel, data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """返回 (责任矩阵, 每行的对数混合密度)。"""
    weighted = _weighted_log_prob(model, data)
    row_log_density = logsumexp(weighted, axis=1)
    responsibilities = np.exp(weighted - row_log_density[:, None])
    # 显式归一化，每行和与 1 相差不超过 1e-12
    responsibilities /= responsibilities.sum(axis=1, keepdims=True)
    return responsibilities, row_log_density


def e_step(model: MixtureModel, data) -> Tuple[np.ndarray, float]:
    """
    E 步。

    参数：
        model: 当前模型
        data: (n, d) 数据

    返回：
        (责任矩阵 n×K, 总对数似然)
    """
    data = as_data_matrix(data)
    _check_dimension(model, data)
    responsibilities, row_log_density = _e_step(model, data)
    return responsibilities, float(row_log_density.sum())


def covariance_ridge(data: np.ndarray, cov_floor: float) -> float:
    """协方差岭：cov_floor 乘以全局协方差对角线均值。"""
    centered = data - data.mean(axis=0)
    variances = (centered * centered).mean(axis=0)
    return float(cov_floor * variances.mean())


def m_step(
    data, responsibilities: np.ndarray, parameterization: Parameterization, ridge: float = 0.0
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    M 步：约束下期望完全数据对数似然的闭式最大化。

    参数：
        data: (n, d) 数据
        responsibilities: (n, K) 责任矩阵
        parameterization: 协方差模型
        ridge: 加到每个协方差对角线上的岭

    返回：
        (weights, means, covariances)
    """
    data = as_data_matrix(data)
    n, d = data.shape
    check_legal(parameterization, d)
    K = responsibilities.shape[1]

    nk = responsibilities.sum(axis=0)
    dead = np.flatnonzero(nk < 10.0 * np.finfo(float).eps * n)
    if len(dead):
        raise EmptyComponentError(dead.tolist())

    weights = nk / n
    weights = weights / weights.sum()
    means = (responsibilities.T @ data) / nk[:, None]

    # 各分量的加权散布矩阵 W_k
    scatter = np.empty((K, d, d))
    for k in range(K):
        diff = data - means[k]
        scatter[k] = (responsibilities[:, k] * diff.T) @ diff
    scatter = 0.5 * (scatter + scatter.transpose(0, 2, 1))

    covariances = _constrained_covariances(scatter, nk, n, parameterization)
    covariances += ridge * np.eye(d)
    return weights, means, covariances


def _shared(matrix: np.ndarray, K: int) -> np.ndarray:
    """把同一矩阵复制给 K 个分量（逐位相同）。"""
    return np.repeat(matrix[None, :, :], K, axis=0)


def _constrained_covariances(
    scatter: np.ndarray, nk: np.ndarray, n: int, parameterization: Parameterization
) -> np.ndarray:
    K, d, _ = scatter.shape
    eye = np.eye(d)
    pooled = scatter.sum(axis=0)
    p = parameterization

    if p in (Parameterization.EII, Parameterization.E):
        return _shared(np.trace(pooled) / (n * d) * eye, K)
    if p in (Parameterization.VII, Parameterization.V):
        variances = np.trace(scatter, axis1=1, axis2=2) / (nk * d)
        return variances[:, None, None] * eye
    if p is Parameterization.EEI:
        return _shared(np.diag(np.diag(pooled) / n), K)
    if p is Parameterization.VVI:
        diagonals = np.diagonal(scatter, axis1=1, axis2=2) / nk[:, None]
        return np.stack([np.diag(row) for row in diagonals])
    if p is Parameterization.EEE:
        return _shared(pooled / n, K)
    if p is Parameterization.VVV:
        return scatter / nk[:, None, None]
    if p is Parameterization.EEV:
        # 各分量保留自己的特征向量（方向），特征值（体积与形状）在分量间合并
        eigenvalues = np.empty((K, d))
        eigenvectors = np.empty((K, d, d))
        for k in range(K):
            eigenvalues[k], eigenvectors[k] = linalg.eigh(scatter[k])
        shared_values = eigenvalues.sum(axis=0) / n
        covariances = np.einsum("kij,j,klj->kil", eigenvectors, shared_values, eigenvectors)
        return 0.5 * (covariances + covariances.transpose(0, 2, 1))
    raise ConfigError(f"不支持的协方差模型: {p}")


def init_kmeanspp(data, K: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    k-means++ 初始化，随后最多 KMEANS_LLOYD_ITERS 次 Lloyd 迭代。

    参数：
        data: (n, d) 数据
        K: 中心数
        seed: 64 位种子

    返回：
        (中心 K×d, 硬划分 n)
    """
    data = as_data_matrix(data)
    n = data.shape[0]
    if K < 1:
        raise ConfigError(f"K 必须 >= 1: {K}")
    if len(np.unique(data, axis=0)) < K:
        raise DataError(f"不同的数据点少于 K = {K} 个")

    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [int(rng.integers(n))]
    closest = cdist(data, data[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, K):
        # 与已选中心重合的点概率为零，保证中心互不相同
        probabilities = closest / closest.sum()
        index = int(rng.choice(n, p=probabilities))
        chosen.append(index)
        closest = np.minimum(closest, cdist(data, data[[index]], "sqeuclidean")[:, 0])

    centers = data[chosen].copy()
    labels = cdist(data, centers, "sqeuclidean").argmin(axis=1)
    for _ in range(KMEANS_LLOYD_ITERS):
        for k in range(K):
            members = labels == k
            if members.any():
                centers[k] = data[members].mean(axis=0)
        updated = cdist(data, centers, "sqeuclidean").argmin(axis=1)
        if np.array_equal(updated, labels):
            break
        labels = updated
    return centers, labels


def init_quantiles(data, K: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    主轴分位数初始化：沿第一主成分排序后切成 K 段等量的块。

    参数：
        data: (n, d) 数据
        K: 块数

    返回：
        (块均值 K×d, 硬划分 n)
    """
    data = as_data_matrix(data)
    n, d = data.shape
    if K < 1:
        raise ConfigError(f"K 必须 >= 1: {K}")
    if n < K:
        raise DataError(f"样本数 n = {n} 少于 K = {K}")

    centered = data - data.mean(axis=0)
    if d == 1:
        projection = centered[:, 0]
    else:
        _, vectors = linalg.eigh(centered.T @ centered)
        projection = centered @ vectors[:, -1]

    labels = np.empty(n, dtype=int)
    for k, block in enumerate(np.array_split(np.argsort(projection, kind="stable"), K)):
        labels[block] = k
    centers = np.stack([data[labels == k].mean(axis=0) for k in range(K)])
    return centers, labels


def init_random(data, K: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    随机数据点初始化：从互不相同的数据点中均匀抽 K 个作中心，按最近中心划分。

    参数：
        data: (n, d) 数据
        K: 中心数
        seed: 64 位种子

    返回：
        (中心 K×d, 硬划分 n)
    """
    data = as_data_matrix(data)
    if K < 1:
        raise ConfigError(f"K 必须 >= 1: {K}")
    distinct = np.unique(data, axis=0)
    if len(distinct) < K:
        raise DataError(f"不同的数据点少于 K = {K} 个")

    rng = np.random.Generator(np.random.PCG64(seed))
    centers = distinct[np.sort(rng.choice(len(distinct), size=K, replace=False))]
    labels = cdist(data, centers, "sqeuclidean").argmin(axis=1)
    return centers, labels


class InitMethod(str, Enum):
    """EM 起点的生成方式。"""

    KMEANSPP = "kmeans++"
    QUANTILE = "quantile"
    RANDOM = "random"


def restart_plan(n_restarts: int) -> List[InitMethod]:
    """
    各次重启的初始化方式。

    第 0 次 k-means++，第 1 次主轴分位数，之后随机数据点与 k-means++ 交替。
    """
    plan = [InitMethod.KMEANSPP, InitMethod.QUANTILE]
    while len(plan) < n_restarts:
        plan.append(InitMethod.RANDOM if len(plan) % 2 == 0 else InitMethod.KMEANSPP)
    return plan[:n_restarts]


def initial_partition(data, K: int, seed: int, method: InitMethod) -> Tuple[np.ndarray, np.ndarray]:
    """按 method 生成 (中心, 硬划分)。"""
    if method is InitMethod.QUANTILE:
        return init_quantiles(data, K)
    if method is InitMethod.RANDOM:
        return init_random(data, K, seed)
    return init_kmeanspp(data, K, seed)


def _center_log_density(data: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """第一次 E 步之前的密度替代：到最近非空中心的负平方距离。"""
    live = np.unique(labels)
    return -cdist(data, centers[live], "sqeuclidean").min(axis=1)


def _one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    responsibilities = np.zeros((len(labels), K))
    responsibilities[np.arange(len(labels)), labels] = 1.0
    return responsibilities


def _reseed(
    data: np.ndarray,
    responsibilities: np.ndarray,
    row_log_density: np.ndarray,
    dead: List[int],
) -> np.ndarray:
    """
    空分量补救：以当前混合密度最低的点为新中心，
    把比起当前主分量均值更靠近该中心的点硬分给它（至少 d+1 个）。
    """
    n, d = data.shape
    responsibilities = responsibilities.copy()
    nk = responsibilities.sum(axis=0)
    live = [k for k in range(responsibilities.shape[1]) if k not in dead]
    means = (responsibilities[:, live].T @ data) / nk[live][:, None]
    taken = np.zeros(n, dtype=bool)
    for k in dead:
        order = np.argsort(row_log_density, kind="stable")
        anchor = next(i for i in order if not taken[i])
        to_anchor = cdist(data, data[[anchor]], "sqeuclidean")[:, 0]
        to_means = cdist(data, means, "sqeuclidean").min(axis=1)
        members = (to_anchor < to_means) & ~taken
        if members.sum() < d + 1:
            nearest = [i for i in np.argsort(to_anchor, kind="stable") if not taken[i]]
            members[nearest[: d + 1]] = True
        responsibilities[members] = 0.0
        responsibilities[members, k] = 1.0
        taken |= members
        logger.debug("分量 %d 以第 %d 行重新播种，接管 %d 行", k, anchor, int(members.sum()))
    return responsibilities


class _EMRun:
    """
    一次重启的 EM 状态，可以分段推进。

    构造时完成初始化、第一次 M 步和第一次 E 步；
    之后每次推进做一对 M/E 步，直到收敛或迭代数达到上限。
    """

    def __init__(
        self,
        data: np.ndarray,
        K: int,
        parameterization: Parameterization,
        config: FitConfig,
        ridge: float,
        seed: int,
        method: InitMethod = InitMethod.KMEANSPP,
    ):
        self.data = data
        self.K = K
        self.parameterization = parameterization
        self.tol = config.tol
        self.ridge = ridge
        self.seed = seed
        self.method = method
        self.reseeds = 0
        self.iterations = 0
        self.converged = False
        self.trace: List[float] = []

        centers, labels = initial_partition(data, K, seed, method)
        self.row_log_density = _center_log_density(data, centers, labels)
        self.model = self._maximize(_one_hot(labels, K))
        self._expect()

    @property
    def loglik(self) -> float:
        return self.trace[-1]

    def _maximize(self, responsibilities: np.ndarray) -> MixtureModel:
        while True:
            try:
                weights, means, covariances = m_step(
                    self.data, responsibilities, self.parameterization, self.ridge
                )
                return MixtureModel(weights, means, covariances, self.parameterization)
            except EmptyComponentError as exc:
                self.reseeds += 1
                if self.reseeds > _MAX_RESEEDS_PER_COMPONENT * self.K:
                    raise NumericalError(f"K = {self.K} 时空分量反复出现") from exc
                responsibilities = _reseed(
                    self.data, responsibilities, self.row_log_density, exc.components
                )
                # 补救后开始新的上升过程
                self.trace.clear()

    def _expect(self) -> None:
        self.responsibilities, self.row_log_density = _e_step(self.model, self.data)
        loglik = float(self.row_log_density.sum())
        if not math.isfinite(loglik):
            raise NumericalError(f"对数似然非有限 (K = {self.K}, {self.parameterization.value})")
        self.trace.append(loglik)
        if len(self.trace) > 1 and abs(loglik - self.trace[-2]) < self.tol * abs(loglik):
            self.converged = True

    def advance(self, max_iter: int) -> "_EMRun":
        """推进到收敛或累计 max_iter 次迭代。"""
        while not self.converged and self.iterations < max_iter:
            self.model = self._maximize(self.responsibilities)
            self.iterations += 1
            self._expect()
        return self

    def result(self) -> FitResult:
        return FitResult(
            model=self.model,
            responsibilities=self.responsibilities,
            loglik_trace=np.array(self.trace),
            hard_assignments=self.responsibilities.argmax(axis=1),
            converged=self.converged,
            iterations=self.iterations,
            seed=self.seed,
            reseeds=self.reseeds,
            init_method=self.method.value,
        )


def restart_seeds(seed: int, n_restarts: int) -> List[int]:
    """由主种子派生各次重启的 64 位种子。"""
    children = np.random.SeedSequence(seed).spawn(n_restarts)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def fit(data, K: int, parameterization, config: Optional[FitConfig] = None) -> FitResult:
    """
    用 EM 拟合高斯混合。

    多次重启时各起点先跑 screen_iter 次短 EM，对数似然领先者（并列取靠前者）
    继续迭代到收敛或 max_iter 后返回。

    参数：
        data: (n, d) 数据
        K: 分量数
        parameterization: 协方差模型（名称或枚举）
        config: EM 超参数

    返回：
        FitResult
    """
    config = config or FitConfig()
    data = as_data_matrix(data)
    n, d = data.shape
    if not isinstance(parameterization, Parameterization):
        parameterization = Parameterization.parse(parameterization)
    check_legal(parameterization, d)
    if K < 1:
        raise ConfigError(f"K 必须 >= 1: {K}")
    if n <= K:
        raise DataError(f"样本数 n = {n} 必须大于 K = {K}")
    if np.all(data == data[0]):
        raise DataError("所有数据点相同，方差为零")

    ridge = covariance_ridge(data, config.cov_floor)
    seeds = restart_seeds(config.seed, config.n_restarts)
    runs = [
        _EMRun(data, K, parameterization, config, ridge, seed, method)
        for seed, method in zip(seeds, restart_plan(config.n_restarts))
    ]
    if len(runs) > 1:
        # 短 EM 筛选：每个起点先跑 screen_iter 次，只把领先者推进到收敛
        for run in runs:
            run.advance(min(config.screen_iter, config.max_iter))
            logger.debug(
                "%s K=%d %s seed=%d: 筛选后 loglik=%.6f converged=%s",
                parameterization.value, K, run.method.value, run.seed, run.loglik, run.converged,
            )
    best = max(runs, key=lambda run: run.loglik)
    best.advance(config.max_iter)
    logger.debug(
        "%s K=%d 选用 %s 起点: loglik=%.6f iterations=%d converged=%s",
        parameterization.value, K, best.method.value, best.loglik, best.iterations, best.converged,
    )
    return best.result()


def predict(model: MixtureModel, data) -> Tuple[np.ndarray, np.ndarray]:
    """
    用已拟合模型分配新数据。

    参数：
        model: 混合模型
        data: (n, d) 数据

    返回：
        (硬分配, 后验矩阵)；等概率时取最小分量下标
    """
    data = as_data_matrix(data)
    _check_dimension(model, data)
    responsibilities, _ = _e_step(model, data)
    return responsibilities.argmax(axis=1), responsibilities


def model_to_dict(model: MixtureModel, config: Optional[FitConfig] = None, seed: Optional[int] = None) -> Dict:
    """
    模型序列化为版本化 JSON 文档。

    字段：format_version, parameterization, K, d, weights, means,
    covariances（每个分量按行优先展平为 d*d 个数）, seed, config。
    """
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "parameterization": model.parameterization.value,
        "K": model.n_components,
        "d": model.n_features,
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "covariances": [cov.reshape(-1).tolist() for cov in model.covariances],
        "seed": seed,
        "config": asdict(config) if config is not None else None,
    }


def model_from_dict(document: Dict) -> MixtureModel:
    """从 JSON 文档恢复模型。"""
    version = document.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"不支持的模型文件版本: {version}")
    try:
        K, d = int(document["K"]), int(document["d"])
        weights = np.array(document["weights"], dtype=float)
        means = np.array(document["means"], dtype=float).reshape(K, d)
        covariances = np.array(document["covariances"], dtype=float).reshape(K, d, d)
        parameterization = Parameterization.parse(document["parameterization"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"模型文件字段缺失或格式错误: {exc}") from exc
    return MixtureModel(weights, means, covariances, parameterization)
