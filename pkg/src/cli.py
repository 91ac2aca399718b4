"""
命令行模块。

子命令 synth / fit / select / profile 串起整条流水线：
加载 → 特征 → 拟合/选择 → 画像 → 导出。
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import TOOL_NAME, TOOL_VERSION, RunConfig, load_run_config
from .errors import EXIT_OK, EXIT_USAGE, ConfigError, DataError, FoodAccessError, NumericalError
from .grid import build_grid, nearest_agencies
from .ingest import FeatureMatrix, LoadedTables, featurize, load_tables
from .mixture import FitConfig, Parameterization, collapse_for_dimension, fit, model_from_dict, model_to_dict, predict
from .profile import ProfileConfig, cluster_gaps, build_profile, desert_report, distance_quantiles, label_clusters
from .renderer import Renderer, Stamp, clusters_geojson, write_csv, write_geojson, write_json
from .selection import cell_seed, grid_search
from .synth import generate, load_synth_config, SynthConfig
from .terminal import init_terminal, restore_terminal

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """用法错误以退出码 1 结束，而不是 argparse 默认的 2。"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Pipeline:
    """
    流水线主类，协调加载、拟合、选择与画像。
    """

    def __init__(self, config: RunConfig):
        """
        参数：
            config: 校验后的运行配置
        """
        self.config = config
        self.stamp = Stamp(config_hash=config.config_hash(), seed=config.seed)
        self.tables: Optional[LoadedTables] = None
        self.features: Optional[FeatureMatrix] = None

    def setup(self):
        """加载输入表并组装特征；准备输出目录。"""
        services, agencies, tracts = self.config.table_paths()
        self.tables = load_tables(services, agencies, tracts, strict_tracts=self.config.strict_tracts)
        self.features = featurize(self.tables, self.config.feature_spec, self.config.scaling)
        self.config.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info("特征: %s (n = %d, d = %d)", ",".join(self.features.feature_spec), *self.features.values.shape)

    def fit_config(self, seed: Optional[int] = None) -> FitConfig:
        return FitConfig(
            tol=self.config.tol,
            max_iter=self.config.max_iter,
            n_restarts=self.config.n_restarts,
            screen_iter=self.config.screen_iter,
            seed=self.config.seed if seed is None else seed,
            cov_floor=self.config.cov_floor,
        )

    def _path(self, name: str) -> Path:
        return self.config.output_dir / name

    def _model_document(self, model, seed: int) -> dict:
        document = model_to_dict(model, self.fit_config(seed), seed)
        document["feature_spec"] = list(self.features.feature_spec)
        document["scaling"] = self.features.scaling
        return document

    def select(self) -> List[Path]:
        """在 (模型 × K) 网格上选择；写出选择表与最优模型。"""
        table = grid_search(
            self.features.values,
            self.config.k_range,
            self.config.models,
            self.fit_config(),
            silhouette_sample_size=self.config.silhouette_sample_size,
            threads=self.config.threads,
        )
        frame = table.to_frame()
        paths = [
            write_csv(frame, self._path("selection_table.csv"), self.stamp),
            write_json(table.to_dict(), self._path("selection_table.json"), self.stamp),
        ]
        best = table.best_row
        if best is None:
            raise NumericalError("网格中没有收敛的模型，无法给出最优模型")
        logger.info("最优模型: %s K=%d BIC=%.3f", best.model, best.K, best.bic)
        seed = cell_seed(self.config.seed, Parameterization.parse(best.model), best.K)
        document = self._model_document(table.best_fit.model, seed)
        paths.append(write_json(document, self._path("best_model.json"), self.stamp))
        return paths

    def fit(self, model: str, K: int) -> List[Path]:
        """单格拟合；写出模型与分配。"""
        parameterization = collapse_for_dimension(Parameterization.parse(model), self.features.n_features)
        seed = cell_seed(self.config.seed, parameterization, K)
        result = fit(self.features.values, K, parameterization, self.fit_config(seed))
        if not result.converged:
            logger.warning("%s K=%d 在 %d 次迭代内未收敛", parameterization.value, K, result.iterations)

        labeling = label_clusters(result.hard_assignments, self.tables.distance_miles, K)
        ranks = labeling.rank_assignments(result.hard_assignments)
        assignments = pd.DataFrame(
            {
                "family_id": self.tables.services["family_id"].to_numpy(),
                "component": result.hard_assignments,
                "cluster_rank": ranks,
                "cluster_label": np.array(labeling.labels, dtype=object)[ranks],
                "max_responsibility": result.responsibilities.max(axis=1),
            }
        )
        return [
            write_json(self._model_document(result.model, seed), self._path("model.json"), self.stamp),
            write_csv(assignments, self._path("assignments.csv"), self.stamp),
        ]

    def profile(self, model_path) -> List[Path]:
        """用已存模型分配数据，写出画像、分位数、荒漠、差距与 GeoJSON。"""
        try:
            document = json.loads(Path(model_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"无法读取模型文件 {model_path}: {exc}") from exc
        model = model_from_dict(document)
        components, _ = predict(model, self.features.values)

        tables = self.tables
        distances = tables.distance_miles
        labeling = label_clusters(components, distances, model.n_components)
        ranks = labeling.rank_assignments(components)
        labels = labeling.labels

        grid = build_grid(tables.agency_points(), self.config.cell_size_miles)
        _, nearest = nearest_agencies(
            tables.services["latitude_deg"].to_numpy(), tables.services["longitude_deg"].to_numpy(), grid
        )
        profile_config = ProfileConfig(
            threshold_miles=self.config.threshold_miles,
            state_median_income=self.config.state_median_income,
            person_weighted=self.config.person_weighted,
        )
        profile = build_profile(ranks, tables, grid, profile_config, labels, nearest)
        deserts = desert_report(tables.services, grid, tables.tracts, self.config.threshold_miles, nearest)
        logger.info("食物援助荒漠: %d 个普查区", len(deserts))

        collection = clusters_geojson(
            tables.services, np.array(labels, dtype=object)[ranks], distances, tables.agencies
        )
        return [
            write_csv(profile.to_frame(), self._path("profile.csv"), self.stamp),
            Renderer().write(profile.to_table(), self._path("profile.txt"), self.stamp,
                             title="Observed values of variables per cluster"),
            write_csv(distance_quantiles(ranks, distances, labels=labels), self._path("quantiles.csv"), self.stamp),
            write_csv(deserts.to_frame(), self._path("deserts.csv"), self.stamp),
            write_csv(cluster_gaps(ranks, distances, labels), self._path("gaps.csv"), self.stamp),
            write_geojson(collection, self._path("clusters.geojson"), self.stamp),
        ]


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return load_run_config(args.config, **overrides)


def _emit(paths: Sequence[Path]) -> None:
    for path in paths:
        print(path)


def cmd_synth(args: argparse.Namespace) -> List[Path]:
    """生成合成数据集，打印文件路径。"""
    if args.config is not None:
        config, output_dir = load_synth_config(args.config)
    else:
        config, output_dir = SynthConfig(), Path("synth")
    if args.output_dir is not None:
        output_dir = Path(args.output_dir)
    seed = int(args.seed) if args.seed is not None else None
    result = generate(config, output_dir, seed)
    for component, row in result.aggregates.iterrows():
        logger.info(
            "分量 %d: %s 户, 平均距离 %s 英里", component, row["n_families"], row["mean_distance"]
        )
    logger.info("预置荒漠普查区: %d 个", len(result.planted_deserts))
    return list(result.paths.values())


def cmd_select(args: argparse.Namespace) -> List[Path]:
    pipeline = Pipeline(_run_config(args))
    pipeline.setup()
    return pipeline.select()


def cmd_fit(args: argparse.Namespace) -> List[Path]:
    pipeline = Pipeline(_run_config(args))
    pipeline.setup()
    return pipeline.fit(args.model, args.k)


def cmd_profile(args: argparse.Namespace) -> List[Path]:
    pipeline = Pipeline(_run_config(args))
    pipeline.setup()
    return pipeline.profile(args.model_path)


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    """配置文件中的每个键都有同名的覆盖参数。"""
    parser.add_argument("--config", type=Path, help="扁平 key = value 配置文件")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, metavar=f.name.upper(), default=None)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=TOOL_NAME, description="基于高斯混合模型的食物可及性分析")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    synth = commands.add_parser("synth", help="生成合成数据集")
    synth.add_argument("--config", type=Path, help="合成配置文件")
    synth.add_argument("--output-dir", dest="output_dir")
    synth.add_argument("--seed")
    synth.set_defaults(handler=cmd_synth)

    select = commands.add_parser("select", help="BIC 网格选择")
    _add_run_options(select)
    select.set_defaults(handler=cmd_select)

    fit_parser = commands.add_parser("fit", help="拟合单个 (模型, K)")
    _add_run_options(fit_parser)
    fit_parser.add_argument("--model", required=True, help="协方差模型名，如 EEV")
    fit_parser.add_argument("--k", type=int, required=True, help="分量数 K")
    fit_parser.set_defaults(handler=cmd_fit)

    profile = commands.add_parser("profile", help="按已存模型生成聚类画像")
    _add_run_options(profile)
    profile.add_argument("--model-path", dest="model_path", type=Path, required=True)
    profile.set_defaults(handler=cmd_profile)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    程序入口。

    返回：
        退出码：0 成功，1 用法错误，2 数据错误，3 数值失败
    """
    args = build_parser().parse_args(argv)
    init_terminal(verbose=args.verbose)
    try:
        _emit(args.handler(args))
    except FoodAccessError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except ValueError as exc:
        # 无法解析的参数值
        logger.error("%s", exc)
        return ConfigError.exit_code
    finally:
        restore_terminal()
    return EXIT_OK
