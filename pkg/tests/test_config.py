from pathlib import Path

import pytest

from src.config import ALL_PARAMETERIZATIONS, RunConfig, load_run_config, read_flat_config, split_list
from src.errors import EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE, ConfigError, DataError, NumericalError


def test_split_list():
    assert split_list(" EII, VVV ,,EEV ") == ["EII", "VVV", "EEV"]
    assert split_list("") == []


def test_read_flat_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# 注释\nk_max = 6   # 行尾注释\nmodels = E, V\n", encoding="utf-8")
    assert read_flat_config(path) == {"k_max": "6", "models": "E, V"}


def test_read_flat_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_flat_config(tmp_path / "missing.cfg")
    path = tmp_path / "bad.cfg"
    path.write_text("just a line without separator\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_flat_config(path)


def test_defaults():
    config = load_run_config()
    assert config.models == ALL_PARAMETERIZATIONS
    assert config.k_range == list(range(1, 10))
    assert config.threshold_miles == 1.0
    assert config.feature_spec == ["distance_miles"]


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("k_min = 2\nk_max = 5\nseed = 3\nperson_weighted = yes\nservices = a.csv\n", encoding="utf-8")
    config = load_run_config(path, k_max="7", seed=None, threads="4")
    assert config.k_range == [2, 3, 4, 5, 6, 7]
    assert config.seed == 3
    assert config.threads == 4
    assert config.person_weighted is True
    assert config.services == Path("a.csv")


@pytest.mark.parametrize(
    "overrides",
    [
        {"k_min": "0"},
        {"k_min": "5", "k_max": "3"},
        {"scaling": "minmax"},
        {"tol": "0"},
        {"screen_iter": "0"},
        {"threshold_miles": "-1"},
        {"feature_spec": "distance_miles,income"},
        {"seed": "abc"},
        {"person_weighted": "maybe"},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        load_run_config(**overrides)


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("colour = blue\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="colour"):
        load_run_config(path)


def test_config_hash_ignores_threads():
    a = load_run_config(threads="1")
    b = load_run_config(threads="8")
    c = load_run_config(seed="1")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 16


def test_table_paths(tmp_path):
    with pytest.raises(ConfigError, match="services"):
        RunConfig().table_paths()
    config = RunConfig(services=tmp_path / "s.csv", agencies=tmp_path / "a.csv", tract_income=tmp_path / "t.csv")
    with pytest.raises(ConfigError, match="不存在"):
        config.table_paths()


def test_error_exit_codes():
    assert ConfigError.exit_code == EXIT_USAGE == 1
    assert DataError.exit_code == EXIT_DATA == 2
    assert NumericalError.exit_code == EXIT_NUMERICAL == 3
    assert isinstance(DataError("x"), ValueError)
