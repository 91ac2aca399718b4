import math
from dataclasses import FrozenInstanceError, replace

import numpy as np
import pytest
from scipy.stats import multivariate_normal
from sklearn.metrics import adjusted_rand_score

from src.errors import ConfigError, DataError
from src.mixture import (
    MULTIVARIATE,
    EmptyComponentError,
    FitConfig,
    InitMethod,
    MixtureModel,
    Parameterization,
    _center_log_density,
    _one_hot,
    _reseed,
    collapse_for_dimension,
    covariance_ridge,
    e_step,
    fit,
    init_kmeanspp,
    init_quantiles,
    init_random,
    log_density,
    m_step,
    model_from_dict,
    model_to_dict,
    n_free_params,
    predict,
    restart_plan,
)

TABLE1_MEANS = [0.42, 1.45, 4.63, 19.47]


def _model(weights, means, covariances, parameterization="VVV"):
    return MixtureModel(
        np.asarray(weights, dtype=float),
        np.asarray(means, dtype=float),
        np.asarray(covariances, dtype=float),
        Parameterization(parameterization),
    )


def _random_model(rng, K, d):
    weights = rng.dirichlet(np.ones(K))
    means = rng.normal(0.0, 2.0, (K, d))
    covariances = []
    for _ in range(K):
        a = rng.normal(size=(d, d))
        covariances.append(a @ a.T + 0.5 * np.eye(d))
    name = "V" if d == 1 else "VVV"
    return _model(weights, means, covariances, name)


def _mixture_sample(rng, n, means, sds, weights=None):
    K = len(means)
    weights = np.full(K, 1.0 / K) if weights is None else np.asarray(weights)
    labels = rng.choice(K, size=n, p=weights)
    values = rng.normal(np.asarray(means)[labels], np.asarray(sds)[labels])
    return values[:, None], labels


def _rotation(angle):
    return np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])


def _eev_sample(rng, n, K=3, eigenvalues=(4.0, 1.0)):
    labels = rng.integers(K, size=n)
    centers = np.array([[0.0, 0.0], [12.0, 0.0], [0.0, 12.0], [12.0, 12.0]])[:K]
    data = np.empty((n, 2))
    for k in range(K):
        rotation = _rotation(rng.uniform(0.0, math.pi))
        cov = rotation @ np.diag(eigenvalues) @ rotation.T
        members = labels == k
        data[members] = rng.multivariate_normal(centers[k], cov, size=members.sum())
    return data, labels


def _expected_complete_loglik(data, responsibilities, weights, means, covariances):
    total = 0.0
    for k in range(len(weights)):
        logpdf = multivariate_normal(means[k], covariances[k]).logpdf(data)
        total += float(responsibilities[:, k] @ (math.log(weights[k]) + logpdf))
    return total


# ---- 自由参数个数 ----

def _hand_count(name, K, d):
    covariance = {
        "EII": 1,
        "VII": K,
        "EEI": d,
        "VVI": K * d,
        "EEE": d * (d + 1) // 2,
        "EEV": 1 + (d - 1) + K * d * (d - 1) // 2,
        "VVV": K * d * (d + 1) // 2,
    }[name]
    return (K - 1) + K * d + covariance


def test_free_parameter_table():
    for parameterization in MULTIVARIATE:
        for K in range(1, 7):
            for d in range(2, 5):
                assert n_free_params(parameterization, K, d) == _hand_count(parameterization.value, K, d)
    for K in range(1, 7):
        assert n_free_params(Parameterization.E, K, 1) == (K - 1) + K + 1
        assert n_free_params(Parameterization.V, K, 1) == (K - 1) + K + K


@pytest.mark.parametrize("name, expected", [("EII", 12), ("EEV", 17), ("VVV", 23)])
def test_free_parameter_examples(name, expected):
    assert n_free_params(Parameterization(name), 4, 2) == expected


def test_illegal_dimension_combinations():
    with pytest.raises(ConfigError):
        n_free_params(Parameterization.EEV, 2, 1)
    with pytest.raises(ConfigError):
        n_free_params(Parameterization.E, 2, 3)
    with pytest.raises(ConfigError):
        Parameterization.parse("XYZ")


def test_collapse_to_univariate():
    assert collapse_for_dimension(Parameterization.EEV, 1) is Parameterization.E
    assert collapse_for_dimension(Parameterization.VVI, 1) is Parameterization.V
    assert collapse_for_dimension(Parameterization.EEV, 2) is Parameterization.EEV


# ---- 密度与 E 步 ----

def test_standard_normal_mode():
    model = _model([1.0], [[0.0]], [[[1.0]]], "E")
    assert log_density(model, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert log_density(model, [0.0]) == pytest.approx(-0.9189385, abs=1e-7)


def test_identical_components_collapse():
    one = _model([1.0], [[1.0, 2.0]], [[[2.0, 0.3], [0.3, 1.0]]])
    two = _model([0.5, 0.5], [[1.0, 2.0]] * 2, [[[2.0, 0.3], [0.3, 1.0]]] * 2)
    for x in ([0.0, 0.0], [3.0, -1.0], [1.0, 2.0]):
        assert log_density(two, x) == pytest.approx(log_density(one, x), rel=1e-12)


def test_log_density_matches_direct_summation():
    rng = np.random.Generator(np.random.PCG64(21))
    for _ in range(50):
        K, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        model = _random_model(rng, K, d)
        x = rng.normal(0.0, 2.0, d)
        direct = sum(
            np.longdouble(model.weights[k])
            * np.longdouble(multivariate_normal(model.means[k], model.covariances[k]).pdf(x))
            for k in range(K)
        )
        assert log_density(model, x) == pytest.approx(float(np.log(direct)), rel=1e-10)


def test_log_density_dimension_mismatch():
    model = _model([1.0], [[0.0, 0.0]], [np.eye(2)])
    with pytest.raises(DataError):
        log_density(model, [1.0, 2.0, 3.0])


def test_single_component_responsibilities():
    rng = np.random.Generator(np.random.PCG64(1))
    model = _model([1.0], [[0.0, 0.0]], [np.eye(2)])
    resp, loglik = e_step(model, rng.normal(size=(20, 2)))
    assert np.all(resp == 1.0)
    assert math.isfinite(loglik)


def test_rows_sum_to_one_with_tiny_variances():
    model = _model([0.5, 0.5], [[0.0], [1.0]], [[[1e-6]], [[1e-6]]], "V")
    resp, loglik = e_step(model, [[0.5], [0.25], [0.9]])
    np.testing.assert_allclose(resp[0], [0.5, 0.5], atol=1e-12)
    assert np.all(np.abs(resp.sum(axis=1) - 1.0) <= 1e-12)
    assert math.isfinite(loglik)


def test_midpoint_is_split_evenly():
    model = _model([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], [np.eye(2), np.eye(2)], "EEE")
    resp, _ = e_step(model, [[0.0, 5.0]])
    np.testing.assert_allclose(resp, [[0.5, 0.5]], atol=1e-15)


def test_five_point_posterior_by_hand():
    data = np.array([-2.0, -0.5, 0.0, 0.7, 3.0])
    model = _model([0.3, 0.7], [[-1.0], [1.5]], [[[1.0]], [[2.0]]], "V")
    resp, loglik = e_step(model, data)
    for i, x in enumerate(data):
        a = 0.3 * math.exp(-0.5 * (x + 1.0) ** 2) / math.sqrt(2 * math.pi)
        b = 0.7 * math.exp(-0.5 * (x - 1.5) ** 2 / 2.0) / math.sqrt(2 * math.pi * 2.0)
        assert resp[i, 0] == pytest.approx(a / (a + b), abs=1e-12)
        assert resp[i, 1] == pytest.approx(b / (a + b), abs=1e-12)
    assert loglik == pytest.approx(sum(log_density(model, [x]) for x in data), rel=1e-12)


def test_posterior_matches_brute_force_on_small_instances():
    rng = np.random.Generator(np.random.PCG64(44))
    for _ in range(200):
        n, K, d = int(rng.integers(1, 9)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        model = _random_model(rng, K, d)
        data = rng.normal(0.0, 2.0, (n, d))
        resp, _ = e_step(model, data)
        joint = np.array(
            [
                [
                    np.longdouble(model.weights[k])
                    * np.longdouble(multivariate_normal(model.means[k], model.covariances[k]).pdf(x))
                    for k in range(K)
                ]
                for x in data
            ]
        )
        oracle = (joint / joint.sum(axis=1, keepdims=True)).astype(float)
        np.testing.assert_allclose(resp, oracle, atol=1e-10)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)


def test_label_permutation_leaves_density_unchanged():
    rng = np.random.Generator(np.random.PCG64(12))
    model = _random_model(rng, 3, 2)
    permuted = model.permuted([2, 0, 1])
    for x in rng.normal(size=(20, 2)):
        assert log_density(permuted, x) == pytest.approx(log_density(model, x), rel=1e-12)


# ---- M 步 ----

def test_single_component_m_step_is_sample_moments():
    rng = np.random.Generator(np.random.PCG64(3))
    data = rng.normal(size=(100, 3))
    ridge = covariance_ridge(data, 1e-6)
    for parameterization in (Parameterization.VVV, Parameterization.EEE, Parameterization.EEV):
        weights, means, covariances = m_step(data, np.ones((100, 1)), parameterization, ridge)
        np.testing.assert_allclose(weights, [1.0])
        np.testing.assert_allclose(means[0], data.mean(axis=0), atol=1e-12)
        expected = np.cov(data.T, bias=True) + ridge * np.eye(3)
        np.testing.assert_allclose(covariances[0], expected, atol=1e-10)


def test_uniform_responsibilities_give_global_mean():
    rng = np.random.Generator(np.random.PCG64(4))
    data = rng.normal(size=(60, 2))
    for parameterization in MULTIVARIATE:
        _, means, _ = m_step(data, np.full((60, 3), 1.0 / 3.0), parameterization)
        np.testing.assert_allclose(means, np.tile(data.mean(axis=0), (3, 1)), atol=1e-12)


@pytest.mark.parametrize("parameterization", list(Parameterization))
def test_m_step_beats_random_constrained_parameters(parameterization):
    rng = np.random.Generator(np.random.PCG64(5))
    d = 1 if parameterization.is_univariate else 2
    data = rng.normal(size=(20, d)) * [3.0, 1.0][:d]
    responsibilities = rng.dirichlet(np.ones(2), size=20)
    best = _expected_complete_loglik(data, responsibilities, *m_step(data, responsibilities, parameterization))
    for _ in range(1000):
        # 用扰动后的责任矩阵走同一 M 步，得到满足同一约束的参数
        other = np.clip(responsibilities + rng.normal(0.0, 0.2, responsibilities.shape), 1e-3, None)
        other /= other.sum(axis=1, keepdims=True)
        weights, means, covariances = m_step(data, other, parameterization)
        means = means + rng.normal(0.0, 0.05, means.shape)
        value = _expected_complete_loglik(data, responsibilities, weights, means, covariances)
        assert value <= best + 1e-9


def test_shared_structures_and_floor():
    rng = np.random.Generator(np.random.PCG64(6))
    data = rng.normal(size=(200, 3)) * [1.0, 4.0, 0.5]
    responsibilities = rng.dirichlet(np.ones(3), size=200)
    ridge = covariance_ridge(data, 1e-6)
    for parameterization in MULTIVARIATE:
        _, _, covariances = m_step(data, responsibilities, parameterization, ridge)
        if parameterization in (Parameterization.EII, Parameterization.EEI, Parameterization.EEE):
            assert np.array_equal(covariances[0], covariances[1])
            assert np.array_equal(covariances[0], covariances[2])
        if parameterization is Parameterization.EEV:
            values = np.sort(np.linalg.eigvalsh(covariances), axis=1)
            np.testing.assert_allclose(values, np.tile(values[0], (3, 1)), rtol=1e-8)
        eigenvalues = np.linalg.eigvalsh(covariances)
        assert np.all(eigenvalues >= ridge * (1 - 1e-9))


def test_empty_component_detected():
    data = np.arange(10.0)[:, None]
    responsibilities = np.zeros((10, 2))
    responsibilities[:, 0] = 1.0
    with pytest.raises(EmptyComponentError) as info:
        m_step(data, responsibilities, Parameterization.V)
    assert info.value.components == [1]


# ---- 拟合 ----

def test_single_gaussian_mean():
    rng = np.random.Generator(np.random.PCG64(7))
    data = rng.normal([2.0, -1.0], [1.0, 3.0], size=(500, 2))
    result = fit(data, 1, "VVV", FitConfig(seed=1))
    standard_error = data.std(axis=0) / math.sqrt(500)
    assert np.all(np.abs(result.model.means[0] - data.mean(axis=0)) <= 3 * standard_error)
    assert result.converged


def test_four_component_recovery():
    rng = np.random.Generator(np.random.PCG64(8))
    data, labels = _mixture_sample(rng, 4000, TABLE1_MEANS, [0.05, 0.1, 0.3, 1.0])
    result = fit(data, 4, "V", FitConfig(seed=3))
    fitted = np.sort(result.model.means[:, 0])
    np.testing.assert_allclose(fitted, TABLE1_MEANS, rtol=0.1)
    assert adjusted_rand_score(labels, result.hard_assignments) >= 0.95


def test_eev_fit_shares_eigenvalues():
    rng = np.random.Generator(np.random.PCG64(9))
    data, _ = _eev_sample(rng, 1500)
    result = fit(data, 3, Parameterization.EEV, FitConfig(seed=5, n_restarts=3))
    values = np.sort(np.linalg.eigvalsh(result.model.covariances), axis=1)
    np.testing.assert_allclose(values, np.tile(values[0], (3, 1)), rtol=1e-6)


def test_fit_invariants():
    rng = np.random.Generator(np.random.PCG64(10))
    data, _ = _eev_sample(rng, 600)
    for parameterization in MULTIVARIATE:
        result = fit(data, 3, parameterization, FitConfig(seed=2, n_restarts=2))
        assert np.all(np.diff(result.loglik_trace) >= -1e-7)
        np.testing.assert_allclose(result.responsibilities.sum(axis=1), 1.0, atol=1e-12)
        assert abs(result.model.weights.sum() - 1.0) <= 1e-12
        assert np.all(result.model.weights >= 0)
        np.testing.assert_array_equal(result.hard_assignments, result.responsibilities.argmax(axis=1))
        assert result.iterations <= FitConfig().max_iter


def test_fit_is_deterministic():
    rng = np.random.Generator(np.random.PCG64(11))
    data, _ = _eev_sample(rng, 400)
    a = fit(data, 3, "EEV", FitConfig(seed=99, n_restarts=2))
    b = fit(data, 3, "EEV", FitConfig(seed=99, n_restarts=2))
    np.testing.assert_array_equal(a.loglik_trace, b.loglik_trace)
    np.testing.assert_array_equal(a.model.covariances, b.model.covariances)
    np.testing.assert_array_equal(a.hard_assignments, b.hard_assignments)


def test_fit_errors():
    with pytest.raises(DataError):
        fit(np.arange(3.0), 3, "V")
    with pytest.raises(DataError):
        fit(np.ones((10, 2)), 2, "EEE")
    with pytest.raises(ConfigError):
        fit(np.arange(10.0), 2, "EEV")
    with pytest.raises(ConfigError):
        FitConfig(tol=0.0)
    with pytest.raises(ConfigError):
        FitConfig(n_restarts=0)


def test_max_iter_caps_iterations():
    rng = np.random.Generator(np.random.PCG64(12))
    data, _ = _mixture_sample(rng, 500, TABLE1_MEANS, [0.15, 0.4, 1.2, 5.0])
    result = fit(data, 4, "V", FitConfig(max_iter=2, n_restarts=1, tol=1e-15))
    assert result.iterations <= 2
    assert not result.converged


@pytest.mark.slow
def test_monotonicity_matrix():
    for d in (1, 2, 3):
        for seed in range(5):
            rng = np.random.Generator(np.random.PCG64(1000 + seed))
            centers = rng.normal(0.0, 4.0, (3, d))
            labels = rng.integers(3, size=2000)
            data = centers[labels] + rng.normal(size=(2000, d))
            for requested in MULTIVARIATE:
                parameterization = collapse_for_dimension(requested, d)
                result = fit(data, 3, parameterization, FitConfig(seed=seed, n_restarts=1))
                assert np.all(np.diff(result.loglik_trace) >= -1e-7), (d, seed, requested)


# ---- 预测 ----

def test_predict_reproduces_training_assignments():
    rng = np.random.Generator(np.random.PCG64(13))
    data, _ = _eev_sample(rng, 500)
    result = fit(data, 3, "VVV", FitConfig(seed=1, n_restarts=1))
    labels, resp = predict(result.model, data)
    np.testing.assert_array_equal(labels, result.hard_assignments)
    np.testing.assert_allclose(resp, result.responsibilities, atol=1e-12)


def test_predict_point_at_dominant_mean():
    model = _model([0.1, 0.8, 0.1], [[0.0], [5.0], [10.0]], [[[1.0]]] * 3, "E")
    labels, _ = predict(model, [[5.0]])
    assert labels.tolist() == [1]


def test_predict_tie_goes_to_lowest_index():
    model = _model([0.5, 0.5], [[0.0], [0.0]], [[[1.0]]] * 2, "E")
    labels, _ = predict(model, [[0.3], [-2.0]])
    assert labels.tolist() == [0, 0]


def test_predict_matches_log_responsibility_argmax():
    rng = np.random.Generator(np.random.PCG64(14))
    model = _random_model(rng, 3, 2)
    points = rng.normal(0.0, 3.0, (300, 2))
    labels, _ = predict(model, points)
    scores = np.column_stack(
        [
            math.log(model.weights[k]) + multivariate_normal(model.means[k], model.covariances[k]).logpdf(points)
            for k in range(3)
        ]
    )
    np.testing.assert_array_equal(labels, scores.argmax(axis=1))


def test_predict_dimension_mismatch_names_both():
    model = _model([1.0], [[0.0, 0.0]], [np.eye(2)])
    with pytest.raises(DataError, match="2.*3"):
        predict(model, np.zeros((4, 3)))


# ---- k-means++ ----

def test_kmeanspp_every_point_a_center():
    data = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [5.0, 5.0]])
    centers, labels = init_kmeanspp(data, 4, seed=1)
    assert sorted(map(tuple, centers)) == sorted(map(tuple, data))
    assert len(set(labels.tolist())) == 4


def test_kmeanspp_deterministic():
    rng = np.random.Generator(np.random.PCG64(15))
    data = rng.normal(size=(200, 2))
    a = init_kmeanspp(data, 5, seed=123)
    b = init_kmeanspp(data, 5, seed=123)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_kmeanspp_one_center_per_blob():
    rng = np.random.Generator(np.random.PCG64(16))
    blobs = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]])
    data = np.concatenate([blob + rng.normal(0.0, 0.5, (100, 2)) for blob in blobs])
    hits = 0
    for seed in range(100):
        centers, _ = init_kmeanspp(data, 4, seed)
        owner = np.linalg.norm(centers[:, None, :] - blobs[None, :, :], axis=2).argmin(axis=1)
        hits += len(set(owner.tolist())) == 4
    assert hits >= 95


def test_kmeanspp_too_few_distinct_points():
    with pytest.raises(DataError):
        init_kmeanspp(np.array([[1.0], [1.0], [2.0]]), 3, seed=0)


# ---- 其他起点与重启 ----

def test_quantile_blocks_follow_sorted_order():
    rng = np.random.Generator(np.random.PCG64(19))
    data = rng.permutation(np.arange(12.0))[:, None]
    centers, labels = init_quantiles(data, 3)
    np.testing.assert_array_equal(labels, (data[:, 0] // 4).astype(int))
    np.testing.assert_allclose(centers[:, 0], [1.5, 5.5, 9.5])


def test_quantile_blocks_use_principal_axis():
    rng = np.random.Generator(np.random.PCG64(20))
    t = rng.uniform(-10.0, 10.0, 300)
    data = np.column_stack([t, -2.0 * t])
    _, labels = init_quantiles(data, 2)
    low, high = data[labels == 0, 0], data[labels == 1, 0]
    assert len(low) == len(high) == 150
    assert low.max() < high.min() or high.max() < low.min()


def test_random_init_centers_are_distinct_data_points():
    rng = np.random.Generator(np.random.PCG64(21))
    data = np.round(rng.normal(size=(100, 2)), 1)
    centers, labels = init_random(data, 5, seed=8)
    assert len({tuple(c) for c in centers}) == 5
    assert all((data == c).all(axis=1).any() for c in centers)
    assert len(set(labels.tolist())) == 5
    np.testing.assert_array_equal(init_random(data, 5, seed=8)[1], labels)
    with pytest.raises(DataError):
        init_random(np.array([[1.0], [1.0]]), 2, seed=0)


def test_restart_plan_mixes_methods():
    assert restart_plan(1) == [InitMethod.KMEANSPP]
    assert restart_plan(5) == [
        InitMethod.KMEANSPP,
        InitMethod.QUANTILE,
        InitMethod.RANDOM,
        InitMethod.KMEANSPP,
        InitMethod.RANDOM,
    ]


def test_wide_scale_mixture_is_recovered():
    rng = np.random.Generator(np.random.PCG64(22))
    data, labels = _mixture_sample(rng, 20000, TABLE1_MEANS, [0.15, 0.4, 1.2, 5.0])
    result = fit(data, 4, "V", FitConfig(seed=0, n_restarts=2))
    np.testing.assert_allclose(np.sort(result.model.means[:, 0]), TABLE1_MEANS, rtol=0.1)
    assert adjusted_rand_score(labels, result.hard_assignments) >= 0.9
    assert result.converged


def test_restarts_keep_highest_loglik():
    rng = np.random.Generator(np.random.PCG64(23))
    data, _ = _mixture_sample(rng, 3000, TABLE1_MEANS, [0.15, 0.4, 1.2, 5.0])
    single = fit(data, 4, "V", FitConfig(seed=4, n_restarts=1))
    complete = fit(data, 4, "V", FitConfig(seed=4, n_restarts=3, screen_iter=500))
    assert single.init_method == "kmeans++"
    assert complete.loglik >= single.loglik

    screened = fit(data, 4, "V", FitConfig(seed=4, n_restarts=3, screen_iter=5))
    assert screened.init_method in {method.value for method in InitMethod}
    assert np.all(np.diff(screened.loglik_trace) >= -1e-7)
    with pytest.raises(ConfigError):
        FitConfig(screen_iter=0)


def test_reseed_before_first_e_step_anchors_far_point():
    data = np.concatenate([np.linspace(0.0, 1.0, 20), [50.0]])[:, None]
    labels = np.zeros(21, dtype=int)
    centers = np.array([[0.5], [-3.0]])
    density = _center_log_density(data, centers, labels)
    assert density.argmin() == 20
    responsibilities = _reseed(data, _one_hot(labels, 2), density, [1])
    assert np.flatnonzero(responsibilities[:, 1]).tolist() == [19, 20]
    np.testing.assert_array_equal(responsibilities.sum(axis=1), 1.0)


# ---- 序列化 ----

def test_model_document_round_trip():
    rng = np.random.Generator(np.random.PCG64(17))
    model = _random_model(rng, 3, 2)
    document = model_to_dict(model, FitConfig(seed=4), seed=4)
    assert document["format_version"] == 1
    assert len(document["covariances"][0]) == 4
    restored = model_from_dict(document)
    np.testing.assert_array_equal(restored.covariances, model.covariances)
    assert restored.parameterization is model.parameterization


def test_model_document_rejects_unknown_version():
    rng = np.random.Generator(np.random.PCG64(18))
    document = model_to_dict(_random_model(rng, 1, 1))
    with pytest.raises(DataError):
        model_from_dict({**document, "format_version": 99})


def test_fit_config_is_frozen():
    config = FitConfig()
    assert replace(config, seed=7).seed == 7
    with pytest.raises(FrozenInstanceError):
        config.seed = 3
