import math

import numpy as np
import pytest

from oocl.bigmat import FileMatrix, write_matrix, attach_matrix
from oocl.errors import ConvergenceError, DegenerateInputError
from oocl.kernels import compute_column_stats
from oocl.oracle import grid_oracle, gaussian_objective_std, kkt_audit, rd, reference_fit
from oocl.solver import (
    FitConfig,
    PathFit,
    cd_update,
    fit,
    fit_binomial,
    lambda_max,
    lambda_path,
    objective,
    predict,
    soft_threshold,
)

from conftest import standardize, synth


def test_lambda_path_examples():
    assert np.allclose(lambda_path(2.0, FitConfig(n_lambda=3)), [2.0, 1.1, 0.2], atol=1e-15)
    assert np.allclose(lambda_path(1.0, FitConfig(n_lambda=5)), [1, 0.775, 0.55, 0.325, 0.1])
    assert lambda_path(3.0, FitConfig(n_lambda=1)).tolist() == [3.0]
    logp = lambda_path(1.0, FitConfig(n_lambda=3, lambda_spacing="log", lambda_min_ratio=0.01))
    assert np.allclose(logp, [1.0, 0.1, 0.01])
    assert lambda_path(7.3, FitConfig())[0] == 7.3


def test_soft_threshold_and_cd_update():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert cd_update(3.0, 1.0, 1.0) == 2.0
    assert cd_update(-0.5, 1.0, 1.0) == 0.0
    assert cd_update(2.0, 1.0, 0.5) == pytest.approx(1.0)


def test_lambda_max_examples():
    x = np.array([1.0, -1.0, 2.0, -2.0])
    xs = (x - x.mean()) / x.std()
    v = FileMatrix.from_array(x[:, None]).full_view()
    assert lambda_max(v, xs, compute_column_stats(v)) == pytest.approx(1.0, rel=1e-14)

    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    y = np.array([1.0, 1.0, 2.0, 2.0])
    v = FileMatrix.from_array(X).full_view()
    with pytest.raises(DegenerateInputError):
        lambda_max(v, y, compute_column_stats(v))
    with pytest.raises(DegenerateInputError):
        lambda_max(v, np.ones(4), compute_column_stats(v))

    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 8)) * 3 + 1
    y = rng.standard_normal(30)
    v = FileMatrix.from_array(X).full_view()
    naive = np.abs(standardize(X).T @ (y - y.mean())).max() / 30
    assert lambda_max(v, y, compute_column_stats(v)) == pytest.approx(naive, rel=1e-12)


def test_single_feature_closed_form():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(40) * 2 + 3
    y = 1.5 * x + rng.standard_normal(40)
    z = standardize(x[:, None])[:, 0] @ (y - y.mean()) / 40
    for f in (fit(x[:, None], y), reference_fit(x[:, None], y)):
        for k, lam in enumerate(f.lambdas):
            expected = soft_threshold(z, lam)
            assert abs(f.std_coef_column(k)[0] - expected) <= 1e-10


def test_two_features_against_grid_search():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 2))
    y = X @ [0.8, -0.5] + 0.3 * rng.standard_normal(30)
    f = reference_fit(X, y, FitConfig(n_lambda=4, lambda_min_ratio=0.2))
    for k in (1, 3):
        lam = f.lambdas[k]
        b_grid, q_grid = grid_oracle(X, y, lam, step=2e-3)
        q = gaussian_objective_std(X, y, f.std_coef_column(k), lam)
        assert q <= q_grid + 1e-12
        assert np.abs(f.std_coef_column(k) - b_grid).max() <= 2e-3


@pytest.mark.parametrize("family,n,p,bound", [("gaussian", 20, 5, 1e-6), ("binomial", 30, 5, 1e-5)])
def test_rd_against_reference(family, n, p, bound):
    for seed in range(5):
        m, y, _ = synth(n, p, seed=seed, family=family)
        cfg = FitConfig(family=family)
        r = rd(fit(m, y, cfg), reference_fit(m, y, cfg), m, y)
        assert r.max_abs <= bound


@pytest.mark.parametrize("family", ["gaussian", "binomial"])
def test_null_anchor(family):
    m, y, _ = synth(50, 30, seed=3, family=family)
    f = fit(m, y, family=family)
    assert f.coefs[:, [0]].nnz == 0
    ybar = y.mean()
    expected = ybar if family == "gaussian" else math.log(ybar / (1 - ybar))
    assert f.intercepts[0] == expected


def test_balanced_response_independent_of_x():
    # every row appears once per class, so the null model is optimal at every lambda
    rng = np.random.default_rng(4)
    half = rng.standard_normal((20, 4))
    X = np.vstack([half, half])
    y = np.r_[np.zeros(20), np.ones(20)]
    try:
        f = fit_binomial(X, y)
    except DegenerateInputError:
        return  # lambda_max rounded to exactly 0
    assert np.abs(f.coefs.toarray()).max() <= 10 * f.tol
    assert np.abs(f.intercepts).max() <= 10 * f.tol


@pytest.mark.parametrize("family,alpha", [("gaussian", 1.0), ("gaussian", 0.5), ("binomial", 1.0),
                                          ("binomial", 0.3)])
def test_kkt_certificate(family, alpha):
    m, y, _ = synth(60, 80, seed=5, family=family)
    f = fit(m, y, FitConfig(family=family, alpha=alpha))
    worst = kkt_audit(m, y, f)
    assert worst.max() <= 2 * f.tol


def test_warm_start_continuity():
    m, y, _ = synth(50, 100, seed=6)
    path = fit(m, y)
    for k in (10, 50, 99):
        cold = fit(m, y, lambdas=(path.lambdas[k],))
        qa = objective(path, m, y, k)
        qb = objective(cold, m, y, 0)
        assert abs(qa - qb) / qb <= 1e-6


def test_unstandardization_round_trip():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((40, 10)) * rng.uniform(0.5, 5, 10) + rng.normal(0, 4, 10)
    y = X[:, :3] @ [1.0, -2.0, 0.5] + rng.standard_normal(40)
    Xs = standardize(X)
    a = fit(X, y, tol=1e-12)
    b = fit(Xs, y, tol=1e-12)
    assert np.allclose(b.center, 0, atol=1e-12) and np.allclose(b.scale, 1, atol=1e-12)
    for k in range(len(a.lambdas)):
        assert np.abs(a.std_coef_column(k) - b.coef_column(k)).max() <= 1e-9
        assert np.abs(predict(a, X, a.lambdas[k]) - predict(b, Xs, a.lambdas[k])).max() <= 1e-9


def test_debug_mode_checks_monotone_objective():
    m, y, _ = synth(40, 30, seed=8)
    a = fit(m, y, debug=True)
    b = fit(m, y)
    assert np.abs(a.coefs.toarray() - b.coefs.toarray()).max() <= 1e-6


@pytest.mark.parametrize("family", ["gaussian", "binomial"])
def test_max_iter_exceeded(family):
    m, y, _ = synth(40, 30, seed=9, family=family)
    with pytest.raises(ConvergenceError) as info:
        fit(m, y, family=family, max_iter=1)
    assert info.value.lam is not None


def test_constant_columns_stay_zero():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((30, 6))
    X[:, 2] = 4.0
    y = X[:, 2] + X[:, 0] + 0.1 * rng.standard_normal(30)
    f = fit(X, y)
    assert f.coefs[2, :].nnz == 0
    assert f.coefs[0, -1] != 0


def test_binomial_input_checks():
    X = np.random.default_rng(0).standard_normal((10, 3))
    with pytest.raises(ValueError):
        fit_binomial(X, np.arange(10.0))
    with pytest.raises(DegenerateInputError):
        fit_binomial(X, np.ones(10))


def test_config_validation_and_policy():
    for bad in ({"family": "poisson"}, {"alpha": 0.0}, {"alpha": 1.5}, {"n_lambda": 0},
                {"lambda_min_ratio": 1.0}, {"lambda_spacing": "cubic"}, {"screen_policy": "x"},
                {"tol": 0.0}, {"lambdas": (1.0, 2.0)}):
        with pytest.raises(ValueError):
            FitConfig(**bad)
    assert FitConfig().policy == "hybrid"
    assert FitConfig(family="binomial").policy == "ssr"
    assert FitConfig(alpha=0.5, screen_policy="hybrid").policy == "ssr"
    assert FitConfig(screen_policy="none").policy == "none"


def test_response_length_mismatch():
    with pytest.raises(ValueError):
        fit(np.ones((5, 2)), np.ones(4))


def test_workers_give_identical_paths():
    m, y, _ = synth(80, 1200, seed=11)
    a = fit(m, y, workers=1)
    b = fit(m, y, workers=4)
    assert np.array_equal(a.coefs.toarray(), b.coefs.toarray())
    assert np.array_equal(a.intercepts, b.intercepts)


def test_predict_kinds():
    m, y, _ = synth(50, 20, seed=12)
    f = fit(m, y)
    lmax = f.lambdas[0]
    assert np.all(predict(f, m, lmax) == f.intercepts[0])
    assert f.intercepts[0] == y.mean()
    assert predict(f, lam=lmax, kind="nvars") == 0
    assert predict(f, lam=lmax, kind="vars") == {}
    nv = predict(f, kind="nvars")
    assert nv.shape == (len(f.lambdas),) and nv[-1] > 0
    coef = predict(f, lam=f.lambdas[-1], kind="coefficients")
    assert coef[0] == f.intercepts[-1] and np.array_equal(coef[1:], f.coef_column(-1))
    X = np.asarray(m.data)
    assert np.allclose(predict(f, m, f.lambdas[-1]), f.intercepts[-1] + X @ f.coef_column(-1))
    with pytest.raises(ValueError):
        predict(f, m, 10 * lmax)
    with pytest.raises(ValueError):
        predict(f, m, lmax, kind="class")

    yb = np.r_[np.zeros(25), np.ones(25)]
    g = fit(m, yb, family="binomial")
    assert np.allclose(predict(g, m, g.lambdas[0], kind="response"), 0.5)
    cls = predict(g, m, g.lambdas[-1], kind="class")
    assert cls.shape == (50,) and set(np.unique(cls)) <= {0, 1}


def test_nearest_and_exact_lambda_lookup():
    m, y, _ = synth(30, 10, seed=13)
    f = fit(m, y, n_lambda=5)
    assert f.lambda_index(f.lambdas[2] * (1 + 1e-3)) == 2
    with pytest.raises(ValueError):
        f.lambda_index(f.lambdas[2] * (1 + 1e-3), exact=True)


def test_save_load_round_trip(tmp_path):
    m, y, _ = synth(40, 25, seed=14)
    f = fit(m, y)
    f.save(tmp_path / "f")
    g = PathFit.load(tmp_path / "f")
    assert np.array_equal(f.coefs.toarray(), g.coefs.toarray())
    assert np.array_equal(f.intercepts, g.intercepts)
    assert np.array_equal(f.lambdas, g.lambdas)
    text = (tmp_path / "f.coef.csv").read_text().splitlines()
    assert text[0] == "lambda,col_index,col_name,coef"
    assert text[1].split(",")[1:3] == ["-1", "(Intercept)"]
    g.save(tmp_path / "g")
    assert (tmp_path / "g.coef.csv").read_bytes() == (tmp_path / "f.coef.csv").read_bytes()


def test_mapped_and_in_memory_fits_serialize_identically(tmp_path):
    m, y, _ = synth(60, 90, seed=15)
    write_matrix(np.asarray(m.data), tmp_path / "x")
    mapped = attach_matrix(tmp_path / "x.desc")
    fit(mapped, y).save(tmp_path / "a")
    fit(m, y).save(tmp_path / "b")
    assert (tmp_path / "a.coef.csv").read_bytes() == (tmp_path / "b.coef.csv").read_bytes()
