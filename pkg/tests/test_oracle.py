import numpy as np
import pytest

from oocl.bigmat import attach_matrix
from oocl.oracle import (
    RdReport,
    SynthSpec,
    gen_synth,
    grid_oracle,
    kkt_audit,
    rd,
    reference_fit,
    screen_bench,
    validate_suite,
    write_bench,
)
from oocl.solver import FitConfig, fit

from conftest import synth


def test_reference_fit_null_and_kkt():
    for seed in range(5):
        m, y, _ = synth(40, 60, seed=seed)
        f = reference_fit(m, y)
        assert f.policy == "none" and f.tol == 1e-10
        assert f.coefs[:, [0]].nnz == 0
        assert kkt_audit(m, y, f).max() <= 1e-9


def test_rd_self_is_zero_and_sign_flips():
    m, y, _ = synth(40, 60, seed=1)
    a = fit(m, y, n_lambda=20)
    assert np.all(rd(a, a, m, y).values == 0.0)
    b = fit(m, y, n_lambda=20, tol=1e-3)
    ab = rd(a, b, m, y).values
    ba = rd(b, a, m, y).values
    differ = ab != 0
    assert differ.any()
    assert np.all(np.sign(ab[differ]) == -np.sign(ba[differ]))


def test_rd_rejects_mismatched_grids():
    m, y, _ = synth(30, 20, seed=2)
    with pytest.raises(ValueError):
        rd(fit(m, y, n_lambda=10), fit(m, y, n_lambda=11), m, y)
    with pytest.raises(ValueError):
        rd(fit(m, y), fit(m, y, alpha=0.5), m, y)


def test_rd_report_outputs(tmp_path):
    r = RdReport(np.array([3.0, 2.0, 1.0, 0.5]), np.array([0.0, 1e-8, -2e-8, np.nan]))
    s = r.summary()
    assert (s["min"], s["max"]) == (-2e-8, 1e-8)
    assert r.max_abs == 2e-8
    assert "Maximum" in r.text() and "3 values" in r.text()
    r.write_csv(tmp_path / "rd.csv")
    assert (tmp_path / "rd.csv").read_text().splitlines()[0] == "lambda,rd"


def test_grid_oracle_limits():
    with pytest.raises(ValueError):
        grid_oracle(np.ones((5, 4)), np.ones(5), 0.1)


def test_grid_oracle_three_features():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((25, 3))
    y = X @ [0.6, 0.0, -0.4] + 0.2 * rng.standard_normal(25)
    f = reference_fit(X, y, FitConfig(n_lambda=3, lambda_min_ratio=0.3))
    b, _ = grid_oracle(X, y, f.lambdas[2], lo=-1, hi=1, step=1e-2)
    assert np.abs(f.std_coef_column(2) - b).max() <= 1e-2


def test_kkt_audit_flags_perturbed_fit():
    m, y, _ = synth(50, 40, seed=4)
    f = fit(m, y)
    j = f.coefs[:, [-1]].tocoo().row[0]
    f.coefs = f.coefs.tolil()
    f.coefs[j, -1] *= 1.5
    f.coefs = f.coefs.tocsc()
    with pytest.raises(AssertionError):
        kkt_audit(m, y, f, tol=1e-6)


def test_gen_synth_reproducible_files(tmp_path):
    spec = SynthSpec(n=30, p=300, seed=5)
    m1, y1, b1 = gen_synth(spec, tmp_path / "a")
    m2, y2, b2 = gen_synth(spec, tmp_path / "b")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert np.array_equal(y1, y2) and np.array_equal(b1, b2)
    mem, y3, _ = gen_synth(spec)
    assert np.array_equal(np.asarray(mem.data), np.asarray(attach_matrix(tmp_path / "a.desc").data))
    assert np.array_equal(y1, y3)
    assert np.count_nonzero(b1) == 20 and np.abs(b1).max() <= 1


def test_gen_synth_pure_noise_and_binomial():
    _, y, b = gen_synth(SynthSpec(n=2000, p=5, n_true=0, seed=6))
    assert not b.any()
    assert abs(y.std() - 0.1) < 0.01
    _, yb, _ = gen_synth(SynthSpec(n=200, p=30, family="binomial", seed=7))
    assert set(np.unique(yb)) == {0.0, 1.0}
    with pytest.raises(ValueError):
        SynthSpec(n=5, p=3, n_true=4)


@pytest.mark.slow
def test_reference_support_recovers_truth():
    recall = []
    for seed in range(20):
        m, y, b = gen_synth(SynthSpec(n=1000, p=5000, seed=seed))
        f = reference_fit(m, y)
        found = np.flatnonzero(f.coef_column(-1))
        truth = np.flatnonzero(b)
        recall.append(np.isin(truth, found).mean())
    assert np.median(recall) >= 0.8


def test_screen_bench_scan_counts(tmp_path):
    m, y, _ = synth(60, 300, seed=8)
    rows = screen_bench(m, y, ("none", "ssr", "hybrid"), n_lambda=30)
    by = {r.policy: r for r in rows}
    assert np.all(by["none"].cols_scanned[1:] == 300)
    assert np.all(by["hybrid"].cols_scanned <= by["ssr"].cols_scanned)
    scans, summary = write_bench(rows, tmp_path, label="t")
    assert scans.read_text().splitlines()[0].startswith("lambda_ratio,cols_scanned_none")
    assert "speedup" in summary.read_text()


def test_validate_suite_small():
    report = validate_suite(20, 30, range(3))
    assert len(report.values) == 300
    assert report.max_abs <= 1e-6
