"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line with the measured quantity; the
lines are printed in the pytest terminal summary (and directly when this file
is run as a script). Tolerances are fixed here and are not tuned per run.
"""
import statistics
import time
import tracemalloc

import numpy as np
import pytest

from oocl.bigmat import FileMatrix, attach_matrix, make_view, write_matrix
from oocl.cv import cv_fit
from oocl.kernels import ResidualState, compute_column_stats, std_dot_xr, std_dot_xx, std_dot_xy
from oocl.kernels import prepare_screening
from oocl.oracle import SynthSpec, gen_synth, kkt_audit, rd, reference_fit, screen_bench
from oocl.screen import BedppCache, bedpp_filter, rejection_stats
from oocl.solver import FitConfig, fit

from conftest import ACCEPTANCE_LINES, standardize

pytestmark = pytest.mark.slow


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _gen(n, p, seed, family="gaussian", prefix=None):
    return gen_synth(SynthSpec(n=n, p=p, n_true=min(20, p), family=family, seed=seed), prefix)


def test_01_oracle_equivalence():
    t0 = time.perf_counter()
    g_worst = 0.0
    for seed in range(50):
        m, y, _ = _gen(50, 200, seed)
        cfg = FitConfig(n_lambda=100, lambda_min_ratio=0.1, tol=1e-7)
        g_worst = max(g_worst, rd(fit(m, y, cfg), reference_fit(m, y, cfg), m, y).max_abs)
    b_worst = 0.0
    for seed in range(20):
        m, y, _ = _gen(100, 150, 1000 + seed, "binomial")
        cfg = FitConfig(family="binomial", n_lambda=100, lambda_min_ratio=0.1, tol=1e-7)
        b_worst = max(b_worst, rd(fit(m, y, cfg), reference_fit(m, y, cfg), m, y).max_abs)
    elapsed = time.perf_counter() - t0
    ok = g_worst <= 1e-6 and b_worst <= 1e-5 and elapsed <= 300
    record(1, "RD vs reference fit", ok,
           f"gaussian max|RD|={g_worst:.2e} (<=1e-6), binomial max|RD|={b_worst:.2e} (<=1e-5), "
           f"{elapsed:.0f}s (<=300s)")


def test_02_bedpp_safety():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    violations = checked = 0
    for seed in range(200):
        n = int(rng.integers(20, 101))
        p = int(rng.integers(50, 501))
        m, y, _ = _gen(n, p, 2000 + seed)
        ref = reference_fit(m, y)
        v = m.full_view()
        stats = compute_column_stats(v)
        yc = y - y.mean()
        prepare_screening(v, yc, stats)
        cache = BedppCache.from_stats(stats, yc)
        for k, lam in enumerate(ref.lambdas):
            keep = bedpp_filter(cache, lam)
            support = np.flatnonzero(ref.coef_column(k))
            violations += int((~keep[support]).sum())
            checked += support.size
    elapsed = time.perf_counter() - t0
    record(2, "BEDPP never discards an active feature", violations == 0 and elapsed <= 300,
           f"{violations} violations over {checked} nonzero coefficients, 200 instances, "
           f"{elapsed:.0f}s (<=300s)")


def test_03_kkt_certification():
    worst_ratio = 0.0
    n_fits = 0
    cases = [("gaussian", 1.0, pol) for pol in ("none", "ssr", "bedpp", "hybrid")]
    cases += [("gaussian", 0.5, "ssr"), ("binomial", 1.0, "ssr"), ("binomial", 1.0, "none"),
              ("binomial", 0.5, "ssr")]
    for seed in range(10):
        for family, alpha, policy in cases:
            m, y, _ = _gen(80, 300, 3000 + seed, family)
            cfg = FitConfig(family=family, alpha=alpha, screen_policy=policy, diagnostics=True)
            f = fit(m, y, cfg)
            scope = f.diagnostics["safe_sets"] if f.policy in ("hybrid", "bedpp") else None
            res = kkt_audit(m, y, f, scope=scope)
            worst_ratio = max(worst_ratio, res.max() / f.tol)
            n_fits += 1
            if f.policy == "hybrid":
                # full scope: BEDPP exclusions must also satisfy KKT
                worst_ratio = max(worst_ratio, kkt_audit(m, y, f).max() / f.tol)
    record(3, "KKT audit at 2*tol", worst_ratio <= 2.0,
           f"worst residual = {worst_ratio:.2f}*tol over {n_fits} fits "
           f"(hybrid on S_k and full scope on 10 instances)")


def test_04_figure1_shape():
    t0 = time.perf_counter()
    m, y, _ = _gen(1000, 5000, 4)
    f = fit(m, y, FitConfig(diagnostics=True))
    rows = rejection_stats(f)
    ratio = np.array([r["lambda_ratio"] for r in rows])
    bedpp = np.array([r["pct_bedpp"] for r in rows])
    ssr = np.array([r["pct_ssr"] for r in rows])
    high = bedpp[ratio >= 0.95].min()
    low = bedpp[ratio < 0.45].max()
    ssr_mean = ssr.mean()
    bench = {r.policy: r for r in screen_bench(m, y, ("ssr", "hybrid"))}
    scans_ok = bool(np.all(bench["hybrid"].cols_scanned <= bench["ssr"].cols_scanned))
    elapsed = time.perf_counter() - t0
    ok = high >= 90 and low <= 5 and ssr_mean >= 70 and scans_ok and elapsed <= 600
    record(4, "rejection curve shape", ok,
           f"BEDPP min {high:.1f}% at ratio>=0.95 (>=90), max {low:.1f}% below 0.45 (<=5), "
           f"SSR mean {ssr_mean:.1f}% (>=70), hybrid scans <= SSR at every lambda: {scans_ok}, "
           f"{elapsed:.0f}s (<=600s)")


def test_05_hybrid_speedup():
    m, y, _ = _gen(1000, 20000, 5)
    fit(m, y, FitConfig(n_lambda=3))  # compile outside the timed region
    rows = {r.policy: r for r in screen_bench(m, y, ("ssr", "hybrid"), lambda_min_ratio=0.5,
                                               repeats=5)}
    ssr_t = rows["ssr"].wall_time
    hyb_t = rows["hybrid"].wall_time
    record(5, "hybrid speedup over SSR on [0.5, 1] lambda_max", hyb_t <= ssr_t / 1.2,
           f"median SSR {ssr_t:.3f}s, hybrid {hyb_t:.3f}s, ratio {ssr_t / hyb_t:.2f}x (>=1.2x)")


def test_06_out_of_core_equivalence(tmp_path):
    identical = 0
    cases = [(200, 500, "gaussian"), (150, 300, "binomial"), (100, 1000, "gaussian")]
    for i, (n, p, family) in enumerate(cases):
        mapped, y, _ = _gen(n, p, 6000 + i, family, prefix=tmp_path / f"m{i}")
        assert mapped.is_mapped
        memory = FileMatrix.from_array(np.array(mapped.data))
        fit(mapped, y, family=family).save(tmp_path / f"a{i}")
        fit(memory, y, family=family).save(tmp_path / f"b{i}")
        a = (tmp_path / f"a{i}.coef.csv").read_bytes()
        b = (tmp_path / f"b{i}.coef.csv").read_bytes()
        identical += a == b
    record(6, "file-backed fit equals in-memory fit", identical == len(cases),
           f"{identical}/{len(cases)} coefficient CSVs byte-identical")


def test_07_no_copy_cv():
    n, p = 500, 20000
    m, y, _ = _gen(n, p, 7)
    cvf = cv_fit(m, y, FitConfig(), n_folds=10, seed=7, trace_memory=True)
    worst = cvf.memory["max_transient"]
    budget = 10 * (n + p) * 8
    record(7, "CV transient memory per fold", worst < budget,
           f"max transient {worst} bytes < budget {budget} bytes (n*p*8 = {n * p * 8})")


def _masks_and_csv(m, y, workers, path):
    f = fit(m, y, FitConfig(workers=workers, diagnostics=True))
    f.save(path)
    return f


def test_08_parallel_determinism(tmp_path):
    masks_equal = 0
    worst = 0.0
    for seed in range(10):
        m, y, _ = _gen(100, 2000, 8000 + seed)
        a = _masks_and_csv(m, y, 1, tmp_path / f"a{seed}")
        b = _masks_and_csv(m, y, 4, tmp_path / f"b{seed}")
        same = all(
            len(sa) == len(sb) and all(np.array_equal(u, v) for u, v in zip(sa, sb))
            for sa, sb in ((a.diagnostics[key], b.diagnostics[key])
                           for key in ("safe_sets", "strong_sets"))
        )
        masks_equal += same
        la = (tmp_path / f"a{seed}.coef.csv").read_text().splitlines()
        lb = (tmp_path / f"b{seed}.coef.csv").read_text().splitlines()
        if len(la) != len(lb):
            worst = np.inf
            continue
        for ra, rb in zip(la[1:], lb[1:]):
            fa, fb = ra.split(","), rb.split(",")
            if fa[:3] != fb[:3]:
                worst = np.inf
                break
            worst = max(worst, abs(float(fa[3]) - float(fb[3])))
    record(8, "4 workers vs 1", masks_equal == 10 and worst <= 1e-12,
           f"identical masks on {masks_equal}/10 instances, max coefficient diff {worst:.1e} "
           f"(<=1e-12)")


def test_09_null_anchor():
    bad = []
    n_fits = 0
    for seed in range(10):
        for family in ("gaussian", "binomial"):
            for alpha in (1.0, 0.5):
                for policy in ("none", "ssr", "hybrid"):
                    m, y, _ = _gen(60, 120, 9000 + seed, family)
                    f = fit(m, y, FitConfig(family=family, alpha=alpha, screen_policy=policy))
                    ybar = float(np.mean(y))
                    want = ybar if family == "gaussian" else float(np.log(ybar / (1 - ybar)))
                    n_fits += 1
                    if f.coefs[:, [0]].nnz or f.intercepts[0] != want:
                        bad.append((seed, family, alpha, policy))
    record(9, "null model at lambda_max", not bad,
           f"{n_fits - len(bad)}/{n_fits} fits with zero first column and exact intercept")


def test_10_identities():
    rng = np.random.default_rng(10)
    worst = {"xx": 0.0, "xy": 0.0, "xr": 0.0}
    over = []  # (error, n, |c|/s) for comparisons above 1e-12
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        p = int(rng.integers(1, 11))
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        res = ResidualState(rng.standard_normal(n))
        v = FileMatrix.from_array(X).full_view()
        st_ = compute_column_stats(v)
        Xs = standardize(X)
        cond = np.abs(st_.c) / st_.s
        for j in range(p):
            found = []
            for k in range(p):
                naive = Xs[:, j] @ Xs[:, k]
                got = std_dot_xx(j, k, st_, float(X[:, j] @ X[:, k]), n)
                found.append(("xx", abs(got - naive) / max(abs(naive), 1.0), max(cond[j], cond[k])))
            for key, vec, got in (("xy", y, std_dot_xy(v, j, y, st_)),
                                  ("xr", res.r, std_dot_xr(v, j, res, st_))):
                naive = Xs[:, j] @ vec
                found.append((key, abs(got - naive) / max(abs(naive), 1.0), cond[j]))
            for key, err, c in found:
                worst[key] = max(worst[key], err)
                if err > 1e-12:
                    over.append((err, n, c))
    total = max(worst.values())
    detail = (f"max relative error {total:.1e} (<=1e-12) over 1000 N(0,1) instances; "
              f"per identity xx={worst['xx']:.1e} xy={worst['xy']:.1e} xr={worst['xr']:.1e}")
    if over:
        detail += (f"; {len(over)} comparisons above 1e-12, all with n<={max(o[1] for o in over)}"
                   f" and |c|/s>={min(o[2] for o in over):.0f}")
    record(10, "standardization identities", total <= 1e-12, detail)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
