"""Reference solutions and validation harness.

* :func:`reference_fit` -- the same model solved with no screening and a very
  tight tolerance; ground truth for RD and screening-safety checks.
* :func:`rd` -- relative difference of penalized objectives between two fits.
* :func:`kkt_audit` -- subgradient certificate computed with plain numpy on
  explicitly standardized column blocks (does not share the solver kernels).
* :func:`grid_oracle` -- exhaustive grid search for p <= 3.
* :func:`gen_synth` -- synthetic data ``y = X b + 0.1 eps`` written to disk.
* :func:`screen_bench` -- wall time and scan counts per screening policy.

The objective uses a 1/n loss normalization for both families
(gaussian ``||y - yhat||^2 / 2n``, binomial mean deviance / 2) plus the
elastic-net penalty on the standardized coefficients.
"""
from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bigmat import ColumnWriter, FileMatrix, as_view
from .solver import FitConfig, PathFit, fit, objective, penalty

REFERENCE_TOL = 1e-10
REFERENCE_MAX_ITER = 10**6


def reference_fit(x, y, cfg: FitConfig | None = None) -> PathFit:
    cfg = cfg or FitConfig()
    cfg = replace(cfg, screen_policy="none", tol=REFERENCE_TOL,
                  max_iter=REFERENCE_MAX_ITER, diagnostics=False)
    return fit(x, y, cfg)


@dataclass
class RdReport:
    lambdas: np.ndarray
    values: np.ndarray

    @property
    def finite(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]

    def summary(self) -> dict:
        v = self.finite
        if v.size == 0:
            return dict.fromkeys(("min", "q1", "median", "mean", "q3", "max"), float("nan"))
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        return {"min": float(v.min()), "q1": float(q1), "median": float(med),
                "mean": float(v.mean()), "q3": float(q3), "max": float(v.max())}

    @property
    def max_abs(self) -> float:
        v = self.finite
        return float(np.abs(v).max()) if v.size else 0.0

    @classmethod
    def concat(cls, reports) -> "RdReport":
        reports = list(reports)
        return cls(np.concatenate([r.lambdas for r in reports]),
                   np.concatenate([r.values for r in reports]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "rd"])
            for lam, v in zip(self.lambdas, self.values):
                w.writerow([repr(float(lam)), repr(float(v))])

    def text(self, label="RD") -> str:
        names = [("Minimum", "min"), ("1st Quantile", "q1"), ("Median", "median"),
                 ("Mean", "mean"), ("3rd Quantile", "q3"), ("Maximum", "max")]
        s = self.summary()
        lines = [f"Summary statistics of {label} ({self.finite.size} values)"]
        lines += [f"  {name:<13s} {s[key]: .2e}" for name, key in names]
        return "\n".join(lines)


def rd(fit_a: PathFit, fit_b: PathFit, x, y) -> RdReport:
    """``RD(lam) = (Q(a) - Q(b)) / Q(b)`` at every shared path point.

    Defined only where ``Q(b) > 0``; other entries are NaN.
    """
    if fit_a.family != fit_b.family or fit_a.alpha != fit_b.alpha:
        raise ValueError("fits must share family and alpha")
    if fit_a.lambdas.shape != fit_b.lambdas.shape or not np.allclose(
        fit_a.lambdas, fit_b.lambdas, rtol=1e-12, atol=0
    ):
        raise ValueError("fits were computed on different lambda grids")
    view = as_view(x)
    vals = np.empty(len(fit_a.lambdas))
    for k in range(len(vals)):
        qa = objective(fit_a, view, y, k)
        qb = objective(fit_b, view, y, k)
        vals[k] = (qa - qb) / qb if qb > 0 else np.nan
    return RdReport(fit_a.lambdas.copy(), vals)


# ---------------------------------------------------------------------------
# independent certificates


def _columns(view, cols):
    """Dense (n, len(cols)) block of a view; ``cols`` is a slice or index array."""
    return view.data[:, cols][view.row_index]


def kkt_audit(x, y, fit_: PathFit, *, scope=None, tol=None, block=512) -> np.ndarray:
    """Worst KKT residual per path point on ``scope`` (default: every active column).

    ``scope`` may be one boolean mask/index array for all points or a list
    with one per point. Zero coefficients need ``|z_j| <= alpha lam``, nonzero
    ones ``z_j = alpha lam sign(b_j) + lam (1 - alpha) b_j``, where
    ``z_j = x~_j.(y - mu) / n``. Returns residuals (the caller compares them to
    its tolerance); when ``tol`` is given, raises ``AssertionError`` on excess.
    """
    view = as_view(x)
    y = np.asarray(y, dtype=np.float64)
    n, p = view.n, view.p
    alpha = fit_.alpha
    sd_all = np.empty(p)
    worst = np.zeros(len(fit_.lambdas))
    mus = []
    for k in range(len(fit_.lambdas)):
        eta = fit_.intercepts[k] + _matvec(view, fit_.coef_column(k), block)
        mus.append(eta if fit_.family == "gaussian" else 1.0 / (1.0 + np.exp(-eta)))
    for j0 in range(0, p, block):
        cols = np.arange(j0, min(p, j0 + block))
        raw = _columns(view, cols)
        sd_all[cols] = raw.std(axis=0)
        ok = sd_all[cols] > 0
        cols = cols[ok]
        xs = (raw[:, ok] - raw[:, ok].mean(axis=0)) / sd_all[cols]
        for k, lam in enumerate(fit_.lambdas):
            sel = _scope_for(scope, k, p)
            keep = sel[cols]
            if not keep.any():
                continue
            c = cols[keep]
            z = xs[:, keep].T @ (y - mus[k]) / n
            b = fit_.coefs[c, k].toarray().ravel() * sd_all[c]
            res = np.where(
                b == 0,
                np.maximum(np.abs(z) - alpha * lam, 0.0),
                np.abs(z - alpha * lam * np.sign(b) - lam * (1 - alpha) * b),
            )
            worst[k] = max(worst[k], res.max())
    if tol is not None and worst.max() > tol:
        k = int(worst.argmax())
        raise AssertionError(f"KKT residual {worst[k]:.3e} > {tol:.3e} at lambda={fit_.lambdas[k]}")
    return worst


def _scope_for(scope, k, p):
    if scope is None:
        return np.ones(p, dtype=bool)
    s = scope[k] if isinstance(scope, list) else scope
    s = np.asarray(s)
    if s.dtype == bool:
        return s
    m = np.zeros(p, dtype=bool)
    m[s] = True
    return m


def _matvec(view, beta, block):
    out = np.zeros(view.n)
    nz = np.flatnonzero(beta)
    for j0 in range(0, len(nz), block):
        c = nz[j0:j0 + block]
        out += _columns(view, c) @ beta[c]
    return out


def grid_oracle(x, y, lam, *, alpha=1.0, lo=-2.0, hi=2.0, step=1e-3):
    """Minimize the gaussian objective over a grid of standardized coefficients.

    Only for p <= 3. Returns ``(beta_std, objective)`` at the best grid point.
    """
    X = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if p > 3:
        raise ValueError("grid oracle is limited to p <= 3")
    xs = (X - X.mean(axis=0)) / X.std(axis=0)
    yc = y - y.mean()
    gram = xs.T @ xs / n
    xty = xs.T @ yc / n
    base = yc @ yc / (2 * n)
    axis = np.arange(lo, hi + step / 2, step)
    best_val, best_b = np.inf, None
    # loop over the first coordinate, vectorize over the rest
    rest = np.array(list(itertools.product(axis, repeat=p - 1))) if p > 1 else np.zeros((1, 0))
    for b0 in axis:
        B = np.column_stack([np.full(len(rest), b0), rest])
        quad = 0.5 * np.einsum("ij,jk,ik->i", B, gram, B)
        lin = B @ xty
        pen = lam * (alpha * np.abs(B).sum(axis=1) + 0.5 * (1 - alpha) * (B * B).sum(axis=1))
        vals = base - lin + quad + pen
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_b = float(vals[i]), B[i].copy()
    return best_b, best_val


def gaussian_objective_std(x, y, beta_std, lam, alpha=1.0) -> float:
    """Objective in terms of standardized coefficients (intercept profiled out)."""
    X = np.asarray(x, dtype=np.float64)
    xs = (X - X.mean(axis=0)) / X.std(axis=0)
    res = y - y.mean() - xs @ beta_std
    return float(res @ res / (2 * len(y))) + penalty(np.asarray(beta_std), lam, alpha)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    n: int
    p: int
    n_true: int = 20
    family: str = "gaussian"
    seed: int = 0
    noise_scale: float = 0.1

    def __post_init__(self):
        if not 0 <= self.n_true <= self.p:
            raise ValueError("n_true must lie in [0, p]")
        if self.family not in ("gaussian", "binomial"):
            raise ValueError("family must be gaussian or binomial")


def gen_synth(spec: SynthSpec, out_prefix=None, block_cols=256):
    """Simulate ``X`` with i.i.d. N(0, 1) entries and a sparse truth.

    Gaussian: ``y = X b + noise_scale * eps``; binomial:
    ``y ~ Bernoulli(sigmoid(X b))``. ``b`` has ``n_true`` nonzero entries drawn
    from Unif[-1, 1] at random positions. With ``out_prefix`` the matrix is
    streamed to ``<out_prefix>.bin/.desc`` column block by column block and the
    attached :class:`FileMatrix` is returned; otherwise an in-memory one.

    Returns ``(matrix, y, beta_true)``.
    """
    from .bigmat import attach_matrix

    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    support = np.sort(rng.choice(p, size=spec.n_true, replace=False))
    beta = np.zeros(p)
    beta[support] = rng.uniform(-1.0, 1.0, size=spec.n_true)
    xrng = np.random.default_rng([spec.seed, 1])
    eta = np.zeros(n)

    def blocks():
        for j0 in range(0, p, block_cols):
            m = min(block_cols, p - j0)
            blk = np.empty((n, m), order="F")
            for k in range(m):
                blk[:, k] = xrng.standard_normal(n)
            yield j0, blk

    if out_prefix is not None:
        with ColumnWriter(out_prefix, n, p) as w:
            for j0, blk in blocks():
                sel = beta[j0:j0 + blk.shape[1]]
                eta += blk @ sel
                w.write(blk)
        matrix = attach_matrix(w.desc_path)
    else:
        data = np.empty((n, p), order="F")
        for j0, blk in blocks():
            data[:, j0:j0 + blk.shape[1]] = blk
            eta += blk @ beta[j0:j0 + blk.shape[1]]
        matrix = FileMatrix.from_array(data)

    yrng = np.random.default_rng([spec.seed, 2])
    if spec.family == "gaussian":
        y = eta + spec.noise_scale * yrng.standard_normal(n)
    else:
        prob = 1.0 / (1.0 + np.exp(-eta))
        y = (yrng.uniform(size=n) < prob).astype(np.float64)
    return matrix, y, beta


# ---------------------------------------------------------------------------
# benchmarks


@dataclass
class BenchRow:
    policy: str
    times: list
    cols_scanned: np.ndarray
    kkt_rounds: np.ndarray
    lambdas: np.ndarray

    @property
    def wall_time(self) -> float:
        return float(np.median(self.times))


def screen_bench(x, y, policies=("ssr", "hybrid"), *, lambda_min_ratio=0.1, n_lambda=100,
                 repeats=1, workers=1, family="gaussian", tol=1e-7):
    """Fit the same path under each policy; report median wall time and scans."""
    view = as_view(x)
    rows = []
    for policy in policies:
        cfg = FitConfig(family=family, screen_policy=policy, n_lambda=n_lambda,
                        lambda_min_ratio=lambda_min_ratio, workers=workers, tol=tol)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            f = fit(view, y, cfg)
            times.append(time.perf_counter() - t0)
        rows.append(BenchRow(policy, times, f.cols_scanned, f.n_kkt_rounds, f.lambdas))
    return rows


def write_bench(rows, out_dir, label="bench") -> tuple[Path, Path]:
    """Per-lambda scan table (CSV) and a wall-time summary (text)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scans = out_dir / f"{label}_scans.csv"
    with open(scans, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda_ratio"] + [f"cols_scanned_{r.policy}" for r in rows]
                   + [f"kkt_rounds_{r.policy}" for r in rows])
        lmax = rows[0].lambdas[0]
        for k, lam in enumerate(rows[0].lambdas):
            w.writerow([repr(float(lam / lmax))] + [int(r.cols_scanned[k]) for r in rows]
                       + [int(r.kkt_rounds[k]) for r in rows])
    summary = out_dir / f"{label}_timing.txt"
    lines = [f"{'Rule':<10s} {'wall time (s)':>14s} {'cols scanned':>14s} {'KKT rounds':>11s}"]
    for r in rows:
        lines.append(f"{r.policy:<10s} {r.wall_time:14.3f} {int(r.cols_scanned.sum()):14d} "
                     f"{int(r.kkt_rounds.sum()):11d}")
    if len(rows) >= 2:
        lines.append(f"speedup {rows[0].policy}/{rows[-1].policy}: "
                     f"{rows[0].wall_time / rows[-1].wall_time:.2f}x")
    summary.write_text("\n".join(lines) + "\n")
    return scans, summary


def validate_suite(n, p, seeds, family="gaussian", cfg: FitConfig | None = None):
    """RD between default fits and reference fits over seeded synthetic instances."""
    cfg = cfg or FitConfig(family=family)
    reports = []
    for seed in seeds:
        m, y, _ = gen_synth(SynthSpec(n=n, p=p, n_true=min(20, p), family=family, seed=seed))
        a = fit(m, y, cfg)
        b = reference_fit(m, y, cfg)
        reports.append(rd(a, b, m, y))
    return RdReport.concat(reports)
