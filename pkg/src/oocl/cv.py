"""K-fold cross-validation on row-index views of one shared matrix.

Folds never copy the feature matrix: each training set is a
:class:`~oocl.bigmat.MatrixView` of the same attachment, and held-out
predictions stream over the test rows column by column. All folds use the
lambda grid of the full-data fit.
"""
from __future__ import annotations

import csv
import json
import math
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bigmat import as_view, make_view
from .errors import ConvergenceError
from .solver import FitConfig, PathFit, fit, linear_predictor

PROB_CLAMP = 1e-5


def make_folds(n: int, k: int, seed=None, stratify_on=None) -> np.ndarray:
    """Fold labels in ``1..k`` for ``n`` rows.

    Rows are shuffled with ``numpy.random.default_rng(seed)`` and dealt out
    cyclically. With ``stratify_on`` (a 0/1 vector) the zeros are dealt first
    and the ones continue the same cycle, so every fold gets
    ``floor`` or ``ceil`` of its share of each class.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError(f"{k} folds for {n} rows would leave a fold empty")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    if stratify_on is None:
        perm = rng.permutation(n)
        folds[perm] = np.arange(n) % k + 1
        return folds
    y = np.asarray(stratify_on)
    if y.shape != (n,):
        raise ValueError("stratification vector must have one entry per row")
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (offset + np.arange(len(idx))) % k + 1
        offset += len(idx)
    if len(np.unique(folds)) != k:
        raise ValueError("a fold would be empty")
    return folds


def deviance(y, prob) -> np.ndarray:
    """Per-row binomial deviance, probabilities clamped to [1e-5, 1 - 1e-5].

    A prediction equal to its label contributes exactly 0.
    """
    y = np.asarray(y, dtype=np.float64)
    prob = np.asarray(prob, dtype=np.float64)
    clamped = np.clip(prob, PROB_CLAMP, 1 - PROB_CLAMP)
    out = -2.0 * (y * np.log(clamped) + (1 - y) * np.log1p(-clamped))
    out[prob == y] = 0.0
    return out


@dataclass
class CvFit:
    family: str
    lambdas: np.ndarray
    cve: np.ndarray
    cvse: np.ndarray
    misclass: np.ndarray | None
    fold_assignments: np.ndarray
    fold_loss: np.ndarray
    cve_null: float
    full_fit: PathFit
    n: int
    p: int
    seed: int | None = None
    memory: dict = field(default_factory=dict)

    @property
    def min_index(self) -> int:
        return int(np.argmin(self.cve))

    @property
    def lambda_min(self) -> float:
        return float(self.lambdas[self.min_index])

    def summary(self) -> dict:
        k = self.min_index
        cve = float(self.cve[k])
        r2 = 1.0 - cve / self.cve_null
        snr = (self.cve_null - cve) / cve if cve > 0 else math.inf
        pe = float(self.misclass[k]) if self.family == "binomial" else cve
        return {
            "family": self.family,
            "n": self.n,
            "p": self.p,
            "lambda_min": self.lambda_min,
            "nonzero": int(self.full_fit.coefs[:, [k]].nnz),
            "cv_error": cve,
            "r_squared": r2,
            "snr": snr,
            "prediction_error": pe,
        }

    def save(self, prefix):
        """``<prefix>.cv.csv`` (lambda, cve, cvse), metadata JSON, the full fit, summary text."""
        prefix = Path(prefix)
        csv_path = prefix.with_name(prefix.name + ".cv.csv")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "cve", "cvse"])
            for row in zip(self.lambdas, self.cve, self.cvse):
                w.writerow([repr(float(v)) for v in row])
        meta = {
            "family": self.family, "n": self.n, "p": self.p, "seed": self.seed,
            "lambda_min": self.lambda_min, "cve_null": self.cve_null,
            "fold_assignments": self.fold_assignments.tolist(),
            "misclass": None if self.misclass is None else self.misclass.tolist(),
            "summary": self.summary(),
        }
        meta_path = prefix.with_name(prefix.name + ".cv.json")
        meta_path.write_text(json.dumps(meta, indent=1))
        self.full_fit.save(prefix)
        summary_path = prefix.with_name(prefix.name + ".summary.txt")
        summary_path.write_text(cv_summary(self) + "\n")
        return csv_path, meta_path, summary_path


def cv_summary(cvfit: CvFit) -> str:
    s = cvfit.summary()
    alpha = cvfit.full_fit.alpha
    penalty = "lasso" if alpha == 1.0 else "elastic net"
    model = "logistic regression" if s["family"] == "binomial" else "linear regression"
    loss = "deviance" if s["family"] == "binomial" else "mse"
    head = f"At minimum cross-validation error (lambda={s['lambda_min']:.4f}):"
    lines = [
        f"{penalty}-penalized {model} with n={s['n']}, p={s['p']}",
        head,
        "-" * len(head),
        f"  Nonzero coefficients: {s['nonzero']}",
        f"  Cross-validation error ({loss}): {s['cv_error']:.2f}",
        f"  R-squared: {s['r_squared']:.2f}",
        f"  Signal-to-noise ratio: {s['snr']:.2f}",
        f"  Prediction error: {s['prediction_error']:.3f}",
    ]
    return "\n".join(lines)


def _fold_losses(train_fit, test_view, y_test, family):
    """Per-lambda summed loss (and misclassifications) on the held-out rows."""
    K = len(train_fit.lambdas)
    loss = np.empty(K)
    wrong = np.empty(K)
    for k in range(K):
        eta = linear_predictor(train_fit, test_view, k)
        if family == "gaussian":
            loss[k] = float(np.sum((y_test - eta) ** 2))
            wrong[k] = 0.0
        else:
            prob = 1.0 / (1.0 + np.exp(-eta))
            loss[k] = float(np.sum(deviance(y_test, prob)))
            wrong[k] = float(np.sum((prob >= 0.5) != (y_test == 1)))
    return loss, wrong


def _fit_nbytes(f: PathFit) -> int:
    arrays = (f.lambdas, f.intercepts, f.coefs.data, f.coefs.indices, f.coefs.indptr,
              f.n_iters, f.n_kkt_rounds, f.cols_scanned, f.center, f.scale)
    return int(sum(a.nbytes for a in arrays))


def _null_loss(y_train, y_test, family):
    mu = float(np.mean(y_train))
    if family == "gaussian":
        return float(np.sum((y_test - mu) ** 2))
    return float(np.sum(deviance(y_test, np.full(len(y_test), mu))))


def cv_fit(x, y, cfg: FitConfig | None = None, *, n_folds=10, seed=None, folds=None,
           parallel_folds=False, workers=None, stratify=None, trace_memory=False) -> CvFit:
    """Cross-validate the path of ``cfg`` on ``x`` (matrix or view).

    Folds run on a thread pool of ``workers`` threads when ``parallel_folds``
    is set; the fits inside each fold are then forced to a single worker.
    ``trace_memory`` (serial folds only) records, per fold, the peak traced
    allocation above what the fold leaves behind, less the fold's own
    PathFit arrays; see ``CvFit.memory``.
    """
    cfg = cfg or FitConfig()
    view = as_view(x)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = view.n
    if y.shape != (n,):
        raise ValueError(f"response has length {len(y)}, matrix has {n} rows")
    family = cfg.family
    if stratify is None:
        stratify = family == "binomial"
    if folds is None:
        folds = make_folds(n, n_folds, seed, stratify_on=y if stratify else None)
    else:
        folds = np.asarray(folds, dtype=np.int64)
        n_folds = int(folds.max())
    workers = cfg.workers if workers is None else workers
    if parallel_folds and trace_memory:
        raise ValueError("memory tracing needs serial folds")

    full_fit = fit(view, y, cfg)
    fold_cfg = replace(cfg, lambdas=tuple(full_fit.lambdas), diagnostics=False)
    if parallel_folds:
        fold_cfg = replace(fold_cfg, workers=1)

    def run_fold(f):
        test = np.flatnonzero(folds == f)
        train = np.flatnonzero(folds != f)
        train_view = make_view(view, train)
        test_view = make_view(view, test)
        try:
            tf = fit(train_view, y[train], fold_cfg)
        except ConvergenceError as exc:
            raise ConvergenceError(f"fold {f}: {exc}", lam=exc.lam, fold=f) from exc
        loss, wrong = _fold_losses(tf, test_view, y[test], family)
        return loss, wrong, _null_loss(y[train], y[test], family), len(test), _fit_nbytes(tf)

    memory = {}
    ids = list(range(1, n_folds + 1))
    if parallel_folds and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run_fold, ids))
    elif trace_memory:
        results = []
        started = tracemalloc.is_tracing()
        if not started:
            tracemalloc.start()
        try:
            per_fold = []
            for f in ids:
                tracemalloc.reset_peak()
                before = tracemalloc.get_traced_memory()[0]
                res = run_fold(f)
                after, peak = tracemalloc.get_traced_memory()
                results.append(res)
                # the fold's own PathFit is result storage, not working memory
                per_fold.append({"fold": f, "before": before, "after": after, "peak": peak,
                                 "result_bytes": res[4],
                                 "transient": peak - max(before, after) - res[4]})
        finally:
            if not started:
                tracemalloc.stop()
        memory = {"per_fold": per_fold,
                  "max_transient": max(r["transient"] for r in per_fold)}
    else:
        results = [run_fold(f) for f in ids]

    losses = np.array([r[0] for r in results])
    wrongs = np.array([r[1] for r in results])
    sizes = np.array([r[3] for r in results], dtype=np.float64)
    fold_mean = losses / sizes[:, None]
    cve = losses.sum(axis=0) / n
    cvse = fold_mean.std(axis=0, ddof=1) / math.sqrt(n_folds) if n_folds > 1 else np.zeros_like(cve)
    cve_null = sum(r[2] for r in results) / n
    misclass = wrongs.sum(axis=0) / n if family == "binomial" else None
    return CvFit(
        family=family, lambdas=full_fit.lambdas, cve=cve, cvse=cvse, misclass=misclass,
        fold_assignments=folds, fold_loss=fold_mean, cve_null=cve_null, full_fit=full_fit,
        n=n, p=view.p, seed=seed, memory=memory,
    )
