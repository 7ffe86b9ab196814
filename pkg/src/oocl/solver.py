"""Warm-started pathwise coordinate descent for penalized linear and logistic
regression on (views of) file-backed matrices.

Model, on the standardized scale, with the intercept unpenalized::

    gaussian  (1/2n) ||y - b0 - X~ b||^2              + lam * P(b)
    binomial  (1/n) sum_i [log(1 + e^eta_i) - y_i eta_i] + lam * P(b)

    P(b) = alpha ||b||_1 + (1 - alpha)/2 ||b||_2^2

Coefficients are reported on the original feature scale.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numba import njit

from .bigmat import MatrixView, as_view
from .errors import ConvergenceError, DegenerateInputError, PolicyError
from .kernels import (
    ColumnPool,
    ColumnStats,
    _residual_update,
    compute_column_stats,
    prepare_screening,
    std_dot_xr_scatter,
)
from .screen import (
    POLICIES,
    BedppCache,
    ScreenState,
    bedpp_filter,
    hybrid_filter,
    kkt_check,
    ssr_filter,
)

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "binomial")
PROB_CLAMP = 1e-5
MAX_KKT_ROUNDS = 10


@dataclass(frozen=True)
class FitConfig:
    family: str = "gaussian"
    alpha: float = 1.0
    n_lambda: int = 100
    lambda_min_ratio: float = 0.1
    lambda_spacing: str = "linear"
    screen_policy: str | None = None
    tol: float = 1e-7
    max_iter: int = 10000
    workers: int = 1
    kkt_tol: float | None = None
    lambdas: tuple | None = None
    binomial_weights: str = "exact"
    diagnostics: bool = False
    debug: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.n_lambda < 1:
            raise ValueError("n_lambda must be at least 1")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        if self.lambda_spacing not in ("linear", "log"):
            raise ValueError("lambda_spacing must be 'linear' or 'log'")
        if self.screen_policy is not None and self.screen_policy not in POLICIES:
            raise ValueError(f"screen_policy must be one of {POLICIES}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.binomial_weights not in ("exact", "majorize"):
            raise ValueError("binomial_weights must be 'exact' or 'majorize'")
        if self.lambdas is not None:
            lams = tuple(float(x) for x in self.lambdas)
            if not lams or any(l <= 0 for l in lams) or any(
                b > a for a, b in zip(lams, lams[1:])
            ):
                raise ValueError("lambdas must be positive and non-increasing")
            object.__setattr__(self, "lambdas", lams)

    @property
    def policy(self) -> str:
        """Screening policy actually used (BEDPP needs the gaussian lasso)."""
        lasso = self.family == "gaussian" and self.alpha == 1.0
        if self.screen_policy is None:
            return "hybrid" if lasso else "ssr"
        if self.screen_policy in ("bedpp", "hybrid") and not lasso:
            return "ssr"
        return self.screen_policy


@dataclass
class PathFit:
    family: str
    alpha: float
    lambdas: np.ndarray
    lambda_max: float
    intercepts: np.ndarray
    coefs: sp.csc_matrix
    n_iters: np.ndarray
    n_kkt_rounds: np.ndarray
    cols_scanned: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    n: int
    tol: float
    policy: str
    col_names: tuple | None = None
    timings: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.coefs.shape[0]

    def coef_column(self, k: int) -> np.ndarray:
        return self.coefs[:, [k]].toarray().ravel()

    def std_coef_column(self, k: int) -> np.ndarray:
        return self.coef_column(k) * self.scale

    def lambda_index(self, lam, exact=False) -> int:
        lams = self.lambdas
        lo, hi = lams.min(), lams.max()
        slack = 1e-8 * hi
        if lam < lo - slack or lam > hi + slack:
            raise ValueError(f"lambda {lam} outside fitted range [{lo}, {hi}]")
        k = int(np.argmin(np.abs(lams - lam)))
        if exact and abs(lams[k] - lam) > 1e-12 * hi:
            raise ValueError(f"lambda {lam} is not on the fitted path")
        return k

    # -- serialization -------------------------------------------------------

    def save(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.coef.csv`` (long format) and ``<prefix>.fit.json``."""
        prefix = Path(prefix)
        csv_path = prefix.with_name(prefix.name + ".coef.csv")
        meta_path = prefix.with_name(prefix.name + ".fit.json")
        coefs = self.coefs.tocsc()
        names = self.col_names
        with open(csv_path, "w") as fh:
            fh.write("lambda,col_index,col_name,coef\n")
            for k, lam in enumerate(self.lambdas):
                lam = float(lam)
                fh.write(f"{lam!r},-1,(Intercept),{float(self.intercepts[k])!r}\n")
                lo, hi = coefs.indptr[k], coefs.indptr[k + 1]
                for j, v in zip(coefs.indices[lo:hi], coefs.data[lo:hi]):
                    name = names[j] if names else f"V{j + 1}"
                    fh.write(f"{lam!r},{j},{name},{float(v)!r}\n")
        meta = {
            "family": self.family,
            "alpha": self.alpha,
            "tol": self.tol,
            "policy": self.policy,
            "n": self.n,
            "p": self.p,
            "lambda_max": self.lambda_max,
            "lambdas": [float(x) for x in self.lambdas],
            "intercepts": [float(x) for x in self.intercepts],
            "n_iters": self.n_iters.tolist(),
            "n_kkt_rounds": self.n_kkt_rounds.tolist(),
            "cols_scanned": self.cols_scanned.tolist(),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "col_names": list(self.col_names) if self.col_names else None,
            "timings": self.timings,
            "diagnostics": _jsonable(self.diagnostics),
        }
        meta_path.write_text(json.dumps(meta))
        return csv_path, meta_path

    @classmethod
    def load(cls, prefix) -> "PathFit":
        prefix = Path(prefix)
        meta = json.loads(prefix.with_name(prefix.name + ".fit.json").read_text())
        lambdas = np.array(meta["lambdas"])
        K, p = len(lambdas), meta["p"]
        rows, cols, vals = [], [], []
        k = -1
        with open(prefix.with_name(prefix.name + ".coef.csv")) as fh:
            next(fh)
            for line in fh:
                _, j_s, _, v_s = _split_coef_line(line)
                j = int(j_s)
                if j < 0:
                    # an intercept row opens each lambda block
                    k += 1
                    continue
                rows.append(j)
                cols.append(k)
                vals.append(float(v_s))
        coefs = sp.csc_matrix((vals, (rows, cols)), shape=(p, K))
        return cls(
            family=meta["family"], alpha=meta["alpha"], lambdas=lambdas,
            lambda_max=meta["lambda_max"], intercepts=np.array(meta["intercepts"]),
            coefs=coefs, n_iters=np.array(meta["n_iters"]),
            n_kkt_rounds=np.array(meta["n_kkt_rounds"]),
            cols_scanned=np.array(meta["cols_scanned"]),
            center=np.array(meta["center"]), scale=np.array(meta["scale"]),
            n=meta["n"], tol=meta["tol"], policy=meta["policy"],
            col_names=tuple(meta["col_names"]) if meta["col_names"] else None,
            timings=meta.get("timings", {}), diagnostics=meta.get("diagnostics", {}),
        )


def _split_coef_line(line):
    lam, rest = line.rstrip("\n").split(",", 1)
    j, rest = rest.split(",", 1)
    name, v = rest.rsplit(",", 1)
    return lam, j, name, v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# scalar updates


def soft_threshold(z, gamma):
    return math.copysign(max(abs(z) - gamma, 0.0), z)


def cd_update(z, lam, alpha):
    """New standardized coefficient given ``z = x~_j.r/n + b_j``."""
    return soft_threshold(z, lam * alpha) / (1.0 + lam * (1.0 - alpha))


# ---------------------------------------------------------------------------
# numba coordinate descent


@njit(nogil=True, cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(nogil=True, cache=True)
def _gauss_sweep(data, rows, cols, beta, c, s, r, rsum, l1, denom, n):
    maxd = 0.0
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        for i in range(n):
            acc += data[rows[i], j] * r[i]
        z = (acc - c[j] * rsum[0]) / s[j] / n + beta[j]
        new = _soft(z, l1) / denom
        d = new - beta[j]
        if d != 0.0:
            beta[j] = new
            rsum[0] += _residual_update(data, rows, j, d, c[j], s[j], r)
            if abs(d) > maxd:
                maxd = abs(d)
    return maxd


@njit(nogil=True, cache=True)
def _gauss_cd(data, rows, cols, beta, c, s, r, rsum, lam, alpha, tol, max_iter):
    # converge on the nonzero subset, then confirm with a full pass over cols;
    # returns sweeps used, negated when max_iter ran out
    n = rows.shape[0]
    l1 = lam * alpha
    denom = 1.0 + lam * (1.0 - alpha)
    active = np.empty(cols.shape[0], dtype=np.int64)
    it = 0
    while it < max_iter:
        maxd = _gauss_sweep(data, rows, cols, beta, c, s, r, rsum, l1, denom, n)
        it += 1
        if maxd < tol:
            return it
        m = 0
        for k in range(cols.shape[0]):
            if beta[cols[k]] != 0.0:
                active[m] = cols[k]
                m += 1
        while it < max_iter:
            maxd = _gauss_sweep(data, rows, active[:m], beta, c, s, r, rsum, l1, denom, n)
            it += 1
            if maxd < tol:
                break
    return -it


@njit(nogil=True, cache=True)
def _weighted_sweep(data, rows, cols, beta, b0, c, s, v, w, rw, sums, l1, l2, n):
    # rw = w * (working response - eta); sums = [sum(rw), sum(w)]
    maxd = 0.0
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        for i in range(n):
            acc += data[rows[i], j] * rw[i]
        g = (acc - c[j] * sums[0]) / s[j] / n
        new = _soft(g + v[j] * beta[j], l1) / (v[j] + l2)
        d = new - beta[j]
        if d != 0.0:
            beta[j] = new
            scale = d / s[j]
            shift = scale * c[j]
            dsum = 0.0
            for i in range(n):
                step = w[i] * (scale * data[rows[i], j] - shift)
                rw[i] -= step
                dsum += step
            sums[0] -= dsum
            if abs(d) > maxd:
                maxd = abs(d)
    d0 = sums[0] / sums[1]
    if d0 != 0.0:
        b0[0] += d0
        for i in range(n):
            rw[i] -= d0 * w[i]
        sums[0] -= d0 * sums[1]
        if abs(d0) > maxd:
            maxd = abs(d0)
    return maxd


@njit(nogil=True, cache=True)
def _weighted_cd(data, rows, cols, beta, b0, c, s, v, w, rw, sums, lam, alpha, tol, max_iter):
    n = rows.shape[0]
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    active = np.empty(cols.shape[0], dtype=np.int64)
    it = 0
    while it < max_iter:
        maxd = _weighted_sweep(data, rows, cols, beta, b0, c, s, v, w, rw, sums, l1, l2, n)
        it += 1
        if maxd < tol:
            return it
        m = 0
        for k in range(cols.shape[0]):
            if beta[cols[k]] != 0.0:
                active[m] = cols[k]
                m += 1
        while it < max_iter:
            maxd = _weighted_sweep(data, rows, active[:m], beta, b0, c, s, v, w, rw, sums,
                                   l1, l2, n)
            it += 1
            if maxd < tol:
                break
    return -it


@njit(nogil=True, cache=True)
def _weighted_var(data, rows, cols, c, s, w, v):
    # v[j] = sum_i w_i x~_ij^2 / n
    n = rows.shape[0]
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        for i in range(n):
            d = data[rows[i], j] - c[j]
            acc += w[i] * d * d
        v[j] = acc / (s[j] * s[j] * n)


@njit(nogil=True, cache=True)
def _linear_predictor(data, rows, cols, coef, offset, eta):
    # eta = offset + sum_k coef[k] * x[:, cols[k]] (raw columns)
    n = rows.shape[0]
    for i in range(n):
        eta[i] = offset
    for k in range(cols.shape[0]):
        j = cols[k]
        b = coef[k]
        for i in range(n):
            eta[i] += b * data[rows[i], j]


# ---------------------------------------------------------------------------
# path anchors


def lambda_max(view, y, stats: ColumnStats, family="gaussian", alpha=1.0, pool=None) -> float:
    """Smallest lambda with an all-zero solution; also sets ``stats.star_index``.

    For both families the gradient at the null model is ``x~_j.(y - ybar)/n``.
    """
    view = as_view(view)
    y = np.asarray(y, dtype=np.float64)
    if not stats.active_flags.any():
        raise DegenerateInputError("every column has zero variance")
    if np.ptp(y) == 0:
        raise DegenerateInputError("response is constant")
    prepare_screening(view, y - y.mean(), stats, pool)
    lmax = abs(stats.xty[stats.star_index]) / (stats.n * alpha)
    if not lmax > 0:
        raise DegenerateInputError("lambda_max is 0: response is orthogonal to every column")
    return lmax


def lambda_path(lmax: float, cfg: FitConfig) -> np.ndarray:
    """Decreasing grid starting exactly at ``lmax``."""
    K = cfg.n_lambda
    if K == 1:
        return np.array([lmax])
    if cfg.lambda_spacing == "linear":
        ratios = np.linspace(1.0, cfg.lambda_min_ratio, K)
    else:
        ratios = np.exp(np.linspace(0.0, math.log(cfg.lambda_min_ratio), K))
    ratios[0] = 1.0
    return lmax * ratios


# ---------------------------------------------------------------------------
# objective


def penalty(beta_std, lam, alpha):
    return lam * (alpha * np.abs(beta_std).sum() + 0.5 * (1 - alpha) * np.dot(beta_std, beta_std))


def _binomial_loss(y, eta):
    # mean of log(1 + e^eta) - y eta, overflow-safe
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def objective(fit: PathFit, view, y, k: int) -> float:
    """Penalized objective of path point ``k`` evaluated on ``view``."""
    view = as_view(view)
    y = np.asarray(y, dtype=np.float64)
    eta = linear_predictor(fit, view, k)
    beta_std = fit.std_coef_column(k)
    pen = penalty(beta_std, fit.lambdas[k], fit.alpha)
    if fit.family == "gaussian":
        res = y - eta
        return float(np.dot(res, res) / (2 * len(y))) + pen
    return _binomial_loss(y, eta) + pen


def linear_predictor(fit: PathFit, view, k: int) -> np.ndarray:
    view = as_view(view)
    col = fit.coefs[:, [k]].tocoo()
    cols = np.ascontiguousarray(col.row, dtype=np.int64)
    order = np.argsort(cols)
    eta = np.empty(view.n)
    _linear_predictor(view.data, view.row_index, cols[order], col.data[order].copy(),
                      float(fit.intercepts[k]), eta)
    return eta


# ---------------------------------------------------------------------------
# path driver


class _PathRecorder:
    def __init__(self, p, K):
        self.idx, self.val = [], []
        self.intercepts = np.empty(K)
        self.n_iters = np.zeros(K, dtype=np.int64)
        self.rounds = np.zeros(K, dtype=np.int64)
        self.scanned = np.zeros(K, dtype=np.int64)
        self.p = p

    def record(self, k, beta_std, b0_orig, stats, iters, rounds, scanned):
        nz = np.flatnonzero(beta_std)
        self.idx.append(nz)
        self.val.append(beta_std[nz] / stats.s[nz])
        self.intercepts[k] = b0_orig
        self.n_iters[k] = iters
        self.rounds[k] = rounds
        self.scanned[k] = scanned

    def coefs(self):
        K = len(self.idx)
        indptr = np.zeros(K + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(i) for i in self.idx])
        indices = np.concatenate(self.idx) if K else np.zeros(0, dtype=np.int64)
        data = np.concatenate(self.val) if K else np.zeros(0)
        return sp.csc_matrix((data, indices, indptr), shape=(self.p, K))


class _Diagnostics:
    """Screening bookkeeping used for rejection tables and audits."""

    def __init__(self, enabled, p):
        self.enabled = enabled
        self.p = p
        self.safe_size = []
        self.strong_size = []
        self.pct = {"pct_bedpp": [], "pct_ssr": [], "pct_hybrid": []}
        self.safe_sets = []
        self.strong_sets = []

    def record(self, safe, strong, pcts=None):
        self.safe_size.append(int(safe.sum()))
        self.strong_size.append(int(strong.sum()))
        if self.enabled:
            self.safe_sets.append(np.flatnonzero(safe))
            self.strong_sets.append(np.flatnonzero(strong))
            for key in self.pct:
                self.pct[key].append(pcts.get(key, 0.0) if pcts else 0.0)

    def as_dict(self):
        out = {"safe_size": self.safe_size, "strong_size": self.strong_size}
        if self.enabled:
            out.update(self.pct)
            out["safe_sets"] = self.safe_sets
            out["strong_sets"] = self.strong_sets
        return out


def fit(x, y, cfg: FitConfig | None = None, **kwargs) -> PathFit:
    """Fit the full regularization path; dispatches on ``cfg.family``."""
    if cfg is None:
        cfg = FitConfig(**kwargs)
    elif kwargs:
        cfg = replace(cfg, **kwargs)
    if cfg.family == "gaussian":
        return fit_gaussian(x, y, cfg)
    return fit_binomial(x, y, cfg)


def fit_gaussian(x, y, cfg: FitConfig | None = None) -> PathFit:
    cfg = cfg or FitConfig()
    if cfg.family != "gaussian":
        cfg = replace(cfg, family="gaussian")
    return _fit_path(as_view(x), y, cfg)


def fit_binomial(x, y01, cfg: FitConfig | None = None) -> PathFit:
    cfg = cfg or FitConfig(family="binomial")
    if cfg.family != "binomial":
        cfg = replace(cfg, family="binomial")
    y = np.asarray(y01, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binomial response must be coded 0/1")
    if y.min() == y.max():
        raise DegenerateInputError("binomial response has a single class")
    return _fit_path(as_view(x), y, cfg)


class _GaussianProblem:
    """Residual state and inner solver for squared-error loss."""

    def __init__(self, view, y, stats):
        self.view, self.stats = view, stats
        self.ybar = float(np.mean(y))
        self.r = y - self.ybar
        self.rsum = np.array([float(self.r.sum())])

    def gradient_residual(self):
        return self.r, self.rsum[0]

    def solve(self, cols, beta, lam, alpha, cfg):
        return _gauss_cd(self.view.data, self.view.row_index, cols, beta,
                         self.stats.c, self.stats.s, self.r, self.rsum,
                         lam, alpha, cfg.tol, cfg.max_iter)

    def intercept(self, beta):
        nz = np.flatnonzero(beta)
        return self.ybar - float(np.dot(beta[nz] / self.stats.s[nz], self.stats.c[nz]))

    def objective(self, beta, lam, alpha):
        n = self.view.n
        return float(np.dot(self.r, self.r)) / (2 * n) + penalty(beta, lam, alpha)


class _BinomialProblem:
    """IRLS outer loop around weighted coordinate descent."""

    def __init__(self, view, y, stats, weights="exact"):
        self.view, self.stats, self.y = view, stats, y
        ybar = float(np.mean(y))
        self.b0 = np.array([math.log(ybar / (1 - ybar))])
        self.weights = weights
        n = view.n
        self.eta = np.empty(n)
        self.resid = y - ybar
        self.v = np.zeros(stats.p)
        self._rsum = float(self.resid.sum())

    def _refresh(self, beta):
        cols = np.flatnonzero(beta)
        s, c = self.stats.s, self.stats.c
        coef = beta[cols] / s[cols]
        offset = self.b0[0] - float(np.dot(coef, c[cols]))
        _linear_predictor(self.view.data, self.view.row_index, cols, coef, offset, self.eta)
        prob = 1.0 / (1.0 + np.exp(-self.eta))
        np.clip(prob, PROB_CLAMP, 1 - PROB_CLAMP, out=prob)
        return prob

    def gradient_residual(self):
        return self.resid, self._rsum

    def solve(self, cols, beta, lam, alpha, cfg):
        total = 0
        view = self.view
        while True:
            if total >= cfg.max_iter:
                return -total
            prob = self._refresh(beta)
            if self.weights == "exact":
                w = prob * (1 - prob)
            else:
                w = np.full(view.n, 0.25)
            rw = self.y - prob
            sums = np.array([float(rw.sum()), float(w.sum())])
            _weighted_var(view.data, view.row_index, cols, self.stats.c, self.stats.s, w, self.v)
            old = beta[cols].copy()
            old_b0 = self.b0[0]
            it = _weighted_cd(view.data, view.row_index, cols, beta, self.b0,
                              self.stats.c, self.stats.s, self.v, w, rw, sums,
                              lam, alpha, cfg.tol, cfg.max_iter - total)
            if it < 0:
                return -(total - it)
            total += it
            change = max(np.max(np.abs(beta[cols] - old), initial=0.0), abs(self.b0[0] - old_b0))
            if change < cfg.tol:
                break
        prob = self._refresh(beta)
        self.resid = self.y - prob
        self._rsum = float(self.resid.sum())
        return total

    def intercept(self, beta):
        nz = np.flatnonzero(beta)
        return self.b0[0] - float(np.dot(beta[nz] / self.stats.s[nz], self.stats.c[nz]))


def _fit_path(view: MatrixView, y, cfg: FitConfig) -> PathFit:
    t0 = time.perf_counter()
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (view.n,):
        raise ValueError(f"response has length {y.shape[0]}, matrix view has {view.n} rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    pool = ColumnPool(cfg.workers)
    try:
        return _run_path(view, y, cfg, pool, t0)
    finally:
        pool.close()


def _run_path(view, y, cfg, pool, t0):
    family, alpha = cfg.family, cfg.alpha
    policy = cfg.policy
    if cfg.screen_policy in ("bedpp", "hybrid") and policy == "ssr":
        log.info("BEDPP needs the gaussian lasso; screening with SSR only")
    stats = compute_column_stats(view, pool)
    lmax = lambda_max(view, y, stats, family, alpha, pool)
    lambdas = np.array(cfg.lambdas) if cfg.lambdas is not None else lambda_path(lmax, cfg)
    K, p, n = len(lambdas), stats.p, stats.n
    kkt_tol = cfg.kkt_tol if cfg.kkt_tol is not None else cfg.tol * min(1.0, lmax)
    t_setup = time.perf_counter() - t0

    use_bedpp = policy in ("bedpp", "hybrid")
    cache = BedppCache.from_stats(stats, y - y.mean()) if use_bedpp else None
    state = ScreenState.initial(stats, use_bedpp)
    if family == "gaussian":
        prob = _GaussianProblem(view, y, stats)
        if cfg.debug:
            prob.solve = _debug_gauss_solve(prob)
    else:
        prob = _BinomialProblem(view, y, stats, cfg.binomial_weights)
    beta = np.zeros(p)
    active = stats.active_flags
    rec = _PathRecorder(p, K)
    diag = _Diagnostics(cfg.diagnostics, p)

    def refresh(cols):
        r, rsum = prob.gradient_residual()
        std_dot_xr_scatter(view, cols, r, rsum, stats, 1.0 / n, state.z_prev, pool=pool)

    lam_prev = lmax
    for k, lam in enumerate(lambdas):
        if lam >= lmax:
            rec.record(k, beta, prob.intercept(beta), stats, 0, 0, 0)
            at_max = _at_max(stats)
            diag.record(at_max if use_bedpp else active, at_max,
                        _null_pcts(policy, p) if cfg.diagnostics else None)
            continue
        pcts = None
        if cfg.diagnostics:
            pcts = _rule_pcts(policy, cache, state, lam, lam_prev, alpha, beta, active,
                              refresh, p)
        if policy == "hybrid":
            safe, strong = hybrid_filter(state, cache, lam, lam_prev, alpha=alpha,
                                         family=family, beta=beta, refresh=refresh)
            scope = safe
        elif policy == "bedpp":
            if state.bedpp_enabled:
                bedpp_filter(cache, lam, out=state.safe)
            else:
                state.safe[:] = active
            state.strong[:] = state.safe
            safe = strong = state.safe
            scope = safe
        elif policy == "ssr":
            refresh_stale(state, active, refresh)
            state.safe[:] = active
            state.strong[:] = ssr_filter(state.z_prev, lam, lam_prev, alpha, active, beta)
            safe, strong, scope = state.safe, state.strong, active
        else:
            state.safe[:] = active
            state.strong[:] = active
            safe, strong, scope = state.safe, state.strong, active
        diag.record(safe, strong, pcts)

        iters = 0
        rounds = 0
        while True:
            cols = np.flatnonzero(strong)
            it = prob.solve(cols, beta, lam, alpha, cfg)
            if it < 0:
                raise ConvergenceError(
                    f"coordinate descent did not converge at lambda={lam:.6g} "
                    f"within {cfg.max_iter} iterations", lam=lam,
                )
            iters += it
            r, rsum = prob.gradient_residual()
            viol, _ = kkt_check(view, r, rsum, stats, beta, scope, strong, lam, alpha,
                                kkt_tol, state=state, pool=pool)
            if viol.size == 0:
                break
            rounds += 1
            if rounds > MAX_KKT_ROUNDS:
                raise ConvergenceError(
                    f"KKT violations persist after {MAX_KKT_ROUNDS} re-solves at "
                    f"lambda={lam:.6g}", lam=lam,
                )
            strong[viol] = True
        rec.record(k, beta, prob.intercept(beta), stats, iters, rounds, int(scope.sum()))
        lam_prev = lam

    return PathFit(
        family=family, alpha=alpha, lambdas=np.asarray(lambdas, dtype=np.float64),
        lambda_max=float(lmax), intercepts=rec.intercepts, coefs=rec.coefs(),
        n_iters=rec.n_iters, n_kkt_rounds=rec.rounds, cols_scanned=rec.scanned,
        center=stats.c, scale=stats.s, n=n, tol=cfg.tol, policy=policy,
        col_names=view.col_names,
        timings={"setup": t_setup, "total": time.perf_counter() - t0},
        diagnostics=diag.as_dict(),
    )


def refresh_stale(state, scope, refresh):
    stale = np.flatnonzero(scope & ~state.z_fresh)
    if stale.size:
        refresh(stale)
        state.z_fresh[stale] = True


def _at_max(stats):
    m = np.zeros(stats.p, dtype=np.bool_)
    if stats.star_index >= 0:
        m[stats.star_index] = True
    return m


def _null_pcts(policy, p):
    # at lambda_max every rule keeps only the argmax column
    pct = 100.0 * (p - 1) / p
    return {
        "pct_bedpp": pct if policy in ("bedpp", "hybrid") else 0.0,
        "pct_ssr": pct if policy in ("ssr", "hybrid") else 0.0,
        "pct_hybrid": pct if policy == "hybrid" else 0.0,
    }


def _rule_pcts(policy, cache, state, lam, lam_prev, alpha, beta, active, refresh, p):
    """What each rule in the policy would discard at ``lam`` on its own."""
    out = {"pct_bedpp": 0.0, "pct_ssr": 0.0, "pct_hybrid": 0.0}
    if policy in ("bedpp", "hybrid"):
        safe = bedpp_filter(cache, lam)
        out["pct_bedpp"] = 100.0 * (p - safe.sum()) / p
    if policy in ("ssr", "hybrid"):
        refresh_stale(state, active, refresh)
        strong = ssr_filter(state.z_prev, lam, lam_prev, alpha, active, beta)
        out["pct_ssr"] = 100.0 * (p - strong.sum()) / p
        if policy == "hybrid":
            both = strong & (safe if state.bedpp_enabled else active)
            out["pct_hybrid"] = 100.0 * (p - both.sum()) / p
    return out


def _debug_gauss_solve(prob):
    """Sweep-by-sweep solver asserting the objective never increases."""

    def solve(cols, beta, lam, alpha, cfg):
        view, st = prob.view, prob.stats
        n = view.n
        l1, denom = lam * alpha, 1.0 + lam * (1.0 - alpha)
        last = prob.objective(beta, lam, alpha)
        for it in range(1, cfg.max_iter + 1):
            maxd = _gauss_sweep(view.data, view.row_index, cols, beta, st.c, st.s,
                                prob.r, prob.rsum, l1, denom, n)
            now = prob.objective(beta, lam, alpha)
            if now > last + 1e-12 * max(1.0, abs(last)):
                raise AssertionError(f"objective increased {last!r} -> {now!r} at lambda={lam}")
            last = now
            if maxd < cfg.tol:
                return it
        return -cfg.max_iter

    return solve


# ---------------------------------------------------------------------------
# prediction


PREDICT_KINDS = ("link", "response", "class", "nvars", "vars", "coefficients")


def predict(fit: PathFit, x=None, lam=None, kind="link", exact=False):
    """Predictions or coefficient summaries at (the path point nearest) ``lam``.

    ``x`` (matrix or view) is needed for ``link``, ``response`` and ``class``.
    ``lam=None`` uses every path point and returns one column per lambda for
    the row-wise kinds.
    """
    if kind not in PREDICT_KINDS:
        raise ValueError(f"kind must be one of {PREDICT_KINDS}")
    ks = range(len(fit.lambdas)) if lam is None else [fit.lambda_index(lam, exact)]
    if kind in ("link", "response", "class"):
        if x is None:
            raise ValueError(f"kind={kind!r} needs a feature matrix")
        view = as_view(x)
        if view.p != fit.p:
            raise ValueError(f"matrix has {view.p} columns, fit has {fit.p}")
        eta = np.column_stack([linear_predictor(fit, view, k) for k in ks])
        if kind == "link":
            out = eta
        elif fit.family == "gaussian":
            if kind == "class":
                raise ValueError("class predictions need the binomial family")
            out = eta
        else:
            out = 1.0 / (1.0 + np.exp(-eta))
            if kind == "class":
                out = (out >= 0.5).astype(np.int64)
        return out[:, 0] if lam is not None else out
    if kind == "nvars":
        counts = np.array([fit.coefs[:, [k]].nnz for k in ks])
        return int(counts[0]) if lam is not None else counts
    if kind == "vars":
        res = []
        for k in ks:
            idx = fit.coefs[:, [k]].tocoo().row
            idx = np.sort(idx)
            names = fit.col_names or tuple(f"V{j + 1}" for j in range(fit.p))
            res.append({names[j]: int(j) for j in idx})
        return res[0] if lam is not None else res
    res = [np.concatenate([[fit.intercepts[k]], fit.coef_column(k)]) for k in ks]
    return res[0] if lam is not None else np.column_stack(res)
