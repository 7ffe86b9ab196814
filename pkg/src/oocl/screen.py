"""Feature screening: sequential strong rule, basic EDPP safe rule, their hybrid,
and the post-convergence KKT scan.

Internally the gaussian lasso is written as ``1/2 ||y~ - X~ b||^2 + lam' ||b||_1``
with ``lam' = n * lam``; BEDPP is evaluated in that scaling. Because
``x~_j . theta`` only ever involves ``x~_j . y~`` and ``x~_j . x~_*``, the safe
rule costs O(p) per lambda once those two vectors exist.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateInputError, PolicyError
from .kernels import ColumnStats, std_dot_xr_scatter

POLICIES = ("none", "ssr", "bedpp", "hybrid")

# BEDPP keeps a feature when |x~_j . theta| is within this much of the bound;
# guards the strict inequality against rounding.
_BEDPP_SLACK = 1e-9


@njit(nogil=True, cache=True)
def _ssr_mask(z, threshold, eligible, beta, out):
    for j in range(z.shape[0]):
        # NaN (never-computed z) compares False and is left to the KKT scan
        out[j] = eligible[j] and (abs(z[j]) >= threshold or beta[j] != 0.0)


@njit(nogil=True, cache=True)
def _bedpp_mask(xty, xtx_star, coef_y, coef_star, bound, active, out):
    # coef_star already carries sign(x~_*.y~)
    kept = 0
    for j in range(xty.shape[0]):
        keep = active[j] and abs(coef_y * xty[j] + coef_star * xtx_star[j]) >= bound
        out[j] = keep
        kept += keep
    return kept


@njit(nogil=True, cache=True)
def _kkt_violators(z, cols, beta, strong, use_strong, threshold):
    # two passes so only the (usually empty) result is allocated
    count = 0
    for k in range(cols.shape[0]):
        j = cols[k]
        if abs(z[j]) > threshold and beta[j] == 0.0 and not (use_strong and strong[j]):
            count += 1
    out = np.empty(count, dtype=np.int64)
    m = 0
    for k in range(cols.shape[0]):
        j = cols[k]
        if abs(z[j]) > threshold and beta[j] == 0.0 and not (use_strong and strong[j]):
            out[m] = j
            m += 1
    return out


def ssr_filter(z_prev, lam, lam_prev, alpha=1.0, eligible=None, beta=None):
    """Sequential strong rule: keep ``j`` iff ``|z_j| >= alpha (2 lam - lam_prev)``.

    ``z_prev`` holds ``x~_j . r / n`` at the previous solution. Features in
    ``beta``'s support are always kept.
    """
    if lam > lam_prev:
        raise ValueError(f"lambda must not increase along the path ({lam} > {lam_prev})")
    z_prev = np.asarray(z_prev, dtype=np.float64)
    p = z_prev.shape[0]
    eligible = np.ones(p, dtype=np.bool_) if eligible is None else eligible
    beta = np.zeros(p) if beta is None else beta
    out = np.empty(p, dtype=np.bool_)
    _ssr_mask(z_prev, alpha * (2.0 * lam - lam_prev), eligible, beta, out)
    return out


@dataclass
class BedppCache:
    """Per-fit constants of the basic EDPP rule (computed once)."""

    n: int
    lambda_max_p: float
    star_index: int
    xty: np.ndarray
    xtx_star: np.ndarray
    star_sign: float
    y_norm2: float
    active_flags: np.ndarray

    @classmethod
    def from_stats(cls, stats: ColumnStats, y_centered) -> "BedppCache":
        if stats.xty is None:
            raise ValueError("prepare_screening must run before building the BEDPP cache")
        lmp = abs(stats.xty[stats.star_index]) if stats.star_index >= 0 else 0.0
        if not lmp > 0.0:
            raise DegenerateInputError("lambda_max is 0; BEDPP is undefined")
        star_sign = math.copysign(1.0, stats.xty[stats.star_index])
        return cls(
            n=stats.n,
            lambda_max_p=lmp,
            star_index=stats.star_index,
            xty=stats.xty,
            xtx_star=stats.xtx_star,
            star_sign=star_sign,
            y_norm2=math.fsum(np.square(y_centered)),
            active_flags=stats.active_flags,
        )

    @property
    def lambda_max(self) -> float:
        return self.lambda_max_p / self.n


def bedpp_filter(cache: BedppCache, lam, *, family="gaussian", alpha=1.0, out=None):
    """Safe set of the basic EDPP rule at ``lam`` (user scale, ``lam' = n lam``).

    With ``theta0 = y~/lam'_max``, ``v1 = sign(x~_*.y~) x~_*``,
    ``v2 = y~/lam' - theta0`` and ``v2perp`` its component orthogonal to ``v1``,
    feature ``j`` is discarded iff
    ``|x~_j.(theta0 + v2perp/2)| < 1 - ||v2perp|| sqrt(n) / 2``.
    """
    if family != "gaussian" or alpha != 1.0:
        raise PolicyError("BEDPP applies to the gaussian lasso (alpha = 1) only")
    n = cache.n
    lmp = cache.lambda_max_p
    lam_p = n * lam
    if lam_p <= 0:
        raise ValueError("lambda must be positive")
    if lam_p > lmp * (1 + 1e-12):
        raise ValueError(f"lambda {lam} exceeds lambda_max {cache.lambda_max}")
    a = max(1.0 / lam_p - 1.0 / lmp, 0.0)
    # x~_j.(theta0 + v2perp/2) = coef_y x~_j.y~ + coef_star sign x~_j.x~_*
    coef_y = 1.0 / lmp + 0.5 * a
    coef_star = -0.5 * a * lmp / n * cache.star_sign
    v2perp_norm = math.sqrt(max(a * a * cache.y_norm2 - (a * lmp) ** 2 / n, 0.0))
    bound = 1.0 - 0.5 * v2perp_norm * math.sqrt(n) - _BEDPP_SLACK
    if out is None:
        out = np.empty(cache.xty.shape[0], dtype=np.bool_)
    _bedpp_mask(cache.xty, cache.xtx_star, coef_y, coef_star, bound, cache.active_flags, out)
    return out


@dataclass
class ScreenState:
    """Screening masks carried along the path.

    ``z_prev[j]`` is ``x~_j . r / n`` at the last solution for which column
    ``j`` was scanned; ``z_fresh`` marks which entries belong to that solution.
    """

    safe: np.ndarray
    strong: np.ndarray
    z_prev: np.ndarray
    z_fresh: np.ndarray
    bedpp_enabled: bool = False
    bedpp_zero_streak: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, stats: ColumnStats, bedpp: bool) -> "ScreenState":
        p = stats.p
        z = np.zeros(p)
        if stats.xty is not None:
            z[:] = stats.xty / stats.n
        return cls(
            safe=stats.active_flags.copy(),
            strong=np.zeros(p, dtype=np.bool_),
            z_prev=z,
            z_fresh=stats.active_flags.copy(),
            bedpp_enabled=bedpp,
        )

    def active_set(self, beta) -> np.ndarray:
        return beta != 0.0


def hybrid_filter(state: ScreenState, cache: BedppCache, lam, lam_prev, *,
                  alpha=1.0, family="gaussian", beta=None, refresh=None):
    """SSR restricted to the BEDPP safe set; updates ``state.safe/strong``.

    ``refresh(cols)`` is called for safe columns whose ``z_prev`` is stale (they
    were outside the previous scan scope) and must write fresh values into
    ``state.z_prev``. Without it such columns are left out of the strong set
    and the KKT scan picks them up. Outside the gaussian lasso the rule
    degrades to plain SSR over all active columns.
    """
    active = cache.active_flags
    p = active.shape[0]
    beta = np.zeros(p) if beta is None else beta
    if state.bedpp_enabled and family == "gaussian" and alpha == 1.0:
        bedpp_filter(cache, lam, out=state.safe)
        if state.safe.sum() == active.sum():
            state.bedpp_zero_streak += 1
            if state.bedpp_zero_streak >= 2:
                state.bedpp_enabled = False
        else:
            state.bedpp_zero_streak = 0
    else:
        state.safe[:] = active
    if refresh is not None:
        stale = np.flatnonzero(state.safe & ~state.z_fresh)
        if stale.size:
            refresh(stale)
            state.z_fresh[stale] = True
    else:
        state.z_prev[state.safe & ~state.z_fresh] = np.nan
    _ssr_mask(state.z_prev, alpha * (2.0 * lam - lam_prev), state.safe, beta, state.strong)
    return state.safe, state.strong


def kkt_check(view, r, r_sum, stats, beta, scope, strong, lam, alpha, tol, state=None, pool=None):
    """Scan ``scope`` at the current solution and return KKT violators.

    Every scope column gets ``z_j = x~_j . r / n`` (written to ``state.z_prev``
    when a state is given, so the scan doubles as the next SSR input). A
    column violates when it is outside ``strong``, has ``beta_j = 0`` and
    ``|z_j| > alpha lam + tol``. Returns ``(violators, z)``; an empty
    violator array certifies the solution on ``scope``.
    """
    p = stats.p
    cols = np.flatnonzero(scope)
    if state is not None:
        z = state.z_prev
        state.z_fresh[:] = False
        state.z_fresh[cols] = True
    else:
        z = np.full(p, np.nan)
    std_dot_xr_scatter(view, cols, r, r_sum, stats, 1.0 / stats.n, z, pool=pool)
    use_strong = strong is not None
    if not use_strong:
        strong = np.zeros(1, dtype=np.bool_)
    return _kkt_violators(z, cols, beta, strong, use_strong, alpha * lam + tol), z


def rejection_stats(fit):
    """Per-lambda percentages of features discarded by each rule.

    Returns a list of dicts with keys ``lambda_ratio, pct_bedpp, pct_ssr,
    pct_hybrid``. Rules that were not part of the fit's policy report 0.
    """
    diag = fit.diagnostics
    if not diag or "pct_bedpp" not in diag:
        raise ValueError("fit was run without screening diagnostics")
    lmax = fit.lambda_max
    rows = []
    for k, lam in enumerate(fit.lambdas):
        rows.append({
            "lambda_ratio": lam / lmax,
            "pct_bedpp": diag["pct_bedpp"][k],
            "pct_ssr": diag["pct_ssr"][k],
            "pct_hybrid": diag["pct_hybrid"][k],
        })
    return rows


def write_rejection_csv(rows, path) -> None:
    fields = ["lambda_ratio", "pct_bedpp", "pct_ssr", "pct_hybrid"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(row[k])) for k in fields})
