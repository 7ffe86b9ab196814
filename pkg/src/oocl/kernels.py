"""Cell-wise standardization arithmetic.

The standardized matrix ``x~_ij = (x_ij - c_j) / s_j`` is never formed. Every
quantity the solver needs is obtained from raw column sums through three
identities::

    x~_j . x~_k = (sum_i x_ij x_ik - n c_j c_k) / (s_j s_k)
    x~_j . y    = (sum_i x_ij y_i  - c_j sum_i y_i) / s_j
    x~_j . r    = (sum_i x_ij r_i  - c_j sum_i r_i) / s_j

``s_j`` uses the population convention ``sqrt(sum_i (x_ij - c_j)^2 / n)`` so
that ``x~_j . x~_j = n``. Users who standardize with the sample SD will see a
rescaled lambda path.

All column kernels take the full ``(n_rows, p)`` array plus the view's row
index and gather on the fly; none of them allocates anything proportional to
``n * p``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bigmat import MatrixView

__all__ = [
    "ColumnPool",
    "ColumnStats",
    "ResidualState",
    "compute_column_stats",
    "prepare_screening",
    "std_dot_xr",
    "std_dot_xr_cols",
    "std_dot_xr_scatter",
    "std_dot_xx",
    "std_dot_xy",
]


# --------------------------------------------------------------------------
# numba column kernels; `out` arrays are aligned with `cols`


@njit(nogil=True, cache=True)
def _moments_cols(data, rows, cols, c_out, s_out):
    n = rows.shape[0]
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        for i in range(n):
            acc += data[rows[i], j]
        c = acc / n
        ss = 0.0
        for i in range(n):
            d = data[rows[i], j] - c
            ss += d * d
        c_out[k] = c
        s_out[k] = math.sqrt(ss / n)


@njit(nogil=True, cache=True)
def _dot_cols(data, rows, cols, v, out):
    n = rows.shape[0]
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        for i in range(n):
            acc += data[rows[i], j] * v[i]
        out[k] = acc


@njit(nogil=True, cache=True)
def _xty_kahan(data, rows, cols, v, v_sum, c, s, out):
    # out[j] = x~_j . v, indexed by column id
    n = rows.shape[0]
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        comp = 0.0
        for i in range(n):
            term = data[rows[i], j] * v[i] - comp
            t = acc + term
            comp = (t - acc) - term
            acc = t
        out[j] = (acc - c[j] * v_sum) / s[j]


@njit(nogil=True, cache=True)
def _cross_kahan(data, rows, cols, star, c, s, out):
    # out[j] = x~_j . x~_star, indexed by column id
    n = rows.shape[0]
    shift = n * c[star]
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        comp = 0.0
        for i in range(n):
            term = data[rows[i], j] * data[rows[i], star] - comp
            t = acc + term
            comp = (t - acc) - term
            acc = t
        out[j] = (acc - shift * c[j]) / (s[j] * s[star])


@njit(nogil=True, cache=True)
def _xr_cols(data, rows, cols, r, r_sum, c, s, out):
    n = rows.shape[0]
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        for i in range(n):
            acc += data[rows[i], j] * r[i]
        out[k] = (acc - c[j] * r_sum) / s[j]


@njit(nogil=True, cache=True)
def _xr_scatter(data, rows, cols, r, r_sum, c, s, scale, out):
    # out is indexed by column id, not by position in cols
    n = rows.shape[0]
    for k in range(cols.shape[0]):
        j = cols[k]
        acc = 0.0
        for i in range(n):
            acc += data[rows[i], j] * r[i]
        out[j] = scale * ((acc - c[j] * r_sum) / s[j])


@njit(nogil=True, cache=True)
def _residual_update(data, rows, j, delta, c_j, s_j, r):
    # r <- r - delta * x~_j ; returns the change applied to sum(r)
    scale = delta / s_j
    shift = scale * c_j
    xsum = 0.0
    for i in range(rows.shape[0]):
        x = data[rows[i], j]
        xsum += x
        r[i] -= scale * x - shift
    return -(scale * xsum - shift * rows.shape[0])


# --------------------------------------------------------------------------


class ColumnPool:
    """Fan a column kernel out over contiguous chunks of a column list.

    Each chunk writes only its own slice of the output arrays and every column
    is reduced serially inside one thread, so results are bitwise identical for
    any worker count. ``workers=1`` runs inline.
    """

    def __init__(self, workers: int = 1, min_chunk: int = 256):
        self.workers = max(1, int(workers))
        self.min_chunk = min_chunk
        self._executor = None

    def _chunks(self, m):
        n_chunks = min(self.workers, max(1, m // self.min_chunk))
        bounds = np.linspace(0, m, n_chunks + 1).astype(np.int64)
        return list(zip(bounds[:-1], bounds[1:]))

    def run(self, fn, data, rows, cols, args, outs):
        chunks = self._chunks(len(cols))
        if len(chunks) == 1:
            fn(data, rows, cols, *args, *outs)
            return
        if self._executor is None:
            self._executor = ThreadPoolExecutor(self.workers)
        futures = [
            self._executor.submit(fn, data, rows, cols[a:b], *args, *(o[a:b] for o in outs))
            for a, b in chunks
        ]
        for f in futures:
            f.result()

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_SERIAL = ColumnPool(1)


@dataclass
class ColumnStats:
    """Per-column centering/scaling plus the one-time screening products.

    ``xty`` and ``xtx_star`` are filled by :func:`prepare_screening`; entries
    for inactive (zero-variance) columns are 0.
    """

    n: int
    c: np.ndarray
    s: np.ndarray
    active_flags: np.ndarray
    xty: np.ndarray | None = None
    xtx_star: np.ndarray | None = None
    star_index: int = -1

    @property
    def p(self) -> int:
        return self.c.shape[0]

    @property
    def active_cols(self) -> np.ndarray:
        return np.flatnonzero(self.active_flags)

    def require_active(self, *cols):
        for j in cols:
            if not self.active_flags[j]:
                raise ValueError(f"column {j} has zero variance")


def compute_column_stats(view: MatrixView, pool: ColumnPool | None = None) -> ColumnStats:
    """Means and population scales of every column, one streaming pass each."""
    n = view.n
    if n < 2:
        raise ValueError(f"need at least 2 rows, got {n}")
    pool = pool or _SERIAL
    p = view.p
    c = np.empty(p)
    s = np.empty(p)
    cols = np.arange(p, dtype=np.int64)
    pool.run(_moments_cols, view.data, view.row_index, cols, (), (c, s))
    # rounding noise on a constant column must not make it "active"
    tiny = 1e-12 * np.maximum(np.abs(c), 1.0)
    s[s <= tiny] = 0.0
    return ColumnStats(n, c, s, s > 0)


def prepare_screening(view: MatrixView, y_centered, stats: ColumnStats, pool=None) -> None:
    """One-time pass filling ``xty``, ``star_index`` and ``xtx_star``.

    ``y_centered`` must sum to zero (up to rounding); compensated summation is
    used for both products.
    """
    pool = pool or _SERIAL
    y_centered = np.ascontiguousarray(y_centered, dtype=np.float64)
    cols = stats.active_cols
    y_sum = math.fsum(y_centered)

    # kernels scatter by column id, so no |cols|-sized temporaries are needed
    xty = np.zeros(stats.p)
    pool.run(_xty_kahan, view.data, view.row_index, cols,
             (y_centered, y_sum, stats.c, stats.s, xty), ())
    star = int(np.argmax(np.abs(xty))) if cols.size else -1
    xtx_star = np.zeros(stats.p)
    if star >= 0:
        pool.run(_cross_kahan, view.data, view.row_index, cols,
                 (star, stats.c, stats.s, xtx_star), ())
    stats.xty = xty
    stats.xtx_star = xtx_star
    stats.star_index = star


def std_dot_xx(j: int, k: int, stats: ColumnStats, raw_dot: float, n: int) -> float:
    stats.require_active(j, k)
    return (raw_dot - n * stats.c[j] * stats.c[k]) / (stats.s[j] * stats.s[k])


def std_dot_xy(view: MatrixView, j: int, y, stats: ColumnStats) -> float:
    stats.require_active(j)
    y = np.ascontiguousarray(y, dtype=np.float64)
    out = np.empty(1)
    _dot_cols(view.data, view.row_index, np.array([j], dtype=np.int64), y, out)
    return (out[0] - stats.c[j] * y.sum()) / stats.s[j]


class ResidualState:
    """Residual vector on a view with its running sum.

    ``r_sum`` is updated incrementally by :meth:`update`, which is what lets
    :func:`std_dot_xr` avoid a second pass over ``r``.
    """

    def __init__(self, r):
        self.r = np.array(r, dtype=np.float64)
        self.r_sum = float(self.r.sum())

    @property
    def n(self) -> int:
        return self.r.shape[0]

    def update(self, view: MatrixView, stats: ColumnStats, j: int, delta: float) -> None:
        """Apply ``r <- r - delta * x~_j``."""
        self.r_sum += _residual_update(
            view.data, view.row_index, j, delta, stats.c[j], stats.s[j], self.r
        )

    def sum_error(self) -> float:
        return abs(self.r_sum - self.r.sum())


def std_dot_xr(view: MatrixView, j: int, res: ResidualState, stats: ColumnStats) -> float:
    stats.require_active(j)
    out = np.empty(1)
    _xr_cols(view.data, view.row_index, np.array([j], dtype=np.int64),
             res.r, res.r_sum, stats.c, stats.s, out)
    return out[0]


def std_dot_xr_cols(view, cols, r, r_sum, stats, out=None, pool=None) -> np.ndarray:
    """``x~_j . r`` for every column in ``cols`` (all must be active)."""
    pool = pool or _SERIAL
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    if out is None:
        out = np.empty(cols.shape[0])
    if cols.shape[0]:
        pool.run(_xr_cols, view.data, view.row_index, cols,
                 (r, float(r_sum), stats.c, stats.s), (out,))
    return out


def std_dot_xr_scatter(view, cols, r, r_sum, stats, scale, out, pool=None) -> None:
    """Write ``scale * x~_j . r`` into ``out[j]`` for ``j`` in ``cols``.

    Avoids a |cols|-sized temporary; used by the KKT scan.
    """
    pool = pool or _SERIAL
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    if cols.shape[0]:
        pool.run(_xr_scatter, view.data, view.row_index, cols,
                 (r, float(r_sum), stats.c, stats.s, float(scale), out), ())
