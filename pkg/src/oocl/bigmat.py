"""File-backed matrices: on-disk format, descriptor codec, attachment and row views.

A matrix lives in two files sharing a prefix:

``<prefix>.bin``
    headerless float64 little-endian values in column-major order, starting at
    ``byte_offset``; element ``(i, j)`` is at ``byte_offset + 8 * (j * n_rows + i)``.
``<prefix>.desc``
    UTF-8 JSON text describing the data file (see :class:`Descriptor`).

Attached matrices are read-only memory maps, so any number of threads (or
processes) can share one attachment without copying it.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError, SizeMismatchError

FORMAT_TAG = "oocl-mat-v1"
ELEMENT_TYPE = "float64-le"
LAYOUT = "column-major"
ITEMSIZE = 8
DEFAULT_BLOCK_BYTES = 64 * 2**20

_DTYPE = np.dtype("<f8")


@dataclass(frozen=True)
class Descriptor:
    n_rows: int
    n_cols: int
    data_file: str
    byte_offset: int = 0
    col_names: tuple[str, ...] | None = None
    element_type: str = ELEMENT_TYPE
    layout: str = LAYOUT
    format_tag: str = FORMAT_TAG

    @property
    def data_bytes(self) -> int:
        return ITEMSIZE * self.n_rows * self.n_cols

    def encode(self) -> str:
        doc = {
            "format_tag": self.format_tag,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "element_type": self.element_type,
            "layout": self.layout,
            "data_file": self.data_file,
            "byte_offset": self.byte_offset,
        }
        if self.col_names is not None:
            doc["col_names"] = list(self.col_names)
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def decode(cls, text: str) -> "Descriptor":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"descriptor is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise FormatError("descriptor must be a JSON object")
        if doc.get("format_tag") != FORMAT_TAG:
            raise FormatError(f"unsupported format tag {doc.get('format_tag')!r}")
        if doc.get("element_type") != ELEMENT_TYPE:
            raise FormatError(f"unsupported element type {doc.get('element_type')!r}")
        if doc.get("layout") != LAYOUT:
            raise FormatError(f"unsupported layout {doc.get('layout')!r}")
        try:
            n_rows = int(doc["n_rows"])
            n_cols = int(doc["n_cols"])
            offset = int(doc.get("byte_offset", 0))
            data_file = str(doc["data_file"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"descriptor field missing or invalid: {exc}") from None
        if n_rows < 0 or n_cols < 0 or offset < 0:
            raise FormatError("descriptor sizes must be non-negative")
        names = doc.get("col_names")
        if names is not None:
            names = tuple(str(x) for x in names)
            if len(names) != n_cols:
                raise FormatError(f"{len(names)} column names for {n_cols} columns")
        return cls(n_rows, n_cols, data_file, offset, names)

    def write(self, path) -> None:
        Path(path).write_text(self.encode(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Descriptor":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise FileNotFoundError(f"descriptor not found: {path}") from None
        return cls.decode(text)


class FileMatrix:
    """Read-only column-major float64 matrix, usually backed by a memory map.

    ``data`` is an ``(n_rows, n_cols)`` Fortran-ordered array. For attached
    matrices it is a view of the mapping; nothing is read until touched.
    """

    def __init__(self, data: np.ndarray, data_path=None, byte_offset=0, col_names=None):
        if data.ndim != 2 or data.dtype != _DTYPE or not data.flags.f_contiguous:
            raise ValueError("FileMatrix needs a 2-d column-major float64 array")
        self.data = data
        self.data_path = None if data_path is None else Path(data_path)
        self.byte_offset = byte_offset
        self.col_names = None if col_names is None else tuple(col_names)

    @classmethod
    def from_array(cls, arr, col_names=None) -> "FileMatrix":
        """In-memory matrix with the same layout as an attached one."""
        data = np.asfortranarray(np.asarray(arr, dtype=_DTYPE))
        data.flags.writeable = False
        return cls(data, col_names=col_names)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_mapped(self) -> bool:
        return self.data_path is not None

    def __getitem__(self, idx):
        return self.data[idx]

    def column(self, j: int) -> np.ndarray:
        return self.data[:, j]

    def full_view(self) -> "MatrixView":
        return MatrixView(self, np.arange(self.n_rows, dtype=np.int64))

    def __repr__(self):
        where = self.data_path or "memory"
        return f"FileMatrix({self.n_rows}x{self.n_cols}, {where})"


@dataclass(frozen=True)
class MatrixView:
    """A matrix restricted to an increasing subset of its rows (no copy)."""

    matrix: FileMatrix
    row_index: np.ndarray = field(repr=False)

    @property
    def data(self) -> np.ndarray:
        return self.matrix.data

    @property
    def n(self) -> int:
        return len(self.row_index)

    @property
    def p(self) -> int:
        return self.matrix.n_cols

    @property
    def shape(self):
        return (self.n, self.p)

    @property
    def col_names(self):
        return self.matrix.col_names

    def column(self, j: int) -> np.ndarray:
        return self.matrix.data[self.row_index, j]

    def dense(self) -> np.ndarray:
        """Materialize the view; small matrices and tests only."""
        return self.matrix.data[self.row_index, :]


def make_view(m, rows) -> MatrixView:
    """View of ``m`` (a matrix or another view) restricted to ``rows``.

    Views of views compose: the result always points at the underlying
    :class:`FileMatrix`.
    """
    rows = np.asarray(rows)
    if rows.ndim != 1:
        raise ValueError("row index must be one-dimensional")
    if rows.size and not np.issubdtype(rows.dtype, np.integer):
        raise TypeError("row index must contain integers")
    rows = rows.astype(np.int64, copy=False)
    n = m.n if isinstance(m, MatrixView) else m.n_rows
    if rows.size:
        if rows.min() < 0 or rows.max() >= n:
            raise IndexError(f"row index out of range for {n} rows")
        if np.any(np.diff(rows) <= 0):
            raise ValueError("row index must be strictly increasing")
    if isinstance(m, MatrixView):
        return MatrixView(m.matrix, m.row_index[rows])
    return MatrixView(m, rows.copy())


def as_view(x) -> MatrixView:
    if isinstance(x, MatrixView):
        return x
    if isinstance(x, FileMatrix):
        return x.full_view()
    return FileMatrix.from_array(x).full_view()


def attach_matrix(desc_path) -> FileMatrix:
    """Map the data file named by a descriptor; contents are paged in lazily."""
    desc_path = Path(desc_path)
    desc = Descriptor.read(desc_path)
    data_path = Path(desc.data_file)
    if not data_path.is_absolute():
        data_path = desc_path.parent / data_path
    if not data_path.exists():
        raise FileNotFoundError(f"data file not found: {data_path}")
    size = data_path.stat().st_size
    need = desc.byte_offset + desc.data_bytes
    if size < need:
        raise SizeMismatchError(
            f"{data_path} holds {size} bytes; descriptor needs {need}"
        )
    if desc.data_bytes == 0:
        data = np.zeros((desc.n_rows, desc.n_cols), dtype=_DTYPE, order="F")
    else:
        data = np.memmap(
            data_path, dtype=_DTYPE, mode="r", offset=desc.byte_offset,
            shape=(desc.n_rows, desc.n_cols), order="F",
        )
        data = np.ndarray.view(data, np.ndarray)
    return FileMatrix(data, data_path, desc.byte_offset, desc.col_names)


class ColumnWriter:
    """Write a column-major data file one block of columns at a time.

    Used by :func:`setup_matrix` and the synthetic data generators so that no
    caller ever holds the whole matrix. On error the partial files are removed.
    """

    def __init__(self, out_prefix, n_rows: int, n_cols: int, col_names=None):
        self.prefix = Path(out_prefix)
        self.bin_path = self.prefix.with_name(self.prefix.name + ".bin")
        self.desc_path = self.prefix.with_name(self.prefix.name + ".desc")
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.col_names = col_names
        self._written = 0
        self._fh = None

    def __enter__(self):
        self._fh = open(self.bin_path, "wb")
        return self

    def write(self, block) -> None:
        block = np.asarray(block, dtype=_DTYPE)
        if block.ndim == 1:
            block = block[:, None]
        if block.shape[0] != self.n_rows:
            raise ValueError(f"block has {block.shape[0]} rows, expected {self.n_rows}")
        if self._written + block.shape[1] > self.n_cols:
            raise ValueError("more columns written than declared")
        self._fh.write(np.asfortranarray(block).tobytes(order="F"))
        self._written += block.shape[1]

    def __exit__(self, exc_type, exc, tb):
        try:
            self._fh.close()
        finally:
            if exc_type is not None:
                _remove(self.bin_path, self.desc_path)
                return False
        if self._written != self.n_cols:
            _remove(self.bin_path)
            raise ValueError(f"wrote {self._written} of {self.n_cols} columns")
        self.descriptor = Descriptor(
            self.n_rows, self.n_cols, self.bin_path.name, 0,
            None if self.col_names is None else tuple(self.col_names),
        )
        try:
            self.descriptor.write(self.desc_path)
        except BaseException:
            _remove(self.bin_path, self.desc_path)
            raise
        return False


def write_matrix(arr, out_prefix, col_names=None) -> Descriptor:
    """Store an in-memory array in the on-disk format."""
    arr = np.asarray(arr, dtype=_DTYPE)
    with ColumnWriter(out_prefix, arr.shape[0], arr.shape[1], col_names) as w:
        w.write(arr)
    return w.descriptor


def _remove(*paths):
    for path in paths:
        try:
            os.remove(path)
        except FileNotFoundError:
            pass


def _parse_row(cells, lineno):
    try:
        values = [float(c) for c in cells]
    except ValueError:
        for col, c in enumerate(cells):
            try:
                float(c)
            except ValueError:
                raise ParseError(
                    f"non-numeric cell {c!r} at row {lineno}, column {col + 1}",
                    row=lineno, col=col + 1,
                ) from None
    for col, v in enumerate(values):
        if not math.isfinite(v):
            raise ParseError(
                f"missing or non-finite value {cells[col]!r} at row {lineno}, column {col + 1}",
                row=lineno, col=col + 1,
            )
    return values


def _looks_like_header(cells) -> bool:
    for c in cells:
        try:
            float(c)
        except ValueError:
            return True
    return False


def setup_matrix(source, out_prefix, *, delimiter=",", block_bytes=DEFAULT_BLOCK_BYTES) -> Descriptor:
    """Convert a numeric delimited text file into ``<out_prefix>.bin/.desc``.

    Rows are first streamed into a row-major staging file, then transposed in
    column blocks of at most ``block_bytes``; working memory never depends on
    ``n_rows * n_cols``. A first row containing any non-numeric cell is taken
    as the header and becomes ``col_names``.
    """
    source = Path(source)
    prefix = Path(out_prefix)
    staging = prefix.with_name(prefix.name + ".staging")
    bin_path = prefix.with_name(prefix.name + ".bin")
    desc_path = prefix.with_name(prefix.name + ".desc")
    if not source.exists():
        raise FileNotFoundError(f"input file not found: {source}")

    col_names = None
    n_rows = 0
    n_cols = None
    try:
        with open(source, newline="", encoding="utf-8") as fh, open(staging, "wb") as out:
            reader = csv.reader(fh, delimiter=delimiter)
            for cells in reader:
                lineno = reader.line_num
                if not cells or (len(cells) == 1 and not cells[0].strip()):
                    continue
                cells = [c.strip() for c in cells]
                if n_cols is None:
                    n_cols = len(cells)
                    if _looks_like_header(cells):
                        col_names = tuple(cells)
                        continue
                elif len(cells) != n_cols:
                    raise FormatError(
                        f"row {lineno} has {len(cells)} cells, expected {n_cols}"
                    )
                out.write(np.asarray(_parse_row(cells, lineno), dtype=_DTYPE).tobytes())
                n_rows += 1
        if n_rows == 0:
            raise FormatError(f"{source} contains no data rows")

        col_block = max(1, block_bytes // (ITEMSIZE * n_rows))
        with open(bin_path, "wb") as out:
            if n_cols:
                staged = np.memmap(staging, dtype=_DTYPE, mode="r", shape=(n_rows, n_cols))
                for j0 in range(0, n_cols, col_block):
                    block = np.array(staged[:, j0:j0 + col_block], order="F")
                    out.write(block.tobytes(order="F"))
                del staged
        desc = Descriptor(n_rows, n_cols, bin_path.name, 0, col_names)
        desc.write(desc_path)
    except BaseException:
        _remove(bin_path, desc_path)
        raise
    finally:
        _remove(staging)
    return desc
