"""Coordinate-form sparse matrices with entity-labeled rows and columns.

These matrices hold the observed data: the user-item rating matrix and the
per-source user-attribute / item-attribute matrices. Membership of a
coordinate is the indicator function deciding which cells contribute to the
loss and gradients. All instances are immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from .entities import EntityId, ITEM_NAMESPACE, USER_NAMESPACE, attribute_namespace
from .errors import DuplicateCoordinateError, NonFiniteValueError


class SparseMatrix:
    """Immutable sparse matrix in coordinate form.

    Entries keep their construction order; every iteration order in the
    package derives from it, which is what makes training runs reproducible.
    """

    def __init__(
        self,
        row_labels: Sequence[EntityId],
        col_labels: Sequence[EntityId],
        rows: np.ndarray,
        cols: np.ndarray,
        values: np.ndarray,
    ):
        self.row_labels: tuple[EntityId, ...] = tuple(row_labels)
        self.col_labels: tuple[EntityId, ...] = tuple(col_labels)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if not (len(self.rows) == len(self.cols) == len(self.values)):
            raise ValueError("rows, cols and values must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValueError("sparse matrix values must be finite")
        if len(self.rows) and (
            self.rows.min() < 0
            or self.rows.max() >= self.n_rows
            or self.cols.min() < 0
            or self.cols.max() >= self.n_cols
        ):
            raise ValueError("coordinate out of bounds")
        seen: set[tuple[int, int]] = set()
        for r, c in zip(self.rows.tolist(), self.cols.tolist()):
            if (r, c) in seen:
                raise DuplicateCoordinateError(
                    self.row_labels[r].key, self.col_labels[c].key
                )
            seen.add((r, c))
        self._coords = seen
        self._row_index = {lbl: i for i, lbl in enumerate(self.row_labels)}
        self._col_index = {lbl: j for j, lbl in enumerate(self.col_labels)}
        if len(self._row_index) != len(self.row_labels):
            raise ValueError("row labels are not unique")
        if len(self._col_index) != len(self.col_labels):
            raise ValueError("column labels are not unique")

    @property
    def n_rows(self) -> int:
        return len(self.row_labels)

    @property
    def n_cols(self) -> int:
        return len(self.col_labels)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def has(self, row: int, col: int) -> bool:
        """Indicator function: True iff coordinate (row, col) is observed."""
        return (row, col) in self._coords

    def has_keys(self, row_label: EntityId, col_label: EntityId) -> bool:
        i = self._row_index.get(row_label)
        j = self._col_index.get(col_label)
        return i is not None and j is not None and (i, j) in self._coords

    def row_position(self, label: EntityId) -> int | None:
        return self._row_index.get(label)

    def col_position(self, label: EntityId) -> int | None:
        return self._col_index.get(label)

    def entries(self) -> Iterator[tuple[int, int, float]]:
        """Observed entries in construction order."""
        for r, c, v in zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()):
            yield r, c, v

    @cached_property
    def row_counts(self) -> np.ndarray:
        """Number of observed entries per row."""
        return np.bincount(self.rows, minlength=self.n_rows)

    @cached_property
    def col_counts(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.n_cols)

    @cached_property
    def csr_template(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(permutation, indices, indptr) mapping entry order to CSR order."""
        order = np.lexsort((self.cols, self.rows))
        indices = self.cols[order]
        indptr = np.concatenate(
            ([0], np.cumsum(np.bincount(self.rows, minlength=self.n_rows)))
        ).astype(np.int64)
        return order, indices, indptr

    @cached_property
    def csc_template(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(permutation, indices, indptr) mapping entry order to CSC order."""
        order = np.lexsort((self.rows, self.cols))
        indices = self.rows[order]
        indptr = np.concatenate(
            ([0], np.cumsum(np.bincount(self.cols, minlength=self.n_cols)))
        ).astype(np.int64)
        return order, indices, indptr

    def restrict_to(self, keep: np.ndarray) -> "SparseMatrix":
        """Matrix with the same labels but only the entries selected by `keep`."""
        return SparseMatrix(
            self.row_labels,
            self.col_labels,
            self.rows[keep],
            self.cols[keep],
            self.values[keep],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.row_labels == other.row_labels
            and self.col_labels == other.col_labels
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):  # identity-based; instances are unique data holders
        return id(self)

    def __repr__(self) -> str:
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


def build_sparse(
    triples: Iterable[tuple[str, str, float]],
    row_namespace: str,
    col_namespace: str,
) -> SparseMatrix:
    """Assemble a sparse matrix from (row_key, col_key, value) triples.

    Labels are assigned in order of first appearance; duplicate coordinates
    and non-finite values are rejected.
    """
    row_labels: list[EntityId] = []
    col_labels: list[EntityId] = []
    row_index: dict[EntityId, int] = {}
    col_index: dict[EntityId, int] = {}
    rows: list[int] = []
    cols: list[int] = []
    values: list[float] = []
    for row_key, col_key, value in triples:
        value = float(value)
        if not np.isfinite(value):
            raise NonFiniteValueError(
                f"non-finite value at ({row_key!r}, {col_key!r}): {value}"
            )
        rl = EntityId(row_namespace, row_key)
        cl = EntityId(col_namespace, col_key)
        if rl not in row_index:
            row_index[rl] = len(row_labels)
            row_labels.append(rl)
        if cl not in col_index:
            col_index[cl] = len(col_labels)
            col_labels.append(cl)
        rows.append(row_index[rl])
        cols.append(col_index[cl])
        values.append(value)
    return SparseMatrix(
        row_labels,
        col_labels,
        np.array(rows, dtype=np.int64),
        np.array(cols, dtype=np.int64),
        np.array(values, dtype=np.float64),
    )


@dataclass(frozen=True)
class RatingDataset:
    """The user-item rating matrix together with its rating scale."""

    matrix: SparseMatrix
    scale_lo: float
    scale_hi: float

    def __post_init__(self):
        if not self.scale_lo < self.scale_hi:
            raise ValueError("scale_lo must be strictly below scale_hi")
        v = self.matrix.values
        if len(v) and (v.min() < self.scale_lo or v.max() > self.scale_hi):
            raise ValueError("rating outside the declared scale")

    @property
    def users(self) -> tuple[EntityId, ...]:
        return self.matrix.row_labels

    @property
    def items(self) -> tuple[EntityId, ...]:
        return self.matrix.col_labels


class SourceKind(enum.Enum):
    USER = "user"
    ITEM = "item"


@dataclass(frozen=True)
class SourceMatrix:
    """One data source: a user-attribute or item-attribute matrix.

    Rows are the described entities (users for USER sources, items for ITEM
    sources) and columns are the source's own attributes. Row keys may
    overlap the global user/item namespaces partially or not at all.
    """

    kind: SourceKind
    index: int
    matrix: SparseMatrix

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("source index is 1-based")

    @property
    def name(self) -> str:
        return f"{self.kind.value}-source-{self.index}"


def source_from_triples(
    kind: SourceKind, index: int, triples: Iterable[tuple[str, str, float]]
) -> SourceMatrix:
    """Build a SourceMatrix, namespacing rows globally and columns per source."""
    row_ns = USER_NAMESPACE if kind is SourceKind.USER else ITEM_NAMESPACE
    col_ns = attribute_namespace(kind.value, index)
    return SourceMatrix(kind, index, build_sparse(triples, row_ns, col_ns))


@dataclass(frozen=True)
class Alignment:
    """Which source rows name the same entity as a global user/item.

    Shared positions are ordered by the global label order, so two runs of
    the alignment always agree. Empty overlap is legal.
    """

    shared_local: np.ndarray    # positions in the source's row order
    shared_global: np.ndarray   # matching positions in the global order
    shared_labels: tuple[EntityId, ...]
    nonshared_local: np.ndarray

    @property
    def shared_count(self) -> int:
        return len(self.shared_labels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Alignment):
            return NotImplemented
        return (
            self.shared_labels == other.shared_labels
            and np.array_equal(self.shared_local, other.shared_local)
            and np.array_equal(self.shared_global, other.shared_global)
            and np.array_equal(self.nonshared_local, other.nonshared_local)
        )


def align_source(
    source: SourceMatrix,
    global_users: Sequence[EntityId],
    global_items: Sequence[EntityId],
) -> Alignment:
    """Match a source's rows against the global user (or item) namespace."""
    globals_ = global_users if source.kind is SourceKind.USER else global_items
    local_of = {lbl: i for i, lbl in enumerate(source.matrix.row_labels)}
    shared_local: list[int] = []
    shared_global: list[int] = []
    shared_labels: list[EntityId] = []
    for g, lbl in enumerate(globals_):
        p = local_of.get(lbl)
        if p is not None:
            shared_local.append(p)
            shared_global.append(g)
            shared_labels.append(lbl)
    shared_set = set(shared_local)
    nonshared = [p for p in range(source.matrix.n_rows) if p not in shared_set]
    return Alignment(
        np.array(shared_local, dtype=np.int64),
        np.array(shared_global, dtype=np.int64),
        tuple(shared_labels),
        np.array(nonshared, dtype=np.int64),
    )
