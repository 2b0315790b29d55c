"""Joint factorization objective: loss, analytic gradients, merging, prediction.

The model factorizes the rating matrix R ~ U^T V jointly with every source
matrix S ~ (entity factors)^T (attribute factors). Source rows naming a
global user or item do not get factors of their own: wherever a source row
is shared, the global column is the variable, and the source's stored column
is just a synchronized mirror of it. Concretely:

* reconstruction terms for shared rows are evaluated against the global
  column values;
* each shared latent vector is regularized exactly once, by the global
  ``lambda_u``/``lambda_v`` term (source-side norms cover non-shared columns
  only);
* gradients returned for source entity matrices are zero at shared columns,
  and the shared-row contributions are folded into the global gradient with
  :func:`oplus`.

Under this convention the analytic gradients are exact partial derivatives
of :func:`loss` (finite differences agree coordinate by coordinate), and one
gradient-descent step equals one master/slave round of the distributed
protocol, which never applies its own step to mirrored columns.

All operations here are pure; accumulation across sources follows a fixed
order (rating term first, then user sources ascending, then item sources
ascending) so results are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .entities import EntityId
from .errors import (
    DimensionMismatchError,
    RowCountMismatchError,
    UnknownEntityError,
)
from .factors import FactorMatrix, Hyperparams, init_factors
from .sparse import (
    Alignment,
    RatingDataset,
    SourceKind,
    SourceMatrix,
    SparseMatrix,
    align_source,
)


@dataclass(frozen=True)
class SourceFactors:
    """Latent factors of one data source plus its alignment with the globals."""

    kind: SourceKind
    index: int
    entities: FactorMatrix    # columns embed the source's rows (users or items)
    attributes: FactorMatrix  # columns embed the source's attributes
    alignment: Alignment

    @property
    def name(self) -> str:
        return f"{self.kind.value}-source-{self.index}"


@dataclass(frozen=True)
class ModelState:
    """All factor matrices of the joint model."""

    users: FactorMatrix
    items: FactorMatrix
    user_sources: tuple[SourceFactors, ...] = ()
    item_sources: tuple[SourceFactors, ...] = ()

    def __post_init__(self):
        k = self.users.k
        for fm in self._all_factor_matrices():
            if fm.k != k:
                raise DimensionMismatchError("all factor matrices must share k")
        for group in (self.user_sources, self.item_sources):
            indexes = [sf.index for sf in group]
            if indexes != sorted(indexes) or len(set(indexes)) != len(indexes):
                raise ValueError("sources must be ordered by ascending unique index")

    def _all_factor_matrices(self):
        yield self.users
        yield self.items
        for sf in self.user_sources + self.item_sources:
            yield sf.entities
            yield sf.attributes

    @property
    def k(self) -> int:
        return self.users.k


@dataclass(frozen=True)
class LossBreakdown:
    """The joint loss split into its reconstruction and penalty parts."""

    rating_term: float
    user_source_terms: tuple[float, ...]
    item_source_terms: tuple[float, ...]
    regularization_term: float
    total: float


@dataclass(frozen=True)
class GradientSet:
    """Gradients with the same shapes and labels as the model state.

    `users` and `items` already carry the merged shared-row contributions of
    every source; source entity gradients are zero at shared columns.
    """

    users: FactorMatrix
    items: FactorMatrix
    user_sources: tuple[SourceFactors, ...]
    item_sources: tuple[SourceFactors, ...]


def init_state(
    ratings: RatingDataset, sources: Sequence[SourceMatrix], hyper: Hyperparams
) -> ModelState:
    """Initialize every factor matrix from its own seeded random stream."""
    users = init_factors(ratings.users, hyper, "global-users")
    items = init_factors(ratings.items, hyper, "global-items")
    user_sources = []
    item_sources = []
    for src in sorted(sources, key=lambda s: (s.kind.value, s.index)):
        entities = init_factors(src.matrix.row_labels, hyper, f"{src.name}-entities",
                                namespace=src.name)
        attributes = init_factors(src.matrix.col_labels, hyper, f"{src.name}-attributes",
                                  namespace=src.name)
        sf = SourceFactors(
            src.kind, src.index, entities, attributes,
            align_source(src, ratings.users, ratings.items),
        )
        (user_sources if src.kind is SourceKind.USER else item_sources).append(sf)
    return ModelState(users, items, tuple(user_sources), tuple(item_sources))


# ---------------------------------------------------------------------------
# computational kernels (shared by the centralized and distributed trainers)

def observed_residuals(
    left: np.ndarray, right: np.ndarray, matrix: SparseMatrix
) -> np.ndarray:
    """Per-entry residual left_r . right_c - value over the observed cells."""
    if matrix.nnz == 0:
        return np.zeros(0)
    dots = np.einsum("ij,ij->j", left[:, matrix.rows], right[:, matrix.cols])
    return dots - matrix.values


def bilinear_gradients(
    left: np.ndarray,
    right: np.ndarray,
    matrix: SparseMatrix,
    residuals: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Data-term gradients of 0.5 * sum(residuals**2).

    Returns (g_left, g_right) with g_left[:, r] = sum_c e_rc right[:, c] and
    g_right[:, c] = sum_r e_rc left[:, r], summing over observed cells only.
    """
    n_rows, n_cols = matrix.n_rows, matrix.n_cols
    if matrix.nnz == 0:
        return np.zeros_like(left), np.zeros_like(right)
    perm, indices, indptr = matrix.csr_template
    resid_matrix = sp.csr_matrix(
        (residuals[perm], indices, indptr), shape=(n_rows, n_cols)
    )
    g_left = (resid_matrix @ right.T).T
    perm_t, indices_t, indptr_t = matrix.csc_template
    resid_matrix_t = sp.csr_matrix(
        (residuals[perm_t], indices_t, indptr_t), shape=(n_cols, n_rows)
    )
    g_right = (resid_matrix_t @ left.T).T
    return g_left, g_right


def effective_entity_values(
    stored: np.ndarray, global_values: np.ndarray, alignment: Alignment
) -> np.ndarray:
    """Source entity columns with shared positions replaced by the globals."""
    eff = stored.copy()
    if alignment.shared_count:
        eff[:, alignment.shared_local] = global_values[:, alignment.shared_global]
    return eff


def _sq_norm(a: np.ndarray) -> float:
    return float(np.sum(a * a))


def rating_loss_terms(
    u_values: np.ndarray, v_values: np.ndarray, matrix: SparseMatrix,
    lambda_u: float, lambda_v: float,
) -> tuple[float, float]:
    """(reconstruction error over R, penalty on the global factors)."""
    e = observed_residuals(u_values, v_values, matrix)
    rating = 0.5 * float(np.dot(e, e))
    reg = 0.5 * lambda_u * _sq_norm(u_values) + 0.5 * lambda_v * _sq_norm(v_values)
    return rating, reg


def source_loss_terms(
    entity_eff: np.ndarray, attr_values: np.ndarray, matrix: SparseMatrix,
    lam_s: float, lam_entity: float, lam_z: float, alignment: Alignment,
) -> tuple[float, float]:
    """(weighted reconstruction error over S, penalty on the source's own factors).

    The penalty covers non-shared entity columns and the attribute factors;
    shared columns are the global factors' responsibility.
    """
    f = observed_residuals(entity_eff, attr_values, matrix)
    recon = 0.5 * lam_s * float(np.dot(f, f))
    reg = (
        0.5 * lam_entity * _sq_norm(entity_eff[:, alignment.nonshared_local])
        + 0.5 * lam_z * _sq_norm(attr_values)
    )
    return recon, reg


def rating_gradients(
    u_values: np.ndarray, v_values: np.ndarray, matrix: SparseMatrix,
    lambda_u: float, lambda_v: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the rating term plus global penalties, before any merge."""
    e = observed_residuals(u_values, v_values, matrix)
    g_u, g_v = bilinear_gradients(u_values, v_values, matrix, e)
    return g_u + lambda_u * u_values, g_v + lambda_v * v_values


def source_gradients(
    entity_eff: np.ndarray, attr_values: np.ndarray, matrix: SparseMatrix,
    lam_s: float, lam_entity: float, lam_z: float, alignment: Alignment,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients contributed by one source.

    Returns (shared_rows, g_entities, g_attributes): `shared_rows` is the
    k x shared block destined for the global gradient (the partial a slave
    sends up), ordered like alignment.shared_labels; `g_entities` is zero at
    shared columns.
    """
    f = observed_residuals(entity_eff, attr_values, matrix)
    g_e, g_z = bilinear_gradients(entity_eff, attr_values, matrix, f)
    shared_rows = lam_s * g_e[:, alignment.shared_local]
    g_entities = np.zeros_like(entity_eff)
    ns = alignment.nonshared_local
    if len(ns):
        g_entities[:, ns] = lam_s * g_e[:, ns] + lam_entity * entity_eff[:, ns]
    g_attributes = lam_s * g_z + lam_z * attr_values
    return shared_rows, g_entities, g_attributes


# ---------------------------------------------------------------------------
# public operations

def oplus(a: FactorMatrix, b: FactorMatrix) -> FactorMatrix:
    """Label-aware matrix addition.

    The result has `a`'s columns; wherever a column of `b` carries the same
    entity label, it is added in, and columns of `b` with no match in `a`
    are ignored.
    """
    if a.k != b.k:
        raise RowCountMismatchError(f"row counts differ: {a.k} vs {b.k}")
    out = a.values.copy()
    a_pos = []
    b_pos = []
    for j, label in enumerate(b.col_labels):
        i = a.position(label)
        if i is not None:
            a_pos.append(i)
            b_pos.append(j)
    if a_pos:
        out[:, a_pos] = out[:, a_pos] + b.values[:, b_pos]
    return FactorMatrix(a.col_labels, out)


def _paired_sources(
    state: ModelState, sources: Sequence[SourceMatrix], hyper: Hyperparams
) -> tuple[list[tuple[SourceFactors, SourceMatrix, float, float, float]], ...]:
    by_id = {(s.kind, s.index): s for s in sources}
    if len(by_id) != len(sources):
        raise DimensionMismatchError("duplicate source (kind, index)")
    groups = []
    for group, lam_entity in (
        (state.user_sources, hyper.lambda_u),
        (state.item_sources, hyper.lambda_v),
    ):
        paired = []
        for sf in group:
            src = by_id.pop((sf.kind, sf.index), None)
            if src is None:
                raise DimensionMismatchError(f"state has no matching data for {sf.name}")
            if (
                src.matrix.row_labels != sf.entities.col_labels
                or src.matrix.col_labels != sf.attributes.col_labels
            ):
                raise DimensionMismatchError(f"{sf.name}: factor labels do not match data")
            lam_s = hyper.lambda_s_for(sf.kind.value, sf.index)
            lam_z = hyper.lambda_z_for(sf.kind.value, sf.index)
            paired.append((sf, src, lam_s, lam_entity, lam_z))
        groups.append(paired)
    if by_id:
        raise DimensionMismatchError("state is missing factors for some sources")
    return tuple(groups)


def _check_rating_labels(ratings: RatingDataset, state: ModelState) -> None:
    if (
        state.users.col_labels != ratings.matrix.row_labels
        or state.items.col_labels != ratings.matrix.col_labels
    ):
        raise DimensionMismatchError("state labels do not match the rating matrix")


def loss(
    ratings: RatingDataset,
    sources: Sequence[SourceMatrix],
    state: ModelState,
    hyper: Hyperparams,
) -> LossBreakdown:
    """Evaluate the joint objective; only observed cells contribute."""
    _check_rating_labels(ratings, state)
    user_pairs, item_pairs = _paired_sources(state, sources, hyper)
    rating, reg_global = rating_loss_terms(
        state.users.values, state.items.values, ratings.matrix,
        hyper.lambda_u, hyper.lambda_v,
    )
    total = rating + reg_global
    reg_total = reg_global
    recon_terms: dict[SourceKind, list[float]] = {SourceKind.USER: [], SourceKind.ITEM: []}
    for pairs, globals_ in ((user_pairs, state.users), (item_pairs, state.items)):
        for sf, src, lam_s, lam_entity, lam_z in pairs:
            eff = effective_entity_values(
                sf.entities.values, globals_.values, sf.alignment
            )
            recon, reg = source_loss_terms(
                eff, sf.attributes.values, src.matrix,
                lam_s, lam_entity, lam_z, sf.alignment,
            )
            total = total + (recon + reg)
            reg_total += reg
            recon_terms[sf.kind].append(recon)
    return LossBreakdown(
        rating_term=rating,
        user_source_terms=tuple(recon_terms[SourceKind.USER]),
        item_source_terms=tuple(recon_terms[SourceKind.ITEM]),
        regularization_term=reg_total,
        total=total,
    )


def grad(
    ratings: RatingDataset,
    sources: Sequence[SourceMatrix],
    state: ModelState,
    hyper: Hyperparams,
) -> GradientSet:
    """Analytic gradient of :func:`loss` for every factor matrix.

    The global gradients fold in each source's shared-row block via
    :func:`oplus`, rating term first, sources in ascending index order.
    """
    _check_rating_labels(ratings, state)
    user_pairs, item_pairs = _paired_sources(state, sources, hyper)
    g_u, g_v = rating_gradients(
        state.users.values, state.items.values, ratings.matrix,
        hyper.lambda_u, hyper.lambda_v,
    )
    grad_users = FactorMatrix(state.users.col_labels, g_u)
    grad_items = FactorMatrix(state.items.col_labels, g_v)
    out_sources: dict[SourceKind, list[SourceFactors]] = {
        SourceKind.USER: [], SourceKind.ITEM: [],
    }
    for pairs, globals_ in ((user_pairs, state.users), (item_pairs, state.items)):
        for sf, src, lam_s, lam_entity, lam_z in pairs:
            eff = effective_entity_values(
                sf.entities.values, globals_.values, sf.alignment
            )
            shared_rows, g_entities, g_attributes = source_gradients(
                eff, sf.attributes.values, src.matrix,
                lam_s, lam_entity, lam_z, sf.alignment,
            )
            partial = FactorMatrix(sf.alignment.shared_labels, shared_rows)
            if sf.kind is SourceKind.USER:
                grad_users = oplus(grad_users, partial)
            else:
                grad_items = oplus(grad_items, partial)
            out_sources[sf.kind].append(
                SourceFactors(
                    sf.kind, sf.index,
                    FactorMatrix(sf.entities.col_labels, g_entities),
                    FactorMatrix(sf.attributes.col_labels, g_attributes),
                    sf.alignment,
                )
            )
    return GradientSet(
        users=grad_users,
        items=grad_items,
        user_sources=tuple(out_sources[SourceKind.USER]),
        item_sources=tuple(out_sources[SourceKind.ITEM]),
    )


def predict(
    state: ModelState,
    user: EntityId,
    item: EntityId,
    scale_lo: float,
    scale_hi: float,
) -> float:
    """Predicted rating U_i . V_j, clamped to the rating scale."""
    i = state.users.position(user)
    if i is None:
        raise UnknownEntityError(f"unknown user {user!r}")
    j = state.items.position(item)
    if j is None:
        raise UnknownEntityError(f"unknown item {item!r}")
    raw = float(np.dot(state.users.values[:, i], state.items.values[:, j]))
    return min(max(raw, scale_lo), scale_hi)


def predict_pairs(
    state: ModelState,
    pairs: Sequence[tuple[EntityId, EntityId]],
    scale_lo: float,
    scale_hi: float,
) -> np.ndarray:
    """Vectorized :func:`predict` over (user, item) pairs."""
    if not pairs:
        return np.zeros(0)
    u_pos = []
    v_pos = []
    for u, v in pairs:
        i = state.users.position(u)
        j = state.items.position(v)
        if i is None or j is None:
            raise UnknownEntityError(f"unknown pair ({u!r}, {v!r})")
        u_pos.append(i)
        v_pos.append(j)
    dots = np.einsum(
        "ij,ij->j", state.users.values[:, u_pos], state.items.values[:, v_pos]
    )
    return np.clip(dots, scale_lo, scale_hi)
