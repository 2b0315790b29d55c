"""Independent test oracles.

`brute_force_loss` evaluates the joint objective with plain Python loops
over every observed cell, working the shared-entity substitution out from
the labels alone. It shares no code with the package's vectorized loss and
is the reference for both the loss tests and the finite-difference gradient
checks.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from jointrec import (
    FactorMatrix,
    Hyperparams,
    ModelState,
    RatingDataset,
    SourceKind,
    SourceMatrix,
    SparseMatrix,
    init_state,
)
from jointrec.entities import EntityId, ITEM_NAMESPACE, USER_NAMESPACE, attribute_namespace


def brute_force_loss(ratings, sources, state, hyper) -> float:
    """Scalar-loop evaluation of the joint objective.

    Shared source rows (rows whose label exists among the global users or
    items) are evaluated against the global factor columns and are excluded
    from the source-side norm penalty; every other term follows the model
    definition cell by cell.
    """
    k = state.users.k
    U = state.users.values
    V = state.items.values
    total = 0.0
    for r, c, v in ratings.matrix.entries():
        d = sum(U[axis][r] * V[axis][c] for axis in range(k))
        total += 0.5 * (d - v) ** 2
    total += 0.5 * hyper.lambda_u * sum(x * x for x in U.ravel().tolist())
    total += 0.5 * hyper.lambda_v * sum(x * x for x in V.ravel().tolist())

    by_id = {(s.kind, s.index): s for s in sources}
    for sf in state.user_sources + state.item_sources:
        src = by_id[(sf.kind, sf.index)]
        lam_s = hyper.lambda_s_for(sf.kind.value, sf.index)
        lam_z = hyper.lambda_z_for(sf.kind.value, sf.index)
        if sf.kind is SourceKind.USER:
            lam_entity = hyper.lambda_u
            global_fm = state.users
        else:
            lam_entity = hyper.lambda_v
            global_fm = state.items
        E = sf.entities.values
        Z = sf.attributes.values

        def effective_column(p: int) -> list[float]:
            g = global_fm.position(src.matrix.row_labels[p])
            if g is not None:
                return [global_fm.values[axis][g] for axis in range(k)]
            return [E[axis][p] for axis in range(k)]

        for p, q, s_value in src.matrix.entries():
            vec = effective_column(p)
            d = sum(vec[axis] * Z[axis][q] for axis in range(k))
            total += 0.5 * lam_s * (d - s_value) ** 2
        for p, label in enumerate(src.matrix.row_labels):
            if global_fm.position(label) is None:
                total += 0.5 * lam_entity * sum(
                    E[axis][p] ** 2 for axis in range(k)
                )
        total += 0.5 * lam_z * sum(x * x for x in Z.ravel().tolist())
    return total


def brute_force_rmse(pairs) -> float:
    acc = 0.0
    for truth, predicted in pairs:
        acc += (truth - predicted) ** 2
    return (acc / len(pairs)) ** 0.5


# ---------------------------------------------------------------------------
# random instances

def _random_sparse(rng, row_labels, col_labels, density=0.5, lo=0.0, hi=1.0):
    n_rows, n_cols = len(row_labels), len(col_labels)
    n_cells = n_rows * n_cols
    nnz = max(1, int(round(density * n_cells)))
    chosen = rng.choice(n_cells, size=nnz, replace=False)
    rows = chosen // n_cols
    cols = chosen % n_cols
    values = rng.uniform(lo, hi, size=nnz)
    return SparseMatrix(row_labels, col_labels, rows, cols, values)


def random_instance(
    seed: int,
    max_users: int = 10,
    max_items: int = 10,
    n_user_sources: int = 1,
    n_item_sources: int = 1,
    max_k: int = 4,
    max_attrs: int = 5,
):
    """A small random dataset plus hyperparameters, for property tests."""
    rng = np.random.default_rng(seed)
    n_users = int(rng.integers(2, max_users + 1))
    n_items = int(rng.integers(2, max_items + 1))
    k = int(rng.integers(1, max_k + 1))
    users = tuple(EntityId(USER_NAMESPACE, f"u{i}") for i in range(n_users))
    items = tuple(EntityId(ITEM_NAMESPACE, f"i{j}") for j in range(n_items))
    ratings = RatingDataset(_random_sparse(rng, users, items, density=0.4), 0.0, 1.0)

    sources = []
    for kind, count, globals_ in (
        (SourceKind.USER, n_user_sources, users),
        (SourceKind.ITEM, n_item_sources, items),
    ):
        for index in range(1, count + 1):
            n_shared = int(rng.integers(0, len(globals_) + 1))
            shared = sorted(
                rng.choice(len(globals_), size=n_shared, replace=False).tolist()
            )
            extra = int(rng.integers(0, 3))
            row_labels = [globals_[g] for g in shared] + [
                EntityId(globals_[0].namespace, f"{kind.value}{index}x{e}")
                for e in range(extra)
            ]
            if not row_labels:
                row_labels = [EntityId(globals_[0].namespace, f"{kind.value}{index}only")]
            attr_ns = attribute_namespace(kind.value, index)
            n_attrs = int(rng.integers(1, max_attrs + 1))
            col_labels = [EntityId(attr_ns, f"a{q}") for q in range(n_attrs)]
            sources.append(
                SourceMatrix(
                    kind, index, _random_sparse(rng, row_labels, col_labels, density=0.5)
                )
            )

    hyper = Hyperparams(
        k=k,
        alpha=0.01,
        epsilon=0.0,
        max_iters=20,
        lambda_u=float(rng.uniform(0.02, 0.3)),
        lambda_v=float(rng.uniform(0.02, 0.3)),
        lambda_s=float(rng.uniform(0.1, 0.8)),
        lambda_z=float(rng.uniform(0.02, 0.3)),
        seed=int(rng.integers(0, 2**31)),
    )
    return ratings, sources, hyper


def randomized_state(ratings, sources, hyper, rng) -> ModelState:
    """A model state with factor entries bounded away from zero.

    Gradient coordinates then sit at a comfortable magnitude for relative
    finite-difference comparisons.
    """
    base = init_state(ratings, sources, hyper)

    def randomize(fm: FactorMatrix) -> FactorMatrix:
        return FactorMatrix(
            fm.col_labels, rng.uniform(0.2, 1.0, size=fm.values.shape)
        )

    return ModelState(
        randomize(base.users),
        randomize(base.items),
        tuple(
            replace(sf, entities=randomize(sf.entities), attributes=randomize(sf.attributes))
            for sf in base.user_sources
        ),
        tuple(
            replace(sf, entities=randomize(sf.entities), attributes=randomize(sf.attributes))
            for sf in base.item_sources
        ),
    )


def state_matrices(state: ModelState):
    """(key, FactorMatrix) pairs covering every factor matrix in the state."""
    yield "users", state.users
    yield "items", state.items
    for sf in state.user_sources + state.item_sources:
        yield f"{sf.kind.value}{sf.index}.entities", sf.entities
        yield f"{sf.kind.value}{sf.index}.attributes", sf.attributes


def rebuild_state(state: ModelState, key: str, new_values: np.ndarray) -> ModelState:
    """Copy of the state with one factor matrix's values replaced."""
    def swap(fm: FactorMatrix, wanted: bool) -> FactorMatrix:
        return FactorMatrix(fm.col_labels, new_values) if wanted else fm

    def swap_group(group):
        out = []
        for sf in group:
            base = f"{sf.kind.value}{sf.index}"
            out.append(
                replace(
                    sf,
                    entities=swap(sf.entities, key == f"{base}.entities"),
                    attributes=swap(sf.attributes, key == f"{base}.attributes"),
                )
            )
        return tuple(out)

    return ModelState(
        swap(state.users, key == "users"),
        swap(state.items, key == "items"),
        swap_group(state.user_sources),
        swap_group(state.item_sources),
    )


def shared_column_mask(state: ModelState, key: str, fm: FactorMatrix) -> np.ndarray:
    """True at columns that mirror a global factor column (no free variable)."""
    mask = np.zeros(fm.n_cols, dtype=bool)
    for sf in state.user_sources + state.item_sources:
        if key == f"{sf.kind.value}{sf.index}.entities":
            mask[sf.alignment.shared_local] = True
    return mask
