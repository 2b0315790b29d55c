"""Seeded synthetic datasets for experiments and tests.

Ratings come from a planted low-rank model: true user and item factors are
drawn uniformly positive, observed cells are sampled (optionally with a
power-law skew over users and items so that some entities end up with many
ratings and others with none), and ratings are the clipped noisy dot
products. Informative sources are generated from the same true entity
factors, so factorizing them genuinely reveals the planted structure; noise
sources use independent draws and carry no signal about the ratings.

Every artifact has its own random stream: regenerating with the same seed
is byte-for-byte reproducible, and changing how a source is generated never
changes the rating matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datafiles import Dataset
from .entities import EntityId, ITEM_NAMESPACE, USER_NAMESPACE, attribute_namespace
from .sparse import RatingDataset, SourceKind, SourceMatrix, SparseMatrix


@dataclass(frozen=True)
class SourceSpec:
    """How to generate one source matrix."""

    kind: SourceKind
    n_attributes: int = 20
    density: float = 0.3
    noise_sd: float = 0.0
    informative: bool = True
    shared_fraction: float = 1.0   # fraction of global entities the source covers
    extra_entities: int = 0        # source-only rows beyond the shared ones


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 60
    n_items: int = 40
    k_true: int = 4
    density: float = 0.1
    noise_sd: float = 0.05
    scale_lo: float = 0.0
    scale_hi: float = 1.0
    activity_skew: float = 0.0
    user_sources: tuple[SourceSpec, ...] = ()
    item_sources: tuple[SourceSpec, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        if self.n_users < 1 or self.n_items < 1 or self.k_true < 1:
            raise ValueError("n_users, n_items and k_true must be positive")
        for spec in self.user_sources:
            if spec.kind is not SourceKind.USER:
                raise ValueError("user_sources entries must have kind USER")
        for spec in self.item_sources:
            if spec.kind is not SourceKind.ITEM:
                raise ValueError("item_sources entries must have kind ITEM")


def _factor_scale(mean_value: float, k: int) -> float:
    # Uniform [0, a] factors give E[dot] = k * a^2 / 4.
    return 2.0 * np.sqrt(mean_value / k)


def _sample_cells(
    rng: np.random.Generator,
    n_rows: int,
    n_cols: int,
    density: float,
    skew: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Observed coordinates; `skew` > 0 makes row activity follow a power law.

    Columns stay uniformly covered, so skewed ratings starve some users of
    observations without also starving the items they would be scored on.
    """
    n_cells = n_rows * n_cols
    nnz = max(1, int(round(density * n_cells)))
    if skew > 0.0:
        row_w = (1.0 + np.arange(n_rows)) ** (-skew)
        p = np.repeat(row_w / (row_w.sum() * n_cols), n_cols)
        chosen = rng.choice(n_cells, size=nnz, replace=False, p=p)
    else:
        chosen = rng.choice(n_cells, size=nnz, replace=False)
    return chosen // n_cols, chosen % n_cols


def _dots(left: np.ndarray, right: np.ndarray, rows, cols) -> np.ndarray:
    return np.einsum("ij,ij->j", left[:, rows], right[:, cols])


def generate_dataset(spec: SyntheticSpec) -> Dataset:
    """Build an in-memory dataset from the spec."""
    all_sources = list(spec.user_sources) + list(spec.item_sources)
    streams = np.random.SeedSequence(spec.seed & 0xFFFFFFFFFFFFFFFF).spawn(
        1 + len(all_sources)
    )
    rng = np.random.default_rng(streams[0])

    users = tuple(EntityId(USER_NAMESPACE, f"u{i:04d}") for i in range(spec.n_users))
    items = tuple(EntityId(ITEM_NAMESPACE, f"i{j:04d}") for j in range(spec.n_items))
    mid = 0.5 * (spec.scale_lo + spec.scale_hi)
    a = _factor_scale(mid, spec.k_true)
    true_users = rng.uniform(0.0, a, size=(spec.k_true, spec.n_users))
    true_items = rng.uniform(0.0, a, size=(spec.k_true, spec.n_items))

    rows, cols = _sample_cells(
        rng, spec.n_users, spec.n_items, spec.density, spec.activity_skew
    )
    values = _dots(true_users, true_items, rows, cols)
    if spec.noise_sd > 0.0:
        values = values + rng.normal(0.0, spec.noise_sd, size=len(values))
    values = np.clip(values, spec.scale_lo, spec.scale_hi)
    ratings = RatingDataset(
        SparseMatrix(users, items, rows, cols, values), spec.scale_lo, spec.scale_hi
    )

    sources = []
    user_count = 0
    item_count = 0
    for src_spec, stream in zip(all_sources, streams[1:]):
        if src_spec.kind is SourceKind.USER:
            user_count += 1
            index = user_count
            global_labels, true_entities = users, true_users
        else:
            item_count += 1
            index = item_count
            global_labels, true_entities = items, true_items
        sources.append(
            _generate_source(
                src_spec, index, np.random.default_rng(stream),
                global_labels, true_entities, spec.k_true,
            )
        )
    return Dataset(ratings, tuple(sources))


def _generate_source(
    spec: SourceSpec,
    index: int,
    rng: np.random.Generator,
    global_labels: Sequence[EntityId],
    true_entities: np.ndarray,
    k_true: int,
) -> SourceMatrix:
    name = f"{spec.kind.value}-source-{index}"
    n_global = len(global_labels)
    n_shared = int(round(spec.shared_fraction * n_global))
    shared_positions = np.sort(rng.choice(n_global, size=n_shared, replace=False))

    entity_ns = USER_NAMESPACE if spec.kind is SourceKind.USER else ITEM_NAMESPACE
    row_labels = [global_labels[g] for g in shared_positions]
    row_labels += [
        EntityId(entity_ns, f"{name}-x{j}") for j in range(spec.extra_entities)
    ]
    attr_ns = attribute_namespace(spec.kind.value, index)
    col_labels = [EntityId(attr_ns, f"a{j:04d}") for j in range(spec.n_attributes)]

    a = _factor_scale(0.5, k_true)
    if spec.informative:
        entity_factors = true_entities[:, shared_positions]
    else:
        entity_factors = rng.uniform(0.0, a, size=(k_true, n_shared))
    if spec.extra_entities:
        extra = rng.uniform(0.0, a, size=(k_true, spec.extra_entities))
        entity_factors = np.concatenate([entity_factors, extra], axis=1)
    attr_factors = rng.uniform(0.0, a, size=(k_true, spec.n_attributes))

    rows, cols = _sample_cells(
        rng, len(row_labels), spec.n_attributes, spec.density, 0.0
    )
    values = _dots(entity_factors, attr_factors, rows, cols)
    if spec.noise_sd > 0.0:
        values = values + rng.normal(0.0, spec.noise_sd, size=len(values))
    return SourceMatrix(
        spec.kind, index, SparseMatrix(row_labels, col_labels, rows, cols, values)
    )
