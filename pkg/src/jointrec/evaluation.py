"""Train/test splitting, RMSE, cold-start buckets, baselines, source sweeps.

Ratings are split entry-wise; the train and test matrices keep the full
entity universe of the original matrix, so an entity whose ratings all fall
into the test side still has a factor column (that is the cold-start case
the bucket analysis measures). Repetition r draws its own split stream from
(seed, r) and trains with model seed ``hyper.seed + r``; everything is a
pure function of the spec.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .central import train_centralized
from .distributed import run_distributed
from .entities import EntityId
from .errors import EmptyInputError
from .factors import Hyperparams
from .objective import ModelState, predict_pairs
from .sparse import RatingDataset, SourceKind, SourceMatrix

BUCKET_LABELS = (
    "0", "1-5", "6-10", "11-20", "21-40",
    "41-80", "81-160", "161-320", "321-640", ">640",
)
_BUCKET_UPPER_BOUNDS = (0, 5, 10, 20, 40, 80, 160, 320, 640)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    repetitions: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")


def split(
    ratings: RatingDataset, spec: SplitSpec
) -> list[tuple[RatingDataset, RatingDataset]]:
    """Random entry partitions of the rating matrix, one pair per repetition."""
    n = ratings.matrix.nnz
    n_train = int(spec.train_fraction * n + 0.5)
    out = []
    for rep in range(spec.repetitions):
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, rep])
        )
        perm = rng.permutation(n)
        train_idx = np.sort(perm[:n_train])
        test_idx = np.sort(perm[n_train:])
        out.append(
            (
                RatingDataset(
                    ratings.matrix.restrict_to(train_idx),
                    ratings.scale_lo, ratings.scale_hi,
                ),
                RatingDataset(
                    ratings.matrix.restrict_to(test_idx),
                    ratings.scale_lo, ratings.scale_hi,
                ),
            )
        )
    return out


def rmse(pairs: Sequence[tuple[float, float]]) -> float:
    """Root mean square error over (truth, predicted) pairs."""
    if len(pairs) == 0:
        raise EmptyInputError("rmse needs at least one prediction")
    arr = np.asarray(pairs, dtype=np.float64)
    diff = arr[:, 0] - arr[:, 1]
    return float(np.sqrt(np.mean(diff * diff)))


class BucketAxis(enum.Enum):
    BY_USER_RATING_COUNT = "user"
    BY_ITEM_RATING_COUNT = "item"


@dataclass(frozen=True)
class BucketEntry:
    label: str
    count: int
    rmse: float | None


@dataclass(frozen=True)
class BucketReport:
    axis: BucketAxis
    buckets: tuple[BucketEntry, ...]

    def entry(self, label: str) -> BucketEntry:
        return self.buckets[BUCKET_LABELS.index(label)]


def bucket_index(rating_count: int) -> int:
    for idx, upper in enumerate(_BUCKET_UPPER_BOUNDS):
        if rating_count <= upper:
            return idx
    return len(BUCKET_LABELS) - 1


# A prediction record: (user, item, truth, predicted).
PredictionRecord = tuple[EntityId, EntityId, float, float]


def bucketed_rmse(
    predictions: Sequence[PredictionRecord],
    train: RatingDataset,
    axis: BucketAxis,
) -> BucketReport:
    """Group test predictions by the entity's training rating count.

    Counts come from the training matrix (what the model actually saw); an
    entity absent from training lands in bucket "0". Every prediction lands
    in exactly one bucket.
    """
    matrix = train.matrix
    grouped: list[list[tuple[float, float]]] = [[] for _ in BUCKET_LABELS]
    for user_id, item_id, truth, predicted in predictions:
        if axis is BucketAxis.BY_USER_RATING_COUNT:
            pos = matrix.row_position(user_id)
            count = int(matrix.row_counts[pos]) if pos is not None else 0
        else:
            pos = matrix.col_position(item_id)
            count = int(matrix.col_counts[pos]) if pos is not None else 0
        grouped[bucket_index(count)].append((truth, predicted))
    buckets = tuple(
        BucketEntry(label, len(group), rmse(group) if group else None)
        for label, group in zip(BUCKET_LABELS, grouped)
    )
    return BucketReport(axis, buckets)


def _entity_means(
    positions: np.ndarray, values: np.ndarray, n: int, fallback: float
) -> np.ndarray:
    counts = np.bincount(positions, minlength=n)
    sums = np.bincount(positions, weights=values, minlength=n)
    means = np.full(n, fallback)
    seen = counts > 0
    means[seen] = sums[seen] / counts[seen]
    return means


def _global_mean(train: RatingDataset) -> float:
    values = train.matrix.values
    if len(values) == 0:
        return 0.5 * (train.scale_lo + train.scale_hi)
    return float(values.mean())


def baseline_user_mean(train: RatingDataset, test: RatingDataset) -> np.ndarray:
    """Predict each test rating as its user's training mean.

    Users unseen in training fall back to the global training mean.
    """
    fallback = _global_mean(train)
    means = _entity_means(
        train.matrix.rows, train.matrix.values, train.matrix.n_rows, fallback
    )
    return means[test.matrix.rows]


def baseline_item_mean(train: RatingDataset, test: RatingDataset) -> np.ndarray:
    """Predict each test rating as its item's training mean (global-mean fallback)."""
    fallback = _global_mean(train)
    means = _entity_means(
        train.matrix.cols, train.matrix.values, train.matrix.n_cols, fallback
    )
    return means[test.matrix.cols]


# ---------------------------------------------------------------------------
# model runs

def _train(
    train: RatingDataset,
    sources: Sequence[SourceMatrix],
    hyper: Hyperparams,
    trainer: str,
) -> ModelState:
    if trainer == "central":
        state, _ = train_centralized(train, sources, hyper)
    elif trainer == "distributed":
        state, _, _ = run_distributed(train, sources, hyper)
    else:
        raise ValueError(f"unknown trainer {trainer!r}")
    return state


def _test_records(
    state: ModelState, test: RatingDataset
) -> list[PredictionRecord]:
    matrix = test.matrix
    pairs = [
        (matrix.row_labels[r], matrix.col_labels[c])
        for r, c in zip(matrix.rows.tolist(), matrix.cols.tolist())
    ]
    predicted = predict_pairs(state, pairs, test.scale_lo, test.scale_hi)
    return [
        (u, v, truth, float(p))
        for (u, v), truth, p in zip(pairs, matrix.values.tolist(), predicted)
    ]


def _records_rmse(records: Sequence[PredictionRecord]) -> float:
    return rmse([(truth, predicted) for _, _, truth, predicted in records])


@dataclass(frozen=True)
class RepetitionReport:
    rmse: float
    user_mean_rmse: float
    item_mean_rmse: float
    user_buckets: BucketReport
    item_buckets: BucketReport


@dataclass(frozen=True)
class EvaluationReport:
    repetitions: tuple[RepetitionReport, ...]
    mean_rmse: float
    mean_user_mean_rmse: float
    mean_item_mean_rmse: float
    user_buckets: tuple[BucketEntry, ...]
    item_buckets: tuple[BucketEntry, ...]


def _aggregate_buckets(
    reports: Sequence[BucketReport],
) -> tuple[BucketEntry, ...]:
    out = []
    for i, label in enumerate(BUCKET_LABELS):
        counts = sum(r.buckets[i].count for r in reports)
        values = [r.buckets[i].rmse for r in reports if r.buckets[i].rmse is not None]
        out.append(
            BucketEntry(label, counts, float(np.mean(values)) if values else None)
        )
    return tuple(out)


def evaluate_model(
    ratings: RatingDataset,
    sources: Sequence[SourceMatrix],
    spec: SplitSpec,
    hyper: Hyperparams,
    trainer: str = "central",
) -> EvaluationReport:
    """Split, train, and score the model and the mean baselines."""
    reports = []
    for rep, (train, test) in enumerate(split(ratings, spec)):
        if test.matrix.nnz == 0:
            raise EmptyInputError(
                f"repetition {rep}: test split is empty "
                f"(nnz={ratings.matrix.nnz}, train_fraction={spec.train_fraction})"
            )
        state = _train(train, sources, replace(hyper, seed=hyper.seed + rep), trainer)
        records = _test_records(state, test)
        truths = [truth for _, _, truth, _ in records]
        reports.append(
            RepetitionReport(
                rmse=_records_rmse(records),
                user_mean_rmse=rmse(
                    list(zip(truths, baseline_user_mean(train, test).tolist()))
                ),
                item_mean_rmse=rmse(
                    list(zip(truths, baseline_item_mean(train, test).tolist()))
                ),
                user_buckets=bucketed_rmse(records, train, BucketAxis.BY_USER_RATING_COUNT),
                item_buckets=bucketed_rmse(records, train, BucketAxis.BY_ITEM_RATING_COUNT),
            )
        )
    return EvaluationReport(
        repetitions=tuple(reports),
        mean_rmse=float(np.mean([r.rmse for r in reports])),
        mean_user_mean_rmse=float(np.mean([r.user_mean_rmse for r in reports])),
        mean_item_mean_rmse=float(np.mean([r.item_mean_rmse for r in reports])),
        user_buckets=_aggregate_buckets([r.user_buckets for r in reports]),
        item_buckets=_aggregate_buckets([r.item_buckets for r in reports]),
    )


class SweepMode(enum.Enum):
    USER_ONLY = "user-only"
    ITEM_ONLY = "item-only"
    BOTH = "both"


@dataclass(frozen=True)
class SweepPoint:
    count: int
    rmses: tuple[float, ...]
    mean_rmse: float


def source_sweep(
    ratings: RatingDataset,
    sources: Sequence[SourceMatrix],
    spec: SplitSpec,
    hyper: Hyperparams,
    mode: SweepMode = SweepMode.BOTH,
    trainer: str = "central",
) -> list[SweepPoint]:
    """Mean test RMSE as sources are added one by one, in the given order.

    Count 0 factorizes only the rating matrix; under BOTH, count c adds the
    first c user sources and the first c item sources.
    """
    user_sources = [s for s in sources if s.kind is SourceKind.USER]
    item_sources = [s for s in sources if s.kind is SourceKind.ITEM]
    if mode is SweepMode.USER_ONLY:
        max_count = len(user_sources)
    elif mode is SweepMode.ITEM_ONLY:
        max_count = len(item_sources)
    else:
        max_count = max(len(user_sources), len(item_sources))
    pairs = split(ratings, spec)
    for rep, (_, test) in enumerate(pairs):
        if test.matrix.nnz == 0:
            raise EmptyInputError(f"repetition {rep}: test split is empty")
    points = []
    for count in range(max_count + 1):
        selected: list[SourceMatrix] = []
        if mode in (SweepMode.USER_ONLY, SweepMode.BOTH):
            selected += user_sources[:count]
        if mode in (SweepMode.ITEM_ONLY, SweepMode.BOTH):
            selected += item_sources[:count]
        rmses = []
        for rep, (train, test) in enumerate(pairs):
            state = _train(
                train, selected, replace(hyper, seed=hyper.seed + rep), trainer
            )
            rmses.append(_records_rmse(_test_records(state, test)))
        points.append(SweepPoint(count, tuple(rmses), float(np.mean(rmses))))
    return points
