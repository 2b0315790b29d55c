import numpy as np
import pytest

from jointrec import (
    BUCKET_LABELS,
    BucketAxis,
    EmptyInputError,
    Hyperparams,
    RatingDataset,
    SourceKind,
    SparseMatrix,
    SplitSpec,
    SweepMode,
    baseline_item_mean,
    baseline_user_mean,
    bucketed_rmse,
    build_sparse,
    rmse,
    source_sweep,
    split,
)
from jointrec.entities import ITEM_NAMESPACE, USER_NAMESPACE, item, user
from jointrec.evaluation import bucket_index
from jointrec.synthetic import SourceSpec, SyntheticSpec, generate_dataset
from oracles import brute_force_rmse


def _ratings(n=10):
    triples = [(f"u{i % 4}", f"i{i % 5}", (i % 3) * 0.5) for i in range(n)]
    return RatingDataset(build_sparse(triples, USER_NAMESPACE, ITEM_NAMESPACE), 0.0, 1.0)


def test_split_exact_counts_at_divisible_sizes():
    pairs = split(_ratings(10), SplitSpec(train_fraction=0.8, repetitions=1, seed=0))
    train, test = pairs[0]
    assert train.matrix.nnz == 8
    assert test.matrix.nnz == 2


def test_split_is_a_partition():
    ratings = _ratings(10)
    for train, test in split(ratings, SplitSpec(0.6, repetitions=4, seed=1)):
        assert train.matrix.nnz + test.matrix.nnz == ratings.matrix.nnz
        train_cells = set(zip(train.matrix.rows.tolist(), train.matrix.cols.tolist()))
        test_cells = set(zip(test.matrix.rows.tolist(), test.matrix.cols.tolist()))
        assert not train_cells & test_cells
        assert train.matrix.row_labels == ratings.matrix.row_labels
        assert train.matrix.col_labels == ratings.matrix.col_labels


def test_split_deterministic_per_seed():
    ratings = _ratings(10)
    a = split(ratings, SplitSpec(0.8, 3, seed=5))
    b = split(ratings, SplitSpec(0.8, 3, seed=5))
    for (ta, sa), (tb, sb) in zip(a, b):
        assert np.array_equal(ta.matrix.rows, tb.matrix.rows)
        assert np.array_equal(sa.matrix.rows, sb.matrix.rows)
        assert np.array_equal(ta.matrix.values, tb.matrix.values)


def test_repetitions_differ():
    dataset = generate_dataset(SyntheticSpec(n_users=20, n_items=20, density=0.25, seed=3))
    pairs = split(dataset.ratings, SplitSpec(0.8, 5, seed=2))
    test_sets = [
        frozenset(zip(t.matrix.rows.tolist(), t.matrix.cols.tolist()))
        for _, t in pairs
    ]
    assert len(set(test_sets)) == 5


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(train_fraction=1.0)
    with pytest.raises(ValueError):
        SplitSpec(train_fraction=0.8, repetitions=0)


def test_rmse_perfect_predictions():
    assert rmse([(1.0, 1.0), (0.5, 0.5)]) == 0.0


def test_rmse_single_unit_error_among_four():
    assert rmse([(1, 1), (1, 1), (1, 1), (1, 2)]) == 0.5


def test_rmse_matches_scalar_loop():
    rng = np.random.default_rng(0)
    pairs = [(float(t), float(p)) for t, p in rng.uniform(0, 5, size=(20, 2))]
    assert rmse(pairs) == pytest.approx(brute_force_rmse(pairs), rel=1e-12)


def test_rmse_rejects_empty_input():
    with pytest.raises(EmptyInputError):
        rmse([])


def test_rmse_is_permutation_invariant():
    pairs = [(1.0, 0.5), (2.0, 2.5), (0.0, 0.25)]
    assert rmse(pairs) == pytest.approx(rmse(pairs[::-1]), rel=1e-15)


def test_bucket_labels_and_boundaries():
    assert BUCKET_LABELS == (
        "0", "1-5", "6-10", "11-20", "21-40",
        "41-80", "81-160", "161-320", "321-640", ">640",
    )
    assert bucket_index(0) == 0
    assert bucket_index(1) == 1
    assert bucket_index(5) == 1
    assert bucket_index(6) == 2
    assert bucket_index(7) == 2
    assert bucket_index(10) == 2
    assert bucket_index(11) == 3
    assert bucket_index(640) == 8
    assert bucket_index(641) == 9


def test_bucketed_rmse_assignment_is_total_and_exclusive():
    train = RatingDataset(
        build_sparse(
            [("u1", "i1", 0.5)] + [("u2", f"i{j}", 0.5) for j in range(1, 8)],
            USER_NAMESPACE, ITEM_NAMESPACE,
        ),
        0.0, 1.0,
    )
    # u1 has 1 training rating -> "1-5"; u2 has 7 -> "6-10"; u3 none -> "0"
    predictions = [
        (user("u1"), item("i1"), 0.5, 0.75),
        (user("u2"), item("i1"), 1.0, 0.5),
        (user("u3"), item("i1"), 0.25, 0.25),
    ]
    report = bucketed_rmse(predictions, train, BucketAxis.BY_USER_RATING_COUNT)
    assert sum(b.count for b in report.buckets) == len(predictions)
    assert report.entry("1-5").count == 1
    assert report.entry("6-10").count == 1
    assert report.entry("0").count == 1
    assert report.entry("0").rmse == 0.0
    assert report.entry(">640").count == 0
    assert report.entry(">640").rmse is None


def test_user_mean_baseline():
    train = RatingDataset(
        build_sparse(
            [("u1", "i1", 2.0), ("u1", "i2", 4.0), ("u2", "i1", 1.0)],
            USER_NAMESPACE, ITEM_NAMESPACE,
        ),
        0.0, 5.0,
    )
    test = RatingDataset(
        SparseMatrix(
            train.matrix.row_labels, train.matrix.col_labels,
            np.array([0, 1]), np.array([1, 1]), np.array([3.0, 2.0]),
        ),
        0.0, 5.0,
    )
    predictions = baseline_user_mean(train, test)
    assert predictions.tolist() == [3.0, 1.0]


def test_item_mean_baseline_and_global_fallback():
    labels_u = (user("u1"), user("u2"))
    labels_i = (item("i1"), item("i2"))
    train = RatingDataset(
        SparseMatrix(labels_u, labels_i, np.array([0]), np.array([0]), np.array([2.0])),
        0.0, 5.0,
    )
    test = RatingDataset(
        SparseMatrix(
            labels_u, labels_i, np.array([1, 1]), np.array([0, 1]), np.array([1.0, 4.0])
        ),
        0.0, 5.0,
    )
    predictions = baseline_item_mean(train, test)
    # i1 seen with mean 2.0; i2 unseen falls back to the global mean 2.0
    assert predictions.tolist() == [2.0, 2.0]
    user_side = baseline_user_mean(train, test)
    assert user_side.tolist() == [2.0, 2.0]


def test_baselines_match_scalar_loop_on_random_data():
    rng = np.random.default_rng(8)
    dataset = generate_dataset(SyntheticSpec(n_users=12, n_items=9, density=0.4, seed=8))
    train, test = split(dataset.ratings, SplitSpec(0.75, 1, seed=0))[0]
    got = baseline_user_mean(train, test)
    matrix = train.matrix
    for idx in range(test.matrix.nnz):
        r = int(test.matrix.rows[idx])
        mine = [v for rr, _, v in matrix.entries() if rr == r]
        expected = (
            sum(mine) / len(mine) if mine else float(matrix.values.mean())
        )
        assert got[idx] == pytest.approx(expected, rel=1e-12)


def test_baseline_predictions_stay_in_scale():
    dataset = generate_dataset(SyntheticSpec(n_users=15, n_items=10, density=0.3, seed=4))
    train, test = split(dataset.ratings, SplitSpec(0.8, 1, seed=1))[0]
    for predictions in (baseline_user_mean(train, test), baseline_item_mean(train, test)):
        assert predictions.min() >= dataset.ratings.scale_lo
        assert predictions.max() <= dataset.ratings.scale_hi


def _sweep_dataset():
    return generate_dataset(
        SyntheticSpec(
            n_users=24, n_items=16, k_true=3, density=0.25, noise_sd=0.02, seed=21,
            user_sources=(SourceSpec(SourceKind.USER, n_attributes=10, density=0.5),),
        )
    )


def test_sweep_count_zero_equals_empty_source_list():
    dataset = _sweep_dataset()
    spec = SplitSpec(0.8, 2, seed=0)
    hyper = Hyperparams(k=4, alpha=0.05, epsilon=0.0, max_iters=30, seed=0)
    swept = source_sweep(dataset.ratings, dataset.sources, spec, hyper, SweepMode.USER_ONLY)
    bare = source_sweep(dataset.ratings, [], spec, hyper, SweepMode.USER_ONLY)
    assert swept[0].rmses == bare[0].rmses
    assert len(swept) == 2 and len(bare) == 1


def test_zero_weight_source_is_inert():
    dataset = _sweep_dataset()
    spec = SplitSpec(0.8, 2, seed=0)
    hyper = Hyperparams(
        k=4, alpha=0.05, epsilon=0.0, max_iters=30, seed=0,
        lambda_s_overrides={("user", 1): 0.0},
    )
    swept = source_sweep(dataset.ratings, dataset.sources, spec, hyper, SweepMode.USER_ONLY)
    assert swept[1].rmses == swept[0].rmses  # bit-identical
