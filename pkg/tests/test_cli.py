import json

import pytest

from jointrec.cli import main


@pytest.fixture()
def dataset_dir(tmp_path):
    out = tmp_path / "data"
    code = main([
        "generate", "--out", str(out),
        "--users", "24", "--items", "16", "--rank-true", "3",
        "--density", "0.25", "--noise", "0.02",
        "--user-sources", "1", "--item-sources", "1",
        "--attributes", "8", "--source-density", "0.5",
        "--seed", "7",
    ])
    assert code == 0
    return out


def _manifest(dataset_dir):
    return str(dataset_dir / "manifest.tsv")


def test_missing_manifest_fails_and_names_the_path(tmp_path, capsys):
    missing = tmp_path / "does-not-exist" / "manifest.tsv"
    code = main(["train", "--manifest", str(missing), "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == 1
    assert str(missing) in captured.err


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["train", "--nope"]) == 1
    assert "error" in capsys.readouterr().err


def test_generate_is_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert main([
            "generate", "--out", str(out), "--users", "10", "--items", "8",
            "--density", "0.3", "--seed", "3",
        ]) == 0
    assert (a / "ratings.tsv").read_bytes() == (b / "ratings.tsv").read_bytes()
    assert (a / "manifest.tsv").read_bytes() == (b / "manifest.tsv").read_bytes()


def test_train_central_writes_decreasing_trace(dataset_dir, tmp_path):
    out = tmp_path / "run"
    code = main([
        "train", "--manifest", _manifest(dataset_dir), "--out", str(out),
        "--mode", "central", "--k", "4", "--alpha", "0.03",
        "--epsilon", "0", "--max-iters", "40", "--seed", "1",
    ])
    assert code == 0
    lines = [
        ln for ln in (out / "trace.tsv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    losses = [float(ln.split("\t")[1]) for ln in lines]
    assert len(losses) == 40
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert (out / "factors_users.tsv").is_file()
    assert (out / "factors_items.tsv").is_file()
    assert (out / "factors_user_source_1_entities.tsv").is_file()
    assert not (out / "ledger.tsv").exists()


def test_train_distributed_writes_ledger(dataset_dir, tmp_path):
    out = tmp_path / "run"
    code = main([
        "train", "--manifest", _manifest(dataset_dir), "--out", str(out),
        "--mode", "distributed", "--k", "4", "--max-iters", "10", "--epsilon", "0",
    ])
    assert code == 0
    ledger = (out / "ledger.tsv").read_text().splitlines()
    assert ledger
    assert all(len(ln.split("\t")) == 4 for ln in ledger)


def test_train_runs_are_byte_identical(dataset_dir, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        code = main([
            "train", "--manifest", _manifest(dataset_dir), "--out", str(out),
            "--mode", "central", "--k", "4", "--max-iters", "15", "--seed", "9",
        ])
        assert code == 0
        outs.append(out)
    for filename in ("trace.tsv", "factors_users.tsv", "factors_items.tsv"):
        assert (outs[0] / filename).read_bytes() == (outs[1] / filename).read_bytes()


def test_train_divergence_exit_code(dataset_dir, tmp_path, capsys):
    code = main([
        "train", "--manifest", _manifest(dataset_dir), "--out", str(tmp_path / "run"),
        "--alpha", "1000", "--epsilon", "0", "--max-iters", "50",
    ])
    assert code == 2
    assert "diverged" in capsys.readouterr().err.lower()


def test_compare_modes_within_tolerance(dataset_dir, capsys):
    code = main([
        "compare", "--manifest", _manifest(dataset_dir),
        "--k", "3", "--max-iters", "12", "--epsilon", "0",
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "max |central - distributed|" in out


def test_evaluate_writes_reports_with_baseline_columns(dataset_dir, tmp_path):
    out = tmp_path / "eval"
    code = main([
        "evaluate", "--manifest", _manifest(dataset_dir), "--out", str(out),
        "--train-fraction", "0.8", "--repetitions", "2",
        "--k", "4", "--max-iters", "30", "--epsilon", "0",
    ])
    assert code == 0
    tsv = (out / "report.tsv").read_text()
    assert "baseline_user_mean_rmse" in tsv
    assert "baseline_item_mean_rmse" in tsv
    assert "bucket\tby_user\t0" in tsv
    report = json.loads((out / "report.json").read_text())
    assert set(report) == {"mean_rmse", "baselines", "repetitions", "buckets"}
    assert len(report["buckets"]["by_user"]) == 10
    assert len(report["repetitions"]) == 2


def test_evaluate_rejects_empty_test_split(tmp_path, capsys):
    data = tmp_path / "tiny"
    assert main([
        "generate", "--out", str(data), "--users", "3", "--items", "3",
        "--density", "0.34", "--seed", "0",
    ]) == 0
    code = main([
        "evaluate", "--manifest", str(data / "manifest.tsv"),
        "--out", str(tmp_path / "eval"),
        "--train-fraction", "0.99", "--repetitions", "1",
    ])
    assert code == 1
    assert "empty" in capsys.readouterr().err


def test_evaluate_rejects_bad_fraction(dataset_dir, tmp_path, capsys):
    code = main([
        "evaluate", "--manifest", _manifest(dataset_dir),
        "--out", str(tmp_path / "eval"), "--train-fraction", "1.0",
    ])
    assert code == 1


def test_split_writes_partition_files(dataset_dir, tmp_path):
    out = tmp_path / "splits"
    code = main([
        "split", "--manifest", _manifest(dataset_dir), "--out", str(out),
        "--train-fraction", "0.8", "--repetitions", "3", "--seed", "2",
    ])
    assert code == 0
    for rep in range(3):
        train = (out / f"train_{rep}.tsv").read_text().splitlines()
        test = (out / f"test_{rep}.tsv").read_text().splitlines()
        assert train and test
        assert not set(train) & set(test)


def test_transfer_report_output(capsys):
    code = main([
        "transfer-report", "--shared-users", "4000000", "--k", "10",
        "--iterations", "100", "--nnz", "80000000000",
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "1.16 TB" in out
    assert "610 MB" in out
    assert "59 GB" in out
    assert "5.0%" in out


def test_transfer_report_zero_iterations(capsys):
    code = main([
        "transfer-report", "--shared-users", "10", "--k", "5",
        "--iterations", "0", "--nnz", "100",
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "0 B" in out


def test_config_file_defaults_and_flag_precedence(dataset_dir, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("k = 3\nmax-iters = 5\nepsilon = 0\nseed = 4\n", encoding="utf-8")
    out1 = tmp_path / "c1"
    assert main([
        "train", "--manifest", _manifest(dataset_dir), "--out", str(out1),
        "--config", str(config),
    ]) == 0
    lines = [
        ln for ln in (out1 / "trace.tsv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    assert len(lines) == 5  # max-iters from the config file
    out2 = tmp_path / "c2"
    assert main([
        "train", "--manifest", _manifest(dataset_dir), "--out", str(out2),
        "--config", str(config), "--max-iters", "2",
    ]) == 0
    lines2 = [
        ln for ln in (out2 / "trace.tsv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    assert len(lines2) == 2  # explicit flag beats the config file


def test_config_file_rejects_unknown_keys(dataset_dir, tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("verbosity = 3\n", encoding="utf-8")
    code = main([
        "train", "--manifest", _manifest(dataset_dir),
        "--out", str(tmp_path / "x"), "--config", str(config),
    ])
    assert code == 1


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "transfer-report" in capsys.readouterr().out
