"""Command-line interface.

Subcommands: generate, split, train, evaluate, compare, transfer-report.
Exit codes: 0 on success, 1 on usage/config/input errors, 2 when training
diverged. Hyperparameter values resolve as defaults < --config file <
explicit flags; a config file holds ``key = value`` lines keyed by the long
flag names (dashes or underscores both work).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .central import TerminationReason, train_centralized
from .datafiles import (
    atomic_write_text,
    load_manifest,
    write_dataset,
    write_factors,
    write_triples,
)
from .distributed import run_distributed, transfer_report
from .errors import JointrecError
from .evaluation import EvaluationReport, SplitSpec, evaluate_model, split
from .factors import Hyperparams
from .sparse import SourceKind
from .synthetic import SourceSpec, SyntheticSpec, generate_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep exit-code policy out of argparse's hands
        raise _UsageError(message)


def _add_hyper_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value defaults file")
    parser.add_argument("--k", type=int, default=10, help="latent dimensionality")
    parser.add_argument("--alpha", type=float, default=0.02, help="learning rate")
    parser.add_argument("--epsilon", type=float, default=1e-5,
                        help="relative loss-decrease stop threshold")
    parser.add_argument("--max-iters", type=int, default=200)
    parser.add_argument("--lambda-u", type=float, default=0.1)
    parser.add_argument("--lambda-v", type=float, default=0.1)
    parser.add_argument("--lambda-s", type=float, default=0.8,
                        help="source reconstruction weight (all sources)")
    parser.add_argument("--lambda-z", type=float, default=0.1,
                        help="attribute factor penalty (all sources)")
    parser.add_argument("--lambda-s-override", action="append", default=[],
                        metavar="KIND:INDEX=VALUE",
                        help="per-source reconstruction weight, e.g. user:1=0.0")
    parser.add_argument("--lambda-z-override", action="append", default=[],
                        metavar="KIND:INDEX=VALUE")
    parser.add_argument("--seed", type=int, default=0)


def _parse_override(text: str) -> tuple[tuple[str, int], float]:
    try:
        head, value = text.split("=", 1)
        kind, index = head.split(":", 1)
        if kind not in ("user", "item"):
            raise ValueError
        return (kind, int(index)), float(value)
    except ValueError:
        raise _UsageError(
            f"bad override {text!r}, expected KIND:INDEX=VALUE"
        ) from None


def _hyper_from_args(args: argparse.Namespace) -> Hyperparams:
    try:
        return Hyperparams(
            k=args.k,
            alpha=args.alpha,
            epsilon=args.epsilon,
            max_iters=args.max_iters,
            lambda_u=args.lambda_u,
            lambda_v=args.lambda_v,
            lambda_s=args.lambda_s,
            lambda_z=args.lambda_z,
            lambda_s_overrides=dict(_parse_override(o) for o in args.lambda_s_override),
            lambda_z_overrides=dict(_parse_override(o) for o in args.lambda_z_override),
            seed=args.seed,
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc


def _expand_config(argv: list[str]) -> list[str]:
    """Splice --config file entries into argv as flags, before explicit ones.

    Explicit command-line flags come later in argv and therefore win.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    if not known.config.is_file():
        raise _UsageError(f"config file not found: {known.config}")
    injected: list[str] = []
    for lineno, line in enumerate(
        known.config.read_text(encoding="utf-8").splitlines(), 1
    ):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"{known.config}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        injected += [f"--{key.replace('_', '-')}", value]
    # argv[0] is the subcommand; unknown keys are rejected by its parser
    return argv[:1] + injected + argv[1:]


def _build_parser() -> _Parser:
    parser = _Parser(prog="jointrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate",
                       help="write a synthetic dataset with a manifest")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--users", type=int, default=60)
    p.add_argument("--items", type=int, default=40)
    p.add_argument("--rank-true", type=int, default=4)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--scale-lo", type=float, default=0.0)
    p.add_argument("--scale-hi", type=float, default=1.0)
    p.add_argument("--activity-skew", type=float, default=0.0)
    p.add_argument("--user-sources", type=int, default=0)
    p.add_argument("--item-sources", type=int, default=0)
    p.add_argument("--attributes", type=int, default=20)
    p.add_argument("--source-density", type=float, default=0.3)
    p.add_argument("--source-noise", type=float, default=0.0)
    p.add_argument("--noise-sources", action="store_true",
                   help="generate sources from independent draws instead of "
                        "the planted factors")
    p.add_argument("--shared-fraction", type=float, default=1.0)
    p.add_argument("--extra-entities", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("split",
                       help="write train/test rating files per repetition")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train",
                       help="train and write factors, trace and (distributed) ledger")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=("central", "distributed"), default="central")
    _add_hyper_flags(p)

    p = sub.add_parser("evaluate",
                       help="split/train/score with baselines and bucket reports")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=("central", "distributed"), default="central")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--split-seed", type=int, default=0)
    _add_hyper_flags(p)

    p = sub.add_parser("compare",
                       help="run both modes and report the worst factor difference")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--tolerance", type=float, default=1e-9)
    _add_hyper_flags(p)

    p = sub.add_parser("transfer-report",
                       help="bytes moved: raw-data shipping vs latent exchange")
    p.add_argument("--shared-users", type=int, default=0)
    p.add_argument("--shared-items", type=int, default=0)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--nnz", type=int, required=True,
                   help="observed entries of the centrally shipped matrix")
    return parser


def _cmd_generate(args) -> int:
    user_specs = tuple(
        SourceSpec(
            SourceKind.USER,
            n_attributes=args.attributes,
            density=args.source_density,
            noise_sd=args.source_noise,
            informative=not args.noise_sources,
            shared_fraction=args.shared_fraction,
            extra_entities=args.extra_entities,
        )
        for _ in range(args.user_sources)
    )
    item_specs = tuple(
        SourceSpec(
            SourceKind.ITEM,
            n_attributes=args.attributes,
            density=args.source_density,
            noise_sd=args.source_noise,
            informative=not args.noise_sources,
            shared_fraction=args.shared_fraction,
            extra_entities=args.extra_entities,
        )
        for _ in range(args.item_sources)
    )
    spec = SyntheticSpec(
        n_users=args.users,
        n_items=args.items,
        k_true=args.rank_true,
        density=args.density,
        noise_sd=args.noise,
        scale_lo=args.scale_lo,
        scale_hi=args.scale_hi,
        activity_skew=args.activity_skew,
        user_sources=user_specs,
        item_sources=item_specs,
        seed=args.seed,
    )
    manifest = write_dataset(args.out, generate_dataset(spec))
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_split(args) -> int:
    dataset = load_manifest(args.manifest)
    spec = SplitSpec(args.train_fraction, args.repetitions, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for rep, (train, test) in enumerate(split(dataset.ratings, spec)):
        write_triples(args.out / f"train_{rep}.tsv", train.matrix)
        write_triples(args.out / f"test_{rep}.tsv", test.matrix)
    print(f"wrote {spec.repetitions} train/test pairs to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    dataset = load_manifest(args.manifest)
    hyper = _hyper_from_args(args)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.mode == "central":
        state, trace = train_centralized(dataset.ratings, dataset.sources, hyper)
    else:
        state, trace, ledger = run_distributed(dataset.ratings, dataset.sources, hyper)
        atomic_write_text(args.out / "ledger.tsv", ledger.to_text())
    atomic_write_text(args.out / "trace.tsv", trace.to_text())
    write_factors(args.out, state)
    print(
        f"{args.mode}: {trace.reason.value} after {len(trace.entries)} iterations, "
        f"final loss {trace.final_loss:.6g}"
    )
    if trace.reason is TerminationReason.DIVERGED:
        print("training diverged (loss left the finite range)", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _report_json(report: EvaluationReport) -> str:
    def buckets(entries):
        return [
            {"label": b.label, "count": b.count, "rmse": b.rmse} for b in entries
        ]

    payload = {
        "mean_rmse": report.mean_rmse,
        "baselines": {
            "user_mean_rmse": report.mean_user_mean_rmse,
            "item_mean_rmse": report.mean_item_mean_rmse,
        },
        "repetitions": [
            {
                "rmse": r.rmse,
                "user_mean_rmse": r.user_mean_rmse,
                "item_mean_rmse": r.item_mean_rmse,
            }
            for r in report.repetitions
        ],
        "buckets": {
            "by_user": buckets(report.user_buckets),
            "by_item": buckets(report.item_buckets),
        },
    }
    return json.dumps(payload, indent=2) + "\n"


def _report_tsv(report: EvaluationReport) -> str:
    lines = [f"mean_rmse\t{report.mean_rmse:.17g}"]
    lines.append(f"baseline_user_mean_rmse\t{report.mean_user_mean_rmse:.17g}")
    lines.append(f"baseline_item_mean_rmse\t{report.mean_item_mean_rmse:.17g}")
    for rep, r in enumerate(report.repetitions):
        lines.append(
            f"repetition\t{rep}\t{r.rmse:.17g}\t{r.user_mean_rmse:.17g}"
            f"\t{r.item_mean_rmse:.17g}"
        )
    for axis, entries in (("by_user", report.user_buckets),
                          ("by_item", report.item_buckets)):
        for b in entries:
            value = "" if b.rmse is None else f"{b.rmse:.17g}"
            lines.append(f"bucket\t{axis}\t{b.label}\t{b.count}\t{value}")
    return "\n".join(lines) + "\n"


def _cmd_evaluate(args) -> int:
    dataset = load_manifest(args.manifest)
    hyper = _hyper_from_args(args)
    try:
        spec = SplitSpec(args.train_fraction, args.repetitions, args.split_seed)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    report = evaluate_model(dataset.ratings, dataset.sources, spec, hyper,
                            trainer=args.mode)
    args.out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(args.out / "report.tsv", _report_tsv(report))
    atomic_write_text(args.out / "report.json", _report_json(report))
    print(f"mean RMSE {report.mean_rmse:.4f} over {args.repetitions} repetitions")
    print(f"baseline user-mean RMSE {report.mean_user_mean_rmse:.4f}")
    print(f"baseline item-mean RMSE {report.mean_item_mean_rmse:.4f}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    dataset = load_manifest(args.manifest)
    hyper = _hyper_from_args(args)
    central_state, central_trace = train_centralized(
        dataset.ratings, dataset.sources, hyper
    )
    dist_state, dist_trace, _ = run_distributed(
        dataset.ratings, dataset.sources, hyper
    )
    worst = max(
        float(np.max(np.abs(a.values - b.values))) if a.values.size else 0.0
        for a, b in _paired_factor_matrices(central_state, dist_state)
    )
    loss_pairs = zip(central_trace.entries, dist_trace.entries)
    worst_loss = 0.0
    for ce, de in loss_pairs:
        scale = max(abs(ce.loss), 1e-12)
        worst_loss = max(worst_loss, abs(ce.loss - de.loss) / scale)
    same_length = len(central_trace.entries) == len(dist_trace.entries)
    print(f"max |central - distributed| over factors: {worst:.3e}")
    print(f"max relative loss difference: {worst_loss:.3e}")
    print(f"iterations: central {len(central_trace.entries)}, "
          f"distributed {len(dist_trace.entries)}")
    ok = worst <= args.tolerance and worst_loss <= args.tolerance and same_length
    return EXIT_OK if ok else EXIT_USAGE


def _paired_factor_matrices(a, b):
    yield a.users, b.users
    yield a.items, b.items
    for sa, sb in zip(a.user_sources + a.item_sources,
                      b.user_sources + b.item_sources):
        yield sa.entities, sb.entities
        yield sa.attributes, sb.attributes


def _cmd_transfer_report(args) -> int:
    report = transfer_report(
        args.shared_users, args.shared_items, args.k, args.iterations, args.nnz
    )
    print(report.to_text(), end="")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "split": _cmd_split,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "transfer-report": _cmd_transfer_report,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(_expand_config(argv))
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (JointrecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
