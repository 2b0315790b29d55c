"""On-disk formats: sparse triple files, dataset manifests, traces, factors.

Triple files are UTF-8, line oriented, tab separated
``row_key<TAB>col_key<TAB>value``; lines starting with ``#`` are ignored.
A dataset manifest lists the rating file with its scale and every source
file with its kind and index:

    ratings<TAB>ratings.tsv<TAB>0.0<TAB>1.0
    source<TAB>user<TAB>1<TAB>user_source_1.tsv

Paths are relative to the manifest's directory. All writers go through a
temp-file-plus-rename so a crashed run never leaves a truncated file.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ManifestError
from .factors import FactorMatrix
from .objective import ModelState, SourceFactors
from .sparse import (
    RatingDataset,
    SourceKind,
    SourceMatrix,
    SparseMatrix,
    build_sparse,
    source_from_triples,
)
from .entities import ITEM_NAMESPACE, USER_NAMESPACE

MANIFEST_NAME = "manifest.tsv"


def atomic_write_text(path: Path | str, content: str) -> None:
    """Write a whole text file atomically (temp file + rename)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_triples(path: Path | str) -> list[tuple[str, str, float]]:
    triples = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                value = float(parts[2])
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: bad value {parts[2]!r}") from exc
            triples.append((parts[0], parts[1], value))
    return triples


def triples_text(matrix: SparseMatrix) -> str:
    lines = [
        f"{matrix.row_labels[r].key}\t{matrix.col_labels[c].key}\t{v:.17g}"
        for r, c, v in matrix.entries()
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def write_triples(path: Path | str, matrix: SparseMatrix) -> None:
    atomic_write_text(path, triples_text(matrix))


@dataclass(frozen=True)
class Dataset:
    """A rating matrix plus its companion source matrices."""

    ratings: RatingDataset
    sources: tuple[SourceMatrix, ...]


def load_manifest(path: Path | str) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    ratings: RatingDataset | None = None
    sources: list[SourceMatrix] = []
    seen: set[tuple[str, int]] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            where = f"{path}:{lineno}"
            if parts[0] == "ratings":
                if len(parts) != 4:
                    raise ManifestError(f"{where}: ratings line needs file, lo, hi")
                if ratings is not None:
                    raise ManifestError(f"{where}: duplicate ratings line")
                matrix = build_sparse(
                    read_triples(base / parts[1]), USER_NAMESPACE, ITEM_NAMESPACE
                )
                try:
                    ratings = RatingDataset(matrix, float(parts[2]), float(parts[3]))
                except ValueError as exc:
                    raise ManifestError(f"{where}: {exc}") from exc
            elif parts[0] == "source":
                if len(parts) != 4:
                    raise ManifestError(f"{where}: source line needs kind, index, file")
                try:
                    kind = SourceKind(parts[1])
                except ValueError as exc:
                    raise ManifestError(f"{where}: kind must be user or item") from exc
                try:
                    index = int(parts[2])
                except ValueError as exc:
                    raise ManifestError(f"{where}: bad source index {parts[2]!r}") from exc
                if (kind.value, index) in seen:
                    raise ManifestError(f"{where}: duplicate {kind.value} source {index}")
                seen.add((kind.value, index))
                sources.append(
                    source_from_triples(kind, index, read_triples(base / parts[3]))
                )
            else:
                raise ManifestError(f"{where}: unknown record {parts[0]!r}")
    if ratings is None:
        raise ManifestError(f"{path}: no ratings line")
    return Dataset(ratings, tuple(sources))


def write_dataset(directory: Path | str, dataset: Dataset) -> Path:
    """Write a dataset and its manifest into a directory; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        "ratings\tratings.tsv\t"
        f"{dataset.ratings.scale_lo:.17g}\t{dataset.ratings.scale_hi:.17g}"
    ]
    write_triples(directory / "ratings.tsv", dataset.ratings.matrix)
    for src in dataset.sources:
        filename = f"{src.kind.value}_source_{src.index}.tsv"
        write_triples(directory / filename, src.matrix)
        lines.append(f"source\t{src.kind.value}\t{src.index}\t{filename}")
    manifest = directory / MANIFEST_NAME
    atomic_write_text(manifest, "\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# factor files

def _factor_text(fm: FactorMatrix) -> str:
    lines = [f"# k\t{fm.k}"]
    for i, label in enumerate(fm.col_labels):
        values = "\t".join(f"{v:.17g}" for v in fm.values[:, i])
        lines.append(f"{label.key}\t{values}")
    return "\n".join(lines) + "\n"


def _source_file_stem(sf: SourceFactors) -> str:
    return f"{sf.kind.value}_source_{sf.index}"


def write_factors(directory: Path | str, state: ModelState) -> list[Path]:
    """Write every factor matrix as a TSV file; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, fm: FactorMatrix):
        path = directory / f"{name}.tsv"
        atomic_write_text(path, _factor_text(fm))
        written.append(path)

    emit("factors_users", state.users)
    emit("factors_items", state.items)
    for sf in state.user_sources + state.item_sources:
        stem = _source_file_stem(sf)
        emit(f"factors_{stem}_entities", sf.entities)
        emit(f"factors_{stem}_attributes", sf.attributes)
    return written
