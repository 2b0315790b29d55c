"""Dense latent-factor matrices and the training hyperparameters."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .entities import EntityId

INIT_SCALE = 0.01  # uniform initialization half-width, far below any rating scale


class FactorMatrix:
    """A k x n matrix whose columns embed labeled entities.

    Treated as immutable: trainers derive new value arrays rather than
    mutating one in place.
    """

    def __init__(self, col_labels: Sequence[EntityId], values: np.ndarray):
        self.col_labels: tuple[EntityId, ...] = tuple(col_labels)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("factor values must be a 2-d array")
        if self.values.shape[1] != len(self.col_labels):
            raise ValueError("column count must equal label count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("factor values must be finite")
        self._index = {lbl: i for i, lbl in enumerate(self.col_labels)}
        if len(self._index) != len(self.col_labels):
            raise ValueError("column labels are not unique")

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def position(self, label: EntityId) -> int | None:
        return self._index.get(label)

    def column(self, label: EntityId) -> np.ndarray:
        i = self._index[label]
        return self.values[:, i]

    def __repr__(self) -> str:
        return f"FactorMatrix(k={self.k}, n={self.n_cols})"


@dataclass(frozen=True)
class Hyperparams:
    """Learning and regularization parameters.

    `lambda_s` / `lambda_z` apply to every source unless overridden for a
    specific (kind, index) pair, e.g. {("user", 1): 0.0}.
    """

    k: int = 10
    alpha: float = 0.02
    epsilon: float = 1e-5
    max_iters: int = 200
    lambda_u: float = 0.1
    lambda_v: float = 0.1
    lambda_s: float = 0.8
    lambda_z: float = 0.1
    lambda_s_overrides: Mapping[tuple[str, int], float] = field(default_factory=dict)
    lambda_z_overrides: Mapping[tuple[str, int], float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        lams = [self.lambda_u, self.lambda_v, self.lambda_s, self.lambda_z]
        lams += list(self.lambda_s_overrides.values())
        lams += list(self.lambda_z_overrides.values())
        if any(lam < 0 for lam in lams):
            raise ValueError("regularization weights must be nonnegative")

    def lambda_s_for(self, kind: str, index: int) -> float:
        return self.lambda_s_overrides.get((kind, index), self.lambda_s)

    def lambda_z_for(self, kind: str, index: int) -> float:
        return self.lambda_z_overrides.get((kind, index), self.lambda_z)


def _stream_seed(seed: int, role: str, namespace: str) -> np.random.SeedSequence:
    # Stable across runs and platforms (Python's hash() is salted, so it is
    # not usable here).
    digest = hashlib.blake2b(f"{role}|{namespace}".encode("utf-8"), digest_size=8)
    tag = int.from_bytes(digest.digest(), "big")
    return np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32 & 0xFFFFFFFF, tag])


def init_factors(
    labels: Sequence[EntityId], hyper: Hyperparams, role: str, namespace: str = ""
) -> FactorMatrix:
    """Fresh factor matrix with small random values.

    Values are i.i.d. uniform in [-INIT_SCALE, +INIT_SCALE], drawn from a
    generator seeded by (hyper.seed, role, namespace): identical inputs give
    bitwise-identical matrices, and each matrix gets its own stream so adding
    or removing one matrix never shifts another's draws.
    """
    if not namespace and labels:
        namespace = labels[0].namespace
    rng = np.random.default_rng(_stream_seed(hyper.seed, role, namespace))
    values = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hyper.k, len(labels)))
    return FactorMatrix(labels, values)
