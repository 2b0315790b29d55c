"""Centralized gradient-descent trainer.

One iteration computes the full gradient set, steps every factor matrix by
-alpha * gradient, and evaluates the loss on the updated state. Training
stops when the relative loss decrease falls below epsilon, the iteration
budget runs out, or the loss stops being finite. The run is a pure function
of (inputs, hyperparameters, seed).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .factors import FactorMatrix, Hyperparams
from .objective import (
    GradientSet,
    ModelState,
    SourceFactors,
    grad,
    init_state,
    loss,
)
from .sparse import RatingDataset, SourceMatrix

logger = logging.getLogger(__name__)

LOSS_FLOOR = 1e-12  # guards the relative-decrease test when the loss reaches zero


class TerminationReason(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    loss: float
    max_update: float


@dataclass(frozen=True)
class TrainTrace:
    initial_loss: float
    entries: tuple[TraceEntry, ...]
    reason: TerminationReason

    def __post_init__(self):
        iters = [e.iteration for e in self.entries]
        if iters != sorted(set(iters)):
            raise ValueError("iteration indices must be strictly increasing")

    @property
    def final_loss(self) -> float:
        return self.entries[-1].loss if self.entries else self.initial_loss

    def to_text(self) -> str:
        lines = [
            f"# initial_loss\t{self.initial_loss:.17g}",
            f"# reason\t{self.reason.value}",
        ]
        for e in self.entries:
            lines.append(f"{e.iteration}\t{e.loss:.17g}\t{e.max_update:.17g}")
        return "\n".join(lines) + "\n"


def converged(previous: float, current: float, epsilon: float) -> bool:
    """Relative-decrease stopping test shared by both trainers.

    A loss increase is not convergence; runaway steps keep going until the
    loss leaves the finite range and is reported as divergence.
    """
    decrease = (previous - current) / max(previous, LOSS_FLOOR)
    return 0.0 <= decrease < epsilon


def _max_abs(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


def _stepped(fm: FactorMatrix, g: FactorMatrix, alpha: float) -> np.ndarray:
    return fm.values - alpha * g.values


def _apply_update(
    state: ModelState, gradients: GradientSet, alpha: float
) -> tuple[ModelState | None, float]:
    """New state after one step, or None if any factor left the finite range.

    The second element is the largest absolute parameter change.
    """
    new_users = _stepped(state.users, gradients.users, alpha)
    new_items = _stepped(state.items, gradients.items, alpha)
    grad_max = max(_max_abs(gradients.users.values), _max_abs(gradients.items.values))
    new_sources: dict[int, list] = {0: [], 1: []}
    ok = bool(np.all(np.isfinite(new_users)) and np.all(np.isfinite(new_items)))
    for slot, (group, g_group) in enumerate(
        (
            (state.user_sources, gradients.user_sources),
            (state.item_sources, gradients.item_sources),
        )
    ):
        for sf, gf in zip(group, g_group):
            ent = _stepped(sf.entities, gf.entities, alpha)
            att = _stepped(sf.attributes, gf.attributes, alpha)
            grad_max = max(
                grad_max, _max_abs(gf.entities.values), _max_abs(gf.attributes.values)
            )
            ok = ok and bool(np.all(np.isfinite(ent)) and np.all(np.isfinite(att)))
            new_sources[slot].append((sf, ent, att))
    max_update = alpha * grad_max
    if not ok:
        return None, max_update
    rebuilt = []
    for slot in (0, 1):
        rebuilt.append(
            tuple(
                SourceFactors(
                    sf.kind,
                    sf.index,
                    FactorMatrix(sf.entities.col_labels, ent),
                    FactorMatrix(sf.attributes.col_labels, att),
                    sf.alignment,
                )
                for sf, ent, att in new_sources[slot]
            )
        )
    return (
        ModelState(
            FactorMatrix(state.users.col_labels, new_users),
            FactorMatrix(state.items.col_labels, new_items),
            rebuilt[0],
            rebuilt[1],
        ),
        max_update,
    )


def sync_shared_columns(state: ModelState) -> ModelState:
    """Copy global factor columns into the mirrored shared source columns."""
    def synced(group: tuple[SourceFactors, ...], globals_: FactorMatrix):
        out = []
        for sf in group:
            values = sf.entities.values.copy()
            if sf.alignment.shared_count:
                values[:, sf.alignment.shared_local] = globals_.values[
                    :, sf.alignment.shared_global
                ]
            out.append(
                SourceFactors(
                    sf.kind, sf.index,
                    FactorMatrix(sf.entities.col_labels, values),
                    sf.attributes, sf.alignment,
                )
            )
        return tuple(out)

    return ModelState(
        state.users,
        state.items,
        synced(state.user_sources, state.users),
        synced(state.item_sources, state.items),
    )


def train_centralized(
    ratings: RatingDataset,
    sources: Sequence[SourceMatrix],
    hyper: Hyperparams,
) -> tuple[ModelState, TrainTrace]:
    """Run full-gradient descent on the joint objective."""
    state = init_state(ratings, sources, hyper)
    with np.errstate(over="ignore", invalid="ignore"):
        previous = loss(ratings, sources, state, hyper).total
        initial = previous
        entries: list[TraceEntry] = []
        reason = TerminationReason.MAX_ITERS
        for t in range(1, hyper.max_iters + 1):
            gradients = grad(ratings, sources, state, hyper)
            stepped, max_update = _apply_update(state, gradients, hyper.alpha)
            if stepped is None:
                entries.append(TraceEntry(t, float("inf"), max_update))
                reason = TerminationReason.DIVERGED
                break
            state = stepped
            current = loss(ratings, sources, state, hyper).total
            entries.append(TraceEntry(t, current, max_update))
            if not math.isfinite(current):
                reason = TerminationReason.DIVERGED
                break
            if converged(previous, current, hyper.epsilon):
                reason = TerminationReason.CONVERGED
                break
            previous = current
    trace = TrainTrace(initial, tuple(entries), reason)
    logger.debug(
        "centralized run finished: %s after %d iterations, loss %.6g",
        reason.value, len(entries), trace.final_loss,
    )
    return sync_shared_columns(state), trace
