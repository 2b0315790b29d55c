"""Deterministic in-process simulation of the master/slave training protocol.

The master cluster holds the rating matrix and the global factors; each
slave cluster holds one source matrix and its factors. Raw data never moves:
per iteration and per slave, the wire carries one latent-vector download,
one partial-gradient upload restricted to shared entities, and one local
loss scalar. Every message is routed through a bus that accounts its bytes
(8 per double, 8 per entity key) in a per-iteration ledger.

One simulated round performs exactly one step of the centralized trainer:
slaves send partials computed on the synced state, the master merges them
with its local gradient and steps the global factors, slaves step their own
non-shared factors, and the end-of-round download re-syncs the mirrored
columns so the reported loss is the post-update joint loss. Runs are
bit-for-bit reproducible given the seed, and slaves within a round may be
processed in any order without changing the result (merging is sequential
in canonical order regardless).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .central import (
    TerminationReason,
    TraceEntry,
    TrainTrace,
    converged,
    sync_shared_columns,
)
from .entities import EntityId
from .errors import MissingSlaveReplyError, UnknownEntityInMessageError
from .factors import FactorMatrix, Hyperparams
from .objective import (
    ModelState,
    SourceFactors,
    init_state,
    oplus,
    rating_gradients,
    rating_loss_terms,
    source_gradients,
    source_loss_terms,
)
from .sparse import RatingDataset, SourceKind, SourceMatrix

logger = logging.getLogger(__name__)

BYTES_PER_DOUBLE = 8
BYTES_PER_KEY = 8


class MessageKind(enum.Enum):
    LATENT_DOWN = "latent_down"
    PARTIAL_UP = "partial_up"
    LOCAL_LOSS_UP = "local_loss_up"


@dataclass(frozen=True)
class GradientMessage:
    """One protocol message: labeled latent vectors or a loss scalar."""

    kind: MessageKind
    link: str
    vectors: tuple[tuple[EntityId, np.ndarray], ...] = ()
    scalar: float | None = None

    @property
    def byte_size(self) -> int:
        if self.scalar is not None:
            return BYTES_PER_DOUBLE
        count = len(self.vectors)
        k = len(self.vectors[0][1]) if count else 0
        return count * k * BYTES_PER_DOUBLE + count * BYTES_PER_KEY


@dataclass(frozen=True)
class LedgerRow:
    iteration: int
    link: str
    direction: str
    bytes: int


class TrafficLedger:
    """Per-link, per-iteration byte accounting of all protocol messages."""

    def __init__(self):
        self.rows: list[LedgerRow] = []

    def record(self, iteration: int, message: GradientMessage) -> None:
        self.rows.append(
            LedgerRow(iteration, message.link, message.kind.value, message.byte_size)
        )

    @property
    def total_bytes(self) -> int:
        return sum(row.bytes for row in self.rows)

    def bytes_where(
        self,
        iteration: int | None = None,
        link: str | None = None,
        direction: str | None = None,
    ) -> int:
        total = 0
        for row in self.rows:
            if iteration is not None and row.iteration != iteration:
                continue
            if link is not None and row.link != link:
                continue
            if direction is not None and row.direction != direction:
                continue
            total += row.bytes
        return total

    def to_text(self) -> str:
        lines = [
            f"{r.iteration}\t{r.link}\t{r.direction}\t{r.bytes}" for r in self.rows
        ]
        return "\n".join(lines) + ("\n" if lines else "")


class MessageBus:
    """Routes messages between clusters, charging each one to the ledger.

    Delivery is ordered per link and scoped to the current iteration; the
    coordinator acts as the barrier, so a round only completes once every
    registered slave has replied.
    """

    def __init__(self, ledger: TrafficLedger, keep_messages: bool = False):
        self.ledger = ledger
        self.messages: list[tuple[int, GradientMessage]] | None = (
            [] if keep_messages else None
        )

    def transmit(self, iteration: int, message: GradientMessage) -> GradientMessage:
        if message is None:
            raise MissingSlaveReplyError("a registered cluster sent no reply")
        self.ledger.record(iteration, message)
        if self.messages is not None:
            self.messages.append((iteration, message))
        return message


class MasterNode:
    """The cluster holding the rating matrix and the global factors."""

    def __init__(
        self,
        ratings: RatingDataset,
        users: FactorMatrix,
        items: FactorMatrix,
        hyper: Hyperparams,
    ):
        self.ratings = ratings
        self.user_labels = users.col_labels
        self.item_labels = items.col_labels
        self.user_values = users.values.copy()
        self.item_values = items.values.copy()
        self.hyper = hyper
        self._pending_users: FactorMatrix | None = None
        self._pending_items: FactorMatrix | None = None
        self._staged_users: np.ndarray | None = None
        self._staged_items: np.ndarray | None = None

    def local_loss(self) -> float:
        rating, reg = rating_loss_terms(
            self.user_values, self.item_values, self.ratings.matrix,
            self.hyper.lambda_u, self.hyper.lambda_v,
        )
        return rating + reg

    def compute_local_gradients(self) -> None:
        g_u, g_v = rating_gradients(
            self.user_values, self.item_values, self.ratings.matrix,
            self.hyper.lambda_u, self.hyper.lambda_v,
        )
        self._pending_users = FactorMatrix(self.user_labels, g_u)
        self._pending_items = FactorMatrix(self.item_labels, g_v)

    def fold_partial(self, message: GradientMessage, kind: SourceKind) -> None:
        labels = tuple(eid for eid, _ in message.vectors)
        values = (
            np.column_stack([vec for _, vec in message.vectors])
            if message.vectors
            else np.zeros((self.hyper.k, 0))
        )
        partial = FactorMatrix(labels, values)
        if kind is SourceKind.USER:
            self._pending_users = oplus(self._pending_users, partial)
        else:
            self._pending_items = oplus(self._pending_items, partial)

    def pending_grad_max(self) -> float:
        return max(
            _max_abs(self._pending_users.values), _max_abs(self._pending_items.values)
        )

    def stage_update(self) -> bool:
        """Compute the stepped factors; True iff they are all finite."""
        alpha = self.hyper.alpha
        self._staged_users = self.user_values - alpha * self._pending_users.values
        self._staged_items = self.item_values - alpha * self._pending_items.values
        return bool(
            np.all(np.isfinite(self._staged_users))
            and np.all(np.isfinite(self._staged_items))
        )

    def commit_update(self) -> None:
        self.user_values = self._staged_users
        self.item_values = self._staged_items
        self._pending_users = self._pending_items = None
        self._staged_users = self._staged_items = None

    def latents_message_for(self, slave: "SlaveNode") -> GradientMessage:
        source_values = (
            self.user_values if slave.kind is SourceKind.USER else self.item_values
        )
        alignment = slave.alignment
        vectors = tuple(
            (label, source_values[:, g].copy())
            for label, g in zip(alignment.shared_labels, alignment.shared_global)
        )
        return GradientMessage(MessageKind.LATENT_DOWN, slave.link, vectors=vectors)


class SlaveNode:
    """A cluster holding one source matrix; never sees any rating entry."""

    def __init__(self, source: SourceMatrix, factors: SourceFactors, hyper: Hyperparams):
        self.kind = source.kind
        self.index = source.index
        self.link = source.name
        self.matrix = source.matrix
        self.alignment = factors.alignment
        self.entity_values = factors.entities.values.copy()
        self.attr_values = factors.attributes.values.copy()
        self.entity_labels = factors.entities.col_labels
        self.attr_labels = factors.attributes.col_labels
        self.hyper = hyper
        self.lam_s = hyper.lambda_s_for(self.kind.value, self.index)
        self.lam_entity = (
            hyper.lambda_u if self.kind is SourceKind.USER else hyper.lambda_v
        )
        self.lam_z = hyper.lambda_z_for(self.kind.value, self.index)
        self._shared_table = {
            label: int(pos)
            for label, pos in zip(self.alignment.shared_labels, self.alignment.shared_local)
        }
        self._pending_entities: np.ndarray | None = None
        self._pending_attrs: np.ndarray | None = None
        self._staged_entities: np.ndarray | None = None
        self._staged_attrs: np.ndarray | None = None

    def receive_latents(self, message: GradientMessage) -> None:
        """Overwrite the mirrored shared columns with the downloaded vectors."""
        for label, vector in message.vectors:
            pos = self._shared_table.get(label)
            if pos is None:
                raise UnknownEntityInMessageError(
                    f"{self.link}: received latents for unknown entity {label!r}"
                )
            self.entity_values[:, pos] = vector

    def compute_partial(self) -> GradientMessage:
        """Partial gradient over shared entities; local gradients are kept back."""
        shared_rows, g_entities, g_attrs = source_gradients(
            self.entity_values, self.attr_values, self.matrix,
            self.lam_s, self.lam_entity, self.lam_z, self.alignment,
        )
        self._pending_entities = g_entities
        self._pending_attrs = g_attrs
        vectors = tuple(
            (label, shared_rows[:, i].copy())
            for i, label in enumerate(self.alignment.shared_labels)
        )
        return GradientMessage(MessageKind.PARTIAL_UP, self.link, vectors=vectors)

    def pending_grad_max(self) -> float:
        return max(_max_abs(self._pending_entities), _max_abs(self._pending_attrs))

    def stage_update(self) -> bool:
        alpha = self.hyper.alpha
        self._staged_entities = self.entity_values - alpha * self._pending_entities
        self._staged_attrs = self.attr_values - alpha * self._pending_attrs
        return bool(
            np.all(np.isfinite(self._staged_entities))
            and np.all(np.isfinite(self._staged_attrs))
        )

    def commit_update(self) -> None:
        self.entity_values = self._staged_entities
        self.attr_values = self._staged_attrs
        self._pending_entities = self._pending_attrs = None
        self._staged_entities = self._staged_attrs = None

    def loss_message(self) -> GradientMessage:
        recon, reg = source_loss_terms(
            self.entity_values, self.attr_values, self.matrix,
            self.lam_s, self.lam_entity, self.lam_z, self.alignment,
        )
        return GradientMessage(
            MessageKind.LOCAL_LOSS_UP, self.link, scalar=recon + reg
        )


class UserSlaveNode(SlaveNode):
    """Slave cluster for a source describing users."""


class ItemSlaveNode(SlaveNode):
    """Slave cluster for a source describing items."""


def _max_abs(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


def _make_slave(source: SourceMatrix, factors: SourceFactors, hyper: Hyperparams) -> SlaveNode:
    cls = UserSlaveNode if source.kind is SourceKind.USER else ItemSlaveNode
    return cls(source, factors, hyper)


def _sync_and_collect_loss(
    iteration: int,
    bus: MessageBus,
    master: MasterNode,
    slaves: Sequence[SlaveNode],
) -> float:
    """Download current latents to every slave, then assemble the joint loss."""
    for slave in slaves:
        down = bus.transmit(iteration, master.latents_message_for(slave))
        slave.receive_latents(down)
    total = master.local_loss()
    for slave in slaves:
        up = bus.transmit(iteration, slave.loss_message())
        if up.scalar is None:
            raise MissingSlaveReplyError(f"{slave.link}: loss reply carried no scalar")
        total = total + up.scalar
    return total


def _assemble_state(master: MasterNode, slaves: Sequence[SlaveNode]) -> ModelState:
    user_sources = []
    item_sources = []
    for slave in slaves:
        sf = SourceFactors(
            slave.kind,
            slave.index,
            FactorMatrix(slave.entity_labels, slave.entity_values.copy()),
            FactorMatrix(slave.attr_labels, slave.attr_values.copy()),
            slave.alignment,
        )
        (user_sources if slave.kind is SourceKind.USER else item_sources).append(sf)
    return sync_shared_columns(
        ModelState(
            FactorMatrix(master.user_labels, master.user_values.copy()),
            FactorMatrix(master.item_labels, master.item_values.copy()),
            tuple(user_sources),
            tuple(item_sources),
        )
    )


Observer = Callable[[int, MasterNode, Sequence[SlaveNode]], None]


def run_distributed(
    ratings: RatingDataset,
    sources: Sequence[SourceMatrix],
    hyper: Hyperparams,
    observer: Observer | None = None,
    bus: MessageBus | None = None,
) -> tuple[ModelState, TrainTrace, TrafficLedger]:
    """Simulate the full master/slave protocol until convergence.

    Returns the assembled global state (master factors plus every slave's
    local factors), the training trace, and the traffic ledger. `observer`,
    if given, is called after every synchronized iteration with
    (iteration, master, slaves) for instrumentation; a caller-supplied `bus`
    (for example one created with ``keep_messages=True``) replaces the
    default one.
    """
    initial_state = init_state(ratings, sources, hyper)
    master = MasterNode(ratings, initial_state.users, initial_state.items, hyper)
    by_id = {(s.kind, s.index): s for s in sources}
    slaves = [
        _make_slave(by_id[(sf.kind, sf.index)], sf, hyper)
        for sf in initial_state.user_sources + initial_state.item_sources
    ]
    user_slaves = [s for s in slaves if s.kind is SourceKind.USER]
    item_slaves = [s for s in slaves if s.kind is SourceKind.ITEM]
    if bus is None:
        bus = MessageBus(TrafficLedger())
    ledger = bus.ledger

    with np.errstate(over="ignore", invalid="ignore"):
        previous = _sync_and_collect_loss(0, bus, master, slaves)
        initial = previous
        if observer is not None:
            observer(0, master, slaves)
        entries: list[TraceEntry] = []
        reason = TerminationReason.MAX_ITERS
        for t in range(1, hyper.max_iters + 1):
            master.compute_local_gradients()
            for slave in user_slaves:
                partial = bus.transmit(t, slave.compute_partial())
                master.fold_partial(partial, SourceKind.USER)
            for slave in item_slaves:
                partial = bus.transmit(t, slave.compute_partial())
                master.fold_partial(partial, SourceKind.ITEM)
            grad_max = master.pending_grad_max()
            for slave in slaves:
                grad_max = max(grad_max, slave.pending_grad_max())
            max_update = hyper.alpha * grad_max
            finite = master.stage_update()
            for slave in slaves:
                finite = slave.stage_update() and finite
            if not finite:
                entries.append(TraceEntry(t, float("inf"), max_update))
                reason = TerminationReason.DIVERGED
                break
            master.commit_update()
            for slave in slaves:
                slave.commit_update()
            current = _sync_and_collect_loss(t, bus, master, slaves)
            entries.append(TraceEntry(t, current, max_update))
            if observer is not None:
                observer(t, master, slaves)
            if not math.isfinite(current):
                reason = TerminationReason.DIVERGED
                break
            if converged(previous, current, hyper.epsilon):
                reason = TerminationReason.CONVERGED
                break
            previous = current
    trace = TrainTrace(initial, tuple(entries), reason)
    logger.debug(
        "distributed run finished: %s after %d iterations, %d bytes transferred",
        reason.value, len(entries), ledger.total_bytes,
    )
    return _assemble_state(master, slaves), trace, ledger


# ---------------------------------------------------------------------------
# transfer arithmetic

_UNITS = ("B", "KB", "MB", "GB", "TB", "PB")


def format_binary_units(nbytes: float) -> str:
    """Human figure in binary units, truncated the way the report tables do.

    Values below 10 keep two (truncated) decimals, larger ones are truncated
    to integers, so displayed figures never overstate the transfer.
    """
    value = float(nbytes)
    unit = _UNITS[0]
    for candidate in _UNITS[1:]:
        if value < 1024.0:
            break
        value /= 1024.0
        unit = candidate
    if value < 10.0:
        shown = math.floor(value * 100.0) / 100.0
        return f"{shown:.2f} {unit}"
    return f"{math.floor(value):.0f} {unit}"


@dataclass(frozen=True)
class TransferReport:
    """Bytes moved by the centralized versus the distributed execution.

    The centralized run ships every observed source entry once (8 bytes of
    value plus 8 bytes of key); the distributed run ships, per iteration,
    one k-vector down and one up for every shared entity.
    """

    n_shared_users: int
    n_shared_items: int
    k: int
    iterations: int
    centralized_nnz: int
    centralized_bytes: int = field(init=False)
    per_iteration_bytes: int = field(init=False)
    total_bytes: int = field(init=False)

    def __post_init__(self):
        for name in ("n_shared_users", "n_shared_items", "k", "iterations", "centralized_nnz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        object.__setattr__(
            self,
            "centralized_bytes",
            self.centralized_nnz * (BYTES_PER_DOUBLE + BYTES_PER_KEY),
        )
        shared = self.n_shared_users + self.n_shared_items
        object.__setattr__(
            self, "per_iteration_bytes", shared * self.k * BYTES_PER_DOUBLE * 2
        )
        object.__setattr__(
            self, "total_bytes", self.per_iteration_bytes * self.iterations
        )

    @property
    def centralized_tb(self) -> float:
        return self.centralized_bytes / 1024.0**4

    @property
    def per_iteration_mb(self) -> float:
        return self.per_iteration_bytes / 1024.0**2

    @property
    def total_gb(self) -> float:
        return self.total_bytes / 1024.0**3

    @property
    def ratio(self) -> float | None:
        if self.centralized_bytes == 0:
            return None
        return self.total_bytes / self.centralized_bytes

    def to_text(self) -> str:
        ratio = "n/a" if self.ratio is None else f"{self.ratio * 100:.1f}%"
        lines = [
            f"centralized transfer\t{self.centralized_bytes} B\t"
            f"{format_binary_units(self.centralized_bytes)}",
            f"distributed per-iteration\t{self.per_iteration_bytes} B\t"
            f"{format_binary_units(self.per_iteration_bytes)}",
            f"distributed total ({self.iterations} iterations)\t{self.total_bytes} B\t"
            f"{format_binary_units(self.total_bytes)}",
            f"distributed/centralized ratio\t{ratio}",
        ]
        return "\n".join(lines) + "\n"


def transfer_report(
    n_shared_users: int,
    n_shared_items: int,
    k: int,
    iterations: int,
    centralized_nnz: int,
) -> TransferReport:
    """Compare network cost of shipping raw data versus exchanging latents."""
    return TransferReport(n_shared_users, n_shared_items, k, iterations, centralized_nnz)
