"""Per-node memory, the raw message store and the memory update step.

A raw message keeps the *inputs* of a message function (memory snapshots,
time, features) so that the message itself can be computed later, inside
the batch that consumes it, where the updater receives a gradient.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnum as dn
from .diffnum import Tensor

CHECKPOINT_VERSION = 1


class Direction(str, enum.Enum):
    SOURCE = "source"
    DESTINATION = "destination"
    NODE_WISE = "node_wise"
    DELETION_SOURCE = "deletion_source"
    DELETION_DESTINATION = "deletion_destination"


@dataclass(frozen=True)
class RawMessage:
    node: int
    own_memory: np.ndarray
    counterpart_memory: np.ndarray
    timestamp: float
    last_update: float
    features: np.ndarray
    direction: Direction
    ordinal: int
    counterpart: int = -1

    def __post_init__(self):
        for name in ("own_memory", "counterpart_memory", "features"):
            if getattr(self, name) is None:
                continue
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


class MemoryStore:
    """Memory rows ``s_i`` and last-update clocks for a fixed node range."""

    def __init__(self, num_nodes: int, dim: int, dtype=None):
        self.dim = dim
        self.dtype = dtype or dn.get_default_dtype()
        self.memory = np.zeros((num_nodes, dim), dtype=self.dtype)
        self.last_update = np.zeros(num_nodes)
        self.tracked = np.zeros(num_nodes, dtype=bool)

    @property
    def num_nodes(self) -> int:
        return len(self.memory)

    @property
    def num_tracked(self) -> int:
        return int(self.tracked.sum())

    def reset(self) -> None:
        self.memory[:] = 0.0
        self.last_update[:] = 0.0
        self.tracked[:] = False

    def get(self, node: int) -> np.ndarray:
        if node >= self.num_nodes:
            return np.zeros(self.dim, dtype=self.dtype)
        return self.memory[node].copy()

    def write(self, nodes, values, times) -> None:
        nodes = np.asarray(nodes, np.int64)
        times = np.asarray(times, float)
        stale = times < self.last_update[nodes]
        if stale.any():
            i = int(np.flatnonzero(stale)[0])
            raise ValueError(
                f"update_memory: node {nodes[i]} update at t={times[i]} precedes "
                f"its last update t={self.last_update[nodes[i]]}"
            )
        self.memory[nodes] = values
        self.last_update[nodes] = times
        self.tracked[nodes] = True

    def snapshot(self):
        return self.memory.copy(), self.last_update.copy(), self.tracked.copy()

    def restore(self, snap) -> None:
        self.memory, self.last_update, self.tracked = (a.copy() for a in snap)


class RawMessageStore:
    """Per-node lists of raw messages pending since the node's last update.

    With ``keep_last`` the list is collapsed to the single most recent
    message, which is all the ``last`` aggregator ever reads.
    """

    def __init__(self, keep_last: bool = True):
        self.keep_last = keep_last
        self._pending: dict[int, list[RawMessage]] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self._pending.values())

    def __contains__(self, node: int) -> bool:
        return node in self._pending

    def messages(self, node: int) -> list[RawMessage]:
        return list(self._pending.get(node, ()))

    def pending_nodes(self) -> np.ndarray:
        return np.array(sorted(self._pending), dtype=np.int64)

    def all_messages(self):
        for node in sorted(self._pending):
            yield from self._pending[node]

    def append(self, msg: RawMessage) -> None:
        lst = self._pending.setdefault(msg.node, [])
        if self.keep_last and lst:
            if (msg.timestamp, msg.ordinal) >= (lst[-1].timestamp, lst[-1].ordinal):
                lst[-1] = msg
            return
        lst.append(msg)

    def clear(self, nodes=None) -> None:
        if nodes is None:
            self._pending.clear()
            return
        for n in np.asarray(nodes).tolist():
            self._pending.pop(n, None)

    def max_ordinal(self) -> int:
        return max((m.ordinal for m in self.all_messages()), default=-1)


# -- message functions ---------------------------------------------------------------


def compute_messages(raw: list[RawMessage], time_encoder, extra: Tensor | None = None) -> Tensor:
    """Identity message function over a batch of raw messages.

    Interaction and deletion messages are
    ``[own_memory | counterpart_memory | phi(dt) | edge_features]``.  A
    node-wise message puts the node features in the counterpart slot and
    zeros in the edge-feature slot, keeping one width for the updater.
    ``extra`` (one row per message) is appended when given.
    """
    if not raw:
        raise ValueError("compute_messages: empty batch")
    own = np.stack([m.own_memory for m in raw])
    counter = np.stack([m.counterpart_memory for m in raw])
    dt = np.array([m.timestamp - m.last_update for m in raw])
    for m in raw:
        if m.features is None:
            raise ValueError(f"compute_messages: message for node {m.node} lacks features")
    widths = {m.features.shape for m in raw if m.direction is not Direction.NODE_WISE}
    edge_dim = widths.pop()[0] if widths else 0
    feats = np.zeros((len(raw), edge_dim))
    for r, m in enumerate(raw):
        if m.direction is Direction.NODE_WISE:
            if m.features.shape != (own.shape[1],):
                raise ValueError("compute_messages: node features must match memory width")
            counter[r] = m.features
        else:
            if m.features.shape != (edge_dim,):
                raise ValueError("compute_messages: ragged edge features")
            feats[r] = m.features
    parts = [Tensor(own), Tensor(counter), time_encoder(dt), Tensor(feats)]
    if extra is not None:
        parts.append(extra)
    return dn.concat(parts, axis=-1)


def message_dim(memory_dim: int, time_dim: int, edge_dim: int, extra_dim: int = 0) -> int:
    return 2 * memory_dim + time_dim + edge_dim + extra_dim


# -- aggregation ------------------------------------------------------------------------


AGGREGATORS = ("last", "mean")


def aggregate(messages: Tensor, timestamps, ordinals, mode: str = "last"):
    """Aggregate one node's messages; returns ``(message, max timestamp)``."""
    timestamps = np.asarray(timestamps, float)
    ordinals = np.asarray(ordinals)
    if len(timestamps) == 0:
        raise ValueError("aggregate: no messages to aggregate")
    if mode == "last":
        i = np.lexsort((ordinals, timestamps))[-1]
        out = dn.getitem(messages, int(i))
    elif mode == "mean":
        out = dn.mean(messages, axis=0)
    else:
        raise ValueError(f"unknown aggregator {mode!r}")
    return out, float(timestamps.max())


def aggregate_by_node(messages: Tensor, nodes, timestamps, ordinals, mode: str = "last"):
    """Batched :func:`aggregate`: one row per distinct node, nodes ascending."""
    nodes = np.asarray(nodes, np.int64)
    timestamps = np.asarray(timestamps, float)
    ordinals = np.asarray(ordinals, np.int64)
    uniq, inverse = np.unique(nodes, return_inverse=True)
    t_max = np.full(len(uniq), -np.inf)
    np.maximum.at(t_max, inverse, timestamps)
    if mode == "last":
        order = np.lexsort((ordinals, timestamps, inverse))
        last_pos = np.searchsorted(inverse[order], np.arange(len(uniq)), side="right") - 1
        pick = order[last_pos]
        if len(pick) == len(nodes) and np.array_equal(pick, np.arange(len(nodes))):
            return uniq, messages, t_max
        return uniq, dn.take_rows(messages, pick), t_max
    if mode == "mean":
        counts = np.bincount(inverse, minlength=len(uniq)).astype(messages.dtype)
        avg = np.zeros((len(uniq), len(nodes)), dtype=messages.dtype)
        avg[inverse, np.arange(len(nodes))] = 1.0 / counts[inverse]
        return uniq, dn.matmul(Tensor(avg), messages), t_max
    raise ValueError(f"unknown aggregator {mode!r}")


# -- the module ------------------------------------------------------------------------


class NodeMemory(dn.Module):
    """Memory store, raw message store and the learnable updater.

    ``updated(...)`` computes the new memory of every node with pending raw
    messages without writing it; ``commit(...)`` writes it and clears those
    nodes' pending lists.
    """

    def __init__(self, num_nodes: int, memory_dim: int, edge_dim: int, time_dim: int,
                 rng: np.random.Generator, updater: str = "gru", aggregator: str = "last",
                 extra_dim: int = 0):
        if aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {aggregator!r}")
        self.memory_dim = memory_dim
        self.edge_dim = edge_dim
        self.aggregator = aggregator
        self.updater_kind = updater
        self.msg_dim = message_dim(memory_dim, time_dim, edge_dim, extra_dim)
        if updater == "gru":
            self.updater = dn.GRUCell(self.msg_dim, memory_dim, rng)
        elif updater == "rnn":
            self.updater = dn.RNNCell(self.msg_dim, memory_dim, rng)
        else:
            raise ValueError(f"unknown memory updater {updater!r}")
        self.store = MemoryStore(num_nodes, memory_dim)
        self.raw = RawMessageStore(keep_last=aggregator == "last")

    def reset_state(self) -> None:
        self.store.reset()
        self.raw.clear()

    def resize(self, num_nodes: int) -> None:
        if num_nodes != self.store.num_nodes:
            self.store = MemoryStore(num_nodes, self.memory_dim)
            self.raw.clear()

    def updated(self, time_encoder, extra_fn=None):
        """New memory for all nodes with pending messages.

        Returns ``(nodes, memory Tensor, timestamps)``; empty arrays and
        ``None`` when nothing is pending.
        """
        raw = list(self.raw.all_messages())
        if not raw:
            return np.zeros(0, np.int64), None, np.zeros(0)
        extra = extra_fn(raw) if extra_fn is not None else None
        msgs = compute_messages(raw, time_encoder, extra)
        nodes = np.array([m.node for m in raw], np.int64)
        ts = np.array([m.timestamp for m in raw])
        ords = np.array([m.ordinal for m in raw], np.int64)
        uniq, agg, t_new = aggregate_by_node(msgs, nodes, ts, ords, self.aggregator)
        s_prev = Tensor(self.store.memory[uniq])
        return uniq, self.updater(agg, s_prev), t_new

    def update_memory(self, node: int, aggregated: Tensor, timestamp: float) -> Tensor:
        """Apply the updater to one node's aggregated message and write the result."""
        if timestamp < self.store.last_update[node]:
            raise ValueError(
                f"update_memory: t={timestamp} precedes last update {self.store.last_update[node]}"
            )
        new = self.updater(aggregated, Tensor(self.store.memory[node]))
        self.store.write([node], new.data[None], [timestamp])
        self.raw.clear([node])
        return new

    def commit(self, nodes, values: np.ndarray | None, timestamps) -> None:
        if len(nodes) == 0:
            return
        self.store.write(nodes, values, timestamps)
        self.raw.clear(nodes)

    def store_raw_messages(self, events, counterpart_extra=None) -> None:
        """Append raw messages for ``events`` using the current memory as snapshots."""
        mem, lu = self.store.memory, self.store.last_update
        for e in events:
            kind = e.kind.value
            if kind in ("interaction", "edge_deletion"):
                i, j = e.source, e.target
                dirs = (Direction.SOURCE, Direction.DESTINATION) if kind == "interaction" else (
                    Direction.DELETION_SOURCE, Direction.DELETION_DESTINATION)
                feats = e.features
                si, sj = mem[i].copy(), mem[j].copy()
                self.raw.append(RawMessage(i, si, sj, e.timestamp, lu[i], feats, dirs[0], e.ordinal, j))
                self.raw.append(RawMessage(j, sj, si, e.timestamp, lu[j], feats, dirs[1], e.ordinal, i))
            elif kind == "node_update":
                i = e.source
                self.raw.append(RawMessage(i, mem[i].copy(), np.asarray(e.features, float), e.timestamp,
                                           lu[i], np.asarray(e.features, float), Direction.NODE_WISE,
                                           e.ordinal))


# -- checkpoints ---------------------------------------------------------------------------


def save_checkpoint(path, memory: NodeMemory) -> None:
    """Write memory rows and updater parameters to an ``.npz`` archive.

    Layout (version 1): ``version`` scalar, ``node_id`` (n,), ``last_update``
    (n,), ``memory`` (n, d) for tracked nodes only, ``num_nodes`` scalar,
    ``updater_kind`` string and one ``updater/<name>`` array per parameter.
    """
    st = memory.store
    ids = np.flatnonzero(st.tracked)
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "num_nodes": np.array(st.num_nodes),
        "node_id": ids,
        "last_update": st.last_update[ids],
        "memory": st.memory[ids],
        "updater_kind": np.array(memory.updater_kind),
    }
    for name, p in memory.updater.named_parameters():
        arrays[f"updater/{name}"] = p.data
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, memory: NodeMemory) -> None:
    with np.load(path) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported memory checkpoint version {version}")
        if str(z["updater_kind"]) != memory.updater_kind:
            raise ValueError("checkpoint updater kind differs from the module's")
        memory.resize(int(z["num_nodes"]))
        memory.reset_state()
        ids = z["node_id"]
        memory.store.write(ids, z["memory"], z["last_update"])
        memory.updater.load_state_dict(
            {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("updater/")}
        )
