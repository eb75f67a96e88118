"""Event-sourced continuous-time dynamic graph.

The log is append-only.  Deletions never erase history: they leave
tombstones keyed by time, so a query at time ``t`` sees exactly the edges
that were alive strictly before ``t``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EventKind(str, enum.Enum):
    INTERACTION = "interaction"
    NODE_UPDATE = "node_update"
    EDGE_DELETION = "edge_deletion"
    NODE_DELETION = "node_deletion"


@dataclass
class Event:
    kind: EventKind
    source: int
    target: int | None
    timestamp: float
    features: np.ndarray | None = None
    ordinal: int = -1
    created_at: float | None = None
    label: int = 0


class EventLog:
    """Chronological, append-only list of events plus columnar views.

    ``src``/``dst``/``ts``/``kinds``/``labels``/``edge_features`` are arrays
    indexed by ordinal.  Node events keep ``dst = -1``.
    """

    def __init__(self, edge_dim: int = 0, node_dim: int = 0, num_nodes: int = 0,
                 num_sources: int | None = None):
        self.edge_dim = edge_dim
        self.node_dim = node_dim
        self.events: list[Event] = []
        self._num_nodes = num_nodes
        self.num_sources = num_sources
        self._cols = None

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, i) -> Event:
        return self.events[i]

    @property
    def num_nodes(self) -> int:
        return self._num_nodes

    def append(self, event: Event) -> Event:
        if self.events and event.timestamp < self.events[-1].timestamp:
            raise ValueError(
                f"event at t={event.timestamp} precedes last logged t={self.events[-1].timestamp}"
            )
        if event.timestamp < 0 or not math.isfinite(event.timestamp):
            raise ValueError(f"invalid timestamp {event.timestamp}")
        kind = EventKind(event.kind)
        event.kind = kind
        if kind is EventKind.INTERACTION:
            feats = np.zeros(self.edge_dim) if event.features is None else np.asarray(event.features, float)
            if feats.shape != (self.edge_dim,):
                raise ValueError(f"edge features of width {feats.shape} != {self.edge_dim}")
            event.features = feats
        elif kind is EventKind.NODE_UPDATE:
            if event.features is None:
                raise ValueError("node_update event needs a feature vector")
            event.features = np.asarray(event.features, float)
            if self.node_dim and event.features.shape != (self.node_dim,):
                raise ValueError(f"node features of width {event.features.shape} != {self.node_dim}")
        elif kind is EventKind.EDGE_DELETION:
            if event.created_at is None:
                raise ValueError("edge_deletion event needs created_at")
            if event.features is None:
                event.features = self._created_features(event)
        event.ordinal = len(self.events)
        self.events.append(event)
        ids = [event.source] + ([event.target] if event.target is not None else [])
        self._num_nodes = max([self._num_nodes] + [i + 1 for i in ids])
        self._cols = None
        return event

    def _created_features(self, event: Event) -> np.ndarray:
        for e in reversed(self.events):
            if (e.kind is EventKind.INTERACTION and e.source == event.source
                    and e.target == event.target and e.timestamp == event.created_at):
                return e.features.copy()
        return np.zeros(self.edge_dim)

    def add_interaction(self, source: int, target: int, timestamp: float, features=None,
                        label: int = 0) -> Event:
        return self.append(Event(EventKind.INTERACTION, source, target, timestamp, features, label=label))

    def _columns(self):
        if self._cols is None:
            n = len(self.events)
            src = np.fromiter((e.source for e in self.events), np.int64, n)
            dst = np.fromiter((-1 if e.target is None else e.target for e in self.events), np.int64, n)
            ts = np.fromiter((e.timestamp for e in self.events), np.float64, n)
            labels = np.fromiter((e.label for e in self.events), np.int64, n)
            kinds = np.array([e.kind.value for e in self.events], dtype=object)
            feats = np.zeros((n, self.edge_dim))
            for e in self.events:
                if e.kind is EventKind.INTERACTION:
                    feats[e.ordinal] = e.features
            self._cols = dict(src=src, dst=dst, ts=ts, labels=labels, kinds=kinds, edge_features=feats)
        return self._cols

    @property
    def src(self) -> np.ndarray:
        return self._columns()["src"]

    @property
    def dst(self) -> np.ndarray:
        return self._columns()["dst"]

    @property
    def ts(self) -> np.ndarray:
        return self._columns()["ts"]

    @property
    def labels(self) -> np.ndarray:
        return self._columns()["labels"]

    @property
    def kinds(self) -> np.ndarray:
        return self._columns()["kinds"]

    @property
    def edge_features(self) -> np.ndarray:
        return self._columns()["edge_features"]

    def interaction_mask(self) -> np.ndarray:
        return self.kinds == EventKind.INTERACTION.value

    def destination_nodes(self, upto: int | None = None) -> np.ndarray:
        """Distinct interaction targets among the first ``upto`` events."""
        sl = slice(0, upto)
        keep = self.interaction_mask()[sl]
        return np.unique(self.dst[sl][keep])

    def subset(self, ordinals) -> "EventLog":
        """New log holding the given events, renumbered from 0."""
        out = EventLog(self.edge_dim, self.node_dim, self.num_nodes, self.num_sources)
        for i in ordinals:
            e = self.events[i]
            out.append(Event(e.kind, e.source, e.target, e.timestamp,
                             None if e.features is None else e.features.copy(),
                             created_at=e.created_at, label=e.label))
        return out


# -- CSV ingestion --------------------------------------------------------------

CSV_HEADER_PREFIX = ["source_id", "target_id", "timestamp", "state_label"]


@dataclass
class CsvSchema:
    bipartite: bool = True
    has_header: bool = True


def ingest_csv(path, schema: CsvSchema | None = None) -> EventLog:
    """Read ``source_id,target_id,timestamp,state_label,f_1..f_d`` rows.

    With a bipartite schema, target ids are offset by ``max(source_id) + 1``
    so both id spaces share one node index.  Rows are stably sorted by
    timestamp.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and schema.has_header and not _is_number(row[0]):
                continue
            if len(row) < 4:
                raise ValueError(f"{path} line {lineno}: expected at least 4 columns, got {len(row)}")
            if width is None:
                width = len(row) - 4
            elif len(row) - 4 != width:
                raise ValueError(
                    f"{path} line {lineno}: ragged row with {len(row) - 4} features, expected {width}"
                )
            try:
                src, dst = int(row[0]), int(row[1])
                t = float(row[2])
                label = int(float(row[3]))
                feats = [float(x) for x in row[4:]]
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
            if t < 0:
                raise ValueError(f"{path} line {lineno}: negative timestamp {t}")
            if src < 0 or dst < 0:
                raise ValueError(f"{path} line {lineno}: negative node id")
            rows.append((t, src, dst, label, feats))

    if not rows:
        return EventLog(edge_dim=width or 0)
    rows.sort(key=lambda r: r[0])
    offset = max(r[1] for r in rows) + 1 if schema.bipartite else 0
    n_dst = max(r[2] for r in rows) + 1
    log = EventLog(edge_dim=width, num_sources=offset if schema.bipartite else None)
    for t, src, dst, label, feats in rows:
        log.add_interaction(src, dst + offset, t, np.array(feats), label=label)
    if schema.bipartite:
        log._num_nodes = max(log.num_nodes, offset + n_dst)
    return log


def write_csv(log: EventLog, path, bipartite: bool = True) -> None:
    """Inverse of :func:`ingest_csv` for interaction logs."""
    offset = (log.num_sources or 0) if bipartite else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER_PREFIX + [f"f_{i + 1}" for i in range(log.edge_dim)])
        for e in log.events:
            if e.kind is not EventKind.INTERACTION:
                continue
            w.writerow([e.source, e.target - offset, repr(float(e.timestamp)), e.label] + [repr(float(x)) for x in e.features])


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# -- temporal adjacency -------------------------------------------------------------


@dataclass
class NeighborSample:
    """Unpadded neighbour set for one (node, time) query."""

    neighbors: np.ndarray
    features: np.ndarray
    timestamps: np.ndarray
    ordinals: np.ndarray

    def __len__(self) -> int:
        return len(self.neighbors)


@dataclass
class NeighborBatch:
    """Padded (Q, k) neighbour arrays for a batch of queries."""

    neighbors: np.ndarray
    ordinals: np.ndarray
    timestamps: np.ndarray
    mask: np.ndarray


STRATEGIES = ("most_recent", "uniform")


class TemporalAdjacency:
    """Per-node time-sorted incidence lists with deletion tombstones.

    Every interaction ``(i, j)`` is listed under both endpoints.  Lists are
    kept in a CSR layout sorted by ``(node, timestamp, ordinal)`` and rebuilt
    lazily after appends.
    """

    def __init__(self, num_nodes: int = 0, edge_features: np.ndarray | None = None, seed: int = 0):
        self.num_nodes = num_nodes
        self._owner: list[int] = []
        self._nbr: list[int] = []
        self._time: list[float] = []
        self._ord: list[int] = []
        self.edge_features = edge_features
        self.edge_created: dict[int, tuple[int, int, float]] = {}
        self.deleted_at: dict[int, float] = {}
        self.node_deleted: dict[int, list[float]] = {}
        self.rng = np.random.default_rng(seed)
        self._csr = None

    @classmethod
    def from_log(cls, log: EventLog, seed: int = 0) -> "TemporalAdjacency":
        adj = cls(log.num_nodes, log.edge_features, seed=seed)
        for e in log.events:
            adj.apply(e)
        return adj

    # writers
    def apply(self, event: Event) -> None:
        if event.kind is EventKind.INTERACTION:
            self.add_edge(event.source, event.target, event.timestamp, event.ordinal)
        elif event.kind in (EventKind.EDGE_DELETION, EventKind.NODE_DELETION):
            self.apply_deletion(event)
        else:
            self.num_nodes = max(self.num_nodes, event.source + 1)

    def add_edge(self, i: int, j: int, t: float, ordinal: int) -> None:
        for a, b in ((i, j), (j, i)):
            self._owner.append(a)
            self._nbr.append(b)
            self._time.append(t)
            self._ord.append(ordinal)
        self.edge_created[ordinal] = (i, j, t)
        self.num_nodes = max(self.num_nodes, i + 1, j + 1)
        self._csr = None

    def apply_deletion(self, event: Event) -> None:
        """Tombstone an edge or every edge touching a node, from ``event.timestamp`` on."""
        t = event.timestamp
        if event.kind is EventKind.EDGE_DELETION:
            i, j, t0 = event.source, event.target, event.created_at
            match = [o for o, (a, b, tc) in self.edge_created.items()
                     if a == i and b == j and tc == t0 and o not in self.deleted_at and tc <= t]
            if not match:
                raise ValueError(f"edge_deletion: no live edge ({i}, {j}) created at {t0}")
            self.deleted_at[min(match)] = t
        elif event.kind is EventKind.NODE_DELETION:
            u = event.source
            live = [o for o, (a, b, tc) in self.edge_created.items()
                    if u in (a, b) and tc <= t and o not in self.deleted_at]
            if not live and not any(u in (a, b) for a, b, _ in self.edge_created.values()):
                raise ValueError(f"node_deletion: node {u} has no history")
            for o in live:
                self.deleted_at[o] = t
            self.node_deleted.setdefault(u, []).append(t)
        else:
            raise ValueError(f"apply_deletion: not a deletion event ({event.kind})")
        self._csr = None

    # index
    def _index(self):
        if self._csr is None:
            owner = np.asarray(self._owner, np.int64)
            times = np.asarray(self._time, np.float64)
            ords = np.asarray(self._ord, np.int64)
            order = np.lexsort((ords, times, owner))
            owner, times, ords = owner[order], times[order], ords[order]
            nbr = np.asarray(self._nbr, np.int64)[order]
            uniq = np.unique(times)
            rank = np.searchsorted(uniq, times)
            key = owner * (len(uniq) + 1) + rank
            indptr = np.searchsorted(owner, np.arange(self.num_nodes + 1))
            dead = np.full(len(ords), np.inf)
            for o, td in self.deleted_at.items():
                dead[ords == o] = td
            self._csr = dict(nbr=nbr, time=times, ord=ords, key=key, uniq=uniq,
                             indptr=indptr, dead=dead, any_dead=bool(self.deleted_at))
        return self._csr

    def _window(self, nodes: np.ndarray, times: np.ndarray):
        c = self._index()
        nodes = np.asarray(nodes, np.int64)
        times = np.asarray(times, np.float64)
        known = nodes < self.num_nodes
        safe = np.where(known, nodes, 0)
        rank_q = np.searchsorted(c["uniq"], times, side="left")
        end = np.searchsorted(c["key"], safe * (len(c["uniq"]) + 1) + rank_q, side="left")
        start = c["indptr"][safe]
        end = np.where(known, np.maximum(end, start), start)
        return start, end

    # queries
    def neighbors_before(self, node: int, t: float, k: int, strategy: str = "most_recent",
                         exclude: int | None = None, rng: np.random.Generator | None = None) -> NeighborSample:
        """Up to ``k`` live edges of ``node`` with timestamp strictly before ``t``."""
        if k < 1:
            raise ValueError(f"neighbors_before: k must be >= 1, got {k}")
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {strategy!r}")
        c = self._index()
        start, end = self._window(np.array([node]), np.array([t]))
        idx = np.arange(start[0], end[0])
        if len(idx):
            keep = c["dead"][idx] > t
            if exclude is not None:
                keep &= c["ord"][idx] != exclude
            idx = idx[keep]
        if strategy == "most_recent":
            idx = idx[-k:][::-1]
        elif len(idx) > k:
            rng = rng or self.rng
            idx = np.sort(rng.choice(idx, size=k, replace=False))[::-1]
        else:
            idx = idx[::-1]
        ords = c["ord"][idx]
        feats = self.edge_features[ords] if self.edge_features is not None else np.zeros((len(idx), 0))
        return NeighborSample(c["nbr"][idx], feats, c["time"][idx], ords)

    def sample(self, nodes, times, k: int, strategy: str = "most_recent",
               rng: np.random.Generator | None = None) -> NeighborBatch:
        """Batched :meth:`neighbors_before`, padded to width ``k``.

        Row ``q`` lists the sampled edges most-recent first; padding slots
        carry ``mask = False``, neighbour 0, ordinal -1 and the query time.
        """
        if k < 1:
            raise ValueError(f"sample: k must be >= 1, got {k}")
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {strategy!r}")
        nodes = np.asarray(nodes, np.int64)
        times = np.asarray(times, np.float64)
        n = len(nodes)
        c = self._index()
        start, end = self._window(nodes, times)
        pos = np.full((n, k), -1, np.int64)
        if strategy == "most_recent" and not c["any_dead"]:
            offs = end[:, None] - 1 - np.arange(k)[None, :]
            valid = offs >= start[:, None]
            pos = np.where(valid, offs, -1)
        else:
            rng = rng or self.rng
            for q in range(n):
                idx = np.arange(start[q], end[q])
                if c["any_dead"] and len(idx):
                    idx = idx[c["dead"][idx] > times[q]]
                if strategy == "most_recent":
                    sel = idx[-k:][::-1]
                elif len(idx) > k:
                    sel = np.sort(rng.choice(idx, size=k, replace=False))[::-1]
                else:
                    sel = idx[::-1]
                pos[q, : len(sel)] = sel
        mask = pos >= 0
        safe = np.where(mask, pos, 0)
        if len(c["nbr"]):
            nbr = np.where(mask, c["nbr"][safe], 0)
            ords = np.where(mask, c["ord"][safe], -1)
            ts = np.where(mask, c["time"][safe], times[:, None])
        else:
            nbr = np.zeros((n, k), np.int64)
            ords = np.full((n, k), -1, np.int64)
            ts = np.broadcast_to(times[:, None], (n, k)).copy()
        return NeighborBatch(nbr, ords, ts, mask)


class NodeFeatureTable:
    """Time-versioned node features ``v_i(t)``; zero where never set."""

    def __init__(self, num_nodes: int, dim: int):
        self.dim = dim
        self.num_nodes = num_nodes
        self._hist: dict[int, tuple[list[float], list[np.ndarray]]] = {}

    @classmethod
    def from_log(cls, log: EventLog, dim: int) -> "NodeFeatureTable":
        table = cls(log.num_nodes, dim)
        for e in log.events:
            if e.kind is EventKind.NODE_UPDATE:
                table.set(e.source, e.timestamp, e.features)
        return table

    def set(self, node: int, t: float, features) -> None:
        features = np.asarray(features, float)
        if features.shape != (self.dim,):
            raise ValueError(f"node features of width {features.shape} != {self.dim}")
        ts, vs = self._hist.setdefault(node, ([], []))
        ts.append(t)
        vs.append(features)

    def lookup(self, nodes, times) -> np.ndarray | None:
        """Features in force strictly before each time; None when all zero."""
        if not self._hist:
            return None
        nodes = np.asarray(nodes).ravel()
        times = np.broadcast_to(np.asarray(times, float), nodes.shape).ravel()
        out = np.zeros((len(nodes), self.dim))
        for q, (u, t) in enumerate(zip(nodes, times)):
            hist = self._hist.get(int(u))
            if hist is None:
                continue
            i = np.searchsorted(hist[0], t, side="left")
            if i > 0:
                out[q] = hist[1][i - 1]
        return out


# -- splits ---------------------------------------------------------------------------


@dataclass
class SplitSpec:
    train_end: int
    val_end: int
    n_events: int
    t_train: float
    t_val: float
    inductive_nodes: frozenset = field(default_factory=frozenset)

    @property
    def train(self) -> range:
        return range(0, self.train_end)

    @property
    def val(self) -> range:
        return range(self.train_end, self.val_end)

    @property
    def test(self) -> range:
        return range(self.val_end, self.n_events)

    def segment(self, name: str) -> range:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def chronological_split(log: EventLog, train_frac: float = 0.70, val_frac: float = 0.15) -> SplitSpec:
    """70/15/15 split by event count in log order.

    Inductive nodes are the nodes that never occur in the training segment.
    """
    n = len(log)
    if n < 10:
        raise ValueError(f"chronological_split: need at least 10 events, got {n}")
    train_end = int(round(train_frac * n))
    val_end = int(round((train_frac + val_frac) * n))
    src, dst = log.src, log.dst
    seen = set(src[:train_end].tolist()) | set(dst[:train_end].tolist())
    later = set(src[train_end:].tolist()) | set(dst[train_end:].tolist())
    later.discard(-1)
    ts = log.ts
    return SplitSpec(train_end, val_end, n, float(ts[train_end - 1]), float(ts[val_end - 1]),
                     frozenset(later - seen))
