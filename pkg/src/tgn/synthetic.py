"""Desk-scale synthetic interaction streams written in the ingest CSV schema.

Both generators are bipartite: sources ``0..n_src-1`` and destinations
``0..n_dst-1`` in separate id spaces, as in the public interaction exports.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tgstore import EventLog, write_csv

KINDS = ("periodic", "long_memory")


def _check(nodes: int, events: int) -> None:
    if nodes < 4:
        raise ValueError(f"need at least 4 nodes, got {nodes}")
    if events < 100:
        raise ValueError(f"need at least 100 events, got {events}")


def _timestamps(rng: np.random.Generator, n: int) -> np.ndarray:
    # gaps in [0.5, 1.5): strictly increasing, about one event per time unit
    return np.cumsum(0.5 + rng.random(n))


def periodic_cycles(nodes: int, cycle: int, seed: int) -> tuple[int, int, np.ndarray]:
    """Per-source destination cycles: ``(n_src, n_dst, cycles[n_src, cycle])``."""
    n_src = nodes // 2
    n_dst = nodes - n_src
    if cycle < 1 or cycle > n_dst:
        raise ValueError(f"cycle length {cycle} must lie in [1, {n_dst}]")
    rng = np.random.default_rng([seed, 0])
    cycles = np.stack([rng.permutation(n_dst)[:cycle] for _ in range(n_src)])
    return n_src, n_dst, cycles


def periodic(nodes: int, events: int, seed: int = 0, cycle: int = 2, edge_dim: int = 4):
    """Each source visits its own fixed cycle of destinations in rotation.

    The next destination of a source is ``cycle[count % len(cycle)]`` where
    ``count`` is the number of interactions the source has had so far.
    Returns ``(src, dst, ts, feats)`` arrays.
    """
    _check(nodes, events)
    n_src, n_dst, cycles = periodic_cycles(nodes, cycle, seed)
    rng = np.random.default_rng([seed, 1])
    src = rng.integers(0, n_src, size=events)
    count = np.zeros(n_src, np.int64)
    dst = np.empty(events, np.int64)
    for k, s in enumerate(src):
        dst[k] = cycles[s, count[s] % cycle]
        count[s] += 1
    return src, dst, _timestamps(rng, events), rng.normal(0.0, 1.0, size=(events, edge_dim))


def long_memory(nodes: int, events: int, seed: int = 0, p_return: float = 0.5, edge_dim: int = 4):
    """Destinations are tied to each source's first-ever partner.

    A source's first interaction picks a uniformly random destination (its
    anchor).  Every later interaction returns to the anchor with probability
    ``p_return`` and otherwise goes to a uniformly random destination.
    """
    _check(nodes, events)
    if not 0.0 < p_return <= 1.0:
        raise ValueError(f"p_return must lie in (0, 1], got {p_return}")
    n_src = nodes // 2
    n_dst = nodes - n_src
    rng = np.random.default_rng([seed, 2])
    src = rng.integers(0, n_src, size=events)
    anchor = np.full(n_src, -1, np.int64)
    dst = np.empty(events, np.int64)
    coin = rng.random(events)
    noise = rng.integers(0, n_dst, size=events)
    for k, s in enumerate(src):
        if anchor[s] < 0:
            anchor[s] = noise[k]
            dst[k] = anchor[s]
        else:
            dst[k] = anchor[s] if coin[k] < p_return else noise[k]
    return src, dst, _timestamps(rng, events), rng.normal(0.0, 1.0, size=(events, edge_dim))


def long_memory_anchors(src, dst) -> dict[int, int]:
    """First partner of every source, read back from a generated stream."""
    first: dict[int, int] = {}
    for s, d in zip(np.asarray(src).tolist(), np.asarray(dst).tolist()):
        first.setdefault(s, d)
    return first


def to_log(src, dst, ts, feats, n_src: int) -> EventLog:
    log = EventLog(edge_dim=feats.shape[1], num_sources=n_src)
    for s, d, t, f in zip(src, dst, ts, feats):
        log.add_interaction(int(s), int(d) + n_src, float(t), f)
    return log


def generate(kind: str, nodes: int, events: int, seed: int = 0, **kwargs) -> EventLog:
    if kind == "periodic":
        arrays = periodic(nodes, events, seed, **kwargs)
    elif kind == "long_memory":
        arrays = long_memory(nodes, events, seed, **kwargs)
    else:
        raise ValueError(f"unknown generator {kind!r}; choose from {KINDS}")
    log = to_log(*arrays, n_src=nodes // 2)
    log._num_nodes = nodes
    return log


def generate_synthetic(kind: str, nodes: int, events: int, seed: int, path, **kwargs) -> Path:
    """Write a generated stream to ``path`` as CSV and return the path."""
    path = Path(path)
    write_csv(generate(kind, nodes, events, seed, **kwargs), path)
    return path
