"""Time encoding and the node embedding modules (id, time, sum, attn)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnum as dn
from .diffnum import Tensor
from .tgstore import NodeFeatureTable, TemporalAdjacency

EMBEDDING_MODES = ("id", "time", "sum", "attn")


class TimeEncoder(dn.Module):
    """Harmonic encoding ``cos(omega * dt + phase)`` with learnable omega, phase."""

    def __init__(self, dim: int):
        self.dim = dim
        self.omega = dn.nn.parameter(1.0 / 10 ** np.linspace(0, 9, dim))
        self.phase = dn.nn.parameter(np.zeros(dim))

    def __call__(self, dt) -> Tensor:
        dt = np.asarray(dt, dtype=self.omega.dtype)
        if np.any(dt < 0):
            raise ValueError(f"time_encode: negative time delta {dt.min()}")
        return dn.cos(Tensor(dt[..., None]) * self.omega + self.phase)


def time_encode(encoder: TimeEncoder, dt) -> Tensor:
    return encoder(dt)


@dataclass
class EmbeddingConfig:
    mode: str = "attn"
    layers: int = 1
    neighbors: int = 10
    heads: int = 2
    dropout: float = 0.1
    sampling: str = "most_recent"

    def __post_init__(self):
        if self.mode not in EMBEDDING_MODES:
            raise ValueError(f"unknown embedding mode {self.mode!r}")
        if self.mode in ("sum", "attn") and (self.layers < 1 or self.neighbors < 1):
            raise ValueError("graph embeddings need layers >= 1 and neighbors >= 1")


@dataclass
class EmbedContext:
    """Everything an embedding reads besides its own parameters.

    ``memory`` is the (N, d) memory as the batch sees it (possibly with
    freshly updated rows that carry gradient), ``last_update`` the matching
    clocks.
    """

    memory: Tensor
    last_update: np.ndarray
    graph: TemporalAdjacency
    time_encoder: TimeEncoder
    node_features: NodeFeatureTable | None = None
    rng: np.random.Generator | None = None
    exclude: np.ndarray | None = None


def node_input_repr(ctx: EmbedContext, nodes, times) -> Tensor:
    """``h0 = s_j(t) + v_j(t)``; node features default to zeros."""
    nodes = np.asarray(nodes, np.int64)
    h = dn.take_rows(ctx.memory, nodes)
    if ctx.node_features is not None:
        if ctx.node_features.dim != ctx.memory.shape[1]:
            raise ValueError(
                f"node_input_repr: node feature width {ctx.node_features.dim} "
                f"!= memory width {ctx.memory.shape[1]}"
            )
        v = ctx.node_features.lookup(nodes, times)
        if v is not None:
            h = h + Tensor(v.reshape(nodes.shape + (-1,)))
    return h


class IdentityEmbedding(dn.Module):
    mode = "id"

    def __init__(self, memory_dim: int):
        self.out_dim = memory_dim

    def __call__(self, ctx: EmbedContext, nodes, times) -> Tensor:
        return dn.take_rows(ctx.memory, nodes)


class TimeProjectionEmbedding(dn.Module):
    """``(1 + dt * w) * s`` with ``dt`` the time since the node's last update.

    ``w`` starts at zero, so an untrained projection equals the identity.
    """

    mode = "time"

    def __init__(self, memory_dim: int):
        self.out_dim = memory_dim
        self.w = dn.nn.parameter(np.zeros(memory_dim))

    def __call__(self, ctx: EmbedContext, nodes, times) -> Tensor:
        nodes = np.asarray(nodes, np.int64)
        dt = np.asarray(times, float) - ctx.last_update[nodes]
        if np.any(dt < 0):
            raise ValueError(f"embed_time: negative time delta {dt.min()}")
        s = dn.take_rows(ctx.memory, nodes)
        scale = 1.0 + Tensor(dt[:, None].astype(s.dtype)) * self.w
        return scale * s


class _GraphEmbedding(dn.Module):
    """Shared recursion for the neighbourhood-aggregating embeddings."""

    def __init__(self, config: EmbeddingConfig, memory_dim: int, edge_dim: int, time_dim: int,
                 embedding_dim: int, rng: np.random.Generator):
        self.config = config
        self.out_dim = embedding_dim
        self.edge_dim = edge_dim
        self.rng = rng
        dims = [memory_dim] + [embedding_dim] * config.layers
        self.layers = [self._make_layer(dims[i], edge_dim, time_dim, embedding_dim, rng)
                       for i in range(config.layers)]

    def __call__(self, ctx: EmbedContext, nodes, times) -> Tensor:
        nodes = np.asarray(nodes, np.int64)
        times = np.asarray(times, float)
        return self._embed(ctx, nodes, times, self.config.layers)

    def _embed(self, ctx: EmbedContext, nodes, times, layer: int) -> Tensor:
        if layer == 0:
            return node_input_repr(ctx, nodes, times)
        cfg = self.config
        k = cfg.neighbors
        h_self = self._embed(ctx, nodes, times, layer - 1)
        nb = ctx.graph.sample(nodes, times, k, cfg.sampling, rng=ctx.rng)
        q = len(nodes)
        h_nb = self._embed(ctx, nb.neighbors.ravel(), np.repeat(times, k), layer - 1)
        h_nb = dn.reshape(h_nb, (q, k, h_nb.shape[-1]))
        feats = np.zeros((q, k, self.edge_dim), dtype=h_self.dtype)
        if self.edge_dim:
            feats[nb.mask] = ctx.graph.edge_features[nb.ordinals[nb.mask]]
        dt = np.where(nb.mask, times[:, None] - nb.timestamps, 0.0)
        C = dn.concat([h_nb, Tensor(feats), ctx.time_encoder(dt)], axis=-1)
        return self.layers[layer - 1](ctx, h_self, C, nb.mask)


class AttentionLayer(dn.Module):
    """One temporal graph attention layer: MHA over neighbours, then an MLP merge."""

    def __init__(self, in_dim: int, edge_dim: int, time_dim: int, out_dim: int, heads: int,
                 dropout: float, rng: np.random.Generator):
        q_dim = in_dim + time_dim
        self.attention = dn.MultiHeadAttention(q_dim, in_dim + edge_dim + time_dim, heads, rng,
                                               dropout=dropout)
        self.merge = dn.MLP(in_dim + q_dim, out_dim, out_dim, rng)

    def __call__(self, ctx: EmbedContext, h_self: Tensor, C: Tensor, mask) -> Tensor:
        q = dn.concat([h_self, ctx.time_encoder(np.zeros(h_self.shape[0]))], axis=-1)
        context = self.attention(q, C, mask)
        return self.merge(dn.concat([h_self, context], axis=-1))


class GraphAttentionEmbedding(_GraphEmbedding):
    mode = "attn"

    def _make_layer(self, in_dim, edge_dim, time_dim, out_dim, rng):
        return AttentionLayer(in_dim, edge_dim, time_dim, out_dim, self.config.heads,
                              self.config.dropout, rng)


class SumLayer(dn.Module):
    """``h = W2 (h_self | relu(sum_j W1 (h_j | e_ij | phi(t - t_j))))``."""

    def __init__(self, in_dim: int, edge_dim: int, time_dim: int, out_dim: int,
                 rng: np.random.Generator):
        self.w1 = dn.Linear(in_dim + edge_dim + time_dim, out_dim, rng)
        self.w2 = dn.Linear(in_dim + out_dim, out_dim, rng)

    def __call__(self, ctx: EmbedContext, h_self: Tensor, C: Tensor, mask) -> Tensor:
        proj = self.w1(C) * Tensor(np.asarray(mask, dtype=C.dtype)[..., None])
        agg = dn.relu(dn.tsum(proj, axis=1))
        return self.w2(dn.concat([h_self, agg], axis=-1))


class GraphSumEmbedding(_GraphEmbedding):
    mode = "sum"

    def _make_layer(self, in_dim, edge_dim, time_dim, out_dim, rng):
        return SumLayer(in_dim, edge_dim, time_dim, out_dim, rng)


def build_embedding(config: EmbeddingConfig, memory_dim: int, edge_dim: int, time_dim: int,
                    embedding_dim: int, rng: np.random.Generator) -> dn.Module:
    if config.mode == "id":
        return IdentityEmbedding(memory_dim)
    if config.mode == "time":
        return TimeProjectionEmbedding(memory_dim)
    if config.mode == "sum":
        return GraphSumEmbedding(config, memory_dim, edge_dim, time_dim, embedding_dim, rng)
    return GraphAttentionEmbedding(config, memory_dim, edge_dim, time_dim, embedding_dim, rng)


# single-node conveniences mirroring the batched modules

def embed_id(ctx: EmbedContext, node: int, t: float) -> np.ndarray:
    return IdentityEmbedding(ctx.memory.shape[1])(ctx, np.array([node]), np.array([t])).data[0]


def embed_time(module: TimeProjectionEmbedding, ctx: EmbedContext, node: int, t: float) -> np.ndarray:
    return module(ctx, np.array([node]), np.array([t])).data[0]


def embed_attn(module: GraphAttentionEmbedding, ctx: EmbedContext, node: int, t: float) -> np.ndarray:
    return module(ctx, np.array([node]), np.array([t])).data[0]


def embed_sum(module: GraphSumEmbedding, ctx: EmbedContext, node: int, t: float) -> np.ndarray:
    return module(ctx, np.array([node]), np.array([t])).data[0]
