"""Variant presets, the batched training loop, decoders and evaluation.

Each batch runs in the order that keeps prediction free of leakage:

1. update the memory from raw messages stored by *earlier* batches;
2. embed the batch's sources, destinations and sampled negatives with that
   memory and score them;
3. backpropagate and step the optimizer;
4. write the updated memory and store this batch's raw messages.
"""

from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diffnum as dn
from .diffnum import Tensor
from .embed import (
    EmbedContext,
    EmbeddingConfig,
    GraphAttentionEmbedding,
    TimeEncoder,
    build_embedding,
)
from .memory import NodeMemory
from .metrics import average_precision, roc_auc
from .tgstore import EventKind, EventLog, NodeFeatureTable, SplitSpec, TemporalAdjacency

# named RNG streams derived from the run seed
INIT_STREAM, DROPOUT_STREAM, SAMPLER_STREAM, NEGATIVE_STREAM, EVAL_STREAM, CLASSIFIER_STREAM = range(6)


@dataclass
class HyperParams:
    memory_dim: int = 172
    embedding_dim: int = 100
    time_dim: int = 100
    heads: int = 2
    dropout: float = 0.1
    lr: float = 1e-4
    batch_size: int = 200
    patience: int = 5


@dataclass
class VariantConfig:
    name: str
    memory: bool = True
    updater: str = "gru"
    embedding: str = "attn"
    layers: int = 1
    neighbors: int = 10
    aggregator: str = "last"
    message_function: str = "identity"
    sampling: str = "most_recent"

    def validate(self) -> "VariantConfig":
        if self.memory:
            if self.updater not in ("gru", "rnn"):
                raise ValueError(f"{self.name}: memory needs a gru or rnn updater, got {self.updater!r}")
            if self.aggregator not in ("last", "mean"):
                raise ValueError(f"{self.name}: unknown aggregator {self.aggregator!r}")
            if self.message_function not in ("identity", "dyrep_attn"):
                raise ValueError(f"{self.name}: unknown message function {self.message_function!r}")
        else:
            if self.updater != "none" or self.aggregator != "none" or self.message_function != "none":
                raise ValueError(
                    f"{self.name}: memoryless variants take updater/aggregator/message_function 'none'"
                )
            if self.embedding in ("id", "time"):
                raise ValueError(f"{self.name}: embedding {self.embedding!r} needs memory")
        if self.embedding not in ("id", "time", "sum", "attn"):
            raise ValueError(f"{self.name}: unknown embedding {self.embedding!r}")
        if self.sampling not in ("most_recent", "uniform"):
            raise ValueError(f"{self.name}: unknown sampling {self.sampling!r}")
        if self.layers < 1 or self.neighbors < 1:
            raise ValueError(f"{self.name}: layers and neighbors must be >= 1")
        return self


_NO_MEM = dict(memory=False, updater="none", aggregator="none", message_function="none")

PRESETS: dict[str, VariantConfig] = {
    v.name.lower(): v.validate()
    for v in (
        VariantConfig("TGN-attn"),
        VariantConfig("TGN-2l", layers=2),
        VariantConfig("TGN-no-mem", **_NO_MEM),
        VariantConfig("TGN-time", embedding="time"),
        VariantConfig("TGN-id", embedding="id"),
        VariantConfig("TGN-sum", embedding="sum"),
        VariantConfig("TGN-mean", aggregator="mean"),
        VariantConfig("Jodie", updater="rnn", embedding="time"),
        VariantConfig("DyRep", updater="rnn", embedding="id", message_function="dyrep_attn"),
        VariantConfig("TGAT", layers=2, neighbors=20, sampling="uniform", **_NO_MEM),
    )
}
_ALIASES = {"tgat-style": "tgat", "tgn": "tgn-attn", "tgn-nomem": "tgn-no-mem"}


def get_preset(name: str) -> VariantConfig:
    key = name.lower()
    key = _ALIASES.get(key, key)
    if key not in PRESETS:
        raise KeyError(f"unknown variant {name!r}; known: {', '.join(v.name for v in PRESETS.values())}")
    return copy.deepcopy(PRESETS[key])


# -- model -------------------------------------------------------------------------------


@dataclass
class BatchOutput:
    lo: int
    hi: int
    loss: Tensor | None = None
    pos_logits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    neg_logits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scored: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    updated_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    updated_memory: Tensor | None = None
    updated_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    memory_view: np.ndarray | None = None
    embeddings: np.ndarray | None = None


class TGN(dn.Module):
    """Encoder (memory + embedding) with a link decoder, bound to one event log."""

    def __init__(self, variant: VariantConfig, hp: HyperParams, num_nodes: int, edge_dim: int,
                 seed: int = 0):
        variant.validate()
        self.variant = variant
        self.hp = hp
        self.seed = seed
        self.edge_dim = edge_dim
        rng = np.random.default_rng([seed, INIT_STREAM])
        self.time_encoder = TimeEncoder(hp.time_dim)
        dyrep = variant.message_function == "dyrep_attn"
        if variant.memory:
            self.memory = NodeMemory(num_nodes, hp.memory_dim, edge_dim, hp.time_dim, rng,
                                     updater=variant.updater, aggregator=variant.aggregator,
                                     extra_dim=hp.embedding_dim if dyrep else 0)
        else:
            self.memory = None
        emb_cfg = EmbeddingConfig(variant.embedding, variant.layers, variant.neighbors, hp.heads,
                                  hp.dropout, variant.sampling)
        self.embedding = build_embedding(emb_cfg, hp.memory_dim, edge_dim, hp.time_dim,
                                         hp.embedding_dim, rng)
        if dyrep:
            summary_cfg = EmbeddingConfig("attn", 1, variant.neighbors, hp.heads, hp.dropout,
                                          variant.sampling)
            self.message_attention = GraphAttentionEmbedding(summary_cfg, hp.memory_dim, edge_dim,
                                                             hp.time_dim, hp.embedding_dim, rng)
        else:
            self.message_attention = None
        z_dim = self.embedding.out_dim
        self.decoder = dn.MLP(2 * z_dim, z_dim, 1, rng)
        self._dropout_rng = np.random.default_rng([seed, DROPOUT_STREAM])
        for m in self.modules():
            if isinstance(m, dn.MultiHeadAttention):
                m.rng = self._dropout_rng
        self.num_nodes = num_nodes
        self.log: EventLog | None = None
        self.graph: TemporalAdjacency | None = None
        self.node_features: NodeFeatureTable | None = None
        self.sampler_rng = np.random.default_rng([seed, SAMPLER_STREAM])

    @property
    def embedding_dim(self) -> int:
        return self.embedding.out_dim

    def attach(self, log: EventLog) -> "TGN":
        """Bind the model to ``log``: build the temporal index and size the memory."""
        self.log = log
        self.num_nodes = max(self.num_nodes, log.num_nodes)
        self.graph = TemporalAdjacency.from_log(log, seed=self.seed)
        self.graph.num_nodes = max(self.graph.num_nodes, self.num_nodes)
        has_node_events = any(e.kind is EventKind.NODE_UPDATE for e in log.events)
        self.node_features = (NodeFeatureTable.from_log(log, self.hp.memory_dim)
                              if has_node_events else None)
        if self.memory is not None:
            self.memory.resize(self.num_nodes)
        self.reset_state()
        return self

    def reset_state(self) -> None:
        """Zero memory, empty raw message store, rewind the neighbour sampler."""
        if self.memory is not None:
            self.memory.reset_state()
        self.sampler_rng = np.random.default_rng([self.seed, SAMPLER_STREAM])

    # -- batch pipeline --------------------------------------------------------------

    def _context(self, memory: Tensor, last_update: np.ndarray) -> EmbedContext:
        return EmbedContext(memory, last_update, self.graph, self.time_encoder, self.node_features,
                            rng=self.sampler_rng)

    def _dyrep_summary(self, raw) -> Tensor:
        st = self.memory.store
        ctx = self._context(Tensor(st.memory), st.last_update)
        nodes = np.array([m.counterpart if m.counterpart >= 0 else m.node for m in raw])
        times = np.array([m.timestamp for m in raw])
        return self.message_attention(ctx, nodes, times)

    def memory_view(self):
        """Memory as the next batch would see it: pending messages applied, nothing written."""
        if self.memory is None:
            empty = np.zeros(0, np.int64)
            return (Tensor(np.zeros((self.num_nodes, self.hp.memory_dim))), np.zeros(self.num_nodes),
                    empty, None, np.zeros(0))
        st = self.memory.store
        extra = self._dyrep_summary if self.message_attention is not None else None
        nodes, s_new, t_new = self.memory.updated(self.time_encoder, extra)
        base = Tensor(st.memory)
        view = dn.scatter_rows(base, nodes, s_new) if len(nodes) else base
        lu = st.last_update.copy()
        lu[nodes] = t_new
        return view, lu, nodes, s_new, t_new

    def embed(self, ctx: EmbedContext, nodes, times) -> Tensor:
        return self.embedding(ctx, nodes, times)

    def decode(self, z_src: Tensor, z_dst: Tensor) -> Tensor:
        return link_decoder(self.decoder, z_src, z_dst)

    def forward_batch(self, lo: int, hi: int, negatives=None, score_mask=None,
                      embed_sources: bool = False) -> BatchOutput:
        """Run steps 1-2 for events ``lo..hi-1`` without writing any state.

        ``negatives`` holds one sampled destination per interaction in the
        batch; without it nothing is scored.  ``score_mask`` (one flag per
        interaction) restricts which interactions are scored.
        """
        log = self.log
        ts = log.ts[lo:hi]
        if np.any(np.diff(ts) < 0):
            raise ValueError(f"batch {lo}:{hi} is not in chronological order")
        if self.memory is not None:
            leaked = self.memory.raw.max_ordinal()
            if leaked >= lo:
                raise RuntimeError(
                    f"raw message of event {leaked} would be visible to the batch starting at {lo}"
                )
        view, lu, nodes, s_new, t_new = self.memory_view()
        out = BatchOutput(lo, hi, updated_nodes=nodes, updated_memory=s_new, updated_times=t_new,
                          memory_view=view.data)
        inter = lo + np.flatnonzero(log.interaction_mask()[lo:hi])
        if score_mask is not None:
            inter = inter[np.asarray(score_mask, bool)]
        if len(inter) == 0 or (negatives is None and not embed_sources):
            return out
        ctx = self._context(view, lu)
        src, dst, t = log.src[inter], log.dst[inter], log.ts[inter]
        if negatives is None:
            z = self.embed(ctx, src, t)
            out.embeddings = z.data
            out.scored = inter
            return out
        neg = np.asarray(negatives, np.int64)
        if score_mask is not None:
            neg = neg[np.asarray(score_mask, bool)]
        n = len(inter)
        z = self.embed(ctx, np.concatenate([src, dst, neg]), np.concatenate([t, t, t]))
        z_src, z_dst, z_neg = z[:n], z[n:2 * n], z[2 * n:]
        pos = self.decode(z_src, z_dst)
        negl = self.decode(z_src, z_neg)
        logits = dn.reshape(dn.concat([pos, negl], axis=0), (2 * n,))
        labels = np.r_[np.ones(n), np.zeros(n)]
        out.loss = dn.bce_with_logits(logits, labels)
        out.pos_logits = pos.data.ravel().copy()
        out.neg_logits = negl.data.ravel().copy()
        out.scored = inter
        if embed_sources:
            out.embeddings = z_src.data
        return out

    def commit(self, out: BatchOutput) -> None:
        """Steps 4: persist the updated memory, then store this batch's raw messages."""
        if self.memory is None:
            return
        if len(out.updated_nodes):
            self.memory.commit(out.updated_nodes, out.updated_memory.data, out.updated_times)
        self.memory.store_raw_messages(self.log.events[out.lo:out.hi])

    def flush(self) -> None:
        """Apply every pending raw message to the memory (end of a stream)."""
        if self.memory is None:
            return
        with dn.no_grad():
            _, _, nodes, s_new, t_new = self.memory_view()
        if len(nodes):
            self.memory.commit(nodes, s_new.data, t_new)

    def replay(self, lo: int, hi: int, batch_size: int, boundaries=()) -> None:
        """Advance the memory over events ``lo..hi-1`` without scoring."""
        with dn.no_grad():
            for a, b in batches(lo, hi, batch_size, boundaries):
                self.commit(self.forward_batch(a, b))


def link_decoder(mlp: dn.MLP, z_src: Tensor, z_dst: Tensor) -> Tensor:
    """Edge logit from ``MLP(z_src | z_dst)``."""
    if z_src.shape != z_dst.shape:
        raise ValueError(f"link_decoder: shape mismatch {z_src.shape} vs {z_dst.shape}")
    return mlp(dn.concat([z_src, z_dst], axis=-1))


def build_variant(config: VariantConfig | str, hp: HyperParams, num_nodes: int, edge_dim: int,
                  seed: int = 0) -> TGN:
    if isinstance(config, str):
        config = get_preset(config)
    return TGN(config, hp, num_nodes, edge_dim, seed)


def batches(lo: int, hi: int, size: int, boundaries=()):
    """Consecutive ``(a, b)`` slices of at most ``size`` events, cut at ``boundaries``."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    cuts = sorted({lo, hi, *(b for b in boundaries if lo < b < hi)})
    for a0, b0 in zip(cuts[:-1], cuts[1:]):
        for a in range(a0, b0, size):
            yield a, min(a + size, b0)


# -- training & evaluation --------------------------------------------------------------


@dataclass
class Metrics:
    ap: float = float("nan")
    auc: float = float("nan")
    loss: float = float("nan")
    seconds: float = 0.0
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _metrics_from(pos: list, neg: list, losses: list, seconds: float) -> Metrics:
    p, q = np.concatenate(pos or [np.zeros(0)]), np.concatenate(neg or [np.zeros(0)])
    scores = np.r_[p, q]
    labels = np.r_[np.ones(len(p)), np.zeros(len(q))]
    if len(p) == 0:
        return Metrics(loss=float(np.mean(losses)) if losses else float("nan"), seconds=seconds)
    return Metrics(average_precision(scores, labels), roc_auc(scores, labels),
                   float(np.mean(losses)) if losses else float("nan"), seconds, len(p))


def train_epoch(model: TGN, log: EventLog, split: SplitSpec, batch_size: int,
                optimizer: dn.Adam, rng: np.random.Generator) -> Metrics:
    """One chronological pass over the training segment with zeroed initial memory."""
    if model.log is not log:
        model.attach(log)
    model.train()
    model.reset_state()
    dsts = log.destination_nodes(split.train_end)
    pos, neg, losses = [], [], []
    start = time.perf_counter()
    for lo, hi in batches(0, split.train_end, batch_size):
        n_inter = int(log.interaction_mask()[lo:hi].sum())
        negatives = rng.choice(dsts, size=n_inter) if n_inter else None
        out = model.forward_batch(lo, hi, negatives)
        if out.loss is not None:
            optimizer.zero_grad()
            out.loss.backward()
            optimizer.step()
            losses.append(out.loss.item())
            pos.append(out.pos_logits)
            neg.append(out.neg_logits)
        model.commit(out)
    return _metrics_from(pos, neg, losses, time.perf_counter() - start)


def evaluate(model: TGN, log: EventLog, split: SplitSpec, setting: str = "transductive",
             segment: str = "test", batch_size: int = 200) -> Metrics:
    """Score a segment against one sampled negative per positive.

    Memory starts at zero and is advanced over every earlier event first;
    within the segment it keeps updating from observed interactions, never
    from negatives.  The inductive setting scores only interactions touching
    a node unseen during training.
    """
    if setting not in ("transductive", "inductive"):
        raise ValueError(f"unknown setting {setting!r}")
    seg = split.segment(segment)
    if len(seg) == 0:
        raise ValueError(f"evaluate: empty {segment} segment")
    if model.log is not log:
        model.attach(log)
    model.eval()
    model.reset_state()
    rng = np.random.default_rng([model.seed, EVAL_STREAM, seg.start])
    dsts = log.destination_nodes()
    inductive = np.array(sorted(split.inductive_nodes), dtype=np.int64)
    bounds = (split.train_end, split.val_end)
    pos, neg, losses = [], [], []
    start = time.perf_counter()
    with dn.no_grad():
        model.replay(0, seg.start, batch_size, bounds)
        for lo, hi in batches(seg.start, seg.stop, batch_size, bounds):
            inter = lo + np.flatnonzero(log.interaction_mask()[lo:hi])
            negatives = rng.choice(dsts, size=len(inter)) if len(inter) else None
            mask = None
            if setting == "inductive":
                mask = np.isin(log.src[inter], inductive) | np.isin(log.dst[inter], inductive)
            out = model.forward_batch(lo, hi, negatives, score_mask=mask)
            if out.loss is not None:
                losses.append(out.loss.item())
                pos.append(out.pos_logits)
                neg.append(out.neg_logits)
            model.commit(out)
    if not pos:
        raise ValueError(f"evaluate: no {setting} interactions to score in the {segment} segment")
    return _metrics_from(pos, neg, losses, time.perf_counter() - start)


@dataclass
class TrainState:
    epoch: int = 0
    best_val_ap: float = -np.inf
    best_epoch: int = -1
    patience_left: int = 5
    seed: int = 0
    optimizer: dn.AdamState | None = None
    history: list = field(default_factory=list)


def fit(model: TGN, log: EventLog, split: SplitSpec, epochs: int, hp: HyperParams | None = None,
        callback=None) -> TrainState:
    """Train with early stopping on validation AP and restore the best parameters."""
    hp = hp or model.hp
    model.attach(log)
    optimizer = dn.Adam(model.parameters(), lr=hp.lr)
    rng = np.random.default_rng([model.seed, NEGATIVE_STREAM])
    state = TrainState(patience_left=hp.patience, seed=model.seed, optimizer=optimizer.state)
    best = model.state_dict()
    for epoch in range(epochs):
        train_m = train_epoch(model, log, split, hp.batch_size, optimizer, rng)
        val_m = evaluate(model, log, split, "transductive", "val", hp.batch_size)
        state.epoch = epoch + 1
        state.history.append({"epoch": epoch + 1, "train": train_m.to_dict(), "val": val_m.to_dict()})
        if callback is not None:
            callback(epoch + 1, train_m, val_m)
        if val_m.ap > state.best_val_ap:
            state.best_val_ap, state.best_epoch = val_m.ap, epoch + 1
            state.patience_left = hp.patience
            best = model.state_dict()
        else:
            state.patience_left -= 1
            if state.patience_left <= 0:
                break
    model.load_state_dict(best)
    return state


# -- node classification ---------------------------------------------------------------


def source_embeddings(model: TGN, log: EventLog, batch_size: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Embedding of each interaction's source at its own time, from one replay pass."""
    model.attach(log)
    model.eval()
    model.reset_state()
    rows, z = [], []
    with dn.no_grad():
        for lo, hi in batches(0, len(log), batch_size):
            out = model.forward_batch(lo, hi, embed_sources=True)
            if out.embeddings is not None:
                rows.append(out.scored)
                z.append(out.embeddings)
            model.commit(out)
    if not rows:
        return np.zeros(0, np.int64), np.zeros((0, model.embedding_dim))
    return np.concatenate(rows), np.concatenate(z)


def node_classifier(mlp: dn.MLP, z) -> Tensor:
    """Logit of the positive state label for each embedding row."""
    z = dn.as_tensor(z)
    if z.shape[-1] != mlp.fc1.in_dim:
        raise ValueError(f"node_classifier: embedding width {z.shape[-1]} != {mlp.fc1.in_dim}")
    return dn.reshape(mlp(z), z.shape[:-1])


def train_node_classifier(model: TGN, log: EventLog, split: SplitSpec, epochs: int = 10,
                          lr: float | None = None, batch_size: int = 200) -> dict:
    """Fit an MLP on frozen source embeddings; early-stop on validation ROC AUC."""
    rows, z = source_embeddings(model, log, batch_size)
    labels = log.labels[rows]
    seg = {name: (rows >= split.segment(name).start) & (rows < split.segment(name).stop)
           for name in ("train", "val", "test")}
    for name in ("train", "val", "test"):
        if len(np.unique(labels[seg[name]])) < 2:
            raise ValueError(f"node classification needs both label classes in the {name} segment")
    rng = np.random.default_rng([model.seed, CLASSIFIER_STREAM])
    clf = dn.MLP(z.shape[1], model.embedding_dim, 1, rng)
    opt = dn.Adam(clf.parameters(), lr=lr or model.hp.lr)
    ztr, ytr = z[seg["train"]], labels[seg["train"]]
    best_auc, best, history, wait = -1.0, clf.state_dict(), [], 0
    for epoch in range(epochs):
        order = rng.permutation(len(ztr))
        losses = []
        for a in range(0, len(order), batch_size):
            idx = order[a:a + batch_size]
            loss = dn.bce_with_logits(node_classifier(clf, ztr[idx]), ytr[idx].astype(float))
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        with dn.no_grad():
            val_auc = roc_auc(node_classifier(clf, z[seg["val"]]).data, labels[seg["val"]])
        history.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "val_auc": val_auc})
        if val_auc > best_auc:
            best_auc, best, wait = val_auc, clf.state_dict(), 0
        else:
            wait += 1
            if wait >= model.hp.patience:
                break
    clf.load_state_dict(best)
    with dn.no_grad():
        test_auc = roc_auc(node_classifier(clf, z[seg["test"]]).data, labels[seg["test"]])
    return {"val_auc": best_auc, "test_auc": test_auc, "history": history}


def with_overrides(variant: VariantConfig, **fields) -> VariantConfig:
    fields = {k: v for k, v in fields.items() if v is not None}
    return replace(variant, **fields).validate()
