import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgn import diffnum as dn
from tgn.diffnum import Tensor
from tgn.embed import (
    EmbedContext,
    EmbeddingConfig,
    GraphAttentionEmbedding,
    GraphSumEmbedding,
    TimeEncoder,
    TimeProjectionEmbedding,
    build_embedding,
    embed_attn,
    embed_id,
    embed_sum,
    embed_time,
    node_input_repr,
    time_encode,
)
from tgn.tgstore import EventLog, NodeFeatureTable, TemporalAdjacency

MEM, EDGE, TIME, EMB = 4, 2, 4, 6


def toy_log(extra_future=False):
    """Node 0 meets 1 at t=1 and 2 at t=2; node 3 meets 4 at t=1.5."""
    log = EventLog(edge_dim=EDGE)
    log.add_interaction(0, 1, 1.0, [0.5, -0.5])
    log.add_interaction(3, 4, 1.5, [1.0, 0.0])
    log.add_interaction(0, 2, 2.0, [-1.0, 2.0])
    if extra_future:
        log.add_interaction(0, 4, 3.0, [3.0, 3.0])
        log.add_interaction(2, 1, 5.0, [1.0, 1.0])
    return log


def context(log, memory=None, seed=0, features=None):
    rng = np.random.default_rng(seed)
    mem = rng.uniform(-1, 1, size=(6, MEM)) if memory is None else memory
    enc = TimeEncoder(TIME)
    enc.phase.data[:] = rng.uniform(-1, 1, TIME)
    return EmbedContext(Tensor(mem), np.zeros(6), TemporalAdjacency.from_log(log), enc, features)


def build(mode, layers=1, neighbors=10, seed=0):
    cfg = EmbeddingConfig(mode, layers, neighbors, heads=2, dropout=0.0)
    module = build_embedding(cfg, MEM, EDGE, TIME, EMB, np.random.default_rng(seed))
    module.eval()
    return module


class TestTimeEncoder:
    def test_zero_delta_is_ones(self):
        np.testing.assert_array_equal(time_encode(TimeEncoder(5), np.zeros(1)).data, np.ones((1, 5)))

    @given(st.lists(st.floats(0, 1e9), min_size=1, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, dts):
        out = TimeEncoder(8)(np.array(dts)).data
        assert np.all(np.abs(out) <= 1.0)

    def test_direct_formula(self, rng):
        for _ in range(5):
            enc = TimeEncoder(3)
            enc.omega.data[:] = rng.normal(size=3)
            enc.phase.data[:] = rng.normal(size=3)
            dt = rng.uniform(0, 10)
            np.testing.assert_allclose(enc(np.array([dt])).data[0],
                                       np.cos(enc.omega.data * dt + enc.phase.data), atol=1e-15)

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            TimeEncoder(2)(np.array([-1.0]))

    def test_initial_frequencies(self):
        enc = TimeEncoder(10)
        np.testing.assert_allclose(enc.omega.data, 1.0 / 10 ** np.linspace(0, 9, 10))
        assert not enc.phase.data.any()


class TestIdentityAndTime:
    def test_id_is_memory_row(self):
        ctx = context(toy_log())
        np.testing.assert_array_equal(embed_id(ctx, 2, 5.0), ctx.memory.data[2])

    def test_id_new_node_zero(self):
        mem = np.zeros((6, MEM))
        mem[0] = 1.0
        np.testing.assert_array_equal(embed_id(context(toy_log(), mem), 5, 5.0), np.zeros(MEM))

    def test_id_ignores_other_nodes(self):
        ctx = context(toy_log())
        before = embed_id(ctx, 3, 5.0)
        ctx.memory.data[[0, 1, 2, 4]] += 1.0
        np.testing.assert_array_equal(embed_id(ctx, 3, 5.0), before)

    def test_time_zero_delta(self, rng):
        module = TimeProjectionEmbedding(MEM)
        module.w.data[:] = rng.normal(size=MEM)
        ctx = context(toy_log())
        ctx.last_update[:] = 4.0
        np.testing.assert_array_equal(embed_time(module, ctx, 1, 4.0), ctx.memory.data[1])

    def test_time_zero_weights(self):
        ctx = context(toy_log())
        np.testing.assert_array_equal(embed_time(TimeProjectionEmbedding(MEM), ctx, 1, 9.0),
                                      ctx.memory.data[1])

    def test_time_direct_formula(self, rng):
        module = TimeProjectionEmbedding(MEM)
        module.w.data[:] = rng.normal(size=MEM)
        ctx = context(toy_log())
        ctx.last_update[1] = 1.5
        expected = (1 + 2.25 * module.w.data) * ctx.memory.data[1]
        np.testing.assert_allclose(embed_time(module, ctx, 1, 3.75), expected, atol=1e-15)

    def test_time_negative_rejected(self):
        ctx = context(toy_log())
        ctx.last_update[1] = 5.0
        with pytest.raises(ValueError, match="negative"):
            embed_time(TimeProjectionEmbedding(MEM), ctx, 1, 4.0)


class TestInputRepr:
    def test_no_features_is_memory(self):
        ctx = context(toy_log())
        np.testing.assert_array_equal(node_input_repr(ctx, [0, 1], [3.0, 3.0]).data, ctx.memory.data[:2])

    def test_zero_everything(self):
        ctx = context(toy_log(), np.zeros((6, MEM)), features=NodeFeatureTable(6, MEM))
        np.testing.assert_array_equal(node_input_repr(ctx, [0], [3.0]).data, 0.0)

    def test_direct_sum(self, rng):
        table = NodeFeatureTable(6, MEM)
        v = rng.normal(size=MEM)
        table.set(1, 0.5, v)
        ctx = context(toy_log(), features=table)
        np.testing.assert_allclose(node_input_repr(ctx, [1], [3.0]).data[0], ctx.memory.data[1] + v)

    def test_width_mismatch(self):
        ctx = context(toy_log(), features=NodeFeatureTable(6, MEM + 1))
        with pytest.raises(ValueError, match="width"):
            node_input_repr(ctx, [0], [1.0])


def attn_layer_np(layer, h_self, nb_rows, enc_q):
    """Straight-line attention layer for one node with unmasked neighbour rows."""
    P = layer.attention.state_dict()
    q = np.concatenate([h_self, enc_q])
    heads = layer.attention.heads
    Q = P["w_q.weight"] @ q + P["w_q.bias"]
    K = nb_rows @ P["w_k.weight"].T + P["w_k.bias"]
    V = nb_rows @ P["w_v.weight"].T + P["w_v.bias"]
    dh = len(Q) // heads
    parts = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = K[:, sl] @ Q[sl] / np.sqrt(dh)
        w = np.exp(s - s.max())
        parts.append((w / w.sum()) @ V[:, sl])
    ctx = P["w_o.weight"] @ np.concatenate(parts) + P["w_o.bias"]
    M = layer.merge.state_dict()
    x = np.concatenate([h_self, ctx])
    hid = np.maximum(M["fc1.weight"] @ x + M["fc1.bias"], 0)
    return M["fc2.weight"] @ hid + M["fc2.bias"]


class TestAttention:
    def test_single_neighbour_straight_line(self):
        log = toy_log()
        ctx = context(log)
        module = build("attn")
        enc = ctx.time_encoder
        got = embed_attn(module, ctx, 3, 2.0)
        row = np.concatenate([ctx.memory.data[4], [1.0, 0.0], enc(np.array([0.5])).data[0]])
        expected = attn_layer_np(module.layers[0], ctx.memory.data[3], row[None], enc(np.zeros(1)).data[0])
        np.testing.assert_allclose(got, expected, atol=1e-13)

    def test_two_neighbours_straight_line(self):
        ctx = context(toy_log())
        module = build("attn")
        enc = ctx.time_encoder
        rows = np.stack([
            np.concatenate([ctx.memory.data[2], [-1.0, 2.0], enc(np.array([1.0])).data[0]]),
            np.concatenate([ctx.memory.data[1], [0.5, -0.5], enc(np.array([2.0])).data[0]]),
        ])
        expected = attn_layer_np(module.layers[0], ctx.memory.data[0], rows, enc(np.zeros(1)).data[0])
        np.testing.assert_allclose(embed_attn(module, ctx, 0, 3.0), expected, atol=1e-13)

    def test_isolated_zero_memory_node(self):
        ctx = context(toy_log(), np.zeros((6, MEM)))
        module = build("attn")
        layer = module.layers[0]
        expected = layer.merge(Tensor(np.zeros(layer.merge.fc1.in_dim))).data
        np.testing.assert_allclose(embed_attn(module, ctx, 5, 3.0), expected, atol=1e-15)
        np.testing.assert_allclose(embed_attn(module, ctx, 0, 0.5), expected, atol=1e-15)

    def test_two_layers_run(self):
        ctx = context(toy_log(extra_future=True))
        z = build("attn", layers=2, neighbors=3)(ctx, np.array([0, 1, 5]), np.array([4.0, 6.0, 6.0]))
        assert z.shape == (3, EMB) and np.all(np.isfinite(z.data))

    def test_default_preset_shape(self):
        cfg = EmbeddingConfig()
        assert (cfg.mode, cfg.layers, cfg.neighbors, cfg.heads) == ("attn", 1, 10, 2)


class TestSum:
    def test_zero_neighbours(self):
        ctx = context(toy_log())
        module = build("sum")
        layer = module.layers[0]
        h = ctx.memory.data[5]
        expected = layer.w2(Tensor(np.concatenate([h, np.zeros(EMB)]))).data
        np.testing.assert_allclose(embed_sum(module, ctx, 5, 3.0), expected, atol=1e-15)

    def test_single_neighbour(self):
        ctx = context(toy_log())
        module = build("sum")
        layer = module.layers[0]
        row = np.concatenate([ctx.memory.data[4], [1.0, 0.0], ctx.time_encoder(np.array([0.5])).data[0]])
        agg = np.maximum(layer.w1(Tensor(row)).data, 0)
        expected = layer.w2(Tensor(np.concatenate([ctx.memory.data[3], agg]))).data
        np.testing.assert_allclose(embed_sum(module, ctx, 3, 2.0), expected, atol=1e-14)

    def test_two_neighbours_by_hand(self):
        """2-dim toy: every weight and input written out explicitly."""
        log = EventLog(edge_dim=1)
        log.add_interaction(0, 1, 1.0, [1.0])
        log.add_interaction(0, 2, 2.0, [-1.0])
        mem = np.array([[1.0, 0.0], [0.5, -1.0], [2.0, 1.0]])
        enc = TimeEncoder(1)
        enc.omega.data[:] = 0.0  # phi = cos(0) = 1 for every delta
        ctx = EmbedContext(Tensor(mem), np.zeros(3), TemporalAdjacency.from_log(log), enc)
        module = GraphSumEmbedding(EmbeddingConfig("sum", 1, 5), 2, 1, 1, 2, np.random.default_rng(0))
        layer = module.layers[0]
        layer.w1.weight.data[:] = [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]
        layer.w1.bias.data[:] = [0.0, -1.0]
        layer.w2.weight.data[:] = [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, -1.0]]
        layer.w2.bias.data[:] = [0.5, 0.0]
        # neighbour rows (h | e | phi): [0.5,-1,1,1] and [2,1,-1,1]
        # W1 rows: [0.5+1, -1+1-1] = [1.5,-1]; [2-1, 1+1-1] = [1, 1]; sum [2.5, 0] -> relu [2.5, 0]
        # W2 (h=[1,0] | [2.5,0]) + b = [1+2.5+0.5, 0-0] = [4, 0]
        np.testing.assert_allclose(embed_sum(module, ctx, 0, 3.0), [4.0, 0.0], atol=1e-15)


class TestProperties:
    @pytest.mark.parametrize("mode", ["attn", "sum"])
    def test_neighbour_sensitivity(self, mode):
        ctx = context(toy_log())
        module = build(mode)
        before = embed_attn(module, ctx, 0, 3.0)
        ctx.memory.data[2] += 0.5
        assert np.any(embed_attn(module, ctx, 0, 3.0) != before)

    def test_id_insensitive_to_neighbours(self):
        ctx = context(toy_log())
        before = embed_id(ctx, 0, 3.0)
        ctx.memory.data[2] += 0.5
        np.testing.assert_array_equal(embed_id(ctx, 0, 3.0), before)

    @pytest.mark.parametrize("mode,layers", [("attn", 1), ("attn", 2), ("sum", 2)])
    def test_future_blind(self, mode, layers):
        module = build(mode, layers=layers, neighbors=3)
        nodes, times = np.array([0, 1, 2, 4]), np.array([3.0, 3.0, 2.5, 3.0])
        a = module(context(toy_log()), nodes, times).data
        b = module(context(toy_log(extra_future=True)), nodes, times).data
        assert a.tobytes() == b.tobytes()

    def test_time_reduces_to_id_at_zero_delta(self, rng):
        module = TimeProjectionEmbedding(MEM)
        module.w.data[:] = rng.normal(size=MEM)
        ctx = context(toy_log())
        ctx.last_update[:] = 2.0
        np.testing.assert_array_equal(embed_time(module, ctx, 3, 2.0), embed_id(ctx, 3, 2.0))

    @pytest.mark.parametrize("mode", ["id", "time", "sum", "attn"])
    def test_deterministic(self, mode):
        a = build(mode, seed=3)(context(toy_log()), np.array([0, 2]), np.array([3.0, 3.0])).data
        b = build(mode, seed=3)(context(toy_log()), np.array([0, 2]), np.array([3.0, 3.0])).data
        assert a.tobytes() == b.tobytes()

    def test_attention_weights_sum_to_one(self):
        ctx = context(toy_log())
        module = build("attn")
        layer = module.layers[0]
        nb = ctx.graph.sample(np.array([0, 5]), np.array([3.0, 3.0]), 4)
        h = dn.take_rows(ctx.memory, np.array([0, 5]))
        h_nb = dn.take_rows(ctx.memory, nb.neighbors.ravel()).reshape(2, 4, MEM)
        feats = np.zeros((2, 4, EDGE))
        feats[nb.mask] = ctx.graph.edge_features[nb.ordinals[nb.mask]]
        C = dn.concat([h_nb, Tensor(feats), ctx.time_encoder(np.where(nb.mask, 3.0 - nb.timestamps, 0))], -1)
        q = dn.concat([h, ctx.time_encoder(np.zeros(2))], -1)
        _, w = dn.multi_head_attention(q, C, C, 2, nb.mask, layer.attention, return_weights=True)
        np.testing.assert_allclose(w.data[0].sum(axis=0), 1.0, atol=1e-12)
        assert np.all(w.data[0][~nb.mask[0]] == 0.0)
        assert np.all(w.data[1] == 0.0)

    def test_gradients_reach_memory_and_parameters(self):
        ctx = context(toy_log())
        ctx.memory.requires_grad = True
        ctx.memory.zero_grad()
        module = build("attn")
        dn.backward(dn.tsum(module(ctx, np.array([0]), np.array([3.0]))))
        assert np.any(ctx.memory.grad[[0, 1, 2]] != 0)
        assert np.all(ctx.memory.grad[[3, 4, 5]] == 0)
        assert all(p.grad is not None for p in module.parameters())

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingConfig("conv")
        with pytest.raises(ValueError):
            EmbeddingConfig("attn", layers=0)


def test_attention_embedding_class():
    assert isinstance(build("attn"), GraphAttentionEmbedding)
