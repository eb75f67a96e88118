"""Layers and losses built on the tensor kernels."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, size=(fan_out, fan_in)))


class Module:
    """Container that finds parameters and submodules by attribute walk."""

    training = True

    def named_parameters(self, prefix: str = "", _seen=None):
        # shared submodules are reported once, under their first path
        seen = set() if _seen is None else _seen
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                if id(value) not in seen:
                    seen.add(id(value))
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) ^ set(state)
        if missing:
            raise KeyError(f"state dict keys differ: {sorted(missing)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)


def linear(x, W, b=None) -> Tensor:
    """``x @ W.T + b`` with ``b`` broadcast over rows."""
    x, W = T.as_tensor(x), T.as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: shape mismatch {x.shape} vs {W.shape}")
    out = T.matmul(x, T.transpose(W))
    if b is not None:
        b = T.as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} vs weight {W.shape}")
        out = out + b
    return out


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = glorot(rng, out_dim, in_dim)
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


class MLP(Module):
    """Two-layer perceptron with a ReLU between the layers."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim, rng)

    def __call__(self, x) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class GRUCell(Module):
    """Gated recurrent unit in the convention ``s' = (1 - z) * s + z * c``.

    Gates: ``r = sigmoid(W_r m + U_r s + b_r)``, ``z = sigmoid(W_z m + U_z s + b_z)``,
    candidate ``c = tanh(W_c m + U_c (r * s) + b_c)``.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        k = 1.0 / math.sqrt(hidden_dim)
        u = lambda *shape: parameter(rng.uniform(-k, k, size=shape))  # noqa: E731
        self.W_r, self.U_r, self.b_r = u(hidden_dim, input_dim), u(hidden_dim, hidden_dim), u(hidden_dim)
        self.W_z, self.U_z, self.b_z = u(hidden_dim, input_dim), u(hidden_dim, hidden_dim), u(hidden_dim)
        self.W_c, self.U_c, self.b_c = u(hidden_dim, input_dim), u(hidden_dim, hidden_dim), u(hidden_dim)

    def __call__(self, m, s_prev) -> Tensor:
        return gru_cell(m, s_prev, self)


def gru_cell(m, s_prev, params: GRUCell) -> Tensor:
    m, s_prev = T.as_tensor(m), T.as_tensor(s_prev)
    if m.shape[-1] != params.input_dim or s_prev.shape[-1] != params.hidden_dim:
        raise ValueError(
            f"gru_cell: shape mismatch message {m.shape} / memory {s_prev.shape} "
            f"for cell ({params.input_dim} -> {params.hidden_dim})"
        )
    r = T.sigmoid(linear(m, params.W_r) + linear(s_prev, params.U_r, params.b_r))
    z = T.sigmoid(linear(m, params.W_z) + linear(s_prev, params.U_z, params.b_z))
    c = T.tanh(linear(m, params.W_c) + linear(r * s_prev, params.U_c, params.b_c))
    return (1.0 - z) * s_prev + z * c


class RNNCell(Module):
    """Vanilla recurrent cell ``s' = tanh(W m + U s + b)``."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        k = 1.0 / math.sqrt(hidden_dim)
        self.W = parameter(rng.uniform(-k, k, size=(hidden_dim, input_dim)))
        self.U = parameter(rng.uniform(-k, k, size=(hidden_dim, hidden_dim)))
        self.b = parameter(rng.uniform(-k, k, size=hidden_dim))

    def __call__(self, m, s_prev) -> Tensor:
        m, s_prev = T.as_tensor(m), T.as_tensor(s_prev)
        if m.shape[-1] != self.input_dim or s_prev.shape[-1] != self.hidden_dim:
            raise ValueError(f"rnn_cell: shape mismatch message {m.shape} / memory {s_prev.shape}")
        return T.tanh(linear(m, self.W) + linear(s_prev, self.U, self.b))


class MultiHeadAttention(Module):
    """Query/key/value projections plus output projection.

    The model width equals the query width; keys and values share one input
    matrix whose width may differ from the query's.
    """

    def __init__(self, query_dim: int, key_dim: int, heads: int, rng: np.random.Generator,
                 dropout: float = 0.0):
        if query_dim % heads:
            raise ValueError(f"multi_head_attention: width {query_dim} not divisible by {heads} heads")
        self.heads = heads
        self.dropout = dropout
        self.w_q = Linear(query_dim, query_dim, rng)
        self.w_k = Linear(key_dim, query_dim, rng)
        self.w_v = Linear(key_dim, query_dim, rng)
        self.w_o = Linear(query_dim, query_dim, rng)
        self.rng = rng

    def __call__(self, q, kv, mask) -> Tensor:
        return multi_head_attention(q, kv, kv, self.heads, mask, self)


def multi_head_attention(q, K, V, heads: int, mask, params: MultiHeadAttention,
                         return_weights: bool = False):
    """Scaled dot-product attention over a padded neighbour set.

    ``q`` is (Q, dq), ``K``/``V`` are (Q, k, dk) and ``mask`` (Q, k) marks the
    valid rows.  Queries without any valid row get a zero output.  Unbatched
    inputs (dq,), (k, dk), (k,) are accepted too.
    """
    q, K, V = T.as_tensor(q), T.as_tensor(K), T.as_tensor(V)
    unbatched = q.ndim == 1
    if unbatched:
        q, K, V = T.reshape(q, (1,) + q.shape), T.reshape(K, (1,) + K.shape), T.reshape(V, (1,) + V.shape)
        mask = np.asarray(mask, dtype=bool)[None]
    mask = np.asarray(mask, dtype=bool)
    if K.shape[:2] != V.shape[:2] or K.shape[:2] != mask.shape or q.shape[0] != K.shape[0]:
        raise ValueError(f"multi_head_attention: shape mismatch keys {K.shape} vs values {V.shape}")
    width = params.w_q.out_dim
    if width % heads:
        raise ValueError(f"multi_head_attention: width {width} not divisible by {heads} heads")
    n_q, k = K.shape[0], K.shape[1]
    dh = width // heads

    Q = T.reshape(params.w_q(q), (n_q, 1, heads, dh))
    Kp = T.reshape(params.w_k(K), (n_q, k, heads, dh))
    Vp = T.reshape(params.w_v(V), (n_q, k, heads, dh))
    scores = T.scale(T.tsum(Q * Kp, axis=-1), 1.0 / math.sqrt(dh))  # (Q, k, H)
    weights = T.softmax(scores, axis=1, mask=mask[:, :, None])
    weights = T.dropout(weights, params.dropout, params.rng, params.training)
    ctx = T.tsum(T.reshape(weights, (n_q, k, heads, 1)) * Vp, axis=1)  # (Q, H, dh)
    out = params.w_o(T.reshape(ctx, (n_q, width)))
    has_any = mask.any(axis=1, keepdims=True).astype(out.dtype)
    if not has_any.all():
        out = out * has_any
    if unbatched:
        out = T.reshape(out, (width,))
    return (out, weights) if return_weights else out


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy, ``max(x,0) - x*y + log(1 + exp(-|x|))``."""
    logits = T.as_tensor(logits)
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ValueError(f"bce_with_logits: shape mismatch {logits.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_with_logits: labels must be 0 or 1")
    x = logits.data
    n = x.size
    loss = np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x))))
    p = T._sigmoid(x)

    def bw(g):
        return (g * (p - y) / n,)

    return T._record(np.asarray(loss, dtype=x.dtype), (logits,), bw, "bce_with_logits")
