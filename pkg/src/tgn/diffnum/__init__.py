"""Dense differentiable numerics: tensors, kernels, layers and Adam."""

from .nn import (
    GRUCell,
    Linear,
    MLP,
    Module,
    MultiHeadAttention,
    RNNCell,
    bce_with_logits,
    gru_cell,
    linear,
    multi_head_attention,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cos,
    div,
    dropout,
    exp,
    get_default_dtype,
    getitem,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    scale,
    scatter_rows,
    set_default_dtype,
    sigmoid,
    softmax,
    sub,
    take_rows,
    tanh,
    transpose,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
