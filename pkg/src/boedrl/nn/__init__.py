from .gradcheck import finite_diff_check
from .layers import (
    AttentionPool,
    AttentionPoolSpec,
    Linear,
    Lstm,
    LstmSpec,
    Mlp,
    MlpSpec,
    Module,
    forward_attention_pool,
    forward_lstm_sequence,
    forward_mlp,
)
from .optim import Adam, AdamState, adam_step, soft_update
from .tensor import Tensor, as_tensor, backward, concat, parameter, stack

__all__ = [
    "Adam",
    "AdamState",
    "AttentionPool",
    "AttentionPoolSpec",
    "Linear",
    "Lstm",
    "LstmSpec",
    "Mlp",
    "MlpSpec",
    "Module",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "concat",
    "finite_diff_check",
    "forward_attention_pool",
    "forward_lstm_sequence",
    "forward_mlp",
    "parameter",
    "soft_update",
    "stack",
]
