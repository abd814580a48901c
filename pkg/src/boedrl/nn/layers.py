from __future__ import annotations

import copy
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np

from boedrl.errors import DimensionError

from .tensor import Array, Tensor, parameter, stack

Activation = Literal["relu", "tanh", "sigmoid", "identity"]
Init = Literal["he", "zeros", "identity"]


def activate(x: Tensor, kind: Activation) -> Tensor:
    if kind == "relu":
        return x.relu()
    if kind == "tanh":
        return x.tanh()
    if kind == "sigmoid":
        return x.sigmoid()
    return x


def he_uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Array:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Parameter container; attributes holding tensors or sub-modules are discovered in order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, list | tuple):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> dict[str, Array]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, Array]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            raise DimensionError(f"State mismatch: missing={missing} unexpected={unexpected}")
        for name, tensor in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise DimensionError(f"{name}: expected {tensor.shape}, got {value.shape}")
            tensor.data = value.copy()

    def clone(self) -> Module:
        twin = copy.deepcopy(self)
        twin.zero_grad()
        return twin


class Linear(Module):
    def __init__(
        self, in_dim: int, out_dim: int, rng: np.random.Generator, init: Init = "he"
    ) -> None:
        self.in_dim = in_dim
        self.out_dim = out_dim
        if init == "he":
            weight = he_uniform(rng, in_dim, (in_dim, out_dim))
        elif init == "identity":
            if in_dim != out_dim:
                raise DimensionError("Identity initialization needs a square layer")
            weight = np.eye(in_dim)
        else:
            weight = np.zeros((in_dim, out_dim))
        self.weight = parameter(weight, name="weight")
        self.bias = parameter(np.zeros(out_dim), name="bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"Linear expects last dim {self.in_dim}, got {x.shape}")
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.in_dim) if x.ndim != 2 else x
        out = flat @ self.weight + self.bias
        return out.reshape(*lead, self.out_dim) if x.ndim != 2 else out


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (256, 256)
    hidden_activation: Activation = "relu"
    output_activation: Activation = "identity"

    @property
    def activations(self) -> tuple[Activation, ...]:
        return (self.hidden_activation,) * len(self.hidden_dims) + (self.output_activation,)

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:], strict=True))


class Mlp(Module):
    def __init__(self, spec: MlpSpec, rng: np.random.Generator, init: Init = "he") -> None:
        self.spec = spec
        self.layers = [Linear(i, o, rng, init=init) for i, o in spec.layer_dims]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.spec.input_dim:
            raise DimensionError(
                f"MLP expects input dim {self.spec.input_dim}, got shape {x.shape}"
            )
        for layer, kind in zip(self.layers, self.spec.activations, strict=True):
            x = activate(layer(x), kind)
        return x


def forward_mlp(net: Mlp, x: Tensor) -> Tensor:
    return net(x)


@dataclass(frozen=True)
class LstmSpec:
    input_dim: int
    hidden_dim: int


class Lstm(Module):
    """Single LSTM cell unrolled over a sequence; gate blocks are ordered i, f, g, o."""

    def __init__(self, spec: LstmSpec, rng: np.random.Generator) -> None:
        self.spec = spec
        h = spec.hidden_dim
        bound = 1.0 / np.sqrt(h)
        self.w_input = parameter(rng.uniform(-bound, bound, (spec.input_dim, 4 * h)))
        self.w_hidden = parameter(rng.uniform(-bound, bound, (h, 4 * h)))
        self.bias = parameter(np.zeros(4 * h))

    def step(self, x: Tensor, hidden: Tensor, cell: Tensor) -> tuple[Tensor, Tensor]:
        h = self.spec.hidden_dim
        z = x @ self.w_input + hidden @ self.w_hidden + self.bias
        i = z[..., 0:h].sigmoid()
        f = z[..., h : 2 * h].sigmoid()
        g = z[..., 2 * h : 3 * h].tanh()
        o = z[..., 3 * h : 4 * h].sigmoid()
        cell = f * cell + i * g
        return o * cell.tanh(), cell

    def __call__(self, sequence: Sequence[Tensor], batch_shape: tuple[int, ...] = ()) -> Tensor:
        dims = {x.shape[-1] for x in sequence}
        if dims and dims != {self.spec.input_dim}:
            raise DimensionError(f"LSTM expects input dim {self.spec.input_dim}, got {dims}")
        if sequence:
            batch_shape = sequence[0].shape[:-1]
        hidden = Tensor(np.zeros((*batch_shape, self.spec.hidden_dim)))
        cell = Tensor(np.zeros((*batch_shape, self.spec.hidden_dim)))
        for x in sequence:
            hidden, cell = self.step(x, hidden, cell)
        return hidden


def forward_lstm_sequence(
    net: Lstm, sequence: Sequence[Tensor], batch_shape: tuple[int, ...] = ()
) -> Tensor:
    return net(sequence, batch_shape)


@dataclass(frozen=True)
class AttentionPoolSpec:
    encoder: MlpSpec
    attention: MlpSpec

    def __post_init__(self) -> None:
        if self.attention.input_dim != self.encoder.input_dim or self.attention.output_dim != 1:
            raise DimensionError("Attention head must read the element dim and emit one logit")

    @classmethod
    def build(
        cls, input_dim: int, output_dim: int, hidden_dims: tuple[int, ...] = (32,)
    ) -> AttentionPoolSpec:
        return cls(
            encoder=MlpSpec(input_dim, output_dim, hidden_dims=hidden_dims),
            attention=MlpSpec(input_dim, 1, hidden_dims=hidden_dims),
        )

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def output_dim(self) -> int:
        return self.encoder.output_dim


class AttentionPool(Module):
    """Single-head attention sum-pooling: ``sum_i softmax(a(x_i)) * e(x_i)`` over the set axis."""

    def __init__(self, spec: AttentionPoolSpec, rng: np.random.Generator) -> None:
        self.spec = spec
        self.encoder = Mlp(spec.encoder, rng)
        self.attention = Mlp(spec.attention, rng)

    def pool(self, elements: Tensor) -> Tensor:
        """Pool a ``(..., n, input_dim)`` tensor over its second-to-last axis."""
        if elements.shape[-1] != self.spec.input_dim:
            raise DimensionError(
                f"Attention pool expects element dim {self.spec.input_dim}, got {elements.shape}"
            )
        if elements.shape[-2] == 0:
            return Tensor(np.zeros((*elements.shape[:-2], self.spec.output_dim)))
        values = self.encoder(elements)
        weights = self.attention(elements).softmax(axis=-2)
        return (weights * values).sum(axis=-2)

    def __call__(self, elements: Sequence[Tensor], batch_shape: tuple[int, ...] = ()) -> Tensor:
        if not elements:
            return Tensor(np.zeros((*batch_shape, self.spec.output_dim)))
        dims = {x.shape[-1] for x in elements}
        if len(dims) != 1:
            raise DimensionError(f"Set elements disagree on dimension: {sorted(dims)}")
        return self.pool(stack(list(elements), axis=-2))


def forward_attention_pool(
    net: AttentionPool, elements: Sequence[Tensor], batch_shape: tuple[int, ...] = ()
) -> Tensor:
    return net(elements, batch_shape)


__all__ = [
    "AttentionPool",
    "AttentionPoolSpec",
    "Linear",
    "Lstm",
    "LstmSpec",
    "Mlp",
    "MlpSpec",
    "Module",
    "activate",
    "forward_attention_pool",
    "forward_lstm_sequence",
    "forward_mlp",
]
