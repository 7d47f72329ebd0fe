"""Parameter containers and basic layers built on :mod:`pqdt.autodiff`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .pointops import edgeconv


class Module:
    """Walks attributes to find parameters, buffers and child modules.

    Parameters are tensors with ``requires_grad``; buffers are tensors
    without. Both are serialized by ``state_dict``.
    """

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, ad.Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, ad.Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_tensors(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{full}.{i}.")

    def named_parameters(self) -> Iterator[tuple[str, ad.Tensor]]:
        return ((n, t) for n, t in self.named_tensors() if t.requires_grad)

    def parameters(self) -> list[ad.Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, t in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ad.ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {t.shape}")
            t.data = value.copy()


def param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> ad.Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = param(rng, (d_in, d_out), d_in)
        self.bias = param(rng, (d_out,), d_in) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise ad.ShapeError(f"Linear: input width {x.shape[-1]} != {self.d_in} (shape {x.shape})")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = ad.Tensor(np.ones(dim), requires_grad=True)
        self.shift = ad.Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.layer_norm(x) * self.gain + self.shift


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator, final_act: bool = False):
        if len(dims) < 2:
            raise ValueError(f"MLP needs at least input and output widths, got {dims}")
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.final_act = final_act

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_act:
                x = ad.relu(x)
        return x


class EdgeConv(Module):
    """EdgeConv with a single Linear + ReLU edge function."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        self.mlp = MLP([2 * c_in, c_out], rng, final_act=True)
        self.k = k

    def __call__(self, features: ad.Tensor, points: np.ndarray, downsample_idx=None) -> ad.Tensor:
        if downsample_idx is None:
            downsample_idx = np.arange(len(points))
        k = min(self.k, len(points))
        return edgeconv(features, points, downsample_idx, k, self.mlp)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.norm = LayerNorm(dim)
        self.mlp = MLP([dim, hidden, dim], rng)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return x + self.mlp(self.norm(x))
