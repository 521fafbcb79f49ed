"""Parameters, a minimal module tree, and the standard layers built on it."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, dropout, gelu, layer_norm, linear


class Parameter(Tensor):
    """A leaf tensor owned by a module, with a gradient buffer and a trainable flag."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", trainable: bool = True) -> None:
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def value(self) -> Tensor:
        return self

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Module:
    """Container of Parameters and child Modules, discovered by attribute walk."""

    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.trainable = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def assign_names(self, prefix: str = "") -> None:
        """Stamp each Parameter with its dotted attribute path."""
        for name, p in self.named_parameters(prefix):
            p.name = name

    def num_parameters(self, trainable_only: bool = False) -> int:
        return sum(p.size for p in self.parameters() if p.trainable or not trainable_only)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5) -> None:
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    """Inverted dropout with its own seeded generator."""

    def __init__(self, rate: float, rng: np.random.Generator) -> None:
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.rng, self.training)


class FeedForward(Module):
    """affine -> GeLU, optionally followed by dropout."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, rate: float = 0.0) -> None:
        self.proj = Linear(d_in, d_out, rng)
        self.drop = Dropout(rate, np.random.default_rng(rng.integers(2**63))) if rate > 0 else None

    def __call__(self, x: Tensor) -> Tensor:
        y = gelu(self.proj(x))
        return self.drop(y) if self.drop is not None else y
