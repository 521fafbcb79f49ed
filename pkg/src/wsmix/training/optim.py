from __future__ import annotations

import numpy as np

from ..numerics import Parameter


class GroupingError(ValueError):
    """A trainable parameter is in no optimizer group, or in several."""


class Adam:
    """Adam with bias correction and one learning rate per named parameter group."""

    def __init__(
        self,
        groups: dict[str, tuple[list[Parameter], float]],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        seen: dict[int, str] = {}
        for name, (params, lr) in groups.items():
            if lr <= 0:
                raise ValueError(f"learning rate of group {name!r} must be positive")
            for p in params:
                if id(p) in seen:
                    raise GroupingError(f"{p.name or p!r} is in groups {seen[id(p)]!r} and {name!r}")
                seen[id(p)] = name
        self.groups = groups
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.state = {id(p): (np.zeros_like(p.data), np.zeros_like(p.data)) for g in groups.values() for p in g[0]}

    def check_covers(self, params: list[Parameter]) -> None:
        missing = [p.name for p in params if id(p) not in self.state]
        if missing:
            raise GroupingError(f"parameters without an optimizer group: {missing}")

    def zero_grad(self) -> None:
        for params, _ in self.groups.values():
            for p in params:
                p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for params, lr in self.groups.values():
            for p in params:
                m, v = self.state[id(p)]
                g = p.grad
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
