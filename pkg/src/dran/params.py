"""Trainable-parameter container, addressable by hierarchical path."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class DranParams:
    """Ordered mapping of dotted path -> trainable Tensor.

    Iteration order is creation order, which is fixed per configuration,
    so seeded initialization and checkpoints are reproducible.
    """

    def __init__(self):
        self._store: dict[str, Tensor] = {}

    def add(self, path: str, value: np.ndarray) -> Tensor:
        if path in self._store:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = Tensor(value, requires_grad=True)
        self._store[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._store[path]

    def __contains__(self, path: str) -> bool:
        return path in self._store

    def __len__(self) -> int:
        return len(self._store)

    def paths(self) -> list[str]:
        return list(self._store)

    def items(self):
        return self._store.items()

    def tensors(self):
        return self._store.values()

    def count(self) -> int:
        return sum(t.size for t in self._store.values())

    def zero_grad(self) -> None:
        for t in self._store.values():
            t.grad = None

    def copy(self) -> "DranParams":
        out = DranParams()
        for path, t in self._store.items():
            out.add(path, t.data.copy())
        return out

    def load_values(self, other: "DranParams") -> None:
        """Copy values from a params object with the same paths/shapes."""
        if other.paths() != self.paths():
            raise ValueError("parameter path sets differ")
        for path, t in self._store.items():
            src = other[path]
            if src.shape != t.shape:
                raise ValueError(f"shape mismatch for {path}: {src.shape} vs {t.shape}")
            t.data = src.data.copy()
