"""The contract between a model backend and code that edits hidden states.

A backend calls every hook once per ``(layer, position)`` inside the hook's
declared scope, right after that layer has produced the residual-stream
vector for the position, and uses the returned vector downstream. Hooks get
the token ids seen so far (``context``), ending with the current position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Collection, Protocol, Sequence

import numpy as np


class Hook(Protocol):
    layers: Collection[int]
    window: tuple[int, int]

    def __call__(self, layer: int, pos: int, h: np.ndarray, context: Sequence[int]) -> np.ndarray: ...


@dataclass
class FunctionHook:
    fn: Callable[[int, int, np.ndarray, Sequence[int]], np.ndarray]
    layers: Collection[int]
    window: tuple[int, int] = (0, 2**62)

    def __call__(self, layer, pos, h, context):
        return self.fn(layer, pos, h, context)


@dataclass
class RecordingHook:
    """Pass-through hook that keeps a copy of every vector it sees."""

    layers: Collection[int]
    window: tuple[int, int] = (0, 2**62)
    seen: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __call__(self, layer, pos, h, context):
        self.seen[(layer, pos)] = h.copy()
        return h


def identity_hook(layers: Collection[int], window: tuple[int, int] = (0, 2**62)) -> FunctionHook:
    return FunctionHook(lambda layer, pos, h, ctx: h, layers, window)
