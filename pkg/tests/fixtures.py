"""Synthetic activation dumps with concept words planted at known positions."""

from __future__ import annotations

import numpy as np

from fluidreps.blocksworld import ACTIONS
from fluidreps.tracestore import ActivationDump


def planted_dump(words, length, d, layer=1, seed=0, vector_at=None):
    """Dump of ``length`` filler tokens with ``words`` planted as (start, concept, pieces).

    ``pieces`` are the token strings spelling the word. ``vector_at(pos, concept)``
    may set the hidden state of the word's tokens and its preceding token.
    Returns the dump and, per planted word, the expected matched positions.
    """
    rng = np.random.default_rng(seed)
    tokens = [" ."] * length
    H = rng.standard_normal((length, d)).astype(np.float32)
    expected = []
    for start, concept, pieces in words:
        tokens[start:start + len(pieces)] = pieces
        span = list(range(max(start - 1, 0), start + len(pieces)))
        expected.append((concept, span))
        if vector_at is not None:
            for p in span:
                H[p] = vector_at(p, concept)
    dump = ActivationDump("synthetic", layer, d, tokens, list(range(length)), {layer: H})
    return dump, expected


def cycling_dump(naming, length, d, spacing=25, seed=0, vector_at=None, concepts=ACTIONS):
    """Every ``spacing`` tokens one concept word, cycling through ``concepts``."""
    words = []
    for k, start in enumerate(range(spacing // 2, length - 2, spacing)):
        c = concepts[k % len(concepts)]
        words.append((start, c, [" " + naming.surface(c)]))
    return planted_dump(words, length, d, seed=seed, vector_at=vector_at)
