"""A small deterministic decoder-only transformer with hidden-state hooks.

Weights are random and fixed by a seed; nothing is trained. The model exists
so every intervention path can run end to end without an external model.
Tokens are bytes (0..255) plus BOS and EOS.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hooks import Hook
from .tracestore import ActivationDump

BOS = 256
EOS = 257
VOCAB_SIZE = 258
CAPTURE_POINT = "residual stream after each block (layer 0 = embeddings)"

_F = np.float32
_CHUNK = 256


class ContextOverflow(ValueError):
    pass


@dataclass(frozen=True)
class ToyConfig:
    layers: int = 8
    hidden_dim: int = 64
    heads: int = 4
    context: int = 4096
    seed: int = 0

    def __post_init__(self):
        for name in ("layers", "hidden_dim", "heads", "context"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("layers", "hidden_dim", "heads", "context", "seed")}


@dataclass
class ForwardRecord:
    """Hidden states of shape ``[layers + 1, tokens, d]``; index 0 holds embeddings."""

    hidden: np.ndarray
    token_ids: list[int]

    def layer(self, L: int) -> np.ndarray:
        return self.hidden[L]

    def to_dump(self, model_name: str = "toy", layers: Sequence[int] | None = None) -> ActivationDump:
        keep = range(self.hidden.shape[0]) if layers is None else layers
        return ActivationDump(
            model_name=model_name,
            num_layers=self.hidden.shape[0] - 1,
            hidden_dim=self.hidden.shape[2],
            tokens=[token_str(t) for t in self.token_ids],
            token_ids=self.token_ids,
            layers={L: self.hidden[L] for L in keep},
            capture_point=CAPTURE_POINT,
        )


@dataclass
class Generation:
    token_ids: list[int]
    prompt_len: int
    record: ForwardRecord

    @property
    def new_ids(self) -> list[int]:
        return self.token_ids[self.prompt_len:]

    @property
    def text(self) -> str:
        return decode(self.new_ids)


def encode(text: str, bos: bool = True) -> list[int]:
    return ([BOS] if bos else []) + list(text.encode("utf-8"))


def decode(ids: Sequence[int]) -> str:
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


def token_str(i: int) -> str:
    if i == BOS:
        return "<bos>"
    if i == EOS:
        return "<eos>"
    return bytes([i]).decode("latin-1")


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + _F(1e-5))


def _gelu(x: np.ndarray) -> np.ndarray:
    return _F(0.5) * x * (_F(1) + np.tanh(_F(0.7978845608) * (x + _F(0.044715) * x**3)))


class ToyTransformer:
    def __init__(self, config: ToyConfig = ToyConfig()):
        self.config = config
        c = config
        d = c.hidden_dim
        rng = np.random.default_rng(c.seed)

        def w(*shape, scale):
            return (rng.standard_normal(shape) * scale).astype(_F)

        self.embed = w(VOCAB_SIZE, d, scale=1.0)
        self.pos = w(c.context, d, scale=0.5)
        self.blocks = []
        for _ in range(c.layers):
            self.blocks.append(
                dict(
                    qkv=w(d, 3 * d, scale=d**-0.5),
                    out=w(d, d, scale=0.5 * d**-0.5),
                    up=w(d, 4 * d, scale=d**-0.5),
                    down=w(4 * d, d, scale=0.5 * (4 * d) ** -0.5),
                )
            )
        self.unembed = w(d, VOCAB_SIZE, scale=d**-0.5)

    @property
    def num_layers(self) -> int:
        return self.config.layers

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    @property
    def max_length(self) -> int:
        return self.config.context

    encode = staticmethod(encode)
    decode = staticmethod(decode)
    token_str = staticmethod(token_str)

    # -- core ------------------------------------------------------------------

    def _new_cache(self) -> list[list[np.ndarray]]:
        c = self.config
        shape = (c.heads, c.context, c.hidden_dim // c.heads)
        return [[np.zeros(shape, _F), np.zeros(shape, _F)] for _ in range(c.layers)]

    def _apply_hooks(self, layer, x, start, ids, hooks):
        for hook in hooks:
            if layer not in hook.layers:
                continue
            lo, hi = hook.window
            for pos in range(max(lo, start), min(hi, start + len(x))):
                out = hook(layer, pos, x[pos - start].copy(), ids[: pos + 1])
                x[pos - start] = np.asarray(out, dtype=_F)
        return x

    def _run(self, ids: Sequence[int], start: int, cache, hooks: Sequence[Hook]) -> tuple[np.ndarray, np.ndarray]:
        """Process positions ``start .. len(ids)-1``, extending ``cache``.

        Returns logits ``[n, V]`` and hidden states ``[layers+1, n, d]`` for
        the processed positions.
        """
        c = self.config
        n = len(ids) - start
        H, dh = c.heads, c.hidden_dim // c.heads
        end = start + n
        new = np.asarray(ids[start:], dtype=np.int64)
        x = self.embed[new] + self.pos[start:end]
        rec = np.empty((c.layers + 1, n, c.hidden_dim), _F)
        x = self._apply_hooks(0, x, start, ids, hooks)
        rec[0] = x
        scale = _F(dh**-0.5)
        for li, blk in enumerate(self.blocks, start=1):
            qkv = _layer_norm(x) @ blk["qkv"]
            q, k, v = (qkv[:, i * c.hidden_dim:(i + 1) * c.hidden_dim].reshape(n, H, dh).transpose(1, 0, 2) for i in range(3))
            K, V = cache[li - 1]
            K[:, start:end] = k
            V[:, start:end] = v
            att = np.empty((H, n, dh), _F)
            for s in range(0, n, _CHUNK):
                e = min(n, s + _CHUNK)
                qpos = np.arange(start + s, start + e)
                keys = start + e
                scores = (q[:, s:e] @ K[:, :keys].transpose(0, 2, 1)) * scale
                mask = np.arange(keys)[None, :] > qpos[:, None]
                scores[:, mask] = -np.inf
                scores -= scores.max(-1, keepdims=True)
                p = np.exp(scores)
                p /= p.sum(-1, keepdims=True)
                att[:, s:e] = p @ V[:, :keys]
            x = x + att.transpose(1, 0, 2).reshape(n, c.hidden_dim) @ blk["out"]
            x = x + _gelu(_layer_norm(x) @ blk["up"]) @ blk["down"]
            x = self._apply_hooks(li, x, start, ids, hooks)
            rec[li] = x
        logits = _layer_norm(x) @ self.unembed
        return logits, rec

    # -- public ----------------------------------------------------------------

    def forward(self, ids: Sequence[int], hooks: Sequence[Hook] = ()) -> tuple[np.ndarray, ForwardRecord]:
        ids = list(ids)
        if len(ids) > self.config.context:
            raise ContextOverflow(f"{len(ids)} tokens exceed the context limit {self.config.context}")
        if not ids:
            raise ValueError("forward needs at least one token")
        logits, rec = self._run(ids, 0, self._new_cache(), hooks)
        return logits, ForwardRecord(rec, ids)

    def generate_greedy(
        self, prompt: str | Sequence[int], max_new: int, hooks: Sequence[Hook] = ()
    ) -> Generation:
        """Argmax decoding; stops at EOS, after ``max_new`` tokens, or at the context limit."""
        ids = encode(prompt) if isinstance(prompt, str) else list(prompt)
        if len(ids) > self.config.context:
            raise ContextOverflow(f"{len(ids)} tokens exceed the context limit {self.config.context}")
        prompt_len = len(ids)
        cache = self._new_cache()
        logits, rec = self._run(ids, 0, cache, hooks)
        recs = [rec]
        produced = 0
        while produced < max_new and len(ids) < self.config.context:
            row = logits[-1].copy()
            row[BOS] = -np.inf
            nxt = int(np.argmax(row))
            ids.append(nxt)
            produced += 1
            if nxt == EOS:
                break
            if produced < max_new and len(ids) < self.config.context:
                logits, rec = self._run(ids, len(ids) - 1, cache, hooks)
                recs.append(rec)
        hidden = np.concatenate(recs, axis=1)
        return Generation(ids, prompt_len, ForwardRecord(hidden, ids[: hidden.shape[1]]))
