"""Interventions on hidden states at concept tokens.

Three edits are supported, all applied through the backend hook contract:

* steer   -- interpolate toward a concept vector, then restore the original norm
* replace -- overwrite the hidden state with the concept vector (symbolic patching)
* subtract -- remove the concept vector (negative steering)

A concept site is a token position belonging to an occurrence of the
concept's surface word that lies inside the intervention window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .hooks import Hook
from .replab import CONCEPT_CLASSES, IncompleteConceptSet, concept_class
from .tracestore import match_concept

IN_NAMING = "in-naming"
CROSS_NAMING = "cross-naming"
RANDOM = "random-matched-norm"
SYMBOLIC = "symbolic"
SHUFFLED = "shuffled"
NEGATIVE = "negative"
VECTOR_KINDS = (IN_NAMING, CROSS_NAMING, RANDOM, SYMBOLIC, SHUFFLED, NEGATIVE)

DEFAULT_SCALE = 2 / 3
STEERING_WINDOW = (1500, 2500)
STEERING_LAYERS = (1, 5, 10, 20, 30, 40, 50, 60)
STEERING_VECTOR_TIMESTAMP = 7000
SCALE_SWEEP = (1 / 2, 2 / 3, 4 / 5)
PATCHING_WINDOW = (2000, 4000)
PATCHING_SCALES = (10.0, 20.0)
NEGATIVE_WINDOW = (2000, 4000)
NEGATIVE_TIMESTAMP = 4000
NEGATIVE_START_LAYER = 10
NEGATIVE_END_LAYERS = (20, 30)

STEER, REPLACE, SUBTRACT = "steer", "replace", "subtract"


class DegenerateMix(ValueError):
    pass


class MissingConcept(KeyError):
    pass


class WindowBeyondTrace(ValueError):
    pass


def steer_update(h: np.ndarray, v: np.ndarray, s: float) -> np.ndarray:
    """``s*h + (1-s)*v``, rescaled to the norm of ``h``."""
    h = np.asarray(h)
    mixed = s * h + (1 - s) * np.asarray(v, dtype=h.dtype)
    n_mixed = np.linalg.norm(mixed)
    if n_mixed == 0:
        raise DegenerateMix("interpolated vector is zero")
    return (mixed * (np.linalg.norm(h) / n_mixed)).astype(h.dtype, copy=False)


# ---- vector tables ----------------------------------------------------------

def _as_table(reps: Mapping) -> dict[str, np.ndarray]:
    return {c: np.asarray(getattr(r, "vector", r), dtype=np.float64) for c, r in reps.items()}


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of ``range(n)`` with no fixed point (n >= 2)."""
    if n < 2:
        raise ValueError("a derangement needs at least two elements")
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


def shuffle_table(
    table: Mapping[str, np.ndarray],
    seed: int | None = None,
    permutation: Mapping[str, str] | None = None,
) -> dict[str, np.ndarray]:
    """Reassign vectors among concepts of the same class.

    Without an explicit ``permutation`` (concept -> concept whose vector it
    receives) a seeded derangement is drawn independently within each class.
    """
    if permutation is None:
        permutation = draw_permutation(list(table), seed)
    return {c: np.asarray(table[permutation[c]]).copy() for c in table}


def random_table(norm_reference: Mapping, seed: int, dim: int | None = None) -> dict[str, np.ndarray]:
    ref = _as_table(norm_reference)
    rng = np.random.default_rng(seed)
    out = {}
    for c in sorted(ref):
        d = dim or ref[c].shape[0]
        g = rng.standard_normal(d)
        out[c] = g * (np.linalg.norm(ref[c]) / np.linalg.norm(g))
    return out


def build_symbolic(cross_naming: Mapping, s: float) -> dict[str, np.ndarray]:
    """Class mean plus ``s`` times each concept's cross-naming vector, per class."""
    table = _as_table(cross_naming)
    out = {}
    by_class: dict[str, list[str]] = {}
    for c in table:
        by_class.setdefault(concept_class(c), []).append(c)
    for cls, members in by_class.items():
        missing = set(CONCEPT_CLASSES[cls]) - set(members)
        if missing:
            raise IncompleteConceptSet(f"{cls}: missing {sorted(missing)}")
        mean = np.mean([table[c] for c in CONCEPT_CLASSES[cls]], axis=0)
        for c in CONCEPT_CLASSES[cls]:
            out[c] = mean + s * table[c]
    return out


def make_vectors(
    kind: str,
    reps: Mapping | None = None,
    *,
    seed: int | None = None,
    norm_reference: Mapping | None = None,
    concepts: Sequence[str] | None = None,
    scale: float = 1.0,
) -> dict[str, np.ndarray]:
    """Concept -> vector table for one intervention kind.

    ``reps`` holds centered in-naming vectors for the in-naming, shuffled and
    negative kinds, and cross-naming vectors for the cross-naming and
    symbolic kinds. Random vectors are seeded Gaussians rescaled to the
    norms in ``norm_reference`` (the in-naming table).
    """
    if kind not in VECTOR_KINDS:
        raise ValueError(f"unknown vector kind {kind!r}")
    if kind == RANDOM:
        if norm_reference is None or seed is None:
            raise ValueError("random vectors need a seed and a norm reference")
        ref = _as_table(norm_reference)
        table = random_table(ref, seed)
    else:
        if reps is None:
            raise ValueError(f"{kind} vectors need representations")
        table = _as_table(reps)
        if kind == SHUFFLED:
            table = shuffle_table(table, seed)
        elif kind == SYMBOLIC:
            table = build_symbolic(table, scale)
    if concepts is not None:
        missing = [c for c in concepts if c not in table]
        if missing:
            raise MissingConcept(f"no vector for {missing}")
        table = {c: table[c] for c in concepts}
    return table


# ---- specs ------------------------------------------------------------------

@dataclass
class SteeringSpec:
    vector_kind: str
    scale: float = DEFAULT_SCALE
    window: tuple[int, int] = STEERING_WINDOW
    layers: tuple[int, ...] = (20,)
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.vector_kind not in VECTOR_KINDS:
            raise ValueError(f"unknown vector kind {self.vector_kind!r}")
        self.window = (int(self.window[0]), int(self.window[1]))
        if not 0 <= self.window[0] < self.window[1]:
            raise ValueError(f"window must satisfy 0 <= start < end, got {self.window}")
        self.layers = tuple(sorted(int(L) for L in self.layers))
        if not self.layers:
            raise ValueError("at least one layer is required")
        self.vectors = {c: np.asarray(v, dtype=np.float64) for c, v in self.vectors.items()}
        dims = {v.shape for v in self.vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"vectors have mixed shapes {dims}")

    def check_backend(self, backend) -> None:
        for v in self.vectors.values():
            if v.shape != (backend.hidden_dim,):
                raise ValueError(f"vector dim {v.shape} != backend hidden dim {backend.hidden_dim}")
        if max(self.layers) > backend.num_layers:
            raise ValueError(f"layer {max(self.layers)} beyond backend depth {backend.num_layers}")

    def to_json(self) -> dict:
        return {
            "vector_kind": self.vector_kind,
            "scale": self.scale,
            "window": list(self.window),
            "layers": list(self.layers),
            "seed": self.seed,
            "vectors": {c: v.tolist() for c, v in self.vectors.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> SteeringSpec:
        return cls(
            vector_kind=obj["vector_kind"],
            scale=float(obj.get("scale", DEFAULT_SCALE)),
            window=tuple(obj.get("window", STEERING_WINDOW)),
            layers=tuple(obj.get("layers", (20,))),
            vectors={c: np.asarray(v) for c, v in obj.get("vectors", {}).items()},
            seed=obj.get("seed"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---- the hook ----------------------------------------------------------------

class Backend(Protocol):
    num_layers: int
    hidden_dim: int
    max_length: int

    def token_str(self, token_id: int) -> str: ...

    def generate_greedy(self, prompt, max_new: int, hooks: Sequence[Hook] = ()): ...


@dataclass(frozen=True)
class Touch:
    layer: int
    pos: int
    concept: str


def concept_sites(
    tokens: Sequence[str],
    surface_words: Mapping[str, str],
    window: tuple[int, int],
    include_preceding: bool = True,
) -> dict[int, str]:
    """Position -> concept for every concept occurrence inside ``window``.

    Occurrences of different concepts are matched independently; where two
    would claim one position the leftmost-starting occurrence keeps it.
    Preceding tokens outside the window are not sites.
    """
    lo, hi = window[0], min(window[1], len(tokens))
    if lo >= hi:
        return {}
    found = []
    for concept, word in surface_words.items():
        for m in match_concept(tokens, word, (lo, hi), concept=concept):
            found.append(m)
    found.sort(key=lambda m: (m.start, -len(m.positions)))
    sites: dict[int, str] = {}
    claimed_words: set[int] = set()
    for m in found:
        span = set(range(m.start, m.end))
        if span & claimed_words:
            continue
        claimed_words |= span
        positions = m.positions if include_preceding else range(m.start, m.end)
        for p in positions:
            if lo <= p < hi:
                sites.setdefault(p, m.concept)
    return sites


def per_layer_tables(table: Mapping, layers: Sequence[int]) -> dict[int, dict[str, np.ndarray]]:
    """Normalise a shared ``concept -> vector`` table or a ``layer -> table`` map."""
    layers = list(layers)
    if table and all(isinstance(k, (int, np.integer)) for k in table):
        missing = [L for L in layers if L not in table]
        if missing:
            raise MissingConcept(f"no vector table for layers {missing}")
        return {L: {c: np.asarray(v) for c, v in table[L].items()} for L in layers}
    shared = {c: np.asarray(v) for c, v in table.items()}
    return {L: shared for L in layers}


class InterventionHook:
    """Edits hidden states at concept sites and logs every edit.

    ``table`` is either one ``concept -> vector`` map used on every layer,
    or a ``layer -> (concept -> vector)`` map. Sites inside the prompt are
    computed up front. A generated token that falls inside the window
    becomes a site when the text ending at it completes a surface word;
    only that token is edited since earlier positions are already done.
    """

    def __init__(
        self,
        mode: str,
        table: Mapping,
        layers: Sequence[int],
        window: tuple[int, int],
        surface_words: Mapping[str, str],
        prompt_tokens: Sequence[str],
        token_str,
        scale: float = DEFAULT_SCALE,
        include_preceding: bool = True,
    ):
        if mode not in (STEER, REPLACE, SUBTRACT):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.tables = per_layer_tables(table, layers)
        self.layers = frozenset(self.tables)
        self.window = window
        self.scale = scale
        known = set().union(*(t.keys() for t in self.tables.values())) if self.tables else set()
        self.surface_words = {c: w for c, w in surface_words.items() if c in known}
        self._token_str = token_str
        self._prompt_len = len(prompt_tokens)
        self.sites = concept_sites(prompt_tokens, self.surface_words, window, include_preceding)
        self.touches: list[Touch] = []

    def _site_for_generated(self, pos: int, context: Sequence[int]) -> str | None:
        text = "".join(self._token_str(t) for t in context[max(0, pos - 64): pos + 1]).lower()
        for concept, word in self.surface_words.items():
            w = word.lower()
            if text.endswith(w):
                before = text[: -len(w)]
                if not before or not before[-1].isalnum():
                    return concept
        return None

    def _concept_at(self, pos: int, context: Sequence[int]) -> str | None:
        if pos < self._prompt_len:
            return self.sites.get(pos)
        if pos not in self.sites:
            concept = self._site_for_generated(pos, context)
            self.sites[pos] = concept
        return self.sites[pos]

    def __call__(self, layer, pos, h, context):
        concept = self._concept_at(pos, context)
        if concept is None or concept not in self.tables[layer]:
            return h
        v = self.tables[layer][concept]
        if self.mode == STEER:
            out = steer_update(h, v, self.scale)
        elif self.mode == REPLACE:
            out = v.astype(h.dtype)
        else:
            out = h - v.astype(h.dtype)
        self.touches.append(Touch(layer, pos, concept))
        return out


@dataclass
class InterventionResult:
    text: str
    token_ids: list[int]
    touches: list[Touch]
    generation: object = None

    def touched_sites(self) -> list[tuple[int, int]]:
        return [(t.layer, t.pos) for t in self.touches]


def draw_permutation(concepts: Sequence[str], seed: int | None) -> dict[str, str]:
    """Seeded within-class derangement: concept -> concept whose vector it receives."""
    rng = np.random.default_rng(seed)
    perm = {}
    for members in CONCEPT_CLASSES.values():
        present = [c for c in members if c in concepts]
        if len(present) < 2:
            perm.update({c: c for c in present})
            continue
        p = derangement(len(present), rng)
        perm.update({c: present[j] for c, j in zip(present, p)})
    return perm


def _shuffle_layers(table: Mapping, layers, seed, permutation) -> dict[int, dict[str, np.ndarray]]:
    tables = per_layer_tables(table, layers)
    if permutation is None:
        concepts = sorted(set().union(*(t.keys() for t in tables.values())))
        permutation = draw_permutation(concepts, seed)
    return {L: shuffle_table(t, permutation=permutation) for L, t in tables.items()}


def _prefix_ids(backend, prefix) -> list[int]:
    return backend.encode(prefix) if isinstance(prefix, str) else list(prefix)


def _run(
    backend,
    prefix,
    mode: str,
    table: Mapping[str, np.ndarray],
    layers: Sequence[int],
    window: tuple[int, int],
    surface_words: Mapping[str, str],
    max_new: int,
    scale: float = DEFAULT_SCALE,
    extra_hooks: Sequence[Hook] = (),
    include_preceding: bool = True,
) -> InterventionResult:
    ids = _prefix_ids(backend, prefix)
    if window[1] > backend.max_length:
        raise WindowBeyondTrace(f"window end {window[1]} exceeds max length {backend.max_length}")
    if len(ids) < window[0]:
        raise WindowBeyondTrace(f"prefix of {len(ids)} tokens is shorter than the window start {window[0]}")
    if max(layers) > backend.num_layers or min(layers) < 0:
        raise ValueError(f"layers {tuple(layers)} outside 0..{backend.num_layers}")
    for L, tab in per_layer_tables(table, layers).items():
        for c, v in tab.items():
            if np.shape(v) != (backend.hidden_dim,):
                raise ValueError(f"layer {L} vector for {c} has shape {np.shape(v)}, backend dim is {backend.hidden_dim}")
    hook = InterventionHook(
        mode,
        table,
        layers,
        window,
        surface_words,
        [backend.token_str(t) for t in ids],
        backend.token_str,
        scale,
        include_preceding,
    )
    gen = backend.generate_greedy(ids, max_new, hooks=[hook, *extra_hooks])
    return InterventionResult(gen.text, gen.token_ids, hook.touches, gen)


def apply_steering(
    backend,
    prefix,
    spec: SteeringSpec,
    surface_words: Mapping[str, str],
    max_new: int = 64,
    extra_hooks: Sequence[Hook] = (),
) -> InterventionResult:
    """Norm-preserving steering at concept sites on the spec's layer(s)."""
    return _run(
        backend, prefix, STEER, spec.vectors, spec.layers, spec.window, surface_words, max_new, spec.scale, extra_hooks
    )


def apply_patching(
    backend,
    prefix,
    window: tuple[int, int],
    layer_range: tuple[int, int],
    table: Mapping[str, np.ndarray],
    surface_words: Mapping[str, str],
    control: str = "matched",
    seed: int | None = None,
    permutation: Mapping[str, str] | None = None,
    max_new: int = 64,
    extra_hooks: Sequence[Hook] = (),
) -> InterventionResult:
    """Replace hidden states at concept sites on every layer in ``[start, end]``.

    ``control="shuffled"`` swaps vectors among concepts with a seeded
    derangement (or the given ``permutation``).
    """
    if control not in ("matched", "shuffled"):
        raise ValueError(f"control must be 'matched' or 'shuffled', got {control!r}")
    layers = range(layer_range[0], layer_range[1] + 1)
    if control == "shuffled":
        table = _shuffle_layers(table, layers, seed, permutation)
    return _run(backend, prefix, REPLACE, table, layers, window, surface_words, max_new, extra_hooks=extra_hooks)


def apply_negative(
    backend,
    prefix,
    window: tuple[int, int],
    layer_range: tuple[int, int],
    table: Mapping[str, np.ndarray],
    surface_words: Mapping[str, str],
    control: str = "matched",
    seed: int | None = None,
    permutation: Mapping[str, str] | None = None,
    max_new: int = 64,
    extra_hooks: Sequence[Hook] = (),
) -> InterventionResult:
    """Subtract centered in-naming vectors at concept sites on layers ``[start, end]``."""
    if control not in ("matched", "shuffled"):
        raise ValueError(f"control must be 'matched' or 'shuffled', got {control!r}")
    layers = range(layer_range[0], layer_range[1] + 1)
    if control == "shuffled":
        table = _shuffle_layers(table, layers, seed, permutation)
    return _run(backend, prefix, SUBTRACT, table, layers, window, surface_words, max_new, extra_hooks=extra_hooks)


def unsteered(backend, prefix, max_new: int = 64) -> InterventionResult:
    gen = backend.generate_greedy(_prefix_ids(backend, prefix), max_new)
    return InterventionResult(gen.text, gen.token_ids, [], gen)
