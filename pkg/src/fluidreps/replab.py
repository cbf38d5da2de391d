"""Concept representations from activation dumps, and their geometry.

Extraction averages hidden states twice: first within each matched token
sequence, then across all sequences pooled over the batch. Centering
subtracts the unweighted mean over a concept class (actions and
predicates are separate classes). Cross-naming representations average
centered vectors over namings.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .blocksworld import ACTIONS
from .namings import PREDICATE_SLOTS, Naming
from .tracestore import ActivationDump, match_concept, window_of

DEFAULT_WINDOW = 100
# Wider alternative window, kept as a named preset.
WIDE_WINDOW = 200
EXTRACTION_TIMESTAMPS = (2000, 4000, 7000, 10000)
TIMESTAMP_STRIDE = 200
CONCEPT_CLASSES = {"actions": ACTIONS, "predicates": PREDICATE_SLOTS}

RAW, CENTERED, CROSS_NAMING, SYMBOLIC = "raw", "centered", "cross-naming", "symbolic"


class NoOccurrences(LookupError):
    pass


class IncompleteConceptSet(ValueError):
    pass


class EmptySet(ValueError):
    pass


class ZeroVector(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


def concept_class(concept: str) -> str:
    for name, members in CONCEPT_CLASSES.items():
        if concept in members:
            return name
    raise KeyError(f"unknown concept {concept!r}")


@dataclass
class ExtractionSpec:
    naming: Naming
    layer: int
    timestamp: int
    dumps: Sequence[ActivationDump]
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.window < 1 or self.timestamp < self.window:
            raise ValueError(f"need timestamp >= window >= 1, got T={self.timestamp}, w={self.window}")
        for d in self.dumps:
            if self.layer not in d.layers:
                raise ValueError(f"layer {self.layer} is not stored in dump {d.model_name!r}")

    def summary(self) -> dict:
        return {
            "naming": self.naming.id,
            "layer": self.layer,
            "timestamp": self.timestamp,
            "window": self.window,
            "batch": len(self.dumps),
        }


@dataclass
class ConceptRepresentation:
    concept: str
    vector: np.ndarray
    kind: str = RAW
    provenance: dict = field(default_factory=dict)
    num_sequences: int = 0

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"{self.concept}: non-finite entries")


def extract(spec: ExtractionSpec, concept: str) -> ConceptRepresentation:
    word = spec.naming.surface(concept)
    lo, hi = window_of(spec.timestamp, spec.window)
    seq_means = []
    for dump in spec.dumps:
        end = min(hi, dump.num_tokens)
        if lo >= end:
            continue  # trace ended before this window
        H = dump.hidden(spec.layer)
        for m in match_concept(dump, word, (lo, end), concept=concept):
            seq_means.append(H[list(m.positions)].astype(np.float64).mean(axis=0))
    if not seq_means:
        raise NoOccurrences(f"{concept!r} ({word!r}) not found in window [{lo}, {hi})")
    return ConceptRepresentation(
        concept,
        np.mean(seq_means, axis=0),
        RAW,
        spec.summary(),
        num_sequences=len(seq_means),
    )


def extract_all(spec: ExtractionSpec, concepts: Iterable[str]) -> dict[str, ConceptRepresentation]:
    """Extract every concept that occurs; concepts without occurrences are left out."""
    out = {}
    for c in concepts:
        try:
            out[c] = extract(spec, c)
        except NoOccurrences:
            pass
    return out


def _vec(r) -> np.ndarray:
    return r.vector if isinstance(r, ConceptRepresentation) else np.asarray(r, dtype=np.float64)


def center(reps: Mapping[str, ConceptRepresentation | np.ndarray]) -> dict[str, ConceptRepresentation]:
    """Subtract each class mean from its members; each class present must be complete."""
    by_class: dict[str, list[str]] = {}
    for c in reps:
        by_class.setdefault(concept_class(c), []).append(c)
    out = {}
    for cls, members in by_class.items():
        missing = set(CONCEPT_CLASSES[cls]) - set(members)
        if missing:
            raise IncompleteConceptSet(f"{cls}: missing {sorted(missing)}")
        vecs = np.stack([_vec(reps[c]) for c in CONCEPT_CLASSES[cls]])
        mean = vecs.mean(axis=0)
        for c, v in zip(CONCEPT_CLASSES[cls], vecs):
            src = reps[c]
            prov = dict(src.provenance) if isinstance(src, ConceptRepresentation) else {}
            n = src.num_sequences if isinstance(src, ConceptRepresentation) else 0
            out[c] = ConceptRepresentation(c, v - mean, CENTERED, prov, n)
    return out


def cross_naming_average(
    reps: Mapping[int, ConceptRepresentation | np.ndarray], concept: str | None = None
) -> ConceptRepresentation:
    """Unweighted mean of one concept's centered vectors over namings."""
    if not reps:
        raise EmptySet("no namings to average over")
    keys = sorted(reps)
    vecs = np.stack([_vec(reps[k]) for k in keys])
    if concept is None:
        first = reps[keys[0]]
        concept = first.concept if isinstance(first, ConceptRepresentation) else "?"
    return ConceptRepresentation(
        concept, vecs.mean(axis=0), CROSS_NAMING, {"namings": keys}, num_sequences=len(keys)
    )


def cross_naming_table(
    centered_by_naming: Mapping[int, Mapping[str, ConceptRepresentation]],
) -> dict[str, ConceptRepresentation]:
    """Cross-naming vector per concept, over the namings where the concept exists."""
    concepts = sorted({c for reps in centered_by_naming.values() for c in reps})
    return {
        c: cross_naming_average({n: reps[c] for n, reps in centered_by_naming.items() if c in reps}, c)
        for c in concepts
    }


def cosine(u, v) -> float:
    u, v = _vec(u), _vec(v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def centered_reps(
    dumps: Sequence[ActivationDump],
    naming: Naming,
    layer: int,
    timestamp: int,
    window: int = DEFAULT_WINDOW,
    concepts: Sequence[str] = ACTIONS,
) -> dict[str, ConceptRepresentation] | None:
    """Extract and center one concept class; None if any member has no occurrence."""
    spec = ExtractionSpec(naming, layer, timestamp, dumps, window)
    raw = extract_all(spec, concepts)
    if len(raw) != len(concepts):
        return None
    return center(raw)


@dataclass(frozen=True)
class CurveRow:
    timestamp: int
    concept: str
    same_concept: float
    cross_concept: float
    namings: int


def convergence_curve(
    dumps_by_naming: Mapping[int, Sequence[ActivationDump]],
    namings: Mapping[int, Naming],
    reference: Mapping[str, ConceptRepresentation | np.ndarray],
    layer: int,
    stride: int = TIMESTAMP_STRIDE,
    window: int = DEFAULT_WINDOW,
    concepts: Sequence[str] = ACTIONS,
) -> list[CurveRow]:
    """Similarity of centered in-naming vectors to reference vectors over time.

    For every timestamp that is a multiple of ``stride`` (and at least
    ``window``), each naming's concept class is extracted and centered, then
    compared with ``reference``: the same concept's reference vector, and
    the mean over the other concepts' reference vectors. Both numbers are
    averaged over namings. Namings lacking any concept at a timestamp are
    skipped there; timestamps with no usable naming produce no rows.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    longest = max((d.num_tokens for ds in dumps_by_naming.values() for d in ds), default=0)
    rows = []
    for T in range(stride, longest + 1, stride):
        if T < window:
            continue
        same: dict[str, list[float]] = {c: [] for c in concepts}
        cross: dict[str, list[float]] = {c: [] for c in concepts}
        for nid, dumps in sorted(dumps_by_naming.items()):
            reps = centered_reps(dumps, namings[nid], layer, T, window, concepts)
            if reps is None:
                continue
            for c in concepts:
                try:
                    same[c].append(cosine(reps[c], reference[c]))
                    cross[c].append(float(np.mean([cosine(reps[c], reference[o]) for o in concepts if o != c])))
                except ZeroVector:
                    continue
        for c in concepts:
            if same[c]:
                rows.append(CurveRow(T, c, float(np.mean(same[c])), float(np.mean(cross[c])), len(same[c])))
    return rows


def curve_csv(rows: Sequence[CurveRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "concept", "same_concept_sim", "cross_concept_sim", "namings"])
    for r in rows:
        w.writerow([r.timestamp, r.concept, f"{r.same_concept:.8f}", f"{r.cross_concept:.8f}", r.namings])
    return buf.getvalue()


@dataclass
class PCAResult:
    components: np.ndarray  # [k, d], orthonormal rows
    projected: np.ndarray  # [count, k]
    explained_variance_ratio: np.ndarray  # [k]
    mean: np.ndarray  # [d]

    def reconstruct(self) -> np.ndarray:
        return self.projected @ self.components + self.mean


def pca_project(points: Sequence | np.ndarray, k: int) -> PCAResult:
    """Mean-centred PCA via eigendecomposition of the sample covariance.

    Components come out in order of decreasing variance, each signed so its
    largest-magnitude entry is positive. ``k=0`` returns empty arrays.
    """
    X = np.asarray([_vec(p) for p in points], dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA needs at least two points")
    count, d = X.shape
    if not 0 <= k <= min(count - 1, d):
        raise ValueError(f"k must be in 0..{min(count - 1, d)}, got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise DegenerateInput("all points are identical")
    cov = Xc.T @ Xc / (count - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order[:k]].T
    for i in range(k):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    ratios = evals[:k] / evals.sum()
    return PCAResult(comps, Xc @ comps.T, ratios, mean)


def pca_csv(labels: Sequence[Sequence[str]], header: Sequence[str], result: PCAResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = result.projected.shape[1]
    w.writerow([*header, *(f"pc{i + 1}" for i in range(k))])
    for lab, row in zip(labels, result.projected):
        w.writerow([*lab, *(f"{x:.8f}" for x in row)])
    return buf.getvalue()
