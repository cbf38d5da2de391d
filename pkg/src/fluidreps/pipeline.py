"""Experiment runner: rollouts on the toy backend, vector extraction, interventions, scoring.

An experiment is described by a JSON manifest (see ``ExperimentManifest``).
Every (naming, puzzle) cell runs the unsteered baseline and each spec
variant from the same prefix, scores the continuation with the plan
verifier, and writes one JSON file per cell; the cells are merged into a
ledger in a fixed order at the end, so worker count never changes output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import replab, steering
from .blocksworld import Puzzle, generate_puzzle, verify_plan
from .namings import CONCEPTS, Naming, builtin_naming
from .prompts import PlanParseError, parse_plan, render_prompt, template_for
from .stats import condition_table, table_csv
from .toy import EOS, ToyConfig, ToyTransformer
from .tracestore import ActivationDump

log = logging.getLogger(__name__)

MODES = ("steer", "patch", "negative")


@dataclass
class SpecVariant:
    """One intervention condition in a manifest.

    For ``steer`` the layer list holds a single layer; for ``patch`` and
    ``negative`` it is ``[start, end]`` (inclusive). ``scale`` is the
    interpolation weight when steering and the mixing scale of the symbolic
    vectors when patching.
    """

    name: str
    vector_kind: str = steering.IN_NAMING
    scale: float = steering.DEFAULT_SCALE
    window: tuple[int, int] = steering.STEERING_WINDOW
    layers: tuple[int, ...] = (20,)
    timestamp: int = steering.STEERING_VECTOR_TIMESTAMP
    control: str = "matched"
    seed: int = 0
    permutation: dict[str, str] | None = None

    @classmethod
    def from_json(cls, obj: Mapping) -> SpecVariant:
        kw = dict(obj)
        kw["window"] = tuple(kw.get("window", cls.window))
        kw["layers"] = tuple(kw.get("layers", cls.layers))
        return cls(**kw)


@dataclass
class ExperimentManifest:
    mode: str
    namings: list[int]
    specs: list[SpecVariant]
    puzzle_seeds: list[int]
    vector_puzzle_seeds: list[int]
    n_blocks: int = 4
    template: str = "mystery"
    swap_holding_on: bool = False
    backend: ToyConfig = field(default_factory=ToyConfig)
    max_new_tokens: int = 32
    extraction_window: int = replab.DEFAULT_WINDOW
    output_dir: str = "runs"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for nid in self.namings:
            builtin_naming(nid)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names) or "baseline" in names:
            raise ValueError("spec names must be unique and not 'baseline'")
        for s in self.specs:
            if max(s.layers) > self.backend.layers or min(s.layers) < 0:
                raise ValueError(f"spec {s.name}: layers {s.layers} outside 0..{self.backend.layers}")
            if self.mode == "steer" and len(s.layers) != 1:
                raise ValueError(f"spec {s.name}: steering uses a single layer")
            if self.mode != "steer" and len(s.layers) != 2:
                raise ValueError(f"spec {s.name}: give [start, end] layers")

    def naming(self, nid: int) -> Naming:
        n = builtin_naming(nid)
        return n.with_swapped() if self.swap_holding_on else n

    @classmethod
    def from_json(cls, obj: Mapping, mode: str | None = None) -> ExperimentManifest:
        obj = dict(obj)
        return cls(
            mode=mode or obj["mode"],
            namings=[int(n) for n in obj["namings"]],
            specs=[SpecVariant.from_json(s) for s in obj["specs"]],
            puzzle_seeds=_seeds(obj["puzzle_seeds"]),
            vector_puzzle_seeds=_seeds(obj.get("vector_puzzle_seeds", [])),
            n_blocks=int(obj.get("n_blocks", 4)),
            template=obj.get("template", "mystery"),
            swap_holding_on=bool(obj.get("swap_holding_on", False)),
            backend=ToyConfig(**obj.get("backend", {})),
            max_new_tokens=int(obj.get("max_new_tokens", 32)),
            extraction_window=int(obj.get("extraction_window", replab.DEFAULT_WINDOW)),
            output_dir=obj.get("output_dir", "runs"),
        )


def _seeds(obj) -> list[int]:
    if isinstance(obj, Mapping):
        return list(range(int(obj["start"]), int(obj["start"]) + int(obj["count"])))
    return [int(s) for s in obj]


# ---- rollouts and scoring ------------------------------------------------------

def prompt_for(puzzle: Puzzle, naming: Naming, template: str) -> str:
    return render_prompt(puzzle, naming, template_for(template))


def score(text: str, puzzle: Puzzle, naming: Naming) -> tuple[bool, str]:
    """(correct, outcome) for one model answer; unparsable answers are wrong."""
    try:
        plan = parse_plan(text, naming)
    except PlanParseError as e:
        return False, f"parse-error: {type(e).__name__}"
    verdict = verify_plan(puzzle, plan)
    return verdict.valid, verdict.outcome


def rollout_dumps(
    backend: ToyTransformer,
    puzzles: Sequence[Puzzle],
    naming: Naming,
    template: str,
    max_new: int,
    layers: Sequence[int] | None = None,
) -> list[ActivationDump]:
    dumps = []
    for p in puzzles:
        gen = backend.generate_greedy(prompt_for(p, naming, template), max_new)
        dumps.append(gen.record.to_dump(model_name=f"toy-seed{backend.config.seed}", layers=layers))
    return dumps


def in_naming_tables(
    dumps_by_naming: Mapping[int, Sequence[ActivationDump]],
    namings: Mapping[int, Naming],
    layer: int,
    timestamp: int,
    window: int,
) -> dict[int, dict[str, np.ndarray]]:
    """Centered in-naming vectors per naming (actions and predicates); incomplete classes dropped."""
    out = {}
    for nid, dumps in dumps_by_naming.items():
        table = {}
        for concepts in replab.CONCEPT_CLASSES.values():
            reps = replab.centered_reps(dumps, namings[nid], layer, timestamp, window, concepts)
            if reps is None:
                log.warning("naming %s: incomplete concept set at layer %s, T=%s", nid, layer, timestamp)
                continue
            table.update({c: r.vector for c, r in reps.items()})
        out[nid] = table
    return out


def cross_table(in_tables: Mapping[int, Mapping[str, np.ndarray]]) -> dict[str, np.ndarray]:
    reps = replab.cross_naming_table({n: t for n, t in in_tables.items() if t})
    return {c: r.vector for c, r in reps.items()}


def _vectors_for(
    manifest: ExperimentManifest, spec: SpecVariant, nid: int, cache: Mapping
) -> dict:
    """Vector table (shared or per-layer) for one spec and naming."""
    if manifest.mode == "steer":
        L = spec.layers[0]
        inn = cache[(L, spec.timestamp)]["in"][nid]
        if spec.vector_kind == steering.CROSS_NAMING:
            return cache[(L, spec.timestamp)]["cross"]
        if spec.vector_kind == steering.RANDOM:
            return steering.make_vectors(steering.RANDOM, seed=spec.seed + nid, norm_reference=inn)
        if spec.vector_kind == steering.SHUFFLED:
            return steering.make_vectors(steering.SHUFFLED, inn, seed=spec.seed + nid)
        return inn
    layers = range(spec.layers[0], spec.layers[1] + 1)
    if manifest.mode == "patch":
        return {L: steering.build_symbolic(cache[(L, spec.timestamp)]["cross"], spec.scale) for L in layers}
    return {L: cache[(L, spec.timestamp)]["in"][nid] for L in layers}


def vector_rollouts(manifest: ExperimentManifest, backend: ToyTransformer) -> dict[int, list[ActivationDump]]:
    puzzles = [generate_puzzle(manifest.n_blocks, s) for s in manifest.vector_puzzle_seeds]
    return {
        nid: rollout_dumps(backend, puzzles, manifest.naming(nid), manifest.template, manifest.max_new_tokens)
        for nid in manifest.namings
    }


def build_vector_cache(
    manifest: ExperimentManifest,
    backend: ToyTransformer,
    dumps: Mapping[int, Sequence[ActivationDump]] | None = None,
) -> dict:
    """(layer, timestamp) -> {"in": naming -> centered table, "cross": cross-naming table}."""
    namings = {nid: manifest.naming(nid) for nid in manifest.namings}
    if dumps is None:
        dumps = vector_rollouts(manifest, backend)
    needed = set()
    for s in manifest.specs:
        layers = s.layers if manifest.mode == "steer" else range(s.layers[0], s.layers[1] + 1)
        needed |= {(L, s.timestamp) for L in layers}
    cache = {}
    for L, T in sorted(needed):
        inn = in_naming_tables(dumps, namings, L, T, manifest.extraction_window)
        cache[(L, T)] = {"in": inn, "cross": cross_table(inn)}
    return cache


# ---- cells ---------------------------------------------------------------------

def _prefix(backend: ToyTransformer, prompt_ids: list[int], t_end: int) -> list[int]:
    """The prompt, extended by clean greedy decoding up to ``t_end`` tokens (or EOS)."""
    if len(prompt_ids) >= t_end:
        return list(prompt_ids)
    ids = backend.generate_greedy(prompt_ids, t_end - len(prompt_ids)).token_ids
    return ids[:-1] if ids[-1] == EOS else ids


def run_cell(manifest: ExperimentManifest, nid: int, seed: int, tables: Mapping[str, dict]) -> list[dict]:
    backend = ToyTransformer(manifest.backend)
    naming = manifest.naming(nid)
    puzzle = generate_puzzle(manifest.n_blocks, seed)
    prompt_ids = backend.encode(prompt_for(puzzle, naming, manifest.template))
    words = naming.surface_words(CONCEPTS)
    t_end = max((s.window[1] for s in manifest.specs), default=0)
    prefix = _prefix(backend, prompt_ids, min(t_end, backend.max_length - manifest.max_new_tokens))

    def answer(res) -> str:
        # everything the model wrote after the prompt, prefix extension included
        return backend.decode(res.token_ids[len(prompt_ids):])

    base = steering.unsteered(backend, prefix, manifest.max_new_tokens)
    base_ok, base_outcome = score(answer(base), puzzle, naming)
    rows = [_row(nid, seed, "baseline", base_ok, base_outcome, base_ok, True, 0, "")]
    for spec in manifest.specs:
        try:
            table = tables[spec.name]
            if manifest.mode == "steer":
                sspec = steering.SteeringSpec(spec.vector_kind, spec.scale, spec.window, spec.layers, table, spec.seed)
                res = steering.apply_steering(backend, prefix, sspec, words, manifest.max_new_tokens)
            elif manifest.mode == "patch":
                res = steering.apply_patching(
                    backend, prefix, spec.window, spec.layers, table, words, spec.control, spec.seed,
                    spec.permutation, manifest.max_new_tokens,
                )
            else:
                res = steering.apply_negative(
                    backend, prefix, spec.window, spec.layers, table, words, spec.control, spec.seed,
                    spec.permutation, manifest.max_new_tokens,
                )
        except Exception as e:  # recorded per cell; the run carries on
            log.warning("cell naming=%s puzzle=%s spec=%s failed: %s", nid, seed, spec.name, e)
            rows.append(_row(nid, seed, spec.name, False, "error", base_ok, False, 0, f"{type(e).__name__}: {e}"))
            continue
        ok, outcome = score(answer(res), puzzle, naming)
        rows.append(_row(nid, seed, spec.name, ok, outcome, base_ok, res.token_ids == base.token_ids, len(res.touches), ""))
    return rows


def _row(nid, seed, spec, ok, outcome, base_ok, same, touches, error) -> dict:
    return {
        "naming": nid,
        "puzzle_seed": seed,
        "condition": spec,
        "correct": int(ok),
        "outcome": outcome,
        "baseline_correct": int(base_ok),
        "same_as_baseline": int(same),
        "touches": touches,
        "error": error,
    }


def _cell_job(args):
    manifest, nid, seed, tables, path = args
    rows = run_cell(manifest, nid, seed, tables)
    Path(path).write_text(json.dumps(rows, sort_keys=True), encoding="utf-8")
    return path


LEDGER_FIELDS = ["naming", "puzzle_seed", "condition", "correct", "outcome",
                 "baseline_correct", "same_as_baseline", "touches", "error"]


@dataclass
class RunResult:
    ledger: list[dict]
    accuracy: dict[str, dict[str, float]]
    stats_csv: str | None
    output_dir: Path


def run_manifest(
    manifest: ExperimentManifest,
    workers: int = 1,
    vector_dumps: Mapping[int, Sequence[ActivationDump]] | None = None,
) -> RunResult:
    """Run every (naming, puzzle) cell; ``vector_dumps`` replaces the vector rollouts if given."""
    out = Path(manifest.output_dir)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    backend = ToyTransformer(manifest.backend)
    cache = build_vector_cache(manifest, backend, vector_dumps)
    jobs = []
    for nid in manifest.namings:
        tables = {}
        for spec in manifest.specs:
            try:
                tables[spec.name] = _vectors_for(manifest, spec, nid, cache)
            except KeyError as e:
                log.warning("naming %s spec %s: no vectors (%s)", nid, spec.name, e)
        for seed in manifest.puzzle_seeds:
            jobs.append((manifest, nid, seed, tables, str(cells_dir / f"n{nid:02d}_p{seed:06d}.json")))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_cell_job, jobs))
    else:
        paths = [_cell_job(j) for j in jobs]
    ledger = [row for p in paths for row in json.loads(Path(p).read_text(encoding="utf-8"))]

    acc: dict[str, dict[str, float]] = {}
    for cond in ["baseline", *(s.name for s in manifest.specs)]:
        for nid in manifest.namings:
            cells = [r for r in ledger if r["condition"] == cond and r["naming"] == nid]
            acc.setdefault(cond, {})[str(nid)] = sum(r["correct"] for r in cells) / len(cells) if cells else 0.0

    (out / "ledger.csv").write_text(_ledger_csv(ledger), encoding="utf-8")
    (out / "accuracy.csv").write_text(accuracy_csv(acc), encoding="utf-8")
    stats_text = None
    if len(manifest.namings) >= 2 and manifest.specs:
        stats_text = table_csv(condition_table(acc))
        (out / "stats.csv").write_text(stats_text, encoding="utf-8")
    return RunResult(ledger, acc, stats_text, out)


def _ledger_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, LEDGER_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def accuracy_csv(acc: Mapping[str, Mapping[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["condition", "naming", "accuracy"])
    for cond, per in acc.items():
        for nid, a in per.items():
            w.writerow([cond, nid, f"{a:.6f}"])
    return buf.getvalue()
