"""Command-line entry point: ``fluidreps <command> ...``.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 malformed input.
Corpora are JSON lines, numeric tables CSV. ``FLUIDREPS_OUT`` sets the
default output directory for commands that write directories.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pipeline, replab, stats
from .blocksworld import SizeLimit, generate_puzzle, plan_to_json, puzzle_from_json, puzzle_to_json, verify_plan
from .namings import CONCEPTS, UnknownNaming, builtin_naming, load_naming
from .prompts import MYSTERY, STANDARD, PlanParseError, parse_plan, render_prompt, template_for
from .toy import ToyConfig, ToyTransformer
from .tracestore import DumpError, read_dump, write_dump

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_FORMAT = 0, 2, 3, 4
OUT_ENV = "FLUIDREPS_OUT"

log = logging.getLogger("fluidreps")


class UsageError(Exception):
    pass


class FormatError(Exception):
    pass


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "fluidreps_out"))


# ---- I/O helpers ----------------------------------------------------------------

def _read_text(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(path)
    return p.read_text(encoding="utf-8")


def _read_jsonl(path: str) -> list:
    out = []
    for i, line in enumerate(_read_text(path).splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{i}: {e}") from None
    return out


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _naming(args):
    if getattr(args, "naming_file", None):
        n = load_naming(args.naming_file)
    else:
        n = builtin_naming(args.naming)
    return n.with_swapped() if getattr(args, "swap_holding_on", False) else n


def _puzzles(path: str):
    rows = _read_jsonl(path)
    try:
        return [puzzle_from_json(r) for r in rows]
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"{path}: bad puzzle record ({e})") from None


def _dumps(paths: Sequence[str]):
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(p)
    return [read_dump(p) for p in paths]


# ---- corpus commands ------------------------------------------------------------

def cmd_gen(args) -> int:
    rows = []
    for i in range(args.count):
        seed = args.seed + i
        rows.append({"index": i, "seed": seed, **puzzle_to_json(generate_puzzle(args.n_blocks, seed))})
    _emit(_jsonl(rows), args.out)
    return EXIT_OK


def cmd_render(args) -> int:
    naming = _naming(args)
    template = template_for(args.template)
    rows = [
        {"index": i, "naming": naming.id, "prompt": render_prompt(p, naming, template)}
        for i, p in enumerate(_puzzles(args.puzzles))
    ]
    _emit(_jsonl(rows), args.out)
    return EXIT_OK


def _answer_records(path: str, default_naming: int) -> list[dict]:
    """One record per non-blank line; lines that are not JSON objects become failures."""
    recs = []
    for i, line in enumerate(_read_text(path).splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if isinstance(obj, str):
                obj = {"answer": obj}
            if not isinstance(obj, dict) or not isinstance(obj.get("answer"), str):
                raise ValueError("expected an object with an 'answer' string")
            recs.append({
                "puzzle": int(obj.get("puzzle", len(recs))),
                "naming": int(obj.get("naming", default_naming)),
                "answer": obj["answer"],
            })
        except (ValueError, TypeError) as e:
            recs.append({"puzzle": len(recs), "naming": default_naming, "answer": None, "error": f"line {i + 1}: {e}"})
    return recs


def _verdicts(args) -> list[dict]:
    puzzles = _puzzles(args.puzzles)
    base = _naming(args)
    out = []
    for rec in _answer_records(args.answers, base.id):
        row = {"puzzle": rec["puzzle"], "naming": rec["naming"], "correct": False}
        if rec["answer"] is None:
            row["outcome"] = "malformed-record"
            row["detail"] = rec["error"]
            out.append(row)
            continue
        if not 0 <= rec["puzzle"] < len(puzzles):
            row.update(outcome="unknown-puzzle", detail=f"no puzzle {rec['puzzle']}")
            out.append(row)
            continue
        naming = base if rec["naming"] == base.id else builtin_naming(rec["naming"])
        if args.swap_holding_on and naming is not base:
            naming = naming.with_swapped()
        try:
            plan = parse_plan(rec["answer"], naming)
        except PlanParseError as e:
            row.update(outcome="parse-error", detail=str(e))
            out.append(row)
            continue
        v = verify_plan(puzzles[rec["puzzle"]], plan)
        row.update(correct=v.valid, outcome=v.outcome, plan=plan_to_json(plan))
        if v.index is not None:
            row["index"] = v.index
        if v.reason:
            row["detail"] = v.reason
        out.append(row)
    return out


def _accuracy_rows(verdicts: list[dict]) -> list[tuple[int, int, int]]:
    by: dict[int, list[bool]] = {}
    for v in verdicts:
        by.setdefault(v["naming"], []).append(bool(v["correct"]))
    return [(n, sum(vals), len(vals)) for n, vals in sorted(by.items())]


def cmd_verify(args) -> int:
    verdicts = _verdicts(args)
    _emit(_jsonl(verdicts), args.out)
    correct = sum(v["correct"] for v in verdicts)
    acc = correct / len(verdicts) if verdicts else 0.0
    print(f"accuracy {acc:.4f} ({correct}/{len(verdicts)})", file=sys.stderr)
    return EXIT_OK


def cmd_score(args) -> int:
    verdicts = _verdicts(args)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["naming", "correct", "total", "accuracy"])
    rows = _accuracy_rows(verdicts) or [(_naming(args).id, 0, 0)]
    for n, c, t in rows:
        w.writerow([n, c, t, f"{(c / t if t else 0.0):.6f}"])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# ---- activations ----------------------------------------------------------------

def _config(args) -> ToyConfig:
    return ToyConfig(args.layers, args.hidden_dim, args.heads, args.context, args.model_seed)


def cmd_rollout(args) -> int:
    naming = _naming(args)
    puzzles = _puzzles(args.puzzles)
    backend = ToyTransformer(_config(args))
    out = Path(args.out) if args.out else default_out() / "dumps"
    out.mkdir(parents=True, exist_ok=True)
    dumps = pipeline.rollout_dumps(backend, puzzles, naming, args.template, args.max_new)
    for i, d in enumerate(dumps):
        d.extra.update({"naming": naming.id, "puzzle": i})
        write_dump(d, out / f"n{naming.id:02d}_p{i:05d}.zip")
    print(f"wrote {len(dumps)} dumps to {out}", file=sys.stderr)
    return EXIT_OK


def _vector_csv(rows: list[tuple[int, str, replab.ConceptRepresentation]], layer: int, timestamp: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = len(rows[0][2].vector) if rows else 0
    w.writerow(["naming", "layer", "timestamp", "concept", "kind", "num_sequences", *(f"v{i}" for i in range(d))])
    for nid, concept, rep in rows:
        w.writerow([nid, layer, timestamp, concept, rep.kind, rep.num_sequences, *(repr(float(x)) for x in rep.vector)])
    return buf.getvalue()


def _reps_for(dumps, naming, layer, timestamp, window, concepts, kind):
    spec = replab.ExtractionSpec(naming, layer, timestamp, dumps, window)
    raw = replab.extract_all(spec, concepts)
    if kind == replab.RAW:
        return raw
    out = {}
    for cls, members in replab.CONCEPT_CLASSES.items():
        wanted = [c for c in members if c in concepts]
        if not wanted:
            continue
        if not all(c in raw for c in members):
            log.warning("naming %s: %s incomplete at T=%s, not centered", naming.id, cls, timestamp)
            continue
        out.update(replab.center({c: raw[c] for c in members}))
    return {c: out[c] for c in concepts if c in out}


def cmd_extract(args) -> int:
    naming = _naming(args)
    dumps = _dumps(args.dumps)
    concepts = args.concepts or list(CONCEPTS)
    reps = _reps_for(dumps, naming, args.layer, args.timestamp, args.window, concepts, args.kind)
    rows = [(naming.id, c, reps[c]) for c in concepts if c in reps]
    _emit(_vector_csv(rows, args.layer, args.timestamp), args.out)
    return EXIT_OK


def _naming_dumps(specs: Sequence[str]) -> dict[int, list]:
    out: dict[int, list] = {}
    for s in specs:
        nid, sep, paths = s.partition("=")
        if not sep:
            raise UsageError(f"--dumps expects NAMING=path[,path...], got {s!r}")
        out.setdefault(int(nid), []).extend(_dumps([p for p in paths.split(",") if p]))
    return out


def cmd_curves(args) -> int:
    by_naming = _naming_dumps(args.dumps)
    namings = {n: builtin_naming(n) for n in by_naming}
    concepts = replab.CONCEPT_CLASSES[args.concept_class]
    longest = max(d.num_tokens for ds in by_naming.values() for d in ds)
    ref_t = args.reference_timestamp or (longest // args.stride) * args.stride
    centered = {}
    for nid, dumps in by_naming.items():
        reps = replab.centered_reps(dumps, namings[nid], args.layer, ref_t, args.window, concepts)
        if reps is not None:
            centered[nid] = reps
    if not centered:
        raise FormatError(f"no naming has every {args.concept_class} concept at the reference timestamp {ref_t}")
    reference = replab.cross_naming_table(centered)
    rows = replab.convergence_curve(by_naming, namings, reference, args.layer, args.stride, args.window, concepts)
    _emit(replab.curve_csv(rows), args.out)
    return EXIT_OK


def _read_vector_csv(path: str) -> tuple[list[list[str]], np.ndarray]:
    labels, vecs = [], []
    reader = csv.DictReader(io.StringIO(_read_text(path)))
    cols = [c for c in (reader.fieldnames or []) if c.startswith("v") and c[1:].isdigit()]
    if not cols or "concept" not in (reader.fieldnames or []):
        raise FormatError(f"{path}: not a vector table")
    for row in reader:
        labels.append([row.get("naming", ""), row["concept"]])
        vecs.append([float(row[c]) for c in cols])
    return labels, np.asarray(vecs, dtype=np.float64)


def cmd_pca(args) -> int:
    labels, blocks = [], []
    for p in args.vectors:
        lab, v = _read_vector_csv(p)
        labels += lab
        blocks.append(v)
    X = np.concatenate(blocks)
    res = replab.pca_project(X, args.k)
    _emit(replab.pca_csv(labels, ["naming", "concept"], res), args.out)
    if args.variance_out:
        Path(args.variance_out).write_text(
            "component,explained_variance_ratio\n"
            + "".join(f"pc{i + 1},{r:.8f}\n" for i, r in enumerate(res.explained_variance_ratio)),
            encoding="utf-8",
        )
    return EXIT_OK


# ---- experiments ----------------------------------------------------------------

def _experiment(mode: str):
    def run(args) -> int:
        try:
            obj = json.loads(_read_text(args.manifest))
        except json.JSONDecodeError as e:
            raise FormatError(f"{args.manifest}: {e}") from None
        if args.out:
            obj["output_dir"] = args.out
        elif "output_dir" not in obj:
            obj["output_dir"] = str(default_out() / mode)
        try:
            manifest = pipeline.ExperimentManifest.from_json(obj, mode=mode)
        except UnknownNaming:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{args.manifest}: {e}") from None
        res = pipeline.run_manifest(manifest, workers=args.workers)
        steered = [r for r in res.ledger if r["condition"] != "baseline"]
        errors = sum(1 for r in steered if r["error"])
        print(f"{len(res.ledger)} ledger rows, {errors} failed cells -> {res.output_dir}", file=sys.stderr)
        if steered and errors == len(steered):
            print("every intervention cell failed", file=sys.stderr)
            return 1
        return EXIT_OK

    return run


def _stats_input(text: str) -> dict[str, dict[str, float]] | list:
    reader = csv.DictReader(io.StringIO(text))
    fields = set(reader.fieldnames or [])
    rows = list(reader)
    if {"condition", "naming", "accuracy"} <= fields:
        return stats.read_accuracy_csv(text)
    if {"condition", "naming", "delta"} <= fields:
        acc: dict[str, dict[str, float]] = {"baseline": {}}
        for r in rows:
            acc.setdefault(r["condition"], {})[r["naming"]] = float(r["delta"])
            acc["baseline"][r["naming"]] = 0.0
        return acc
    if {"condition", "mean", "se"} <= fields:
        return [
            (r["condition"], stats.t_test_from_summary(float(r["mean"]), float(r["se"]), int(r.get("df") or 13)), None)
            for r in rows
        ]
    raise FormatError("expected columns condition,naming,accuracy | condition,naming,delta | condition,mean,se")


def cmd_stats(args) -> int:
    parsed = _stats_input(_read_text(args.table))
    if isinstance(parsed, list):
        rows = [(c, r, r.df + 1) for c, r, _ in parsed]
    else:
        rows = stats.condition_table(parsed, baseline=args.baseline)
    _emit(stats.table_csv(rows), args.out)
    return EXIT_OK


# ---- parser ---------------------------------------------------------------------

def _add_naming(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--naming", type=int, help="built-in naming id (0 = identity, 1-20 mystery)")
    g.add_argument("--naming-file", help="naming JSON file")
    p.add_argument("--swap-holding-on", action="store_true", help="exchange the holding/on predicate words")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fluidreps", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate random puzzles as JSON lines")
    p.add_argument("n_blocks", type=int)
    p.add_argument("count", type=int)
    p.add_argument("seed", type=int, help="seed of the first puzzle; puzzle i uses seed+i")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", help="render prompts for a puzzle file")
    p.add_argument("puzzles")
    _add_naming(p)
    p.add_argument("--template", choices=(STANDARD, MYSTERY), default=MYSTERY)
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    for name, func, help_ in (
        ("verify", cmd_verify, "verify answers; one JSON verdict per answer"),
        ("score", cmd_score, "accuracy per naming as CSV"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("puzzles")
        p.add_argument("answers", help='JSON lines: {"puzzle": i, "naming": n, "answer": text}')
        _add_naming(p)
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("rollout", help="greedy toy-model rollouts written as activation dumps")
    p.add_argument("puzzles")
    _add_naming(p)
    p.add_argument("--template", choices=(STANDARD, MYSTERY), default=MYSTERY)
    p.add_argument("--max-new", type=int, default=32)
    p.add_argument("--layers", type=int, default=ToyConfig.layers)
    p.add_argument("--hidden-dim", type=int, default=ToyConfig.hidden_dim)
    p.add_argument("--heads", type=int, default=ToyConfig.heads)
    p.add_argument("--context", type=int, default=ToyConfig.context)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--out", help=f"dump directory (default ${OUT_ENV}/dumps)")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("extract", help="concept vectors from dumps as CSV")
    p.add_argument("dumps", nargs="+")
    _add_naming(p)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--timestamp", type=int, default=replab.EXTRACTION_TIMESTAMPS[2])
    p.add_argument("--window", type=int, default=replab.DEFAULT_WINDOW)
    p.add_argument("--kind", choices=(replab.RAW, replab.CENTERED), default=replab.CENTERED)
    p.add_argument("--concepts", nargs="+", choices=CONCEPTS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("curves", help="similarity to cross-naming vectors over timestamps")
    p.add_argument("--dumps", action="append", required=True, metavar="NAMING=PATH[,PATH...]")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--stride", type=int, default=replab.TIMESTAMP_STRIDE)
    p.add_argument("--window", type=int, default=replab.DEFAULT_WINDOW)
    p.add_argument("--reference-timestamp", type=int, help="default: last stride multiple within the longest dump")
    p.add_argument("--concept-class", choices=sorted(replab.CONCEPT_CLASSES), default="actions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("pca", help="PCA projection of vector CSVs")
    p.add_argument("vectors", nargs="+")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out")
    p.add_argument("--variance-out")
    p.set_defaults(func=cmd_pca)

    for mode in pipeline.MODES:
        p = sub.add_parser(mode, help=f"run a {mode} experiment manifest on the toy backend")
        p.add_argument("manifest")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help=f"output directory (default: manifest output_dir, else ${OUT_ENV}/{mode})")
        p.set_defaults(func=_experiment(mode))

    p = sub.add_parser("stats", help="one-tailed t-tests per condition as CSV")
    p.add_argument("table", help="accuracy, delta or mean/se CSV")
    p.add_argument("--baseline", default="baseline")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, SizeLimit, UnknownNaming) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: missing input {e}", file=sys.stderr)
        return EXIT_MISSING
    except (FormatError, DumpError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
