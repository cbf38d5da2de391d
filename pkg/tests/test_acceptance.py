"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
a full ``pytest`` run lists them in the terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from fluidreps import pipeline
from fluidreps.blocksworld import (
    EXAMPLE_PLAN,
    EXAMPLE_PUZZLE,
    Inapplicable,
    all_actions,
    apply,
    bfs_solve,
    generate_puzzle,
    is_applicable,
    verify_plan,
)
from fluidreps.namings import ACTIONS, CONCEPTS, IDENTITY, PREDICATE_SLOTS, builtin_naming
from fluidreps.prompts import MYSTERY_TEMPLATE, STANDARD_TEMPLATE, parse_plan, render_example, render_plan
from fluidreps.replab import ExtractionSpec, center, centered_reps, cross_naming_average, extract, pca_project
from fluidreps.stats import one_sample_t, t_cdf
from fluidreps.steering import InterventionHook, steer_update
from fluidreps.toy import ToyConfig, ToyTransformer
from fluidreps.tracestore import read_dump, write_dump

import oracles
from acceptance_log import report
from fixtures import planted_dump
from reference_rows import DF, STEERING_ROWS, deltas_with

GOLDEN = Path(__file__).parent / "golden"


def check(name, ok, detail):
    report(name, bool(ok), detail)
    assert ok, detail


def test_verifier_matches_oracle_and_bfs_plans_verify():
    t0 = time.perf_counter()
    mismatches = checked = 0
    for towers, held in oracles.configurations(4):
        s = oracles.to_state(4, towers, held)
        for a in all_actions(4):
            expected = oracles.tower_step(towers, held, a.kind, a.x, a.y)
            checked += 1
            if is_applicable(s, a) != (expected is not None):
                mismatches += 1
            elif expected is not None and apply(s, a) != oracles.to_state(4, *expected):
                mismatches += 1
            elif expected is None:
                try:
                    apply(s, a)
                    mismatches += 1
                except Inapplicable:
                    pass
    valid = sum(verify_plan(p, bfs_solve(p)).valid for p in (generate_puzzle(4, seed) for seed in range(100)))
    elapsed = time.perf_counter() - t0
    check(
        "verifier/oracle equivalence",
        mismatches == 0 and valid == 100 and elapsed < 60,
        f"{checked} state-action pairs, {mismatches} mismatches; {valid}/100 BFS plans valid; {elapsed:.1f}s",
    )


def _plan_lines(text):
    body = text[text.rindex("[PLAN]") + len("[PLAN]"):text.rindex("[PLAN END]")]
    return [ln.strip() for ln in body.strip().splitlines()]


def test_golden_round_trip():
    std_golden = (GOLDEN / "standard_example.txt").read_text()
    mys_golden = (GOLDEN / "mystery_example.txt").read_text()
    mystery1 = builtin_naming(1).with_swapped()
    std = render_example(EXAMPLE_PUZZLE, EXAMPLE_PLAN, IDENTITY, STANDARD_TEMPLATE)
    mys = render_example(EXAMPLE_PUZZLE, EXAMPLE_PLAN, mystery1, MYSTERY_TEMPLATE)
    ok_std = _plan_lines(std) == _plan_lines(std_golden)
    ok_mys = _plan_lines(mys) == _plan_lines(mys_golden)
    parsed = parse_plan(mys_golden, mystery1)
    check(
        "example golden round-trip",
        ok_std and ok_mys and parsed == EXAMPLE_PLAN,
        f"identity plan lines {'match' if ok_std else 'differ'}, mystery plan lines "
        f"{'match' if ok_mys else 'differ'}, parsed mystery plan {'==' if parsed == EXAMPLE_PLAN else '!='} canonical",
    )


def test_representation_oracles():
    rng = np.random.default_rng(2024)
    naming = builtin_naming(1)
    worst_rel, worst_sum, worst_perm = 0.0, 0.0, 0.0
    cases = 1000
    for case in range(cases):
        # extraction against a loop-based recomputation
        n_words = int(rng.integers(1, 5))
        starts = sorted(rng.choice(np.arange(1, 40, 4), size=n_words, replace=False))
        words = [(int(s), "pick-up", [" att", "ack"] if rng.random() < 0.5 else [" attack"]) for s in starts]
        dump, expected = planted_dump(words, 44, 6, seed=case)
        rep = extract(ExtractionSpec(naming, 1, 44, [dump], 44), "pick-up")
        oracle = oracles.brute_force_extract(dump.hidden(1), [span for _, span in expected])
        worst_rel = max(worst_rel, np.linalg.norm(rep.vector - oracle) / np.linalg.norm(oracle))
        # centering
        reps = {c: rng.standard_normal(6) * rng.uniform(0.1, 10) for c in CONCEPTS}
        out = center(reps)
        scale = max(np.linalg.norm(v) for v in reps.values())
        for members in (ACTIONS, PREDICATE_SLOTS):
            worst_sum = max(worst_sum, np.linalg.norm(sum(out[c].vector for c in members)) / scale)
        # cross-naming permutation invariance
        k = int(rng.integers(1, 15))
        vecs = {n: rng.standard_normal(6) for n in range(k)}
        perm = rng.permutation(k)
        a = cross_naming_average(vecs).vector
        b = cross_naming_average({int(perm[n]): vecs[n] for n in range(k)}).vector
        worst_perm = max(worst_perm, float(np.max(np.abs(a - b))))
    check(
        "extraction/centering/cross-naming oracles",
        worst_rel <= 1e-6 and worst_sum <= 1e-5 and worst_perm <= 1e-12,
        f"{cases} cases; max rel extraction error {worst_rel:.1e}, max centered-sum/scale {worst_sum:.1e}, "
        f"max permutation difference {worst_perm:.1e}",
    )


def test_norm_preservation():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10_000):
        h, v = rng.standard_normal(64) * rng.uniform(0.01, 50), rng.standard_normal(64) * rng.uniform(0.01, 50)
        out = steer_update(h, v, rng.uniform(0, 1))
        worst = max(worst, abs(np.linalg.norm(out) / np.linalg.norm(h) - 1))
    h, v = rng.standard_normal(64), rng.standard_normal(64)
    s1 = np.array_equal(steer_update(h, v, 1.0), h)
    full = steer_update(h, v, 0.0)
    s0 = np.allclose(full, v * (np.linalg.norm(h) / np.linalg.norm(v)), rtol=1e-12, atol=0)
    check(
        "norm preservation",
        worst <= 1e-6 and s1 and s0,
        f"10^4 triples, max relative norm error {worst:.1e}; s=1 identity {s1}; s=0 replacement {s0}",
    )


def test_intervention_locality():
    model = ToyTransformer(ToyConfig(layers=6, hidden_dim=32, heads=4, context=1024, seed=5))
    naming = builtin_naming(1)
    text = "attack Block A. feast Block B from Block C. succumb Block B. overcome Block A from Block B. " * 3
    ids = model.encode(text)
    toks = [model.token_str(i) for i in ids]
    _, clean = model.forward(ids)
    rng = np.random.default_rng(0)
    table = {c: rng.standard_normal(32) * 4 for c in CONCEPTS}
    failures, cases = [], 0
    for mode in ("steer", "replace", "subtract"):
        for L in (1, 3, 5):
            for p0 in (20, 97, 180):
                layers = [L] if mode == "steer" else list(range(L, 7))
                hook = InterventionHook(mode, table, layers, (p0, len(ids)), naming.surface_words(), toks,
                                        model.token_str, scale=0.5)
                _, hooked = model.forward(ids, hooks=[hook])
                cases += 1
                below = np.array_equal(hooked.hidden[:L], clean.hidden[:L])
                before = np.array_equal(hooked.hidden[:, :p0], clean.hidden[:, :p0])
                changed = hook.touches and not np.array_equal(hooked.hidden, clean.hidden)
                if not (below and before and changed):
                    failures.append((mode, L, p0))
    check(
        "intervention locality",
        not failures,
        f"{cases} hooked runs bit-identical below the hook layer and before the window start; failures {failures}",
    )


def test_reference_t_table_and_t_cdf():
    dt = dp = 0.0
    for k, (_, mean, se, t_ref, p_ref, _) in enumerate(STEERING_ROWS):
        res = one_sample_t(deltas_with(mean, se, seed=k))
        assert res.df == DF
        dt, dp = max(dt, abs(res.t - t_ref)), max(dp, abs(res.p - p_ref))

    def quad_cdf(df, t):
        c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
        half, _ = integrate.quad(lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2), 0, abs(t),
                                 epsabs=1e-13, epsrel=1e-13)
        return 0.5 + math.copysign(half, t)

    grid = [(df, t) for df in (1, 2, 5, 13, 40) for t in np.linspace(-5, 5, 10)]
    cdf_err = max(abs(t_cdf(df, t) - quad_cdf(df, t)) for df, t in grid)
    check(
        "t-test table reproduction",
        dt <= 0.02 and dp <= 0.003 and cdf_err <= 1e-6 and len(grid) == 50,
        f"{len(STEERING_ROWS)} rows, max |dt| {dt:.4f}, max |dp| {dp:.4f}; t_cdf vs quadrature on 50 points {cdf_err:.1e}",
    )


@pytest.mark.slow
def test_end_to_end_pipeline(tmp_path):
    t0 = time.perf_counter()
    cfg = ToyConfig()
    backend = ToyTransformer(cfg)
    namings = [1, 2]
    vector_seeds = list(range(1000, 1010))
    manifest = pipeline.ExperimentManifest.from_json({
        "mode": "steer",
        "namings": namings,
        "puzzle_seeds": {"start": 0, "count": 5},
        "vector_puzzle_seeds": vector_seeds,
        "backend": cfg.to_json(),
        "max_new_tokens": 16,
        "extraction_window": 1000,
        "specs": [
            {"name": f"L{L}-T{T}-s{tag}", "scale": s, "layers": [L], "timestamp": T}
            for L in (2, 6) for T in (1900, 2100) for s, tag in ((1.0, "1"), (2 / 3, "2/3"))
        ],
        "output_dir": str(tmp_path / "run"),
    })
    # 20 rollouts, written to disk and read back
    dumps = pipeline.vector_rollouts(manifest, backend)
    rollouts = sum(len(v) for v in dumps.values())
    reloaded = {}
    for nid, ds in dumps.items():
        reloaded[nid] = []
        for i, d in enumerate(ds):
            back = read_dump(write_dump(d, tmp_path / "dumps" / f"n{nid}_{i}.zip"))
            assert back.bit_equal(d)
            reloaded[nid].append(back)
    # extraction at two timestamps yields complete centered tables
    complete = all(
        centered_reps(reloaded[n], manifest.naming(n), 2, T, 1000, concepts) is not None
        for n in namings for T in (1900, 2100) for concepts in (ACTIONS, PREDICATE_SLOTS)
    )
    res = pipeline.run_manifest(manifest, vector_dumps=reloaded)
    ledger = res.ledger
    s1 = [r for r in ledger if r["condition"].endswith("s1")]
    steered = [r for r in ledger if r["condition"].endswith("s2/3")]
    equal_acc = all(
        res.accuracy[c][str(n)] == res.accuracy["baseline"][str(n)]
        for c in res.accuracy if c.endswith("s1") for n in namings
    )
    identical = all(r["same_as_baseline"] == 1 for r in s1)
    no_errors = not any(r["error"] for r in ledger)
    touched = all(r["touches"] > 0 for r in s1 + steered)
    elapsed = time.perf_counter() - t0
    check(
        "end-to-end toy pipeline",
        rollouts == 20 and complete and equal_acc and identical and no_errors and touched and elapsed < 600,
        f"{rollouts} rollouts dumped and reloaded; tables complete at T=1900,2100: {complete}; "
        f"{len(ledger)} ledger rows; s=1 accuracy == baseline: {equal_acc} (identical generations: {identical}); "
        f"{elapsed:.0f}s",
    )


def test_pca_sanity():
    rng = np.random.default_rng(11)
    direction = rng.standard_normal(5)
    line = [rng.standard_normal() * direction + 2.0 for _ in range(30)]
    ratio = pca_project(line, 1).explained_variance_ratio[0]
    X = rng.standard_normal((20, 6)) * rng.uniform(0.5, 5, size=6)
    full = pca_project(X, 6)
    centered = X - X.mean(axis=0)
    rel = np.linalg.norm(full.projected @ full.components - centered) / np.linalg.norm(centered)
    check(
        "PCA sanity",
        abs(ratio - 1.0) <= 1e-6 and rel <= 1e-5,
        f"collinear first ratio {ratio:.9f}; full-rank reconstruction rel error {rel:.1e}",
    )


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
