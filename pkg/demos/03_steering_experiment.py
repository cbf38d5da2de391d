"""A small steering experiment on the toy backend, scored and tested like the full runs."""

import tempfile

from fluidreps import pipeline

out = tempfile.mkdtemp()
manifest = pipeline.ExperimentManifest.from_json({
    "mode": "steer",
    "namings": [1, 2, 4],
    "puzzle_seeds": {"start": 0, "count": 2},
    "vector_puzzle_seeds": [50, 51],
    "backend": {"layers": 4, "hidden_dim": 32, "heads": 4},
    "max_new_tokens": 16,
    "extraction_window": 1000,
    "specs": [
        {"name": "s=1", "scale": 1.0, "layers": [2], "timestamp": 2000},
        {"name": "s=2/3 in-naming", "scale": 2 / 3, "layers": [2], "timestamp": 2000},
        {"name": "s=2/3 cross-naming", "scale": 2 / 3, "layers": [2], "timestamp": 2000,
         "vector_kind": "cross-naming"},
    ],
    "output_dir": out,
})
result = pipeline.run_manifest(manifest)

for cond, per in result.accuracy.items():
    print(f"{cond:20s}", per)
same = [r["same_as_baseline"] for r in result.ledger if r["condition"] == "s=1"]
print(f"\ns=1 generations identical to baseline: {all(same)}")
changed = sum(1 - r["same_as_baseline"] for r in result.ledger if r["condition"].startswith("s=2/3"))
print(f"s=2/3 cells whose generation changed: {changed}")
print(f"\nledger, accuracy and stats CSVs in {out}")
# random weights solve nothing, so every delta is zero and the t-test is undefined
print(result.stats_csv)
