"""Toy rollouts -> activation dumps -> concept vectors, similarity curve and PCA."""

import tempfile
from pathlib import Path

import numpy as np

from fluidreps import pipeline, replab
from fluidreps.blocksworld import ACTIONS, generate_puzzle
from fluidreps.namings import builtin_naming
from fluidreps.toy import ToyConfig, ToyTransformer
from fluidreps.tracestore import read_dump, write_dump

backend = ToyTransformer(ToyConfig(layers=4, hidden_dim=32, heads=4))
namings = {n: builtin_naming(n) for n in (1, 2, 4)}
puzzles = [generate_puzzle(4, s) for s in range(3)]

tmp = Path(tempfile.mkdtemp())
dumps = {}
for nid, naming in namings.items():
    paths = [write_dump(d, tmp / f"n{nid}_{i}.zip")
             for i, d in enumerate(pipeline.rollout_dumps(backend, puzzles, naming, "mystery", 8))]
    dumps[nid] = [read_dump(p) for p in paths]
print(f"{sum(len(v) for v in dumps.values())} dumps in {tmp}, "
      f"{dumps[1][0].num_tokens} tokens x {dumps[1][0].hidden_dim} dims")

layer, T, w = 3, 2000, 1000
centered = {nid: replab.centered_reps(dumps[nid], namings[nid], layer, T, w) for nid in namings}
cross = replab.cross_naming_table(centered)
for c in ACTIONS:
    sims = [replab.cosine(centered[n][c], cross[c]) for n in namings]
    print(f"{c:9s} cosine to cross-naming vector per naming: {np.round(sims, 3)}")

rows = replab.convergence_curve(dumps, namings, cross, layer, stride=500, window=w)
print("\n" + replab.curve_csv(rows[:8]))

points = [centered[n][c].vector for n in namings for c in ACTIONS]
pca = replab.pca_project(points, 2)
print("explained variance ratios:", np.round(pca.explained_variance_ratio, 3))
