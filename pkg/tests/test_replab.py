import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluidreps.blocksworld import ACTIONS
from fluidreps.namings import PREDICATE_SLOTS, builtin_naming
from fluidreps.replab import (
    CENTERED,
    CROSS_NAMING,
    DegenerateInput,
    EmptySet,
    ExtractionSpec,
    IncompleteConceptSet,
    NoOccurrences,
    ZeroVector,
    center,
    centered_reps,
    convergence_curve,
    cosine,
    cross_naming_average,
    cross_naming_table,
    curve_csv,
    extract,
    pca_project,
)

import oracles
from fixtures import cycling_dump, planted_dump

N1 = builtin_naming(1)  # pick-up -> attack


def test_constant_vector_is_returned():
    c = np.array([1.5, -2.0, 0.25], dtype=np.float32)
    dump, _ = planted_dump([(3, "pick-up", [" att", "ack"]), (10, "pick-up", [" attack"])], 20, 3,
                           vector_at=lambda p, k: c)
    rep = extract(ExtractionSpec(N1, 1, 20, [dump], 20), "pick-up")
    assert np.allclose(rep.vector, c)
    assert rep.num_sequences == 2


def test_mean_of_sequence_means_not_grand_mean():
    dump, _ = planted_dump([(1, "pick-up", [" attack"]), (3, "pick-up", [" att", "ac", "k"])], 6, 1)
    dump.layers[1][:, 0] = [0, 2, 4, 6, 8, 10]
    rep = extract(ExtractionSpec(N1, 1, 6, [dump], 6), "pick-up")
    # sequence 1 covers positions 0-1 (mean 1), sequence 2 covers 2-5 (mean 7)
    assert rep.vector[0] == pytest.approx(4.0)
    assert rep.vector[0] != pytest.approx(5.0)  # grand mean over the 6 positions


def test_absent_word_raises():
    dump, _ = planted_dump([], 10, 2)
    with pytest.raises(NoOccurrences):
        extract(ExtractionSpec(N1, 1, 10, [dump], 10), "pick-up")


def test_spec_validation():
    dump, _ = planted_dump([], 10, 2)
    with pytest.raises(ValueError):
        ExtractionSpec(N1, 1, 5, [dump], 10)
    with pytest.raises(ValueError):
        ExtractionSpec(N1, 3, 10, [dump], 5)


@settings(max_examples=1000, deadline=None)
@given(st.data())
def test_extraction_matches_brute_force(data):
    seed = data.draw(st.integers(0, 2**31 - 1))
    n_dumps = data.draw(st.integers(1, 3))
    T = data.draw(st.integers(10, 60))
    w = data.draw(st.integers(1, T))
    rng = np.random.default_rng(seed)
    dumps, oracle_seqs = [], []
    for k in range(n_dumps):
        starts = sorted(rng.choice(np.arange(1, 58, 3), size=rng.integers(0, 6), replace=False))
        words = [(int(s), "pick-up", [" att", "ack"] if rng.random() < 0.5 else [" attack"]) for s in starts]
        words = [wd for wd in words if wd[0] + len(wd[2]) <= 60]
        dump, expected = planted_dump(words, 60, 5, seed=seed + k)
        H = dump.hidden(1)
        for (start, _, pieces), (_, span) in zip(words, expected):
            if T - w <= start and start + len(pieces) <= T:
                oracle_seqs.append((H, span))
        dumps.append(dump)
    spec = ExtractionSpec(N1, 1, T, dumps, w)
    if not oracle_seqs:
        with pytest.raises(NoOccurrences):
            extract(spec, "pick-up")
        return
    rep = extract(spec, "pick-up")
    assert rep.num_sequences == len(oracle_seqs)
    # oracle: stack each sequence's rows as a small matrix, then two-level mean with loops
    per_seq = [oracles.brute_force_extract(H, [span]) for H, span in oracle_seqs]
    expected = np.array([sum(col) / len(per_seq) for col in zip(*per_seq)])
    assert np.allclose(rep.vector, expected, rtol=1e-6, atol=1e-7 * np.abs(expected).max())


def _random_class(rng, concepts, d=6):
    return {c: rng.standard_normal(d) for c in concepts}


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_centering_sums_to_zero_and_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    reps = {**_random_class(rng, ACTIONS), **_random_class(rng, PREDICATE_SLOTS)}
    out = center(reps)
    scale = max(np.linalg.norm(v) for v in reps.values())
    for members in (ACTIONS, PREDICATE_SLOTS):
        assert np.linalg.norm(sum(out[c].vector for c in members)) <= 1e-5 * scale
    again = center(out)
    for c in out:
        assert np.allclose(again[c].vector, out[c].vector, atol=1e-12)
        assert out[c].kind == CENTERED


def test_centering_hand_case():
    reps = {"pick-up": [1.0, 0.0], "put-down": [0.0, 1.0], "stack": [3.0, 1.0], "unstack": [0.0, 2.0]}
    out = center(reps)  # class mean is (1, 1)
    assert out["pick-up"].vector.tolist() == [0.0, -1.0]
    assert out["put-down"].vector.tolist() == [-1.0, 0.0]
    assert out["stack"].vector.tolist() == [2.0, 0.0]
    assert out["unstack"].vector.tolist() == [-1.0, 1.0]


def test_centering_identical_and_incomplete():
    same = {c: np.ones(3) for c in ACTIONS}
    assert all(not np.any(r.vector) for r in center(same).values())
    with pytest.raises(IncompleteConceptSet):
        center({c: np.ones(3) for c in ACTIONS[:3]})


def test_cross_naming_cases():
    v = np.array([1.0, 2.0])
    assert np.array_equal(cross_naming_average({4: v}).vector, v)
    assert not np.any(cross_naming_average({1: v, 2: -v}).vector)
    vecs = {n: np.full(3, float(n)) for n in range(1, 16) if n != 3}
    r = cross_naming_average(vecs, "stack")
    assert np.allclose(r.vector, np.full(3, 117 / 14))  # (1 + ... + 15 - 3) / 14
    assert r.kind == CROSS_NAMING and r.num_sequences == 14
    with pytest.raises(EmptySet):
        cross_naming_average({})


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 14))
def test_cross_naming_is_permutation_invariant_and_linear(seed, k):
    rng = np.random.default_rng(seed)
    vecs = {n: rng.standard_normal(5) for n in range(k)}
    perm = rng.permutation(k)
    shuffled = {int(perm[n]): vecs[n] for n in range(k)}
    a = cross_naming_average(vecs).vector
    assert np.allclose(a, cross_naming_average(shuffled).vector, rtol=1e-12, atol=1e-12)
    alpha = rng.standard_normal()
    scaled = dict(vecs)
    scaled[0] = alpha * vecs[0]
    b = cross_naming_average(scaled).vector
    assert np.allclose(b - a, (alpha - 1) * vecs[0] / k, atol=1e-12)


def test_cross_naming_table_skips_missing():
    t = cross_naming_table({1: {"stack": np.ones(2)}, 2: {"stack": -np.ones(2), "unstack": np.ones(2)}})
    assert not np.any(t["stack"].vector)
    assert np.array_equal(t["unstack"].vector, np.ones(2))


def test_cosine_basics():
    v = np.array([3.0, -1.0, 2.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine(v, -v) == pytest.approx(-1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    with pytest.raises(ZeroVector):
        cosine(v, np.zeros(3))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-100, 100).filter(lambda x: abs(x) > 1e-3),
       st.floats(-100, 100).filter(lambda x: abs(x) > 1e-3))
def test_cosine_scale_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal(7), rng.standard_normal(7)
    assert cosine(a * u, b * v) == pytest.approx(np.sign(a * b) * cosine(u, v), abs=1e-9)


# ---- convergence curves ----------------------------------------------------------

def _rotating(naming, targets, noise, length=1200, seed=0):
    """Concept vectors turn from their noise direction toward their target as t grows."""

    def vec(pos, concept):
        theta = 0.5 * np.pi * pos / length
        return np.cos(theta) * noise[concept] + np.sin(theta) * targets[concept]

    return cycling_dump(naming, length, 16, spacing=20, seed=seed, vector_at=vec)[0]


def _orthogonal_tables(seed):
    rng = np.random.default_rng(seed)
    targets = {c: np.concatenate([rng.standard_normal(8), np.zeros(8)]) for c in ACTIONS}
    noise = {c: np.concatenate([np.zeros(8), rng.standard_normal(8)]) for c in ACTIONS}
    mean_t = np.mean(list(targets.values()), axis=0)
    return {c: v - mean_t for c, v in targets.items()}, noise


def test_curve_rises_toward_rotating_targets():
    targets, noise = _orthogonal_tables(0)
    namings = {1: builtin_naming(1), 2: builtin_naming(2)}
    dumps = {n: [_rotating(namings[n], targets, noise, seed=n)] for n in namings}
    rows = convergence_curve(dumps, namings, targets, layer=1, stride=100, window=100)
    assert rows
    for c in ACTIONS:
        same = [r.same_concept for r in rows if r.concept == c]
        assert len(same) == 12
        assert all(b >= a - 1e-9 for a, b in zip(same, same[1:]))
        assert same[-1] > same[0] + 0.3


def test_curve_against_itself_is_one():
    namings = {1: builtin_naming(1), 2: builtin_naming(2)}
    dumps = {n: [cycling_dump(namings[n], 400, 8, seed=n)[0]] for n in namings}
    T = 400
    ref = {n: centered_reps(dumps[n], namings[n], 1, T, 100) for n in namings}
    rows = convergence_curve({1: dumps[1]}, {1: namings[1]}, ref[1], layer=1, stride=400, window=100)
    assert [r.timestamp for r in rows] == [400] * 4
    assert all(r.same_concept == pytest.approx(1.0) for r in rows)
    assert curve_csv(rows).splitlines()[0] == "timestamp,concept,same_concept_sim,cross_concept_sim,namings"


def test_stride_longer_than_trace_gives_empty_table():
    namings = {1: builtin_naming(1)}
    dumps = {1: [cycling_dump(namings[1], 300, 4)[0]]}
    ref = {c: np.ones(4) for c in ACTIONS}
    assert convergence_curve(dumps, namings, ref, layer=1, stride=500) == []


# ---- PCA -------------------------------------------------------------------------

def test_collinear_points_have_ratio_one():
    rng = np.random.default_rng(0)
    direction = np.array([1.0, -2.0, 0.5])
    pts = [3.0 + t * direction for t in rng.standard_normal(20)]
    res = pca_project(pts, 2)
    assert res.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-6)
    assert abs(cosine(res.components[0], direction)) == pytest.approx(1.0)


def test_isotropic_cloud_against_closed_form_eigenvalues():
    rng = np.random.default_rng(12345)
    X = rng.standard_normal((4000, 2))
    res = pca_project(X, 2)
    assert np.all(np.abs(res.explained_variance_ratio - 0.5) <= 0.05)
    # oracle: eigenvalues of the 2x2 sample covariance from the quadratic formula
    Xc = X - X.mean(axis=0)
    a = float(Xc[:, 0] @ Xc[:, 0]) / (len(X) - 1)
    b = float(Xc[:, 0] @ Xc[:, 1]) / (len(X) - 1)
    c = float(Xc[:, 1] @ Xc[:, 1]) / (len(X) - 1)
    disc = np.sqrt(((a - c) / 2) ** 2 + b * b)
    lam = np.array([(a + c) / 2 + disc, (a + c) / 2 - disc])
    assert np.allclose(res.explained_variance_ratio, lam / lam.sum(), atol=1e-10)


def test_top_component_matches_power_iteration():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 6)) @ rng.standard_normal((6, 6))
    res = pca_project(X, 3)
    Xc = X - X.mean(axis=0)
    v, _ = oracles.power_iteration_top(Xc.T @ Xc / 49)
    assert abs(float(v @ res.components[0])) == pytest.approx(1.0, abs=1e-8)


def test_pca_contract():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((10, 5))
    res = pca_project(X, 4)
    assert np.allclose(res.components @ res.components.T, np.eye(4), atol=1e-10)
    r = res.explained_variance_ratio
    assert np.all(np.diff(r) <= 1e-12) and r.sum() <= 1 + 1e-12
    for i in range(4):
        j = np.argmax(np.abs(res.components[i]))
        assert res.components[i, j] > 0
    empty = pca_project(X, 0)
    assert empty.components.shape == (0, 5) and empty.projected.shape == (10, 0)
    with pytest.raises(ValueError):
        pca_project(X, 10)
    with pytest.raises(DegenerateInput):
        pca_project(np.ones((4, 3)), 1)


def test_full_rank_reconstruction():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((12, 5)) * 10
    res = pca_project(X, 5)
    centered = X - X.mean(axis=0)
    err = np.linalg.norm(res.projected @ res.components - centered) / np.linalg.norm(centered)
    assert err <= 1e-5
    assert np.allclose(res.reconstruct(), X)
