import numpy as np
import pytest

from fluidreps.hooks import FunctionHook, RecordingHook, identity_hook
from fluidreps.toy import BOS, EOS, ContextOverflow, ToyConfig, ToyTransformer, decode, encode
from fluidreps.tracestore import read_dump, write_dump

CFG = ToyConfig(layers=4, hidden_dim=32, heads=4, context=256, seed=3)
PROMPT = "Block A is clear. I attack Block B."


@pytest.fixture(scope="module")
def model():
    return ToyTransformer(CFG)


def test_same_seed_same_logits(model):
    other = ToyTransformer(CFG)
    ids = encode(PROMPT)
    assert np.array_equal(model.forward(ids)[0], other.forward(ids)[0])


def test_different_seed_different_logits(model):
    other = ToyTransformer(ToyConfig(layers=4, hidden_dim=32, heads=4, context=256, seed=4))
    ids = encode(PROMPT)
    assert not np.allclose(model.forward(ids)[0], other.forward(ids)[0])


def test_config_validation():
    ToyConfig(hidden_dim=64, heads=4)
    with pytest.raises(ValueError):
        ToyConfig(hidden_dim=65, heads=4)
    with pytest.raises(ValueError):
        ToyConfig(layers=0)


def test_tokenizer_round_trip():
    ids = encode("héllo")
    assert ids[0] == BOS and decode(ids) == "héllo"
    assert decode([104, EOS]) == "h"


def test_identity_hooks_change_nothing(model):
    ids = encode(PROMPT)
    clean_logits, clean = model.forward(ids)
    hook = identity_hook(range(CFG.layers + 1), (0, len(ids)))
    logits, rec = model.forward(ids, hooks=[hook])
    assert np.array_equal(clean_logits, logits)
    assert np.array_equal(clean.hidden, rec.hidden)


def test_hooks_see_every_site_once(model):
    ids = encode(PROMPT)
    rec = RecordingHook(layers={1, 3}, window=(4, 9))
    model.forward(ids, hooks=[rec])
    assert sorted(rec.seen) == sorted((L, p) for L in (1, 3) for p in range(4, 9))


def test_zeroing_a_site_is_causal(model):
    ids = encode(PROMPT)
    _, clean = model.forward(ids)
    zero = FunctionHook(layers={3}, window=(5, 6), fn=lambda layer, pos, h, ctx: np.zeros_like(h))
    _, rec = model.forward(ids, hooks=[zero])
    assert not np.any(rec.layer(3)[5])
    assert np.array_equal(rec.hidden[:, :5], clean.hidden[:, :5])
    assert np.array_equal(rec.hidden[:3], clean.hidden[:3])
    assert not np.array_equal(rec.hidden[4, 6:], clean.hidden[4, 6:])


def test_input_perturbation_is_causal(model):
    a = encode(PROMPT)
    b = list(a)
    b[10] = (b[10] + 1) % 256
    _, ra = model.forward(a)
    _, rb = model.forward(b)
    assert np.array_equal(ra.hidden[:, :10], rb.hidden[:, :10])
    assert not np.array_equal(ra.hidden[:, 10], rb.hidden[:, 10])


def test_generation_is_deterministic_and_matches_forward(model):
    g1 = model.generate_greedy(PROMPT, 12)
    g2 = model.generate_greedy(PROMPT, 12)
    assert g1.token_ids == g2.token_ids
    assert np.array_equal(g1.record.hidden, g2.record.hidden)
    # incremental decoding with the cache equals a fresh full pass
    _, full = model.forward(g1.record.token_ids)
    assert np.allclose(full.hidden, g1.record.hidden, atol=1e-4)
    assert g1.text == decode(g1.new_ids)


def test_max_new_zero(model):
    g = model.generate_greedy(PROMPT, 0)
    assert g.new_ids == [] and g.text == ""


def test_context_overflow(model):
    with pytest.raises(ContextOverflow):
        model.forward([BOS] + [65] * CFG.context)
    g = model.generate_greedy([BOS] + [65] * (CFG.context - 2), 10)
    assert len(g.token_ids) <= CFG.context


def test_record_exports_to_dump(model, tmp_path):
    g = model.generate_greedy(PROMPT, 5)
    dump = g.record.to_dump("toy")
    assert dump.num_tokens == g.record.hidden.shape[1]
    assert dump.tokens[0] == "<bos>"
    back = read_dump(write_dump(dump, tmp_path / "d.zip"))
    assert back.bit_equal(dump)
    assert sorted(back.layers) == list(range(CFG.layers + 1))
