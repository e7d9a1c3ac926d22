from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texthawk_kit import vocab as V
from texthawk_kit.config import RunConfig
from texthawk_kit.grounding import BBox, encode_bbox
from texthawk_kit.numeric.rng import Rng
from texthawk_kit.packing import (
    Sample,
    Turn,
    format_conversation,
    load_pack,
    pack,
    read_jsonl,
    record_to_sample,
    save_pack,
    visibility_mask,
)
from texthawk_kit.pipeline import TextHawk
from texthawk_kit.verify import packing_equivalence, random_sample

TOY = RunConfig().toy()


@pytest.fixture(scope="module")
def model():
    return TextHawk(TOY)


def plain(n, seed=0):
    toks = np.asarray(Rng(seed).generator().integers(8, 100, n), np.int64)
    resp = np.zeros(n, bool)
    resp[n // 2:] = True
    return Sample(toks, resp, np.zeros(n, bool), np.zeros(0))


# ---- formatting ------------------------------------------------------------------

def test_single_turn_counts():
    s = format_conversation([Turn([10, 11, 12], [20, 21])])
    assert len(s) == 3 + 2 + 4 + 2
    assert s.tokens.tolist() == [V.USER, V.BOS, 10, 11, 12, V.EOS, V.ASSISTANT, V.BOS, 20, 21, V.EOS]
    assert s.response_mask.sum() == 3
    assert s.tokens[s.response_mask].tolist() == [20, 21, V.EOS]


def test_two_turns_disjoint_union():
    t1, t2 = Turn([10], [20, 21]), Turn([11, 12], [22])
    a, b = format_conversation([t1]), format_conversation([t2])
    both = format_conversation([t1, t2])
    np.testing.assert_array_equal(both.tokens, np.concatenate([a.tokens, b.tokens]))
    np.testing.assert_array_equal(both.response_mask, np.concatenate([a.response_mask, b.response_mask]))


def test_coord_mask_marks_only_bins():
    b = BBox(0.1, 0.2, 0.3, 0.4)
    s = format_conversation([Turn([V.IMAGE, 10], [20] + encode_bbox(b))])
    box_start = 7 + 1  # header, then one plain response token
    assert np.flatnonzero(s.coord_mask).tolist() == [box_start + i for i in (1, 2, 4, 5)]
    np.testing.assert_allclose(s.coord_targets, [0.1005, 0.2005, 0.3005, 0.4005])


def test_explicit_coord_values_kept():
    b = BBox(0.1, 0.2, 0.3, 0.4)
    s = format_conversation([Turn([10], encode_bbox(b), list(b.as_tuple()))])
    np.testing.assert_array_equal(s.coord_targets, [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ValueError):
        format_conversation([Turn([10], encode_bbox(b), [0.1])])


def test_format_errors():
    with pytest.raises(ValueError):
        format_conversation([])
    with pytest.raises(ValueError):
        Turn([1], [])


# ---- packing -------------------------------------------------------------------------

def test_greedy_examples():
    samples = [plain(10), plain(20), plain(100)]
    with pytest.raises(ValueError):
        pack(samples, 32)
    # 10 + 20 + 100 = 130, so 128 slots need a second pack and 130 fit exactly
    assert [p.sample_ids for p in pack(samples, 128)] == [[0, 1], [2]]
    packs = pack(samples, 130)
    assert len(packs) == 1
    assert packs[0].sample_spans == [(0, 10), (10, 30), (30, 130)]
    two = pack(samples[:2], 32)
    assert len(two) == 1 and two[0].sample_spans == [(0, 10), (10, 30)]
    assert np.all(two[0].tokens[30:] == V.PAD)


def test_first_fit_spills_to_new_pack():
    packs = pack([plain(20), plain(20), plain(10)], 32)
    assert [p.sample_ids for p in packs] == [[0, 2], [1]]


def test_exact_fit_no_padding():
    p = pack([plain(16)], 16)[0]
    assert p.sample_spans == [(0, 16)] and p.used == 16 and not np.any(p.tokens == V.PAD)


def test_positions_restart_and_weights_zero_outside_response():
    s1, s2 = plain(6, 1), plain(8, 2)
    p = pack([s1, s2], 20)[0]
    assert p.position_indices[:14].tolist() == list(range(6)) + list(range(8))
    assert np.all(p.loss_weights[14:] == 0)
    assert np.all(p.loss_weights[:3] == 0) and np.all(p.loss_weights[6:10] == 0)


def test_visibility_mask_structure():
    m = visibility_mask([(0, 3), (3, 5)], 7)
    want = np.zeros((7, 7), bool)
    want[:3, :3] = np.tril(np.ones((3, 3), bool))
    want[3:5, 3:5] = np.tril(np.ones((2, 2), bool))
    want[5, 5] = want[6, 6] = True
    np.testing.assert_array_equal(m, want)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=12), st.integers(40, 80), st.integers(0, 2**32))
def test_no_token_loss_and_partition(lengths, max_len, seed):
    samples = [plain(n, i) for i, n in enumerate(lengths)]
    packs = pack(samples, max_len, seed=seed)
    got = Counter()
    ids = []
    for p in packs:
        start = 0
        for (s, e), sid in zip(p.sample_spans, p.sample_ids):
            assert s == start and e - s == len(samples[sid])
            np.testing.assert_array_equal(p.tokens[s:e], samples[sid].tokens)
            start = e
        assert np.all(p.tokens[p.used:] == V.PAD)
        got.update(p.tokens[:p.used].tolist())
        ids += p.sample_ids
    want = Counter()
    for s in samples:
        want.update(s.tokens.tolist())
    assert got == want
    assert sorted(ids) == list(range(len(samples)))


def test_seeded_packing_deterministic():
    samples = [plain(n, n) for n in (5, 9, 13, 3, 7, 11, 2)]
    a = [p.sample_ids for p in pack(samples, 20, seed=42)]
    b = [p.sample_ids for p in pack(samples, 20, seed=42)]
    c = [p.sample_ids for p in pack(samples, 20, seed=43)]
    assert a == b
    assert sorted(sum(c, [])) == list(range(7))


# ---- model-level equivalence ------------------------------------------------------

def test_packed_forward_matches_unpacked(model):
    gen = Rng(0).child("eq").generator()
    samples = [random_sample(gen) for _ in range(3)]
    r = packing_equivalence(model, samples, sum(map(len, samples)) + 5)
    assert r["max_logit_diff"] <= 1e-5
    assert r["loss_diff"] <= 1e-5


def test_mutual_invisibility(model):
    gen = Rng(1).child("inv").generator()
    samples = [random_sample(gen) for _ in range(3)]
    batch = pack(samples, sum(map(len, samples)) + 4)[0]
    base = model.forward(batch).logits.data
    mask = batch.attention_mask()
    for j, (s, e) in enumerate(batch.sample_spans):
        outside = np.ones(batch.max_len, bool)
        outside[s:e] = False
        assert not mask[np.ix_(outside, ~outside)].any()
        assert not mask[np.ix_(~outside, outside)].any()
        pert = batch.tokens.copy()
        pert[s:e] = np.where(pert[s:e] == V.IMAGE, V.IMAGE, (pert[s:e] + 7) % 100 + 8)
        batch2 = type(batch)(**{**batch.__dict__, "tokens": pert})
        out = model.forward(batch2).logits.data
        diff = np.abs(out - base).max(axis=1)
        assert np.all(diff[outside] == 0)
        assert diff[s:e].max() > 1e-5


# ---- files ---------------------------------------------------------------------------

def test_record_to_sample_with_boxes():
    rec = {"turns": [{"instruction": "<image>find cat", "response": "cat at <box>"},
                     {"instruction": "and dog", "response": "<box>"}],
           "boxes": [{"x0": 0.1, "y0": 0.2, "x1": 0.5, "y1": 0.6}, [0, 0, 1, 1]]}
    s = record_to_sample(rec, image_tokens=4)
    assert (s.tokens == V.IMAGE).sum() == 4
    assert s.coord_mask.sum() == 8
    np.testing.assert_array_equal(s.coord_targets, [0.1, 0.2, 0.5, 0.6, 0, 0, 1, 1])
    with pytest.raises(ValueError):
        record_to_sample({"turns": rec["turns"], "boxes": rec["boxes"][:1]})


def test_read_jsonl_errors(tmp_path):
    f = tmp_path / "d.jsonl"
    f.write_text('{"turns": []}\n\nnot json\n')
    with pytest.raises(ValueError, match=":3:"):
        read_jsonl(f)


def test_pack_file_round_trip(tmp_path):
    gen = Rng(2).generator()
    samples = [random_sample(gen) for _ in range(3)]
    p = pack(samples, 200, seed=1)[0]
    save_pack(p, tmp_path / "pack0")
    q = load_pack(tmp_path / "pack0")
    for name in ("tokens", "loss_weights", "position_indices", "coord_positions", "coord_targets"):
        np.testing.assert_allclose(getattr(q, name), getattr(p, name), rtol=1e-7)
    assert q.sample_spans == p.sample_spans and q.sample_ids == p.sample_ids
    np.testing.assert_array_equal(q.attention_mask(), p.attention_mask())
