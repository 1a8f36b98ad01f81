from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xrumour.corpus import Label, Reaction, Thread
from xrumour.tokenizer import (
    CLS,
    MASK,
    N_SPECIAL,
    PAD,
    SEP,
    SPECIAL_TOKENS,
    UNK,
    SepStyle,
    Vocabulary,
    encode_thread,
    mask_tokens,
    pieces,
    stack,
    train_subwords,
)


def thread(src, reactions=(), tid="t"):
    return Thread(tid, src, tuple(Reaction(r, i) for i, r in enumerate(reactions)), Label.RUMOUR, "en")


def brute_force_first_merge(texts):
    counts = Counter()
    for text in texts:
        for p in pieces(text):
            for a, b in zip(p, p[1:]):
                counts[(a, b)] += 1
    best = max(counts.values())
    return min(pair for pair, c in counts.items() if c == best)


# ---------------------------------------------------------------- training

def test_aaab_single_merge():
    # characters a, b and the leading space of the second word
    v = train_subwords([[thread("aaab aaab")]], 3 + 5 + 1)
    assert v.merges == [("a", "a")]
    assert len(v) == 9


@settings(max_examples=80, deadline=None)
@given(words=st.lists(st.text("abcd", min_size=1, max_size=6), min_size=1, max_size=8))
def test_first_merge_matches_brute_force(words):
    text = " ".join(words)
    texts = [text, ""]  # empty reaction string
    if all(len(p) < 2 for p in pieces(text)):
        return
    n_chars = len({ch for p in pieces(text) for ch in p})
    v = train_subwords([[thread(text)]], n_chars + N_SPECIAL + 1)
    assert v.merges[0] == brute_force_first_merge(texts)


def test_empty_corpora_rejected():
    with pytest.raises(ValueError):
        train_subwords([], 50)
    with pytest.raises(ValueError):
        train_subwords([[]], 50)


def test_vocab_size_too_small():
    with pytest.raises(ValueError):
        train_subwords([[thread("abc")]], 3 + N_SPECIAL)


def test_training_deterministic(tiny_splits):
    src, _ = tiny_splits
    a = train_subwords([src.train], 300, seed=1)
    b = train_subwords([src.train], 300, seed=1)
    assert a.merges == b.merges and a.tokens == b.tokens


def test_specials_distinct_and_never_merged():
    # "[PAD]" spelled out in text must not be produced by a merge
    v = train_subwords([[thread("[PAD] [PAD] [PAD] [UNK]")]], 60)
    assert tuple(v.tokens[:N_SPECIAL]) == SPECIAL_TOKENS
    assert len({PAD, UNK, CLS, SEP, MASK}) == 5
    merged = {a + b for a, b in v.merges}
    assert not merged & set(SPECIAL_TOKENS)
    assert all(i >= N_SPECIAL for i in v.encode_text("[PAD]"))


def test_ids_dense_bijection(tiny_vocab):
    assert sorted(tiny_vocab.token_to_id.values()) == list(range(len(tiny_vocab)))
    assert all(tiny_vocab.token_to_id[t] == i for i, t in enumerate(tiny_vocab.tokens))


def test_vocab_file_roundtrip(tmp_path, tiny_vocab):
    p = tmp_path / "vocab.txt"
    tiny_vocab.save(p)
    again = Vocabulary.load(p)
    assert again.merges == tiny_vocab.merges and again.tokens == tiny_vocab.tokens
    q = tmp_path / "again.txt"
    again.save(q)
    assert p.read_bytes() == q.read_bytes()


def test_vocab_file_with_awkward_tokens(tmp_path):
    v = train_subwords([[thread('a\\b "q" \\t a\\b')]], 30)
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt").tokens == v.tokens


def test_bad_vocab_file(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        Vocabulary.load(p)


# ---------------------------------------------------------------- encoding

def test_single_layout():
    v = train_subwords([[thread("a b c d")]], 12)
    seq = encode_thread(thread("a b", ["c d"]), v, 16)
    body = [CLS] + v.encode_text("a b") + [SEP] + v.encode_text("c d") + [SEP]
    assert seq.ids.tolist() == body + [PAD] * (16 - len(body))
    assert seq.attention_len == len(body)


def test_double_layout():
    v = train_subwords([[thread("a b c d")]], 12)
    seq = encode_thread(thread("a b", ["c d"]), v, 16, SepStyle.DOUBLE)
    body = [CLS] + v.encode_text("a b") + [SEP, SEP] + v.encode_text("c d") + [SEP]
    assert seq.ids.tolist()[: len(body)] == body


def test_truncation_budget():
    # seven characters + five specials, then the five " x" merges
    v = train_subwords([[thread("a b c d e f")]], 17)
    src = "a b c d e"
    assert len(v.encode_text(src)) == 5
    seq = encode_thread(thread(src, ["f"]), v, 8)
    assert len(seq.ids) == 8
    assert seq.ids[-1] == SEP and seq.attention_len == 8


def test_unknown_characters_map_to_unk(tiny_vocab):
    ids = tiny_vocab.encode_text("☃☃")
    assert ids == [UNK, UNK]


def test_max_seq_len_floor(tiny_vocab):
    with pytest.raises(ValueError):
        encode_thread(thread("x"), tiny_vocab, 7)


@settings(max_examples=60, deadline=None)
@given(src=st.lists(st.text("abcdef", min_size=1, max_size=7), min_size=1, max_size=20),
       reactions=st.lists(st.lists(st.text("abcdef", min_size=1, max_size=7), min_size=1, max_size=6), max_size=6),
       max_len=st.integers(8, 64), double=st.booleans())
def test_sequence_invariants_and_roundtrip(src, reactions, max_len, double):
    v = _abc_vocab()
    t = thread(" ".join(src), [" ".join(r) for r in reactions])
    seq = encode_thread(t, v, max_len, SepStyle.DOUBLE if double else SepStyle.SINGLE)
    ids = seq.ids.tolist()
    assert len(ids) == max_len
    assert ids[0] == CLS and SEP in ids
    last_sep = max(i for i, x in enumerate(ids) if x == SEP)
    assert all(x == PAD for x in ids[last_sep + 1 :])
    assert last_sep + 1 == seq.attention_len
    assert all(0 <= x < len(v) for x in ids)
    # decoding the source segment gives a prefix of the normalised source
    first_sep = ids.index(SEP)
    decoded_src = v.decode(ids[1:first_sep])
    full_src = " ".join(src)
    assert full_src.startswith(decoded_src)
    if first_sep - 1 < max_len - 3 - int(double):
        assert decoded_src == full_src
        react = v.decode([x for x in ids[first_sep:last_sep] if x != SEP])
        assert " ".join(" ".join(r) for r in reactions).startswith(react)


_ABC = {}


def _abc_vocab():
    if "v" not in _ABC:
        rng = np.random.default_rng(0)
        words = ["".join(rng.choice(list("abcdef"), size=rng.integers(1, 6))) for _ in range(300)]
        _ABC["v"] = train_subwords([[thread(" ".join(words))]], 80)
    return _ABC["v"]


def test_reactions_follow_timestamp_order(tiny_vocab):
    t = Thread("x", "a", (Reaction("late", 9), Reaction("early", 1)), None, "en")
    seq = encode_thread(t, tiny_vocab, 64)
    ids = seq.ids.tolist()
    react = tiny_vocab.decode(ids[ids.index(SEP) + 1 : seq.attention_len - 1])
    assert react == "early late"


# ---------------------------------------------------------------- masking

def _seq(tiny_vocab, tiny_corpus, k=0, max_len=384):
    return encode_thread(tiny_corpus.source[k], tiny_vocab, max_len)


def test_mask_excludes_specials(tiny_vocab, tiny_corpus):
    seq = _seq(tiny_vocab, tiny_corpus)
    corrupted, targets = mask_tokens(seq, 0.5, seed=3)
    for pos, orig in targets:
        assert seq.ids[pos] == orig and orig >= N_SPECIAL
        assert corrupted.ids[pos] == MASK
    untouched = set(range(len(seq.ids))) - {p for p, _ in targets}
    assert all(corrupted.ids[i] == seq.ids[i] for i in untouched)


def test_mask_almost_one_masks_everything(tiny_vocab, tiny_corpus):
    seq = _seq(tiny_vocab, tiny_corpus)
    _, targets = mask_tokens(seq, 1 - 1e-12, seed=0)
    assert len(targets) == int(np.sum(seq.ids >= N_SPECIAL))


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1])
def test_mask_prob_bounds(tiny_vocab, tiny_corpus, p):
    with pytest.raises(ValueError):
        mask_tokens(_seq(tiny_vocab, tiny_corpus), p)


def test_mask_deterministic(tiny_vocab, tiny_corpus):
    seq = _seq(tiny_vocab, tiny_corpus)
    assert mask_tokens(seq, 0.15, 4)[1] == mask_tokens(seq, 0.15, 4)[1]


def test_mask_rate(tiny_vocab, tiny_corpus):
    eligible = masked = 0
    k = 0
    while eligible < 10_000:
        seq = _seq(tiny_vocab, tiny_corpus, k % len(tiny_corpus.source))
        _, targets = mask_tokens(seq, 0.15, seed=k)
        eligible += int(np.sum(seq.ids >= N_SPECIAL))
        masked += len(targets)
        k += 1
    assert abs(masked / eligible - 0.15) <= 0.02


def test_stack_trims_to_longest(tiny_vocab, tiny_corpus):
    seqs = [_seq(tiny_vocab, tiny_corpus, k) for k in range(5)]
    ids, lengths = stack(seqs)
    assert ids.shape == (5, max(s.attention_len for s in seqs))
    assert lengths.tolist() == [s.attention_len for s in seqs]


def test_sequence_ids_read_only(tiny_vocab, tiny_corpus):
    seq = _seq(tiny_vocab, tiny_corpus)
    with pytest.raises(ValueError):
        seq.ids[0] = 5
