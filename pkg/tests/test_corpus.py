import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwgen.corpus import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    ParallelPair,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    encode_corpus,
    encode_tokens,
    generate_synthetic,
    load_vocab,
    read_pairs,
    save_vocab,
    tokenize,
    write_pairs,
)


def test_tokenize_basic():
    assert tokenize("Red Shoes") == ["red", "shoes"]
    assert tokenize("") == []
    assert tokenize("  a   b ") == ["a", "b"]


def test_tokenize_unicode_whitespace():
    assert tokenize("a\tb\nc d") == ["a", "b", "c", "d"]


def test_build_vocab_counts():
    vocab = build_vocab([("a b", "a c")], max_size=10)
    assert set(vocab.id_to_token) == {"<s>", "<e>", "<unk>", "a", "b", "c"}
    assert vocab.size == 6
    # "a" is most frequent, so it gets the first non-reserved id
    assert vocab.token_to_id["a"] == 3


def test_build_vocab_truncates_by_frequency():
    vocab = build_vocab([("a a", "b")], max_size=4)
    assert vocab.size == 4
    assert "a" in vocab.token_to_id
    assert "b" not in vocab.token_to_id


def test_build_vocab_tie_break_lexicographic():
    vocab = build_vocab([("b a", "d c")], max_size=5)
    # all tokens appear once; ties break ascending
    assert vocab.id_to_token[3:] == ["a", "b"]


def test_build_vocab_reserved_only():
    vocab = build_vocab([("x y", "z")], max_size=3)
    assert vocab.id_to_token == ["<s>", "<e>", "<unk>"]
    assert encode_tokens(vocab, ["x"]) == [UNK_ID]


def test_build_vocab_rejects_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([], max_size=10)


def test_reserved_ids():
    vocab = build_vocab([("a", "b")], max_size=10)
    assert vocab.token_to_id["<s>"] == BOS_ID == 0
    assert vocab.token_to_id["<e>"] == EOS_ID == 1
    assert vocab.token_to_id["<unk>"] == UNK_ID == 2


def test_encode_tokens():
    vocab = build_vocab([("a", "a")], max_size=10)
    aid = vocab.token_to_id["a"]
    assert encode_tokens(vocab, ["a"]) == [aid]
    assert encode_tokens(vocab, ["zzz"]) == [UNK_ID]
    assert encode_tokens(vocab, []) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abcdefg", min_size=1, max_size=4), min_size=1, max_size=8))
def test_roundtrip_on_in_vocab_tokens(tokens):
    corpus = [(" ".join(tokens), " ".join(tokens))]
    vocab = build_vocab(corpus, max_size=64)
    ids = vocab.encode(tokens)
    assert vocab.decode(ids) == tokens


def test_build_vocab_deterministic():
    corpus = [("red shoes online", "buy red shoes"), ("blue hat", "blue hat shop")]
    v1 = build_vocab(corpus, 16)
    v2 = build_vocab(corpus, 16)
    assert v1.id_to_token == v2.id_to_token


def test_parallel_pair_validation():
    with pytest.raises(ValueError):
        ParallelPair(source=(), target=(3,))
    with pytest.raises(ValueError):
        ParallelPair(source=(3, BOS_ID), target=(4,))
    p = ParallelPair(source=(3, 4), target=(5,))
    assert p.source == (3, 4)


class TestSyntheticGenerator:
    def test_determinism(self):
        spec = SyntheticSpec(seed=7, num_pairs=200, keyword_count=30)
        assert generate_synthetic(spec) == generate_synthetic(spec)

    def test_different_seeds_differ(self):
        a = generate_synthetic(SyntheticSpec(seed=1, num_pairs=200, keyword_count=30))
        b = generate_synthetic(SyntheticSpec(seed=2, num_pairs=200, keyword_count=30))
        assert a != b

    def test_zero_overlap(self):
        pairs, keywords = generate_synthetic(
            SyntheticSpec(seed=3, num_pairs=300, keyword_count=40, overlap_fraction=0.0)
        )
        titles = {t for _, t in pairs}
        assert not titles & set(keywords)

    def test_full_overlap(self):
        pairs, keywords = generate_synthetic(
            SyntheticSpec(seed=4, num_pairs=800, keyword_count=50, overlap_fraction=1.0)
        )
        titles = {t for _, t in pairs}
        assert all(k in titles for k in keywords)

    def test_exact_overlap_count(self):
        pairs, keywords = generate_synthetic(
            SyntheticSpec(seed=5, num_pairs=600, keyword_count=60, overlap_fraction=0.5)
        )
        titles = {t for _, t in pairs}
        assert sum(1 for k in keywords if k in titles) == 30

    def test_keyword_tokens_covered_by_corpus(self):
        pairs, keywords = generate_synthetic(
            SyntheticSpec(seed=6, num_pairs=500, keyword_count=80, overlap_fraction=0.25)
        )
        corpus_tokens = set()
        for q, t in pairs:
            corpus_tokens.update(tokenize(q))
            corpus_tokens.update(tokenize(t))
        for k in keywords:
            assert set(tokenize(k)) <= corpus_tokens

    def test_rejects_zero_keywords(self):
        with pytest.raises(ValueError):
            SyntheticSpec(keyword_count=0)

    def test_rejects_bad_overlap(self):
        with pytest.raises(ValueError):
            SyntheticSpec(overlap_fraction=1.5)

    def test_titles_paraphrase_queries(self):
        pairs, _ = generate_synthetic(SyntheticSpec(seed=8, num_pairs=300, keyword_count=20))
        shared = 0
        for q, t in pairs:
            if set(tokenize(q)) & set(tokenize(t)):
                shared += 1
        # every pair shares at least the subject word
        assert shared == len(pairs)


def test_pair_file_roundtrip(tmp_path):
    pairs = [("red shoes", "buy red shoes"), ("blue hat", "blue hat shop")]
    path = tmp_path / "corpus.tsv"
    write_pairs(path, pairs)
    assert read_pairs(path) == pairs


def test_pair_file_rejects_missing_tab(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("no tab here\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_pairs(path)


def test_pair_file_title_hook(tmp_path):
    path = tmp_path / "corpus.tsv"
    write_pairs(path, [("q", "title - site.com")])
    pairs = read_pairs(path, preprocess_title=lambda t: t.split(" - ")[0])
    assert pairs == [("q", "title")]


def test_vocab_file_roundtrip(tmp_path):
    vocab = build_vocab([("red shoes", "buy red shoes")], max_size=10)
    path = tmp_path / "vocab.txt"
    save_vocab(vocab, path)
    loaded = load_vocab(path)
    assert loaded.id_to_token == vocab.id_to_token
    # ids are line numbers, reserved lines first
    lines = path.read_text().splitlines()
    assert lines[:3] == ["<s>", "<e>", "<unk>"]


def test_load_vocab_rejects_bad_header(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("a\nb\nc\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_vocab(path)


def test_encode_corpus_drops_empty_sides():
    vocab = build_vocab([("a", "b")], max_size=10)
    pairs = encode_corpus(vocab, [("a", "b"), ("", "b"), ("a", "   ")])
    assert len(pairs) == 1
