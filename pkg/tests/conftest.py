import numpy as np
import pytest

from kwgen import kernels
from kwgen.corpus import SyntheticSpec, build_vocab, encode_corpus, generate_synthetic
from kwgen.trie import build_trie

kernels.warmup()

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_dataset():
    """600 pairs, 60 keywords, half of them reachable as titles."""
    spec = SyntheticSpec(seed=7, num_pairs=600, keyword_count=60, overlap_fraction=0.5)
    pairs, keywords = generate_synthetic(spec)
    vocab = build_vocab(pairs, 512)
    corpus = encode_corpus(vocab, pairs)
    keyword_ids = [tuple(vocab.text_to_ids(k)) for k in keywords]
    trie = build_trie(keyword_ids)
    return {
        "pairs": pairs,
        "keywords": keywords,
        "vocab": vocab,
        "corpus": corpus,
        "keyword_ids": keyword_ids,
        "trie": trie,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
