import concurrent.futures

import numpy as np
import pytest

from kwgen.corpus import EOS_ID
from kwgen.decode import BeamConfig, DecodeResult, DecodeStats, Hypothesis, beam_search, validity_fraction
from kwgen.model import ModelConfig, init_params, sequence_logprob, zero_params
from kwgen.trie import build_trie, contains, iter_keywords

RED, SHOES, SHIRT, BLUE = 10, 11, 12, 13


@pytest.fixture()
def fixture_trie():
    return build_trie([[RED, SHOES], [RED, SHIRT], [BLUE, SHOES]])


@pytest.fixture()
def tiny_params():
    return init_params(ModelConfig(vocab_size=16, embed_dim=4, hidden_dim=6), 3)


def brute_force(params, query, trie):
    ranked = [(sequence_logprob(params, query, k), k) for k in iter_keywords(trie)]
    ranked.sort(key=lambda sk: (-sk[0], sk[1]))
    return ranked


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            BeamConfig(beam_size=0)
        with pytest.raises(ValueError):
            BeamConfig(max_steps=0)

    def test_trie_presence_checked(self, tiny_params, fixture_trie):
        with pytest.raises(ValueError):
            beam_search(tiny_params, [3], None, BeamConfig(use_trie=True))
        with pytest.raises(ValueError):
            beam_search(tiny_params, [3], fixture_trie, BeamConfig(use_trie=False))

    def test_empty_query_rejected(self, tiny_params, fixture_trie):
        with pytest.raises(ValueError):
            beam_search(tiny_params, [], fixture_trie, BeamConfig())


class TestHypothesis:
    def test_extension_monotone(self):
        h = Hypothesis(path=(3,), score=-1.0)
        h2 = h.extend(4, -0.5)
        assert h2.score == -1.5
        assert h2.path == (3, 4)
        with pytest.raises(ValueError):
            h.extend(4, 0.1)


class TestBeamSearch:
    def test_greedy_beam_one_valid(self, tiny_params, fixture_trie):
        config = BeamConfig(beam_size=1, use_trie=True, use_self_norm=True, max_steps=5)
        results = beam_search(tiny_params, [3, 4], fixture_trie, config)
        assert len(results) == 1
        assert contains(fixture_trie, results[0].keyword)

    def test_fixture_oracle_ranking(self, tiny_params, fixture_trie):
        config = BeamConfig(beam_size=10, use_trie=True, use_self_norm=False,
                            use_drop_otf=False, max_steps=4)
        results = beam_search(tiny_params, [3, 4], fixture_trie, config)
        brute = brute_force(tiny_params, [3, 4], fixture_trie)
        assert len(results) == 3
        for r, (score, kw) in zip(results, brute):
            assert r.keyword == kw
            assert r.score == pytest.approx(score, abs=1e-9)

    def test_threshold_zero_empties_output(self, tiny_params, fixture_trie):
        config = BeamConfig(beam_size=10, score_threshold=0.0, use_trie=True,
                            use_self_norm=True, use_drop_otf=True, max_steps=4)
        assert beam_search(tiny_params, [3], fixture_trie, config) == []

    def test_exactness_oracle(self, small_dataset):
        trie = small_dataset["trie"]
        vocab = small_dataset["vocab"]
        params = init_params(ModelConfig(vocab_size=vocab.size, embed_dim=8, hidden_dim=12), 5)
        query = small_dataset["corpus"][3].source
        config = BeamConfig(beam_size=trie.keyword_count, use_trie=True,
                            use_self_norm=False, use_drop_otf=False,
                            max_steps=trie.max_depth + 1)
        results = beam_search(params, query, trie, config)
        brute = brute_force(params, query, trie)
        assert len(results) == trie.keyword_count
        for r, (score, kw) in zip(results, brute):
            assert r.keyword == kw
            assert r.score == pytest.approx(score, abs=1e-9)

    def test_exactness_with_uniform_ties(self, small_dataset):
        trie = small_dataset["trie"]
        params = zero_params(ModelConfig(vocab_size=small_dataset["vocab"].size,
                                         embed_dim=4, hidden_dim=4))
        query = small_dataset["corpus"][0].source
        config = BeamConfig(beam_size=trie.keyword_count, use_trie=True,
                            use_self_norm=False, use_drop_otf=False,
                            max_steps=trie.max_depth + 1)
        results = beam_search(params, query, trie, config)
        brute = brute_force(params, query, trie)
        assert [r.keyword for r in results] == [kw for _, kw in brute]

    def test_drop_otf_soundness(self, small_dataset):
        trie = small_dataset["trie"]
        params = init_params(ModelConfig(vocab_size=small_dataset["vocab"].size,
                                         embed_dim=8, hidden_dim=12), 6)
        query = small_dataset["corpus"][1].source
        brute = brute_force(params, query, trie)
        s_min = float(np.median([s for s, _ in brute]))
        config = BeamConfig(beam_size=trie.keyword_count, score_threshold=s_min,
                            use_trie=True, use_self_norm=False, use_drop_otf=True,
                            max_steps=trie.max_depth + 1)
        got = {r.keyword for r in beam_search(params, query, trie, config)}
        assert got == {kw for s, kw in brute if s > s_min}

    def test_drop_otf_soundness_self_norm(self, small_dataset):
        # clamped self-norm scores are monotone too; compare against the
        # restricted-score brute force
        trie = small_dataset["trie"]
        params = init_params(ModelConfig(vocab_size=small_dataset["vocab"].size,
                                         embed_dim=8, hidden_dim=12), 8)
        query = small_dataset["corpus"][2].source
        free = BeamConfig(beam_size=trie.keyword_count, use_trie=True,
                          use_self_norm=True, use_drop_otf=False,
                          max_steps=trie.max_depth + 1)
        all_results = beam_search(params, query, trie, free)
        s_min = float(np.median([r.score for r in all_results]))
        dropped = BeamConfig(beam_size=trie.keyword_count, score_threshold=s_min,
                             use_trie=True, use_self_norm=True, use_drop_otf=True,
                             max_steps=trie.max_depth + 1)
        got = {r.keyword for r in beam_search(params, query, trie, dropped)}
        assert got == {r.keyword for r in all_results if r.score > s_min}

    def test_closed_set_guarantee_randomized(self, small_dataset):
        trie = small_dataset["trie"]
        V = small_dataset["vocab"].size
        rng = np.random.default_rng(0)
        for seed in range(25):
            params = init_params(ModelConfig(vocab_size=V, embed_dim=4, hidden_dim=6), seed)
            config = BeamConfig(beam_size=int(rng.integers(1, 60)),
                                use_trie=True,
                                use_self_norm=bool(rng.integers(2)),
                                use_drop_otf=False, max_steps=8)
            query = small_dataset["corpus"][seed].source
            for r in beam_search(params, query, trie, config):
                assert contains(trie, r.keyword)

    def test_output_sorted_with_ranks(self, small_dataset):
        trie = small_dataset["trie"]
        params = init_params(ModelConfig(vocab_size=small_dataset["vocab"].size,
                                         embed_dim=8, hidden_dim=12), 9)
        config = BeamConfig(beam_size=20, use_trie=True, use_self_norm=True, max_steps=8)
        results = beam_search(params, small_dataset["corpus"][4].source, trie, config)
        assert [r.rank for r in results] == list(range(1, len(results) + 1))
        for a, b in zip(results, results[1:]):
            assert a.score > b.score or (a.score == b.score and a.keyword < b.keyword)
        assert all(r.score <= 0 for r in results)

    def test_termination_on_max_steps(self, tiny_params):
        config = BeamConfig(beam_size=4, use_trie=False, use_self_norm=False,
                            use_drop_otf=False, max_steps=3)
        stats = DecodeStats()
        beam_search(tiny_params, [3], None, config, stats=stats)
        assert stats.steps <= 3

    def test_work_bound_fixture(self, tiny_params, fixture_trie):
        # restricted scoring touches exactly the valid suffixes, never V
        stats = DecodeStats()
        config = BeamConfig(beam_size=5, use_trie=True, use_self_norm=True,
                            use_drop_otf=False, max_steps=4)
        beam_search(tiny_params, [3], fixture_trie, config, stats=stats)
        # step 1: root has 2 children; step 2: {shoes,shirt} + {shoes}; step 3: EOS x3
        assert stats.score_evals == 8
        assert stats.cell_updates == 6

    def test_baseline_counts_full_vocab(self, tiny_params, fixture_trie):
        stats = DecodeStats()
        config = BeamConfig(beam_size=3, use_trie=False, use_self_norm=False,
                            use_drop_otf=False, max_steps=2)
        beam_search(tiny_params, [3], None, config, stats=stats)
        assert stats.score_evals == stats.cell_updates * 16

    def test_non_trie_junk(self, small_dataset):
        trie = small_dataset["trie"]
        params = init_params(ModelConfig(vocab_size=small_dataset["vocab"].size,
                                         embed_dim=8, hidden_dim=12), 10)
        config = BeamConfig(beam_size=40, use_trie=False, use_self_norm=False,
                            use_drop_otf=False, max_steps=12)
        results = []
        for pair in small_dataset["corpus"][:10]:
            results.extend(beam_search(params, pair.source, None, config))
        valid = sum(1 for r in results if contains(trie, r.keyword))
        assert valid < max(1, len(results) // 2)

    def test_concurrent_sessions_identical(self, small_dataset, tiny_params):
        trie = small_dataset["trie"]
        params = init_params(ModelConfig(vocab_size=small_dataset["vocab"].size,
                                         embed_dim=8, hidden_dim=12), 11)
        config = BeamConfig(beam_size=10, use_trie=True, use_self_norm=True, max_steps=8)
        query = small_dataset["corpus"][5].source
        expected = beam_search(params, query, trie, config)
        with concurrent.futures.ThreadPoolExecutor(4) as pool:
            futures = [pool.submit(beam_search, params, query, trie, config) for _ in range(8)]
            for f in futures:
                assert f.result() == expected


class TestValidityFraction:
    def test_arithmetic(self, fixture_trie):
        results = [DecodeResult((RED, SHOES), -1.0, 1), DecodeResult((RED,), -2.0, 2),
                   DecodeResult((3, 4), -3.0, 3), DecodeResult((BLUE, SHOES), -4.0, 4)]
        assert validity_fraction(results, fixture_trie) == 0.5

    def test_vacuous(self, fixture_trie):
        assert validity_fraction([], fixture_trie) == 1.0

    def test_trie_mode_always_one(self, small_dataset):
        trie = small_dataset["trie"]
        params = init_params(ModelConfig(vocab_size=small_dataset["vocab"].size,
                                         embed_dim=8, hidden_dim=12), 12)
        config = BeamConfig(beam_size=15, use_trie=True, use_self_norm=True, max_steps=8)
        for pair in small_dataset["corpus"][:5]:
            results = beam_search(params, pair.source, trie, config)
            assert validity_fraction(results, trie) == 1.0
