import numpy as np
import pytest

from kwgen import kernels
from kwgen.bench import (
    STRATEGIES,
    BenchReport,
    compare_backends,
    default_max_steps,
    environment_descriptor,
    run_timing,
    run_validity,
    strategy_config,
    write_validity_csv,
)
from kwgen.decode import BeamConfig, beam_search
from kwgen.model import ModelConfig, init_params


@pytest.fixture()
def bench_stack(small_dataset):
    vocab = small_dataset["vocab"]
    params = init_params(ModelConfig(vocab_size=vocab.size, embed_dim=8, hidden_dim=12), 4)
    queries = [c.source for c in small_dataset["corpus"][:20]]
    return params, small_dataset["trie"], queries


def test_strategy_registry():
    assert set(STRATEGIES) == {"baseline", "SN", "TP", "SN+TP", "SN+TP+DropOTF"}
    cfg = strategy_config("SN+TP+DropOTF", 8, 10, -2.0)
    assert cfg.use_trie and cfg.use_self_norm and cfg.use_drop_otf
    assert cfg.score_threshold == -2.0
    cfg2 = strategy_config("SN+TP", 8, 10, -2.0)
    assert cfg2.score_threshold == float("-inf")
    with pytest.raises(ValueError):
        strategy_config("magic", 8, 10, -2.0)


def test_default_max_steps(small_dataset):
    assert default_max_steps(small_dataset["trie"]) == 2 * small_dataset["trie"].max_depth + 2


def test_run_timing_report(bench_stack, tmp_path):
    params, trie, queries = bench_stack
    report = run_timing(params, trie, queries, [4], ["baseline"], repetitions=2, warmup=1)
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row["strategy"] == "baseline"
    assert row["beam_size"] == 4
    assert row["mean_decode_ms"] > 0
    assert row["query_count"] == len(queries)
    assert "kernel backend" in report.environment

    csv_path = tmp_path / "timing.csv"
    report.write_csv(csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "strategy,beam_size,mean_decode_ms,query_count"
    assert lines[1].startswith("baseline,4,")
    json_path = tmp_path / "timing.json"
    report.write_json(json_path)
    assert json_path.exists()
    assert report.cell("baseline", 4) is row
    with pytest.raises(KeyError):
        report.cell("baseline", 999)


def test_run_timing_validation(bench_stack):
    params, trie, _ = bench_stack
    with pytest.raises(ValueError):
        run_timing(params, trie, [], [4], ["baseline"])


def test_trie_strategies_do_less_scoring(bench_stack):
    params, trie, queries = bench_stack
    report = run_timing(params, trie, queries[:5], [6], ["baseline", "SN+TP"],
                        repetitions=1, warmup=0)
    base = report.cell("baseline", 6)
    sntp = report.cell("SN+TP", 6)
    assert sntp["score_evals"] < base["score_evals"]


def test_timing_repeatability(bench_stack):
    params, trie, queries = bench_stack
    a = run_timing(params, trie, queries, [8], ["SN+TP"], repetitions=5, warmup=2)
    b = run_timing(params, trie, queries, [8], ["SN+TP"], repetitions=5, warmup=2)
    ms_a = a.cell("SN+TP", 8)["mean_decode_ms"]
    ms_b = b.cell("SN+TP", 8)["mean_decode_ms"]
    assert abs(ms_a - ms_b) / max(ms_a, ms_b) < 0.2


def test_drop_subset_of_filtered(bench_stack, small_dataset):
    # with B >= keyword_count the drop column is exactly the filtered SN+TP set
    params, trie, queries = bench_stack
    s_min = -8.0
    B = trie.keyword_count
    steps = trie.max_depth + 1
    for q in queries[:4]:
        full = beam_search(params, q, trie,
                           strategy_config("SN+TP", B, steps, s_min))
        dropped = beam_search(params, q, trie,
                              strategy_config("SN+TP+DropOTF", B, steps, s_min))
        assert {r.keyword for r in dropped} == {r.keyword for r in full if r.score > s_min}


def test_run_validity_curve(bench_stack, tmp_path):
    params, trie, queries = bench_stack
    curve = run_validity(params, trie, queries[:6], [4, 8])
    assert [b for b, _ in curve] == [4, 8]
    assert all(0.0 <= v <= 1.0 for _, v in curve)
    path = tmp_path / "validity.csv"
    write_validity_csv(curve, path)
    assert path.read_text().splitlines()[0] == "beam_size,validity_fraction"


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not available")
def test_compare_backends(bench_stack):
    params, trie, queries = bench_stack
    rows = compare_backends(params, trie, queries[:5], beam_size=4, repetitions=1, warmup=1)
    assert [r["backend"] for r in rows] == ["numba", "numpy"]
    assert all(r["mean_decode_ms"] > 0 for r in rows)
    assert kernels.active_backend() == "numba"


def test_environment_descriptor():
    desc = environment_descriptor()
    assert "numpy" in desc and "python" in desc
