"""Benchmark harness: decode-time matrix per strategy/beam, validity curve,
and a numba-vs-numpy backend comparison for the hot kernels.

Timing protocol: per cell, warm-up passes first (also absorbing JIT
compilation), then the mean per-query wall time of each repetition, reported
as the median of those means.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .decode import BeamConfig, DecodeStats, beam_search, validity_fraction
from .model import Parameters
from .trie import KeywordTrie
from .trie import contains as trie_contains

# strategy name -> (use_trie, use_self_norm, use_drop_otf)
STRATEGIES: dict[str, tuple[bool, bool, bool]] = {
    "baseline": (False, False, False),
    "SN": (False, True, False),
    "TP": (True, False, False),
    "SN+TP": (True, True, False),
    "SN+TP+DropOTF": (True, True, True),
}


def strategy_config(
    name: str, beam_size: int, max_steps: int, score_threshold: float
) -> BeamConfig:
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; known: {sorted(STRATEGIES)}")
    use_trie, use_self_norm, use_drop_otf = STRATEGIES[name]
    return BeamConfig(
        beam_size=beam_size,
        score_threshold=score_threshold if use_drop_otf else float("-inf"),
        use_trie=use_trie,
        use_self_norm=use_self_norm,
        use_drop_otf=use_drop_otf,
        max_steps=max_steps,
    )


def default_max_steps(trie: KeywordTrie) -> int:
    # bounds runaway generation on untrained models in non-trie mode
    return 2 * trie.max_depth + 2


def environment_descriptor() -> str:
    import numpy

    parts = [
        platform.platform(),
        f"python {platform.python_version()}",
        f"numpy {numpy.__version__}",
        f"kernel backend {kernels.active_backend()}",
    ]
    if kernels.NUMBA_AVAILABLE:
        import numba

        parts.insert(3, f"numba {numba.__version__}")
    return ", ".join(parts)


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    environment: str = ""

    def cell(self, strategy: str, beam_size: int) -> dict:
        for row in self.rows:
            if row["strategy"] == strategy and row["beam_size"] == beam_size:
                return row
        raise KeyError(f"no cell for {strategy} at beam {beam_size}")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["strategy", "beam_size", "mean_decode_ms", "query_count"])
            for row in self.rows:
                writer.writerow([
                    row["strategy"], row["beam_size"],
                    f"{row['mean_decode_ms']:.6g}", row["query_count"],
                ])

    def write_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"environment": self.environment, "rows": self.rows}, f, indent=2)
            f.write("\n")


def _time_cell(
    params: Parameters,
    trie: KeywordTrie | None,
    queries: Sequence[Sequence[int]],
    config: BeamConfig,
    repetitions: int,
    warmup: int,
) -> tuple[float, DecodeStats]:
    stats = DecodeStats()
    for _ in range(warmup):
        for q in queries:
            beam_search(params, q, trie, config)
    means = []
    for _ in range(repetitions):
        start = time.perf_counter()
        for q in queries:
            beam_search(params, q, trie, config, stats=stats)
        means.append((time.perf_counter() - start) / len(queries))
    return float(np.median(means) * 1000.0), stats


def run_timing(
    params: Parameters,
    trie: KeywordTrie,
    queries: Sequence[Sequence[int]],
    beam_sizes: Sequence[int],
    strategies: Sequence[str],
    score_threshold: float = -6.0,
    repetitions: int = 5,
    warmup: int = 2,
    max_steps: int | None = None,
) -> BenchReport:
    """Wall-clock decode-time matrix; the query set is shared across cells."""
    if not queries:
        raise ValueError("need at least one query")
    if repetitions < 1 or warmup < 0:
        raise ValueError("repetitions must be >= 1 and warmup >= 0")
    steps = default_max_steps(trie) if max_steps is None else max_steps
    report = BenchReport(environment=environment_descriptor())
    for strategy in strategies:
        for beam in beam_sizes:
            config = strategy_config(strategy, beam, steps, score_threshold)
            cell_trie = trie if config.use_trie else None
            ms, stats = _time_cell(params, cell_trie, queries, config, repetitions, warmup)
            report.rows.append({
                "strategy": strategy,
                "beam_size": int(beam),
                "mean_decode_ms": ms,
                "query_count": len(queries),
                "score_evals": stats.score_evals,
                "cell_updates": stats.cell_updates,
            })
    return report


def run_validity(
    params: Parameters,
    trie: KeywordTrie,
    queries: Sequence[Sequence[int]],
    beam_sizes: Sequence[int],
    max_steps: int | None = None,
) -> list[tuple[int, float]]:
    """Fraction of unconstrained beam-search outputs that are keywords.

    Pooled over the whole query set (total valid / total produced) so queries
    that produce nothing do not count as vacuously valid; an all-empty sweep
    reports 1.0.
    """
    if not queries:
        raise ValueError("need at least one query")
    steps = default_max_steps(trie) if max_steps is None else max_steps
    curve = []
    for beam in beam_sizes:
        config = strategy_config("baseline", beam, steps, float("-inf"))
        total = 0
        valid = 0
        for q in queries:
            results = beam_search(params, q, None, config)
            total += len(results)
            valid += sum(1 for r in results if trie_contains(trie, r.keyword))
        curve.append((int(beam), valid / total if total else 1.0))
    return curve


def write_validity_csv(curve: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["beam_size", "validity_fraction"])
        for beam, fraction in curve:
            writer.writerow([beam, f"{fraction:.6g}"])


def compare_backends(
    params: Parameters,
    trie: KeywordTrie,
    queries: Sequence[Sequence[int]],
    beam_size: int = 20,
    strategy: str = "SN+TP",
    score_threshold: float = -6.0,
    repetitions: int = 3,
    warmup: int = 1,
    max_steps: int | None = None,
) -> list[dict]:
    """Time the same decode workload on every available kernel backend."""
    steps = default_max_steps(trie) if max_steps is None else max_steps
    config = strategy_config(strategy, beam_size, steps, score_threshold)
    cell_trie = trie if config.use_trie else None
    original = kernels.active_backend()
    rows = []
    try:
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            ms, _ = _time_cell(params, cell_trie, queries, config, repetitions, warmup)
            rows.append({
                "backend": backend,
                "strategy": strategy,
                "beam_size": beam_size,
                "mean_decode_ms": ms,
                "query_count": len(queries),
            })
    finally:
        kernels.set_backend(original)
    return rows
