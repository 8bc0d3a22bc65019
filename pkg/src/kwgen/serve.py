"""Online-offline mixing: answer frequent queries from a precomputed store,
decode the long tail live.

Query traffic is heavily skewed, so the head of the distribution can be
decoded offline (with as large a model as desired) and served as a lookup,
while a small live model covers everything else.
"""

from __future__ import annotations

import json
import socketserver
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Vocabulary
from .decode import BeamConfig, DecodeResult, beam_search
from .model import Parameters
from .trie import KeywordTrie


@dataclass(frozen=True)
class FrequencyTable:
    counts: dict[str, int]
    total: int

    def share_of(self, queries: Iterable[str]) -> float:
        """Fraction of total volume the given queries account for."""
        if self.total == 0:
            return 0.0
        return sum(self.counts.get(q, 0) for q in queries) / self.total


def build_frequency_table(query_log: Iterable[str]) -> FrequencyTable:
    counts = Counter(query_log)
    return FrequencyTable(counts=dict(counts), total=sum(counts.values()))


def frequent_queries(table: FrequencyTable, threshold: int) -> list[str]:
    """Queries with count >= threshold, most frequent first (ties by text)."""
    if threshold < 1:
        raise ValueError("frequency threshold must be >= 1")
    picked = [(c, q) for q, c in table.counts.items() if c >= threshold]
    picked.sort(key=lambda cq: (-cq[0], cq[1]))
    return [q for _, q in picked]


def resolve_threshold(table: FrequencyTable, volume_share: float) -> int:
    """Smallest count threshold whose frequent set covers >= volume_share."""
    if not 0.0 < volume_share <= 1.0:
        raise ValueError("volume_share must lie in (0, 1]")
    if not table.counts:
        return 1
    levels = sorted(set(table.counts.values()), reverse=True)
    covered = 0
    for level in levels:
        covered += sum(c for c in table.counts.values() if c == level)
        if covered / table.total >= volume_share:
            return level
    return 1


def zipf_queries(unique_queries: Sequence[str], n_draws: int, s: float = 1.0, seed: int = 0) -> list[str]:
    """Synthetic power-law query log: P(rank r) ~ 1 / r**s over the given order."""
    if not unique_queries:
        raise ValueError("need at least one query")
    ranks = np.arange(1, len(unique_queries) + 1, dtype=np.float64)
    p = ranks**-s
    p /= p.sum()
    rng = np.random.default_rng(seed)
    draws = rng.choice(len(unique_queries), size=n_draws, p=p)
    return [unique_queries[i] for i in draws]


@dataclass
class PrecomputedStore:
    """query -> detokenized results, produced offline by a tagged model."""

    entries: dict[str, list[dict]] = field(default_factory=dict)
    model_tag: str = ""


def _results_to_dicts(results: Sequence[DecodeResult], vocab: Vocabulary) -> list[dict]:
    return [
        {"keyword": vocab.ids_to_text(r.keyword), "score": r.score, "rank": r.rank}
        for r in results
    ]


def precompute(
    queries: Sequence[str],
    params: Parameters,
    vocab: Vocabulary,
    trie: KeywordTrie,
    beam_config: BeamConfig,
    model_tag: str = "offline",
) -> tuple[PrecomputedStore, list[tuple[str, str]]]:
    """Decode every frequent query; failures become empty entries + a skip report."""
    store = PrecomputedStore(model_tag=model_tag)
    skipped: list[tuple[str, str]] = []
    for query in queries:
        ids = vocab.text_to_ids(query)
        if not ids:
            store.entries[query] = []
            skipped.append((query, "query tokenizes to nothing"))
            continue
        try:
            results = beam_search(params, ids, trie, beam_config)
        except Exception as exc:  # pragma: no cover - defensive
            store.entries[query] = []
            skipped.append((query, str(exc)))
            continue
        store.entries[query] = _results_to_dicts(results, vocab)
    return store, skipped


def save_store(store: PrecomputedStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for query, results in store.entries.items():
            f.write(json.dumps(
                {"query": query, "results": results, "model_tag": store.model_tag},
                ensure_ascii=False,
            ) + "\n")


def load_store(path: str | Path) -> PrecomputedStore:
    store = PrecomputedStore()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            store.entries[row["query"]] = row["results"]
            store.model_tag = row.get("model_tag", store.model_tag)
    return store


def save_frequency_table(table: FrequencyTable, path: str | Path) -> None:
    rows = sorted(table.counts.items(), key=lambda qc: (-qc[1], qc[0]))
    with open(path, "w", encoding="utf-8") as f:
        for query, count in rows:
            f.write(f"{query}\t{count}\n")


def load_frequency_table(path: str | Path) -> FrequencyTable:
    counts: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            query, count = line.rsplit("\t", 1)
            counts[query] = int(count)
    return FrequencyTable(counts=counts, total=sum(counts.values()))


OFFLINE_SOURCE = "offline-cache"
ONLINE_SOURCE = "online-decode"


def serve_request(
    query: str,
    store: PrecomputedStore,
    params: Parameters,
    vocab: Vocabulary,
    trie: KeywordTrie,
    beam_config: BeamConfig,
) -> tuple[list[dict], str]:
    """Store hit -> cached results; miss -> live decode with the online model."""
    cached = store.entries.get(query)
    if cached is not None:
        return cached, OFFLINE_SOURCE
    ids = vocab.text_to_ids(query)
    if not ids:
        return [], ONLINE_SOURCE
    results = beam_search(params, ids, trie, beam_config)
    return _results_to_dicts(results, vocab), ONLINE_SOURCE


class KeywordService:
    """Thread-safe request handler around an immutable store/model/trie."""

    def __init__(
        self,
        store: PrecomputedStore,
        params: Parameters,
        vocab: Vocabulary,
        trie: KeywordTrie,
        beam_config: BeamConfig,
    ) -> None:
        self.store = store
        self.params = params
        self.vocab = vocab
        self.trie = trie
        self.beam_config = beam_config
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def handle(self, query: str) -> dict:
        results, source = serve_request(
            query, self.store, self.params, self.vocab, self.trie, self.beam_config
        )
        with self._lock:
            if source == OFFLINE_SOURCE:
                self.hits += 1
            else:
                self.misses += 1
        return {
            "query": query,
            "results": [{"keyword": r["keyword"], "score": r["score"]} for r in results],
            "source": source,
        }

    def handle_line(self, line: str) -> dict:
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return {"error": f"malformed JSON: {exc}"}
        if not isinstance(request, dict) or not isinstance(request.get("query"), str):
            return {"error": 'request must be {"query": <string>}'}
        return self.handle(request["query"])


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        service: KeywordService = self.server.service  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            response = service.handle_line(line)
            self.wfile.write((json.dumps(response, ensure_ascii=False) + "\n").encode("utf-8"))
            self.wfile.flush()


class KeywordServer(socketserver.ThreadingTCPServer):
    """Line-delimited JSON over TCP; one response line per request line."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: KeywordService) -> None:
        super().__init__(address, _LineHandler)
        self.service = service

    @property
    def port(self) -> int:
        return self.server_address[1]


def start_server(service: KeywordService, host: str = "127.0.0.1", port: int = 0) -> KeywordServer:
    """Bind and serve in a background thread; caller shuts down via .shutdown()."""
    server = KeywordServer((host, port), service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
