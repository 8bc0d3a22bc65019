"""Token-keyed prefix tree over the closed keyword set.

The tree is the decoding constraint: a hypothesis may only extend with the
children of its current node, and may only stop where a node is terminal.
Terminality is surfaced as an EOS pseudo-child so the beam search treats
"stop here" exactly like any other candidate token.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, UNK_ID

_EOS_ARRAY = np.array([EOS_ID], dtype=np.int64)
_EMPTY = np.empty(0, dtype=np.int64)


@dataclass
class KeywordTrie:
    """Prefix tree; nodes are integer handles into parallel arrays.

    Immutable once built (``build_trie`` freezes per-node suffix arrays);
    share freely across decode sessions.  Callers must treat the arrays
    returned by ``suffixes_at`` as read-only.
    """

    children: list[dict[int, int]] = field(default_factory=lambda: [{}])
    terminal: list[bool] = field(default_factory=lambda: [False])
    keyword_count: int = 0
    max_depth: int = 0
    # CSR view over (node -> valid suffixes), built by _freeze: row for node n
    # is suffix_tok[suffix_ptr[n]:suffix_ptr[n+1]], ascending, with EOS first
    # at terminal nodes; suffix_child holds the child handle (-1 for EOS)
    suffix_ptr: np.ndarray | None = None
    suffix_tok: np.ndarray | None = None
    suffix_child: np.ndarray | None = None

    ROOT = 0

    def _insert(self, keyword: Sequence[int]) -> None:
        node = self.ROOT
        for tok in keyword:
            nxt = self.children[node].get(tok)
            if nxt is None:
                nxt = len(self.children)
                self.children[node][tok] = nxt
                self.children.append({})
                self.terminal.append(False)
            node = nxt
        if not self.terminal[node]:
            self.terminal[node] = True
            self.keyword_count += 1
            self.max_depth = max(self.max_depth, len(keyword))

    def _freeze(self) -> None:
        n_nodes = len(self.children)
        ptr = np.zeros(n_nodes + 1, dtype=np.int64)
        for node in range(n_nodes):
            ptr[node + 1] = ptr[node] + len(self.children[node]) + int(self.terminal[node])
        tok = np.empty(ptr[-1], dtype=np.int64)
        child = np.empty(ptr[-1], dtype=np.int64)
        for node in range(n_nodes):
            pos = ptr[node]
            if self.terminal[node]:
                tok[pos] = EOS_ID
                child[pos] = -1
                pos += 1
            for t in sorted(self.children[node]):
                tok[pos] = t
                child[pos] = self.children[node][t]
                pos += 1
        self.suffix_ptr, self.suffix_tok, self.suffix_child = ptr, tok, child

    def walk(self, path: Sequence[int]) -> int:
        """Node handle reached by following path from the root, or -1."""
        node = self.ROOT
        for tok in path:
            node = self.children[node].get(tok, -1)
            if node < 0:
                return -1
        return node

    def suffixes_at(self, node: int) -> np.ndarray:
        """Valid next tokens at a node handle, ascending, EOS iff terminal."""
        if node < 0:
            return _EMPTY
        if self.suffix_ptr is not None:
            return self.suffix_tok[self.suffix_ptr[node] : self.suffix_ptr[node + 1]]
        kids = sorted(self.children[node])
        if self.terminal[node]:
            return np.concatenate((_EOS_ARRAY, np.array(kids, dtype=np.int64)))
        return np.array(kids, dtype=np.int64)

    def step(self, node: int, tok: int) -> int:
        if node < 0:
            return -1
        return self.children[node].get(tok, -1)


def build_trie(keywords: Iterable[Sequence[int]]) -> KeywordTrie:
    """Build the tree; duplicates collapse, reserved ids are rejected."""
    trie = KeywordTrie()
    count = 0
    for kw in keywords:
        count += 1
        if not len(kw):
            raise ValueError("keywords must be non-empty token sequences")
        if any(int(t) in (BOS_ID, EOS_ID, UNK_ID) for t in kw):
            raise ValueError(f"keyword {list(kw)} contains a reserved token id")
        trie._insert([int(t) for t in kw])
    if count == 0:
        raise ValueError("closed keyword set must be non-empty")
    trie._freeze()
    return trie


def valid_suffixes(trie: KeywordTrie, path: Sequence[int]) -> np.ndarray:
    """Token ids that may follow ``path``; empty when the path leaves the tree.

    EOS is included exactly when the reached node is terminal, so walking a
    full keyword always offers EOS.  Ids come back sorted ascending (EOS
    first, since EOS_ID=1 precedes every corpus token).
    """
    return trie.suffixes_at(trie.walk(path))


def contains(trie: KeywordTrie, keyword: Sequence[int]) -> bool:
    if not len(keyword):
        return False
    node = trie.walk(keyword)
    return node >= 0 and trie.terminal[node]


def iter_keywords(trie: KeywordTrie) -> list[tuple[int, ...]]:
    """All root-to-terminal paths, depth-first in ascending token order."""
    out: list[tuple[int, ...]] = []

    def rec(node: int, prefix: tuple[int, ...]) -> None:
        if trie.terminal[node]:
            out.append(prefix)
        for tok in sorted(trie.children[node]):
            rec(trie.children[node][tok], prefix + (tok,))

    rec(trie.ROOT, ())
    return out


def layer_stats(trie: KeywordTrie) -> list[tuple[int, float]]:
    """Mean valid-suffix count per depth, EOS counted at terminal nodes."""
    if trie.keyword_count == 0:
        raise ValueError("layer_stats needs a non-empty trie")
    level = [trie.ROOT]
    stats: list[tuple[int, float]] = []
    depth = 0
    while level:
        total = 0
        nxt: list[int] = []
        for node in level:
            total += len(trie.children[node]) + (1 if trie.terminal[node] else 0)
            nxt.extend(trie.children[node].values())
        stats.append((depth, total / len(level)))
        level = nxt
        depth += 1
    return stats


def write_layer_stats_csv(stats: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["depth", "avg_suffixes"])
        for depth, avg in stats:
            writer.writerow([depth, f"{avg:.6g}"])


def format_layer_stats(stats: Sequence[tuple[int, float]]) -> str:
    lines = ["depth,avg_suffixes"]
    lines += [f"{depth},{avg:.6g}" for depth, avg in stats]
    return "\n".join(lines) + "\n"
