"""Beam search over a closed keyword set.

Four strategy axes combine freely: prefix-tree pruning (candidate tokens come
from the hypothesis's trie node instead of the whole vocabulary),
self-normalized scoring (raw energies as log-probabilities, no denominator),
and dropping any extension whose accumulated score already fell to the output
threshold.  Candidates compete in one global top-k per step; hypotheses whose
winning token is EOS move to the output set and stop consuming beam slots.

Per-token scores are always <= 0 (exact softmax by construction, self-norm by
clamping), so hypothesis scores only fall as paths grow; that monotonicity is
what makes early dropping lossless above the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels as K
from . import model as M
from .corpus import BOS_ID, EOS_ID
from .model import Parameters
from .trie import KeywordTrie
from . import trie as trie_mod

NEG_INF = float("-inf")


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 10
    score_threshold: float = NEG_INF
    use_trie: bool = True
    use_self_norm: bool = True
    use_drop_otf: bool = False
    max_steps: int = 32

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    """A partial decode path; BOS is implicit, score is a sum of log factors."""

    path: tuple[int, ...]
    score: float
    terminated: bool = False

    def extend(self, token: int, logp: float) -> "Hypothesis":
        if logp > 0:
            raise ValueError("per-token log score must be <= 0")
        return Hypothesis(self.path + (token,), self.score + logp, terminated=False)


@dataclass(frozen=True)
class DecodeResult:
    keyword: tuple[int, ...]
    score: float
    rank: int


@dataclass
class DecodeStats:
    """Instrumentation: how much scoring work a decode actually did."""

    score_evals: int = 0
    cell_updates: int = 0
    steps: int = 0


@dataclass
class _LiveSet:
    paths: list[tuple[int, ...]]
    scores: list[float]
    nodes: list[int]  # trie node handles; unused outside trie mode
    prev: np.ndarray  # (n,) token consumed next step
    h: list[np.ndarray]  # per layer (n, H)
    c: list[np.ndarray] | None
    out: np.ndarray  # (n, H)


def beam_search(
    params: Parameters,
    query: Sequence[int],
    trie: KeywordTrie | None,
    config: BeamConfig,
    stats: DecodeStats | None = None,
) -> list[DecodeResult]:
    """Decode a query into ranked keyword candidates.

    With ``use_trie`` every result is a member of the closed set.  Output is
    sorted by score descending, ties broken by ascending token order, at most
    ``beam_size`` entries, ranks starting at 1.
    """
    query = list(query)
    if not query:
        raise ValueError("query must be non-empty")
    if config.use_trie and trie is None:
        raise ValueError("trie mode requires a keyword trie")
    if not config.use_trie and trie is not None:
        raise ValueError("a trie was supplied but use_trie is off")

    cfg = params.config
    V = cfg.vocab_size
    B = config.beam_size
    s_min = config.score_threshold
    enc = M.encode(params, query)
    L = cfg.decoder_layers
    H = cfg.hidden_dim
    dtype = params.tensors["out.W"].dtype

    live = _LiveSet(
        paths=[()],
        scores=[0.0],
        nodes=[KeywordTrie.ROOT],
        prev=np.array([BOS_ID], dtype=np.int64),
        h=[np.zeros((1, H), dtype=dtype) for _ in range(L)],
        c=[np.zeros((1, H), dtype=dtype) for _ in range(L)] if cfg.cell_type == "lstm" else None,
        out=np.zeros((1, H), dtype=dtype),
    )
    finished: list[tuple[float, tuple[int, ...]]] = []
    steps = 0

    while live.paths and len(finished) < B and steps < config.max_steps:
        n = len(live.paths)
        new_h, new_c, out_new, feat, _ctx = M.step_states(
            params, live.prev, live.h, live.c, live.out, enc
        )
        if stats is not None:
            stats.cell_updates += n
            stats.steps += 1

        # Candidate selection.  Live hypotheses are kept in ascending
        # path-lexicographic order, and all live paths share one length, so
        # ordering candidates by (hypothesis index, token) equals ordering
        # by extended path; score ties therefore break exactly with a numpy
        # lexsort and no per-candidate python objects.
        k = B - len(finished)
        base_scores = np.asarray(live.scores, dtype=np.float64)
        if config.use_trie:
            nodes = np.asarray(live.nodes, dtype=np.int64)
            toks, children, hyp_idx, offsets = K.trie_flatten(
                nodes, trie.suffix_ptr, trie.suffix_tok, trie.suffix_child
            )
            if config.use_self_norm:
                raw = M.subset_scores(params, feat, toks, offsets)
                logp_flat = np.minimum(raw, 0.0)
                if stats is not None:
                    stats.score_evals += int(offsets[-1])
            else:
                scores = M.full_scores(params, feat)
                lse = K.logsumexp_rows(scores)
                logp_flat = scores[hyp_idx, toks] - lse[hyp_idx]
                if stats is not None:
                    stats.score_evals += n * V
            cand = base_scores[hyp_idx] + logp_flat
            if config.use_drop_otf:
                keep = cand > s_min
            else:
                keep = cand > NEG_INF
            if not keep.all():
                cand, hyp_idx = cand[keep], hyp_idx[keep]
                toks, children = toks[keep], children[keep]
        else:
            scores = M.full_scores(params, feat)
            if stats is not None:
                stats.score_evals += n * V
            if config.use_self_norm:
                logp = np.minimum(scores, 0.0)
            else:
                logp = scores - K.logsumexp_rows(scores)[:, None]
            dense = base_scores[:, None] + logp
            dense[:, BOS_ID] = NEG_INF
            if config.use_drop_otf:
                dense[~(dense > s_min)] = NEG_INF
            flat = dense.ravel()
            if flat.size > 4 * k + 64:
                # cheap pre-prune; >= keeps every exact tie for the lexsort
                thresh = np.partition(flat, flat.size - k)[flat.size - k]
                pos = np.nonzero(flat >= thresh)[0]
            else:
                pos = np.arange(flat.size)
            good = flat[pos] > NEG_INF
            pos = pos[good]
            cand = flat[pos]
            hyp_idx = pos // V
            toks = pos % V
            children = np.zeros(len(pos), dtype=np.int64)

        if len(cand) > k:
            order = np.lexsort((toks, hyp_idx, -cand))[:k]
            order = np.sort(order)  # restore (hyp, token) order for the live set
            cand, hyp_idx = cand[order], hyp_idx[order]
            toks, children = toks[order], children[order]

        next_paths: list[tuple[int, ...]] = []
        next_scores: list[float] = []
        next_nodes: list[int] = []
        next_prev: list[int] = []
        keep_rows: list[int] = []
        for score, j, tok, child in zip(cand.tolist(), hyp_idx.tolist(),
                                        toks.tolist(), children.tolist()):
            if tok == EOS_ID:
                finished.append((score, live.paths[j]))
                continue
            next_paths.append(live.paths[j] + (tok,))
            next_scores.append(score)
            next_nodes.append(child)
            next_prev.append(tok)
            keep_rows.append(j)

        if next_paths:
            idx = np.array(keep_rows, dtype=np.int64)
            live = _LiveSet(
                paths=next_paths,
                scores=next_scores,
                nodes=next_nodes,
                prev=np.array(next_prev, dtype=np.int64),
                h=[arr[idx] for arr in new_h],
                c=None if new_c is None else [arr[idx] for arr in new_c],
                out=out_new[idx],
            )
        else:
            live = _LiveSet([], [], [], np.empty(0, dtype=np.int64), [], None, np.empty((0, H)))
        steps += 1

    if not config.use_drop_otf and s_min != NEG_INF:
        finished = [(s, p) for s, p in finished if s > s_min]
    finished.sort(key=lambda sp: (-sp[0], sp[1]))
    return [
        DecodeResult(keyword=path, score=score, rank=i + 1)
        for i, (score, path) in enumerate(finished[:B])
    ]


def validity_fraction(results: Sequence[DecodeResult], trie: KeywordTrie) -> float:
    """Share of results that are actual keywords; empty output counts as 1."""
    if not results:
        return 1.0
    good = sum(1 for r in results if trie_mod.contains(trie, r.keyword))
    return good / len(results)
