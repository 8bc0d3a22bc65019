"""Generative keyword retrieval for a closed target set.

Trains a small attention-based encoder-decoder on query/title pairs and
decodes queries directly into a fixed keyword inventory with a prefix-tree
constrained beam search.  Self-normalized training lets the decoder skip the
softmax denominator, and a threshold can drop doomed hypotheses on the fly.
"""

__version__ = "0.1.0"

from .corpus import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    ParallelPair,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    encode_tokens,
    generate_synthetic,
    tokenize,
)
from .decode import BeamConfig, DecodeResult, DecodeStats, Hypothesis, beam_search, validity_fraction
from .model import (
    ModelConfig,
    Parameters,
    attend,
    decode_step,
    encode,
    init_params,
    load_params,
    restricted_log_probs,
    save_params,
    sequence_logprob,
)
from .training import TrainHyper, loss_and_grads, train
from .trie import KeywordTrie, build_trie, layer_stats

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "UNK_ID",
    "BeamConfig",
    "DecodeResult",
    "DecodeStats",
    "Hypothesis",
    "KeywordTrie",
    "ModelConfig",
    "ParallelPair",
    "Parameters",
    "SyntheticSpec",
    "TrainHyper",
    "Vocabulary",
    "attend",
    "beam_search",
    "build_trie",
    "build_vocab",
    "decode_step",
    "encode",
    "encode_tokens",
    "generate_synthetic",
    "init_params",
    "layer_stats",
    "load_params",
    "loss_and_grads",
    "restricted_log_probs",
    "save_params",
    "sequence_logprob",
    "tokenize",
    "train",
    "validity_fraction",
]
