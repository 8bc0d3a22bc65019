"""Attention encoder-decoder: parameters, forward inference, and scoring.

The decoder exposes two scoring paths.  ``decode_step`` returns raw energies
for the whole vocabulary (exact softmax needs the full row for its
denominator).  ``decode_step_restricted`` evaluates only a caller-supplied
candidate set, which is the point of self-normalized training: with the
partition function pushed to 1, the raw energies act as log-probabilities and
nothing else has to be computed.

Everything is float64; ``Parameters.astype`` exists for optional float32
inference.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels as K
from .corpus import BOS_ID, EOS_ID

MAGIC = b"EGRM"
FORMAT_VERSION = 1

CELL_TYPES = ("gru", "lstm")
ATTENTION_KINDS = ("additive", "dot")


@dataclass(frozen=True)
class ModelConfig:
    cell_type: str = "gru"
    encoder_layers: int = 1
    decoder_layers: int = 1
    residual: bool = False
    embed_dim: int = 32
    hidden_dim: int = 64
    attention_kind: str = "additive"
    vocab_size: int = 512

    def __post_init__(self) -> None:
        if self.cell_type not in CELL_TYPES:
            raise ValueError(f"cell_type must be one of {CELL_TYPES}")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ValueError(f"attention_kind must be one of {ATTENTION_KINDS}")
        for name in ("encoder_layers", "decoder_layers", "embed_dim", "hidden_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if (self.encoder_layers > 1 or self.decoder_layers > 1) and not self.residual:
            raise ValueError("residual connections are required when any stack has >= 2 layers")

    @property
    def feature_dim(self) -> int:
        # score features: previous-token embedding ++ decoder output ++ context
        return self.embed_dim + 2 * self.hidden_dim

    @property
    def attention_dim(self) -> int:
        return self.hidden_dim


def _cell_tensor_specs(cell: str, in_dim: int, hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    if cell == "gru":
        return [
            ("Wg", (in_dim, 2 * hidden)),
            ("Ug", (hidden, 2 * hidden)),
            ("bg", (2 * hidden,)),
            ("Wc", (in_dim, hidden)),
            ("Uc", (hidden, hidden)),
            ("bc", (hidden,)),
        ]
    return [
        ("Wx", (in_dim, 4 * hidden)),
        ("Wh", (hidden, 4 * hidden)),
        ("b", (4 * hidden,)),
    ]


def tensor_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared tensor names and shapes, in serialization order."""
    E, H, V = config.embed_dim, config.hidden_dim, config.vocab_size
    specs: list[tuple[str, tuple[int, ...]]] = [("embedding", (V, E))]
    for layer in range(config.encoder_layers):
        in_dim = E if layer == 0 else H
        for name, shape in _cell_tensor_specs(config.cell_type, in_dim, H):
            specs.append((f"enc{layer}.{name}", shape))
    for layer in range(config.decoder_layers):
        in_dim = E + H if layer == 0 else H
        for name, shape in _cell_tensor_specs(config.cell_type, in_dim, H):
            specs.append((f"dec{layer}.{name}", shape))
    if config.attention_kind == "additive":
        A = config.attention_dim
        specs.append(("att.We", (H, A)))
        specs.append(("att.Wd", (H, A)))
        specs.append(("att.b", (A,)))
        specs.append(("att.v", (A,)))
    specs.append(("out.W", (V, config.feature_dim)))
    specs.append(("out.b", (V,)))
    return specs


@dataclass
class Parameters:
    """All learnable tensors, keyed by declaration order."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def init_params(config: ModelConfig, seed: int) -> Parameters:
    """Xavier-uniform matrices (vectors use fan_out=1), zero biases."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_specs(config):
        base = name.rsplit(".", 1)[-1]
        if base in ("bg", "bc", "b") or name in ("att.b", "out.b"):
            tensors[name] = np.zeros(shape)
        elif len(shape) == 1:
            bound = np.sqrt(6.0 / (shape[0] + 1))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        else:
            fan_in, fan_out = shape[0], shape[1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return Parameters(config=config, tensors=tensors)


def zero_params(config: ModelConfig) -> Parameters:
    return Parameters(config, {n: np.zeros(s) for n, s in tensor_specs(config)})


@dataclass
class EncoderStates:
    """Top-of-stack hidden vector per source position (M of them)."""

    states: np.ndarray  # (M, H)
    attn_pre: np.ndarray | None = None  # states @ att.We, cached for additive attention

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class DecoderState:
    """Per-layer recurrent state plus the post-residual stack output."""

    h: np.ndarray  # (L, H)
    c: np.ndarray | None  # (L, H) for LSTM
    out: np.ndarray  # (H,)


@dataclass
class AttentionResult:
    context: np.ndarray  # (H,)
    weights: np.ndarray  # (M,), non-negative, sums to 1


def _run_cell(params: Parameters, prefix: str, x, h, c):
    t = params.tensors
    if params.config.cell_type == "gru":
        hn, r, z, cand = K.gru_step(
            x, h, t[f"{prefix}.Wg"], t[f"{prefix}.Ug"], t[f"{prefix}.bg"],
            t[f"{prefix}.Wc"], t[f"{prefix}.Uc"], t[f"{prefix}.bc"],
        )
        return hn, None
    hn, cn, gi, gf, go, gu = K.lstm_step(x, h, c, t[f"{prefix}.Wx"], t[f"{prefix}.Wh"], t[f"{prefix}.b"])
    return hn, cn


def encode(params: Parameters, source: Sequence[int]) -> EncoderStates:
    """Run the encoder stack over a token-id sequence (zero initial state)."""
    cfg = params.config
    source = list(source)
    if not source:
        raise ValueError("cannot encode an empty source sequence")
    if any(not 0 <= t < cfg.vocab_size for t in source):
        raise ValueError("source token id out of vocabulary range")
    M, H = len(source), cfg.hidden_dim
    x_seq = params.tensors["embedding"][source]  # (M, E)
    dtype = x_seq.dtype
    for layer in range(cfg.encoder_layers):
        prefix = f"enc{layer}"
        h = np.zeros((1, H), dtype=dtype)
        c = np.zeros((1, H), dtype=dtype) if cfg.cell_type == "lstm" else None
        states = np.empty((M, H), dtype=dtype)
        for t in range(M):
            h, c = _run_cell(params, prefix, x_seq[t : t + 1], h, c)
            states[t] = h[0]
        if layer >= 1 and cfg.residual:
            x_seq = states + x_seq
        else:
            x_seq = states
    attn_pre = x_seq @ params.tensors["att.We"] if cfg.attention_kind == "additive" else None
    return EncoderStates(states=x_seq, attn_pre=attn_pre)


def init_decoder_state(params: Parameters) -> DecoderState:
    cfg = params.config
    L, H = cfg.decoder_layers, cfg.hidden_dim
    dtype = params.tensors["embedding"].dtype
    c = np.zeros((L, H), dtype=dtype) if cfg.cell_type == "lstm" else None
    return DecoderState(h=np.zeros((L, H), dtype=dtype), c=c, out=np.zeros(H, dtype=dtype))


def _attend_rows(params: Parameters, query_rows: np.ndarray, enc: EncoderStates):
    t = params.tensors
    if params.config.attention_kind == "additive":
        if enc.attn_pre is None:
            enc.attn_pre = enc.states @ t["att.We"]
        ctx, alpha, _ = K.attn_additive(query_rows, enc.states, enc.attn_pre, t["att.Wd"], t["att.b"], t["att.v"])
    else:
        ctx, alpha = K.attn_dot(query_rows, enc.states)
    return ctx, alpha


def attend(params: Parameters, state: DecoderState, enc: EncoderStates) -> AttentionResult:
    ctx, alpha = _attend_rows(params, state.out.reshape(1, -1), enc)
    return AttentionResult(context=ctx[0], weights=alpha[0])


def step_states(
    params: Parameters,
    prev_ids: np.ndarray,
    h_layers: list[np.ndarray],
    c_layers: list[np.ndarray] | None,
    out_prev: np.ndarray,
    enc: EncoderStates,
):
    """Advance n decoder states one step after consuming ``prev_ids``.

    Returns (new h per layer, new c per layer or None, stack output, score
    features, attention context).  Attention queries the previous stack
    output, matching a decoder that attends before consuming the token.
    """
    cfg = params.config
    emb = params.tensors["embedding"][prev_ids]
    ctx, _alpha = _attend_rows(params, out_prev, enc)
    x = np.concatenate((emb, ctx), axis=1)
    new_h: list[np.ndarray] = []
    new_c: list[np.ndarray] = []
    for layer in range(cfg.decoder_layers):
        inp = x
        hn, cn = _run_cell(params, f"dec{layer}", inp, h_layers[layer],
                           None if c_layers is None else c_layers[layer])
        new_h.append(hn)
        if cn is not None:
            new_c.append(cn)
        x = hn + inp if (layer >= 1 and cfg.residual) else hn
    feat = np.concatenate((emb, x, ctx), axis=1)
    return new_h, (new_c if c_layers is not None else None), x, feat, ctx


def full_scores(params: Parameters, feat: np.ndarray) -> np.ndarray:
    return K.scores_rows(feat, params.tensors["out.W"], params.tensors["out.b"])


def subset_scores(params: Parameters, feat: np.ndarray, ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    return K.scores_subset(feat, params.tensors["out.W"], params.tensors["out.b"], ids, offsets)


def _state_to_rows(state: DecoderState):
    L = state.h.shape[0]
    h_layers = [state.h[l].reshape(1, -1) for l in range(L)]
    c_layers = None if state.c is None else [state.c[l].reshape(1, -1) for l in range(L)]
    return h_layers, c_layers


def _rows_to_state(new_h, new_c, out_row) -> DecoderState:
    h = np.vstack([r[0] for r in new_h])
    c = None if new_c is None else np.vstack([r[0] for r in new_c])
    return DecoderState(h=h, c=c, out=out_row[0].copy())


def decode_step(
    params: Parameters, prev_token: int, state: DecoderState, enc: EncoderStates
) -> tuple[DecoderState, np.ndarray]:
    """Consume one token; return the new state and raw energies over the vocab."""
    if not 0 <= prev_token < params.config.vocab_size:
        raise ValueError("prev_token out of vocabulary range")
    h_layers, c_layers = _state_to_rows(state)
    prev = np.array([prev_token], dtype=np.int64)
    new_h, new_c, out_rows, feat, _ = step_states(params, prev, h_layers, c_layers,
                                                  state.out.reshape(1, -1), enc)
    scores = full_scores(params, feat)[0]
    return _rows_to_state(new_h, new_c, out_rows), scores


def decode_step_restricted(
    params: Parameters, prev_token: int, state: DecoderState, enc: EncoderStates, allowed: np.ndarray
) -> tuple[DecoderState, np.ndarray]:
    """Like decode_step but only evaluates energies for ``allowed`` ids."""
    h_layers, c_layers = _state_to_rows(state)
    prev = np.array([prev_token], dtype=np.int64)
    new_h, new_c, out_rows, feat, _ = step_states(params, prev, h_layers, c_layers,
                                                  state.out.reshape(1, -1), enc)
    ids = np.asarray(allowed, dtype=np.int64)
    offsets = np.array([0, len(ids)], dtype=np.int64)
    raw = subset_scores(params, feat, ids, offsets)
    return _rows_to_state(new_h, new_c, out_rows), raw


def restricted_log_probs(scores: np.ndarray, allowed, mode: str) -> dict[int, float]:
    """Per-token log scores for a candidate set.

    exact_softmax: log-softmax over the full vocabulary, restricted.
    self_norm: raw energies taken as log-probabilities (log Z ~ 0), clamped
    to <= 0 so accumulated hypothesis scores stay monotone non-increasing.
    """
    allowed = list(allowed)
    if not allowed:
        raise ValueError("allowed set must be non-empty")
    if mode == "exact_softmax":
        lse = K.logsumexp_rows(scores.reshape(1, -1))[0]
        return {int(w): float(scores[w] - lse) for w in allowed}
    if mode == "self_norm":
        return {int(w): float(min(scores[w], 0.0)) for w in allowed}
    raise ValueError(f"unknown scoring mode {mode!r}")


def sequence_logprob(params: Parameters, source: Sequence[int], target: Sequence[int]) -> float:
    """Exact teacher-forced log P(target | source), EOS step included."""
    target = list(target)
    if not target:
        raise ValueError("target must be non-empty")
    enc = encode(params, source)
    state = init_decoder_state(params)
    total = 0.0
    prev = BOS_ID
    for tok in target + [EOS_ID]:
        state, scores = decode_step(params, prev, state, enc)
        lse = K.logsumexp_rows(scores.reshape(1, -1))[0]
        total += float(scores[tok] - lse)
        prev = tok
    return total


# ---------------------------------------------------------------------------
# parameter files: magic, version, config header, tensors in declaration order
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sI B II B II B I")


def save_params(params: Parameters, path: str | Path) -> None:
    cfg = params.config
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        CELL_TYPES.index(cfg.cell_type),
        cfg.encoder_layers,
        cfg.decoder_layers,
        int(cfg.residual),
        cfg.embed_dim,
        cfg.hidden_dim,
        ATTENTION_KINDS.index(cfg.attention_kind),
        cfg.vocab_size,
    )
    with open(path, "wb") as f:
        f.write(header)
        for name, shape in tensor_specs(cfg):
            arr = params.tensors[name]
            if tuple(arr.shape) != shape:
                raise ValueError(f"tensor {name} has shape {arr.shape}, declared {shape}")
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path: str | Path) -> Parameters:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated parameter file")
    magic, version, cell, enc_l, dec_l, residual, embed, hidden, attn, vocab = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    try:
        config = ModelConfig(
            cell_type=CELL_TYPES[cell],
            encoder_layers=enc_l,
            decoder_layers=dec_l,
            residual=bool(residual),
            embed_dim=embed,
            hidden_dim=hidden,
            attention_kind=ATTENTION_KINDS[attn],
            vocab_size=vocab,
        )
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: invalid config header: {exc}") from exc
    specs = tensor_specs(config)
    expected = _HEADER.size + sum(8 * int(np.prod(shape)) for _, shape in specs)
    if len(blob) != expected:
        raise ValueError(
            f"{path}: payload is {len(blob)} bytes, header implies {expected}"
        )
    tensors: dict[str, np.ndarray] = {}
    offset = _HEADER.size
    for name, shape in specs:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64)
        tensors[name] = arr.reshape(shape)
        offset += 8 * n
    return Parameters(config=config, tensors=tensors)
