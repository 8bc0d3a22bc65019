"""Training: objective, manual reverse-mode gradients, Adam loop.

The objective per scored step is cross-entropy plus a self-normalization
penalty beta * (log Z)^2 that pushes the softmax partition function toward 1,
so inference can treat raw energies as log-probabilities.  The whole backward
pass is hand-written against the forward caches; gradient tests compare it
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels as K
from .corpus import BOS_ID, EOS_ID, ParallelPair
from .model import ModelConfig, Parameters, init_params, tensor_specs


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 5e-4  # initial; decays by lr_decay each epoch
    batch_size: int = 128
    beta: float = 0.1
    epochs: int = 5
    lr_decay: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")


def _forward_sample(params: Parameters, src: Sequence[int], tgt: Sequence[int]):
    """Teacher-forced forward pass keeping every intermediate for backprop."""
    cfg = params.config
    t = params.tensors
    H = cfg.hidden_dim
    E = cfg.embed_dim
    is_lstm = cfg.cell_type == "lstm"
    additive = cfg.attention_kind == "additive"

    # encoder
    M = len(src)
    x_seq = t["embedding"][list(src)]
    enc_caches = []  # per layer: list over time of cell caches
    for layer in range(cfg.encoder_layers):
        prefix = f"enc{layer}"
        h = np.zeros((1, H))
        c = np.zeros((1, H))
        states = np.empty((M, H))
        step_caches = []
        for i in range(M):
            x_row = x_seq[i : i + 1]
            if is_lstm:
                hn, cn, gi, gf, go, gu = K.lstm_step(x_row, h, c, t[f"{prefix}.Wx"],
                                                     t[f"{prefix}.Wh"], t[f"{prefix}.b"])
                step_caches.append((x_row, h, c, gi, gf, go, gu, cn))
                h, c = hn, cn
            else:
                hn, r, z, cand = K.gru_step(x_row, h, t[f"{prefix}.Wg"], t[f"{prefix}.Ug"],
                                            t[f"{prefix}.bg"], t[f"{prefix}.Wc"],
                                            t[f"{prefix}.Uc"], t[f"{prefix}.bc"])
                step_caches.append((x_row, h, r, z, cand))
                h = hn
            states[i] = h[0]
        enc_caches.append(step_caches)
        x_seq = states + x_seq if (layer >= 1 and cfg.residual) else states
    enc_states = x_seq
    attn_pre = enc_states @ t["att.We"] if additive else None

    # decoder, teacher forced
    prev_tokens = [BOS_ID] + list(tgt)
    predict = list(tgt) + [EOS_ID]
    T = len(predict)
    h_layers = [np.zeros((1, H)) for _ in range(cfg.decoder_layers)]
    c_layers = [np.zeros((1, H)) for _ in range(cfg.decoder_layers)]
    out_prev = np.zeros((1, H))
    dec_caches = []
    lses = np.empty(T)
    probs = []
    score_gold = np.empty(T)
    for i in range(T):
        prev_tok = prev_tokens[i]
        emb = t["embedding"][prev_tok].reshape(1, E)
        if additive:
            ctx, alpha, tanh_cache = K.attn_additive(out_prev, enc_states, attn_pre,
                                                     t["att.Wd"], t["att.b"], t["att.v"])
        else:
            ctx, alpha = K.attn_dot(out_prev, enc_states)
            tanh_cache = None
        x = np.concatenate((emb, ctx), axis=1)
        cell_caches = []
        for layer in range(cfg.decoder_layers):
            prefix = f"dec{layer}"
            inp = x
            if is_lstm:
                hn, cn, gi, gf, go, gu = K.lstm_step(inp, h_layers[layer], c_layers[layer],
                                                     t[f"{prefix}.Wx"], t[f"{prefix}.Wh"],
                                                     t[f"{prefix}.b"])
                cell_caches.append((inp, h_layers[layer], c_layers[layer], gi, gf, go, gu, cn))
                h_layers[layer], c_layers[layer] = hn, cn
            else:
                hn, r, z, cand = K.gru_step(inp, h_layers[layer], t[f"{prefix}.Wg"],
                                            t[f"{prefix}.Ug"], t[f"{prefix}.bg"],
                                            t[f"{prefix}.Wc"], t[f"{prefix}.Uc"],
                                            t[f"{prefix}.bc"])
                cell_caches.append((inp, h_layers[layer], r, z, cand))
                h_layers[layer] = hn
            x = hn + inp if (layer >= 1 and cfg.residual) else hn
        out_new = x
        feat = np.concatenate((emb, out_new, ctx), axis=1)
        scores = K.scores_rows(feat, t["out.W"], t["out.b"])[0]
        lse = K.logsumexp_rows(scores.reshape(1, -1))[0]
        p = np.exp(scores - lse)
        dec_caches.append({
            "prev_tok": prev_tok,
            "out_prev": out_prev,
            "alpha": alpha,
            "tanh_cache": tanh_cache,
            "cells": cell_caches,
            "feat": feat,
        })
        lses[i] = lse
        probs.append(p)
        score_gold[i] = scores[predict[i]]
        out_prev = out_new
    return {
        "enc_caches": enc_caches,
        "enc_states": enc_states,
        "attn_pre": attn_pre,
        "dec_caches": dec_caches,
        "predict": predict,
        "lses": lses,
        "probs": probs,
        "score_gold": score_gold,
    }


def _backward_sample(params: Parameters, src, fwd, beta: float, scale: float, grads) -> None:
    cfg = params.config
    t = params.tensors
    H = cfg.hidden_dim
    E = cfg.embed_dim
    is_lstm = cfg.cell_type == "lstm"
    additive = cfg.attention_kind == "additive"
    enc_states = fwd["enc_states"]
    M = enc_states.shape[0]

    d_enc = np.zeros((M, H))
    d_attn_pre = np.zeros_like(fwd["attn_pre"]) if additive else None
    dout_carry = np.zeros((1, H))
    carry_h = [np.zeros((1, H)) for _ in range(cfg.decoder_layers)]
    carry_c = [np.zeros((1, H)) for _ in range(cfg.decoder_layers)]

    for i in reversed(range(len(fwd["predict"]))):
        cache = fwd["dec_caches"][i]
        p = fwd["probs"][i]
        lse = fwd["lses"][i]
        gold = fwd["predict"][i]
        dscores = (p * (1.0 + 2.0 * beta * lse)).reshape(1, -1) * scale
        dscores[0, gold] -= scale
        dfeat, dW, db = K.scores_rows_bwd(dscores, cache["feat"], t["out.W"])
        grads["out.W"] += dW
        grads["out.b"] += db
        demb = dfeat[:, :E]
        dout = dfeat[:, E : E + H] + dout_carry
        dctx = dfeat[:, E + H :]

        gx = dout
        for layer in reversed(range(cfg.decoder_layers)):
            prefix = f"dec{layer}"
            ds = gx + carry_h[layer]
            if is_lstm:
                inp, h_prev, c_prev, gi, gf, go, gu, cn = cache["cells"][layer]
                dx, dh, dc, dWx, dWh, dbv = K.lstm_step_bwd(ds, carry_c[layer], inp, h_prev,
                                                            c_prev, gi, gf, go, gu, cn,
                                                            t[f"{prefix}.Wx"], t[f"{prefix}.Wh"])
                carry_c[layer] = dc
                grads[f"{prefix}.Wx"] += dWx
                grads[f"{prefix}.Wh"] += dWh
                grads[f"{prefix}.b"] += dbv
            else:
                inp, h_prev, r, z, cand = cache["cells"][layer]
                dx, dh, dWg, dUg, dbg, dWc, dUc, dbc = K.gru_step_bwd(
                    ds, inp, h_prev, r, z, cand,
                    t[f"{prefix}.Wg"], t[f"{prefix}.Ug"], t[f"{prefix}.Wc"], t[f"{prefix}.Uc"])
                grads[f"{prefix}.Wg"] += dWg
                grads[f"{prefix}.Ug"] += dUg
                grads[f"{prefix}.bg"] += dbg
                grads[f"{prefix}.Wc"] += dWc
                grads[f"{prefix}.Uc"] += dUc
                grads[f"{prefix}.bc"] += dbc
            carry_h[layer] = dh
            gx = dx + gx if (layer >= 1 and cfg.residual) else dx
        demb = demb + gx[:, :E]
        dctx = dctx + gx[:, E:]

        if additive:
            dq, denc, denc_pre, dWd, dv, dba = K.attn_additive_bwd(
                dctx, cache["out_prev"], enc_states, cache["alpha"], cache["tanh_cache"],
                t["att.Wd"], t["att.v"])
            grads["att.Wd"] += dWd
            grads["att.v"] += dv
            grads["att.b"] += dba
            d_attn_pre += denc_pre
        else:
            dq, denc = K.attn_dot_bwd(dctx, cache["out_prev"], enc_states, cache["alpha"])
        d_enc += denc
        dout_carry = dq
        grads["embedding"][cache["prev_tok"]] += demb[0]

    if additive:
        grads["att.We"] += enc_states.T @ d_attn_pre
        d_enc += d_attn_pre @ t["att.We"].T

    carry_h = [np.zeros((1, H)) for _ in range(cfg.encoder_layers)]
    carry_c = [np.zeros((1, H)) for _ in range(cfg.encoder_layers)]
    for i in reversed(range(M)):
        gx = d_enc[i : i + 1]
        for layer in reversed(range(cfg.encoder_layers)):
            prefix = f"enc{layer}"
            ds = gx + carry_h[layer]
            if is_lstm:
                x_row, h_prev, c_prev, gi, gf, go, gu, cn = fwd["enc_caches"][layer][i]
                dx, dh, dc, dWx, dWh, dbv = K.lstm_step_bwd(ds, carry_c[layer], x_row, h_prev,
                                                            c_prev, gi, gf, go, gu, cn,
                                                            t[f"{prefix}.Wx"], t[f"{prefix}.Wh"])
                carry_c[layer] = dc
                grads[f"{prefix}.Wx"] += dWx
                grads[f"{prefix}.Wh"] += dWh
                grads[f"{prefix}.b"] += dbv
            else:
                x_row, h_prev, r, z, cand = fwd["enc_caches"][layer][i]
                dx, dh, dWg, dUg, dbg, dWc, dUc, dbc = K.gru_step_bwd(
                    ds, x_row, h_prev, r, z, cand,
                    t[f"{prefix}.Wg"], t[f"{prefix}.Ug"], t[f"{prefix}.Wc"], t[f"{prefix}.Uc"])
                grads[f"{prefix}.Wg"] += dWg
                grads[f"{prefix}.Ug"] += dUg
                grads[f"{prefix}.bg"] += dbg
                grads[f"{prefix}.Wc"] += dWc
                grads[f"{prefix}.Uc"] += dUc
                grads[f"{prefix}.bc"] += dbc
            carry_h[layer] = dh
            gx = dx + gx if (layer >= 1 and cfg.residual) else dx
        grads["embedding"][src[i]] += gx[0]


def loss_and_grads(
    params: Parameters, batch: Sequence[ParallelPair], beta: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Negated objective (cross-entropy + beta * logZ^2) per scored token.

    Scored tokens include the EOS step, so with beta=0 the loss of a single
    pair is -sequence_logprob / (len(target) + 1).
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    total_steps = sum(len(p.target) + 1 for p in batch)
    scale = 1.0 / total_steps
    grads = {name: np.zeros(shape) for name, shape in tensor_specs(params.config)}
    loss = 0.0
    for pair in batch:
        fwd = _forward_sample(params, pair.source, pair.target)
        lses = fwd["lses"]
        loss += float(np.sum(-(fwd["score_gold"] - lses) + beta * lses**2))
        _backward_sample(params, pair.source, fwd, beta, scale, grads)
    return loss * scale, grads


def mean_abs_logz(params: Parameters, pairs: Sequence[ParallelPair]) -> float:
    """Mean |log Z| over teacher-forced decode steps of the given pairs."""
    if not pairs:
        raise ValueError("need at least one pair")
    total = 0.0
    count = 0
    for pair in pairs:
        fwd = _forward_sample(params, pair.source, pair.target)
        total += float(np.abs(fwd["lses"]).sum())
        count += len(fwd["lses"])
    return total / count


class AdamState:
    def __init__(self, params: Parameters) -> None:
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def update(self, params: Parameters, grads: dict[str, np.ndarray], hyper: TrainHyper,
               lr: float | None = None) -> None:
        self.t += 1
        b1, b2 = hyper.adam_beta1, hyper.adam_beta2
        eps = hyper.adam_eps
        lr = hyper.learning_rate if lr is None else lr
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params.tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def train(
    corpus: Sequence[ParallelPair], config: ModelConfig, hyper: TrainHyper
) -> tuple[Parameters, list[dict]]:
    """Adam training loop; deterministic given hyper.seed.

    Returns the trained parameters and one metrics row per epoch:
    {"epoch", "loss", "mean_abs_logZ"}, the latter on a held-out split.
    """
    if not corpus:
        raise ValueError("training corpus must be non-empty")
    params = init_params(config, hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(len(corpus))
    n_hold = int(round(hyper.holdout_fraction * len(corpus)))
    n_hold = min(n_hold, len(corpus) - 1)
    holdout = [corpus[i] for i in order[:n_hold]]
    train_set = [corpus[i] for i in order[n_hold:]]
    eval_set = holdout if holdout else train_set

    adam = AdamState(params)
    metrics: list[dict] = []
    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(train_set))
        lr = hyper.learning_rate * hyper.lr_decay**epoch
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(train_set), hyper.batch_size):
            batch = [train_set[i] for i in perm[start : start + hyper.batch_size]]
            loss, grads = loss_and_grads(params, batch, hyper.beta)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            adam.update(params, grads, hyper, lr=lr)
            epoch_loss += loss
            n_batches += 1
        if not params.all_finite():
            raise FloatingPointError(f"non-finite parameter after epoch {epoch}")
        metrics.append({
            "epoch": epoch,
            "loss": epoch_loss / max(n_batches, 1),
            "mean_abs_logZ": mean_abs_logz(params, eval_set),
        })
    return params, metrics
