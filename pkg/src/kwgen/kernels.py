"""Numeric kernels shared by inference and training.

Every function here is written against plain numpy arrays and compiled with
numba's ``@njit`` when available.  Setting ``KWGEN_NUMBA=0`` in the
environment (or running without numba installed) selects the pure-numpy
fallback: the same function bodies, interpreted.  ``set_backend`` switches at
runtime, which the benchmark harness uses to compare both paths.

Call sites must access kernels through the module (``kernels.gru_step(...)``)
rather than ``from kwgen.kernels import gru_step`` so backend switches take
effect.

All kernels operate on row-stacked float64 arrays: shape ``(n, dim)`` where
``n`` is the number of hypotheses (decoding) or 1 (training steps).  Weight
gradients returned by the ``*_bwd`` kernels are summed over rows.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = os.environ.get("KWGEN_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _ENV_FLAG not in ("0", "false", "no", "off")

if NUMBA_REQUESTED:
    try:
        from numba import njit as _njit

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - mirror not expected to miss numba
        NUMBA_AVAILABLE = False
else:
    NUMBA_AVAILABLE = False


# ---------------------------------------------------------------------------
# kernel bodies (pure numpy, numba-compilable)
# ---------------------------------------------------------------------------

def _gru_step(x, h, Wg, Ug, bg, Wc, Uc, bc):
    # gates: [reset | update]; candidate uses the reset-scaled previous state
    H = h.shape[1]
    one = np.ones(1, x.dtype)[0]  # dtype-pure scalar so float32 stays float32
    g = x @ Wg + h @ Ug + bg
    s = one / (one + np.exp(-g))
    r = s[:, :H]
    z = s[:, H:]
    cand = np.tanh(x @ Wc + (r * h) @ Uc + bc)
    hn = (one - z) * cand + z * h
    return hn, r, z, cand


def _gru_step_bwd(dh_new, x, h, r, z, cand, Wg, Ug, Wc, Uc):
    dz = dh_new * (h - cand)
    dcand = dh_new * (1.0 - z)
    dh = dh_new * z
    da = dcand * (1.0 - cand * cand)
    dx = da @ Wc.T
    drh = da @ Uc.T
    dWc = x.T @ da
    dUc = (r * h).T @ da
    dbc = da.sum(axis=0)
    dr = drh * h
    dh = dh + drh * r
    dgr = dr * r * (1.0 - r)
    dgz = dz * z * (1.0 - z)
    dg = np.concatenate((dgr, dgz), axis=1)
    dx = dx + dg @ Wg.T
    dh = dh + dg @ Ug.T
    dWg = x.T @ dg
    dUg = h.T @ dg
    dbg = dg.sum(axis=0)
    return dx, dh, dWg, dUg, dbg, dWc, dUc, dbc


def _lstm_step(x, h, c, Wx, Wh, b):
    # gates: [input | forget | output | candidate]
    H = h.shape[1]
    one = np.ones(1, x.dtype)[0]
    g = x @ Wx + h @ Wh + b
    gi = one / (one + np.exp(-g[:, :H]))
    gf = one / (one + np.exp(-g[:, H:2 * H]))
    go = one / (one + np.exp(-g[:, 2 * H:3 * H]))
    gu = np.tanh(g[:, 3 * H:])
    cn = gf * c + gi * gu
    hn = go * np.tanh(cn)
    return hn, cn, gi, gf, go, gu


def _lstm_step_bwd(dh_new, dc_new, x, h, c, gi, gf, go, gu, cn, Wx, Wh):
    tc = np.tanh(cn)
    do = dh_new * tc
    dc = dc_new + dh_new * go * (1.0 - tc * tc)
    di = dc * gu
    df = dc * c
    du = dc * gi
    dc_prev = dc * gf
    dg = np.concatenate(
        (
            di * gi * (1.0 - gi),
            df * gf * (1.0 - gf),
            do * go * (1.0 - go),
            du * (1.0 - gu * gu),
        ),
        axis=1,
    )
    dx = dg @ Wx.T
    dh = dg @ Wh.T
    dWx = x.T @ dg
    dWh = h.T @ dg
    db = dg.sum(axis=0)
    return dx, dh, dc_prev, dWx, dWh, db


def _attn_additive(q, enc, enc_pre, Wd, ba, v):
    # q (n,H); enc (M,H); enc_pre = enc @ We, precomputed once per source
    qp = q @ Wd
    n = qp.shape[0]
    M = enc.shape[0]
    A = enc_pre.shape[1]
    t = np.empty((n, M, A), dtype=q.dtype)
    e = np.empty((n, M), dtype=q.dtype)
    for i in range(n):
        for j in range(M):
            u = np.tanh(enc_pre[j] + qp[i] + ba)
            t[i, j] = u
            e[i, j] = np.dot(u, v)
    alpha = np.empty((n, M), dtype=q.dtype)
    for i in range(n):
        m = e[i].max()
        w = np.exp(e[i] - m)
        alpha[i] = w / w.sum()
    ctx = alpha @ enc
    return ctx, alpha, t


def _attn_additive_bwd(dctx, q, enc, alpha, t, Wd, v):
    n, M = alpha.shape
    A = t.shape[2]
    dalpha = dctx @ enc.T
    denc = alpha.T @ dctx
    inner = (alpha * dalpha).sum(axis=1)
    de = alpha * (dalpha - inner.reshape(n, 1))
    dv = np.zeros(A)
    dz = np.empty((n, M, A))
    for i in range(n):
        for j in range(M):
            u = t[i, j]
            dv += de[i, j] * u
            dz[i, j] = de[i, j] * v * (1.0 - u * u)
    dqp = np.zeros((n, A))
    denc_pre = np.zeros((M, A))
    dba = np.zeros(A)
    for i in range(n):
        for j in range(M):
            dqp[i] += dz[i, j]
            denc_pre[j] += dz[i, j]
            dba += dz[i, j]
    dq = dqp @ Wd.T
    dWd = q.T @ dqp
    return dq, denc, denc_pre, dWd, dv, dba


def _attn_dot(q, enc):
    e = q @ enc.T
    n, M = e.shape
    alpha = np.empty((n, M), dtype=q.dtype)
    for i in range(n):
        m = e[i].max()
        w = np.exp(e[i] - m)
        alpha[i] = w / w.sum()
    ctx = alpha @ enc
    return ctx, alpha


def _attn_dot_bwd(dctx, q, enc, alpha):
    n, M = alpha.shape
    dalpha = dctx @ enc.T
    denc = alpha.T @ dctx
    inner = (alpha * dalpha).sum(axis=1)
    de = alpha * (dalpha - inner.reshape(n, 1))
    dq = de @ enc
    denc = denc + de.T @ q
    return dq, denc


def _scores_rows(feat, W, b):
    # unnormalized energies for every vocabulary entry, per row
    n = feat.shape[0]
    V = W.shape[0]
    out = np.empty((n, V), dtype=feat.dtype)
    for i in range(n):
        out[i] = W @ feat[i] + b
    return out


def _scores_rows_bwd(dscores, feat, W):
    dfeat = dscores @ W
    dW = dscores.T @ feat
    db = dscores.sum(axis=0)
    return dfeat, dW, db


def _scores_subset(feat, W, b, ids, offsets):
    # ragged per-row id lists: row j owns ids[offsets[j]:offsets[j+1]]
    out = np.empty(ids.shape[0], dtype=feat.dtype)
    n = feat.shape[0]
    F = feat.shape[1]
    for j in range(n):
        fj = feat[j]
        for p in range(offsets[j], offsets[j + 1]):
            w = ids[p]
            acc = b[w]
            for q in range(F):
                acc += W[w, q] * fj[q]
            out[p] = acc
    return out


def _scores_subset_numpy(feat, W, b, ids, offsets):
    # same contract as _scores_subset, vectorized for the interpreted path
    out = np.empty(ids.shape[0], dtype=feat.dtype)
    for j in range(feat.shape[0]):
        lo, hi = offsets[j], offsets[j + 1]
        sel = ids[lo:hi]
        out[lo:hi] = W[sel] @ feat[j] + b[sel]
    return out


def _logsumexp_rows(scores):
    n = scores.shape[0]
    out = np.empty(n, dtype=scores.dtype)
    for i in range(n):
        m = scores[i].max()
        out[i] = m + np.log(np.sum(np.exp(scores[i] - m)))
    return out


def _trie_flatten(nodes, ptr, tok, child):
    # concatenate the CSR suffix rows of the given nodes
    n = nodes.shape[0]
    offsets = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        nd = nodes[j]
        offsets[j + 1] = offsets[j] + (ptr[nd + 1] - ptr[nd])
    flat_tok = np.empty(offsets[n], dtype=np.int64)
    flat_child = np.empty(offsets[n], dtype=np.int64)
    hyp_idx = np.empty(offsets[n], dtype=np.int64)
    for j in range(n):
        lo = ptr[nodes[j]]
        width = ptr[nodes[j] + 1] - lo
        base = offsets[j]
        for p in range(width):
            flat_tok[base + p] = tok[lo + p]
            flat_child[base + p] = child[lo + p]
            hyp_idx[base + p] = j
    return flat_tok, flat_child, hyp_idx, offsets


def _trie_flatten_numpy(nodes, ptr, tok, child):
    n = nodes.shape[0]
    widths = ptr[nodes + 1] - ptr[nodes]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(widths, out=offsets[1:])
    flat_tok = np.empty(offsets[n], dtype=np.int64)
    flat_child = np.empty(offsets[n], dtype=np.int64)
    for j in range(n):
        lo = ptr[nodes[j]]
        flat_tok[offsets[j] : offsets[j + 1]] = tok[lo : lo + widths[j]]
        flat_child[offsets[j] : offsets[j + 1]] = child[lo : lo + widths[j]]
    hyp_idx = np.repeat(np.arange(n, dtype=np.int64), widths)
    return flat_tok, flat_child, hyp_idx, offsets


_BODIES = {
    "gru_step": _gru_step,
    "gru_step_bwd": _gru_step_bwd,
    "lstm_step": _lstm_step,
    "lstm_step_bwd": _lstm_step_bwd,
    "attn_additive": _attn_additive,
    "attn_additive_bwd": _attn_additive_bwd,
    "attn_dot": _attn_dot,
    "attn_dot_bwd": _attn_dot_bwd,
    "scores_rows": _scores_rows,
    "scores_rows_bwd": _scores_rows_bwd,
    "scores_subset": _scores_subset,
    "logsumexp_rows": _logsumexp_rows,
    "trie_flatten": _trie_flatten,
}

# interpreted-path overrides where the jit-friendly body would be slow as
# plain python (explicit scalar loops)
_NUMPY_OVERRIDES = {
    "scores_subset": _scores_subset_numpy,
    "trie_flatten": _trie_flatten_numpy,
}

if NUMBA_AVAILABLE:
    _JITTED = {name: _njit(cache=True)(fn) for name, fn in _BODIES.items()}
else:
    _JITTED = {}

_active_backend = "numba" if NUMBA_AVAILABLE else "numpy"


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if NUMBA_AVAILABLE else ("numpy",)


def active_backend() -> str:
    return _active_backend


def set_backend(name: str) -> None:
    """Bind the module-level kernel names to one backend, in place."""
    global _active_backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend unavailable (KWGEN_NUMBA=0 or numba not installed)")
    if name == "numba":
        table = dict(_JITTED)
    else:
        table = dict(_BODIES)
        table.update(_NUMPY_OVERRIDES)
    for fname, fn in table.items():
        globals()[fname] = fn
    _active_backend = name


set_backend(_active_backend)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    if _active_backend != "numba":
        return
    n, d, h, m, v = 2, 3, 4, 2, 5
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, d))
    hh = rng.normal(size=(n, h))
    cc = rng.normal(size=(n, h))
    Wg = rng.normal(size=(d, 2 * h))
    Ug = rng.normal(size=(h, 2 * h))
    bg = np.zeros(2 * h)
    Wc = rng.normal(size=(d, h))
    Uc = rng.normal(size=(h, h))
    bc = np.zeros(h)
    hn, r, z, cand = gru_step(x, hh, Wg, Ug, bg, Wc, Uc, bc)
    gru_step_bwd(hn, x, hh, r, z, cand, Wg, Ug, Wc, Uc)
    Wx = rng.normal(size=(d, 4 * h))
    Wh = rng.normal(size=(h, 4 * h))
    b4 = np.zeros(4 * h)
    hn, cn, gi, gf, go, gu = lstm_step(x, hh, cc, Wx, Wh, b4)
    lstm_step_bwd(hn, cn, x, hh, cc, gi, gf, go, gu, cn, Wx, Wh)
    enc = rng.normal(size=(m, h))
    enc_pre = rng.normal(size=(m, h))
    Wd = rng.normal(size=(h, h))
    ba = np.zeros(h)
    av = rng.normal(size=h)
    ctx, alpha, t = attn_additive(hh, enc, enc_pre, Wd, ba, av)
    attn_additive_bwd(ctx, hh, enc, alpha, t, Wd, av)
    ctx, alpha = attn_dot(hh, enc)
    attn_dot_bwd(ctx, hh, enc, alpha)
    feat = rng.normal(size=(n, h))
    W = rng.normal(size=(v, h))
    bb = np.zeros(v)
    s = scores_rows(feat, W, bb)
    scores_rows_bwd(s, feat, W)
    ids = np.array([0, 1, 2, 1], dtype=np.int64)
    offs = np.array([0, 2, 4], dtype=np.int64)
    scores_subset(feat, W, bb, ids, offs)
    logsumexp_rows(s)
    nodes = np.array([0, 1], dtype=np.int64)
    ptr = np.array([0, 2, 3], dtype=np.int64)
    tok = np.array([3, 4, 1], dtype=np.int64)
    kid = np.array([1, -1, -1], dtype=np.int64)
    trie_flatten(nodes, ptr, tok, kid)
