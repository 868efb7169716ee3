"""Desk-scale encoder-decoder transformer in float64 numpy.

Pre-norm blocks, learned positional embeddings, shared input embedding,
and a hand-written backward pass. Everything is deterministic given the
init seed; the backward pass is validated coordinate-by-coordinate
against central finite differences in the test suite.

Padding contract: PAD source positions are masked out as attention keys,
PAD target positions are masked out of the loss, so appending PAD to
either side of a batch changes neither the loss nor any gradient.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .textproc import BOS_ID, PAD_ID

LN_EPS = 1e-6
CHECKPOINT_MAGIC = b"GQCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 4
    d_ff: int = 64
    max_source_len: int = 512
    max_target_len: int = 100
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.vocab_size < 3:
            raise ValueError("vocab_size must at least cover PAD, BOS, and EOS")
        for name in ("d_model", "n_layers", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.max_source_len < 2 or self.max_target_len < 2:
            raise ValueError("sequence length limits must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes, in initialization order."""
    c = config
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (c.vocab_size, c.d_model),
        "pos_enc": (c.max_source_len, c.d_model),
        "pos_dec": (c.max_target_len, c.d_model),
    }

    def attn(prefix: str) -> None:
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (c.d_model, c.d_model)

    def ln(prefix: str) -> None:
        shapes[f"{prefix}.gain"] = (c.d_model,)
        shapes[f"{prefix}.bias"] = (c.d_model,)

    def ffn(prefix: str) -> None:
        shapes[f"{prefix}.w1"] = (c.d_model, c.d_ff)
        shapes[f"{prefix}.b1"] = (c.d_ff,)
        shapes[f"{prefix}.w2"] = (c.d_ff, c.d_model)
        shapes[f"{prefix}.b2"] = (c.d_model,)

    for i in range(c.n_layers):
        ln(f"enc{i}.ln1")
        attn(f"enc{i}.attn")
        ln(f"enc{i}.ln2")
        ffn(f"enc{i}.ff")
    ln("enc.ln")
    for i in range(c.n_layers):
        ln(f"dec{i}.ln1")
        attn(f"dec{i}.self")
        ln(f"dec{i}.ln2")
        attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3")
        ffn(f"dec{i}.ff")
    ln("dec.ln")
    shapes["out.w"] = (c.d_model, c.vocab_size)
    shapes["out.b"] = (c.vocab_size,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    seed: int
    tensors: dict[str, np.ndarray] = field(repr=False)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config, self.seed, {k: v.copy() for k, v in self.tensors.items()}
        )


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization: Xavier matrices, 0.1-scale embeddings."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif name.endswith((".bias", ".b1", ".b2", "out.b")):
            tensors[name] = np.zeros(shape)
        elif name in ("tok_emb", "pos_enc", "pos_dec"):
            tensors[name] = rng.normal(0.0, 0.1, shape)
        else:
            fan_in, fan_out = shape[0], shape[1]
            std = np.sqrt(2.0 / (fan_in + fan_out))
            tensors[name] = rng.normal(0.0, std, shape)
    return ModelParams(config=config, seed=seed, tensors=tensors)


def zeros_like_params(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


# ---------------------------------------------------------------------------
# primitive ops, each with an explicit backward


def _layer_norm_fwd(x, gain, bias):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def _layer_norm_bwd(dout, cache):
    xhat, inv, gain = cache
    axes = tuple(range(dout.ndim - 1))
    dgain = (dout * xhat).sum(axes)
    dbias = dout.sum(axes)
    dxhat = dout * gain
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dgain, dbias


def _masked_softmax(scores, allowed):
    # rows with no allowed key get all-zero weights (the sublayer emits 0)
    neg = np.where(allowed, scores, -np.inf)
    rowmax = neg.max(-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(neg - rowmax)
    denom = e.sum(-1, keepdims=True)
    return e / np.where(denom == 0.0, 1.0, denom)


def _attention_fwd(xq, xkv, wq, wk, wv, wo, n_heads, allowed):
    b, lq, d = xq.shape
    lk = xkv.shape[1]
    dh = d // n_heads
    q = (xq @ wq).reshape(b, lq, n_heads, dh).transpose(0, 2, 1, 3)
    k = (xkv @ wk).reshape(-1, lk, n_heads, dh).transpose(0, 2, 1, 3)
    v = (xkv @ wv).reshape(-1, lk, n_heads, dh).transpose(0, 2, 1, 3)
    scale = 1.0 / np.sqrt(dh)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    w = _masked_softmax(scores, allowed)
    ctx = w @ v
    merged = ctx.transpose(0, 2, 1, 3).reshape(b, lq, d)
    out = merged @ wo
    return out, (xq, xkv, wq, wk, wv, wo, q, k, v, w, merged, scale)


def _attention_bwd(dout, cache, n_heads):
    xq, xkv, wq, wk, wv, wo, q, k, v, w, merged, scale = cache
    b, lq, d = dout.shape
    lk = xkv.shape[1]
    dh = d // n_heads
    dwo = np.tensordot(merged, dout, axes=([0, 1], [0, 1]))
    dmerged = dout @ wo.T
    dctx = dmerged.reshape(b, lq, n_heads, dh).transpose(0, 2, 1, 3)
    dw = dctx @ v.transpose(0, 1, 3, 2)
    dv = w.transpose(0, 1, 3, 2) @ dctx
    ds = w * (dw - (dw * w).sum(-1, keepdims=True))
    ds = ds * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dq_m = dq.transpose(0, 2, 1, 3).reshape(b, lq, d)
    dk_m = dk.transpose(0, 2, 1, 3).reshape(b, lk, d)
    dv_m = dv.transpose(0, 2, 1, 3).reshape(b, lk, d)
    dwq = np.tensordot(xq, dq_m, axes=([0, 1], [0, 1]))
    dwk = np.tensordot(xkv, dk_m, axes=([0, 1], [0, 1]))
    dwv = np.tensordot(xkv, dv_m, axes=([0, 1], [0, 1]))
    dxq = dq_m @ wq.T
    dxkv = dk_m @ wk.T + dv_m @ wv.T
    return dxq, dxkv, dwq, dwk, dwv, dwo


def _ffn_fwd(x, w1, b1, w2, b2):
    pre = x @ w1 + b1
    h = np.maximum(pre, 0.0)
    return h @ w2 + b2, (x, w1, w2, pre, h)


def _ffn_bwd(dout, cache):
    x, w1, w2, pre, h = cache
    db2 = dout.sum((0, 1))
    dw2 = np.tensordot(h, dout, axes=([0, 1], [0, 1]))
    dh = dout @ w2.T
    dpre = dh * (pre > 0.0)
    db1 = dpre.sum((0, 1))
    dw1 = np.tensordot(x, dpre, axes=([0, 1], [0, 1]))
    dx = dpre @ w1.T
    return dx, dw1, db1, dw2, db2


def _dropout_fwd(x, p, rng):
    if p <= 0.0 or rng is None:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def _dropout_bwd(dout, mask):
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------------------
# encoder / decoder stacks


def _encoder_layer_fwd(x, t, prefix, n_heads, allowed, p, rng):
    ln1, c_ln1 = _layer_norm_fwd(x, t[f"{prefix}.ln1.gain"], t[f"{prefix}.ln1.bias"])
    att, c_att = _attention_fwd(
        ln1, ln1,
        t[f"{prefix}.attn.wq"], t[f"{prefix}.attn.wk"],
        t[f"{prefix}.attn.wv"], t[f"{prefix}.attn.wo"],
        n_heads, allowed,
    )
    att, m1 = _dropout_fwd(att, p, rng)
    a = x + att
    ln2, c_ln2 = _layer_norm_fwd(a, t[f"{prefix}.ln2.gain"], t[f"{prefix}.ln2.bias"])
    ff, c_ff = _ffn_fwd(
        ln2, t[f"{prefix}.ff.w1"], t[f"{prefix}.ff.b1"],
        t[f"{prefix}.ff.w2"], t[f"{prefix}.ff.b2"],
    )
    ff, m2 = _dropout_fwd(ff, p, rng)
    return a + ff, (c_ln1, c_att, m1, c_ln2, c_ff, m2)


def _encoder_layer_bwd(dy, cache, prefix, n_heads, g):
    c_ln1, c_att, m1, c_ln2, c_ff, m2 = cache
    dff = _dropout_bwd(dy, m2)
    dln2, dw1, db1, dw2, db2 = _ffn_bwd(dff, c_ff)
    g[f"{prefix}.ff.w1"] += dw1
    g[f"{prefix}.ff.b1"] += db1
    g[f"{prefix}.ff.w2"] += dw2
    g[f"{prefix}.ff.b2"] += db2
    da_ln, dgain2, dbias2 = _layer_norm_bwd(dln2, c_ln2)
    g[f"{prefix}.ln2.gain"] += dgain2
    g[f"{prefix}.ln2.bias"] += dbias2
    da = dy + da_ln
    datt = _dropout_bwd(da, m1)
    dxq, dxkv, dwq, dwk, dwv, dwo = _attention_bwd(datt, c_att, n_heads)
    g[f"{prefix}.attn.wq"] += dwq
    g[f"{prefix}.attn.wk"] += dwk
    g[f"{prefix}.attn.wv"] += dwv
    g[f"{prefix}.attn.wo"] += dwo
    dln1_in, dgain1, dbias1 = _layer_norm_bwd(dxq + dxkv, c_ln1)
    g[f"{prefix}.ln1.gain"] += dgain1
    g[f"{prefix}.ln1.bias"] += dbias1
    return da + dln1_in


def _decoder_layer_fwd(y, enc_out, t, prefix, n_heads, self_allowed, cross_allowed, p, rng):
    ln1, c_ln1 = _layer_norm_fwd(y, t[f"{prefix}.ln1.gain"], t[f"{prefix}.ln1.bias"])
    att, c_att = _attention_fwd(
        ln1, ln1,
        t[f"{prefix}.self.wq"], t[f"{prefix}.self.wk"],
        t[f"{prefix}.self.wv"], t[f"{prefix}.self.wo"],
        n_heads, self_allowed,
    )
    att, m1 = _dropout_fwd(att, p, rng)
    a = y + att
    ln2, c_ln2 = _layer_norm_fwd(a, t[f"{prefix}.ln2.gain"], t[f"{prefix}.ln2.bias"])
    cross, c_cross = _attention_fwd(
        ln2, enc_out,
        t[f"{prefix}.cross.wq"], t[f"{prefix}.cross.wk"],
        t[f"{prefix}.cross.wv"], t[f"{prefix}.cross.wo"],
        n_heads, cross_allowed,
    )
    cross, m2 = _dropout_fwd(cross, p, rng)
    b = a + cross
    ln3, c_ln3 = _layer_norm_fwd(b, t[f"{prefix}.ln3.gain"], t[f"{prefix}.ln3.bias"])
    ff, c_ff = _ffn_fwd(
        ln3, t[f"{prefix}.ff.w1"], t[f"{prefix}.ff.b1"],
        t[f"{prefix}.ff.w2"], t[f"{prefix}.ff.b2"],
    )
    ff, m3 = _dropout_fwd(ff, p, rng)
    return b + ff, (c_ln1, c_att, m1, c_ln2, c_cross, m2, c_ln3, c_ff, m3)


def _decoder_layer_bwd(dy, cache, prefix, n_heads, g):
    c_ln1, c_att, m1, c_ln2, c_cross, m2, c_ln3, c_ff, m3 = cache
    dff = _dropout_bwd(dy, m3)
    dln3, dw1, db1, dw2, db2 = _ffn_bwd(dff, c_ff)
    g[f"{prefix}.ff.w1"] += dw1
    g[f"{prefix}.ff.b1"] += db1
    g[f"{prefix}.ff.w2"] += dw2
    g[f"{prefix}.ff.b2"] += db2
    db_ln, dgain3, dbias3 = _layer_norm_bwd(dln3, c_ln3)
    g[f"{prefix}.ln3.gain"] += dgain3
    g[f"{prefix}.ln3.bias"] += dbias3
    db = dy + db_ln
    dcross = _dropout_bwd(db, m2)
    dxq, denc, dwq, dwk, dwv, dwo = _attention_bwd(dcross, c_cross, n_heads)
    g[f"{prefix}.cross.wq"] += dwq
    g[f"{prefix}.cross.wk"] += dwk
    g[f"{prefix}.cross.wv"] += dwv
    g[f"{prefix}.cross.wo"] += dwo
    da_ln, dgain2, dbias2 = _layer_norm_bwd(dxq, c_ln2)
    g[f"{prefix}.ln2.gain"] += dgain2
    g[f"{prefix}.ln2.bias"] += dbias2
    da = db + da_ln
    datt = _dropout_bwd(da, m1)
    dsq, dskv, dwq, dwk, dwv, dwo = _attention_bwd(datt, c_att, n_heads)
    g[f"{prefix}.self.wq"] += dwq
    g[f"{prefix}.self.wk"] += dwk
    g[f"{prefix}.self.wv"] += dwv
    g[f"{prefix}.self.wo"] += dwo
    dln1_in, dgain1, dbias1 = _layer_norm_bwd(dsq + dskv, c_ln1)
    g[f"{prefix}.ln1.gain"] += dgain1
    g[f"{prefix}.ln1.bias"] += dbias1
    return da + dln1_in, denc


def _check_ids(ids: np.ndarray, vocab_size: int, what: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"{what} contains ids outside [0, {vocab_size})")


def _encoder_fwd(params: ModelParams, src: np.ndarray, p=0.0, rng=None):
    t, c = params.tensors, params.config
    ls = src.shape[1]
    if ls > c.max_source_len:
        raise ValueError(f"source length {ls} exceeds limit {c.max_source_len}")
    _check_ids(src, c.vocab_size, "source")
    src_valid = src != PAD_ID
    x = t["tok_emb"][src] + t["pos_enc"][:ls][None]
    x, m_emb = _dropout_fwd(x, p, rng)
    allowed = src_valid[:, None, None, :]
    layer_caches = []
    for i in range(c.n_layers):
        x, cache = _encoder_layer_fwd(x, t, f"enc{i}", c.n_heads, allowed, p, rng)
        layer_caches.append(cache)
    enc_out, c_ln = _layer_norm_fwd(x, t["enc.ln.gain"], t["enc.ln.bias"])
    return enc_out, src_valid, (src, m_emb, layer_caches, c_ln)


def _decoder_fwd(params: ModelParams, enc_out, src_valid, tgt_in: np.ndarray, p=0.0, rng=None):
    t, c = params.tensors, params.config
    lt = tgt_in.shape[1]
    if lt > c.max_target_len:
        raise ValueError(f"target length {lt} exceeds limit {c.max_target_len}")
    _check_ids(tgt_in, c.vocab_size, "target")
    y = t["tok_emb"][tgt_in] + t["pos_dec"][:lt][None]
    y, m_emb = _dropout_fwd(y, p, rng)
    self_allowed = np.tril(np.ones((lt, lt), dtype=bool))[None, None]
    cross_allowed = src_valid[:, None, None, :]
    layer_caches = []
    for i in range(c.n_layers):
        y, cache = _decoder_layer_fwd(
            y, enc_out, t, f"dec{i}", c.n_heads, self_allowed, cross_allowed, p, rng
        )
        layer_caches.append(cache)
    dec_out, c_ln = _layer_norm_fwd(y, t["dec.ln.gain"], t["dec.ln.bias"])
    logits = dec_out @ t["out.w"] + t["out.b"]
    return logits, (tgt_in, m_emb, layer_caches, c_ln, dec_out)


def _forward_batch(params, src, tgt_in, p=0.0, rng=None):
    enc_out, src_valid, enc_cache = _encoder_fwd(params, src, p, rng)
    logits, dec_cache = _decoder_fwd(params, enc_out, src_valid, tgt_in, p, rng)
    return logits, (enc_out, enc_cache, dec_cache)


def _backward_batch(params, cache, dlogits):
    t, c = params.tensors, params.config
    enc_out, enc_cache, dec_cache = cache
    src, m_emb_src, enc_layers, c_encln = enc_cache
    tgt_in, m_emb_tgt, dec_layers, c_decln, dec_out = dec_cache
    g = zeros_like_params(params)

    g["out.w"] += np.tensordot(dec_out, dlogits, axes=([0, 1], [0, 1]))
    g["out.b"] += dlogits.sum((0, 1))
    dy, dgain, dbias = _layer_norm_bwd(dlogits @ t["out.w"].T, c_decln)
    g["dec.ln.gain"] += dgain
    g["dec.ln.bias"] += dbias
    denc = np.zeros_like(enc_out)
    for i in reversed(range(c.n_layers)):
        dy, denc_i = _decoder_layer_bwd(dy, dec_layers[i], f"dec{i}", c.n_heads, g)
        denc += denc_i
    dy = _dropout_bwd(dy, m_emb_tgt)
    np.add.at(g["tok_emb"], tgt_in, dy)
    g["pos_dec"][: tgt_in.shape[1]] += dy.sum(0)

    dx, dgain, dbias = _layer_norm_bwd(denc, c_encln)
    g["enc.ln.gain"] += dgain
    g["enc.ln.bias"] += dbias
    for i in reversed(range(c.n_layers)):
        dx = _encoder_layer_bwd(dx, enc_layers[i], f"enc{i}", c.n_heads, g)
    dx = _dropout_bwd(dx, m_emb_src)
    np.add.at(g["tok_emb"], src, dx)
    g["pos_enc"][: src.shape[1]] += dx.sum(0)
    return g


# ---------------------------------------------------------------------------
# public surface


def pad_batch(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    """Right-pad with PAD to the longest sequence in the batch."""
    width = max((len(s) for s in seqs), default=0)
    width = max(width, 1)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def forward(
    params: ModelParams,
    source_ids: Sequence[int],
    target_prefix_ids: Sequence[int],
) -> np.ndarray:
    """Teacher-forced logits, one row per target prefix position."""
    src = pad_batch([list(source_ids) or [PAD_ID]])
    tgt = pad_batch([list(target_prefix_ids)])
    if not target_prefix_ids:
        raise ValueError("target prefix must contain at least one id")
    logits, _ = _forward_batch(params, src, tgt)
    return logits[0]


def loss(logits: np.ndarray, target_ids: Sequence[int]) -> float:
    """Mean cross-entropy over non-PAD target positions."""
    labels = np.asarray(target_ids, dtype=np.int64)
    if logits.shape[0] != labels.shape[0]:
        raise ValueError(
            f"logits rows ({logits.shape[0]}) != target length ({labels.shape[0]})"
        )
    value, _ = _loss_and_dlogits(logits[None], labels[None])
    return value


def _loss_and_dlogits(logits: np.ndarray, labels: np.ndarray):
    mask = labels != PAD_ID
    n = int(mask.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits)
    shifted = logits - logits.max(-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(-1, keepdims=True))
    logp = shifted - lse
    gold = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    value = float(-(gold * mask).sum() / n)
    dlogits = np.exp(logp)
    np.put_along_axis(
        dlogits,
        labels[..., None],
        np.take_along_axis(dlogits, labels[..., None], axis=-1) - 1.0,
        axis=-1,
    )
    dlogits *= mask[..., None] / n
    return value, dlogits


Batch = Sequence[tuple[Sequence[int], Sequence[int]]]


def _batch_arrays(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not batch:
        raise ValueError("batch must be nonempty")
    for _, target in batch:
        if len(target) == 0:
            raise ValueError("every target must contain at least one id")
    src = pad_batch([list(s) or [PAD_ID] for s, _ in batch])
    labels = pad_batch([list(t) for _, t in batch])
    dec_in = pad_batch([[BOS_ID] + list(t)[:-1] for _, t in batch])
    return src, dec_in, labels


def loss_and_grad(
    params: ModelParams, batch: Batch, dropout_rng: np.random.Generator | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its gradient for (source, target) id pairs.

    Targets are the label sequences (normally ending in EOS); the decoder
    input is BOS followed by the shifted target.
    """
    src, dec_in, labels = _batch_arrays(batch)
    p = params.config.dropout if dropout_rng is not None else 0.0
    logits, cache = _forward_batch(params, src, dec_in, p, dropout_rng)
    value, dlogits = _loss_and_dlogits(logits, labels)
    grads = _backward_batch(params, cache, dlogits)
    return value, grads


def grad(params: ModelParams, batch: Batch) -> dict[str, np.ndarray]:
    """Gradient of the mean batch loss for every named tensor."""
    return loss_and_grad(params, batch)[1]


def batch_loss(params: ModelParams, batch: Batch) -> float:
    src, dec_in, labels = _batch_arrays(batch)
    logits, _ = _forward_batch(params, src, dec_in)
    return _loss_and_dlogits(logits, labels)[0]


def encoder_state(params: ModelParams, source_ids: Sequence[int]):
    """Encoder output for one source, reusable across decode steps."""
    src = pad_batch([list(source_ids) or [PAD_ID]])
    enc_out, src_valid, _ = _encoder_fwd(params, src)
    return enc_out, src_valid


def decoder_logits(params: ModelParams, enc_out, src_valid, tgt_in: np.ndarray) -> np.ndarray:
    """Logits (batch, len, vocab) for decoder inputs against one source."""
    logits, _ = _decoder_fwd(params, enc_out, src_valid, tgt_in)
    return logits


# ---------------------------------------------------------------------------
# checkpoint io: header json + named float32 tensors


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "seed": params.seed,
        "config": asdict(params.config),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for name in sorted(params.tensors):
            arr = params.tensors[name]
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes(order="C"))


def load_checkpoint(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    config = ModelConfig(**header["config"])
    expected = param_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    offset = 8 + header_len
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        if name not in expected:
            raise ValueError(f"{path}: unexpected tensor {name!r}")
        if tuple(shape) != expected[name]:
            raise ValueError(
                f"{path}: tensor {name!r} has shape {tuple(shape)}, expected {expected[name]}"
            )
        tensors[name] = data.reshape(shape).astype(np.float64)
    missing = set(expected) - set(tensors)
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    return ModelParams(config=config, seed=int(header["seed"]), tensors=tensors)


def iter_param_coords(params: ModelParams) -> Iterator[tuple[str, tuple[int, ...]]]:
    """Every (tensor name, index) coordinate, in canonical order."""
    for name in param_shapes(params.config):
        arr = params.tensors[name]
        for idx in np.ndindex(arr.shape):
            yield name, idx
