"""Toy transformer token encoder: embeddings plus a stack of encoder blocks.

Runs one sequence at a time in float64. Forward passes return caches that the
matching ``*_backward`` functions consume; backward accumulates parameter
gradients in place so a batch can share one gradient structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    dropout,
    dropout_backward,
    gelu,
    gelu_backward,
    init_normal,
    layer_norm,
    layer_norm_backward,
    softmax_rows,
    softmax_rows_backward,
)

ATTENTION_VARIANTS = ("coda", "dpa")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and adapter-placement settings for the tagger."""

    d: int = 64
    h: int = 4
    d_ff: int = 128
    layers: int = 4
    max_len: int = 64
    vocab_size: int = 2000
    dropout_p: float = 0.1
    adapter_layer: int = 4
    adapter_residual: bool = False
    use_descnet: bool = True
    attention_variant: str = "coda"
    use_igm: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d % self.h != 0:
            raise ValueError(f"head count {self.h} must divide width {self.d}")
        if not 1 <= self.adapter_layer <= self.layers:
            raise ValueError(f"adapter_layer {self.adapter_layer} outside [1, {self.layers}]")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p {self.dropout_p} outside [0, 1)")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ValueError(f"attention_variant must be one of {ATTENTION_VARIANTS}")
        for name in ("d", "h", "d_ff", "layers", "max_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class EncoderBlockParams:
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    w_ff1: np.ndarray
    b_ff1: np.ndarray
    w_ff2: np.ndarray
    b_ff2: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class EncoderParams:
    token_embedding: np.ndarray       # V x d
    positional_embedding: np.ndarray  # N x d
    blocks: list[EncoderBlockParams] = field(default_factory=list)


def init_block_params(rng: np.random.Generator, d: int, d_ff: int) -> EncoderBlockParams:
    return EncoderBlockParams(
        w_q=init_normal(rng, d, d),
        b_q=np.zeros(d),
        w_k=init_normal(rng, d, d),
        b_k=np.zeros(d),
        w_v=init_normal(rng, d, d),
        b_v=np.zeros(d),
        w_o=init_normal(rng, d, d),
        b_o=np.zeros(d),
        ln1_gain=np.ones(d),
        ln1_bias=np.zeros(d),
        w_ff1=init_normal(rng, d, d_ff),
        b_ff1=np.zeros(d_ff),
        w_ff2=init_normal(rng, d_ff, d),
        b_ff2=np.zeros(d),
        ln2_gain=np.ones(d),
        ln2_bias=np.zeros(d),
    )


def init_encoder_params(rng: np.random.Generator, config: ModelConfig, vocab_size: int) -> EncoderParams:
    if vocab_size > config.vocab_size:
        raise ValueError(f"vocab of {vocab_size} exceeds configured cap {config.vocab_size}")
    return EncoderParams(
        token_embedding=init_normal(rng, vocab_size, config.d),
        positional_embedding=init_normal(rng, config.max_len, config.d),
        blocks=[init_block_params(rng, config.d, config.d_ff) for _ in range(config.layers)],
    )


def embed(token_ids: list[int], params: EncoderParams, config: ModelConfig) -> np.ndarray:
    """Token embeddings plus learned positional embeddings, pointwise."""
    n = len(token_ids)
    if n == 0:
        raise ValueError("cannot embed an empty sequence")
    if n > config.max_len:
        raise ValueError(f"sequence of {n} tokens exceeds max length {config.max_len}")
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.min() < 0 or ids.max() >= params.token_embedding.shape[0]:
        raise ValueError("token id outside vocabulary range")
    return params.token_embedding[ids] + params.positional_embedding[:n]


def embed_backward(d_z: np.ndarray, token_ids: list[int], grads: EncoderParams) -> None:
    ids = np.asarray(token_ids, dtype=np.intp)
    np.add.at(grads.token_embedding, ids, d_z)
    grads.positional_embedding[: len(token_ids)] += d_z


def mhsa_forward(z: np.ndarray, blk: EncoderBlockParams, n_heads: int):
    """Scaled dot-product self-attention over h heads; returns (out, cache)."""
    n, d = z.shape
    dh = d // n_heads
    q = z @ blk.w_q + blk.b_q
    k = z @ blk.w_k + blk.b_k
    v = z @ blk.w_v + blk.b_v
    # (h, n, dh) views per head
    qh = q.reshape(n, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(n, n_heads, dh).transpose(1, 0, 2)
    vh = v.reshape(n, n_heads, dh).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    probs = softmax_rows(scores)
    heads = probs @ vh
    concat = heads.transpose(1, 0, 2).reshape(n, d)
    out = concat @ blk.w_o + blk.b_o
    cache = {"z": z, "qh": qh, "kh": kh, "vh": vh, "probs": probs, "concat": concat}
    return out, cache


def mhsa_backward(d_out: np.ndarray, cache, blk: EncoderBlockParams, g: EncoderBlockParams) -> np.ndarray:
    z, qh, kh, vh, probs, concat = (
        cache["z"], cache["qh"], cache["kh"], cache["vh"], cache["probs"], cache["concat"],
    )
    n, d = z.shape
    n_heads = qh.shape[0]
    dh = d // n_heads
    g.w_o += concat.T @ d_out
    g.b_o += d_out.sum(axis=0)
    d_concat = d_out @ blk.w_o.T
    d_heads = d_concat.reshape(n, n_heads, dh).transpose(1, 0, 2)
    d_probs = d_heads @ vh.transpose(0, 2, 1)
    d_vh = probs.transpose(0, 2, 1) @ d_heads
    d_scores = softmax_rows_backward(probs, d_probs) / np.sqrt(dh)
    d_qh = d_scores @ kh
    d_kh = d_scores.transpose(0, 2, 1) @ qh
    d_q = d_qh.transpose(1, 0, 2).reshape(n, d)
    d_k = d_kh.transpose(1, 0, 2).reshape(n, d)
    d_v = d_vh.transpose(1, 0, 2).reshape(n, d)
    g.w_q += z.T @ d_q
    g.b_q += d_q.sum(axis=0)
    g.w_k += z.T @ d_k
    g.b_k += d_k.sum(axis=0)
    g.w_v += z.T @ d_v
    g.b_v += d_v.sum(axis=0)
    return d_q @ blk.w_q.T + d_k @ blk.w_k.T + d_v @ blk.w_v.T


def ffn_forward(u: np.ndarray, blk: EncoderBlockParams):
    h1 = u @ blk.w_ff1 + blk.b_ff1
    act, tanh_term = gelu(h1)
    out = act @ blk.w_ff2 + blk.b_ff2
    return out, {"u": u, "h1": h1, "act": act, "tanh_term": tanh_term}


def ffn_backward(d_out: np.ndarray, cache, blk: EncoderBlockParams, g: EncoderBlockParams) -> np.ndarray:
    g.w_ff2 += cache["act"].T @ d_out
    g.b_ff2 += d_out.sum(axis=0)
    d_act = d_out @ blk.w_ff2.T
    d_h1 = gelu_backward(d_act, cache["h1"], cache["tanh_term"])
    g.w_ff1 += cache["u"].T @ d_h1
    g.b_ff1 += d_h1.sum(axis=0)
    return d_h1 @ blk.w_ff1.T


def encoder_block_forward(z, blk: EncoderBlockParams, config: ModelConfig, rng=None, train=False):
    """One block: LN(z + Dropout(MHSA(z))) then LN(. + Dropout(FFN(.)))."""
    attn, attn_cache = mhsa_forward(z, blk, config.h)
    attn_drop, mask1 = dropout(attn, config.dropout_p, rng, train)
    u, ln1_cache = layer_norm(z + attn_drop, blk.ln1_gain, blk.ln1_bias)
    ff, ffn_cache = ffn_forward(u, blk)
    ff_drop, mask2 = dropout(ff, config.dropout_p, rng, train)
    out, ln2_cache = layer_norm(u + ff_drop, blk.ln2_gain, blk.ln2_bias)
    cache = {
        "attn": attn_cache, "mask1": mask1, "ln1": ln1_cache,
        "ffn": ffn_cache, "mask2": mask2, "ln2": ln2_cache,
    }
    return out, cache


def encoder_block_backward(d_out, cache, blk: EncoderBlockParams, config: ModelConfig,
                           g: EncoderBlockParams) -> np.ndarray:
    d_res2, d_g2, d_b2 = layer_norm_backward(d_out, cache["ln2"], blk.ln2_gain)
    g.ln2_gain += d_g2
    g.ln2_bias += d_b2
    d_ff = dropout_backward(d_res2, cache["mask2"], config.dropout_p)
    d_u = d_res2 + ffn_backward(d_ff, cache["ffn"], blk, g)
    d_res1, d_g1, d_b1 = layer_norm_backward(d_u, cache["ln1"], blk.ln1_gain)
    g.ln1_gain += d_g1
    g.ln1_bias += d_b1
    d_attn = dropout_backward(d_res1, cache["mask1"], config.dropout_p)
    return d_res1 + mhsa_backward(d_attn, cache["attn"], blk, g)


def encode_forward(token_ids, params: EncoderParams, config: ModelConfig,
                   rng=None, train=False, adapter=None):
    """Run embeddings and all blocks; after block ``config.adapter_layer`` the
    optional ``adapter(z)`` callback rewrites the running representation.

    ``adapter`` must return (z_new, adapter_cache). Returns (z, cache).
    """
    z = embed(token_ids, params, config)
    block_caches = []
    adapter_cache = None
    for i, blk in enumerate(params.blocks, start=1):
        z, bc = encoder_block_forward(z, blk, config, rng, train)
        block_caches.append(bc)
        if adapter is not None and i == config.adapter_layer:
            z_in = z
            z, adapter_cache = adapter(z)
            if config.adapter_residual:
                z = z + z_in
    cache = {"token_ids": list(token_ids), "blocks": block_caches, "adapter": adapter_cache}
    return z, cache


def encode_backward(d_z, cache, params: EncoderParams, config: ModelConfig,
                    grads: EncoderParams, adapter_backward=None) -> None:
    """Mirror of ``encode_forward``; ``adapter_backward(d_out, cache)`` must
    return the gradient w.r.t. the adapter's input."""
    for i in range(len(params.blocks), 0, -1):
        if adapter_backward is not None and i == config.adapter_layer:
            d_adapter_in = adapter_backward(d_z, cache["adapter"])
            if config.adapter_residual:
                d_adapter_in = d_adapter_in + d_z
            d_z = d_adapter_in
        d_z = encoder_block_backward(d_z, cache["blocks"][i - 1], params.blocks[i - 1], config, grads.blocks[i - 1])
    embed_backward(d_z, cache["token_ids"], grads)


# Convenience, cache-free views for callers that only need the forward value.

def multi_head_self_attention(z: np.ndarray, blk: EncoderBlockParams, n_heads: int) -> np.ndarray:
    return mhsa_forward(z, blk, n_heads)[0]


def feed_forward(z: np.ndarray, blk: EncoderBlockParams) -> np.ndarray:
    return ffn_forward(z, blk)[0]


def encoder_block(z, blk: EncoderBlockParams, config: ModelConfig, rng=None, train=False) -> np.ndarray:
    return encoder_block_forward(z, blk, config, rng, train)[0]


def encode(token_ids, params: EncoderParams, config: ModelConfig, rng=None, train=False, adapter=None) -> np.ndarray:
    return encode_forward(token_ids, params, config, rng, train, adapter)[0]
