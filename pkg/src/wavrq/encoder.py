"""Transformer encoder with gated relative position bias.

Pre-norm blocks over projected feature frames. Attention scores get an
additive bias looked up from a bucketed relative-distance embedding
(linear near field, log-spaced far field, clipped at max_rel_distance)
and modulated per query by a sigmoid gate plus a query-scaled update of
the same embedding:

    bias[h, i, j] = sigmoid(q_i^h . w_h) * (emb[h, b(i-j)] + (q_i^h . v_h) * emb[h, b(i-j)])

Both gate terms multiply the key-varying embedding; a purely additive
per-query term would be cancelled by the softmax's shift invariance and
carry no gradient. For the same reason the key projection has no bias.
The bucket table is shared across layers; gates are per layer. The
output head is a zero-initialized linear map to the codebook vocabulary,
so a fresh model scores every class equally and the initial masked
cross-entropy is exactly ln(vocab).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, parameter
from .features import FeatureFrames
from .nn import LayerNorm, Linear, Module

NEG_INF = -1e9  # additive key-mask value; exp() underflows to exactly 0


@dataclass
class EncoderConfig:
    layers: int = 12
    hidden: int = 768
    heads: int = 8
    ffn_dim: int = 3072
    input_dim: int = 512
    vocab: int = 8192
    rel_pos_buckets: int = 320
    max_rel_distance: int = 800
    dropout: float = 0.1

    def validate(self):
        if self.hidden % self.heads:
            raise ValueError(
                f"encoder.hidden: {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"encoder.dropout: must be in [0, 1), got {self.dropout}")
        if self.rel_pos_buckets < 4 or self.rel_pos_buckets % 2:
            raise ValueError("encoder.rel_pos_buckets: need an even count >= 4")
        if self.max_rel_distance <= self.rel_pos_buckets // 4:
            raise ValueError("encoder.max_rel_distance: must exceed the linear near field")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class EncoderOutput:
    layer_states: list  # (layers + 1) tensors of (B, T, hidden); [0] is post-projection
    logits: Tensor      # (B, T, vocab)


def relative_position_buckets(t: int, num_buckets: int, max_distance: int) -> np.ndarray:
    """(T, T) bucket ids for key_pos - query_pos.

    Sign takes half the buckets; within each sign the near field is linear
    and the far field log-spaced, saturating at max_distance.
    """
    rel = np.arange(t)[None, :] - np.arange(t)[:, None]
    half = num_buckets // 2
    out = np.where(rel > 0, half, 0).astype(np.int64)
    a = np.abs(rel)
    max_exact = half // 2
    scale = (half - max_exact) / np.log(max_distance / max_exact)
    large = max_exact + (np.log(np.maximum(a, 1) / max_exact) * scale).astype(np.int64)
    large = np.minimum(large, half - 1)
    out += np.where(a < max_exact, a, large)
    return out


class TransformerBlock(Module):
    def __init__(self, cfg: EncoderConfig, rng, dtype=np.float32):
        super().__init__()
        h = cfg.hidden
        self.cfg = cfg
        self.dtype = dtype
        self._children["ln_attn"] = LayerNorm(h, dtype)
        for name in ("q", "k", "v", "o"):
            # key bias is softmax-shift-invariant (untrainable), so leave it out
            self._children[f"proj_{name}"] = Linear(h, h, rng, dtype, bias=(name != "k"))
        self._params["gate_w"] = parameter(np.zeros((cfg.heads, cfg.head_dim), dtype=dtype))
        self._params["gate_v"] = parameter(np.zeros((cfg.heads, cfg.head_dim), dtype=dtype))
        self._children["ln_ffn"] = LayerNorm(h, dtype)
        self._children["ffn_in"] = Linear(h, cfg.ffn_dim, rng, dtype)
        self._children["ffn_out"] = Linear(cfg.ffn_dim, h, rng, dtype)

    def _split_heads(self, x: Tensor, b: int, t: int) -> Tensor:
        cfg = self.cfg
        return ag.permute(ag.reshape(x, (b, t, cfg.heads, cfg.head_dim)), (0, 2, 1, 3))

    def gated_bias(self, q: Tensor, bias_emb: Tensor) -> Tensor:
        """q: (B, H, T, dh); bias_emb: (H, T, T) bucket lookups -> (B, H, T, T)."""
        cfg = self.cfg
        w = ag.reshape(self._params["gate_w"], (1, cfg.heads, 1, cfg.head_dim))
        v = ag.reshape(self._params["gate_v"], (1, cfg.heads, 1, cfg.head_dim))
        gate = ag.sigmoid(ag.tsum(ag.mul(q, w), axis=-1, keepdims=True))  # (B, H, T, 1)
        update = ag.tsum(ag.mul(q, v), axis=-1, keepdims=True)            # (B, H, T, 1)
        t = q.shape[2]
        emb = ag.reshape(bias_emb, (1, cfg.heads, t, t))
        return ag.mul(gate, ag.add(emb, ag.mul(update, emb)))

    def __call__(self, x: Tensor, bias_emb: Tensor, key_mask: np.ndarray,
                 rng=None) -> Tensor:
        cfg = self.cfg
        b, t, _ = x.shape
        h = self._children["ln_attn"](x)
        q = self._split_heads(self._children["proj_q"](h), b, t)
        k = self._split_heads(self._children["proj_k"](h), b, t)
        v = self._split_heads(self._children["proj_v"](h), b, t)
        scores = ag.mul(ag.matmul(q, ag.permute(k, (0, 1, 3, 2))),
                        1.0 / np.sqrt(cfg.head_dim))
        scores = ag.add(scores, self.gated_bias(q, bias_emb))
        scores = ag.add(scores, key_mask)  # (B, 1, 1, T) constant, NEG_INF at padding
        attn = ag.dropout(ag.softmax(scores, axis=-1), cfg.dropout, rng)
        ctx = ag.matmul(attn, v)  # (B, H, T, dh)
        ctx = ag.reshape(ag.permute(ctx, (0, 2, 1, 3)), (b, t, cfg.hidden))
        x = ag.add(x, ag.dropout(self._children["proj_o"](ctx), cfg.dropout, rng))
        f = self._children["ln_ffn"](x)
        f = self._children["ffn_out"](ag.gelu(self._children["ffn_in"](f)))
        return ag.add(x, ag.dropout(f, cfg.dropout, rng))


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self._children["input_ln"] = LayerNorm(cfg.input_dim, dtype)
        self._children["input_proj"] = Linear(cfg.input_dim, cfg.hidden, rng, dtype)
        self._params["rel_pos_emb"] = parameter(
            (0.02 * rng.standard_normal((cfg.rel_pos_buckets, cfg.heads))).astype(dtype))
        for i in range(cfg.layers):
            self._children[f"block{i}"] = TransformerBlock(cfg, rng, dtype)
        self._children["final_ln"] = LayerNorm(cfg.hidden, dtype)
        self._children["head"] = Linear(cfg.hidden, cfg.vocab, rng, dtype, init="zeros")
        self._bucket_cache: dict[int, np.ndarray] = {}

    def _buckets(self, t: int) -> np.ndarray:
        if t not in self._bucket_cache:
            self._bucket_cache[t] = relative_position_buckets(
                t, self.cfg.rel_pos_buckets, self.cfg.max_rel_distance)
        return self._bucket_cache[t]

    def encode(self, frames: FeatureFrames, rng=None) -> EncoderOutput:
        """Forward pass; pass an rng to enable dropout (training mode)."""
        cfg = self.cfg
        if frames.dim != cfg.input_dim:
            raise ValueError(
                f"feature dim {frames.dim} does not match encoder input dim {cfg.input_dim}")
        b, t = frames.batch_size, frames.total_frames
        h = self._children["input_proj"](self._children["input_ln"](frames.values))
        states = [h]
        # (H, T, T) bucket embedding, shared by every layer's gate
        bias_emb = ag.permute(
            ag.embedding(self._params["rel_pos_emb"], self._buckets(t)), (2, 0, 1))
        key_mask = np.where(frames.frame_mask(), 0.0, NEG_INF).astype(self.dtype)
        key_mask = key_mask[:, None, None, :]
        for i in range(cfg.layers):
            h = self._children[f"block{i}"](h, bias_emb, key_mask, rng)
            states.append(h)
        logits = self._children["head"](self._children["final_ln"](h))
        return EncoderOutput(states, logits)


def gated_rel_pos_bias(block: TransformerBlock, q: Tensor, bias_emb: Tensor) -> Tensor:
    """Standalone handle on one block's bias computation (used by tests/demos)."""
    return block.gated_bias(q, bias_emb)


def count_params(encoder_cfg: EncoderConfig, conv_layers=None,
                 quantizer_dims=(512, 16, 8192)) -> dict:
    """Exact scalar counts, by module, from configs alone (nothing instantiated).

    quantizer_dims = (D_in, code_dim, vocab). Returns per-module trainable
    counts, totals, the non-trainable count under the configured code_dim
    plus the alternative hidden-sized-code reading, and a serialized size
    estimate at 4 bytes per scalar.
    """
    cfg = encoder_cfg
    counts = {}
    if conv_layers:
        n = 0
        c_in = 1
        for i, (c_out, k, _s) in enumerate(conv_layers):
            n += c_out * c_in * k
            if i == 0:
                n += 2 * c_out  # group-norm affine
            c_in = c_out
        counts["conv_featurizer"] = n
    counts["input"] = 2 * cfg.input_dim + cfg.input_dim * cfg.hidden + cfg.hidden
    counts["rel_pos_emb"] = cfg.rel_pos_buckets * cfg.heads
    per_block = (
        4 * cfg.hidden * cfg.hidden + 3 * cfg.hidden    # q, k, v, o (no key bias)
        + 2 * cfg.heads * (cfg.hidden // cfg.heads)     # gates
        + 4 * cfg.hidden                                # two layer norms
        + cfg.hidden * cfg.ffn_dim + cfg.ffn_dim        # ffn in
        + cfg.ffn_dim * cfg.hidden + cfg.hidden         # ffn out
    )
    counts["blocks"] = cfg.layers * per_block
    counts["final_ln"] = 2 * cfg.hidden
    counts["head"] = cfg.hidden * cfg.vocab + cfg.vocab
    trainable = sum(counts.values())
    d_in, d, vocab = quantizer_dims
    non_trainable = vocab * d + d_in * d
    alt_non_trainable = vocab * cfg.hidden + d_in * cfg.hidden
    return {
        "by_module": counts,
        "trainable": trainable,
        "non_trainable": non_trainable,
        "non_trainable_hidden_dim_reading": alt_non_trainable,
        "total": trainable + non_trainable,
        "size_mb": 4.0 * (trainable + non_trainable) / (1024 ** 2),
    }
