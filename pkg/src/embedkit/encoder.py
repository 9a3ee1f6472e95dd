"""Small transformer encoder with grouped-query attention and nested-dim embeddings.

The attention mask enters the layer in two pieces derived from the same
weight matrix: an additive log-indicator (-inf where the weight is
exactly zero) applied before the row softmax, and the fractional weights
multiplied onto the resulting probabilities, after which each row is
renormalized to sum to one.  With an all-zero upper triangle this is
exactly causal attention; with all-ones weights it is exactly
bidirectional attention; scheduled masks interpolate between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .masks import AttentionMask
from .tokenizer import PAD_ID


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    hidden_dim: int = 64
    heads: int = 8
    kv_heads: int = 2
    ffn_dim: int = 128
    vocab_size: int = 512
    max_len: int = 64
    pooling: str = "mean"
    mrl_dims: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        if self.heads % self.kv_heads != 0:
            raise ValueError(f"heads ({self.heads}) must be divisible by kv_heads ({self.kv_heads})")
        if self.hidden_dim % self.heads != 0:
            raise ValueError(f"hidden_dim ({self.hidden_dim}) must be divisible by heads ({self.heads})")
        if self.pooling not in ("mean", "last-token"):
            raise ValueError(f"unknown pooling mode {self.pooling!r}")
        dims = tuple(self.mrl_dims)
        if any(d <= 0 or d > self.hidden_dim for d in dims):
            raise ValueError(f"mrl_dims {dims} must lie in [1, hidden_dim={self.hidden_dim}]")
        if any(a >= b for a, b in zip(dims, dims[1:])):
            raise ValueError(f"mrl_dims {dims} must be strictly ascending")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mrl_dims"] = list(self.mrl_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["mrl_dims"] = tuple(d.get("mrl_dims", ()))
        return cls(**d)


def full_scale_config() -> EncoderConfig:
    """Production-shape reference configuration (not meant to be instantiated here)."""
    return EncoderConfig(
        layers=8,
        hidden_dim=3584,
        heads=32,
        kv_heads=8,
        ffn_dim=8192,
        vocab_size=150_000,
        max_len=32_768,
        pooling="mean",
        mrl_dims=(256, 512, 1024, 1536, 2048, 3072, 3584),
    )


@dataclass
class SentenceEmbedding:
    """L2-normalized sentence vector; ``dim_used`` is the active nested-prefix length."""

    vector: np.ndarray
    dim_used: int
    language_tag: Optional[str] = None

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1 or self.vector.size != self.dim_used:
            raise ValueError(f"vector of length {self.vector.size} does not match dim_used={self.dim_used}")
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"embedding prefix norm {norm} is not 1 within 1e-10")


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    half = np.arange(0, dim, 2, dtype=np.float64)
    freq = np.exp(-np.log(10_000.0) * half / dim)
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: dim - dim // 2])
    return table


def _rmsnorm(x: Tensor, gain: Tensor, dim: int) -> Tensor:
    # x / rms(x) == l2_normalize(x) * sqrt(dim)
    return ag.mul(ag.scale(ag.l2_normalize(x), np.sqrt(dim)), gain)


class Encoder:
    """Token ids -> contextual states -> pooled unit-norm sentence embeddings."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0, params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.positions = sinusoidal_positions(cfg.max_len, cfg.hidden_dim)
        if params is not None:
            self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            return
        rng = np.random.default_rng(seed)
        d, f = cfg.hidden_dim, cfg.ffn_dim
        kv_dim = cfg.kv_heads * (d // cfg.heads)
        p: dict[str, Tensor] = {}
        p["embed"] = Tensor(rng.normal(0.0, 0.05, (cfg.vocab_size, d)), requires_grad=True)
        for i in range(cfg.layers):
            s = 1.0 / np.sqrt(d)
            p[f"layer{i}.attn_gain"] = Tensor(np.ones(d), requires_grad=True)
            p[f"layer{i}.wq"] = Tensor(rng.normal(0.0, s, (d, d)), requires_grad=True)
            p[f"layer{i}.wk"] = Tensor(rng.normal(0.0, s, (d, kv_dim)), requires_grad=True)
            p[f"layer{i}.wv"] = Tensor(rng.normal(0.0, s, (d, kv_dim)), requires_grad=True)
            p[f"layer{i}.wo"] = Tensor(rng.normal(0.0, s, (d, d)), requires_grad=True)
            p[f"layer{i}.ffn_gain"] = Tensor(np.ones(d), requires_grad=True)
            p[f"layer{i}.w1"] = Tensor(rng.normal(0.0, s, (d, f)), requires_grad=True)
            p[f"layer{i}.w2"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(f), (f, d)), requires_grad=True)
        if cfg.layers > 0:
            p["final_gain"] = Tensor(np.ones(d), requires_grad=True)
        self.params = p

    # -- persistence ---------------------------------------------------

    def export_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    # -- forward -------------------------------------------------------

    def _validate_ids(self, ids: np.ndarray):
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            bad = int(ids.max() if ids.max() >= self.cfg.vocab_size else ids.min())
            raise ValueError(f"unknown token id {bad} for vocab_size {self.cfg.vocab_size}")
        if ids.shape[-1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_len {self.cfg.max_len}")
        if ids.shape[-1] < 1:
            raise ValueError("empty token sequence")

    def _mask_pieces(self, mask: AttentionMask, batch: int, length: int,
                     lengths: Optional[np.ndarray]):
        if mask.n != length:
            raise ValueError(f"mask size {mask.n} does not match sequence length {length}")
        if lengths is None:
            w = mask.entries
        else:
            w = np.broadcast_to(mask.entries, (batch, length, length)).copy()
            for b, ln in enumerate(lengths):
                if ln < length:
                    w[b, :, ln:] = 0.0
                    w[b, ln:, ln:][np.diag_indices(length - int(ln))] = 1.0  # pad rows self-attend
            w = w[:, None, :, :]
        log_ind = np.where(w > 0.0, 0.0, -np.inf)
        return w, log_ind

    def forward_batch(self, ids: np.ndarray, mask: AttentionMask,
                      lengths: Optional[np.ndarray] = None) -> Tensor:
        """Contextual states (B, L, hidden) for a batch of equal-padded id rows."""
        ids = np.asarray(ids, dtype=np.intp)
        if ids.ndim != 2:
            raise ValueError(f"expected (batch, length) ids, got shape {ids.shape}")
        self._validate_ids(ids)
        bsz, length = ids.shape
        cfg = self.cfg
        d = cfg.hidden_dim
        heads, kv = cfg.heads, cfg.kv_heads
        dh = d // heads
        group = np.repeat(np.arange(kv), heads // kv)

        x = ag.reshape(ag.index_select(self.params["embed"], 0, ids.reshape(-1)), (bsz, length, d))
        x = ag.add_const(x, self.positions[:length])

        weights, log_ind = self._mask_pieces(mask, bsz, length, lengths)
        inv_sqrt_dh = 1.0 / np.sqrt(dh)

        for i in range(cfg.layers):
            h = _rmsnorm(x, self.params[f"layer{i}.attn_gain"], d)
            q = ag.permute(ag.reshape(ag.matmul(h, self.params[f"layer{i}.wq"]), (bsz, length, heads, dh)), (0, 2, 1, 3))
            k = ag.permute(ag.reshape(ag.matmul(h, self.params[f"layer{i}.wk"]), (bsz, length, kv, dh)), (0, 2, 1, 3))
            v = ag.permute(ag.reshape(ag.matmul(h, self.params[f"layer{i}.wv"]), (bsz, length, kv, dh)), (0, 2, 1, 3))
            k = ag.index_select(k, 1, group)
            v = ag.index_select(v, 1, group)
            scores = ag.scale(ag.matmul(q, ag.permute(k, (0, 1, 3, 2))), inv_sqrt_dh)
            probs = ag.softmax_lastdim(ag.add_const(scores, log_ind))
            weighted = ag.apply_mask(probs, weights)
            attn = ag.div(weighted, ag.sum_lastdim(weighted, keepdims=True))
            ctx = ag.reshape(ag.permute(ag.matmul(attn, v), (0, 2, 1, 3)), (bsz, length, d))
            x = ag.add(x, ag.matmul(ctx, self.params[f"layer{i}.wo"]))

            h = _rmsnorm(x, self.params[f"layer{i}.ffn_gain"], d)
            f = ag.matmul(ag.relu(ag.matmul(h, self.params[f"layer{i}.w1"])), self.params[f"layer{i}.w2"])
            x = ag.add(x, f)

        if cfg.layers > 0:
            x = _rmsnorm(x, self.params["final_gain"], d)
        return x

    def encode(self, tokens: Sequence[int], mask: AttentionMask) -> Tensor:
        """Token-state matrix (L, hidden) for one sequence."""
        ids = np.asarray(tokens, dtype=np.intp)[None, :]
        states = self.forward_batch(ids, mask)
        return ag.reshape(states, (ids.shape[1], self.cfg.hidden_dim))

    def embed_batch(self, ids: np.ndarray, mask: AttentionMask,
                    lengths: Optional[np.ndarray] = None,
                    pooling: Optional[str] = None) -> Tensor:
        """Pooled unit-norm sentence embeddings (B, hidden), gradient-tracked."""
        states = self.forward_batch(ids, mask, lengths)
        return pool_states(states, pooling or self.cfg.pooling, lengths)

    def lm_logits(self, states: Tensor) -> Tensor:
        """Next-token logits via the tied embedding table."""
        return ag.matmul(states, ag.transpose2d(self.params["embed"]))


def pool_states(states: Tensor, mode: str, lengths: Optional[np.ndarray] = None) -> Tensor:
    """Reduce (B, L, D) token states to (B, D) unit-norm sentence vectors."""
    bsz, length, dim = states.shape
    if mode == "mean":
        if lengths is None:
            summed = ag.sum_lastdim(ag.permute(states, (0, 2, 1)))
            pooled = ag.scale(summed, 1.0 / length)
        else:
            valid = (np.arange(length)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
            masked = ag.apply_mask(states, valid[:, :, None])
            summed = ag.sum_lastdim(ag.permute(masked, (0, 2, 1)))
            pooled = ag.apply_mask(summed, (1.0 / np.asarray(lengths, dtype=np.float64))[:, None])
    elif mode == "last-token":
        last = (np.asarray(lengths) - 1 if lengths is not None
                else np.full(bsz, length - 1, dtype=np.intp))
        flat = np.arange(bsz) * length + np.asarray(last, dtype=np.intp)
        pooled = ag.index_select(ag.reshape(states, (bsz * length, dim)), 0, flat)
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return ag.l2_normalize(pooled)


def pool(states, mode: str, language_tag: Optional[str] = None) -> SentenceEmbedding:
    """Pool one (L, D) token-state matrix into a SentenceEmbedding."""
    data = states.data if isinstance(states, Tensor) else np.asarray(states, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError(f"expected at least one (L, D) token state, got shape {data.shape}")
    vec = pool_states(Tensor(data[None, :, :]), mode).data[0]
    return SentenceEmbedding(vector=vec, dim_used=vec.size, language_tag=language_tag)


def mrl_truncate(e: SentenceEmbedding, d: int, mrl_dims: Sequence[int]) -> SentenceEmbedding:
    """Keep the first ``d`` coordinates and renormalize (nested-prefix property)."""
    if d not in tuple(mrl_dims):
        raise ValueError(f"target dim {d} not in configured mrl_dims {tuple(mrl_dims)}")
    if d == e.dim_used:
        return e
    if d > e.dim_used:
        raise ValueError(f"target dim {d} exceeds active dim {e.dim_used}")
    prefix = e.vector[:d]
    norm = np.linalg.norm(prefix)
    if norm == 0.0:
        raise ValueError("truncated prefix has zero norm")
    return SentenceEmbedding(vector=prefix / norm, dim_used=d, language_tag=e.language_tag)


def truncate_normalize(embeddings: Tensor, d: int) -> Tensor:
    """Tracked prefix truncation + renormalization for nested-dim training."""
    if d == embeddings.shape[-1]:
        return embeddings
    return ag.l2_normalize(ag.index_select(embeddings, -1, np.arange(d)))


__all__ = [
    "EncoderConfig", "Encoder", "SentenceEmbedding", "full_scale_config",
    "pool", "pool_states", "mrl_truncate", "truncate_normalize",
    "sinusoidal_positions", "PAD_ID",
]
