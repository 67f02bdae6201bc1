"""A small pre-norm Transformer encoder-decoder.

Everything runs in float64 on the CPU; the model is small enough that
this costs little and it keeps finite-difference gradient checks
meaningful. GELU is used instead of ReLU so the loss is smooth in the
parameters.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
import torch.nn.functional as F

DTYPE = torch.float64


@dataclass(frozen=True)
class ModelConfig:
    vocab_size_src: int = 50
    vocab_size_tgt: int = 50
    embed_dim: int = 32
    hidden_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention_heads: int = 2
    dropout_rate: float = 0.0
    max_len: int = 20
    # Per-side feed-forward widths; None falls back to hidden_dim.
    encoder_hidden_dim: int | None = None
    decoder_hidden_dim: int | None = None

    def __post_init__(self):
        for name in ("vocab_size_src", "vocab_size_tgt", "embed_dim", "hidden_dim",
                     "encoder_layers", "decoder_layers", "attention_heads", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.embed_dim % self.attention_heads:
            raise ValueError("embed_dim must be divisible by attention_heads")

    def to_dict(self) -> dict:
        return asdict(self)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.dropout = dropout

    def forward(self, x, memory, mask):
        # mask: broadcastable to (B, heads, Tq, Tk), True where attention is allowed
        b, tq, d = x.shape
        tk = memory.shape[1]
        h = self.heads
        q = self.q(x).view(b, tq, h, d // h).transpose(1, 2)
        k = self.k(memory).view(b, tk, h, d // h).transpose(1, 2)
        v = self.v(memory).view(b, tk, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        scores = scores.masked_fill(~mask, float("-inf"))
        attn = F.dropout(torch.softmax(scores, dim=-1), self.dropout, self.training)
        out = (attn @ v).transpose(1, 2).reshape(b, tq, d)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.dropout = dropout

    def forward(self, x):
        x = F.dropout(F.gelu(self.fc1(x)), self.dropout, self.training)
        return self.fc2(x)


class EncoderLayer(nn.Module):
    def __init__(self, dim, hidden, heads, dropout):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, dropout)
        self.ln2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, hidden, dropout)
        self.dropout = dropout

    def forward(self, x, mask):
        y = self.ln1(x)
        x = x + F.dropout(self.attn(y, y, mask), self.dropout, self.training)
        return x + F.dropout(self.ff(self.ln2(x)), self.dropout, self.training)


class DecoderLayer(nn.Module):
    def __init__(self, dim, hidden, heads, dropout):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, dropout)
        self.ln2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, dropout)
        self.ln3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, hidden, dropout)
        self.dropout = dropout

    def forward(self, x, memory, self_mask, cross_mask):
        y = self.ln1(x)
        x = x + F.dropout(self.self_attn(y, y, self_mask), self.dropout, self.training)
        x = x + F.dropout(self.cross_attn(self.ln2(x), memory, cross_mask), self.dropout, self.training)
        return x + F.dropout(self.ff(self.ln3(x)), self.dropout, self.training)


class Seq2Seq(nn.Module):
    """Encoder-decoder over integer token ids; id 0 is padding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        enc_h = config.encoder_hidden_dim or config.hidden_dim
        dec_h = config.decoder_hidden_dim or config.hidden_dim
        # +2 positions: BOS on the decoder side and EOS on the source side.
        self.src_embed = nn.Embedding(config.vocab_size_src, d)
        self.tgt_embed = nn.Embedding(config.vocab_size_tgt, d)
        self.src_pos = nn.Embedding(config.max_len + 2, d)
        self.tgt_pos = nn.Embedding(config.max_len + 2, d)
        p = config.dropout_rate
        self.encoder = nn.ModuleList(EncoderLayer(d, enc_h, config.attention_heads, p)
                                     for _ in range(config.encoder_layers))
        self.decoder = nn.ModuleList(DecoderLayer(d, dec_h, config.attention_heads, p)
                                     for _ in range(config.decoder_layers))
        self.enc_ln = nn.LayerNorm(d)
        self.dec_ln = nn.LayerNorm(d)
        self.out = nn.Linear(d, config.vocab_size_tgt)
        self.to(DTYPE)
        self._init()

    def _init(self):
        for name, p in self.named_parameters():
            if p.dim() > 1:
                nn.init.normal_(p, 0.0, 1.0 / math.sqrt(p.shape[-1]))
            elif name.endswith("bias"):
                nn.init.zeros_(p)
        # Small output weights: an untrained model predicts close to uniform.
        nn.init.normal_(self.out.weight, 0.0, 0.1 / math.sqrt(self.config.embed_dim))

    def _embed(self, embed, pos, ids):
        t = ids.shape[1]
        if t > pos.num_embeddings:
            raise ValueError(f"sequence of length {t} exceeds the model's {pos.num_embeddings} positions")
        positions = torch.arange(t)
        x = embed(ids) * math.sqrt(self.config.embed_dim) + pos(positions)[None]
        return F.dropout(x, self.config.dropout_rate, self.training)

    def encode(self, src):
        """src: (B, S) ids -> (memory, src_mask)."""
        src_mask = (src != 0)[:, None, None, :]
        x = self._embed(self.src_embed, self.src_pos, src)
        for layer in self.encoder:
            x = layer(x, src_mask)
        return self.enc_ln(x), src_mask

    def decode_logits(self, memory, src_mask, tgt_in):
        """tgt_in: (B, T) decoder inputs starting with BOS -> logits (B, T, V)."""
        t = tgt_in.shape[1]
        causal = torch.tril(torch.ones(t, t, dtype=torch.bool))[None, None]
        x = self._embed(self.tgt_embed, self.tgt_pos, tgt_in)
        for layer in self.decoder:
            x = layer(x, memory, causal, src_mask)
        return self.out(self.dec_ln(x))

    def forward(self, src, tgt_in):
        memory, src_mask = self.encode(src)
        return self.decode_logits(memory, src_mask, tgt_in)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())
