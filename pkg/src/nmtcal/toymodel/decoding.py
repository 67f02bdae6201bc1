"""Greedy and beam-search decoding, plus teacher-forced scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from ..corpus import ParallelPair, Sentence
from .toy import ToyModel, pad_batch


@dataclass
class DecodeResult:
    tokens: Sentence
    confidences: list[float]
    score: float
    truncated: bool = False

    def __post_init__(self):
        if len(self.confidences) != len(self.tokens):
            raise ValueError("one confidence per emitted token is required")


def _next_log_probs(model: ToyModel, memory, src_mask, prefixes: Sequence[Sequence[int]]) -> torch.Tensor:
    tgt_in = torch.tensor([list(p) for p in prefixes], dtype=torch.long)
    k = tgt_in.shape[0]
    logits = model.net.decode_logits(memory.expand(k, -1, -1), src_mask.expand(k, -1, -1, -1), tgt_in)
    return torch.log_softmax(logits[:, -1], dim=-1)


def _encode_one(model: ToyModel, source, strict: bool = True):
    surfaces = source.surfaces if isinstance(source, Sentence) else list(source)
    src = torch.tensor([model.encode_source(surfaces, strict)], dtype=torch.long)
    return model.net.encode(src)


def _result(model: ToyModel, ids, confs, score, truncated) -> DecodeResult:
    return DecodeResult(Sentence.from_surfaces(model.tgt_vocab.decode(ids)), list(confs), float(score), truncated)


@torch.no_grad()
def greedy_decode(model: ToyModel, source, max_len: int | None = None) -> DecodeResult:
    """Emit the most probable token at every step until end-of-sentence."""
    model.net.eval()
    max_len = model.config.max_len if max_len is None else max_len
    memory, src_mask = _encode_one(model, source)
    bos, eos = model.tgt_vocab.bos, model.tgt_vocab.eos
    prefix = [bos]
    confs, score = [], 0.0
    for step in range(max_len + 1):
        logp = _next_log_probs(model, memory, src_mask, [prefix])[0]
        tok = int(torch.argmax(logp))
        if tok == eos:
            return _result(model, prefix[1:], confs, score + float(logp[tok]), False)
        if step == max_len:
            break
        score += float(logp[tok])
        prefix.append(tok)
        confs.append(float(torch.exp(logp[tok])))
    return _result(model, prefix[1:], confs, score, True)


@torch.no_grad()
def decode(model: ToyModel, source, beam_size: int = 1, max_len: int | None = None) -> DecodeResult:
    """Length-unnormalised beam search over summed log-probabilities.

    A hypothesis finishes when it emits end-of-sentence (which is scored
    but not returned). Search stops once the best finished score is at
    least the best live score, since extending a live hypothesis can only
    lower it. Returns the best finished hypothesis, or, if none finished
    within ``max_len`` tokens, the best live one flagged ``truncated``.
    ``max_len`` bounds the returned tokens; end-of-sentence may follow them.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    model.net.eval()
    max_len = model.config.max_len if max_len is None else max_len
    memory, src_mask = _encode_one(model, source)
    bos, eos = model.tgt_vocab.bos, model.tgt_vocab.eos
    # (score, prefix, confidences)
    live = [(0.0, [bos], [])]
    finished = []
    for step in range(max_len + 1):
        logp = _next_log_probs(model, memory, src_mask, [h[1] for h in live])
        v = logp.shape[1]
        total = torch.tensor([h[0] for h in live], dtype=logp.dtype)[:, None] + logp
        flat = total.reshape(-1)
        # Stable descending sort: ties go to the earlier hypothesis, then the lower token id.
        order = torch.sort(flat, descending=True, stable=True).indices
        new_live = []
        for idx in order[: 2 * beam_size].tolist():
            b, tok = divmod(idx, v)
            score, prefix, confs = live[b]
            new_score = float(flat[idx])
            if tok == eos:
                finished.append((new_score, prefix[1:], confs))
            else:
                new_live.append((new_score, prefix + [tok], confs + [float(torch.exp(logp[b, tok]))]))
                if len(new_live) == beam_size:
                    break
        if step == max_len:
            # Only end-of-sentence may follow ``max_len`` tokens; ``live`` stays as the fallback.
            break
        live = new_live
        if finished:
            best_finished = max(f[0] for f in finished)
            if not live or best_finished >= max(h[0] for h in live):
                break
    if finished:
        score, ids, confs = max(finished, key=lambda f: f[0])
        return _result(model, ids, confs, score, False)
    score, prefix, confs = max(live, key=lambda h: h[0])
    return _result(model, prefix[1:], confs, score, True)


@torch.no_grad()
def teacher_forced_log_probs(model: ToyModel, pairs) -> list[torch.Tensor]:
    """Per pair, the (T+1, V) next-token log-probabilities given gold prefixes.

    Row ``t`` is the distribution over position ``t`` of the reference;
    the last row predicts end-of-sentence.
    """
    model.net.eval()
    out = []
    bos = model.tgt_vocab.bos
    for start in range(0, len(pairs), 64):
        chunk = pairs[start:start + 64]
        src = pad_batch([model.encode_source(p.source.surfaces) for p in chunk])
        tgt = [model.encode_target(p.reference.surfaces) for p in chunk]
        logits = model.net(src, pad_batch([[bos] + t for t in tgt]))
        logp = torch.log_softmax(logits, dim=-1)
        for i, t in enumerate(tgt):
            out.append(logp[i, : len(t) + 1])
    return out


def sequence_log_prob(model: ToyModel, source, target) -> float:
    """log P(target + EOS | source) as the sum of per-step log-probabilities."""
    src = source if isinstance(source, Sentence) else Sentence.from_surfaces(source)
    tgt = target if isinstance(target, Sentence) else Sentence.from_surfaces(target)
    logp = teacher_forced_log_probs(model, [ParallelPair(src, tgt)])[0]
    ids = model.encode_target(tgt.surfaces) + [model.tgt_vocab.eos]
    return float(logp[torch.arange(len(ids)), torch.tensor(ids)].sum())
