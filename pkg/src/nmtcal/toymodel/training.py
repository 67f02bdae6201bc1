"""Mini-batch training with Adam, inverse-square-root warmup and smoothed targets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..smoothing import SmoothingPolicy, assign_epsilons
from .model import DTYPE, ModelConfig
from .toy import ToyModel, pad_batch


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss}) at step {step}")


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    warmup_steps: int = 400
    batch_size: int = 32
    max_steps: int = 4000
    seed: int = 0
    smoothing: SmoothingPolicy = field(default_factory=SmoothingPolicy.none)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.warmup_steps < 0 or self.max_steps < 0 or self.batch_size < 1:
            raise ValueError("warmup_steps/max_steps must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["smoothing"] = str(self.smoothing)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("smoothing"), str):
            d["smoothing"] = SmoothingPolicy.parse(d["smoothing"])
        return cls(**d)


def learning_rate(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` then decay proportional to ``1/sqrt(step)``; steps start at 1."""
    if warmup == 0:
        return peak / math.sqrt(step)
    return peak * min(step / warmup, math.sqrt(warmup / step))


class SmoothedCrossEntropy(torch.autograd.Function):
    """Sum over rows of cross-entropy against per-row smoothed targets.

    The truth label keeps ``1 - eps``; the other ``V - 1`` labels share
    ``eps`` evenly. The backward pass is the closed form
    ``softmax(logits) - q``.
    """

    @staticmethod
    def forward(ctx, logits, truth, eps):
        v = logits.shape[-1]
        logp = torch.log_softmax(logits, dim=-1)
        q = (eps / (v - 1))[:, None].expand(-1, v).clone()
        q[torch.arange(len(truth)), truth] = 1.0 - eps
        ctx.save_for_backward(logp, q)
        return -(q * logp).sum()

    @staticmethod
    def backward(ctx, grad_out):
        logp, q = ctx.saved_tensors
        return grad_out * (logp.exp() - q), None, None


def _target_tensors(model: ToyModel, pairs, epsilons):
    src = [model.encode_source(p.source.surfaces) for p in pairs]
    tgt = [model.encode_target(p.reference.surfaces) for p in pairs]
    bos, eos = model.tgt_vocab.bos, model.tgt_vocab.eos
    tgt_in = pad_batch([[bos] + t for t in tgt])
    tgt_out = pad_batch([t + [eos] for t in tgt])
    eps = torch.zeros(tgt_out.shape, dtype=DTYPE)
    for i, e in enumerate(epsilons):
        eps[i, :len(e)] = torch.as_tensor(np.asarray(e, dtype=float))
    return pad_batch(src), tgt_in, tgt_out, eps


def batch_loss(model: ToyModel, pairs, epsilons) -> torch.Tensor:
    """Smoothed loss summed over target positions (EOS included), averaged over sentences.

    ``epsilons[i]`` holds one smoothing value per target position of pair
    ``i``, the end-of-sentence position last.
    """
    src, tgt_in, tgt_out, eps = _target_tensors(model, pairs, epsilons)
    logits = model.net(src, tgt_in)
    keep = tgt_out != 0
    total = SmoothedCrossEntropy.apply(logits[keep], tgt_out[keep], eps[keep])
    return total / len(pairs)


def token_epsilons(policy: SmoothingPolicy, pairs, confidences=None) -> list[np.ndarray]:
    """Per-position smoothing values for every pair (length = reference length + 1)."""
    out = []
    for k, p in enumerate(pairs):
        length = len(p.reference) + 1
        if policy.needs_confidence:
            if confidences is None:
                raise ValueError("graduated smoothing needs first-pass confidences")
            conf = np.asarray(confidences[k], dtype=float)
            if conf.shape != (length,):
                raise ValueError(f"pair {k}: expected {length} confidences, got {conf.shape[0]}")
            out.append(assign_epsilons(policy, conf))
        else:
            out.append(assign_epsilons(policy, np.zeros(length)))
    return out


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, corpus: Sequence, src_vocab, tgt_vocab,
          confidences=None, log_every: int = 0, logger=None) -> ToyModel:
    """Train a fresh model on ``corpus`` (pairs with source/reference).

    Deterministic for a given seed: parameter initialisation and dropout
    draw from torch's generator seeded with ``train_cfg.seed``; batches
    come from a numpy generator seeded with the same value.
    """
    torch.manual_seed(train_cfg.seed)
    model = ToyModel.create(model_cfg, src_vocab, tgt_vocab)
    model.check_corpus(corpus)
    for p in corpus:
        if len(p.source) + 1 > model_cfg.max_len + 2 or len(p.reference) + 1 > model_cfg.max_len + 2:
            raise ValueError(f"sentence longer than max_len={model_cfg.max_len}")
    model.train_config = train_cfg.to_dict()
    eps_all = token_epsilons(train_cfg.smoothing, corpus, confidences)
    opt = torch.optim.Adam(model.net.parameters(), lr=train_cfg.peak_lr,
                           betas=(train_cfg.beta1, train_cfg.beta2), eps=train_cfg.adam_eps)
    rng = np.random.default_rng(train_cfg.seed)
    model.net.train()
    for step in range(1, train_cfg.max_steps + 1):
        for group in opt.param_groups:
            group["lr"] = learning_rate(step, train_cfg.peak_lr, train_cfg.warmup_steps)
        idx = rng.integers(0, len(corpus), size=min(train_cfg.batch_size, len(corpus)))
        loss = batch_loss(model, [corpus[i] for i in idx], [eps_all[i] for i in idx])
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)
        opt.zero_grad()
        loss.backward()
        opt.step()
        model.loss_curve.append(value)
        if log_every and logger is not None and step % log_every == 0:
            logger.info("step %d loss %.4f lr %.2e", step, value, opt.param_groups[0]["lr"])
    model.net.eval()
    return model
