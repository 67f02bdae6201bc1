"""Token-level predictions under teacher forcing and under free-running decoding."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from ..calibration import Prediction
from ..ter import DEFAULT_MAX_SHIFT_DISTANCE, label_sentence
from .decoding import DecodeResult, decode, teacher_forced_log_probs
from .toy import ToyModel


def teacher_forced_predictions(model: ToyModel, pairs) -> list[Prediction]:
    """One prediction per reference token: the argmax given the gold prefix.

    Correct iff the argmax equals the reference token. The end-of-sentence
    position is not included.
    """
    model.check_corpus(pairs)
    preds = []
    for p, logp in zip(pairs, teacher_forced_log_probs(model, pairs)):
        gold = model.encode_target(p.reference.surfaces)
        probs = logp[: len(gold)].exp()
        conf, arg = probs.max(dim=-1)
        n = len(gold)
        for t in range(n):
            ok = int(arg[t]) == gold[t]
            preds.append(Prediction(
                token=p.reference[t],
                confidence=float(conf[t]),
                correct=ok,
                position_index=t,
                sentence_length=n,
                label="C" if ok else "S",
            ))
    return preds


def confidence_pass(model: ToyModel, pairs) -> list[np.ndarray]:
    """Probability of each gold target token (and the final end-of-sentence) given the gold prefix."""
    model.check_corpus(pairs)
    out = []
    for p, logp in zip(pairs, teacher_forced_log_probs(model, pairs)):
        ids = model.encode_target(p.reference.surfaces) + [model.tgt_vocab.eos]
        out.append(logp[torch.arange(len(ids)), torch.tensor(ids)].exp().numpy().copy())
    return out


def decode_all(model: ToyModel, pairs, beam_size: int = 1, max_len: int | None = None) -> list[DecodeResult]:
    return [decode(model, p.source, beam_size, max_len) for p in pairs]


def inference_predictions(model: ToyModel, pairs, beam_size: int = 1, max_len: int | None = None,
                          max_shift_distance: int = DEFAULT_MAX_SHIFT_DISTANCE,
                          attach: str = "following",
                          decoded: Sequence[DecodeResult] | None = None) -> tuple[list[Prediction], list[DecodeResult]]:
    """Decode every source and label the output against its reference with TER.

    Returns the predictions (one per emitted token) and the decode results.
    """
    if decoded is None:
        decoded = decode_all(model, pairs, beam_size, max_len)
    preds = []
    for p, res in zip(pairs, decoded):
        if len(res.tokens) == 0:
            continue
        labels = label_sentence(res.tokens, p.reference, max_shift_distance, attach)
        n = len(res.tokens)
        for t, (tok, conf, lab) in enumerate(zip(res.tokens, res.confidences, labels)):
            preds.append(Prediction(
                token=tok,
                confidence=conf,
                correct=lab.value == "C",
                position_index=t,
                sentence_length=n,
                label=lab.value,
                under_translation_adjacent=lab.under_translation_adjacent,
            ))
    return preds, list(decoded)
