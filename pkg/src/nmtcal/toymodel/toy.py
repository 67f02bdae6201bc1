"""Vocabularies, the trained-model container and checkpoint files.

Checkpoint format (``.npz``, version 1): one float64 array per parameter,
keyed by its PyTorch state-dict name, plus a ``__meta__`` entry holding
a JSON document::

    {"format": "nmtcal-toymodel", "version": 1,
     "model_config": {...}, "src_vocab": [...], "tgt_vocab": [...],
     "train_config": {...} | null}

Arrays are written in sorted key order, so identical models produce
byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .model import DTYPE, ModelConfig, Seq2Seq
from .synthetic import BOS, EOS, PAD, UNK

CHECKPOINT_FORMAT = "nmtcal-toymodel"
CHECKPOINT_VERSION = 1


class VocabularyMismatchError(ValueError):
    pass


@dataclass
class Vocabulary:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.itos[:4] != [PAD, BOS, EOS, UNK]:
            raise ValueError("vocabulary must start with <pad>, <s>, </s>, <unk>")
        if len(set(self.itos)) != len(self.itos):
            raise ValueError("duplicate vocabulary entries")
        self.stoi = {s: i for i, s in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad(self) -> int:
        return 0

    @property
    def bos(self) -> int:
        return 1

    @property
    def eos(self) -> int:
        return 2

    def encode(self, surfaces: Sequence[str], strict: bool = True) -> list[int]:
        ids = []
        for s in surfaces:
            if s not in self.stoi:
                if strict:
                    raise VocabularyMismatchError(f"token {s!r} is not in the model vocabulary")
                ids.append(self.stoi[UNK])
            else:
                ids.append(self.stoi[s])
        return ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass
class ToyModel:
    net: Seq2Seq
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    train_config: dict | None = None
    loss_curve: list[float] = field(default_factory=list)

    @property
    def config(self) -> ModelConfig:
        return self.net.config

    @classmethod
    def create(cls, config: ModelConfig, src_vocab, tgt_vocab) -> "ToyModel":
        src_vocab = src_vocab if isinstance(src_vocab, Vocabulary) else Vocabulary(list(src_vocab))
        tgt_vocab = tgt_vocab if isinstance(tgt_vocab, Vocabulary) else Vocabulary(list(tgt_vocab))
        if len(src_vocab) != config.vocab_size_src or len(tgt_vocab) != config.vocab_size_tgt:
            raise VocabularyMismatchError(
                f"config expects vocabularies of {config.vocab_size_src}/{config.vocab_size_tgt}, "
                f"got {len(src_vocab)}/{len(tgt_vocab)}"
            )
        return cls(Seq2Seq(config), src_vocab, tgt_vocab)

    def check_corpus(self, pairs) -> None:
        """Raise if any source or reference token is outside the vocabularies."""
        for k, p in enumerate(pairs):
            for side, vocab, sent in (("source", self.src_vocab, p.source), ("reference", self.tgt_vocab, p.reference)):
                missing = [s for s in sent.surfaces if s not in vocab.stoi]
                if missing:
                    raise VocabularyMismatchError(f"pair {k}: {side} token {missing[0]!r} not in model vocabulary")

    def encode_source(self, surfaces: Sequence[str], strict: bool = True) -> list[int]:
        return self.src_vocab.encode(surfaces, strict) + [self.src_vocab.eos]

    def encode_target(self, surfaces: Sequence[str]) -> list[int]:
        return self.tgt_vocab.encode(surfaces)

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model_config": self.config.to_dict(),
            "src_vocab": self.src_vocab.itos,
            "tgt_vocab": self.tgt_vocab.itos,
            "train_config": self.train_config,
        }
        state = self.net.state_dict()
        # Written by hand so entry timestamps are fixed and files reproducible.
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            def put(name, array):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(array), allow_pickle=False)
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, buf.getvalue())
            put("__meta__", np.array(json.dumps(meta, sort_keys=True)))
            for key in sorted(state):
                put(key, state[key].detach().cpu().numpy())

    @classmethod
    def load(cls, path: str | Path) -> "ToyModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: not a toy-model checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
            model = cls.create(ModelConfig(**meta["model_config"]), meta["src_vocab"], meta["tgt_vocab"])
            state = {k: torch.from_numpy(data[k].copy()).to(DTYPE) for k in data.files if k != "__meta__"}
        model.net.load_state_dict(state)
        model.train_config = meta.get("train_config")
        model.net.eval()
        return model


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = 0) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = torch.tensor(s, dtype=torch.long)
    return out
