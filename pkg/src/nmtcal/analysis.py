"""Correlation of miscalibration with translation errors, and linguistic bucketing.

Two kinds of analysis live here:

* cosine similarity between per-token binary indicator vectors, e.g. the
  "over-estimated" tokens against the "mis-translated" tokens;
* bucketing of tokens by frequency, relative position, fertility, POS
  category and word granularity, summarised by the relative change of a
  bucket's share among miscalibrated tokens versus all tokens.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .calibration import CalibrationClass, Prediction
from .corpus import SUBWORD_MARKER, VocabStats

FREQUENCY_BUCKETS = ("High", "Medium", "Low")
POSITION_BUCKETS = ("Left", "Middle", "Right")
FERTILITY_CLASSES = ("TwoPlus", "One", "Fractional", "Zero")
POS_CATEGORIES = ("Noun", "Verb", "Adj", "Prep", "Dete", "Punc", "Others")
GRANULARITY_BUCKETS = ("SubWord", "FullWord")

BUCKETS = {
    "frequency": FREQUENCY_BUCKETS,
    "position": POSITION_BUCKETS,
    "fertility": FERTILITY_CLASSES,
    "pos": POS_CATEGORIES,
    "granularity": GRANULARITY_BUCKETS,
}

# Translation-error categories keyed by TER label.
TRANSLATION_CATEGORIES = ("Correct", "Mis", "OverTrans", "UnderTrans")
CALIBRATION_CATEGORIES = tuple(c.value for c in CalibrationClass)

DEFAULT_HIGH_RANK = 3000
DEFAULT_MEDIUM_RANK = 12000


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"vector lengths differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(u @ v / (nu * nv))


def build_indicators(preds: Sequence[Prediction], classes: Sequence[CalibrationClass]) -> dict[str, np.ndarray]:
    """Binary indicator vectors, one entry per token in corpus order.

    Keys are the calibration classes (``Well``, ``Over``, ``Under``),
    the translation categories (``Correct`` for C, ``Mis`` for S,
    ``OverTrans`` for I, ``UnderTrans`` for the deletion flag) and the
    pooled ``Error``/``Miscalibrated`` vectors.
    """
    if len(preds) != len(classes):
        raise ValueError(f"{len(preds)} predictions but {len(classes)} calibration classes")
    n = len(preds)
    vec = {k: np.zeros(n, dtype=np.int8) for k in CALIBRATION_CATEGORIES + TRANSLATION_CATEGORIES}
    by_label = {"C": "Correct", "S": "Mis", "I": "OverTrans"}
    for i, (p, c) in enumerate(zip(preds, classes)):
        if p.label not in by_label:
            raise ValueError(f"prediction {i} ({p.token}) has no TER label")
        if c is None:
            raise ValueError(f"prediction {i} ({p.token}) has no calibration class")
        vec[CalibrationClass(c).value][i] = 1
        vec[by_label[p.label]][i] = 1
        if p.under_translation_adjacent:
            vec["UnderTrans"][i] = 1
    vec["Miscalibrated"] = (vec["Over"] | vec["Under"]).astype(np.int8)
    return vec


def error_vector(indicators: Mapping[str, np.ndarray], error_set: Iterable[str] = ("S", "I", "D")) -> np.ndarray:
    key = {"S": "Mis", "I": "OverTrans", "D": "UnderTrans"}
    out = np.zeros_like(indicators["Correct"])
    for e in error_set:
        out |= indicators[key[e]]
    return out


def _safe_cosine(u, v) -> float:
    try:
        return cosine(u, v)
    except ValueError:
        return float("nan")


def correlation_tables(indicators: Mapping[str, np.ndarray], error_set=("S", "I", "D")) -> dict:
    """Both correlation tables.

    ``correctness``: rows Correct/Error, columns Well/Miscalibrated.
    ``error_types``: rows UnderTrans/OverTrans/Mis, columns Under/Over.
    Entries are NaN when either vector is all-zero.
    """
    err = error_vector(indicators, error_set)
    correctness = {
        row: {col: _safe_cosine(vec, indicators[key]) for col, key in (("Well", "Well"), ("Miscalibrated", "Miscalibrated"))}
        for row, vec in (("Correct", indicators["Correct"]), ("Error", err))
    }
    error_types = {
        row: {col: _safe_cosine(indicators[row], indicators[col]) for col in ("Under", "Over")}
        for row in ("UnderTrans", "OverTrans", "Mis")
    }
    return {"correctness": correctness, "error_types": error_types}


def relative_change(subset_prop: float, overall_prop: float) -> float:
    """``(subset - overall) / overall`` as a signed fraction.

    >>> round(relative_change(0.773, 0.876), 4)
    -0.1176
    """
    if overall_prop == 0:
        raise ValueError("relative change is undefined when the overall proportion is 0")
    return (subset_prop - overall_prop) / overall_prop


# ---------------------------------------------------------------------------
# attributes


def frequency_thresholds(vocab_size: int) -> tuple[int, int]:
    """Default High/Medium rank cut-offs for a vocabulary of the given size.

    Small vocabularies use 6% and 24% of the vocabulary instead of the
    absolute 3000/12000.
    """
    if vocab_size >= DEFAULT_MEDIUM_RANK:
        return DEFAULT_HIGH_RANK, DEFAULT_MEDIUM_RANK
    hi = max(1, round(0.06 * vocab_size))
    mid = max(hi + 1, round(0.24 * vocab_size))
    return hi, mid


def frequency_bucket(token: str, stats: VocabStats, hi: int = DEFAULT_HIGH_RANK,
                     mid: int = DEFAULT_MEDIUM_RANK) -> str:
    if hi >= mid:
        raise ValueError(f"high cut-off {hi} must be below medium cut-off {mid}")
    rank = stats.rank.get(str(token))
    if rank is None:
        return "Low"
    if rank <= hi:
        return "High"
    if rank <= mid:
        return "Medium"
    return "Low"


def position_bucket(position_index: int, sentence_length: int) -> str:
    if not 0 <= position_index < sentence_length:
        raise ValueError(f"position {position_index} outside sentence of length {sentence_length}")
    return POSITION_BUCKETS[3 * position_index // sentence_length]


def fertility_class(target_index: int, alignment: Iterable[tuple[int, int]], source_length: int | None = None) -> str:
    """Fertility category of one target token.

    ``TwoPlus``: aligned to two or more source tokens. ``One``: aligned to
    a single source token that aligns to nothing else. ``Fractional``:
    aligned to a single source token shared with other target tokens.
    ``Zero``: unaligned.
    """
    alignment = list(alignment)
    if source_length is not None:
        for s, _ in alignment:
            if not 0 <= s < source_length:
                raise ValueError(f"source index {s} out of range for length {source_length}")
    sources = {s for s, t in alignment if t == target_index}
    if not sources:
        return "Zero"
    if len(sources) >= 2:
        return "TwoPlus"
    (s,) = sources
    targets_of_s = {t for s2, t in alignment if s2 == s}
    return "One" if len(targets_of_s) == 1 else "Fractional"


def fertility_classes(alignment: Iterable[tuple[int, int]], target_length: int) -> list[str]:
    """Vectorised :func:`fertility_class` over a whole target sentence."""
    alignment = set(alignment)
    src_per_tgt: dict[int, set[int]] = {}
    tgt_per_src: Counter = Counter()
    for s, t in alignment:
        src_per_tgt.setdefault(t, set()).add(s)
        tgt_per_src[s] += 1
    out = []
    for t in range(target_length):
        sources = src_per_tgt.get(t, ())
        if not sources:
            out.append("Zero")
        elif len(sources) >= 2:
            out.append("TwoPlus")
        else:
            (s,) = sources
            out.append("One" if tgt_per_src[s] == 1 else "Fractional")
    return out


PENN_TAGSET: dict[str, str] = {}
for _tag in ("NN", "NNS", "NNP", "NNPS"):
    PENN_TAGSET[_tag] = "Noun"
for _tag in ("VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "MD"):
    PENN_TAGSET[_tag] = "Verb"
for _tag in ("JJ", "JJR", "JJS"):
    PENN_TAGSET[_tag] = "Adj"
for _tag in ("IN", "TO"):
    PENN_TAGSET[_tag] = "Prep"
for _tag in ("DT", "PDT", "WDT"):
    PENN_TAGSET[_tag] = "Dete"
for _tag in (".", ",", ":", "``", "''", "-LRB-", "-RRB-", "#", "$", "HYPH", "NFP"):
    PENN_TAGSET[_tag] = "Punc"
del _tag


def pos_category(tag: str, tagset: Mapping[str, str] | None = None) -> str:
    category = (PENN_TAGSET if tagset is None else tagset).get(tag, "Others")
    return category if category in POS_CATEGORIES else "Others"


def word_spans(surfaces: Sequence[str], marker: str = SUBWORD_MARKER) -> list[tuple[int, int]]:
    """Token ranges of the full words a segmented sentence spells out."""
    spans, start = [], 0
    for i, s in enumerate(surfaces):
        if not (marker and s.endswith(marker) and s != marker):
            spans.append((start, i + 1))
            start = i + 1
    if start < len(surfaces):
        spans.append((start, len(surfaces)))
    return spans


def token_pos_tags(surfaces: Sequence[str], tags: Sequence[str], marker: str = SUBWORD_MARKER) -> list[str]:
    """Give every token the tag of the full word it belongs to.

    ``tags`` may be per word (one tag per detokenized word) or per token;
    per-token tags take the tag of the word's final piece, since taggers
    run on full words and the final piece is where such a tag lands.
    """
    spans = word_spans(surfaces, marker)
    if len(tags) == len(spans):
        word_tags = list(tags)
    elif len(tags) == len(surfaces):
        word_tags = [tags[stop - 1] for _, stop in spans]
    else:
        raise ValueError(
            f"{len(tags)} tags match neither {len(surfaces)} tokens nor {len(spans)} words"
        )
    out = []
    for (start, stop), tag in zip(spans, word_tags):
        out.extend([tag] * (stop - start))
    return out


def granularity_buckets(surfaces: Sequence[str], marker: str = SUBWORD_MARKER) -> list[str]:
    """``SubWord`` for every piece of a word split by the segmenter, else ``FullWord``."""
    out = [""] * len(surfaces)
    for start, stop in word_spans(surfaces, marker):
        kind = "SubWord" if stop - start > 1 else "FullWord"
        for i in range(start, stop):
            out[i] = kind
    return out


# ---------------------------------------------------------------------------
# bucket reports


@dataclass(frozen=True)
class BucketReport:
    attribute: str
    bucket: str
    overall_proportion: float
    subset_proportion: float
    relative_change: float

    def as_row(self) -> tuple:
        return (self.attribute, self.bucket, self.overall_proportion,
                self.subset_proportion, self.relative_change)


BUCKET_HEADER = ("attribute", "bucket", "overall", "subset", "relative_change")


def bucket_report(preds: Sequence[Prediction], attribute: str, classes: Sequence[CalibrationClass],
                  miscalibration_class: CalibrationClass | str) -> list[BucketReport]:
    """Share of each bucket among all tokens versus among one calibration class.

    Buckets absent from the whole set are omitted; their relative change
    is undefined.
    """
    target = CalibrationClass(miscalibration_class)
    if len(preds) != len(classes):
        raise ValueError(f"{len(preds)} predictions but {len(classes)} calibration classes")
    values = []
    for i, p in enumerate(preds):
        if attribute not in p.attributes:
            raise ValueError(f"prediction {i} ({p.token}) lacks attribute {attribute!r}")
        values.append(p.attributes[attribute])
    subset = [v for v, c in zip(values, classes) if CalibrationClass(c) is target]
    if not subset:
        raise ValueError(f"no predictions in calibration class {target.value!r}")
    overall_counts = Counter(values)
    subset_counts = Counter(subset)
    order = list(BUCKETS.get(attribute, ()))
    order += sorted(b for b in overall_counts if b not in order)
    out = []
    for b in order:
        if overall_counts[b] == 0:
            continue
        overall = overall_counts[b] / len(values)
        sub = subset_counts[b] / len(subset)
        out.append(BucketReport(attribute, b, overall, sub, relative_change(sub, overall)))
    return out


def annotate(preds: Sequence[Prediction], sentences_surfaces: Sequence[Sequence[str]] | None = None,
             stats: VocabStats | None = None, thresholds: tuple[int, int] | None = None,
             alignments: Sequence | None = None, pos_tags: Sequence[Sequence[str]] | None = None,
             tagset: Mapping[str, str] | None = None, marker: str = SUBWORD_MARKER) -> None:
    """Fill ``Prediction.attributes`` in place.

    Predictions must be in corpus order with consistent ``position_index``
    and ``sentence_length``; sentence boundaries are derived from them.
    Position is always set; the other attributes only when their inputs
    are given.
    """
    sentences = split_sentences(preds)
    if alignments is not None and len(alignments) != len(sentences):
        raise ValueError(f"{len(alignments)} alignment lines for {len(sentences)} sentences")
    if pos_tags is not None and len(pos_tags) != len(sentences):
        raise ValueError(f"{len(pos_tags)} POS lines for {len(sentences)} sentences")
    if stats is not None and thresholds is None:
        thresholds = frequency_thresholds(len(stats))
    for k, sent in enumerate(sentences):
        surfaces = [p.token.surface for p in sent]
        gran = granularity_buckets(surfaces, marker)
        fert = fertility_classes(alignments[k], len(sent)) if alignments is not None else None
        if alignments is not None:
            for _, t in alignments[k]:
                if t >= len(sent):
                    raise ValueError(f"sentence {k}: alignment target {t} beyond length {len(sent)}")
        tags = token_pos_tags(surfaces, pos_tags[k], marker) if pos_tags is not None else None
        for i, p in enumerate(sent):
            p.attributes["position"] = position_bucket(p.position_index, p.sentence_length)
            p.attributes["granularity"] = gran[i]
            if stats is not None:
                p.attributes["frequency"] = frequency_bucket(p.token.surface, stats, *thresholds)
            if fert is not None:
                p.attributes["fertility"] = fert[i]
            if tags is not None:
                p.attributes["pos"] = pos_category(tags[i], tagset)


def split_sentences(preds: Sequence[Prediction]) -> list[list[Prediction]]:
    out: list[list[Prediction]] = []
    for p in preds:
        if p.position_index == 0:
            out.append([])
        elif not out or p.position_index != len(out[-1]):
            raise ValueError("predictions are not in corpus order")
        out[-1].append(p)
    for sent in out:
        if len(sent) != sent[0].sentence_length:
            raise ValueError("sentence_length disagrees with the number of predictions")
    return out


def nan_to_none(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x
