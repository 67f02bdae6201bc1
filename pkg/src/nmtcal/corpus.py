"""Parsing and serialization of tokenized corpora and their sidecar files.

Formats handled here:

* ``.txt``    one sentence per line, tokens separated by single spaces
* ``.align``  Pharaoh word alignments, ``i-j`` pairs (0-based, source-target)
* ``.pos``    POS tags, line-aligned with a tokenized file
* ``.labels`` per-token TER labels, ``C|S|I`` with optional ``+D`` suffix
* ``.tsv``    prediction sidecar ``token<TAB>confidence<TAB>correct<TAB>label``

All files are UTF-8; CRLF line endings are accepted and stripped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SUBWORD_MARKER = "@@"


class CorpusFormatError(ValueError):
    """Raised for malformed input files; carries the 1-based line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class Token:
    surface: str
    is_subword: bool = False

    @classmethod
    def from_surface(cls, surface: str, marker: str = SUBWORD_MARKER) -> "Token":
        if not surface or any(ch.isspace() for ch in surface):
            raise ValueError(f"invalid token surface {surface!r}")
        return cls(surface, bool(marker) and surface.endswith(marker) and surface != marker)

    def __str__(self) -> str:
        return self.surface


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]

    @classmethod
    def from_surfaces(cls, surfaces: Iterable[str], marker: str = SUBWORD_MARKER) -> "Sentence":
        return cls(tuple(Token.from_surface(s, marker) for s in surfaces))

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __str__(self) -> str:
        return " ".join(self.surfaces)


@dataclass
class ParallelPair:
    source: Sentence
    reference: Sentence
    hypothesis: Sentence | None = None
    alignment: frozenset[tuple[int, int]] | None = None
    pos_tags: list[str] | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.alignment is not None:
            # Alignments index the target side the tags/labels refer to.
            target = self.hypothesis if self.hypothesis is not None else self.reference
            check_alignment(self.alignment, len(self.source), len(target))
        if self.pos_tags is not None:
            if self.hypothesis is None:
                raise ValueError("pos_tags given without a hypothesis")
            if len(self.pos_tags) != len(self.hypothesis):
                raise ValueError(
                    f"{len(self.pos_tags)} POS tags for a hypothesis of {len(self.hypothesis)} tokens"
                )


@dataclass(frozen=True)
class VocabStats:
    counts: dict[str, int]
    rank: dict[str, int]

    def __len__(self) -> int:
        return len(self.counts)

    def rank_of(self, surface: str) -> int | None:
        return self.rank.get(surface)


# ---------------------------------------------------------------------------
# line readers


def _read_lines(path: str | Path) -> list[str]:
    path = Path(path)
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    out = []
    for lineno, line in enumerate(lines, start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusFormatError(f"invalid UTF-8 ({exc.reason})", str(path), lineno) from None
        out.append(text[:-1] if text.endswith("\r") else text)
    return out


def parse_sentence(line: str, marker: str = SUBWORD_MARKER) -> Sentence:
    surfaces = line.split()
    if not surfaces:
        raise ValueError("blank line")
    return Sentence.from_surfaces(surfaces, marker)


def parse_corpus_lines(lines: Sequence[str], marker: str = SUBWORD_MARKER,
                       path: str | None = None) -> list[Sentence]:
    sentences = []
    for lineno, line in enumerate(lines, start=1):
        try:
            sentences.append(parse_sentence(line, marker))
        except ValueError as exc:
            raise CorpusFormatError(str(exc), path, lineno) from None
    return sentences


def parse_corpus(path: str | Path, marker: str = SUBWORD_MARKER) -> list[Sentence]:
    """Read a tokenized corpus, one sentence per line.

    Blank lines are rejected because they break line alignment with the
    sidecar files.
    """
    return parse_corpus_lines(_read_lines(path), marker, str(path))


def parse_alignment(line: str) -> frozenset[tuple[int, int]]:
    pairs = set()
    for item in line.split():
        src, sep, tgt = item.partition("-")
        if not sep or not src.isdigit() or not tgt.isdigit():
            raise ValueError(f"malformed alignment item {item!r}")
        pairs.add((int(src), int(tgt)))
    return frozenset(pairs)


def parse_alignment_file(path: str | Path) -> list[frozenset[tuple[int, int]]]:
    out = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        try:
            out.append(parse_alignment(line))
        except ValueError as exc:
            raise CorpusFormatError(str(exc), str(path), lineno) from None
    return out


def check_alignment(alignment: Iterable[tuple[int, int]], source_length: int,
                    target_length: int) -> None:
    for i, j in alignment:
        if not (0 <= i < source_length and 0 <= j < target_length):
            raise ValueError(
                f"alignment pair {i}-{j} out of range for lengths {source_length}/{target_length}"
            )


def parse_pos_file(path: str | Path) -> list[list[str]]:
    out = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        tags = line.split()
        if not tags:
            raise CorpusFormatError("blank line", str(path), lineno)
        out.append(tags)
    return out


def build_vocab_stats(corpus: Iterable[Sentence | Sequence[str]]) -> VocabStats:
    """Count token occurrences and rank by descending count.

    Ties are broken by first occurrence in the corpus; the lexicographic
    fallback never triggers for a single pass but keeps the key total.
    """
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    position = 0
    for sentence in corpus:
        surfaces = sentence.surfaces if isinstance(sentence, Sentence) else sentence
        for s in surfaces:
            if s not in counts:
                counts[s] = 0
                first_seen[s] = position
            counts[s] += 1
            position += 1
    if not counts:
        raise ValueError("cannot build vocabulary statistics from an empty corpus")
    order = sorted(counts, key=lambda s: (-counts[s], first_seen[s], s))
    rank = {s: r for r, s in enumerate(order, start=1)}
    return VocabStats(counts=counts, rank=rank)


# ---------------------------------------------------------------------------
# writers


def format_corpus(sentences: Iterable[Sentence | Sequence[str]]) -> str:
    lines = []
    for s in sentences:
        surfaces = s.surfaces if isinstance(s, Sentence) else list(s)
        lines.append(" ".join(surfaces))
    return "".join(line + "\n" for line in lines)


def format_alignment(alignment: Iterable[tuple[int, int]]) -> str:
    return " ".join(f"{i}-{j}" for i, j in sorted(alignment))


def write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def write_corpus(path: str | Path, sentences) -> None:
    write_text(path, format_corpus(sentences))


def write_alignment_file(path: str | Path, alignments) -> None:
    write_text(path, "".join(format_alignment(a) + "\n" for a in alignments))


def write_pos_file(path: str | Path, tags: Iterable[Sequence[str]]) -> None:
    write_text(path, "".join(" ".join(t) + "\n" for t in tags))


def format_vocab_stats(stats: VocabStats) -> str:
    order = sorted(stats.rank, key=stats.rank.__getitem__)
    return "".join(f"{s}\t{stats.counts[s]}\n" for s in order)


def parse_vocab_stats(path: str | Path) -> VocabStats:
    """Read a ``surface<TAB>count`` file written by :func:`format_vocab_stats`.

    File order defines the ranks, so a round trip preserves tie-breaking.
    """
    counts, rank = {}, {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) < 1:
            raise CorpusFormatError("expected 'surface<TAB>count'", str(path), lineno)
        if parts[0] in counts:
            raise CorpusFormatError(f"duplicate entry {parts[0]!r}", str(path), lineno)
        counts[parts[0]] = int(parts[1])
        rank[parts[0]] = lineno
    if not counts:
        raise CorpusFormatError("empty vocabulary file", str(path))
    return VocabStats(counts, rank)


# ---------------------------------------------------------------------------
# token labels


def format_label(value: str, under_translation_adjacent: bool) -> str:
    return value + ("+D" if under_translation_adjacent else "")


def parse_label(item: str) -> tuple[str, bool]:
    value, plus, suffix = item.partition("+")
    if value not in ("C", "S", "I") or (plus and suffix != "D"):
        raise ValueError(f"malformed label {item!r}")
    return value, bool(plus)


def parse_labels_file(path: str | Path) -> list[list[tuple[str, bool]]]:
    out = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        try:
            out.append([parse_label(item) for item in line.split()])
        except ValueError as exc:
            raise CorpusFormatError(str(exc), str(path), lineno) from None
    return out


def format_labels_line(labels) -> str:
    return " ".join(format_label(lab.value, lab.under_translation_adjacent) for lab in labels)


# ---------------------------------------------------------------------------
# prediction sidecar

PREDICTION_HEADER = "token\tconfidence\tcorrect\tlabel"


@dataclass
class PredictionRow:
    token: str
    confidence: float
    correct: bool
    label: str = "C"
    under_translation_adjacent: bool = False


def format_confidence(x: float) -> str:
    # repr() of a float round-trips exactly.
    return repr(float(x))


def format_predictions(sentences: Iterable[Sequence[PredictionRow]]) -> str:
    """Serialize per-sentence prediction rows.

    Sentences are separated by an empty line so that position information
    survives the fixed four-column schema.
    """
    blocks = []
    for rows in sentences:
        blocks.append("".join(
            f"{r.token}\t{format_confidence(r.confidence)}\t{int(bool(r.correct))}\t"
            f"{format_label(r.label, r.under_translation_adjacent)}\n"
            for r in rows
        ))
    return PREDICTION_HEADER + "\n" + "\n".join(blocks)


def parse_predictions_lines(lines: Sequence[str], path: str | None = None) -> list[list[PredictionRow]]:
    if not lines or lines[0] != PREDICTION_HEADER:
        raise CorpusFormatError(f"missing header {PREDICTION_HEADER!r}", path, 1)
    sentences: list[list[PredictionRow]] = []
    current: list[PredictionRow] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            if current:
                sentences.append(current)
            current = []
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CorpusFormatError(f"expected 4 tab-separated fields, got {len(parts)}", path, lineno)
        token, conf, correct, label = parts
        try:
            c = float(conf)
            if not (0.0 <= c <= 1.0) or math.isnan(c):
                raise ValueError(f"confidence {conf} outside [0, 1]")
            if correct not in ("0", "1"):
                raise ValueError(f"correct must be 0 or 1, got {correct!r}")
            value, flag = parse_label(label)
        except ValueError as exc:
            raise CorpusFormatError(str(exc), path, lineno) from None
        current.append(PredictionRow(token, c, correct == "1", value, flag))
    if current:
        sentences.append(current)
    return sentences


def parse_predictions(path: str | Path) -> list[list[PredictionRow]]:
    return parse_predictions_lines(_read_lines(path), str(path))


def write_predictions(path: str | Path, sentences) -> None:
    write_text(path, format_predictions(sentences))


# ---------------------------------------------------------------------------
# reports


def format_tsv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6f}"
        return str(v)

    lines = ["\t".join(header)]
    lines.extend("\t".join(cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass
class ConfidenceSidecar:
    """Per-token confidences, one line per sentence."""

    values: list[list[float]] = field(default_factory=list)

    def format(self) -> str:
        return "".join(" ".join(format_confidence(v) for v in row) + "\n" for row in self.values)

    @classmethod
    def parse(cls, path: str | Path) -> "ConfidenceSidecar":
        rows = []
        for lineno, line in enumerate(_read_lines(path), start=1):
            try:
                rows.append([float(v) for v in line.split()])
            except ValueError:
                raise CorpusFormatError("non-numeric confidence", str(path), lineno) from None
        return cls(rows)
