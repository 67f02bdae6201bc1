"""Translation edit rate alignment and per-token correctness labels.

The aligner follows the usual TER recipe: a greedy loop of block shifts
over the hypothesis, each shift costing one edit, followed by a minimum
edit-distance alignment of the shifted hypothesis against the reference.
Hypothesis tokens are then labelled ``C`` (match), ``S`` (substitution)
or ``I`` (insertion, i.e. over-translation). Reference tokens left
unmatched are deletions; :func:`map_deletions` projects them onto the
neighbouring hypothesis token as an under-translation flag.

Token comparison is exact string equality: no case folding, no
punctuation splitting.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

from rapidfuzz.distance import Levenshtein

from .corpus import Sentence

DEFAULT_MAX_SHIFT_DISTANCE = 50
# Longest block considered for a single shift (the tercom default).
MAX_SHIFT_SIZE = 10


class EditKind(str, enum.Enum):
    MATCH = "Match"
    SUBSTITUTE = "Substitute"
    INSERT = "Insert"
    DELETE = "Delete"
    SHIFT = "Shift"


@dataclass(frozen=True)
class EditOp:
    """One step of an alignment.

    ``hyp_span``/``ref_span`` are half-open index ranges. For a shift,
    ``hyp_span`` is the moved block in the pre-shift hypothesis and
    ``distance`` the signed displacement of its start.
    """

    kind: EditKind
    hyp_span: tuple[int, int] | None = None
    ref_span: tuple[int, int] | None = None
    distance: int = 0


@dataclass(frozen=True)
class TokenLabel:
    value: str
    under_translation_adjacent: bool = False

    def __str__(self) -> str:
        return self.value + ("+D" if self.under_translation_adjacent else "")


@dataclass
class TerResult:
    edits: int
    shift_count: int
    labels: list[TokenLabel]
    deleted_ref_indices: list[int]
    ter_score: float
    # Alignment of the shifted hypothesis, hyp indices are in shifted order.
    path: list[EditOp] = field(default_factory=list)
    # shifted position -> original hypothesis index
    permutation: list[int] = field(default_factory=list)
    shifts: list[EditOp] = field(default_factory=list)

    @property
    def hyp_length(self) -> int:
        return len(self.labels)


def _surfaces(seq) -> list[str]:
    if isinstance(seq, Sentence):
        return seq.surfaces
    return [str(t) for t in seq]


def _encode(hyp: Sequence[str], ref: Sequence[str]) -> tuple[list[int], list[int]]:
    ids: dict[str, int] = {}
    h = [ids.setdefault(t, len(ids)) for t in hyp]
    r = [ids.setdefault(t, len(ids)) for t in ref]
    return h, r


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    """Minimum number of insertions, deletions and substitutions."""
    return Levenshtein.distance(list(hyp), list(ref))


def _align_path(hyp: Sequence, ref: Sequence) -> tuple[int, list[EditOp]]:
    n, m = len(hyp), len(ref)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        row, up = table[i], table[i - 1]
        row[0] = i
        h = hyp[i - 1]
        for j in range(1, m + 1):
            if h == ref[j - 1]:
                row[j] = up[j - 1]
            else:
                row[j] = 1 + min(up[j - 1], up[j], row[j - 1])
    ops: list[EditOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        d = table[i][j]
        if i > 0 and j > 0 and hyp[i - 1] == ref[j - 1] and d == table[i - 1][j - 1]:
            ops.append(EditOp(EditKind.MATCH, (i - 1, i), (j - 1, j)))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d == table[i - 1][j - 1] + 1:
            ops.append(EditOp(EditKind.SUBSTITUTE, (i - 1, i), (j - 1, j)))
            i, j = i - 1, j - 1
        elif j > 0 and d == table[i][j - 1] + 1:
            ops.append(EditOp(EditKind.DELETE, None, (j - 1, j)))
            j -= 1
        else:
            ops.append(EditOp(EditKind.INSERT, (i - 1, i), None))
            i -= 1
    ops.reverse()
    return table[n][m], ops


def levenshtein_align(hyp, ref) -> tuple[int, list[EditOp]]:
    """Minimum edit alignment of ``hyp`` against ``ref``.

    Among optimal paths the backtrace prefers Match, then Substitute,
    then Delete, then Insert, so the returned path is deterministic.
    """
    h, r = _encode(_surfaces(hyp), _surfaces(ref))
    return _align_path(h, r)


def _apply_shift(seq: list, start: int, length: int, dest: int) -> list:
    block = seq[start:start + length]
    rest = seq[:start] + seq[start + length:]
    return rest[:dest] + block + rest[dest:]


def _shift_candidates(h: list[int], r: list[int], path: list[EditOp], max_dist: int):
    """Yield (start, length, dest) shifts worth evaluating.

    A block qualifies if it equals some reference block, is not entirely
    matched in the current alignment, and the reference block is not
    entirely matched either. Every destination within ``max_dist`` is
    tried; ``dest`` indexes the hypothesis with the block removed.
    """
    n, m = len(h), len(r)
    hyp_matched = [False] * n
    ref_matched = [False] * m
    for op in path:
        if op.kind is EditKind.MATCH:
            hyp_matched[op.hyp_span[0]] = True
            ref_matched[op.ref_span[0]] = True

    ref_starts: dict[int, list[int]] = {}
    for k, tok in enumerate(r):
        ref_starts.setdefault(tok, []).append(k)

    seen = set()
    for start in range(n):
        for k in ref_starts.get(h[start], ()):
            length = 0
            max_len = min(MAX_SHIFT_SIZE, n - start, m - k)
            while length < max_len and h[start + length] == r[k + length]:
                length += 1
                if (start, length) in seen:
                    continue
                if all(hyp_matched[start:start + length]) or all(ref_matched[k:k + length]):
                    continue
                seen.add((start, length))
                for dest in range(max(0, start - max_dist), min(n - length, start + max_dist) + 1):
                    if dest != start:
                        yield start, length, dest


def ter_align(hyp, ref, max_shift_distance: int = DEFAULT_MAX_SHIFT_DISTANCE) -> TerResult:
    """Align ``hyp`` to ``ref`` with greedy block shifts and label each hypothesis token.

    >>> r = ter_align("b a".split(), "a b".split())
    >>> r.edits, r.shift_count, [str(lab) for lab in r.labels]
    (1, 1, ['C', 'C'])
    """
    if max_shift_distance < 0:
        raise ValueError("max_shift_distance must be >= 0")
    hyp_s, ref_s = _surfaces(hyp), _surfaces(ref)
    if not ref_s:
        raise ValueError("reference must be non-empty")
    h, r = _encode(hyp_s, ref_s)
    perm = list(range(len(h)))
    cost, path = _align_path(h, r)
    shifts: list[EditOp] = []

    while max_shift_distance > 0:
        best = None
        for start, length, dest in _shift_candidates(h, r, path, max_shift_distance):
            new_cost = edit_distance(_apply_shift(h, start, length, dest), r)
            gain = cost - new_cost - 1
            # Strictly better; ties keep the earlier start, then the shorter move.
            if gain > 0 and (
                best is None
                or gain > best[0]
                or (gain == best[0] and (start, abs(dest - start)) < (best[1], abs(best[3] - best[1])))
            ):
                best = (gain, start, length, dest)
        if best is None:
            break
        _, start, length, dest = best
        shifts.append(EditOp(EditKind.SHIFT, (perm[start], perm[start] + length), None, dest - start))
        h = _apply_shift(h, start, length, dest)
        perm = _apply_shift(perm, start, length, dest)
        cost, path = _align_path(h, r)

    labels: list[TokenLabel | None] = [None] * len(h)
    deleted = []
    for op in path:
        if op.kind is EditKind.DELETE:
            deleted.append(op.ref_span[0])
            continue
        value = {EditKind.MATCH: "C", EditKind.SUBSTITUTE: "S", EditKind.INSERT: "I"}[op.kind]
        labels[perm[op.hyp_span[0]]] = TokenLabel(value)
    edits = cost + len(shifts)
    return TerResult(
        edits=edits,
        shift_count=len(shifts),
        labels=labels,
        deleted_ref_indices=deleted,
        ter_score=edits / len(r),
        path=path,
        permutation=perm,
        shifts=shifts,
    )


def map_deletions(ter: TerResult, hyp_len: int | None = None, attach: str = "following") -> list[TokenLabel]:
    """Project reference deletions onto hypothesis tokens.

    Each deleted reference token flags the hypothesis token right after
    the deletion point in the final (shifted) alignment, or the one right
    before it with ``attach="preceding"``. Deletions with no token on
    that side fall back to the nearest token on the other side.
    """
    if attach not in ("following", "preceding"):
        raise ValueError(f"attach must be 'following' or 'preceding', got {attach!r}")
    n = ter.hyp_length if hyp_len is None else hyp_len
    if n != ter.hyp_length:
        raise ValueError(f"hyp_len {n} does not match the {ter.hyp_length} labels in the TER result")
    flags = [lab.under_translation_adjacent for lab in ter.labels]
    if n:
        consumed = 0  # shifted-hypothesis tokens seen so far along the path
        for op in ter.path:
            if op.hyp_span is not None:
                consumed += 1
                continue
            if attach == "following":
                pos = consumed if consumed < n else n - 1
            else:
                pos = consumed - 1 if consumed > 0 else 0
            flags[ter.permutation[pos]] = True
    return [replace(lab, under_translation_adjacent=f) for lab, f in zip(ter.labels, flags)]


def label_sentence(hyp, ref, max_shift_distance: int = DEFAULT_MAX_SHIFT_DISTANCE,
                   attach: str = "following") -> list[TokenLabel]:
    """TER labels with the under-translation flag applied."""
    result = ter_align(hyp, ref, max_shift_distance)
    return map_deletions(result, attach=attach)
