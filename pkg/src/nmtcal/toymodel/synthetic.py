"""A seeded synthetic translation task.

Sources are random strings over ``s0 .. s{K-1}``. Targets are produced by
fixed rules drawn from the task seed:

* lexical substitution ``s_i -> t_j`` through a random bijection;
* a sentence-level *register*: with probability ``register_prior`` a
  sentence uses alternative translations for a subset of ambiguous source
  tokens. The choice is invisible in the source and consistent along the
  sentence, so once a model commits to a register it keeps it;
* many-to-one merges of fixed source bigrams into a single target token;
* one-to-many expansions of some source tokens into a two-piece
  sub-word target (``x@@ y``);
* a null-aligned filler token emitted in front of each "noun" translation;
* local reordering: a trigger token swaps its translation with the next
  unit's (window of ``reorder_window`` units, reversed);
* noise: each target token is replaced by a uniformly drawn distractor
  with probability ``noise_rate``.

Gold word alignments and POS tags are produced alongside, so every
analysis attribute can be exercised on the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import ParallelPair, Sentence

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)


@dataclass(frozen=True)
class SyntheticTask:
    n_source_words: int = 30
    n_ambiguous: int = 25
    register_prior: float = 0.45
    n_merges: int = 3
    n_expansions: int = 2
    n_reorder_triggers: int = 3
    reorder_window: int = 2
    filler: bool = True
    noise_rate: float = 0.1
    min_length: int = 6
    max_length: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must lie in [0, 1)")
        if not 0.0 <= self.register_prior <= 1.0:
            raise ValueError("register_prior must lie in [0, 1]")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")
        if self.n_ambiguous + self.n_expansions + self.n_reorder_triggers > self.n_source_words:
            raise ValueError("too many special source words for the vocabulary")
        if self.reorder_window < 1:
            raise ValueError("reorder_window must be >= 1")

    @classmethod
    def copy_task(cls, n_source_words: int = 30, seed: int = 0, **kw) -> "SyntheticTask":
        """Pure lexical substitution, no noise."""
        return cls(n_source_words=n_source_words, n_ambiguous=0, register_prior=0.0, n_merges=0,
                   n_expansions=0, n_reorder_triggers=0, filler=False, noise_rate=0.0, seed=seed, **kw)


@dataclass
class SyntheticPair(ParallelPair):
    noise_mask: list[bool] = field(default_factory=list)
    register: int = 0
    # POS tags of the intended (pre-noise) reference tokens.
    reference_pos: list[str] = field(default_factory=list)


@dataclass
class _Rules:
    source_words: list[str]
    translation: dict[str, str]
    alternative: dict[str, str]
    merges: dict[tuple[str, str], str]
    expansions: dict[str, tuple[str, str]]
    triggers: set[str]
    nouns: set[str]
    pos: dict[str, str]
    target_words: list[str]


def _word_order(w: str):
    digits = w[1:].rstrip("@")
    return (w[0], int(digits) if digits.isdigit() else -1, w)


def _rules(task: SyntheticTask) -> _Rules:
    rng = np.random.default_rng([task.seed, 0])
    k = task.n_source_words
    src = [f"s{i}" for i in range(k)]
    perm = rng.permutation(k)
    translation = {s: f"t{perm[i]}" for i, s in enumerate(src)}
    order = [src[i] for i in rng.permutation(k)]
    pos_cycle = ("NN", "VB", "JJ", "IN", "NN", "VBZ", "RB")
    pos = {translation[s]: pos_cycle[i % len(pos_cycle)] for i, s in enumerate(order)}
    ambiguous = order[:task.n_ambiguous]
    expanded = order[task.n_ambiguous:task.n_ambiguous + task.n_expansions]
    triggers = set(order[task.n_ambiguous + task.n_expansions:
                         task.n_ambiguous + task.n_expansions + task.n_reorder_triggers])
    alternative = {s: f"a{i}" for i, s in enumerate(ambiguous)}
    for s, a in alternative.items():
        pos[a] = pos[translation[s]]
    expansions = {}
    for i, s in enumerate(expanded):
        expansions[s] = (f"x{i}@@", f"y{i}")
        pos[f"x{i}@@"] = pos[f"y{i}"] = "NN"
    merges = {}
    pool = [s for s in src if s not in expansions]
    while len(merges) < task.n_merges:
        a, b = rng.choice(len(pool), size=2, replace=False)
        key = (pool[a], pool[b])
        if key not in merges:
            merges[key] = f"m{len(merges)}"
            pos[merges[key]] = "NN"
    nouns = {s for s in src if pos[translation[s]] in ("NN", "NNS")} if task.filler else set()
    if task.filler:
        pos["d0"] = "DT"
    target_words = sorted(pos, key=_word_order)
    return _Rules(src, translation, alternative, merges, expansions, triggers, nouns, pos, target_words)


def source_vocabulary(task: SyntheticTask) -> list[str]:
    return list(SPECIALS) + [f"s{i}" for i in range(task.n_source_words)]


def target_vocabulary(task: SyntheticTask) -> list[str]:
    return list(SPECIALS) + _rules(task).target_words


def _translate(src: list[str], register: int, rules: _Rules):
    """Return (units, unit_sources): lists of target-token groups with their source indices."""
    units: list[list[str]] = []
    unit_src: list[list[int]] = []
    i = 0
    while i < len(src):
        s = src[i]
        if i + 1 < len(src) and (s, src[i + 1]) in rules.merges:
            units.append([rules.merges[(s, src[i + 1])]])
            unit_src.append([i, i + 1])
            i += 2
            continue
        if s in rules.expansions:
            group = list(rules.expansions[s])
        elif register and s in rules.alternative:
            group = [rules.alternative[s]]
        else:
            group = [rules.translation[s]]
        units.append(group)
        unit_src.append([i])
        i += 1
    return units, unit_src


def _reorder(units, unit_src, src, rules: _Rules, window: int):
    out_u, out_s = [], []
    i = 0
    while i < len(units):
        lead = src[unit_src[i][0]]
        if lead in rules.triggers and len(unit_src[i]) == 1 and i + 1 < len(units):
            j = min(len(units), i + window)
            out_u.extend(reversed(units[i:j]))
            out_s.extend(reversed(unit_src[i:j]))
            i = j
        else:
            out_u.append(units[i])
            out_s.append(unit_src[i])
            i += 1
    return out_u, out_s


def generate_synthetic(task: SyntheticTask, n: int, split: str | int = 0) -> list[SyntheticPair]:
    """Draw ``n`` sentence pairs.

    ``split`` selects an independent random stream (e.g. ``"train"``,
    ``"dev"``) under the same translation rules.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rules = _rules(task)
    split_key = split if isinstance(split, int) else sum(ord(c) * 131 ** i for i, c in enumerate(split)) % (2 ** 31)
    rng = np.random.default_rng([task.seed, 1, split_key])
    content = [w for w in rules.target_words if w != "d0"]
    pairs = []
    for _ in range(n):
        length = int(rng.integers(task.min_length, task.max_length + 1))
        src = [rules.source_words[int(x)] for x in rng.integers(0, len(rules.source_words), size=length)]
        register = int(rng.random() < task.register_prior)
        units, unit_src = _translate(src, register, rules)
        units, unit_src = _reorder(units, unit_src, src, rules, task.reorder_window)
        tgt: list[str] = []
        align = set()
        for group, sources in zip(units, unit_src):
            if len(sources) == 1 and src[sources[0]] in rules.nouns:
                tgt.append("d0")
            for tok in group:
                for s_idx in sources:
                    align.add((s_idx, len(tgt)))
                tgt.append(tok)
        noise = rng.random(len(tgt)) < task.noise_rate
        draws = rng.random(len(tgt))
        pos = [rules.pos[t] for t in tgt]
        for j in np.flatnonzero(noise):
            others = [w for w in content if w != tgt[j]]
            tgt[j] = others[int(draws[j] * len(others))]
        pairs.append(SyntheticPair(
            source=Sentence.from_surfaces(src),
            reference=Sentence.from_surfaces(tgt),
            alignment=frozenset(align),
            noise_mask=[bool(x) for x in noise],
            register=register,
            reference_pos=pos,
        ))
    return pairs
