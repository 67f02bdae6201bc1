"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np


def textbook_edit_distance(a, b):
    """Wagner-Fischer over a full numpy table."""
    d = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    d[:, 0] = np.arange(len(a) + 1)
    d[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i, j] = min(
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
                d[i - 1, j - 1] + (a[i - 1] != b[j - 1]),
            )
    return int(d[-1, -1])


def _all_shifts(seq, max_dist, allowed=None):
    n = len(seq)
    for start in range(n):
        for length in range(1, n - start + 1):
            block = seq[start:start + length]
            if allowed is not None and tuple(block) not in allowed:
                continue
            rest = seq[:start] + seq[start + length:]
            for dest in range(len(rest) + 1):
                if dest == start or abs(dest - start) > max_dist:
                    continue
                yield tuple(rest[:dest] + block + rest[dest:])


def exhaustive_ter_edits(hyp, ref, max_shifts=3, max_dist=50, matching_blocks=False):
    """Minimum of (#shifts + edit distance) over all shift sequences of
    length <= max_shifts.

    By default any block may move to any destination. With
    ``matching_blocks`` only blocks equal to some contiguous reference
    block may move, which is the move set TER shifts are drawn from.
    """
    ref = tuple(ref)
    allowed = None
    if matching_blocks:
        allowed = {ref[i:j] for i in range(len(ref)) for j in range(i + 1, len(ref) + 1)}
    start = tuple(hyp)
    best = textbook_edit_distance(start, ref)
    frontier = {start}
    seen = {start}
    for depth in range(1, max_shifts + 1):
        if depth >= best:
            break
        nxt = set()
        for seq in frontier:
            for cand in _all_shifts(list(seq), max_dist, allowed):
                if cand in seen:
                    continue
                seen.add(cand)
                nxt.add(cand)
                best = min(best, depth + textbook_edit_distance(cand, ref))
        frontier = nxt
    return best


def ece_oracle(conf, correct, m):
    """ECE by explicit per-bin loops over half-open-from-below bins."""
    conf = [float(c) for c in conf]
    n = len(conf)
    total = 0.0
    for b in range(1, m + 1):
        lo, hi = (b - 1) / m, b / m
        members = [i for i, c in enumerate(conf)
                   if (lo < c <= hi) or (b == 1 and c == 0.0)]
        if not members:
            continue
        acc = sum(bool(correct[i]) for i in members) / len(members)
        avg = sum(conf[i] for i in members) / len(members)
        total += len(members) / n * abs(acc - avg)
    return total


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
