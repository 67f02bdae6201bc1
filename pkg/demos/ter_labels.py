"""Label hypothesis tokens with TER and show how deletions are projected.

Run: python demos/ter_labels.py
"""

from nmtcal.ter import label_sentence, ter_align

PAIRS = [
    ("the cat sat on mat", "the cat sat on the mat"),
    ("on the mat the cat sat", "the cat sat on the mat"),
    ("a dog sat on the the mat", "the cat sat on the mat"),
]

for hyp, ref in PAIRS:
    h, r = hyp.split(), ref.split()
    res = ter_align(h, r)
    labels = label_sentence(h, r)
    print(f"hyp: {hyp}\nref: {ref}")
    print(f"  edits={res.edits} shifts={res.shift_count} ter={res.ter_score:.3f}")
    print("  " + " ".join(f"{tok}/{lab}" for tok, lab in zip(h, labels)))
    # With shifts disabled the same pair costs plain edit distance.
    print(f"  edits without shifts: {ter_align(h, r, 0).edits}\n")
