"""ECE, the reliability diagram and Over/Under classes on made-up predictions.

The honest predictor reports its true chance of being right; the
over-confident one adds 0.3 to it.

Run: python demos/calibration_basics.py
"""

import numpy as np

from nmtcal.calibration import class_fractions, classify_predictions, ece_report, reliability_diagram

rng = np.random.default_rng(0)
n = 20_000
true_acc = rng.uniform(0.2, 1.0, n)
correct = rng.random(n) < true_acc

for name, conf in [("honest", true_acc), ("over-confident", np.clip(true_acc + 0.3, 0, 1))]:
    rep = ece_report((conf, correct), 10)
    classes = classify_predictions((conf, correct), rep.bins, threshold=rep.ece)
    print(f"{name}: ECE {rep.ece:.4f}  classes {class_fractions(classes)}")
    for row in reliability_diagram(rep):
        if row.count:
            print(f"  bin {row.bin_center:.2f}  conf {row.avg_confidence:.3f}  acc {row.avg_accuracy:.3f}  n={row.count}")
    print()
