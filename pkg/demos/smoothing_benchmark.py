"""A reduced end-to-end run: train one toy model per smoothing policy and
compare training against inference calibration.

The shipped default benchmark is larger (see README); this one finishes
in a few minutes on one core, so its numbers are noisier.

Run: python demos/smoothing_benchmark.py [OUT_DIR]
"""

import sys

from nmtcal.pipeline import SUMMARY_HEADER, BenchmarkConfig, run_benchmark

cfg = BenchmarkConfig.from_dict({
    "n_train": 4000,
    "n_dev": 200,
    "n_test": 200,
    "train": {"max_steps": 1200},
})
out = sys.argv[1] if len(sys.argv) > 1 else None
results = run_benchmark(cfg, out)

print("\t".join(SUMMARY_HEADER))
for r in results.values():
    print("\t".join(x if isinstance(x, str) else f"{x:.4f}" for x in r.row()))
if out:
    print(f"\nreport bundle written to {out}")
