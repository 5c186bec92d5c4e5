"""End-to-end public-data workflow on the adult census income file.

Usage:
    python demos/05_adult_workflow.py /path/to/adult.data

Downloads are not bundled; fetch the file from the UCI repository first.
The harness scores every row with held-out probabilities (income above 50K
as the positive event, race as the protected group), then the sweep finds
group-specific tier thresholds and the audit reports the trade-offs.
"""

import sys
import time

import numpy as np

from fairtiers import CorrectionConfig, audit, sweep
from fairtiers.adult import score_adult

if len(sys.argv) != 2:
    sys.exit(__doc__)

t0 = time.time()
data = score_adult(sys.argv[1], seed=0)
print(f"scored {data.n} rows in {time.time() - t0:.0f}s; "
      f"groups: {data.groups}")
print(f"outcome prevalence by race: "
      f"{({g: round(p, 3) for g, p in data.group_prevalences().items()})}")

config = CorrectionConfig(
    definition="ERB",
    i_subsamples=50,
    j_subsamples=50,
    w_grid=tuple(round(w, 2) for w in np.arange(0.0, 1.01, 0.05)),
    seed=1,
)
t0 = time.time()
result = sweep(data, config)
print(f"\nsweep finished in {time.time() - t0:.0f}s; best w: {result.best_w}")
for tier in ("L", "A", "H"):
    entry = result.evaluations[result.best_w[tier]]
    pair = entry.fairness[tier]
    print(f"  tier {tier}: error-rate balance {pair.pre.mean:.3f} -> {pair.post.mean:.3f}")

report = audit(data, result.selected_post, config)
print(f"\naudit flags: {report.flags}")
print(f"mean changed fraction: {report.delta.mean:.4f}")
