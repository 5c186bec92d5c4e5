"""How the fairness balance measure works, from confusion counts on up.

Builds a small scored dataset by hand, computes per-group error rates at a
single cut, and walks through the pairwise-ratio summary that turns a table
of rates into one number between 0 and 1.
"""

import numpy as np

from fairtiers import (
    FairnessDefinition,
    SampleRecord,
    Dataset,
    confusion,
    fairness_measure,
    fairness_measure_from_rates,
    pairwise_ratio,
    performance,
    whole_sample,
)

# Forty units, two groups, an imperfect classifier: group "north" tends to
# receive higher scores among non-events than "south" does.
rng = np.random.default_rng(12)
records = []
for i in range(40):
    group = "north" if i % 2 else "south"
    outcome = rng.random() < 0.3
    base = rng.beta(2.2, 4.0) if outcome else rng.beta(1.4, 6.0)
    if group == "north" and not outcome:
        base = min(base + 0.08, 0.99)
    records.append(SampleRecord(f"unit-{i}", bool(outcome), group, float(base)))
data = Dataset.from_records(records)
sub = whole_sample(data)

cut = 0.25
print(f"Cut = {cut}: score >= cut means 'predicted to experience the event'\n")
for group in data.groups:
    c = confusion(sub, group, cut)
    vec = performance(sub, cut, group=group)
    print(f"  {group}: tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}  "
          f"fnr={vec.fnr:.3f} fpr={vec.fpr:.3f}")

measure = fairness_measure(sub, FairnessDefinition.ERB, cut)
print(f"\nError-rate balance at the cut: {measure.value:.3f}")
print(f"Most disparate comparison: {measure.worst_pair}")

# The same summary applied to a published-style rate table: four groups,
# FNR and FPR per group, twelve pairwise ratios, minimum reported.
table = {
    "BL": {"fnr": 0.331, "fpr": 0.342},
    "HPA": {"fnr": 0.368, "fpr": 0.203},
    "NV": {"fnr": 0.309, "fpr": 0.310},
    "WH": {"fnr": 0.386, "fpr": 0.279},
}
m = fairness_measure_from_rates(table, ("fnr", "fpr"), ("BL", "HPA", "NV", "WH"))
print("\nFour-group worked example:")
print(f"  min pairwise ratio = {m.value:.4f} (about 0.60), witness {m.worst_pair}")
print(f"  e.g. pairwise_ratio(0.203, 0.342) = {pairwise_ratio(0.203, 0.342):.4f}")
