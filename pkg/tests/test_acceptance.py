"""Acceptance suite: one test per criterion, one printed line per criterion.

Expected values are re-derived here from independent oracles: a published
four-group worked example of the rate-balance measure, brute-force
enumeration over candidate grids, and direction-level reproduction on
synthetic data with realistic group shares, prevalences, and score scale.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.  The
heavy end-to-end criteria are marked ``slow``; the public-data criterion
needs the real census file (point FAIRTIERS_ADULT_DATA at adult.data).
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fairtiers import (
    CorrectionConfig,
    SyntheticGroup,
    delta_changed,
    fairness_measure_from_rates,
    generate_synthetic,
    run_correction,
    sweep,
)
from fairtiers.cli import main as cli_main
from fairtiers.pipeline import audit_impossibility

TIERS = ("L", "A", "H")
BINS = ("S1", "S2", "S3", "S4")


def ok(line):
    print(f"[acceptance] {line}: PASS")


# ---------------------------------------------------------------------------
# Criterion 4's dataset: four groups with realistic shares and outcome
# prevalences, N=10,000, scores concentrated low as classifier outputs are.

def criterion4_dataset():
    # Positive-score distributions nearly match across groups (mild FNR gaps)
    # while negative-score distributions differ (strong FPR gaps), the same
    # imbalance profile as the worked example of criterion 1.
    groups = [
        SyntheticGroup("BL", 1000, 0.21, pos_beta=(1.50, 5.00), neg_beta=(1.45, 8.55)),
        SyntheticGroup("HPA", 1900, 0.14, pos_beta=(1.42, 5.08), neg_beta=(1.00, 9.00)),
        SyntheticGroup("NV", 1200, 0.20, pos_beta=(1.50, 5.00), neg_beta=(1.35, 8.65)),
        SyntheticGroup("WH", 5900, 0.17, pos_beta=(1.46, 5.04), neg_beta=(1.15, 8.85)),
    ]
    return generate_synthetic(groups, seed=303, extra_records_rate=0.7)


def criterion4_config(definition="ERB"):
    return CorrectionConfig(
        definition=definition,
        i_subsamples=50,
        j_subsamples=50,
        w_grid=tuple(round(w, 2) for w in np.arange(0.0, 1.0001, 0.05)),
        seed=77,
    )


@pytest.fixture(scope="module")
def erb_run():
    data = criterion4_dataset()
    start = time.time()
    result = sweep(data, criterion4_config())
    return data, result, time.time() - start


class TestCriterion1:
    def test_worked_example(self):
        start = time.time()
        rates = {
            "BL": {"fnr": 0.331, "fpr": 0.342},
            "HPA": {"fnr": 0.368, "fpr": 0.203},
            "NV": {"fnr": 0.309, "fpr": 0.310},
            "WH": {"fnr": 0.386, "fpr": 0.279},
        }
        m = fairness_measure_from_rates(rates, ("fnr", "fpr"), ("BL", "HPA", "NV", "WH"))
        assert m.value == pytest.approx(0.203 / 0.342, abs=1e-12)
        assert abs(m.value - 0.60) <= 0.01  # the published table displays 0.60
        assert m.worst_pair == ("BL", "HPA", "fpr")
        elapsed = time.time() - start
        assert elapsed < 1.0
        ok(f"criterion 1 (worked-example balance 0.60, worst pair BL/HPA FPR, {elapsed:.3f}s)")


class TestCriterion2:
    def test_identity_limit(self):
        groups = [
            SyntheticGroup("A", 2500, 0.20, pos_beta=(1.9, 5.1), neg_beta=(1.4, 8.6)),
            SyntheticGroup("B", 2500, 0.12, pos_beta=(1.7, 5.3), neg_beta=(1.0, 9.0)),
        ]
        data = generate_synthetic(groups, seed=5, extra_records_rate=0.5)
        assert data.n == 5000
        cfg = CorrectionConfig(definition="ERB", i_subsamples=50, j_subsamples=5, seed=3)
        start = time.time()
        entry = run_correction(data, cfg, w=1.0)
        elapsed = time.time() - start
        gap = float(np.abs(entry.post.values - entry.pre.values).max())
        assert gap <= 1e-9
        assert float(np.abs(entry.optimizer_deltas).max()) == 0.0
        from fairtiers import draw_subsample

        sub = draw_subsample(data, np.random.default_rng(0))
        for tier in TIERS:
            assert delta_changed(sub, entry.pre.anchors.value(tier), entry.post.row_map(tier)) == 0.0
        assert elapsed < 10.0
        ok(f"criterion 2 (w=1 identity, max gap {gap:.2e}, {elapsed:.1f}s at N=5000 I=50)")


class TestCriterion3:
    def test_oracle_equivalence(self):
        from test_optimizer import exhaustive_tier_L, random_guarded_subsample
        from fairtiers import objective, optimize_tier

        start = time.time()
        rng = np.random.default_rng(100)
        instances = 0
        for w in (0.0, 0.3, 0.7):
            for _ in range(40):
                sub, anchors = random_guarded_subsample(rng, n=int(rng.integers(16, 41)))
                theta = optimize_tier(sub, "ERB", w, "L", anchors)
                got = objective(
                    sub, "ERB", w, dict(zip(sub.groups, theta)), anchors.low
                ).total
                want = exhaustive_tier_L(sub, "ERB", w, anchors)
                assert got == pytest.approx(want, abs=1e-12), (w, instances)
                instances += 1
        elapsed = time.time() - start
        assert instances >= 100
        assert elapsed < 60.0
        ok(f"criterion 3 (coordinate descent == exhaustive on {instances} instances, {elapsed:.1f}s)")


@pytest.mark.slow
class TestCriterion4:
    def test_direction_level_improvement(self, erb_run):
        data, result, elapsed = erb_run
        gains = {}
        for tier in TIERS:
            w = result.best_w[tier]
            pair = result.evaluations[w].fairness[tier]
            assert pair.post.mean > pair.pre.mean
            gains[tier] = pair.post.mean - pair.pre.mean
            assert gains[tier] >= 0.05
        assert elapsed < 15 * 60
        ok(
            "criterion 4 (mean balance up at every tier at best w: "
            + ", ".join(f"{t} +{gains[t]:.3f}" for t in TIERS)
            + f"; {elapsed:.0f}s)"
        )


@pytest.mark.slow
class TestCriterion5:
    def test_accuracy_cost_bound(self, erb_run):
        _, result, _ = erb_run
        worst = 0.0
        for tier in TIERS:
            w = result.best_w[tier]
            perf = result.evaluations[w].performance[tier]["overall"]
            for measure in ("acc", "fnr", "fpr", "npv", "ppv"):
                pair = perf[measure]
                change = abs(pair.post.mean - pair.pre.mean)
                assert change <= 0.03, (tier, measure, change)
                worst = max(worst, change)
        ok(f"criterion 5 (every overall measure within 3pp; worst change {worst * 100:.2f}pp)")


@pytest.mark.slow
class TestCriterion6:
    def test_impossibility_identity(self, erb_run):
        data, result, _ = erb_run
        cfg = criterion4_config()
        matrices = [result.selected_pre, result.selected_post]
        violations = audit_impossibility(data, matrices, cfg)
        assert violations == []
        ok("criterion 6 (exact balance never coexists with equal parity: 0 violations)")


@pytest.mark.slow
class TestCriterion7:
    def test_generalizability(self, erb_run):
        data, _, _ = erb_run
        start = time.time()
        summaries = []
        for definition in ("CUAE", "TE", "CAL"):
            result = sweep(data, criterion4_config(definition))
            keys = BINS if definition == "CAL" else TIERS
            for key in keys:
                w = result.best_w[key]
                pair = result.evaluations[w].fairness[key]
                assert pair.post.mean > pair.pre.mean, (definition, key)
            summaries.append(definition)
        elapsed = time.time() - start
        assert elapsed < 30 * 60
        ok(
            f"criterion 7 ({'/'.join(summaries)} improved at every tier/bin at best w; "
            f"{elapsed:.0f}s)"
        )


class TestCriterion8:
    def test_byte_identical_sweep(self, tmp_path):
        synth = {
            "seed": 11,
            "extra_records_rate": 0.4,
            "groups": [
                {"name": "A", "size": 300, "prevalence": 0.2,
                 "pos_beta": [1.9, 5.1], "neg_beta": [1.4, 8.6]},
                {"name": "B", "size": 300, "prevalence": 0.1,
                 "pos_beta": [1.7, 5.3], "neg_beta": [1.0, 9.0]},
            ],
        }
        cfg = {"definition": "ERB", "I": 8, "J": 8, "w_grid": [0.0, 0.5, 1.0], "seed": 13}
        (tmp_path / "synth.json").write_text(json.dumps(synth))
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        data = tmp_path / "data.csv"
        assert cli_main(["synth", "--config", str(tmp_path / "synth.json"), "--out", str(data)]) == 0

        digests = []
        for run in ("r1", "r2"):
            out = tmp_path / run
            assert cli_main(
                ["sweep", "--data", str(data), "--config", str(tmp_path / "cfg.json"),
                 "--out-dir", str(out)]
            ) == 0
            digests.append(
                {
                    name: hashlib.sha256((out / name).read_bytes()).hexdigest()
                    for name in (
                        "thresholds.json", "evaluation.csv",
                        "curve_thresholds.csv", "curve_tradeoff.csv", "best_w.json",
                    )
                }
            )
        assert digests[0] == digests[1]
        ok("criterion 8 (repeated sweep emits byte-identical JSON and CSV artifacts)")


def adult_path():
    env = os.environ.get("FAIRTIERS_ADULT_DATA")
    if env and Path(env).exists():
        return Path(env)
    local = Path(__file__).resolve().parent.parent / "data" / "adult.data"
    return local if local.exists() else None


@pytest.mark.slow
class TestCriterion9:
    def test_public_data_desk_run(self):
        path = adult_path()
        if path is None:
            pytest.skip(
                "criterion 9 needs the public census file; this environment has no "
                "network access to fetch it. Download adult.data from the UCI "
                "repository and set FAIRTIERS_ADULT_DATA (or place it at "
                "data/adult.data) to run the full end-to-end criterion."
            )
        pytest.importorskip("sklearn")
        from fairtiers.adult import score_adult

        start = time.time()
        data = score_adult(path, seed=0)
        assert data.n_groups >= 2  # race levels present in the file
        cfg = CorrectionConfig(
            definition="ERB",
            i_subsamples=50,
            j_subsamples=50,
            w_grid=tuple(round(w, 2) for w in np.arange(0.0, 1.0001, 0.05)),
            seed=1,
        )
        result = sweep(data, cfg)
        for tier in TIERS:
            w = result.best_w[tier]
            pair = result.evaluations[w].fairness[tier]
            assert pair.post.mean > pair.pre.mean, tier
        elapsed = time.time() - start
        assert elapsed < 10 * 60
        ok(f"criterion 9 (census end-to-end, balance up at every tier, {elapsed:.0f}s)")
