"""Orchestration tests: bagged correction, evaluation protocol, sweeps, audit."""

import numpy as np
import pytest

from conftest import build_dataset
from fairtiers import (
    ConfigError,
    CorrectionConfig,
    FairnessDefinition,
    GuardViolationError,
    SelectionError,
    SyntheticGroup,
    audit,
    evaluate,
    generate_synthetic,
    run_correction,
    select_best_w,
    sweep,
)
from fairtiers.pipeline import EvaluationEntry, Stat, StatPair, _draw_units, evaluation_rows


@pytest.fixture(scope="module")
def small_dataset():
    groups = [
        SyntheticGroup("A", 400, 0.22, pos_beta=(3.2, 4.0), neg_beta=(2.4, 7.6)),
        SyntheticGroup("B", 400, 0.12, pos_beta=(2.8, 4.4), neg_beta=(1.6, 8.4)),
    ]
    return generate_synthetic(groups, seed=17, extra_records_rate=0.5)


def make_config(**overrides):
    base = dict(
        definition="ERB",
        i_subsamples=6,
        j_subsamples=6,
        w_grid=(0.0, 0.5, 1.0),
        seed=9,
    )
    base.update(overrides)
    return CorrectionConfig(**base)


class TestCorrectionConfig:
    def test_defaults_mirror_run_shape(self):
        cfg = CorrectionConfig()
        assert cfg.i_subsamples == 200 and cfg.j_subsamples == 200
        assert len(cfg.w_grid) == 101
        assert cfg.w_grid[0] == 0.0 and cfg.w_grid[-1] == 1.0

    def test_grid_must_ascend(self):
        with pytest.raises(ConfigError):
            CorrectionConfig(w_grid=(0.5, 0.2))

    def test_grid_bounds(self):
        with pytest.raises(ConfigError):
            CorrectionConfig(w_grid=(0.0, 1.5))

    def test_counts_positive(self):
        with pytest.raises(ConfigError):
            CorrectionConfig(i_subsamples=0)

    def test_round_trip(self):
        cfg = make_config()
        assert CorrectionConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            CorrectionConfig.from_dict({"bogus": 1})


class TestRunCorrection:
    def test_penalty_only_identity(self, small_dataset):
        entry = run_correction(small_dataset, make_config(i_subsamples=10), w=1.0)
        assert np.abs(entry.post.values - entry.pre.values).max() <= 1e-9
        assert np.abs(entry.optimizer_deltas).max() == 0.0

    def test_single_subsample_degenerate_bagging(self, small_dataset):
        cfg = make_config(i_subsamples=1)
        entry = run_correction(small_dataset, cfg, w=0.5)
        # with I=1 the bagged matrix is the lone subsample's optimum, so the
        # anchors must satisfy coveredness exactly
        assert entry.covered

    def test_deterministic(self, small_dataset):
        cfg = make_config()
        a = run_correction(small_dataset, cfg, w=0.2)
        b = run_correction(small_dataset, cfg, w=0.2)
        assert np.array_equal(a.post.values, b.post.values)
        assert a.pre.anchors == b.pre.anchors

    def test_guard_aborts_with_diagnostic(self):
        # one group has a single positive record appearing in every subsample
        rows = [(f"a{i}", i == 0, "A", 0.1 + 0.8 * i / 49) for i in range(50)]
        rows += [(f"b{i}", False, "B", 0.1 + 0.8 * i / 9) for i in range(10)]
        d = build_dataset(rows)
        cfg = make_config(min_group_count=1, resample_cap=3)
        with pytest.raises(GuardViolationError, match="B"):
            run_correction(d, cfg, w=0.5)


class TestEvaluate:
    def test_post_equals_pre_is_identity(self, small_dataset):
        cfg = make_config()
        entry = run_correction(small_dataset, cfg, w=1.0)
        report = evaluate(small_dataset, cfg, entry.pre, entry.post, w=1.0)
        for tier in ("L", "A", "H"):
            pair = report.fairness[tier]
            assert pair.pre.mean == pytest.approx(pair.post.mean, abs=1e-12)
            assert report.delta[tier].mean == 0.0
        assert report.delta["ALL"].mean == 0.0
        for tier, per_scope in report.performance.items():
            for scope, per_measure in per_scope.items():
                for measure, sp in per_measure.items():
                    if sp.pre.mean is not None:
                        assert sp.pre.mean == pytest.approx(sp.post.mean, abs=1e-12)

    def test_two_subsample_hand_statistics(self, small_dataset):
        from fairtiers.metrics import fairness_measure

        cfg = make_config(j_subsamples=2)
        entry = run_correction(small_dataset, cfg, w=0.5)
        report = evaluate(small_dataset, cfg, entry.pre, entry.post, w=0.5)
        # recompute the two per-subsample values independently
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
        units = _draw_units(small_dataset, 2, rng, cfg, "eval")
        vals = [
            fairness_measure(u.sub, cfg.definition, entry.post.row_map("A")).value
            for u in units
        ]
        assert report.fairness["A"].post.mean == pytest.approx(np.mean(vals), abs=1e-12)
        assert report.fairness["A"].post.sd == pytest.approx(np.std(vals, ddof=1), abs=1e-12)

    def test_bounded_means(self, small_dataset):
        cfg = make_config()
        entry = run_correction(small_dataset, cfg, w=0.3)
        report = evaluate(small_dataset, cfg, entry.pre, entry.post, w=0.3)
        for pair in report.fairness.values():
            for stat in (pair.pre, pair.post):
                assert 0.0 <= stat.mean <= 1.0
                assert stat.sd >= 0.0
        for stat in report.delta.values():
            assert 0.0 <= stat.mean <= 1.0


class TestSweep:
    def test_two_point_grid(self, small_dataset):
        cfg = make_config(w_grid=(0.0, 1.0))
        result = sweep(small_dataset, cfg)
        assert set(result.evaluations) == {0.0, 1.0}
        assert result.evaluations[1.0].delta["ALL"].mean == 0.0

    def test_pre_columns_identical_across_w(self, small_dataset):
        cfg = make_config()
        result = sweep(small_dataset, cfg)
        base = result.evaluations[cfg.w_grid[0]]
        for w in cfg.w_grid[1:]:
            other = result.evaluations[w]
            for tier in ("L", "A", "H"):
                assert base.fairness[tier].pre == other.fairness[tier].pre

    def test_monotone_changed_fraction(self, small_dataset):
        cfg = make_config(w_grid=tuple(round(w, 1) for w in np.arange(0, 1.01, 0.1)))
        result = sweep(small_dataset, cfg)
        assert result.monotone_violations == 0
        stack = np.stack(
            [result.corrections[w].optimizer_deltas for w in cfg.w_grid]
        )
        assert np.all(np.diff(stack, axis=0) <= 1e-9)

    def test_curve_row_counts(self, small_dataset):
        cfg = make_config()
        result = sweep(small_dataset, cfg)
        assert len(result.tradeoff_rows()) == len(cfg.w_grid) * 3
        assert len(result.threshold_rows()) == len(cfg.w_grid) * 3 * small_dataset.n_groups

    def test_selected_matrix_mixes_per_tier_best(self, small_dataset):
        cfg = make_config()
        result = sweep(small_dataset, cfg)
        for t, tier in enumerate(("L", "A", "H")):
            w = result.best_w[tier]
            assert np.array_equal(
                result.selected_post.row(tier), result.corrections[w].post.row(tier)
            )

    def test_cal_sweep_single_w(self, small_dataset):
        cfg = make_config(definition="CAL", w_grid=(0.0, 0.5, 1.0))
        result = sweep(small_dataset, cfg)
        assert len(set(result.best_w.values())) == 1
        assert set(result.best_w) == {"S1", "S2", "S3", "S4"}
        assert len(result.tradeoff_rows()) == len(cfg.w_grid) * 4

    def test_continues_past_failed_w(self, small_dataset, monkeypatch):
        import fairtiers.pipeline as pl

        real = pl.optimize_thresholds

        def flaky(sub, definition, w, **kwargs):
            if w == 0.5:
                raise pl.InfeasibleTierError("A", "B", "synthetic failure")
            return real(sub, definition, w, **kwargs)

        monkeypatch.setattr(pl, "optimize_thresholds", flaky)
        cfg = make_config(w_grid=(0.0, 0.5, 1.0))
        result = sweep(small_dataset, cfg)
        assert set(result.corrections) == {0.0, 1.0}
        assert 0.5 in result.failures and "synthetic failure" in result.failures[0.5]
        assert set(result.best_w.values()) <= {0.0, 1.0}
        assert result.to_dict()["failed_w"]


def entry_with(w, means_sds):
    """Minimal EvaluationEntry with given per-tier post (mean, sd)."""
    fairness = {
        tier: StatPair(Stat(0.5, 0.1, 6, 0), Stat(m, s, 6, 0))
        for tier, (m, s) in means_sds.items()
    }
    return EvaluationEntry(
        w=w,
        definition=FairnessDefinition.ERB,
        fairness=fairness,
        performance={},
        delta={},
        n_subsamples=6,
    )


class TestSelectBestW:
    def test_single_entry(self):
        report = {0.3: entry_with(0.3, {"L": (0.8, 0.1), "A": (0.7, 0.1), "H": (0.6, 0.1)})}
        assert select_best_w(report, "ERB") == {"L": 0.3, "A": 0.3, "H": 0.3}

    def test_sd_breaks_mean_ties(self):
        report = {
            0.2: entry_with(0.2, {"L": (0.8, 0.03), "A": (0.7, 0.1), "H": (0.6, 0.1)}),
            0.4: entry_with(0.4, {"L": (0.8, 0.01), "A": (0.6, 0.1), "H": (0.6, 0.1)}),
        }
        best = select_best_w(report, "ERB")
        assert best["L"] == 0.4  # equal means, smaller sd wins
        assert best["A"] == 0.2  # higher mean wins outright

    def test_largest_w_breaks_remaining_ties(self):
        report = {
            0.2: entry_with(0.2, {"L": (0.8, 0.01), "A": (0.7, 0.1), "H": (0.6, 0.1)}),
            0.9: entry_with(0.9, {"L": (0.8, 0.01), "A": (0.7, 0.1), "H": (0.6, 0.1)}),
        }
        assert select_best_w(report, "ERB")["L"] == 0.9

    def test_reorder_invariance(self):
        entries = {
            0.1: entry_with(0.1, {"L": (0.7, 0.1), "A": (0.7, 0.1), "H": (0.7, 0.1)}),
            0.5: entry_with(0.5, {"L": (0.9, 0.1), "A": (0.7, 0.1), "H": (0.7, 0.1)}),
            0.8: entry_with(0.8, {"L": (0.8, 0.1), "A": (0.7, 0.1), "H": (0.7, 0.1)}),
        }
        forward = select_best_w(entries, "ERB")
        backward = select_best_w(dict(reversed(list(entries.items()))), "ERB")
        assert forward == backward

    def test_all_undefined_raises(self):
        entry = entry_with(0.2, {"L": (0.8, 0.1), "A": (0.8, 0.1), "H": (0.8, 0.1)})
        undefined = EvaluationEntry(
            w=0.2,
            definition=FairnessDefinition.ERB,
            fairness={
                t: StatPair(Stat(None, None, 0, 6), Stat(None, None, 0, 6))
                for t in ("L", "A", "H")
            },
            performance={},
            delta={},
            n_subsamples=6,
        )
        with pytest.raises(SelectionError):
            select_best_w({0.2: undefined}, "ERB")


class TestAudit:
    def test_shape_covers_all_definitions(self, small_dataset):
        cfg = make_config()
        entry = run_correction(small_dataset, cfg, w=0.3)
        report = audit(small_dataset, entry.post, cfg)
        assert set(report.measures) == {
            "SP", "OAE", "PP", "EO", "PE", "ERB", "CUAE", "TE", "CAL",
        }
        for defn, per_key in report.measures.items():
            expected = {"S1", "S2", "S3", "S4"} if defn == "CAL" else {"L", "A", "H"}
            assert set(per_key) == expected

    def test_agnostic_thresholds_give_equal_pre_post(self, small_dataset):
        from fairtiers import agnostic_tiers, whole_sample

        cfg = make_config()
        anchors = agnostic_tiers(whole_sample(small_dataset))
        report = audit(small_dataset, anchors.replicate(small_dataset.groups), cfg)
        for per_key in report.measures.values():
            for pair in per_key.values():
                if pair.pre.mean is not None:
                    assert pair.pre.mean == pytest.approx(pair.post.mean, abs=1e-12)

    def test_impossibility_flag_on_erb_corrected_run(self, small_dataset):
        # prevalences differ (0.22 vs 0.12), so pushing error-rate balance up
        # must pull predictive parity or calibration down
        cfg = make_config(i_subsamples=10, j_subsamples=10)
        entry = run_correction(small_dataset, cfg, w=0.0)
        report = audit(small_dataset, entry.post, cfg)
        assert report.flags["erb_improved"]
        assert report.flags["impossibility_tradeoff"]

    def test_sp_measure_equals_predicted_positive_tally(self, small_dataset):
        from fairtiers import agnostic_tiers, whole_sample
        from fairtiers.metrics import fairness_measure
        from fairtiers.pipeline import _draw_units

        cfg = make_config()
        anchors = agnostic_tiers(whole_sample(small_dataset))
        matrix = anchors.replicate(small_dataset.groups)
        report = audit(small_dataset, matrix, cfg)

        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
        units = _draw_units(small_dataset, cfg.j_subsamples, rng, cfg, "audit")
        for tier, cut in (("L", anchors.low), ("A", anchors.average), ("H", anchors.high)):
            vals = []
            for u in units:
                rates = {}
                for k, g in enumerate(u.sub.groups):
                    mask = u.sub.group_codes == k
                    rates[g] = float((u.sub.scores[mask] >= cut).mean())
                lo, hi = min(rates.values()), max(rates.values())
                vals.append(1.0 if hi == 0 else lo / hi)
            assert report.measures["SP"][tier].post.mean == pytest.approx(
                np.mean(vals), abs=1e-12
            )


class TestEvaluationRows:
    def test_row_schema(self, small_dataset):
        cfg = make_config(w_grid=(0.0, 1.0))
        result = sweep(small_dataset, cfg)
        rows = evaluation_rows(result.evaluations)
        # fairness rows: 2 w x 3 tiers x 2 phases
        fair = [r for r in rows if r["measure"] == "ERB"]
        assert len(fair) == 12
        # delta rows: 2 w x (3 tiers + ALL)
        delta = [r for r in rows if r["measure"] == "delta"]
        assert len(delta) == 8
        perf = [r for r in rows if r["measure"] == "acc" and r["scope"] == "overall"]
        assert len(perf) == 12  # 2 w x 3 tiers x 2 phases
