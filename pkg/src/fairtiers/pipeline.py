"""Orchestration: subsampled correction, penalty-weight sweeps, evaluation.

The correction draws I one-record-per-entity subsamples, solves the
penalized threshold problem on each, and averages the per-subsample results
(a bagging pass).  Evaluation draws J fresh subsamples from an independent
stream and reports means and standard deviations of the fairness and
performance measures at the bagged thresholds, before and after correction.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import ConfigError, Dataset, Subsample, draw_subsample
from .metrics import (
    FairnessDefinition,
    GroupedScores,
    PerformanceVector,
    calibration_measure,
    check_impossibility,
    delta_changed,
    delta_changed_tiers,
    fairness_measure,
    performance,
)
from .optimizer import (
    DegenerateScoresError,
    InfeasibleTierError,
    agnostic_tiers,
    optimize_thresholds,
)
from .thresholds import TIER_LABELS, TIERS, AgnosticTiers, ThresholdMatrix

_CONVENTIONS = {
    "tier_bins": "left-closed (a score equal to a cut lands in the higher tier)",
    "percentiles": "nearest-rank",
    "rate_ratio_zero_over_zero": 1.0,
    "rate_ratio_zero_over_positive": 0.0,
    "undefined_rates": "pairs with an undefined constituent are dropped from the minimum and counted",
    "optimism_caveat": "no train/test split; measures may be optimistic",
}


class GuardViolationError(RuntimeError):
    """Subsampling could not produce a usable subsample within the retry cap."""


class SelectionError(RuntimeError):
    """No defined measure was available to select a best penalty weight."""


@dataclass(frozen=True)
class CorrectionConfig:
    """Run parameters for correction, evaluation, and sweeps."""

    definition: FairnessDefinition = FairnessDefinition.ERB
    i_subsamples: int = 200
    j_subsamples: int = 200
    w_grid: tuple[float, ...] = tuple(round(k / 100, 2) for k in range(101))
    seed: int = 0
    min_group_count: int = 1
    epsilon: float = 1e-9
    resample_cap: int = 100
    threads: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "definition", FairnessDefinition(self.definition))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "w_grid", tuple(float(w) for w in self.w_grid))
        if self.i_subsamples < 1 or self.j_subsamples < 1:
            raise ConfigError("subsample counts must be >= 1")
        if not self.w_grid:
            raise ConfigError("w_grid must be non-empty")
        for w in self.w_grid:
            if not 0.0 <= w <= 1.0:
                raise ConfigError(f"w value {w} outside [0, 1]")
        if any(b <= a for a, b in zip(self.w_grid, self.w_grid[1:])):
            raise ConfigError("w_grid must be strictly ascending")
        if self.min_group_count < 1:
            raise ConfigError("min_group_count must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {
            "definition": self.definition.value,
            "I": self.i_subsamples,
            "J": self.j_subsamples,
            "w_grid": list(self.w_grid),
            "seed": self.seed,
            "min_group_count": self.min_group_count,
            "epsilon": self.epsilon,
            "resample_cap": self.resample_cap,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "CorrectionConfig":
        known = {
            "definition": "definition",
            "I": "i_subsamples",
            "J": "j_subsamples",
            "w_grid": "w_grid",
            "seed": "seed",
            "min_group_count": "min_group_count",
            "epsilon": "epsilon",
            "resample_cap": "resample_cap",
            "threads": "threads",
        }
        kwargs = {}
        for key, value in payload.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[known[key]] = tuple(value) if key == "w_grid" else value
        return cls(**kwargs)


@dataclass
class _Unit:
    """A guarded subsample with its anchors and sorted-score tables."""

    sub: Subsample
    anchors: AgnosticTiers
    engine: GroupedScores


def _guard_failure(sub: Subsample, min_count: int) -> str | None:
    """Why this subsample cannot be used, or None if it can."""
    for k, g in enumerate(sub.groups):
        mask = sub.group_codes == k
        n_pos = int(sub.outcomes[mask].sum())
        n_neg = int(mask.sum()) - n_pos
        if n_pos < min_count or n_neg < min_count:
            return f"group {g!r} has {n_pos} positive / {n_neg} negative records"
    return None


def _cal_bins_failure(sub: Subsample, anchors: AgnosticTiers) -> str | None:
    """Calibration needs every group to populate all four anchor bins."""
    cuts = anchors.as_array()
    tiers = (
        (sub.scores[:, None] >= cuts[None, :]).sum(axis=1)
    )
    for k, g in enumerate(sub.groups):
        counts = np.bincount(tiers[sub.group_codes == k], minlength=4)
        if (counts == 0).any():
            empty = TIER_LABELS[int(np.argmax(counts == 0))]
            return f"group {g!r} has no records in tier {empty} at the anchors"
    return None


def _draw_units(
    dataset: Dataset, count: int, rng: np.random.Generator, cfg: CorrectionConfig, tag: str
) -> list[_Unit]:
    units = []
    for i in range(count):
        failure = None
        for _ in range(cfg.resample_cap + 1):
            sub = draw_subsample(dataset, rng, seed_tag=f"{tag}-{i}")
            failure = _guard_failure(sub, cfg.min_group_count)
            if failure is None:
                try:
                    anchors = agnostic_tiers(sub)
                except DegenerateScoresError as exc:
                    failure = str(exc)
                    continue
                if cfg.definition is FairnessDefinition.CAL:
                    failure = _cal_bins_failure(sub, anchors)
                    if failure is not None:
                        continue
                units.append(_Unit(sub, anchors, GroupedScores(sub)))
                break
        else:
            raise GuardViolationError(
                f"subsample {tag}-{i}: {failure}; exceeded resample cap {cfg.resample_cap}"
            )
    return units


# ---------------------------------------------------------------------------
# Correction (bagged optimization)

@dataclass(frozen=True)
class CorrectionEntry:
    """Bagged thresholds for one penalty weight."""

    w: float
    pre: ThresholdMatrix
    post: ThresholdMatrix
    optimizer_deltas: np.ndarray  # (I, 3) changed fractions at each optimum, or (I,) for CAL
    coveredness_gaps: dict[str, float]

    @property
    def covered(self) -> bool:
        return all(g == 0.0 for g in self.coveredness_gaps.values())


def _correct_units(units: Sequence[_Unit], cfg: CorrectionConfig, w: float) -> CorrectionEntry:
    groups = units[0].sub.groups
    thetas = np.empty((len(units), 3, len(groups)))
    cal = cfg.definition is FairnessDefinition.CAL
    deltas = np.empty((len(units),) if cal else (len(units), 3))
    for i, unit in enumerate(units):
        try:
            matrix = optimize_thresholds(
                unit.sub, cfg.definition, w, anchors=unit.anchors,
                eps=cfg.epsilon, engine=unit.engine,
            )
        except InfeasibleTierError as exc:
            raise GuardViolationError(
                f"subsample {unit.sub.seed_tag}: {exc}"
            ) from exc
        thetas[i] = matrix.values
        if cal:
            deltas[i] = delta_changed_tiers(unit.sub, unit.anchors.replicate(groups), matrix)
        else:
            for t, tier in enumerate(TIERS):
                deltas[i, t] = delta_changed(
                    unit.sub, unit.anchors.value(tier), matrix.row_map(tier)
                )
    bagged_anchors = AgnosticTiers(
        *(float(np.mean([u.anchors.as_array()[t] for u in units])) for t in range(3))
    )
    post = ThresholdMatrix(groups, thetas.mean(axis=0), bagged_anchors)
    return CorrectionEntry(
        w=w,
        pre=bagged_anchors.replicate(groups),
        post=post,
        optimizer_deltas=deltas,
        coveredness_gaps=post.coveredness_gaps(),
    )


def run_correction(dataset: Dataset, cfg: CorrectionConfig, w: float) -> CorrectionEntry:
    """Draw I subsamples, optimize each, and average the resulting thresholds."""
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"penalty weight must lie in [0, 1], got {w}")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    units = _draw_units(dataset, cfg.i_subsamples, rng, cfg, "corr")
    return _correct_units(units, cfg, w)


# ---------------------------------------------------------------------------
# Evaluation (J-subsample protocol)

@dataclass(frozen=True)
class Stat:
    """Mean and sample standard deviation over the defined subsample values."""

    mean: float | None
    sd: float | None
    n: int
    n_undefined: int = 0

    @classmethod
    def from_values(cls, values: Sequence[float | None]) -> "Stat":
        defined = [v for v in values if v is not None]
        n_undef = len(values) - len(defined)
        if not defined:
            return cls(None, None, 0, n_undef)
        mean = float(np.mean(defined))
        sd = float(np.std(defined, ddof=1)) if len(defined) > 1 else 0.0
        return cls(mean, sd, len(defined), n_undef)


@dataclass(frozen=True)
class StatPair:
    pre: Stat
    post: Stat


@dataclass(frozen=True)
class EvaluationEntry:
    """Aggregated measures for one penalty weight.

    ``fairness`` is keyed by tier (L/A/H) for threshold-level definitions and
    by tier label (S1..S4) for calibration.  ``performance`` is keyed by
    tier, then scope (group name or "overall"), then measure name.
    ``delta`` holds the mean changed-score fraction per tier plus the
    four-way total under "ALL".
    """

    w: float
    definition: FairnessDefinition
    fairness: dict[str, StatPair]
    performance: dict[str, dict[str, dict[str, StatPair]]]
    delta: dict[str, Stat]
    n_subsamples: int

    def fairness_keys(self) -> tuple[str, ...]:
        return tuple(TIER_LABELS if self.definition is FairnessDefinition.CAL else TIERS)


def _measure_value(
    sub: Subsample,
    definition: FairnessDefinition,
    matrix: ThresholdMatrix,
    key: str,
) -> float | None:
    if definition is FairnessDefinition.CAL:
        return calibration_measure(sub, matrix, key).value
    return fairness_measure(sub, definition, matrix.row_map(key)).value


def evaluate(
    dataset: Dataset,
    cfg: CorrectionConfig,
    pre: ThresholdMatrix,
    post: ThresholdMatrix,
    w: float | None = None,
    units: Sequence[_Unit] | None = None,
) -> EvaluationEntry:
    """Apply both threshold matrices to J fresh subsamples and aggregate."""
    if units is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
        units = _draw_units(dataset, cfg.j_subsamples, rng, cfg, "eval")
    groups = dataset.groups
    keys = tuple(TIER_LABELS if cfg.definition is FairnessDefinition.CAL else TIERS)
    scopes = groups + ("overall",)

    fair_vals: dict[str, dict[str, list]] = {k: {"pre": [], "post": []} for k in keys}
    perf_vals = {
        tier: {
            scope: {m: {"pre": [], "post": []} for m in PerformanceVector.FIELDS}
            for scope in scopes
        }
        for tier in TIERS
    }
    delta_vals: dict[str, list] = {tier: [] for tier in TIERS}
    delta_vals["ALL"] = []

    for unit in units:
        sub = unit.sub
        for key in keys:
            fair_vals[key]["pre"].append(_measure_value(sub, cfg.definition, pre, key))
            fair_vals[key]["post"].append(_measure_value(sub, cfg.definition, post, key))
        for tier in TIERS:
            pre_row = pre.row_map(tier)
            post_row = post.row_map(tier)
            for scope in scopes:
                g = None if scope == "overall" else scope
                for phase, row in (("pre", pre_row), ("post", post_row)):
                    vec = performance(sub, row, group=g).as_dict()
                    for m, v in vec.items():
                        perf_vals[tier][scope][m][phase].append(v)
            delta_vals[tier].append(
                delta_changed(sub, pre.anchors.value(tier), post.row_map(tier))
            )
        delta_vals["ALL"].append(delta_changed_tiers(sub, pre, post))

    return EvaluationEntry(
        w=float(w) if w is not None else math.nan,
        definition=cfg.definition,
        fairness={
            k: StatPair(Stat.from_values(v["pre"]), Stat.from_values(v["post"]))
            for k, v in fair_vals.items()
        },
        performance={
            tier: {
                scope: {
                    m: StatPair(
                        Stat.from_values(perf_vals[tier][scope][m]["pre"]),
                        Stat.from_values(perf_vals[tier][scope][m]["post"]),
                    )
                    for m in PerformanceVector.FIELDS
                }
                for scope in scopes
            }
            for tier in TIERS
        },
        delta={k: Stat.from_values(v) for k, v in delta_vals.items()},
        n_subsamples=len(units),
    )


# ---------------------------------------------------------------------------
# Sweep

@dataclass(frozen=True)
class SweepResult:
    """Correction plus evaluation across the whole penalty-weight grid.

    The I correction subsamples and J evaluation subsamples are drawn once
    and shared across grid points, so pre-correction columns agree exactly
    between weights and the anchors are bagged a single time.  Weights whose
    correction failed are absent from ``corrections``/``evaluations`` and
    recorded in ``failures``.
    """

    config: CorrectionConfig
    corrections: dict[float, CorrectionEntry]
    evaluations: dict[float, EvaluationEntry]
    best_w: dict[str, float]
    selected_pre: ThresholdMatrix
    selected_post: ThresholdMatrix
    monotone_violations: int
    failures: dict[float, str] = field(default_factory=dict)
    conventions: dict = field(default_factory=lambda: dict(_CONVENTIONS))

    @property
    def w_grid(self) -> tuple[float, ...]:
        return tuple(w for w in self.config.w_grid if w in self.corrections)

    def tradeoff_rows(self) -> list[dict]:
        """One row per (w, tier-or-bin): mean fairness pre/post and mean
        changed fraction, the quantities behind the trade-off curves."""
        rows = []
        for w in self.w_grid:
            entry = self.evaluations[w]
            for key in entry.fairness_keys():
                delta_key = key if key in entry.delta else "ALL"
                rows.append(
                    {
                        "w": w,
                        "tier": key,
                        "fairness_pre_mean": entry.fairness[key].pre.mean,
                        "fairness_post_mean": entry.fairness[key].post.mean,
                        "changed_mean": entry.delta[delta_key].mean,
                    }
                )
        return rows

    def threshold_rows(self) -> list[dict]:
        """One row per (w, tier, group): bagged pre and post threshold values."""
        rows = []
        for w in self.w_grid:
            corr = self.corrections[w]
            for tier in TIERS:
                for g in corr.post.groups:
                    rows.append(
                        {
                            "w": w,
                            "tier": tier,
                            "group": g,
                            "pre": corr.pre.value(tier, g),
                            "post": corr.post.value(tier, g),
                        }
                    )
        return rows

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "conventions": self.conventions,
            "anchors_bagged": self.selected_pre.to_dict()["anchors"],
            "per_w": [
                {
                    "w": w,
                    "pre": self.corrections[w].pre.to_dict(),
                    "post": self.corrections[w].post.to_dict(),
                    "coveredness_gaps": self.corrections[w].coveredness_gaps,
                }
                for w in self.w_grid
            ],
            "best_w": self.best_w,
            "selected": {
                "pre": self.selected_pre.to_dict(),
                "post": self.selected_post.to_dict(),
            },
            "monotone_violations": self.monotone_violations,
            "failed_w": {repr(w): msg for w, msg in sorted(self.failures.items())},
        }


def _count_monotone_violations(
    corrections: Mapping[float, CorrectionEntry], w_grid: Sequence[float], tol: float = 1e-9
) -> int:
    """Per subsample (and tier), count increases of the changed fraction as w
    grows; exact optimization makes this non-increasing."""
    stack = np.stack([corrections[w].optimizer_deltas for w in w_grid])  # (W, I[, 3])
    diffs = np.diff(stack, axis=0)
    return int(np.sum(diffs > tol))


def select_best_w(
    evaluations: Mapping[float, EvaluationEntry], definition: FairnessDefinition
) -> dict[str, float]:
    """Largest mean post-correction fairness per tier; ties prefer the
    smaller standard deviation, then the larger weight.

    Calibration is optimized jointly, so a single weight (the one with the
    best across-bin mean) is chosen and reported for every bin.
    """
    definition = FairnessDefinition(definition)
    ws = sorted(evaluations)
    if not ws:
        raise SelectionError("empty evaluation report")

    def pick(scores: list[tuple[float, float, float]]) -> float:
        # (mean, sd, w); maximize mean, then minimize sd, then maximize w
        best_mean = max(s[0] for s in scores)
        pool = [s for s in scores if abs(s[0] - best_mean) <= 1e-12]
        best_sd = min(s[1] for s in pool)
        pool = [s for s in pool if abs(s[1] - best_sd) <= 1e-12]
        return max(s[2] for s in pool)

    if definition is FairnessDefinition.CAL:
        scores = []
        for w in ws:
            entry = evaluations[w]
            means = [entry.fairness[k].post.mean for k in TIER_LABELS]
            sds = [entry.fairness[k].post.sd for k in TIER_LABELS]
            if any(m is None for m in means):
                continue
            scores.append((float(np.mean(means)), float(np.mean(sds)), w))
        if not scores:
            raise SelectionError("calibration measure undefined at every weight")
        chosen = pick(scores)
        return {k: chosen for k in TIER_LABELS}

    best: dict[str, float] = {}
    for tier in TIERS:
        scores = []
        for w in ws:
            stat = evaluations[w].fairness[tier].post
            if stat.mean is not None:
                scores.append((stat.mean, stat.sd, w))
        if not scores:
            raise SelectionError(f"fairness measure undefined at every weight for tier {tier}")
        best[tier] = pick(scores)
    return best


def _compose_selected(
    corrections: Mapping[float, CorrectionEntry],
    best_w: Mapping[str, float],
    definition: FairnessDefinition,
) -> tuple[ThresholdMatrix, ThresholdMatrix]:
    """The operational matrix: each tier's row taken from its best weight."""
    if definition is FairnessDefinition.CAL:
        entry = corrections[next(iter(best_w.values()))]
        return entry.pre, entry.post
    some = corrections[next(iter(corrections))]
    pre = some.pre
    values = np.vstack([corrections[best_w[tier]].post.row(tier) for tier in TIERS])
    return pre, ThresholdMatrix(pre.groups, values, pre.anchors)


def _sweep_one_w(args):
    units, cfg, w = args
    try:
        return w, _correct_units(units, cfg, w), None
    except (GuardViolationError, InfeasibleTierError) as exc:
        return w, None, str(exc)


def sweep(dataset: Dataset, cfg: CorrectionConfig) -> SweepResult:
    """Correct and evaluate at every grid weight, then pick the best one.

    A weight whose correction fails is skipped and recorded; the sweep keeps
    going and only raises when no weight survives.
    """
    seq = np.random.SeedSequence(cfg.seed).spawn(2)
    corr_units = _draw_units(
        dataset, cfg.i_subsamples, np.random.default_rng(seq[0]), cfg, "corr"
    )
    eval_units = _draw_units(
        dataset, cfg.j_subsamples, np.random.default_rng(seq[1]), cfg, "eval"
    )

    corrections: dict[float, CorrectionEntry] = {}
    failures: dict[float, str] = {}
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            for w, entry, error in pool.map(
                _sweep_one_w, [(corr_units, cfg, w) for w in cfg.w_grid]
            ):
                if error is None:
                    corrections[w] = entry
                else:
                    failures[w] = error
    else:
        for w in cfg.w_grid:
            try:
                corrections[w] = _correct_units(corr_units, cfg, w)
            except (GuardViolationError, InfeasibleTierError) as exc:
                failures[w] = str(exc)
    if not corrections:
        raise GuardViolationError(
            "every weight failed; first failure: "
            f"{failures[min(failures)]}"
        )

    evaluations = {
        w: evaluate(dataset, cfg, corrections[w].pre, corrections[w].post, w=w, units=eval_units)
        for w in sorted(corrections)
    }
    best = select_best_w(evaluations, cfg.definition)
    pre, post = _compose_selected(corrections, best, cfg.definition)
    return SweepResult(
        config=cfg,
        corrections=corrections,
        evaluations=evaluations,
        best_w=best,
        selected_pre=pre,
        selected_post=post,
        monotone_violations=_count_monotone_violations(corrections, sorted(corrections)),
        failures=failures,
    )


# ---------------------------------------------------------------------------
# Audit across all nine definitions

@dataclass(frozen=True)
class AuditReport:
    """All nine definitions evaluated at one threshold matrix, pre and post."""

    measures: dict[str, dict[str, StatPair]]  # definition -> tier/bin -> stats
    delta: Stat
    flags: dict[str, bool]
    n_subsamples: int
    conventions: dict = field(default_factory=lambda: dict(_CONVENTIONS))

    def rows(self) -> list[dict]:
        out = []
        for defn, per_key in self.measures.items():
            for key, pair in per_key.items():
                out.append(
                    {
                        "definition": defn,
                        "tier": key,
                        "pre_mean": pair.pre.mean,
                        "pre_sd": pair.pre.sd,
                        "post_mean": pair.post.mean,
                        "post_sd": pair.post.sd,
                        "n_undefined": pair.pre.n_undefined + pair.post.n_undefined,
                    }
                )
        return out


def audit(dataset: Dataset, matrix: ThresholdMatrix, cfg: CorrectionConfig) -> AuditReport:
    """Evaluate every group-level definition at the given thresholds.

    The pre side replicates the matrix's own anchors across groups.  The
    report flags the expected impossibility trade-off: error-rate balance up
    while predictive parity or calibration moves down.
    """
    missing = set(dataset.groups) - set(matrix.groups)
    if missing:
        raise ConfigError(
            f"thresholds are missing group {sorted(missing)[0]!r} required by the dataset"
        )
    matrix = _align_groups(matrix, dataset.groups)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    units = _draw_units(dataset, cfg.j_subsamples, rng, cfg, "audit")
    pre = matrix.anchors.replicate(dataset.groups)

    measures: dict[str, dict[str, StatPair]] = {}
    for definition in FairnessDefinition:
        keys = TIER_LABELS if definition is FairnessDefinition.CAL else TIERS
        vals = {k: {"pre": [], "post": []} for k in keys}
        for unit in units:
            for k in keys:
                vals[k]["pre"].append(_measure_value(unit.sub, definition, pre, k))
                vals[k]["post"].append(_measure_value(unit.sub, definition, matrix, k))
        measures[definition.value] = {
            k: StatPair(Stat.from_values(v["pre"]), Stat.from_values(v["post"]))
            for k, v in vals.items()
        }

    delta = Stat.from_values([delta_changed_tiers(u.sub, pre, matrix) for u in units])

    def improved(defn: str, key: str) -> bool | None:
        pair = measures[defn][key]
        if pair.pre.mean is None or pair.post.mean is None:
            return None
        return pair.post.mean > pair.pre.mean

    erb_up = any(improved("ERB", t) for t in TIERS)
    pp_down = any(improved("PP", t) is False for t in TIERS)
    cal_down = any(improved("CAL", s) is False for s in TIER_LABELS)
    flags = {
        "erb_improved": bool(erb_up),
        "pp_declined": bool(pp_down),
        "cal_declined": bool(cal_down),
        "impossibility_tradeoff": bool(erb_up and (pp_down or cal_down)),
    }
    return AuditReport(measures=measures, delta=delta, flags=flags, n_subsamples=len(units))


def audit_impossibility(
    dataset: Dataset, matrices: Sequence[ThresholdMatrix], cfg: CorrectionConfig
) -> list[tuple[str, str, str]]:
    """Check the balance-vs-parity identity on J subsamples at each matrix.

    Returns the violations as (seed_tag, tier, matrix index) triples; exact
    error-rate balance with differing prevalences must force predictive
    parity below one, so this list should always be empty.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    units = _draw_units(dataset, cfg.j_subsamples, rng, cfg, "imposs")
    violations = []
    for m, matrix in enumerate(matrices):
        for unit in units:
            for tier in TIERS:
                ok = check_impossibility(unit.sub, matrix.row_map(tier))
                if ok is False:
                    violations.append((unit.sub.seed_tag, tier, str(m)))
    return violations


def _align_groups(matrix: ThresholdMatrix, groups: Sequence[str]) -> ThresholdMatrix:
    if matrix.groups == tuple(groups):
        return matrix
    order = [matrix.groups.index(g) for g in groups]
    return ThresholdMatrix(tuple(groups), matrix.values[:, order], matrix.anchors)


# ---------------------------------------------------------------------------
# File emitters (stable bytes: sorted JSON keys, repr-formatted floats)

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_json(payload: Mapping, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_csv(rows: Iterable[Mapping], fieldnames: Sequence[str], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(name)) for name in fieldnames])


def evaluation_rows(evaluations: Mapping[float, EvaluationEntry]) -> list[dict]:
    """Flat rows: one per (w, tier, scope, measure, phase) with mean and sd."""
    rows = []
    for w in sorted(evaluations):
        entry = evaluations[w]
        for key in entry.fairness_keys():
            pair = entry.fairness[key]
            for phase, stat in (("pre", pair.pre), ("post", pair.post)):
                rows.append(
                    {
                        "w": w,
                        "tier": key,
                        "scope": "all",
                        "measure": entry.definition.value,
                        "phase": phase,
                        "mean": stat.mean,
                        "sd": stat.sd,
                        "n_undefined": stat.n_undefined,
                    }
                )
        for tier, per_scope in entry.performance.items():
            for scope, per_measure in per_scope.items():
                for measure, pair in per_measure.items():
                    for phase, stat in (("pre", pair.pre), ("post", pair.post)):
                        rows.append(
                            {
                                "w": w,
                                "tier": tier,
                                "scope": scope,
                                "measure": measure,
                                "phase": phase,
                                "mean": stat.mean,
                                "sd": stat.sd,
                                "n_undefined": stat.n_undefined,
                            }
                        )
        for key, stat in entry.delta.items():
            rows.append(
                {
                    "w": w,
                    "tier": key,
                    "scope": "all",
                    "measure": "delta",
                    "phase": "post",
                    "mean": stat.mean,
                    "sd": stat.sd,
                    "n_undefined": stat.n_undefined,
                }
            )
    return rows


EVALUATION_FIELDS = ("w", "tier", "scope", "measure", "phase", "mean", "sd", "n_undefined")
TRADEOFF_FIELDS = ("w", "tier", "fairness_pre_mean", "fairness_post_mean", "changed_mean")
THRESHOLD_FIELDS = ("w", "tier", "group", "pre", "post")
AUDIT_FIELDS = ("definition", "tier", "pre_mean", "pre_sd", "post_mean", "post_sd", "n_undefined")
