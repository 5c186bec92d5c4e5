"""Group-level fairness and performance measures at risk-tier thresholds.

Every group-level fairness definition is quantified the same way: compute
its constituent rate(s) per group, take the smaller-over-larger ratio for
every group pair, and report the minimum.  A value of 1 means the rates are
balanced; smaller values flag the most disparate pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .data import Subsample, UnknownGroupError
from .thresholds import TIER_LABELS, ThresholdMatrix, tier_indices

_EXCLUSIVE_TAGS = ("SP", "OAE", "PP", "EO", "PE", "ERB", "CUAE", "TE", "CAL")

_CONSTITUENTS: dict[str, tuple[str, ...]] = {
    "SP": ("ppr",),
    "OAE": ("acc",),
    "PP": ("ppv",),
    "EO": ("fnr",),
    "PE": ("fpr",),
    "ERB": ("fnr", "fpr"),
    "CUAE": ("ppv", "npv"),
    "TE": ("fp_fn_ratio",),
    "CAL": ("tier_adverse_rate",),
}


class FairnessDefinition(str, Enum):
    """The nine supported group-level definitions."""

    SP = "SP"       # statistical parity: predicted-positive rate
    OAE = "OAE"     # overall accuracy equality
    PP = "PP"       # predictive parity: PPV
    EO = "EO"       # equal opportunity: FNR
    PE = "PE"       # predictive equality: FPR
    ERB = "ERB"     # error rate balance: FNR and FPR
    CUAE = "CUAE"   # conditional use accuracy equality: PPV and NPV
    TE = "TE"       # treatment equality: FP-to-FN count ratio
    CAL = "CAL"     # calibration: observed adverse rate per tier

    @property
    def constituents(self) -> tuple[str, ...]:
        return _CONSTITUENTS[self.value]

    @property
    def tierwise(self) -> bool:
        """True when the measure attaches to thresholds rather than tiers."""
        return self is not FairnessDefinition.CAL


@dataclass(frozen=True)
class ConfusionCounts:
    """Counts with positive prediction meaning score at-or-above the cut."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _div(num: float, den: float) -> float | None:
    return num / den if den else None


@dataclass(frozen=True)
class PerformanceVector:
    """The nine threshold-level performance measures; None marks a zero
    denominator."""

    fnr: float | None
    tpr: float | None
    fpr: float | None
    tnr: float | None
    ppv: float | None
    fdr: float | None
    npv: float | None
    fom: float | None
    acc: float | None

    FIELDS = ("fnr", "tpr", "fpr", "tnr", "ppv", "fdr", "npv", "fom", "acc")

    @classmethod
    def from_counts(cls, c: ConfusionCounts) -> "PerformanceVector":
        pos = c.tp + c.fn
        neg = c.fp + c.tn
        pred_pos = c.tp + c.fp
        pred_neg = c.fn + c.tn
        return cls(
            fnr=_div(c.fn, pos),
            tpr=_div(c.tp, pos),
            fpr=_div(c.fp, neg),
            tnr=_div(c.tn, neg),
            ppv=_div(c.tp, pred_pos),
            fdr=_div(c.fp, pred_pos),
            npv=_div(c.tn, pred_neg),
            fom=_div(c.fn, pred_neg),
            acc=_div(c.tp + c.tn, c.n),
        )

    def as_dict(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in self.FIELDS}


def constituent_value(c: ConfusionCounts, name: str) -> float | None:
    """One constituent rate from counts; None when its denominator is zero."""
    if name == "ppr":
        return _div(c.tp + c.fp, c.n)
    if name == "acc":
        return _div(c.tp + c.tn, c.n)
    if name == "fnr":
        return _div(c.fn, c.tp + c.fn)
    if name == "fpr":
        return _div(c.fp, c.fp + c.tn)
    if name == "ppv":
        return _div(c.tp, c.tp + c.fp)
    if name == "npv":
        return _div(c.tn, c.tn + c.fn)
    if name == "fp_fn_ratio":
        return _div(c.fp, c.fn)
    raise ValueError(f"unknown constituent {name!r}")


def pairwise_ratio(a: float | None, b: float | None) -> float | None:
    """Smaller over larger of two non-negative rates.

    Equal zeros count as balanced (ratio 1); a lone zero gives 0; an
    undefined input propagates.
    """
    if a is None or b is None:
        return None
    if a < 0 or b < 0:
        raise ValueError(f"rates must be non-negative, got ({a}, {b})")
    hi = max(a, b)
    if hi == 0.0:
        return 1.0
    return min(a, b) / hi


@dataclass(frozen=True)
class FairnessMeasure:
    """Minimum pairwise ratio with its witness.

    ``worst_pair`` is (group_a, group_b, constituent) attaining the minimum.
    ``undefined_pairs`` lists comparisons that were dropped because a
    constituent had a zero denominator; the measure itself is None only when
    no comparison survived.
    """

    value: float | None
    worst_pair: tuple[str, str, str] | None = None
    undefined_pairs: tuple[tuple[str, str, str], ...] = ()

    @property
    def defined(self) -> bool:
        return self.value is not None


def fairness_measure_from_rates(
    rates_by_group: Mapping[str, Mapping[str, float | None]],
    constituents: Sequence[str],
    groups: Sequence[str] | None = None,
) -> FairnessMeasure:
    """Combine per-group constituent rates into the min-pairwise-ratio measure.

    ``groups`` fixes the pair ordering (defaults to mapping order).  With a
    single group there is nothing to compare and the measure is vacuously 1.
    """
    groups = list(groups if groups is not None else rates_by_group)
    if len(groups) < 2:
        return FairnessMeasure(1.0)
    best: float | None = None
    worst: tuple[str, str, str] | None = None
    dropped: list[tuple[str, str, str]] = []
    for name in constituents:
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                a = rates_by_group[groups[i]].get(name)
                b = rates_by_group[groups[j]].get(name)
                r = pairwise_ratio(a, b)
                if r is None:
                    dropped.append((groups[i], groups[j], name))
                elif best is None or r < best:
                    best = r
                    worst = (groups[i], groups[j], name)
    return FairnessMeasure(best, worst, tuple(dropped))


def _resolve_thresholds(sub: Subsample, thresholds: float | Mapping[str, float]) -> np.ndarray:
    """Per-group threshold array in vocabulary order."""
    if isinstance(thresholds, Mapping):
        try:
            return np.array([thresholds[g] for g in sub.groups], dtype=float)
        except KeyError as exc:
            raise UnknownGroupError(exc.args[0]) from exc
    return np.full(len(sub.groups), float(thresholds))


def confusion(sub: Subsample, group: str, threshold: float) -> ConfusionCounts:
    """Confusion counts for one group at one cut (score >= cut is positive)."""
    code = sub.dataset.group_code(group)
    mask = sub.group_codes == code
    pred = sub.scores[mask] >= threshold
    truth = sub.outcomes[mask]
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def group_rates(
    sub: Subsample, constituents: Sequence[str], thresholds: float | Mapping[str, float]
) -> dict[str, dict[str, float | None]]:
    """Constituent rates per group at each group's threshold."""
    theta = _resolve_thresholds(sub, thresholds)
    out: dict[str, dict[str, float | None]] = {}
    for k, g in enumerate(sub.groups):
        counts = confusion(sub, g, float(theta[k]))
        out[g] = {name: constituent_value(counts, name) for name in constituents}
    return out


def fairness_measure(
    sub: Subsample,
    definition: FairnessDefinition,
    thresholds: float | Mapping[str, float],
) -> FairnessMeasure:
    """Quantify one threshold-level definition on a subsample.

    Calibration attaches to tiers, not thresholds; use
    :func:`calibration_measure` for it.
    """
    definition = FairnessDefinition(definition)
    if definition is FairnessDefinition.CAL:
        raise ValueError("CAL is tier-based; use calibration_measure")
    rates = group_rates(sub, definition.constituents, thresholds)
    return fairness_measure_from_rates(rates, definition.constituents, sub.groups)


def calibration_measure(
    sub: Subsample, matrix: ThresholdMatrix, tier_label: str
) -> FairnessMeasure:
    """Balance of observed adverse rates among units assigned one tier."""
    if tier_label not in TIER_LABELS:
        raise ValueError(f"unknown tier label {tier_label!r}")
    if matrix.groups != sub.groups:
        raise UnknownGroupError(
            f"matrix groups {matrix.groups} do not match subsample groups {sub.groups}"
        )
    want = TIER_LABELS.index(tier_label)
    tiers = tier_indices(sub.scores, sub.group_codes, matrix)
    rates: dict[str, dict[str, float | None]] = {}
    for k, g in enumerate(sub.groups):
        mask = (sub.group_codes == k) & (tiers == want)
        n_bin = int(mask.sum())
        rate = float(sub.outcomes[mask].mean()) if n_bin else None
        rates[g] = {"tier_adverse_rate": rate}
    return fairness_measure_from_rates(rates, ("tier_adverse_rate",), sub.groups)


def performance(
    sub: Subsample,
    thresholds: float | Mapping[str, float],
    group: str | None = None,
) -> PerformanceVector:
    """The nine performance measures for one group or pooled over all.

    With per-group thresholds and pooled scope, each unit is classified by
    its own group's cut before pooling.
    """
    theta = _resolve_thresholds(sub, thresholds)
    pred = sub.scores >= theta[sub.group_codes]
    truth = sub.outcomes
    if group is not None:
        mask = sub.group_codes == sub.dataset.group_code(group)
        pred, truth = pred[mask], truth[mask]
    counts = ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )
    return PerformanceVector.from_counts(counts)


def delta_changed(
    sub: Subsample, phi: float, thetas: float | Mapping[str, float]
) -> float:
    """Fraction of units whose side of the cut flips between phi and their
    group's theta."""
    theta = _resolve_thresholds(sub, thetas)
    per_unit = theta[sub.group_codes]
    flips = (sub.scores >= phi) != (sub.scores >= per_unit)
    return float(flips.mean())


def delta_changed_tiers(
    sub: Subsample, pre: ThresholdMatrix, post: ThresholdMatrix
) -> float:
    """Fraction of units whose four-way tier assignment changes pre to post."""
    before = tier_indices(sub.scores, sub.group_codes, pre)
    after = tier_indices(sub.scores, sub.group_codes, post)
    return float(np.mean(before != after))


def check_impossibility(
    sub: Subsample, thresholds: float | Mapping[str, float]
) -> bool | None:
    """Verify that exact error-rate balance forces unequal predictive parity.

    Returns None when the premise does not apply here (prevalences equal, or
    the worst pair's rates are not strictly interior, or balance is not
    exact); True when the implication holds; False on a violation.
    """
    erb = fairness_measure(sub, FairnessDefinition.ERB, thresholds)
    if erb.value is None or erb.value != 1.0:
        return None
    rates = group_rates(sub, ("fnr", "fpr"), thresholds)
    prevalences = {}
    for k, g in enumerate(sub.groups):
        mask = sub.group_codes == k
        prevalences[g] = float(sub.outcomes[mask].mean())
    interior = [
        g
        for g in sub.groups
        if rates[g]["fnr"] is not None
        and rates[g]["fpr"] is not None
        and 0.0 < rates[g]["fnr"] < 1.0
        and 0.0 < rates[g]["fpr"] < 1.0
    ]
    if len({round(prevalences[g], 12) for g in interior}) < 2:
        return None
    pp = fairness_measure(sub, FairnessDefinition.PP, thresholds)
    if pp.value is None:
        return None
    return pp.value < 1.0


# ---------------------------------------------------------------------------
# Vectorized engine
#
# The search loops evaluate the same rates at thousands of candidate cuts.
# Sorting each group's scores once turns every evaluation into searchsorted
# plus prefix-sum lookups; NaN stands in for an undefined rate.

class GroupedScores:
    """Per-group sorted score/outcome tables for threshold-sweep evaluation."""

    def __init__(self, sub: Subsample):
        self.sub = sub
        self.groups = sub.groups
        self.n_total = sub.n
        self.scores: list[np.ndarray] = []
        self.pos_prefix: list[np.ndarray] = []  # positives among the first i sorted scores
        self.n_pos: list[int] = []
        self.n: list[int] = []
        for k in range(len(sub.groups)):
            mask = sub.group_codes == k
            s = sub.scores[mask]
            o = sub.outcomes[mask]
            order = np.argsort(s, kind="stable")
            s = s[order]
            o = o[order]
            self.scores.append(s)
            self.pos_prefix.append(np.concatenate(([0], np.cumsum(o))))
            self.n_pos.append(int(o.sum()))
            self.n.append(len(s))

    def counts_at(self, k: int, thetas: np.ndarray) -> dict[str, np.ndarray]:
        """tp/fp/fn/tn arrays for group ``k`` at each candidate cut."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        idx = np.searchsorted(self.scores[k], thetas, side="left")
        pos_below = self.pos_prefix[k][idx]
        tp = self.n_pos[k] - pos_below
        pred_pos = self.n[k] - idx
        fp = pred_pos - tp
        fn = self.n_pos[k] - tp
        tn = (self.n[k] - self.n_pos[k]) - fp
        return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}

    def constituent_at(self, k: int, name: str, thetas: np.ndarray) -> np.ndarray:
        """Constituent rate array for group ``k``; NaN where undefined."""
        c = self.counts_at(k, thetas)
        tp, fp, fn, tn = c["tp"], c["fp"], c["fn"], c["tn"]
        n = self.n[k]
        if name == "ppr":
            return _nan_div(tp + fp, np.full_like(tp, n))
        if name == "acc":
            return _nan_div(tp + tn, np.full_like(tp, n))
        if name == "fnr":
            return _nan_div(fn, tp + fn)
        if name == "fpr":
            return _nan_div(fp, fp + tn)
        if name == "ppv":
            return _nan_div(tp, tp + fp)
        if name == "npv":
            return _nan_div(tn, tn + fn)
        if name == "fp_fn_ratio":
            return _nan_div(fp, fn)
        raise ValueError(f"unknown constituent {name!r}")

    def flip_counts(self, k: int, phi: float, thetas: np.ndarray) -> np.ndarray:
        """How many of group ``k``'s units switch sides between phi and theta."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        idx = np.searchsorted(self.scores[k], thetas, side="left")
        idx_phi = np.searchsorted(self.scores[k], phi, side="left")
        return np.abs(idx - idx_phi)

    def bin_rates(self, k: int, cuts: np.ndarray) -> np.ndarray:
        """Adverse rate per tier bin for group ``k`` under three sorted cuts;
        NaN for empty bins."""
        edges = np.searchsorted(self.scores[k], cuts, side="left")
        bounds = np.concatenate(([0], edges, [self.n[k]]))
        counts = np.diff(bounds).astype(float)
        pos = np.diff(self.pos_prefix[k][bounds]).astype(float)
        return _nan_div(pos, counts)


def _nan_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def ratio_arrays(a: np.ndarray, b: np.ndarray | float) -> np.ndarray:
    """Vectorized :func:`pairwise_ratio`: NaN inputs propagate, 0/0 gives 1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = lo / hi
    return np.where((hi == 0) & ~np.isnan(lo), 1.0, r)
