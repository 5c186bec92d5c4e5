"""Penalized threshold search on a subsample.

The objective trades fairness against anchoring: (1-w) times the fairness
shortfall plus w times the fraction of units whose tier would change by
leaving the group-agnostic anchor.  Both pieces are piecewise constant in
each group's threshold between adjacent observed scores, so the search runs
exact coordinate descent over midpoint candidate grids: every coordinate
visit scans its full candidate set, accepts only strict improvements, and
stops when a whole pass leaves the vector unchanged.  Because the
min-of-ratios surface can trap single-coordinate moves, converged points are
rescued by joint scans over two groups' grids (skipped when the product grid
exceeds a fixed budget; see _PAIR_SCAN_BUDGET).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import ConfigError, Subsample
from .metrics import (
    FairnessDefinition,
    GroupedScores,
    delta_changed,
    fairness_measure,
    ratio_arrays,
)
from .thresholds import TIERS, AgnosticTiers, ThresholdMatrix

_IMPROVE_TOL = 1e-12

# Joint two-group rescue scans run only when the product grid is at most this
# many cells; single-coordinate moves handle the rest.
_PAIR_SCAN_BUDGET = 250_000


class DegenerateScoresError(ValueError):
    """The score distribution cannot support three ordered tier anchors."""


class InfeasibleTierError(ValueError):
    """A tier's constraint box is empty for some group."""

    def __init__(self, tier: str, group: str, detail: str = ""):
        msg = f"tier {tier}: no feasible threshold for group {group!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.tier = tier
        self.group = group


@dataclass(frozen=True)
class ObjectiveValue:
    """Decomposed objective; None when the fairness measure is undefined."""

    total: float | None
    fairness_term: float | None
    penalty_term: float


def _nearest_rank(sorted_vals: np.ndarray, p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th smallest value."""
    k = max(1, math.ceil(p * len(sorted_vals)))
    return float(sorted_vals[k - 1])


def agnostic_tiers(sub: Subsample) -> AgnosticTiers:
    """Tier anchors from the score distribution alone.

    The average-risk cut is the mean score; the low cut is the median of
    scores strictly below it; the high cut is the 75th percentile of scores
    strictly above it (nearest-rank percentiles throughout).
    """
    s = sub.scores
    if s.size == 0:
        raise DegenerateScoresError("empty subsample")
    mean = float(s.mean())
    below = np.sort(s[s < mean])
    above = np.sort(s[s > mean])
    if below.size == 0 or above.size == 0:
        raise DegenerateScoresError("scores do not spread on both sides of their mean")
    try:
        return AgnosticTiers(_nearest_rank(below, 0.5), mean, _nearest_rank(above, 0.75))
    except ValueError as exc:
        raise DegenerateScoresError(str(exc)) from exc


def _clamped_anchor(lo: float, hi: float, anchor: float, eps: float) -> float:
    c = min(max(anchor, lo + eps), hi - eps)
    if not lo < c < hi:
        c = 0.5 * (lo + hi)
    return c


def _cuts_from_scores(
    scores: np.ndarray, lo: float, hi: float, anchor: float, eps: float
) -> np.ndarray:
    """Candidate cuts inside (lo, hi): one representative per stretch of the
    interval between adjacent distinct scores, so consecutive candidates give
    different confusion counts.  Each stretch is represented by the point
    nearest the anchor: the anchor itself for its own stretch, the boundary
    offsets lo+eps and hi-eps at the ends, midpoints elsewhere."""
    if not lo < hi:
        raise ValueError(f"empty interval ({lo}, {hi})")
    inside = np.unique(scores[(scores > lo) & (scores < hi)])
    if inside.size == 0:
        return np.array([_clamped_anchor(lo, hi, anchor, eps)])
    pts = [lo + eps]
    if inside.size > 1:
        pts.extend(0.5 * (inside[:-1] + inside[1:]))
    pts.append(hi - eps)
    if lo < anchor < hi:
        pts.append(anchor)
    pts = np.asarray(pts, dtype=float)
    pts = pts[(pts > lo) & (pts < hi)]
    if pts.size == 0:
        return np.array([_clamped_anchor(lo, hi, anchor, eps)])
    cells = np.searchsorted(inside, pts, side="left")
    order = np.lexsort((pts, np.abs(pts - anchor), cells))
    first = np.ones(len(order), dtype=bool)
    first[1:] = cells[order][1:] != cells[order][:-1]
    return np.sort(pts[order][first])


def candidate_cuts(
    sub: Subsample,
    group: str,
    interval: tuple[float, float],
    anchor: float,
    eps: float = 1e-9,
) -> np.ndarray:
    """Candidate thresholds for one group inside an open interval."""
    lo, hi = interval
    code = sub.dataset.group_code(group)
    return _cuts_from_scores(sub.scores[sub.group_codes == code], lo, hi, anchor, eps)


def objective(
    sub: Subsample,
    definition: FairnessDefinition,
    w: float,
    thetas: float | Mapping[str, float],
    phi: float,
) -> ObjectiveValue:
    """Evaluate the penalized objective at one threshold vector."""
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"penalty weight must lie in [0, 1], got {w}")
    measure = fairness_measure(sub, definition, thetas)
    penalty = w * delta_changed(sub, phi, thetas)
    if measure.value is None:
        return ObjectiveValue(None, None, penalty)
    fairness_term = (1.0 - w) * (1.0 - measure.value)
    return ObjectiveValue(fairness_term + penalty, fairness_term, penalty)


# ---------------------------------------------------------------------------
# Coordinate descent internals

def _scalar_ratio(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    hi = max(a, b)
    if hi == 0.0:
        return 1.0
    return min(a, b) / hi


def _pairs_min(
    table: Mapping[str, np.ndarray], n_groups: int, exclude: tuple[int, ...] = ()
) -> float:
    """Min pairwise ratio over group pairs not touching ``exclude``; NaN when
    no defined pair remains."""
    best = math.nan
    for vals in table.values():
        for i in range(n_groups):
            if i in exclude:
                continue
            for j in range(i + 1, n_groups):
                if j in exclude:
                    continue
                r = _scalar_ratio(float(vals[i]), float(vals[j]))
                if not math.isnan(r) and not (r >= best):  # NaN-safe min
                    best = r
    return best


def _coverage_mask(cands: np.ndarray, others: np.ndarray, phi: float) -> np.ndarray:
    """Which candidates keep the anchor inside [min, max] of the tier row."""
    if others.size == 0:
        return cands == phi
    omin, omax = float(others.min()), float(others.max())
    if omin <= phi <= omax:
        return np.ones(len(cands), dtype=bool)
    if omin > phi:
        return cands <= phi
    return cands >= phi


def _pick_index(cands: np.ndarray, objs: np.ndarray, best: float, phi: float) -> int:
    """Among candidates tied at the best objective, pick nearest the anchor,
    then the smaller value."""
    tie_idx = np.flatnonzero(objs == best)
    ties = cands[tie_idx]
    order = np.lexsort((ties, np.abs(ties - phi)))
    return int(tie_idx[order[0]])


def optimize_tier(
    sub: Subsample,
    definition: FairnessDefinition,
    w: float,
    tier: str,
    anchors: AgnosticTiers,
    lower_bounds: Mapping[str, float] | Sequence[float] | None = None,
    eps: float = 1e-9,
    engine: GroupedScores | None = None,
) -> np.ndarray:
    """Group-specific thresholds for one tier, given the previous tier's result.

    Tiers are meant to run in order L, A, H: the A and H boxes sit strictly
    above the previous tier's thresholds (``lower_bounds``), which keeps each
    group's cuts ordered.  Every returned vector covers the anchor.
    """
    definition = FairnessDefinition(definition)
    if definition is FairnessDefinition.CAL:
        raise ValueError("CAL optimizes all tiers at once; use optimize_calibration")
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"penalty weight must lie in [0, 1], got {w}")
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    engine = engine or GroupedScores(sub)
    groups = sub.groups
    n_groups = len(groups)

    if lower_bounds is None:
        prev = None
    elif isinstance(lower_bounds, Mapping):
        prev = np.array([lower_bounds[g] for g in groups], dtype=float)
    else:
        prev = np.asarray(lower_bounds, dtype=float)

    if tier == "L":
        lo = np.zeros(n_groups)
        hi = np.full(n_groups, anchors.average)
        phi = anchors.low
    elif tier == "A":
        if prev is None:
            raise ValueError("tier A needs the low-tier thresholds as lower bounds")
        lo = prev
        hi = np.full(n_groups, anchors.high)
        phi = anchors.average
    else:
        if prev is None:
            raise ValueError("tier H needs the average-tier thresholds as lower bounds")
        lo = prev
        hi = np.ones(n_groups)
        phi = anchors.high

    for g in range(n_groups):
        if not lo[g] < hi[g]:
            raise InfeasibleTierError(tier, groups[g], f"bounds ({lo[g]}, {hi[g]})")

    theta = np.array([_clamped_anchor(lo[g], hi[g], phi, eps) for g in range(n_groups)])
    if not theta.min() <= phi <= theta.max():
        worst = int(np.argmax(np.abs(theta - phi)))
        raise InfeasibleTierError(tier, groups[worst], "anchor not coverable")

    constituents = definition.constituents
    cands = [
        _cuts_from_scores(engine.scores[g], lo[g], hi[g], phi, eps) for g in range(n_groups)
    ]
    table = {
        name: np.array(
            [engine.constituent_at(g, name, theta[g])[0] for g in range(n_groups)]
        )
        for name in constituents
    }
    flips = np.array(
        [engine.flip_counts(g, phi, theta[g])[0] for g in range(n_groups)], dtype=float
    )
    current = _tier_objective(table, flips, n_groups, engine.n_total, w)

    while True:
        # Phase 1: cyclic single-coordinate sweeps until a full pass stalls.
        while True:
            improved = False
            for g in range(n_groups):
                cand = cands[g]
                feasible = _coverage_mask(cand, np.delete(theta, g), phi)
                if not feasible.any():
                    continue
                moving = {name: engine.constituent_at(g, name, cand) for name in constituents}
                stacks = [
                    ratio_arrays(moving[name], float(table[name][h]))
                    for name in constituents
                    for h in range(n_groups)
                    if h != g
                ]
                if stacks:
                    with np.errstate(invalid="ignore"):
                        measure = np.fmin.reduce(stacks)
                    measure = np.fmin(measure, _pairs_min(table, n_groups, exclude=(g,)))
                else:
                    measure = np.ones(len(cand))  # single group: balance is vacuous
                other_flips = flips.sum() - flips[g]
                moving_flips = engine.flip_counts(g, phi, cand)
                delta = (other_flips + moving_flips) / engine.n_total
                with np.errstate(invalid="ignore"):
                    objs = (1.0 - w) * (1.0 - measure) + w * delta
                objs = np.where(np.isnan(objs), np.inf, objs)
                objs[~feasible] = np.inf
                best = float(objs.min())
                if best < current - _IMPROVE_TOL:
                    i = _pick_index(cand, objs, best, phi)
                    theta[g] = float(cand[i])
                    for name in constituents:
                        table[name][g] = moving[name][i]
                    flips[g] = moving_flips[i]
                    current = best
                    improved = True
            if not improved:
                break
        # Phase 2: the min-of-ratios surface can pin single-coordinate moves
        # at a joint minimum; rescue with a two-group product scan.
        moved, current = _tier_pair_escape(
            engine, theta, table, flips, cands, constituents, phi, w, current
        )
        if not moved:
            break
    return theta


def _coverage_mask_2d(
    cg: np.ndarray, ch: np.ndarray, others: np.ndarray, phi: float
) -> np.ndarray:
    mask = np.ones((len(cg), len(ch)), dtype=bool)
    if not (others.size and float(others.min()) <= phi):
        mask &= (cg[:, None] <= phi) | (ch[None, :] <= phi)
    if not (others.size and float(others.max()) >= phi):
        mask &= (cg[:, None] >= phi) | (ch[None, :] >= phi)
    return mask


def _tier_pair_escape(
    engine: GroupedScores,
    theta: np.ndarray,
    table: dict[str, np.ndarray],
    flips: np.ndarray,
    cands: Sequence[np.ndarray],
    constituents: Sequence[str],
    phi: float,
    w: float,
    current: float,
) -> tuple[bool, float]:
    """Scan two groups' candidate grids jointly; apply the first improving
    move found.  Returns (moved, objective)."""
    n_groups = len(theta)
    for g in range(n_groups):
        for h in range(g + 1, n_groups):
            cg, ch = cands[g], cands[h]
            if len(cg) * len(ch) > _PAIR_SCAN_BUDGET:
                continue
            vg = {name: engine.constituent_at(g, name, cg) for name in constituents}
            vh = {name: engine.constituent_at(h, name, ch) for name in constituents}
            measure = None
            with np.errstate(invalid="ignore"):
                for name in constituents:
                    parts = [ratio_arrays(vg[name][:, None], vh[name][None, :])]
                    for o in range(n_groups):
                        if o in (g, h):
                            continue
                        parts.append(ratio_arrays(vg[name], float(table[name][o]))[:, None])
                        parts.append(ratio_arrays(vh[name], float(table[name][o]))[None, :])
                    for part in parts:
                        measure = part if measure is None else np.fmin(measure, part)
            measure = np.fmin(measure, _pairs_min(table, n_groups, exclude=(g, h)))
            fg = engine.flip_counts(g, phi, cg)
            fh = engine.flip_counts(h, phi, ch)
            other_flips = flips.sum() - flips[g] - flips[h]
            delta = (other_flips + fg[:, None] + fh[None, :]) / engine.n_total
            with np.errstate(invalid="ignore"):
                objs = (1.0 - w) * (1.0 - measure) + w * delta
            objs = np.where(np.isnan(objs), np.inf, objs)
            objs[~_coverage_mask_2d(cg, ch, np.delete(theta, [g, h]), phi)] = np.inf
            best = float(objs.min())
            if best < current - _IMPROVE_TOL:
                ii, jj = np.nonzero(objs == best)
                dist = np.abs(cg[ii] - phi) + np.abs(ch[jj] - phi)
                k = np.lexsort((ch[jj], cg[ii], dist))[0]
                theta[g] = float(cg[ii[k]])
                theta[h] = float(ch[jj[k]])
                for name in constituents:
                    table[name][g] = vg[name][ii[k]]
                    table[name][h] = vh[name][jj[k]]
                flips[g] = fg[ii[k]]
                flips[h] = fh[jj[k]]
                return True, best
    return False, current


def _tier_objective(
    table: Mapping[str, np.ndarray], flips: np.ndarray, n_groups: int, n_total: int, w: float
) -> float:
    measure = 1.0 if n_groups < 2 else _pairs_min(table, n_groups)
    delta = flips.sum() / n_total
    if math.isnan(measure):
        return math.inf
    return (1.0 - w) * (1.0 - measure) + w * delta


def optimize_thresholds(
    sub: Subsample,
    definition: FairnessDefinition,
    w: float,
    anchors: AgnosticTiers | None = None,
    eps: float = 1e-9,
    engine: GroupedScores | None = None,
) -> ThresholdMatrix:
    """Run the full per-subsample correction: anchors, then L, A, H in order
    (or the simultaneous calibration problem)."""
    definition = FairnessDefinition(definition)
    anchors = anchors or agnostic_tiers(sub)
    if definition is FairnessDefinition.CAL:
        return optimize_calibration(sub, w, anchors, eps=eps, engine=engine)
    engine = engine or GroupedScores(sub)
    low = optimize_tier(sub, definition, w, "L", anchors, eps=eps, engine=engine)
    avg = optimize_tier(sub, definition, w, "A", anchors, lower_bounds=low, eps=eps, engine=engine)
    high = optimize_tier(sub, definition, w, "H", anchors, lower_bounds=avg, eps=eps, engine=engine)
    return ThresholdMatrix(sub.groups, np.vstack([low, avg, high]), anchors)


# ---------------------------------------------------------------------------
# Simultaneous calibration problem

def optimize_calibration(
    sub: Subsample,
    w: float,
    anchors: AgnosticTiers,
    eps: float = 1e-9,
    engine: GroupedScores | None = None,
    exact_budget: int = 60_000,
) -> ThresholdMatrix:
    """All 3K thresholds at once, minimizing the summed per-tier calibration
    shortfall plus the penalty on four-way tier changes.

    Small problems (joint grid within ``exact_budget`` combinations) are
    solved by exact enumeration over the cell-representative grid.  Larger
    ones use coordinate descent cycling tier-major (all groups at L, then A,
    then H); each coordinate's box is pinched between the group's
    neighboring tier values, which maintains within-group ordering
    throughout, with same-tier two-group rescue scans at convergence.
    """
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"penalty weight must lie in [0, 1], got {w}")
    engine = engine or GroupedScores(sub)
    groups = sub.groups
    n_groups = len(groups)
    phis = anchors.as_array()

    exact = _cal_exact(engine, anchors, w, eps, exact_budget)
    if exact is not None:
        return ThresholdMatrix(groups, exact, anchors)

    vals = np.tile(phis[:, None], (1, n_groups))
    anchor_tiers = []
    for g in range(n_groups):
        s = engine.scores[g]
        anchor_tiers.append(
            (s >= phis[0]).astype(np.int8)
            + (s >= phis[1]).astype(np.int8)
            + (s >= phis[2]).astype(np.int8)
        )

    rate_table = np.stack(
        [engine.bin_rates(g, vals[:, g]) for g in range(n_groups)], axis=1
    )  # (4 bins, K groups)
    mismatches = np.zeros(n_groups)
    current = _cal_objective(rate_table, mismatches, engine.n_total, w)
    state = _CalState(engine, anchor_tiers, vals, rate_table, mismatches, phis, eps, w)

    while True:
        # Phase 1: cycle the 3K coordinates, tier-major.
        while True:
            improved = False
            for t in range(3):
                phi = float(phis[t])
                for g in range(n_groups):
                    cand = state.candidates(t, g)
                    feasible = _coverage_mask(cand, np.delete(vals[t], g), phi)
                    if not feasible.any():
                        continue
                    below, above, moved = state.moving_parts(t, g, cand)
                    shortfall = np.zeros(len(cand))
                    for b in range(4):
                        if b == t:
                            cal = state.bin_balance_vs(b, g, below)
                        elif b == t + 1:
                            cal = state.bin_balance_vs(b, g, above)
                        else:
                            # NaN here poisons every candidate, as intended.
                            cal = _bin_balance(rate_table[b])
                        shortfall = shortfall + (1.0 - cal)
                    other_mism = mismatches.sum() - mismatches[g]
                    delta = (other_mism + moved) / engine.n_total
                    with np.errstate(invalid="ignore"):
                        objs = w * delta + (1.0 - w) * shortfall
                    objs = np.where(np.isnan(objs), np.inf, objs)
                    objs[~feasible] = np.inf
                    best = float(objs.min())
                    if best < current - _IMPROVE_TOL:
                        i = _pick_index(cand, objs, best, phi)
                        state.apply(t, g, float(cand[i]), float(moved[i]))
                        current = best
                        improved = True
            if not improved:
                break
        # Phase 2: same-tier two-group rescue scans.
        moved_pair, current = _cal_pair_escape(state, current)
        if not moved_pair:
            break
    return ThresholdMatrix(groups, vals, anchors)


class _CalState:
    """Mutable search state for the simultaneous calibration problem."""

    def __init__(self, engine, anchor_tiers, vals, rate_table, mismatches, phis, eps, w):
        self.engine = engine
        self.anchor_tiers = anchor_tiers
        self.vals = vals
        self.rate_table = rate_table
        self.mismatches = mismatches
        self.phis = phis
        self.eps = eps
        self.w = w
        self.n_groups = vals.shape[1]

    def candidates(self, t: int, g: int) -> np.ndarray:
        lo = float(self.vals[t - 1, g]) if t > 0 else 0.0
        hi = float(self.vals[t + 1, g]) if t < 2 else 1.0
        return _cuts_from_scores(
            self.engine.scores[g], lo, hi, float(self.phis[t]), self.eps
        )

    def moving_parts(self, t: int, g: int, cand: np.ndarray):
        """Rates of the two bins adjacent to cut t and the anchor-tier
        mismatch count of group ``g``, per candidate."""
        s = self.engine.scores[g]
        prefix = self.engine.pos_prefix[g]
        idx = np.searchsorted(s, cand, side="left")
        idx_prev = (
            np.searchsorted(s, float(self.vals[t - 1, g]), side="left") if t > 0 else 0
        )
        idx_next = (
            np.searchsorted(s, float(self.vals[t + 1, g]), side="left") if t < 2 else len(s)
        )
        below = _bin_rate(prefix, idx_prev, idx)
        above = _bin_rate(prefix, idx, idx_next)

        fixed2 = np.zeros(len(s), dtype=np.int8)
        for other in range(3):
            if other != t:
                fixed2 += (s >= self.vals[other, g]).astype(np.int8)
        m0 = fixed2 != self.anchor_tiers[g]
        m1 = (fixed2 + 1) != self.anchor_tiers[g]
        prefix_m0 = np.concatenate(([0], np.cumsum(m0)))
        prefix_m1 = np.concatenate(([0], np.cumsum(m1)))
        moved = prefix_m0[idx] + (prefix_m1[-1] - prefix_m1[idx])
        return below, above, moved

    def bin_balance_vs(self, b: int, g: int, moving: np.ndarray) -> np.ndarray:
        """Bin ``b`` balance with group ``g``'s rate varying over candidates."""
        stacks = [
            ratio_arrays(moving, float(self.rate_table[b, h]))
            for h in range(self.n_groups)
            if h != g
        ]
        if not stacks:
            return np.ones(len(moving))
        with np.errstate(invalid="ignore"):
            cal = np.fmin.reduce(stacks)
        return np.fmin(cal, _bin_balance(self.rate_table[b], exclude=(g,)))

    def apply(self, t: int, g: int, value: float, moved: float) -> None:
        self.vals[t, g] = value
        self.rate_table[:, g] = self.engine.bin_rates(g, self.vals[:, g])
        self.mismatches[g] = moved


def _cal_pair_escape(state: _CalState, current: float) -> tuple[bool, float]:
    """Joint scan of two groups' candidates at one tier cut."""
    w = state.w
    for t in range(3):
        phi = float(state.phis[t])
        for g in range(state.n_groups):
            for h in range(g + 1, state.n_groups):
                cg = state.candidates(t, g)
                ch = state.candidates(t, h)
                if len(cg) * len(ch) > _PAIR_SCAN_BUDGET:
                    continue
                below_g, above_g, moved_g = state.moving_parts(t, g, cg)
                below_h, above_h, moved_h = state.moving_parts(t, h, ch)
                shortfall = np.zeros((len(cg), len(ch)))
                for b in range(4):
                    if b == t:
                        mg, mh = below_g, below_h
                    elif b == t + 1:
                        mg, mh = above_g, above_h
                    else:
                        shortfall = shortfall + (1.0 - _bin_balance(state.rate_table[b]))
                        continue
                    with np.errstate(invalid="ignore"):
                        cal = ratio_arrays(mg[:, None], mh[None, :])
                        for o in range(state.n_groups):
                            if o in (g, h):
                                continue
                            fixed = float(state.rate_table[b, o])
                            cal = np.fmin(cal, ratio_arrays(mg, fixed)[:, None])
                            cal = np.fmin(cal, ratio_arrays(mh, fixed)[None, :])
                    cal = np.fmin(cal, _bin_balance(state.rate_table[b], exclude=(g, h)))
                    shortfall = shortfall + (1.0 - cal)
                other_mism = state.mismatches.sum() - state.mismatches[g] - state.mismatches[h]
                delta = (other_mism + moved_g[:, None] + moved_h[None, :]) / state.engine.n_total
                with np.errstate(invalid="ignore"):
                    objs = w * delta + (1.0 - w) * shortfall
                objs = np.where(np.isnan(objs), np.inf, objs)
                others = np.delete(state.vals[t], [g, h])
                objs[~_coverage_mask_2d(cg, ch, others, phi)] = np.inf
                best = float(objs.min())
                if best < current - _IMPROVE_TOL:
                    ii, jj = np.nonzero(objs == best)
                    dist = np.abs(cg[ii] - phi) + np.abs(ch[jj] - phi)
                    k = np.lexsort((ch[jj], cg[ii], dist))[0]
                    state.apply(t, g, float(cg[ii[k]]), float(moved_g[ii[k]]))
                    state.apply(t, h, float(ch[jj[k]]), float(moved_h[jj[k]]))
                    return True, best
    return False, current


def _cal_grid(engine: GroupedScores, g: int, anchors: AgnosticTiers, eps: float) -> np.ndarray:
    """All candidate values one of group ``g``'s three cuts may take: one
    representative per score cell over (0, 1) plus every anchor."""
    base = _cuts_from_scores(engine.scores[g], 0.0, 1.0, anchors.average, eps)
    extra = [v for v in (anchors.low, anchors.high) if 0.0 < v < 1.0]
    return np.unique(np.concatenate([base, extra]))


def _cal_exact(
    engine: GroupedScores, anchors: AgnosticTiers, w: float, eps: float, budget: int
) -> np.ndarray | None:
    """Exhaustive minimum over ordered per-group triples; None when the joint
    grid exceeds the budget or no feasible defined combination exists."""
    n_groups = len(engine.scores)
    grids = [_cal_grid(engine, g, anchors, eps) for g in range(n_groups)]
    total = 1
    for grid in grids:
        total *= math.comb(len(grid), 3)
        if total > budget:
            return None

    phis = anchors.as_array()
    anchor_tiers = []
    for g in range(n_groups):
        s = engine.scores[g]
        anchor_tiers.append(
            (s >= phis[0]).astype(np.int8)
            + (s >= phis[1]).astype(np.int8)
            + (s >= phis[2]).astype(np.int8)
        )

    triples = [list(itertools.combinations(grid, 3)) for grid in grids]
    best_val = math.inf
    best_key = None
    best_vals = None
    for combo in itertools.product(*triples):
        vals = np.array(combo, dtype=float).T  # (3, K)
        if any(
            not vals[t].min() <= phis[t] <= vals[t].max() for t in range(3)
        ):
            continue
        shortfall = 0.0
        undefined = False
        rate_cols = [engine.bin_rates(g, vals[:, g]) for g in range(n_groups)]
        table = np.stack(rate_cols, axis=1)
        for b in range(4):
            bal = _bin_balance(table[b])
            if math.isnan(bal):
                undefined = True
                break
            shortfall += 1.0 - bal
        if undefined:
            continue
        mism = 0
        for g in range(n_groups):
            s = engine.scores[g]
            tiers = (
                (s >= vals[0, g]).astype(np.int8)
                + (s >= vals[1, g]).astype(np.int8)
                + (s >= vals[2, g]).astype(np.int8)
            )
            mism += int(np.sum(tiers != anchor_tiers[g]))
        val = w * (mism / engine.n_total) + (1.0 - w) * shortfall
        key = (float(np.abs(vals - phis[:, None]).sum()), tuple(vals.ravel()))
        if val < best_val - _IMPROVE_TOL or (
            abs(val - best_val) <= _IMPROVE_TOL and best_key is not None and key < best_key
        ):
            best_val = val
            best_key = key
            best_vals = vals
    return best_vals


def _bin_rate(prefix: np.ndarray, lo_idx, hi_idx) -> np.ndarray:
    count = np.asarray(hi_idx, dtype=float) - np.asarray(lo_idx, dtype=float)
    pos = prefix[hi_idx] - prefix[lo_idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = pos / count
    return np.where(count > 0, rate, np.nan)


def _bin_balance(rates: np.ndarray, exclude: tuple[int, ...] = ()) -> float:
    """Min pairwise ratio of one bin's per-group adverse rates.

    NaN when no defined pair remains; vacuously 1 only for the whole-measure
    single-group case (a partial table with too few groups must stay NaN so
    it drops out of fmin combinations)."""
    alive = [i for i in range(len(rates)) if i not in exclude]
    if len(alive) < 2:
        return 1.0 if not exclude else math.nan
    best = math.nan
    for ai in range(len(alive)):
        for aj in range(ai + 1, len(alive)):
            r = _scalar_ratio(float(rates[alive[ai]]), float(rates[alive[aj]]))
            if not math.isnan(r) and not (r >= best):
                best = r
    return best


def _cal_objective(
    rate_table: np.ndarray, mismatches: np.ndarray, n_total: int, w: float
) -> float:
    shortfall = 0.0
    for b in range(4):
        cal = _bin_balance(rate_table[b])
        if math.isnan(cal):
            return math.inf
        shortfall += 1.0 - cal
    return w * (mismatches.sum() / n_total) + (1.0 - w) * shortfall
