"""Risk-tier thresholds: group-agnostic anchors and per-group threshold matrices.

Three cuts (low, average, high) split the unit score interval into four
ordinal risk tiers S1 < S2 < S3 < S4.  The anchors apply one cut per tier to
every group; a threshold matrix holds a separate cut per tier per group.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

TIERS = ("L", "A", "H")
TIER_LABELS = ("S1", "S2", "S3", "S4")


@dataclass(frozen=True)
class AgnosticTiers:
    """One cut per tier, applied identically to every group."""

    low: float
    average: float
    high: float

    def __post_init__(self):
        if not (0.0 < self.low < self.average < self.high < 1.0):
            raise ValueError(
                "tier anchors must satisfy 0 < low < average < high < 1, got "
                f"({self.low}, {self.average}, {self.high})"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.low, self.average, self.high], dtype=float)

    def value(self, tier: str) -> float:
        return self.as_array()[TIERS.index(tier)]

    def replicate(self, groups: Sequence[str]) -> "ThresholdMatrix":
        """The matrix with every group's column equal to the anchors."""
        vals = np.repeat(self.as_array()[:, None], len(groups), axis=1)
        return ThresholdMatrix(tuple(groups), vals, self)


@dataclass(frozen=True, eq=False)
class ThresholdMatrix:
    """Per-tier, per-group threshold values plus the anchors they deviate from.

    ``values`` has shape (3, K): rows follow ``TIERS`` order, columns follow
    ``groups`` order.  Construction enforces strict within-group ordering
    (low < average < high); anchor coveredness is checked separately because
    averaged matrices may miss it by small margins.
    """

    groups: tuple[str, ...]
    values: np.ndarray
    anchors: AgnosticTiers

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (3, len(self.groups)):
            raise ValueError(f"expected shape (3, {len(self.groups)}), got {vals.shape}")
        if np.any(vals <= 0.0) or np.any(vals >= 1.0):
            raise ValueError("thresholds must lie strictly inside (0, 1)")
        bad = np.nonzero(~((vals[0] < vals[1]) & (vals[1] < vals[2])))[0]
        if bad.size:
            raise ValueError(
                f"thresholds out of order (need low < average < high) for group "
                f"{self.groups[bad[0]]!r}"
            )
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def value(self, tier: str, group: str) -> float:
        return float(self.values[TIERS.index(tier), self.groups.index(group)])

    def row(self, tier: str) -> np.ndarray:
        """Per-group values at one tier, in ``groups`` order."""
        return self.values[TIERS.index(tier)]

    def row_map(self, tier: str) -> dict[str, float]:
        return {g: float(v) for g, v in zip(self.groups, self.row(tier))}

    def coveredness_gaps(self) -> dict[str, float]:
        """Per tier, how far the anchor falls outside [min, max] of the row.

        Zero means covered; positive values measure the violation.
        """
        anchors = self.anchors.as_array()
        gaps = {}
        for t, tier in enumerate(TIERS):
            row = self.values[t]
            gap = max(row.min() - anchors[t], anchors[t] - row.max(), 0.0)
            gaps[tier] = float(gap)
        return gaps

    def is_covered(self, tol: float = 0.0) -> bool:
        return all(gap <= tol for gap in self.coveredness_gaps().values())

    def to_dict(self) -> dict:
        return {
            "anchors": {t: float(v) for t, v in zip(TIERS, self.anchors.as_array())},
            "groups": list(self.groups),
            "values": {
                t: {g: float(v) for g, v in zip(self.groups, self.values[i])}
                for i, t in enumerate(TIERS)
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ThresholdMatrix":
        try:
            anchors = AgnosticTiers(
                payload["anchors"]["L"], payload["anchors"]["A"], payload["anchors"]["H"]
            )
            groups = tuple(payload["groups"])
            vals = np.array(
                [[payload["values"][t][g] for g in groups] for t in TIERS], dtype=float
            )
        except KeyError as exc:
            raise ValueError(f"thresholds payload missing entry {exc.args[0]!r}") from exc
        return cls(groups, vals, anchors)


def tier_indices(
    scores: np.ndarray, group_codes: np.ndarray, matrix: ThresholdMatrix
) -> np.ndarray:
    """0-based tier index per unit under group-specific cuts.

    Left-closed convention: a score equal to a cut lands in the higher tier.
    """
    cuts = matrix.values
    out = np.zeros(len(scores), dtype=np.int8)
    for t in range(3):
        out += (scores >= cuts[t, group_codes]).astype(np.int8)
    return out
