"""Dataset model: scored binary-classification records with protected groups.

A dataset is a flat table of (entity_id, outcome, group, score) rows.  The
same entity may appear on several rows; resampling draws one row per entity
to break the within-entity dependence before anything is measured.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .thresholds import TIER_LABELS, ThresholdMatrix


class DataError(ValueError):
    """Base class for dataset construction and ingestion failures."""


class SchemaError(DataError):
    """A required column is missing from the input file."""


class RowError(DataError):
    """A single row failed validation; ``row`` is the 1-based file line."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmptyInputError(DataError):
    """The input contains no records."""


class ConfigError(DataError):
    """A configuration value is out of its documented domain."""


class UnmergeableError(DataError):
    """No group is large enough to absorb the undersized ones."""


class UnknownGroupError(KeyError):
    """A group label is not part of the dataset vocabulary."""


@dataclass(frozen=True)
class SampleRecord:
    """One scored unit: who it is, what happened, and the model's score."""

    entity_id: str
    outcome: bool
    group: str
    score: float


class Dataset:
    """Immutable column store of sample records.

    ``groups`` is the ordered label vocabulary; ``group_codes`` indexes into
    it.  Scores are probabilities in [0, 1]; outcomes are True for the
    adverse event.
    """

    def __init__(
        self,
        entity_ids: Sequence[str],
        outcomes: Sequence[bool],
        group_codes: Sequence[int],
        groups: Sequence[str],
        scores: Sequence[float],
    ):
        self.entity_ids = np.asarray(entity_ids, dtype=object)
        self.outcomes = np.asarray(outcomes, dtype=bool)
        self.group_codes = np.asarray(group_codes, dtype=np.int16)
        self.groups: tuple[str, ...] = tuple(groups)
        self.scores = np.asarray(scores, dtype=float)
        n = len(self.entity_ids)
        if not (len(self.outcomes) == len(self.group_codes) == len(self.scores) == n):
            raise DataError("column lengths differ")
        if n == 0:
            raise EmptyInputError("dataset has no records")
        if len(self.groups) == 0:
            raise DataError("empty group vocabulary")
        if len(set(self.groups)) != len(self.groups):
            raise DataError("duplicate labels in group vocabulary")
        if self.group_codes.min() < 0 or self.group_codes.max() >= len(self.groups):
            raise DataError("group code outside vocabulary")
        used = np.bincount(self.group_codes, minlength=len(self.groups))
        if (used == 0).any():
            missing = self.groups[int(np.argmax(used == 0))]
            raise DataError(f"vocabulary group {missing!r} has no records")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0) or np.any(np.isnan(self.scores)):
            raise DataError("scores must lie in [0, 1]")
        self.scores.flags.writeable = False
        self.outcomes.flags.writeable = False
        self.group_codes.flags.writeable = False
        self.entity_ids.flags.writeable = False

    @classmethod
    def from_records(
        cls, records: Iterable[SampleRecord], groups: Sequence[str] | None = None
    ) -> "Dataset":
        """Build a dataset; vocabulary defaults to first-appearance order."""
        records = list(records)
        if not records:
            raise EmptyInputError("no records")
        if groups is None:
            seen: dict[str, int] = {}
            for r in records:
                seen.setdefault(r.group, len(seen))
            groups = tuple(seen)
        index = {g: i for i, g in enumerate(groups)}
        try:
            codes = [index[r.group] for r in records]
        except KeyError as exc:
            raise UnknownGroupError(exc.args[0]) from exc
        return cls(
            [r.entity_id for r in records],
            [r.outcome for r in records],
            codes,
            groups,
            [r.score for r in records],
        )

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_code(self, group: str) -> int:
        try:
            return self.groups.index(group)
        except ValueError:
            raise UnknownGroupError(group) from None

    def group_sizes(self) -> dict[str, int]:
        counts = np.bincount(self.group_codes, minlength=self.n_groups)
        return {g: int(c) for g, c in zip(self.groups, counts)}

    def group_prevalences(self) -> dict[str, float]:
        out = {}
        for k, g in enumerate(self.groups):
            mask = self.group_codes == k
            out[g] = float(self.outcomes[mask].mean())
        return out

    def records(self) -> Iterator[SampleRecord]:
        for i in range(self.n):
            yield SampleRecord(
                str(self.entity_ids[i]),
                bool(self.outcomes[i]),
                self.groups[self.group_codes[i]],
                float(self.scores[i]),
            )

    @cached_property
    def _entity_layout(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Record positions grouped by entity: (flat positions, starts, counts)."""
        _, inverse = np.unique(self.entity_ids, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        return order, starts, counts

    @property
    def n_entities(self) -> int:
        return len(self._entity_layout[1])


@dataclass(eq=False)
class Subsample:
    """Record positions selected from a dataset, at most one per entity."""

    dataset: Dataset
    indices: np.ndarray
    seed_tag: str = ""

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.indices)

    @property
    def groups(self) -> tuple[str, ...]:
        return self.dataset.groups

    @cached_property
    def scores(self) -> np.ndarray:
        return self.dataset.scores[self.indices]

    @cached_property
    def outcomes(self) -> np.ndarray:
        return self.dataset.outcomes[self.indices]

    @cached_property
    def group_codes(self) -> np.ndarray:
        return self.dataset.group_codes[self.indices]

    def entity_ids(self) -> np.ndarray:
        return self.dataset.entity_ids[self.indices]

    def has_duplicate_entities(self) -> bool:
        return len(np.unique(self.entity_ids())) != self.n


def whole_sample(dataset: Dataset) -> Subsample:
    """The dataset itself viewed as a subsample (no entity deduplication)."""
    return Subsample(dataset, np.arange(dataset.n), seed_tag="all")


def draw_subsample(dataset: Dataset, rng: np.random.Generator, seed_tag: str = "") -> Subsample:
    """Draw one record per distinct entity, uniformly among that entity's rows."""
    order, starts, counts = dataset._entity_layout
    picks = starts + rng.integers(0, counts)
    chosen = np.sort(order[picks])
    return Subsample(dataset, chosen, seed_tag=seed_tag)


# ---------------------------------------------------------------------------
# CSV ingestion

_CANONICAL_COLUMNS = ("entity_id", "outcome", "group", "score")
_TRUE_TOKENS = {"true", "1"}
_FALSE_TOKENS = {"false", "0"}


def _parse_outcome(token: str, line: int) -> bool:
    norm = token.strip().lower()
    if norm in _TRUE_TOKENS:
        return True
    if norm in _FALSE_TOKENS:
        return False
    raise RowError(line, f"outcome {token!r} not one of true/false/1/0")


def load_dataset(path: str | Path, column_map: Mapping[str, str] | None = None) -> Dataset:
    """Read a scored dataset from a headered CSV file.

    ``column_map`` maps the canonical names (entity_id, outcome, group,
    score) to the file's column names; unmapped names are looked up as-is.
    Row errors cite the 1-based file line (the header is line 1).
    """
    column_map = dict(column_map or {})
    resolved = {name: column_map.get(name, name) for name in _CANONICAL_COLUMNS}

    path = Path(path)
    records: list[SampleRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyInputError(f"{path}: file is empty")
        for name, col in resolved.items():
            if col not in reader.fieldnames:
                raise SchemaError(f"{path}: missing column {col!r} (for {name})")
        for row in reader:
            line = reader.line_num
            raw_score = row[resolved["score"]]
            try:
                score = float(raw_score)
            except (TypeError, ValueError):
                raise RowError(line, f"score {raw_score!r} is not a number") from None
            if math.isnan(score) or not (0.0 <= score <= 1.0):
                raise RowError(line, f"score {raw_score} outside [0, 1]")
            records.append(
                SampleRecord(
                    entity_id=row[resolved["entity_id"]],
                    outcome=_parse_outcome(row[resolved["outcome"]], line),
                    group=row[resolved["group"]],
                    score=score,
                )
            )
    if not records:
        raise EmptyInputError(f"{path}: no data rows")
    return Dataset.from_records(records)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset back to CSV; load(save(d)) reproduces the records."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CANONICAL_COLUMNS)
        for rec in dataset.records():
            writer.writerow(
                [rec.entity_id, "true" if rec.outcome else "false", rec.group, repr(rec.score)]
            )


# ---------------------------------------------------------------------------
# Synthetic generation

@dataclass(frozen=True)
class SyntheticGroup:
    """Recipe for one group's records.

    Scores are outcome-conditional Beta draws, so the implied classifier is
    imperfect and its error profile can differ across groups.
    """

    name: str
    size: int
    prevalence: float
    pos_beta: tuple[float, float] = (3.0, 4.0)
    neg_beta: tuple[float, float] = (2.0, 8.0)

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"group {self.name!r}: size must be >= 1, got {self.size}")
        if not (0.0 < self.prevalence < 1.0):
            raise ConfigError(
                f"group {self.name!r}: prevalence must lie in (0, 1), got {self.prevalence}"
            )
        for label, (a, b) in (("pos_beta", self.pos_beta), ("neg_beta", self.neg_beta)):
            if a <= 0 or b <= 0:
                raise ConfigError(f"group {self.name!r}: {label} parameters must be positive")


def generate_synthetic(
    groups: Sequence[SyntheticGroup],
    seed: int,
    extra_records_rate: float = 0.0,
) -> Dataset:
    """Generate a scored dataset from per-group recipes, deterministically.

    ``size`` counts records.  With ``extra_records_rate`` > 0 entities carry
    1 + Poisson(rate) records each (sharing the entity's group, outcomes and
    scores drawn per record), so the one-record-per-entity subsampling has
    something to do.
    """
    if not groups:
        raise ConfigError("at least one group is required")
    if extra_records_rate < 0:
        raise ConfigError("extra_records_rate must be >= 0")
    rng = np.random.default_rng(seed)

    ids: list[str] = []
    outcomes: list[np.ndarray] = []
    scores: list[np.ndarray] = []
    codes: list[np.ndarray] = []
    for k, spec in enumerate(groups):
        remaining = spec.size
        entity = 0
        while remaining > 0:
            per = 1 + (int(rng.poisson(extra_records_rate)) if extra_records_rate else 0)
            per = min(per, remaining)
            ids.extend(f"{spec.name}-e{entity:06d}" for _ in range(per))
            entity += 1
            remaining -= per
        n = spec.size
        picked = rng.random(n) < spec.prevalence
        pos = rng.beta(*spec.pos_beta, size=n)
        neg = rng.beta(*spec.neg_beta, size=n)
        outcomes.append(picked)
        scores.append(np.where(picked, pos, neg))
        codes.append(np.full(n, k, dtype=np.int16))

    return Dataset(
        ids,
        np.concatenate(outcomes),
        np.concatenate(codes),
        [g.name for g in groups],
        np.concatenate(scores),
    )


# ---------------------------------------------------------------------------
# Group merging

@dataclass(frozen=True)
class MergeEvent:
    source: str
    target: str
    source_size: int
    target_size: int
    prevalence_gap: float

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "source_size": self.source_size,
            "target_size": self.target_size,
            "prevalence_gap": self.prevalence_gap,
        }


def merge_small_groups(dataset: Dataset, min_size: int) -> tuple[Dataset, list[MergeEvent]]:
    """Fold undersized groups into the qualifying group of nearest prevalence.

    A qualifying target already meets ``min_size``.  Merging repeats until
    every surviving group qualifies; prevalence-distance ties resolve toward
    the larger target, then vocabulary order.  Records keep their outcome and
    score; only the label changes.
    """
    sizes = np.bincount(dataset.group_codes, minlength=dataset.n_groups).astype(int)
    positives = np.zeros(dataset.n_groups, dtype=int)
    for k in range(dataset.n_groups):
        positives[k] = int(dataset.outcomes[dataset.group_codes == k].sum())

    alias = np.arange(dataset.n_groups)  # current label per original code
    alive = [True] * dataset.n_groups
    events: list[MergeEvent] = []

    while True:
        small = [k for k in range(dataset.n_groups) if alive[k] and sizes[k] < min_size]
        if not small:
            break
        qualified = [k for k in range(dataset.n_groups) if alive[k] and sizes[k] >= min_size]
        if not qualified:
            raise UnmergeableError(f"no group reaches min_size={min_size}")
        src = min(small, key=lambda k: (sizes[k], k))
        prev_src = positives[src] / sizes[src]
        target = min(
            qualified,
            key=lambda k: (abs(positives[k] / sizes[k] - prev_src), -sizes[k], k),
        )
        events.append(
            MergeEvent(
                source=dataset.groups[src],
                target=dataset.groups[target],
                source_size=int(sizes[src]),
                target_size=int(sizes[target]),
                prevalence_gap=float(abs(positives[target] / sizes[target] - prev_src)),
            )
        )
        alias[alias == src] = target
        sizes[target] += sizes[src]
        positives[target] += positives[src]
        sizes[src] = 0
        positives[src] = 0
        alive[src] = False

    if not events:
        return dataset, []

    survivors = [k for k in range(dataset.n_groups) if alive[k]]
    new_groups = tuple(dataset.groups[k] for k in survivors)
    compact = np.full(dataset.n_groups, -1, dtype=np.int16)
    for new_code, k in enumerate(survivors):
        compact[k] = new_code
    new_codes = compact[alias[dataset.group_codes]]
    merged = Dataset(dataset.entity_ids, dataset.outcomes, new_codes, new_groups, dataset.scores)
    return merged, events


# ---------------------------------------------------------------------------
# Tier assignment

def assign_tier(score: float, group: str, matrix: ThresholdMatrix) -> str:
    """The tier label for one score under a group's cuts (left-closed bins)."""
    if group not in matrix.groups:
        raise UnknownGroupError(group)
    column = matrix.values[:, matrix.groups.index(group)]
    return TIER_LABELS[int(np.sum(score >= column))]
