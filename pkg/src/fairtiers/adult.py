"""Scoring harness for the public adult-income census file.

Turns the raw ``adult.data`` export (comma-separated, no header, 15 columns,
"?" for missing) into the scored four-column dataset this package consumes:
entity_id = row index, outcome = income above 50K, group = race, score =
held-out predicted probability from a small gradient-boosted model.

Held-out means every row is scored by a model that never saw it: the
probabilities come from stratified cross-validation, so the downstream
threshold correction works with test-like scores.  Requires scikit-learn
(the ``adult`` extra).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import Dataset, SampleRecord, save_dataset

ADULT_COLUMNS = (
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education_num",
    "marital_status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital_gain",
    "capital_loss",
    "hours_per_week",
    "native_country",
    "income",
)

_NUMERIC = ("age", "education_num", "capital_gain", "capital_loss", "hours_per_week")
_CATEGORICAL = ("workclass", "marital_status", "occupation", "relationship", "sex")


def read_adult_rows(path: str | Path) -> list[dict[str, str]]:
    """Parse the raw census file into dicts; accepts a header row too."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for raw in csv.reader(fh):
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            cells = [c.strip() for c in raw]
            if cells[0] == "age":  # header
                continue
            if len(cells) != len(ADULT_COLUMNS):
                continue
            rows.append(dict(zip(ADULT_COLUMNS, cells)))
    return rows


def score_adult(
    path: str | Path,
    out_path: str | Path | None = None,
    seed: int = 0,
    n_folds: int = 5,
) -> Dataset:
    """Score the census file with held-out probabilities and return a Dataset.

    ``out_path`` additionally writes the scored CSV for the CLI workflow.
    """
    from sklearn.ensemble import HistGradientBoostingClassifier
    from sklearn.model_selection import StratifiedKFold, cross_val_predict

    rows = read_adult_rows(path)
    if not rows:
        raise ValueError(f"{path}: no parseable census rows")

    y = np.array([row["income"].rstrip(".").strip() == ">50K" for row in rows])
    race = [row["race"] for row in rows]

    numeric = np.array(
        [[float(row[c]) for c in _NUMERIC] for row in rows], dtype=float
    )
    levels = {c: sorted({row[c] for row in rows}) for c in _CATEGORICAL}
    onehot = np.zeros((len(rows), sum(len(v) for v in levels.values())))
    col = 0
    for c in _CATEGORICAL:
        index = {lvl: i for i, lvl in enumerate(levels[c])}
        for r, row in enumerate(rows):
            onehot[r, col + index[row[c]]] = 1.0
        col += len(levels[c])
    features = np.hstack([numeric, onehot])

    model = HistGradientBoostingClassifier(random_state=seed, max_iter=200)
    cv = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    probs = cross_val_predict(model, features, y, cv=cv, method="predict_proba")[:, 1]

    records = [
        SampleRecord(
            entity_id=str(i), outcome=bool(y[i]), group=race[i], score=float(probs[i])
        )
        for i in range(len(rows))
    ]
    dataset = Dataset.from_records(records)
    if out_path is not None:
        save_dataset(dataset, out_path)
    return dataset
