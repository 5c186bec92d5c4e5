import pytest

from fairtiers import Dataset, SampleRecord, whole_sample


def build_dataset(rows, groups=None):
    """rows: iterable of (entity_id, outcome, group, score)."""
    return Dataset.from_records(
        [SampleRecord(str(e), bool(o), g, float(s)) for e, o, g, s in rows],
        groups=groups,
    )


def build_subsample(rows, groups=None):
    """One record per row, each its own entity."""
    numbered = [(f"u{i}", o, g, s) for i, (o, g, s) in enumerate(rows)]
    return whole_sample(build_dataset(numbered, groups=groups))


@pytest.fixture
def two_group_sub():
    """Ten records, two groups, imperfect separation."""
    rows = [
        (True, "A", 0.9),
        (True, "A", 0.6),
        (False, "A", 0.7),
        (False, "A", 0.2),
        (False, "A", 0.1),
        (True, "B", 0.8),
        (True, "B", 0.3),
        (False, "B", 0.4),
        (False, "B", 0.15),
        (False, "B", 0.05),
    ]
    return build_subsample(rows)
