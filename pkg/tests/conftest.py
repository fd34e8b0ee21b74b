import numpy as np
import pytest

from adviser.taxonomy import CLASSES, TAXONOMY
from adviser.advisee import AdviseeRecord


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_record(cls, errors_by_name=None, errors_by_index=None, features=None, instance_id="r"):
    if errors_by_name is not None:
        errors_by_index = {TAXONOMY.keypoint_index(cls, n): e for n, e in errors_by_name.items()}
    return AdviseeRecord(instance_id, cls, errors_by_index, features=features)


def random_records(rng, n, feature_dim=None):
    records = []
    for i in range(n):
        cls = CLASSES[i % 3]
        span = TAXONOMY.class_slice(cls)
        vis = [k for k in span if rng.random() < 0.6] or [span.start]
        errors = {k: float(rng.choice([rng.uniform(0, 20), rng.uniform(150, 180)])) for k in vis}
        feats = None if feature_dim is None else rng.normal(size=feature_dim)
        records.append(AdviseeRecord(f"x{i}", cls, errors, features=feats))
    return records


_ACCEPTANCE = []


def record_acceptance(line):
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
