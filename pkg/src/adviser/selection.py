"""Query selection policies: which keypoint to ask the human for.

All ties are broken towards the lowest global keypoint index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .advisee import AdviseeRecord
from .taxonomy import CLASSES, TAXONOMY, ObjectClass


class PolicyKind(str, enum.Enum):
    ADVISER_CLASSIFICATION = "adviser-classification"
    ADVISER_REGRESSION = "adviser-regression"
    ORACLE_UPPER = "oracle-upper"
    ORACLE_LOWER = "oracle-lower"
    EXPECTED = "expected"
    FREQUENCY_PRIOR = "frequency-prior"
    PERFORMANCE_PRIOR = "performance-prior"


class MissingScoresError(ValueError):
    pass


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    ranking: dict[ObjectClass, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind in (PolicyKind.FREQUENCY_PRIOR, PolicyKind.PERFORMANCE_PRIOR):
            for cls in CLASSES:
                order = self.ranking.get(cls)
                if order is None or sorted(order) != list(TAXONOMY.class_slice(cls)):
                    raise ValueError(f"{self.kind.value} ranking for {cls.value} is not a permutation of its slice")

    @property
    def needs_scores(self) -> bool:
        return self.kind in (PolicyKind.ADVISER_CLASSIFICATION, PolicyKind.ADVISER_REGRESSION)


def _argbest(values, keys, maximize: bool) -> int:
    # keys are sorted ascending, so the first extreme value is the lowest index
    arr = np.asarray(values, dtype=float)
    pos = int(np.argmax(arr)) if maximize else int(np.argmin(arr))
    return keys[pos]


def select_keypoint(policy: Policy, record: AdviseeRecord, scores=None) -> int:
    """Global index of the keypoint ``policy`` asks about on ``record``.

    Adviser policies need ``scores``: class-masked probabilities for the
    classification adviser (highest wins) or predicted errors for the
    regression adviser (lowest wins). Only visible keypoints are eligible.
    """
    visible = list(record.visible)
    kind = policy.kind
    if policy.needs_scores:
        if scores is None:
            raise MissingScoresError(f"{kind.value} needs adviser scores")
        s = np.asarray(scores, dtype=float)[visible]
        return _argbest(s, visible, maximize=kind is PolicyKind.ADVISER_CLASSIFICATION)
    if kind is PolicyKind.ORACLE_UPPER:
        return _argbest([record.errors[k] for k in visible], visible, maximize=False)
    if kind is PolicyKind.ORACLE_LOWER:
        return _argbest([record.errors[k] for k in visible], visible, maximize=True)
    if kind in (PolicyKind.FREQUENCY_PRIOR, PolicyKind.PERFORMANCE_PRIOR):
        for k in policy.ranking[record.cls]:
            if k in record.errors:
                return k
    raise ValueError(f"{kind.value} does not select a single keypoint")


def frequency_prior_ranking(records) -> dict[ObjectClass, tuple[int, ...]]:
    """Per-class keypoints ordered by how often they are visible, most first."""
    if not records:
        raise ValueError("no reference records")
    counts = np.zeros(len(TAXONOMY))
    for rec in records:
        counts[list(rec.visible)] += 1
    return {
        cls: tuple(sorted(TAXONOMY.class_slice(cls), key=lambda k: (-counts[k], k)))
        for cls in CLASSES
    }


def performance_prior_ranking(records) -> dict[ObjectClass, tuple[int, ...]]:
    """Per-class keypoints ordered by mean error where visible, best first.

    Keypoints never seen come last.
    """
    if not records:
        raise ValueError("no reference records")
    total = np.zeros(len(TAXONOMY))
    seen = np.zeros(len(TAXONOMY))
    for rec in records:
        for k, e in rec.errors.items():
            total[k] += e
            seen[k] += 1

    def key(k):
        if seen[k] == 0:
            return (1, 0.0, k)
        return (0, total[k] / seen[k], k)

    return {cls: tuple(sorted(TAXONOMY.class_slice(cls), key=key)) for cls in CLASSES}


def expected_error(record: AdviseeRecord) -> float:
    """Mean error over the visible keypoints: what a uniformly random query gets."""
    return float(np.mean(list(record.errors.values())))


def expected_accuracy(record: AdviseeRecord, threshold_deg: float = 30.0) -> float:
    """Fraction of visible keypoints whose error is below ``threshold_deg``."""
    return float(np.mean([e < threshold_deg for e in record.errors.values()]))
